"""Random geometric graphs, neighbourhood queries and random-waypoint mobility."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from math import pi, sqrt

import numpy as np
from scipy.optimize import brentq

UNREACHABLE = -1


@dataclass(frozen=True)
class TopologySnapshot:
    positions: np.ndarray
    side: float
    range: float
    time: float = 0.0
    adjacency: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "adjacency", unit_disk_adjacency(pos, self.range))

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def a_hat(self) -> float:
        return self.side / self.range

    def _check(self, v: int) -> None:
        if not 0 <= v < self.n:
            raise KeyError(f"unknown node {v!r}")

    def neighbors(self, v: int) -> frozenset[int]:
        self._check(v)
        return frozenset(np.flatnonzero(self.adjacency[v]).tolist())

    def neighbor_sets(self) -> list[frozenset[int]]:
        return [frozenset(np.flatnonzero(row).tolist()) for row in self.adjacency]

    def two_hop(self, v: int) -> frozenset[int]:
        """Nodes exactly two hops from ``v``."""
        self._check(v)
        adj = self.adjacency
        reach = adj[adj[v]].any(axis=0)
        reach &= ~adj[v]
        reach[v] = False
        return frozenset(np.flatnonzero(reach).tolist())

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def is_connected(self) -> bool:
        return bool((hop_distances(self, 0) >= 0).all())

    def dump(self) -> str:
        """Text dump: header ``N A R t`` then one ``id x y`` line per node."""
        lines = [f"{self.n} {self.side!r} {self.range!r} {self.time!r}"]
        lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(self.positions.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> "TopologySnapshot":
        head, *rest = text.strip().splitlines()
        n, side, rng, t = head.split()
        pos = np.zeros((int(n), 2))
        for line in rest:
            i, x, y = line.split()
            pos[int(i)] = float(x), float(y)
        return cls(pos, float(side), float(rng), float(t))


def unit_disk_adjacency(positions: np.ndarray, r: float) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    adj = d2 <= r * r
    np.fill_diagonal(adj, False)
    return adj


def generate_rgg(n: int, a_hat: float, r: float, rng: np.random.Generator) -> TopologySnapshot:
    if n < 1 or a_hat <= 0 or r <= 0:
        raise ValueError("need n >= 1, a_hat > 0, r > 0")
    side = a_hat * r
    return TopologySnapshot(rng.random((n, 2)) * side, side, r)


def generate_connected_rgg(
    n: int, a_hat: float, r: float, rng: np.random.Generator, max_tries: int = 10_000
) -> TopologySnapshot:
    for _ in range(max_tries):
        snap = generate_rgg(n, a_hat, r, rng)
        if snap.is_connected():
            return snap
    raise RuntimeError(f"no connected RGG after {max_tries} draws (n={n}, a_hat={a_hat})")


def hop_distances(t: TopologySnapshot, s: int) -> np.ndarray:
    """BFS hop counts from ``s``; ``UNREACHABLE`` where there is no path."""
    t._check(s)
    dist = np.full(t.n, UNREACHABLE, dtype=np.int64)
    dist[s] = 0
    frontier = np.zeros(t.n, dtype=bool)
    frontier[s] = True
    h = 0
    adj = t.adjacency
    while frontier.any():
        h += 1
        nxt = adj[frontier].any(axis=0) & (dist == UNREACHABLE)
        dist[nxt] = h
        frontier = nxt
    return dist


def hop_distance(t: TopologySnapshot, s: int, d: int) -> int | None:
    """Shortest path length in hops, or ``None`` if unreachable."""
    t._check(d)
    h = int(hop_distances(t, s)[d])
    return None if h == UNREACHABLE else h


def bfs_levels(nbrs: dict[int, set[int]] | list, s: int) -> dict[int, int]:
    dist = {s: 0}
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for w in nbrs[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


# -- density presets ----------------------------------------------------------


def link_probability(a_hat: float) -> float:
    """P{d(u, v) <= R} for two uniform points in a square of side a_hat * R."""
    r = 1.0 / a_hat
    if r <= 1.0:
        return pi * r**2 - 8.0 / 3.0 * r**3 + r**4 / 2.0
    if r >= sqrt(2.0):
        return 1.0
    # R longer than the side: integrate the distance cdf numerically
    from scipy.integrate import quad

    def dens(d):
        # pdf of the distance between two uniform points in the unit square
        if d <= 1.0:
            return 2 * d * (pi - 4 * d + d * d)
        s = sqrt(d * d - 1)
        return 2 * d * (4 * s - (d * d + 2 - pi) - 4 * np.arccos(1 / d))

    return float(quad(dens, 0.0, r)[0])


def expected_mean_degree(n: int, a_hat: float) -> float:
    """Expected degree including border effects."""
    return (n - 1) * link_probability(a_hat)


def a_hat_for_mean_degree(n: int, mean_degree: float) -> float:
    if not 0 < mean_degree < n - 1:
        raise ValueError(f"mean degree must be in (0, {n - 1})")
    return brentq(lambda a: expected_mean_degree(n, a) - mean_degree, 1.0 / sqrt(2.0) + 1e-9, 1e4)


DENSITY_PRESETS = {"dense": 30.0, "sparse": 15.0}


# -- mobility -----------------------------------------------------------------


@dataclass(frozen=True)
class MobilityConfig:
    model: str = "static"
    v_min: float = 1.0
    v_max: float = 1.0
    pause: float = 0.0
    warm_up: float = 100.0

    def __post_init__(self):
        if self.model not in ("static", "random-waypoint"):
            raise ValueError(f"unknown mobility model {self.model!r}")
        if self.model == "random-waypoint":
            if self.v_min <= 0 or self.v_max < self.v_min:
                raise ValueError("random waypoint needs 0 < v_min <= v_max")
            if self.pause < 0:
                raise ValueError("pause must be non-negative")


class RandomWaypoint:
    """Random-waypoint state for every node of a topology.

    Each node owns its own random stream, so trajectories do not depend on
    how the caller chops time into steps.
    """

    def __init__(self, snap: TopologySnapshot, cfg: MobilityConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.side = snap.side
        self.range = snap.range
        self.time = snap.time
        self.pos = snap.positions.copy()
        n = snap.n
        self.rngs = rng.spawn(n)
        self.target = np.zeros((n, 2))
        self.speed = np.zeros(n)
        self.pause_left = np.zeros(n)
        self.odometer = np.zeros(n)
        for i in range(n):
            self._new_leg(i)

    def _new_leg(self, i: int) -> None:
        r = self.rngs[i]
        self.target[i] = r.random(2) * self.side
        self.speed[i] = r.uniform(self.cfg.v_min, self.cfg.v_max)

    def set_leg(self, i: int, target, speed: float) -> None:
        self.target[i] = target
        self.speed[i] = speed
        self.pause_left[i] = 0.0

    def advance(self, dt: float) -> TopologySnapshot:
        if dt < 0:
            raise ValueError("dt must be non-negative")
        if self.cfg.model == "static" or dt == 0:
            self.time += dt
            return self.snapshot()
        # fast path: nodes that neither finish a pause nor reach their waypoint
        delta = self.target - self.pos
        dist = np.hypot(delta[:, 0], delta[:, 1])
        moving = self.pause_left <= 0
        simple = np.where(moving, dist > self.speed * dt, self.pause_left > dt)
        idx = np.flatnonzero(simple & moving)
        if len(idx):
            step = (self.speed[idx] * dt / dist[idx])[:, None]
            self.pos[idx] += delta[idx] * step
            self.odometer[idx] += self.speed[idx] * dt
        idx = np.flatnonzero(simple & ~moving)
        self.pause_left[idx] -= dt
        for i in np.flatnonzero(~simple):
            self._advance_node(int(i), dt)
        self.time += dt
        return self.snapshot()

    def _advance_node(self, i: int, dt: float) -> None:
        left = dt
        while left > 0:
            if self.pause_left[i] > 0:
                used = min(left, self.pause_left[i])
                self.pause_left[i] -= used
                left -= used
                continue
            delta = self.target[i] - self.pos[i]
            dist = float(np.hypot(*delta))
            reach = dist / self.speed[i]
            if reach > left:
                self.pos[i] += delta * (self.speed[i] * left / dist)
                self.odometer[i] += self.speed[i] * left
                return
            self.pos[i] = self.target[i]
            self.odometer[i] += dist
            left -= reach
            self.pause_left[i] = self.cfg.pause
            self._new_leg(i)

    def snapshot(self) -> TopologySnapshot:
        return TopologySnapshot(self.pos.copy(), self.side, self.range, self.time)


def advance_mobility(mob: RandomWaypoint, dt: float) -> TopologySnapshot:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return mob.advance(dt)
