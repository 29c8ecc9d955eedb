"""Deterministic discrete-event broadcast simulator.

One run owns one event queue ordered by (time, sequence number). Links drop
each (transmission, receiver) pair independently with probability ``rho``;
surviving copies arrive after a fixed hop latency plus uniform jitter.
There is no MAC or collision model.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .codec import DEFAULT_PAYLOAD_LEN, EncodedPacket, NativePacket
from .forwarding import Action, ForwardingPolicy, NodeState, on_receive, source_emit
from .topology import (
    DENSITY_PRESETS,
    MobilityConfig,
    RandomWaypoint,
    TopologySnapshot,
    a_hat_for_mean_degree,
    generate_connected_rgg,
    generate_rgg,
)

LOG_HEADER = (
    "# t kind node fields...\n"
    "# t native node gen\n"
    "# t tx node gen origin txid n_neighbors forwarders\n"
    "# t rx node prev gen origin txid innovative\n"
    "# t decode node source gen delay\n"
)

NATIVE, ARRIVAL, TICK = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n: int = 100
    density: str | None = "sparse"
    a_hat: float | None = None
    range: float = 250.0
    rho: float = 0.0
    policy: str = "rldp"
    omega: float = 1.0
    late_election: bool = True
    g: int = 30
    rate: float = 1.0
    sources: int = 30
    duration: float = 60.0
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    hop_latency: float = 0.002
    jitter: float = 0.001
    seed: int = 0
    neighbor_mode: str = "oracle"
    hello_interval: float = 1.0
    payload_len: int = DEFAULT_PAYLOAD_LEN
    phase: str = "random"
    connected: bool = False
    positions: tuple | None = None
    source_nodes: tuple | None = None
    record_log: bool = True

    @property
    def warm_up(self) -> float:
        return self.mobility.warm_up if self.mobility.model == "random-waypoint" else 0.0

    @property
    def forwarding_policy(self) -> ForwardingPolicy:
        return ForwardingPolicy(self.policy, self.omega, self.late_election)

    def resolved_a_hat(self) -> float:
        if self.a_hat is not None:
            return self.a_hat
        return a_hat_for_mean_degree(self.n, DENSITY_PRESETS[self.density])

    def validate(self) -> "SimConfig":
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.n >= 1, "n must be >= 1")
        need(0.0 <= self.rho <= 1.0, "rho must lie in [0, 1]")
        need(0.0 <= self.omega <= 1.0, "omega must lie in [0, 1]")
        need(self.policy in ("rldp", "flooding", "probabilistic"), f"unknown policy {self.policy!r}")
        need(self.rate > 0, "rate must be positive")
        need(self.g >= 1, "g must be >= 1")
        need(self.duration > self.warm_up, "duration must exceed the warm-up period")
        need(self.hop_latency >= 0 and self.jitter >= 0, "latencies must be non-negative")
        need(self.neighbor_mode in ("oracle", "stale"), f"unknown neighbor mode {self.neighbor_mode!r}")
        need(self.hello_interval > 0, "hello interval must be positive")
        need(self.phase in ("random", "staggered"), f"unknown traffic phase {self.phase!r}")
        need(self.range > 0, "range must be positive")
        if self.positions is None:
            need(self.a_hat is not None or self.density in DENSITY_PRESETS, "need a_hat or a density preset")
            if self.a_hat is not None:
                need(self.a_hat > 0, "a_hat must be positive")
        else:
            need(len(self.positions) == self.n, "positions must list n nodes")
        if self.source_nodes is not None:
            need(all(0 <= s < self.n for s in self.source_nodes), "source node out of range")
            need(len(set(self.source_nodes)) == len(self.source_nodes), "duplicate source node")
        else:
            need(1 <= self.sources <= self.n, "sources must lie in [1, n]")
        return self


@dataclass
class Delivery:
    source: int
    generation: int
    receiver: int
    created: float
    delay: float


@dataclass
class Metrics:
    n: int
    natives: int = 0
    forwards: int = 0
    deliveries: list[Delivery] = field(default_factory=list)
    link_attempts: int = 0
    link_losses: int = 0

    @property
    def expected_pairs(self) -> int:
        return self.natives * (self.n - 1)

    @property
    def pdr(self) -> float:
        return len(self.deliveries) / self.expected_pairs if self.expected_pairs else 0.0

    @property
    def forwards_per_native(self) -> float:
        return self.forwards / self.natives if self.natives else 0.0

    def delays(self) -> np.ndarray:
        return np.sort(np.array([d.delay for d in self.deliveries], dtype=float))

    def cdf(self) -> list[tuple[float, float]]:
        """(delay, cumulative PDR) at every distinct delivery delay."""
        if not self.expected_pairs:
            return []
        d = self.delays()
        if len(d) == 0:
            return []
        vals, counts = np.unique(d, return_counts=True)
        return list(zip(vals.tolist(), (np.cumsum(counts) / self.expected_pairs).tolist()))

    def cumulative_pdr(self, bound: float) -> float:
        if not self.expected_pairs:
            return 0.0
        return int(np.searchsorted(self.delays(), bound, side="right")) / self.expected_pairs


@dataclass
class RunResult:
    config: SimConfig
    metrics: Metrics
    log: list[tuple]
    topology: TopologySnapshot
    sources: list[int]
    states: list[NodeState] = field(repr=False, default_factory=list)

    def log_lines(self) -> list[str]:
        return [format_record(r) for r in self.log]

    def log_text(self) -> str:
        return LOG_HEADER + "".join(line + "\n" for line in self.log_lines())


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, (frozenset, set)):
        return ",".join(map(str, sorted(x))) or "-"
    return str(x)


def format_record(rec: tuple) -> str:
    return " ".join(map(_fmt, rec))


class Simulator:
    def __init__(self, cfg: SimConfig, schedule=None, policy_hook=None):
        self.cfg = cfg.validate()
        seq = np.random.SeedSequence(cfg.seed)
        r_topo, r_traffic, r_channel, r_coding, r_policy, r_mob = (np.random.default_rng(s) for s in seq.spawn(6))
        self.rng_traffic, self.rng_channel = r_traffic, r_channel
        self.rng_coding, self.rng_policy = r_coding, r_policy
        self.policy = cfg.forwarding_policy
        self.policy_hook = policy_hook

        if cfg.positions is not None:
            pos = np.asarray(cfg.positions, dtype=float)
            side = float(cfg.a_hat * cfg.range) if cfg.a_hat else float(max(pos.max(), cfg.range))
            topo = TopologySnapshot(pos, side, cfg.range)
        elif cfg.connected:
            topo = generate_connected_rgg(cfg.n, cfg.resolved_a_hat(), cfg.range, r_topo)
        else:
            topo = generate_rgg(cfg.n, cfg.resolved_a_hat(), cfg.range, r_topo)
        self.initial_topology = topo
        self.mobile = cfg.mobility.model == "random-waypoint"
        self.mob = RandomWaypoint(topo, cfg.mobility, r_mob) if self.mobile else None
        self._topo = topo
        self._nbrs = topo.neighbor_sets()
        self._known = self._nbrs

        if cfg.source_nodes is not None:
            self.sources = list(cfg.source_nodes)
        else:
            self.sources = sorted(r_topo.permutation(cfg.n)[: cfg.sources].tolist())

        self.states = [NodeState(v, cfg.n, cfg.g, cfg.payload_len) for v in range(cfg.n)]
        self.metrics = Metrics(cfg.n)
        self.log: list[tuple] = []
        self._queue: list = []
        self._seq = 0
        self._pending = 0
        self._txid = 0
        self._created: dict[tuple[int, int], float] = {}
        self._schedule = schedule

    # -- queue ------------------------------------------------------------

    def _push(self, t: float, kind: int, *data) -> None:
        heapq.heappush(self._queue, (t, self._seq, kind, data))
        self._seq += 1
        if kind != TICK:
            self._pending += 1

    def _record(self, *rec) -> None:
        if self.cfg.record_log:
            self.log.append(rec)

    # -- topology ---------------------------------------------------------

    def _advance_to(self, t: float) -> None:
        if self.mobile and t > self.mob.time:
            self._topo = self.mob.advance(t - self.mob.time)
            self._nbrs = self._topo.neighbor_sets()
            if self.cfg.neighbor_mode == "oracle":
                self._known = self._nbrs

    # -- traffic ----------------------------------------------------------

    def _emission_times(self) -> list[tuple[float, int]]:
        cfg = self.cfg
        period = 1.0 / cfg.rate
        out = []
        for j, s in enumerate(self.sources):
            if cfg.phase == "staggered":
                phase = period * j / len(self.sources)
            else:
                phase = float(self.rng_traffic.uniform(0.0, period))
            k = 0
            while (t := cfg.warm_up + phase + k * period) < cfg.duration:
                out.append((t, s))
                k += 1
        return out

    # -- main loop --------------------------------------------------------

    def run(self) -> RunResult:
        cfg = self.cfg
        schedule = self._schedule if self._schedule is not None else self._emission_times()
        # natives are scheduled lazily per source so the queue stays small
        by_source: dict[int, list[float]] = {}
        for t, s in sorted(schedule):
            by_source.setdefault(s, []).append(t)
        self._next_native = {s: iter(ts) for s, ts in by_source.items()}
        for s in sorted(self._next_native):
            self._schedule_native(s)
        if cfg.neighbor_mode == "stale":
            self._push(0.0, TICK)

        while self._queue:
            t, _, kind, data = heapq.heappop(self._queue)
            if kind != TICK:
                self._pending -= 1
            self._advance_to(t)
            if kind == NATIVE:
                self._on_native(t, *data)
            elif kind == ARRIVAL:
                self._on_arrival(t, *data)
            else:
                self._on_tick(t)
        return RunResult(cfg, self.metrics, self.log, self.initial_topology, self.sources, self.states)

    def _schedule_native(self, s: int) -> None:
        t = next(self._next_native[s], None)
        if t is not None:
            self._push(t, NATIVE, s)

    def _on_tick(self, t: float) -> None:
        if self.cfg.neighbor_mode == "stale":
            self._known = self._nbrs
        if self._pending:
            self._push(t + self.cfg.hello_interval, TICK)

    def _on_native(self, t: float, s: int) -> None:
        self._schedule_native(s)
        payload = self.rng_traffic.integers(0, 256, self.cfg.payload_len, dtype=np.uint8)
        native = NativePacket(s, payload, t)
        pkt = source_emit(self.states[s], native, self._known, self.rng_coding, rldp=self.policy.kind == "rldp")
        self.metrics.natives += 1
        self._created[(s, pkt.generation_id)] = t
        self._record(t, "native", s, pkt.generation_id)
        self.states[s].matrices[pkt.generation_id].newly_decoded()
        self._transmit(t, s, pkt)

    def _transmit(self, t: float, v: int, pkt: EncodedPacket) -> None:
        cfg = self.cfg
        self.metrics.forwards += 1
        txid = self._txid
        self._txid += 1
        nbrs = sorted(self._nbrs[v])
        self._record(t, "tx", v, pkt.generation_id, pkt.origin_source, txid, len(nbrs), pkt.forwarders)
        if not nbrs:
            return
        m = len(nbrs)
        lost = self.rng_channel.random(m) < cfg.rho
        delay = cfg.hop_latency + cfg.jitter * self.rng_channel.random(m)
        self.metrics.link_attempts += m
        self.metrics.link_losses += int(lost.sum())
        for w, l, d in zip(nbrs, lost.tolist(), delay.tolist()):
            if not l:
                self._push(t + d, ARRIVAL, w, v, pkt, txid)

    def _on_arrival(self, t: float, w: int, v: int, pkt: EncodedPacket, txid: int) -> None:
        state = self.states[w]
        if self.policy_hook is not None:
            action = self.policy_hook(self, state, pkt, v, t)
        else:
            action: Action = on_receive(state, pkt, v, self.policy, self._known, self.rng_policy, t)
        self._record(t, "rx", w, v, pkt.generation_id, pkt.origin_source, txid, int(action.innovative))
        if action.innovative:
            gid = pkt.generation_id
            for src in state.matrices[gid].newly_decoded():
                if src == w:
                    continue
                created = self._created[(src, gid)]
                self.metrics.deliveries.append(Delivery(src, gid, w, created, t - created))
                self._record(t, "decode", w, src, gid, t - created)
        if action.transmit is not None:
            self._transmit(t, w, action.transmit)


def run(cfg: SimConfig, schedule=None) -> RunResult:
    """Run one simulation; ``schedule`` optionally overrides the traffic as (time, source) pairs."""
    return Simulator(cfg, schedule).run()


def delivery_accounting(log, n: int) -> Metrics:
    """Rebuild metrics from an event log (records or formatted lines)."""
    m = Metrics(n)
    seen: set[tuple[int, int, int]] = set()
    for rec in log:
        if isinstance(rec, str):
            if rec.startswith("#") or not rec.strip():
                continue
            parts = rec.split()
            t, kind, fields_ = float(parts[0]), parts[1], parts[2:]
        else:
            t, kind, *fields_ = rec
        if kind == "native":
            m.natives += 1
        elif kind == "tx":
            m.forwards += 1
        elif kind == "decode":
            node, src, gid, delay = int(fields_[0]), int(fields_[1]), int(fields_[2]), float(fields_[3])
            if (src, gid, node) in seen or src == node:
                continue
            seen.add((src, gid, node))
            m.deliveries.append(Delivery(src, gid, node, t - delay, delay))
    return m


# -- counting-only broadcast ----------------------------------------------


def count_copies(
    topo: TopologySnapshot, source: int, omega: float, rho: float, seed: int
) -> np.ndarray:
    """Uncoded probabilistic broadcast through the event engine.

    The source transmits once; every other node transmits once, on first
    reception, with probability ``omega``. Returns copies received per node.
    """
    copies = np.zeros(topo.n, dtype=np.int64)
    heard = np.zeros(topo.n, dtype=bool)
    heard[source] = True

    def hook(sim, state, pkt, prev, t):
        v = state.node
        copies[v] += 1
        if heard[v]:
            return Action(False)
        heard[v] = True
        if sim.rng_policy.random() < omega:
            return Action(False, pkt)
        return Action(False)

    cfg = SimConfig(
        n=topo.n, positions=tuple(map(tuple, topo.positions)), a_hat=topo.a_hat, range=topo.range,
        rho=rho, policy="flooding", g=1, sources=1, source_nodes=(source,), duration=1.0,
        seed=seed, payload_len=1, record_log=False,
    )
    Simulator(cfg, schedule=[(0.0, source)], policy_hook=hook).run()
    return copies
