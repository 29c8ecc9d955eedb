"""Forwarding policies.

RLDP applies partial dominant pruning per generation. A node named in a
packet's forwarding set transmits one fresh recode per (origin source,
generation) pair, triggered by its first innovative packet for that pair.
Flooding and probabilistic forwarding are the baselines; they have no
forwarding sets and recode on every innovative reception (with probability
omega).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .codec import DEFAULT_PAYLOAD_LEN, DecodingMatrix, EncodedPacket, NativePacket
from .generations import GenerationStore, observe, select_generation


# -- set cover ----------------------------------------------------------------


@dataclass(frozen=True)
class CoverInstance:
    candidates: dict[int, frozenset[int]]
    universe: frozenset[int]


def _union(nbrs, nodes) -> set[int]:
    out: set[int] = set()
    for x in nodes:
        out |= nbrs[x]
    return out


def pdp_reduce(nbrs, v: int, u: int | None = None) -> CoverInstance:
    """Candidate forwarders and the 2-hop universe they must cover.

    ``nbrs`` maps a node id to its neighbour set (a list indexed by node id
    works). With ``u`` the previous hop, nodes already covered by ``u`` are
    removed from both sets.
    """
    nv = nbrs[v]
    two_hop = _union(nbrs, nv) - nv - {v}
    if u is None:
        cands = set(nv)
        universe = two_hop
    else:
        if u not in nv:
            raise ValueError(f"previous hop {u} is not a neighbour of {v}")
        nu = nbrs[u]
        cands = set(nv) - nu - {u}
        universe = two_hop - nu - _union(nbrs, nu & nv) - {u}
    cover = {c: frozenset(nbrs[c] - nv - {v}) for c in cands}
    return CoverInstance(cover, frozenset(universe))


def greedy_set_cover(ci: CoverInstance) -> frozenset[int]:
    """Greedy cover of ``ci.universe``; ties go to the lowest node id.

    Universe elements no candidate can reach are dropped.
    """
    reachable = set()
    for cov in ci.candidates.values():
        reachable |= cov
    uncovered = set(ci.universe) & reachable
    chosen: set[int] = set()
    order = sorted(ci.candidates)
    while uncovered:
        best, gain = None, 0
        for c in order:
            if c in chosen:
                continue
            k = len(ci.candidates[c] & uncovered)
            if k > gain:
                best, gain = c, k
        if best is None:
            break
        chosen.add(best)
        uncovered -= ci.candidates[best]
    return frozenset(chosen)


def forwarding_set(nbrs, v: int, u: int | None = None) -> frozenset[int]:
    if u is not None and u not in nbrs[v]:
        # previous hop unknown to (possibly stale) neighbour knowledge
        u = None
    return greedy_set_cover(pdp_reduce(nbrs, v, u))


# -- per-node state -----------------------------------------------------------


class SeenTable:
    """Direct-addressed per-generation flags, indexed by origin source id.

    Two bits per (origin, generation): an innovative packet for the pair has
    been received, and a recode for the pair has been transmitted.
    """

    INNOVATIVE = 1
    FORWARDED = 2

    def __init__(self, n_nodes: int):
        self.n_nodes = n_nodes
        self._flags: dict[int, bytearray] = {}

    def _get(self, origin: int, gid: int) -> int:
        flags = self._flags.get(gid)
        return 0 if flags is None else flags[origin]

    def _set(self, origin: int, gid: int, bit: int) -> None:
        flags = self._flags.get(gid)
        if flags is None:
            flags = self._flags[gid] = bytearray(self.n_nodes)
        flags[origin] |= bit

    def __contains__(self, key: tuple[int, int]) -> bool:
        return bool(self._get(*key) & self.FORWARDED)

    def mark(self, origin: int, gid: int) -> None:
        self._set(origin, gid, self.FORWARDED)

    def note_innovative(self, origin: int, gid: int) -> None:
        self._set(origin, gid, self.INNOVATIVE)

    def had_innovative(self, origin: int, gid: int) -> bool:
        return bool(self._get(origin, gid) & self.INNOVATIVE)


@dataclass
class NodeState:
    node: int
    n_nodes: int
    g: int = 30
    payload_len: int = DEFAULT_PAYLOAD_LEN
    matrices: dict[int, DecodingMatrix] = field(default_factory=dict)
    store: GenerationStore = None
    seen: SeenTable = None

    def __post_init__(self):
        if self.store is None:
            self.store = GenerationStore(self.g)
        if self.seen is None:
            self.seen = SeenTable(self.n_nodes)

    def matrix(self, gid: int) -> DecodingMatrix:
        m = self.matrices.get(gid)
        if m is None:
            m = self.matrices[gid] = DecodingMatrix(gid, self.payload_len)
        return m


class Action(NamedTuple):
    innovative: bool
    transmit: EncodedPacket | None = None


DROP = Action(False)


@dataclass(frozen=True)
class ForwardingPolicy:
    kind: str = "rldp"
    omega: float = 1.0
    # RLDP only: serve an election that arrives on a non-innovative packet
    late_election: bool = True

    def __post_init__(self):
        if self.kind not in ("rldp", "flooding", "probabilistic"):
            raise ValueError(f"unknown policy {self.kind!r}")
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must lie in [0, 1], got {self.omega!r}")

    @property
    def forward_probability(self) -> float:
        return 1.0 if self.kind == "flooding" else self.omega


def _absorb(state: NodeState, pkt: EncodedPacket, now: float) -> bool:
    """Common first steps: note the generation, test and store the packet."""
    observe(state.store, pkt, now)
    m = state.matrix(pkt.generation_id)
    if not m.is_innovative(pkt):
        return False
    m.insert(pkt)
    return True


def rldp_on_receive(
    state: NodeState,
    pkt: EncodedPacket,
    prev: int | None,
    nbrs,
    rng: np.random.Generator,
    now: float = 0.0,
    late_election: bool = True,
) -> Action:
    """RLDP reception: test, store, then recode once per (origin, generation).

    With ``late_election`` a node named as forwarder by a packet that is no
    longer innovative still transmits, provided it already received an
    innovative packet for the same (origin, generation) and has not yet
    served it. Multi-path arrival order otherwise loses such elections.
    """
    key = (pkt.origin_source, pkt.generation_id)
    innovative = _absorb(state, pkt, now)
    if innovative:
        state.seen.note_innovative(*key)
    elif not (late_election and state.seen.had_innovative(*key)):
        return DROP
    if state.node not in pkt.forwarders or key in state.seen:
        return Action(innovative)
    state.seen.mark(*key)
    m = state.matrices[pkt.generation_id]
    fs = forwarding_set(nbrs, state.node, prev)
    return Action(innovative, m.encode(rng, source=state.node, origin_source=pkt.origin_source, forwarders=fs, now=now))


def baseline_on_receive(
    state: NodeState, pkt: EncodedPacket, policy: ForwardingPolicy, rng: np.random.Generator, now: float = 0.0
) -> Action:
    if not _absorb(state, pkt, now):
        return DROP
    w = policy.forward_probability
    if w < 1.0 and not rng.random() < w:
        return Action(True)
    m = state.matrices[pkt.generation_id]
    return Action(True, m.encode(rng, source=state.node, origin_source=pkt.origin_source, now=now))


def source_emit(
    state: NodeState, native: NativePacket, nbrs, rng: np.random.Generator, rldp: bool = True
) -> EncodedPacket:
    """Add ``native`` to a generation and produce the packet announcing it."""
    now = native.creation_time
    gid = select_generation(state.store, state.node, now)
    m = state.matrix(gid)
    m.add_native(native)
    fs = frozenset()
    if rldp:
        state.seen.mark(state.node, gid)
        fs = forwarding_set(nbrs, state.node)
    return m.encode(rng, source=state.node, origin_source=state.node, forwarders=fs, now=now)


def on_receive(
    state: NodeState,
    pkt: EncodedPacket,
    prev: int | None,
    policy: ForwardingPolicy,
    nbrs,
    rng: np.random.Generator,
    now: float = 0.0,
) -> Action:
    if policy.kind == "rldp":
        return rldp_on_receive(state, pkt, prev, nbrs, rng, now, policy.late_election)
    return baseline_on_receive(state, pkt, policy, rng, now)
