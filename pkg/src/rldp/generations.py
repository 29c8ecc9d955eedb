"""Distributed generation management under strictly inter-source coding.

Each node keeps its own :class:`GenerationStore`. A source joins the most
recently seen generation unless it is full or already holds a packet from
that source; otherwise it opens a new generation whose id is one more than
the highest id it has ever seen. Packets are addressed inside a generation
by their source id alone, which is unique because a source contributes at
most one native per generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class GenerationView:
    id: int
    size_limit: int
    members: set[int] = field(default_factory=set)
    last_seen_time: float = float("-inf")

    @property
    def full(self) -> bool:
        return len(self.members) >= self.size_limit


@dataclass
class GenerationStore:
    size_limit: int
    views: dict[int, GenerationView] = field(default_factory=dict)
    most_recent_id: int = 0
    _latest: tuple[float, int] | None = None

    @property
    def most_recent(self) -> int | None:
        """Generation seen latest in time (ties go to the higher id)."""
        return None if self._latest is None else self._latest[1]

    @property
    def most_recent_open(self) -> int | None:
        gid = self.most_recent
        if gid is None or self.views[gid].full:
            return None
        return gid

    def _touch(self, gid: int, now: float) -> GenerationView:
        view = self.views.get(gid)
        if view is None:
            view = self.views[gid] = GenerationView(gid, self.size_limit)
        view.last_seen_time = max(view.last_seen_time, now)
        self.most_recent_id = max(self.most_recent_id, gid)
        key = (now, gid)
        if self._latest is None or key > self._latest:
            self._latest = key
        return view

    def open_generations(self) -> list[int]:
        return sorted(gid for gid, v in self.views.items() if not v.full)


def select_generation(store: GenerationStore, src: int, now: float = 0.0) -> int:
    """Pick the generation ``src`` adds its next native to and register it."""
    gid = store.most_recent_open
    if gid is None or src in store.views[gid].members:
        gid = store.most_recent_id + 1
    view = store._touch(gid, now)
    view.members.add(src)
    return gid


def column_order(members) -> list[int]:
    return sorted(set(members))


def observe(store: GenerationStore, pkt, now: float) -> GenerationStore:
    """Record that an encoded packet of ``pkt.generation_id`` was received."""
    view = store._touch(pkt.generation_id, now)
    view.members.update(pkt.columns)
    return store
