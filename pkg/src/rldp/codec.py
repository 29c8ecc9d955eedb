"""Random linear network coding over GF(2^8).

A :class:`DecodingMatrix` holds one node's view of one generation in reduced
row-echelon form. Columns are labelled by the source id of the native packet
they stand for and kept in ascending order, so every node lays out
coefficients identically. The matrix grows a column the first time a packet
mentions a new source.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .gf import INV, MUL

DEFAULT_PAYLOAD_LEN = 256


@dataclass(frozen=True, slots=True)
class NativePacket:
    source: int
    payload: np.ndarray
    creation_time: float = 0.0


@dataclass(frozen=True, slots=True)
class EncodedPacket:
    generation_id: int
    source: int
    origin_source: int
    columns: tuple[int, ...]
    coeffs: np.ndarray
    payload: np.ndarray
    forwarders: frozenset[int] = frozenset()
    hop_timestamp: float = 0.0

    def with_forwarders(self, fs) -> "EncodedPacket":
        return EncodedPacket(
            self.generation_id, self.source, self.origin_source, self.columns,
            self.coeffs, self.payload, frozenset(fs), self.hop_timestamp,
        )


class InsertOutcome(enum.Enum):
    INNOVATIVE = "innovative"
    REDUNDANT = "redundant"


@dataclass
class DecodingMatrix:
    generation_id: int
    payload_len: int = DEFAULT_PAYLOAD_LEN
    columns: list[int] = field(default_factory=list)
    coeffs: np.ndarray = None
    payload: np.ndarray = None
    pivots: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.coeffs is None:
            self.coeffs = np.zeros((0, len(self.columns)), dtype=np.uint8)
        if self.payload is None:
            self.payload = np.zeros((0, self.payload_len), dtype=np.uint8)
        self._index = {c: i for i, c in enumerate(self.columns)}
        self._decoded: set[int] = set()

    @property
    def rank(self) -> int:
        return len(self.pivots)

    @property
    def width(self) -> int:
        return len(self.columns)

    def copy(self) -> "DecodingMatrix":
        return DecodingMatrix(
            self.generation_id, self.payload_len, list(self.columns),
            self.coeffs.copy(), self.payload.copy(), list(self.pivots),
        )

    # -- column bookkeeping -------------------------------------------------

    def extend_columns(self, labels) -> None:
        new = sorted(set(labels) - self._index.keys())
        if not new:
            return
        cols = sorted(self.columns + new)
        index = {c: i for i, c in enumerate(cols)}
        where = [index[c] for c in self.columns]
        coeffs = np.zeros((self.rank, len(cols)), dtype=np.uint8)
        coeffs[:, where] = self.coeffs
        self.pivots = [where[p] for p in self.pivots]
        self.columns, self._index, self.coeffs = cols, index, coeffs

    def _align(self, pkt: EncodedPacket) -> np.ndarray | None:
        """Packet vector in this matrix's column order, or None when it touches an unknown column."""
        if pkt.generation_id != self.generation_id:
            raise ValueError(f"packet for generation {pkt.generation_id}, matrix holds {self.generation_id}")
        if tuple(self.columns) == pkt.columns:
            return pkt.coeffs.copy()
        vec = np.zeros(self.width, dtype=np.uint8)
        index = self._index
        for c, x in zip(pkt.columns, pkt.coeffs.tolist()):
            i = index.get(c)
            if i is None:
                if x:
                    return None
                continue
            vec[i] = x
        return vec

    # -- elimination ----------------------------------------------------------

    def _reduce(self, vec: np.ndarray, pay: np.ndarray | None = None):
        if not self.pivots:
            return vec, pay
        f = vec[self.pivots]
        nz = np.flatnonzero(f)
        if len(nz) == 0:
            return vec, pay
        fs = f[nz][:, None]
        vec = vec ^ np.bitwise_xor.reduce(MUL[fs, self.coeffs[nz]], axis=0)
        if pay is not None:
            pay = pay ^ np.bitwise_xor.reduce(MUL[fs, self.payload[nz]], axis=0)
        return vec, pay

    def is_innovative(self, pkt: EncodedPacket) -> bool:
        vec = self._align(pkt)
        if vec is None:
            return True
        vec, _ = self._reduce(vec)
        return bool(vec.any())

    def insert(self, pkt: EncodedPacket) -> InsertOutcome:
        if pkt.generation_id != self.generation_id:
            raise ValueError(f"packet for generation {pkt.generation_id}, matrix holds {self.generation_id}")
        self.extend_columns(pkt.columns)
        return self._insert_row(self._align(pkt), pkt.payload)

    def _insert_row(self, vec: np.ndarray, pay: np.ndarray) -> InsertOutcome:
        vec, pay = self._reduce(vec, pay)
        nz = np.flatnonzero(vec)
        if len(nz) == 0:
            return InsertOutcome.REDUNDANT
        col = int(nz[0])
        inv = INV[vec[col]]
        vec = MUL[inv, vec]
        pay = MUL[inv, pay]
        # clear the new pivot column from the existing rows
        f = self.coeffs[:, col]
        hit = np.flatnonzero(f)
        if len(hit):
            fs = f[hit][:, None]
            self.coeffs[hit] ^= MUL[fs, vec[None, :]]
            self.payload[hit] ^= MUL[fs, pay[None, :]]
        pos = int(np.searchsorted(self.pivots, col))
        self.coeffs = np.insert(self.coeffs, pos, vec, axis=0)
        self.payload = np.insert(self.payload, pos, pay, axis=0)
        self.pivots.insert(pos, col)
        return InsertOutcome.INNOVATIVE

    def add_native(self, native: NativePacket) -> None:
        """Store a locally created native as a unit row on its own column."""
        if native.source in self._index:
            raise ValueError(f"generation {self.generation_id} already holds a packet from {native.source}")
        self.extend_columns([native.source])
        vec = np.zeros(self.width, dtype=np.uint8)
        vec[self._index[native.source]] = 1
        self._insert_row(vec, np.asarray(native.payload, dtype=np.uint8))

    # -- decoding -------------------------------------------------------------

    def decoded_columns(self) -> list[int]:
        if not self.pivots:
            return []
        unit = np.count_nonzero(self.coeffs, axis=1) == 1
        return [self.columns[p] for p, u in zip(self.pivots, unit.tolist()) if u]

    def try_decode(self) -> dict[int, np.ndarray]:
        """Every native recoverable now, keyed by source id.

        In reduced echelon form a native is in the row space iff one of the
        rows is the unit vector on its column.
        """
        if not self.pivots:
            return {}
        unit = np.count_nonzero(self.coeffs, axis=1) == 1
        return {self.columns[p]: self.payload[i].copy() for i, (p, u) in enumerate(zip(self.pivots, unit.tolist())) if u}

    def newly_decoded(self) -> list[int]:
        """Columns decodable now that were not reported by an earlier call."""
        out = [c for c in self.decoded_columns() if c not in self._decoded]
        self._decoded.update(out)
        return out

    # -- encoding -------------------------------------------------------------

    def combine(self, scalars) -> tuple[np.ndarray, np.ndarray]:
        """Linear combination of the held rows with the given scalars."""
        s = np.asarray(scalars, dtype=np.uint8)
        if len(s) != self.rank:
            raise ValueError(f"need {self.rank} scalars, got {len(s)}")
        sel = np.flatnonzero(s)
        if len(sel) == 0:
            return np.zeros(self.width, dtype=np.uint8), np.zeros(self.payload_len, dtype=np.uint8)
        fs = s[sel][:, None]
        return (
            np.bitwise_xor.reduce(MUL[fs, self.coeffs[sel]], axis=0),
            np.bitwise_xor.reduce(MUL[fs, self.payload[sel]], axis=0),
        )

    def draw_scalars(self, rng: np.random.Generator, nonzero: bool = True) -> np.ndarray:
        low = 1 if nonzero else 0
        return rng.integers(low, 256, self.rank, dtype=np.uint8)

    def encode(
        self,
        rng: np.random.Generator,
        *,
        source: int,
        origin_source: int,
        forwarders=frozenset(),
        now: float = 0.0,
        nonzero: bool = True,
    ) -> EncodedPacket:
        """Fresh random combination of everything held for this generation.

        Scalars are drawn from the nonzero field elements by default, so a
        recode carries every native the node holds with a nonzero
        coefficient whenever the matrix is fully decoded. Zero combinations
        are redrawn.
        """
        if self.rank == 0:
            raise ValueError(f"nothing to encode for generation {self.generation_id}")
        while True:
            vec, pay = self.combine(self.draw_scalars(rng, nonzero))
            if vec.any():
                break
        return EncodedPacket(
            self.generation_id, source, origin_source, tuple(self.columns),
            vec, pay, frozenset(forwarders), now,
        )
