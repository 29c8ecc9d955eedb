"""Arithmetic over GF(2^8) with reduction polynomial x^8 + x^4 + x^3 + x^2 + 1.

Scalar helpers operate on ints in [0, 255]. ``MUL`` is the full 256x256
product table, which lets numpy do vectorised scalar-times-vector products
with a single fancy index: ``MUL[c, v]``.
"""

from __future__ import annotations

import numpy as np

POLY = 0x11D
ORDER = 256
GENERATOR = 0x02

EXP = np.zeros(2 * ORDER, dtype=np.int64)
LOG = np.zeros(ORDER, dtype=np.int64)


def _build_tables() -> None:
    x = 1
    for i in range(ORDER - 1):
        EXP[i] = x
        LOG[x] = i
        x <<= 1
        if x & ORDER:
            x ^= POLY
    EXP[ORDER - 1 : 2 * ORDER] = EXP[: ORDER + 1]


_build_tables()

_nz = np.arange(1, ORDER)
MUL = np.zeros((ORDER, ORDER), dtype=np.uint8)
MUL[1:, 1:] = EXP[(LOG[_nz][:, None] + LOG[_nz][None, :]) % (ORDER - 1)]

INV = np.zeros(ORDER, dtype=np.uint8)
INV[1:] = EXP[(ORDER - 1 - LOG[_nz]) % (ORDER - 1)]
del _nz


def gf_add(a: int, b: int) -> int:
    return a ^ b


def gf_mul(a: int, b: int) -> int:
    return int(MUL[a, b])


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no multiplicative inverse in GF(2^8)")
    return int(INV[a])


def gf_div(a: int, b: int) -> int:
    return gf_mul(a, gf_inv(b))


def scale(c: int, vec: np.ndarray) -> np.ndarray:
    """Multiply every symbol of ``vec`` by the scalar ``c``."""
    return MUL[c, vec]


def combine(scalars: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Return sum_i scalars[i] * rows[i] over the field.

    ``rows`` is (r, w) uint8 and ``scalars`` has length r.
    """
    if len(rows) == 0:
        return np.zeros(rows.shape[1:], dtype=np.uint8)
    return np.bitwise_xor.reduce(MUL[np.asarray(scalars)[:, None], rows], axis=0)
