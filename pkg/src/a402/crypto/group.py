"""secp256k1 group arithmetic.

Affine points are ``(x, y)`` int tuples; the identity is ``None``. Internals
use Jacobian coordinates, a precomputed window table for the generator, and a
bounded window-table cache for repeatedly used points (long-term public keys,
statements), which keeps scalar multiplication fast enough for exhaustive
schedule exploration in pure Python.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Optional, Tuple

from ..errors import IdentityPointError

P = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFC2F
N = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
GX = 0x79BE667EF9DCBBAC55A06295CE870B07029BFCDB2DCE28D959F2815B16F81798
GY = 0x483ADA7726A3C4655DA4FBFC0E1108A8FD17B448A68554199C47D08FFB10D4B8
G: "Point" = (GX, GY)

Point = Tuple[int, int]
_INF = (0, 0, 0)
_WINDOW = 4
_STEPS = (256 + _WINDOW - 1) // _WINDOW


def _jdouble(X1, Y1, Z1):
    if not Y1:
        return _INF
    YY = Y1 * Y1 % P
    S = 4 * X1 * YY % P
    M = 3 * X1 * X1 % P
    X3 = (M * M - 2 * S) % P
    Y3 = (M * (S - X3) - 8 * YY * YY) % P
    Z3 = 2 * Y1 * Z1 % P
    return X3, Y3, Z3


def _jadd(X1, Y1, Z1, X2, Y2, Z2):
    if not Z1:
        return X2, Y2, Z2
    if not Z2:
        return X1, Y1, Z1
    Z1Z1 = Z1 * Z1 % P
    Z2Z2 = Z2 * Z2 % P
    U1 = X1 * Z2Z2 % P
    U2 = X2 * Z1Z1 % P
    S1 = Y1 * Z2 * Z2Z2 % P
    S2 = Y2 * Z1 * Z1Z1 % P
    if U1 == U2:
        if S1 != S2:
            return _INF
        return _jdouble(X1, Y1, Z1)
    H = (U2 - U1) % P
    I = 4 * H * H % P
    J = H * I % P
    r = 2 * (S2 - S1) % P
    V = U1 * I % P
    X3 = (r * r - J - 2 * V) % P
    Y3 = (r * (V - X3) - 2 * S1 * J) % P
    Z3 = 2 * H * Z1 * Z2 % P
    return X3, Y3, Z3


def _to_affine(jac) -> Optional[Point]:
    X, Y, Z = jac
    if not Z:
        return None
    zi = pow(Z, P - 2, P)
    zi2 = zi * zi % P
    return (X * zi2 % P, Y * zi2 * zi % P)


def _window_table(pt: Point):
    """Rows of 4-bit window multiples: table[w][d] = (d << 4w) * pt."""
    rows = []
    q = (pt[0], pt[1], 1)
    for _ in range(_STEPS):
        row = [_INF]
        acc = _INF
        for _ in range(15):
            acc = _jadd(*acc, *q)
            row.append(acc)
        rows.append(row)
        for _ in range(_WINDOW):
            q = _jdouble(*q)
    return rows


_G_TABLE = _window_table(G)
_PT_TABLES: dict = {}
_PT_TABLES_MAX = 128


def _table_mul(table, k: int):
    acc = _INF
    for w in range(_STEPS):
        d = (k >> (_WINDOW * w)) & 15
        if d:
            acc = _jadd(*acc, *table[w][d])
    return acc


@lru_cache(maxsize=8192)
def mul_g(k: int) -> Optional[Point]:
    """k*G via the fixed generator table."""
    return _to_affine(_table_mul(_G_TABLE, k % N))


@lru_cache(maxsize=8192)
def mul(pt: Optional[Point], k: int) -> Optional[Point]:
    """k*pt; builds and caches a window table for frequently used points."""
    if pt is None:
        return None
    if pt == G:
        return mul_g(k)
    table = _PT_TABLES.get(pt)
    if table is None:
        if len(_PT_TABLES) >= _PT_TABLES_MAX:
            _PT_TABLES.pop(next(iter(_PT_TABLES)))
        table = _window_table(pt)
        _PT_TABLES[pt] = table
    return _to_affine(_table_mul(table, k % N))


def add(a: Optional[Point], b: Optional[Point]) -> Optional[Point]:
    if a is None:
        return b
    if b is None:
        return a
    return _to_affine(_jadd(a[0], a[1], 1, b[0], b[1], 1))


def negate(pt: Optional[Point]) -> Optional[Point]:
    if pt is None:
        return None
    return (pt[0], (P - pt[1]) % P)


def sub(a: Optional[Point], b: Optional[Point]) -> Optional[Point]:
    return add(a, negate(b))


def is_on_curve(pt: Point) -> bool:
    x, y = pt
    return 0 <= x < P and 0 <= y < P and (y * y - (x * x * x + 7)) % P == 0


def point_to_bytes(pt: Optional[Point]) -> bytes:
    """33-byte compressed encoding; the identity is not encodable."""
    if pt is None:
        raise IdentityPointError("cannot encode the identity element")
    prefix = b"\x03" if pt[1] & 1 else b"\x02"
    return prefix + pt[0].to_bytes(32, "big")


def point_from_bytes(data: bytes) -> Point:
    if len(data) != 33 or data[0] not in (2, 3):
        raise ValueError("malformed compressed point")
    x = int.from_bytes(data[1:], "big")
    if x >= P:
        raise ValueError("point x out of range")
    y_sq = (pow(x, 3, P) + 7) % P
    y = pow(y_sq, (P + 1) // 4, P)
    if pow(y, 2, P) != y_sq:
        raise ValueError("x is not on the curve")
    if (y & 1) != (data[0] & 1):
        y = P - y
    return (x, y)


def scalar_to_bytes(k: int) -> bytes:
    return (k % N).to_bytes(32, "big")


def scalar_from_bytes(data: bytes) -> int:
    if len(data) != 32:
        raise ValueError("scalar must be 32 bytes")
    return int.from_bytes(data, "big")
