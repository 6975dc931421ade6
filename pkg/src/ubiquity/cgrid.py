"""Base-c grid arithmetic on [0,1)^d.

Boxes are half-open products ``[k_i c^-j, (k_i+1) c^-j)``.  Balls are
open sup-norm balls.  Scalar entry points use exact rational arithmetic
(``fractions.Fraction``), so a float input is located by its exact binary
value; the ``*_many`` helpers are vectorized float versions for bulk work.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ResolutionError


def depth_cap(c: int) -> int:
    """Deepest generation whose indices we agree to handle (60 bits of resolution)."""
    if c == 2:
        return 60
    return int(60 / math.log2(c))


@dataclass(frozen=True)
class GridGeometry:
    c: int
    d: int = 1

    def __post_init__(self):
        if int(self.c) != self.c or self.c < 2:
            raise DomainError(f"base must be an integer >= 2, got {self.c}")
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension must be an integer >= 1, got {self.d}")

    @property
    def j_cap(self) -> int:
        return depth_cap(self.c)

    def check_depth(self, j: int) -> None:
        if j < 0:
            raise DomainError(f"negative generation {j}")
        if j > self.j_cap:
            raise ResolutionError(f"generation {j} exceeds the depth cap {self.j_cap} for c={self.c}")


@dataclass(frozen=True, order=True)
class CAdicBox:
    c: int
    j: int
    k: tuple

    def __post_init__(self):
        k = tuple(int(v) for v in self.k)
        object.__setattr__(self, "k", k)
        n = self.c ** self.j
        if any(v < 0 or v >= n for v in k):
            raise DomainError(f"index {k} out of range for generation {self.j} (c={self.c})")

    @property
    def d(self) -> int:
        return len(self.k)

    @property
    def side(self) -> Fraction:
        return Fraction(1, self.c ** self.j)

    @property
    def diameter(self) -> float:
        return float(self.c) ** -self.j

    @property
    def lower(self) -> tuple:
        h = self.side
        return tuple(v * h for v in self.k)

    def contains(self, x) -> bool:
        x = _as_point(x, self.d)
        n = self.c ** self.j
        return all(v * 1 <= xi * n < v + 1 for v, xi in zip(self.k, x))

    def children(self) -> list:
        c = self.c
        return [CAdicBox(c, self.j + 1, tuple(c * v + t for v, t in zip(self.k, digits)))
                for digits in product(range(c), repeat=self.d)]

    def parent(self) -> "CAdicBox":
        if self.j == 0:
            raise DomainError("the root box has no parent")
        return CAdicBox(self.c, self.j - 1, tuple(v // self.c for v in self.k))


def _as_point(x, d=None) -> tuple:
    if isinstance(x, (int, float, Fraction, np.floating, np.integer)):
        pt = (Fraction(x),)
    else:
        pt = tuple(Fraction(v) for v in np.asarray(x, dtype=object).ravel()) \
            if not isinstance(x, tuple) else tuple(Fraction(v) for v in x)
    if d is not None and len(pt) != d:
        raise DomainError(f"point has {len(pt)} coordinates, expected {d}")
    return pt


def _check_unit(pt: Sequence[Fraction]) -> None:
    for v in pt:
        if not (0 <= v < 1):
            raise DomainError(f"coordinate {float(v)!r} outside [0,1)")


def locate(x, j: int, geom: GridGeometry) -> CAdicBox:
    """Box of generation ``j`` containing ``x``; ``k_i = floor(x_i c^j)``."""
    geom.check_depth(j)
    pt = _as_point(x, geom.d)
    _check_unit(pt)
    n = geom.c ** j
    return CAdicBox(geom.c, j, tuple(math.floor(v * n) for v in pt))


def locate_many(points, j: int, geom: GridGeometry) -> np.ndarray:
    """Vectorized ``locate`` for an ``(N, d)`` (or ``(N,)`` when d=1) float array."""
    geom.check_depth(j)
    x = np.asarray(points, dtype=np.float64)
    if np.any((x < 0) | (x >= 1)):
        raise DomainError("coordinates outside [0,1)")
    n = geom.c ** j
    k = np.floor(x * n).astype(np.int64)
    np.clip(k, 0, n - 1, out=k)
    return k


def neighbors(b: CAdicBox) -> set:
    """The boxes of the same generation at sup-index distance <= 1, clipped at the border."""
    n = b.c ** b.j
    out = set()
    for off in product((-1, 0, 1), repeat=b.d):
        k = tuple(v + o for v, o in zip(b.k, off))
        if all(0 <= v < n for v in k):
            out.add(CAdicBox(b.c, b.j, k))
    return out


def ball_index_ranges(center, r, j: int, c: int):
    """Per-coordinate inclusive index ranges of generation-j boxes meeting the open ball.

    Returns a list of ``(lo, hi)`` pairs, or ``None`` if the ball misses [0,1)^d.
    """
    n = c ** j
    out = []
    for x in center:
        a = (x - r) * n
        b = (x + r) * n
        lo = max(math.floor(a), 0)
        hi = min(math.ceil(b) - 1, n - 1)
        if lo > hi:
            return None
        out.append((lo, hi))
    return out


def ball_cover_boxes(center, r, j: int, geom: GridGeometry) -> list:
    """Generation-j boxes meeting the open sup-norm ball ``B(center, r)``.

    That is the minimal set of generation-j boxes whose union contains
    ``B ∩ [0,1)^d``.  Sorted by index.
    """
    geom.check_depth(j)
    pt = _as_point(center, geom.d)
    r = Fraction(r)
    if r <= 0:
        raise DomainError("radius must be positive")
    ranges = ball_index_ranges(pt, r, j, geom.c)
    if ranges is None:
        return []
    return [CAdicBox(geom.c, j, k) for k in product(*(range(lo, hi + 1) for lo, hi in ranges))]


def brute_force_cover(center, r, j: int, geom: GridGeometry) -> list:
    """Exhaustive scan over every generation-j box; test oracle for ``ball_cover_boxes``."""
    pt = _as_point(center, geom.d)
    r = Fraction(r)
    n = geom.c ** j
    h = Fraction(1, n)
    hits = []
    for k in product(range(n), repeat=geom.d):
        # half-open box [kh, (k+1)h) meets open interval (x-r, x+r)
        if all(v * h < x + r and (v + 1) * h > x - r for v, x in zip(k, pt)):
            hits.append(CAdicBox(geom.c, j, k))
    return hits


def _power_of_two(c: int) -> bool:
    return c & (c - 1) == 0


def ball_ranges_many(centers, radii, j: int, c: int, inner: bool = False):
    """Vectorized 1-d index ranges for many balls.

    ``inner=False`` gives boxes meeting the open ball, ``inner=True`` boxes
    whose closure lies in the closed ball.  Ranges are clipped to the grid;
    empty ranges have ``lo > hi``.  For bases that are not powers of two the
    float products are inexact, so ranges are widened (outer) or shrunk
    (inner) by a few ulps to stay conservative.
    """
    n = c ** j
    x = np.asarray(centers, dtype=np.float64)
    r = np.broadcast_to(np.asarray(radii, dtype=np.float64), x.shape)
    a = (x - r) * n
    b = (x + r) * n
    tol = 0.0 if _power_of_two(c) else 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(b))
    if inner:
        lo = np.ceil(a + tol)
        hi = np.floor(b - tol) - 1
    else:
        lo = np.floor(a - tol)
        hi = np.ceil(b + tol) - 1
    empty = (lo > n - 1) | (hi < 0) | (hi < lo)
    lo = np.clip(lo, 0, n - 1).astype(np.int64)
    hi = np.clip(hi, 0, n - 1).astype(np.int64)
    hi = np.where(empty, lo - 1, hi)
    return lo, hi


def depth_for_radius(r: float, c: int) -> int:
    """Smallest j with c^-j <= r, i.e. ceil(log_c(1/r))."""
    if r <= 0:
        raise DomainError("radius must be positive")
    j = max(0, math.ceil(math.log(1.0 / r, c) - 1e-12))
    while c ** -j > r:
        j += 1
    while j > 0 and c ** -(j - 1) <= r:
        j -= 1
    return j


def boxes_at(j: int, geom: GridGeometry) -> Iterable[CAdicBox]:
    n = geom.c ** j
    for k in product(range(n), repeat=geom.d):
        yield CAdicBox(geom.c, j, k)
