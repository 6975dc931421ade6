"""Measures on the c-adic tree, stored as natural-log masses.

A :class:`BoxMeasure` keeps ``log mu(I_{j,k})`` for every box of every
generation ``0..J_max``.  Four constructors are provided: multinomial
(product) measures, Mandelbrot cascades, compound Poisson cascades (d=1)
and finite-depth Gibbs measures.  Sums are always log-sum-exp.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

import numpy as np
from scipy.special import logsumexp

from . import rng
from .cgrid import CAdicBox, GridGeometry, ball_ranges_many, depth_for_radius
from .errors import DomainError, ResolutionError, ResourceError

DEFAULT_ENTRY_BUDGET = 1 << 27  # stored log-masses, summed over generations


# --------------------------------------------------------------------------
# the stored measure


@dataclass(frozen=True, eq=False)
class BoxMeasure:
    geom: GridGeometry
    J_max: int
    log_mass: tuple  # generation j -> ndarray of shape (c^j,)*d
    kind: str = "custom"
    spec: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def c(self) -> int:
        return self.geom.c

    @property
    def d(self) -> int:
        return self.geom.d

    @property
    def total_log_mass(self) -> float:
        return float(np.asarray(self.log_mass[0]).ravel()[0])

    def level(self, j: int) -> np.ndarray:
        if j < 0 or j > self.J_max:
            raise ResolutionError(f"generation {j} not stored (J_max={self.J_max})")
        return self.log_mass[j]

    def masses(self, j: int) -> np.ndarray:
        return np.exp(self.level(j))


def _check_budget(c: int, d: int, J: int, budget: int) -> None:
    total = sum(c ** (j * d) for j in range(J + 1))
    if total > budget:
        raise ResourceError(f"storing {total} log-masses (c={c}, d={d}, J={J}) exceeds the budget {budget}")


def aggregate_up(fine: np.ndarray, c: int, d: int) -> np.ndarray:
    """Parent log-masses from child log-masses (one generation up)."""
    n = fine.shape[0] // c
    shape = []
    for _ in range(d):
        shape += [n, c]
    return logsumexp(fine.reshape(shape), axis=tuple(range(1, 2 * d, 2)))


def refine_uniform(coarse: np.ndarray, c: int, d: int) -> np.ndarray:
    """Children log-masses when mass is spread uniformly inside each box."""
    out = coarse
    for axis in range(d):
        out = np.repeat(out, c, axis=axis)
    return out - d * math.log(c)


def _levels_from_depth(finest: np.ndarray, n: int, J_max: int, c: int, d: int) -> list:
    levels = [None] * (max(n, J_max) + 1)
    levels[n] = finest
    for j in range(n, 0, -1):
        levels[j - 1] = aggregate_up(levels[j], c, d)
    for j in range(n, J_max):
        levels[j + 1] = refine_uniform(levels[j], c, d)
    return levels[: J_max + 1]


def additivity_error(mu: BoxMeasure) -> float:
    """Largest relative mismatch between a parent mass and the sum of its children."""
    worst = 0.0
    for j in range(mu.J_max):
        parent = mu.log_mass[j]
        summed = aggregate_up(mu.log_mass[j + 1], mu.c, mu.d)
        ok = np.isfinite(parent)
        if np.any(np.isfinite(summed) != ok):
            return math.inf
        if np.any(ok):
            worst = max(worst, float(np.max(np.abs(np.expm1(summed[ok] - parent[ok])))))
    return worst


# --------------------------------------------------------------------------
# multinomial


@dataclass(frozen=True)
class MultinomialSpec:
    """Product of d one-dimensional multinomial measures in base c."""

    weights: tuple  # d rows of c weights; entries may be Fractions for exact work

    def __post_init__(self):
        rows = tuple(tuple(r) for r in self.weights)
        if not rows or any(len(r) != len(rows[0]) for r in rows):
            raise DomainError("weights must be d rows of equal length c")
        if len(rows[0]) < 2:
            raise DomainError("base must be at least 2")
        for r in rows:
            if any(not (float(w) > 0) for w in r):
                raise DomainError("multinomial weights must be strictly positive (full support)")
            if abs(sum(float(w) for w in r) - 1.0) > 1e-12:
                raise DomainError(f"weight row {r} does not sum to 1")
        object.__setattr__(self, "weights", rows)

    @classmethod
    def uniform(cls, c: int, d: int = 1) -> "MultinomialSpec":
        return cls(tuple(tuple(Fraction(1, c) for _ in range(c)) for _ in range(d)))

    @classmethod
    def from_rows(cls, rows) -> "MultinomialSpec":
        rows = list(rows)
        if rows and not isinstance(rows[0], (list, tuple)):
            rows = [rows]
        return cls(tuple(tuple(r) for r in rows))

    @property
    def c(self) -> int:
        return len(self.weights[0])

    @property
    def d(self) -> int:
        return len(self.weights)

    @property
    def geom(self) -> GridGeometry:
        return GridGeometry(self.c, self.d)

    @property
    def log_weights(self) -> np.ndarray:
        return np.log(np.array([[float(w) for w in r] for r in self.weights]))

    def exact_weights(self) -> tuple:
        """Weights as Fractions; floats are read through their decimal repr (0.8 -> 4/5)."""
        return tuple(tuple(w if isinstance(w, Fraction) else Fraction(repr(float(w))) for w in r)
                     for r in self.weights)

    def tau(self, q) -> np.ndarray:
        """Closed-form scaling function -log_c sum_k pi_k^q, summed over coordinates."""
        q = np.asarray(q, dtype=float)
        lw = self.log_weights
        return -sum(logsumexp(np.multiply.outer(q, row), axis=-1) for row in lw) / math.log(self.c)

    def tau_prime(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        out = np.zeros_like(q)
        for row in self.log_weights:
            z = np.multiply.outer(q, row)
            p = np.exp(z - logsumexp(z, axis=-1, keepdims=True))
            out = out - (p * row).sum(axis=-1)
        return out / math.log(self.c)

    def entropy(self) -> float:
        """sum_i sum_k -pi log_c pi; equals tau'(1) and tau*(tau'(1))."""
        return float(sum(-(np.exp(r) * r).sum() for r in self.log_weights) / math.log(self.c))

    def to_dict(self) -> dict:
        return {"weights": [[float(w) for w in r] for r in self.weights]}


def tilt_multinomial(spec: MultinomialSpec, q: float) -> MultinomialSpec:
    """Row-wise ``pi^q / sum pi^q``: the Gibbs measure mu_q at inverse temperature q."""
    if q == 1:
        return spec
    rows = []
    for r in spec.weights:
        if all(isinstance(w, Fraction) for w in r) and float(q).is_integer():
            p = [w ** int(q) for w in r]
            s = sum(p)
            rows.append(tuple(v / s for v in p))
        else:
            lw = q * np.log([float(w) for w in r])
            rows.append(tuple(np.exp(lw - logsumexp(lw)).tolist()))
    return MultinomialSpec(tuple(rows))


def multinomial_level(spec: MultinomialSpec, j: int) -> np.ndarray:
    """log mu on generation j, via outer sums of per-coordinate digit weights."""
    c, d = spec.c, spec.d
    out = None
    for axis, row in enumerate(spec.log_weights):
        v = np.zeros(1)
        for _ in range(j):
            v = (v[:, None] + row[None, :]).ravel()
        shape = [1] * d
        shape[axis] = v.size
        v = v.reshape(shape)
        out = v if out is None else out + v
    return np.asarray(out).reshape((c ** j,) * d)


def build_multinomial(spec: MultinomialSpec, J_max: int, budget: int = DEFAULT_ENTRY_BUDGET) -> BoxMeasure:
    geom = spec.geom
    geom.check_depth(J_max)
    _check_budget(spec.c, spec.d, J_max, budget)
    levels = [multinomial_level(spec, 0)]
    for _ in range(J_max):
        levels.append(multinomial_level_from_parent(levels[-1], spec))
    return BoxMeasure(geom, J_max, tuple(levels), "multinomial", spec.to_dict())


def multinomial_level_from_parent(parent: np.ndarray, spec: MultinomialSpec) -> np.ndarray:
    out = parent
    for axis, row in enumerate(spec.log_weights):
        out = np.repeat(out, spec.c, axis=axis)
        shape = [1] * spec.d
        shape[axis] = out.shape[axis]
        out = out + np.tile(row, out.shape[axis] // spec.c).reshape(shape)
    return out


def multinomial_log_mass(spec: MultinomialSpec, j: int, k) -> float:
    """log mu(I_{j,k}) for any depth, reading digits of (possibly huge) integer indices."""
    lw = spec.log_weights
    c = spec.c
    if isinstance(k, int):
        k = (k,)
    total = 0.0
    for axis, kk in enumerate(k):
        kk = int(kk)
        counts = [0] * c
        for _ in range(j):
            kk, digit = divmod(kk, c)
            counts[digit] += 1
        total += sum(n * lw[axis, t] for t, n in enumerate(counts))
    return total


def multinomial_log_mass_many(spec: MultinomialSpec, j: int, k: np.ndarray) -> np.ndarray:
    """Vectorized log-mass for int64 indices (d=1: shape (N,), else (N, d))."""
    k = np.asarray(k, dtype=np.int64)
    if spec.d == 1 and k.ndim == 1:
        k = k[:, None]
    lw = spec.log_weights
    out = np.zeros(k.shape[0])
    for axis in range(spec.d):
        kk = k[:, axis].copy()
        for _ in range(j):
            out += lw[axis][kk % spec.c]
            kk //= spec.c
    return out


def multinomial_exact_mass(spec: MultinomialSpec, j: int, k) -> Fraction:
    w = spec.exact_weights()
    c = spec.c
    if isinstance(k, int):
        k = (k,)
    out = Fraction(1)
    for axis, kk in enumerate(k):
        kk = int(kk)
        for _ in range(j):
            kk, digit = divmod(kk, c)
            out *= w[axis][digit]
    return out


# --------------------------------------------------------------------------
# Mandelbrot cascade


@dataclass(frozen=True)
class CascadeSpec:
    """Independent weights e^X per box; ``generator`` describes X.

    ``{"type": "constant", "value": a}``, ``{"type": "gaussian", "mean": m,
    "variance": v}`` or ``{"type": "logdiscrete", "values": [w...],
    "probs": [p...]}`` (X = log W with W discrete and positive).
    """

    c: int
    d: int
    generator: dict
    depth: int
    seed: int = 0

    def __post_init__(self):
        GridGeometry(self.c, self.d)
        g = dict(self.generator)
        kind = g.get("type")
        if kind == "constant":
            float(g["value"])
        elif kind == "gaussian":
            if not (float(g["variance"]) >= 0 and math.isfinite(float(g["variance"]))):
                raise DomainError("gaussian variance must be finite and non-negative")
            if not math.isfinite(float(g["mean"])):
                raise DomainError("gaussian mean must be finite")
        elif kind == "logdiscrete":
            v = np.asarray(g["values"], float)
            p = np.asarray(g["probs"], float)
            if v.shape != p.shape or np.any(v <= 0) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                raise DomainError("logdiscrete needs positive values and probabilities summing to 1")
        else:
            raise DomainError(f"unknown cascade generator {kind!r}")
        if not math.isfinite(self.log_mgf(1.0)):
            raise DomainError("E[e^X] is not finite; the cascade cannot be normalized")
        if self.depth < 1:
            raise DomainError("cascade depth must be >= 1")
        if not self.theta_prime_at_one() > 0:
            raise DomainError("degenerate cascade: theta'(1-) <= 0")

    def log_mgf(self, q: float) -> float:
        """ln E[e^{qX}]."""
        g = self.generator
        kind = g["type"]
        if kind == "constant":
            return q * float(g["value"])
        if kind == "gaussian":
            return q * float(g["mean"]) + 0.5 * q * q * float(g["variance"])
        v = np.log(np.asarray(g["values"], float))
        p = np.asarray(g["probs"], float)
        keep = p > 0
        return float(logsumexp(q * v[keep], b=p[keep]))

    def L(self, q: float) -> float:
        return self.d * math.log(self.c) + self.log_mgf(q)

    def theta(self, q):
        """(q L(1) - L(q)) / ln c, the almost-sure scaling function."""
        q = np.asarray(q, dtype=float)
        f = np.vectorize(lambda t: (t * self.L(1.0) - self.L(t)) / math.log(self.c))
        return f(q) if q.ndim else float(f(q))

    def theta_prime_at_one(self) -> float:
        g = self.generator
        if g["type"] == "constant":
            dl = float(g["value"])
        elif g["type"] == "gaussian":
            dl = float(g["mean"]) + float(g["variance"])
        else:
            v = np.log(np.asarray(g["values"], float))
            p = np.asarray(g["probs"], float)
            w = p * np.exp(v)
            dl = float((w * v).sum() / w.sum())
        # theta'(1) = (L(1) - L'(1)) / ln c with L'(1) = E[X e^X] / E[e^X]
        return (self.L(1.0) - dl) / math.log(self.c)

    def draw(self, generation: int, n: int) -> np.ndarray:
        """The n weights X of one generation, position-addressed by box index."""
        g = self.generator
        if g["type"] == "constant":
            return np.full(n, float(g["value"]))
        stream = rng.substream(rng.STREAM_CASCADE, generation)
        if g["type"] == "gaussian":
            z = rng.normals(self.seed, stream, n)
            return float(g["mean"]) + math.sqrt(float(g["variance"])) * z
        u = rng.uniforms(self.seed, stream, n)
        cdf = np.cumsum(np.asarray(g["probs"], float))
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u, side="right")
        return np.log(np.asarray(g["values"], float))[np.minimum(idx, cdf.size - 1)]

    def to_dict(self) -> dict:
        return {"c": self.c, "d": self.d, "generator": dict(self.generator), "depth": self.depth, "seed": self.seed}


def build_cascade(spec: CascadeSpec, J_max: int | None = None, budget: int = DEFAULT_ENTRY_BUDGET) -> BoxMeasure:
    """mass(I) = c^{-nd} (E e^X)^{-n} e^{S_n(I)} at depth n; sums above, uniform below."""
    c, d, n = spec.c, spec.d, spec.depth
    J_max = n if J_max is None else J_max
    geom = GridGeometry(c, d)
    geom.check_depth(max(n, J_max))
    _check_budget(c, d, max(n, J_max), budget)
    s = np.zeros((1,) * d)
    for g in range(1, n + 1):
        for axis in range(d):
            s = np.repeat(s, c, axis=axis)
        x = spec.draw(g, s.size).reshape(s.shape)
        s = s + x
    finest = s - n * d * math.log(c) - n * spec.log_mgf(1.0)
    levels = _levels_from_depth(finest, n, J_max, c, d)
    return BoxMeasure(geom, J_max, tuple(levels), "cascade", spec.to_dict(), spec.seed)


# --------------------------------------------------------------------------
# compound Poisson cascade


@dataclass(frozen=True)
class CpcSpec:
    """Poisson points in the (position, scale) strip with intensity xi ds dlam / (2 lam^2)."""

    xi: float
    eps: float
    seed: int = 0
    renormalize: bool = False
    max_points: int = 10_000_000

    def __post_init__(self):
        if not self.xi > 0:
            raise DomainError("xi must be positive")
        if not 0 < self.eps < 1:
            raise DomainError("eps must lie in (0, 1)")

    def expected_points(self, width: float = 1.0) -> float:
        return width * self.xi / 2.0 * (1.0 / self.eps - 1.0)

    def to_dict(self) -> dict:
        return {"xi": self.xi, "eps": self.eps, "seed": self.seed, "renormalize": self.renormalize}


S_MIN, S_MAX = -1.0, 2.0  # horizontal margin so that edge coverage is unbiased


def sample_cpc_points(spec: CpcSpec):
    """(s, lam) arrays of the Poisson cloud over [-1,2] x [eps,1]."""
    mean = spec.expected_points(S_MAX - S_MIN)
    if mean > spec.max_points:
        raise ResourceError(f"expected {mean:.3g} Poisson points exceeds the budget {spec.max_points}")
    count = int(rng.generator(spec.seed, rng.STREAM_CPC).poisson(mean))
    stream = rng.substream(rng.STREAM_CPC, 1)
    u = rng.uniforms(spec.seed, stream, 2 * count)
    s = S_MIN + (S_MAX - S_MIN) * u[:count]
    inv = 1.0 / spec.eps
    lam = 1.0 / (inv - u[count:] * (inv - 1.0))
    return s, lam


def covering_number(s: np.ndarray, lam: np.ndarray, t) -> np.ndarray:
    """N(t) = #{points with |t - s| < lam}."""
    t = np.atleast_1d(np.asarray(t, float))
    return ((np.abs(t[:, None] - s[None, :]) < lam[None, :]).sum(axis=1)).astype(float)


def build_cpc(spec: CpcSpec, J_max: int, budget: int = DEFAULT_ENTRY_BUDGET) -> BoxMeasure:
    """Exact box integrals of eps^{xi(e-1)} e^{N(t)} for one sample path."""
    geom = GridGeometry(2, 1)
    geom.check_depth(J_max)
    _check_budget(2, 1, J_max, budget)
    s, lam = sample_cpc_points(spec)
    lo, hi = s - lam, s + lam
    n = 2 ** J_max
    grid = np.arange(n + 1) / n
    inner_lo = lo[(lo > 0) & (lo < 1)]
    inner_hi = hi[(hi > 0) & (hi < 1)]
    cuts = np.concatenate([grid, inner_lo, inner_hi])
    # +1 when entering an interval, -1 when leaving; grid cuts carry 0
    delta = np.concatenate([np.zeros(n + 1), np.ones(inner_lo.size), -np.ones(inner_hi.size)])
    order = np.lexsort((delta, cuts))
    cuts, delta = cuts[order], delta[order]
    start = float(((lo <= 0) & (hi > 0)).sum())
    level = start + np.cumsum(delta)
    seg_len = np.diff(cuts)
    seg_n = level[:-1]
    top = float(seg_n.max()) if seg_n.size else 0.0
    w = seg_len * np.exp(seg_n - top)
    # each segment lies in the box of its left endpoint
    box = np.minimum(np.floor(cuts[:-1] * n).astype(np.int64), n - 1)
    mass = np.bincount(box, weights=w, minlength=n)
    with np.errstate(divide="ignore"):
        finest = np.log(mass) + top + spec.xi * (math.e - 1.0) * math.log(spec.eps)
    if spec.renormalize:
        finest = finest - logsumexp(finest)
    levels = _levels_from_depth(finest, J_max, J_max, 2, 1)
    out = BoxMeasure(geom, J_max, tuple(levels), "cpc", spec.to_dict(), spec.seed)
    return out


# --------------------------------------------------------------------------
# finite-depth Gibbs measure


def _potential_function(descriptor, c: int, d: int) -> Callable[[np.ndarray], np.ndarray]:
    """Turn a potential descriptor into a vectorized function on (N, d) points."""
    if callable(descriptor):
        return lambda x: np.asarray(descriptor(x), float)
    kind = descriptor.get("type")
    if kind == "constant":
        v = float(descriptor["value"])
        return lambda x: np.full(x.shape[0], v)
    if kind == "piecewise":
        g = int(descriptor.get("level", 1))
        vals = np.asarray(descriptor["values"], float).reshape((c ** g,) * d)

        def f(x):
            k = np.minimum(np.floor(x * c ** g).astype(np.int64), c ** g - 1)
            return vals[tuple(k[:, i] for i in range(d))]

        return f
    if kind == "cosine":
        a = float(descriptor.get("amplitude", 1.0))
        freq = int(descriptor.get("frequency", 1))
        return lambda x: a * np.cos(2 * math.pi * freq * x).sum(axis=1)
    raise DomainError(f"unknown potential {descriptor!r}")


@dataclass(frozen=True)
class GibbsSpec:
    c: int
    d: int
    potential: Any
    depth: int

    def __post_init__(self):
        GridGeometry(self.c, self.d)
        if self.depth < 1:
            raise DomainError("Gibbs depth must be >= 1")

    def to_dict(self) -> dict:
        pot = self.potential if not callable(self.potential) else {"type": "callable"}
        return {"c": self.c, "d": self.d, "potential": pot, "depth": self.depth}


def birkhoff_sums(spec: GibbsSpec) -> np.ndarray:
    """S_n(phi) at the lower-left corner of every depth-n box, under T x = c x mod 1."""
    c, d, n = spec.c, spec.d, spec.depth
    f = _potential_function(spec.potential, c, d)
    size = c ** n
    idx = np.indices((size,) * d).reshape(d, -1).T.astype(np.int64)
    total = np.zeros(idx.shape[0])
    cur = idx.copy()
    for _ in range(n):
        total += f(cur / size)
        cur = (cur * c) % size
    return total.reshape((size,) * d)


def build_gibbs_finite(spec: GibbsSpec, J_max: int | None = None, budget: int = DEFAULT_ENTRY_BUDGET) -> BoxMeasure:
    c, d, n = spec.c, spec.d, spec.depth
    J_max = n if J_max is None else J_max
    geom = GridGeometry(c, d)
    geom.check_depth(max(n, J_max))
    _check_budget(c, d, max(n, J_max), budget)
    s = birkhoff_sums(spec)
    if not np.all(np.isfinite(s)):
        raise DomainError("potential is not bounded on the grid")
    finest = s - logsumexp(s)
    levels = _levels_from_depth(finest, n, J_max, c, d)
    return BoxMeasure(geom, J_max, tuple(levels), "gibbs", spec.to_dict())


# --------------------------------------------------------------------------
# box and ball masses


def box_mass(mu: BoxMeasure, b: CAdicBox) -> float:
    if b.c != mu.c or b.d != mu.d:
        raise DomainError("box and measure use different grids")
    lv = mu.level(b.j)
    return float(lv[b.k])


def _range_logsumexp(levels, J: int, lo: np.ndarray, hi: np.ndarray, c: int) -> np.ndarray:
    """log-sum of generation-J masses over inclusive index ranges, via the c-ary tree.

    At each generation at most c-1 boxes per side are gathered before moving
    to the parent generation, so the cost per range is O(c J).
    """
    lo = np.asarray(lo, np.int64).copy()
    hi = np.asarray(hi, np.int64).copy()
    acc = np.full(lo.shape, -np.inf)
    active = lo <= hi
    level = J
    while np.any(active) and level >= 0:
        lv = levels[level]
        n = lv.shape[0]
        la = -(-lo // c) * c
        rb = ((hi + 1) // c) * c
        small = active & ((la >= rb) | (level == 0))
        if np.any(small):
            for t in range(2 * c):
                idx = lo + t
                ok = small & (idx <= hi)
                if not np.any(ok):
                    break
                acc[ok] = np.logaddexp(acc[ok], lv[np.clip(idx[ok], 0, n - 1)])
        big = active & ~small
        for t in range(c - 1):
            idx = lo + t
            ok = big & (idx < la)
            if np.any(ok):
                acc[ok] = np.logaddexp(acc[ok], lv[idx[ok]])
            idx = rb + t
            ok = big & (idx <= hi)
            if np.any(ok):
                acc[ok] = np.logaddexp(acc[ok], lv[idx[ok]])
        active = big
        lo = np.where(big, la // c, lo)
        hi = np.where(big, rb // c - 1, hi)
        level -= 1
    return acc


def ball_depth(mu: BoxMeasure, r, margin: int) -> int:
    if not r > 0:
        raise DomainError("radius must be positive")
    if r < float(mu.c) ** (-mu.J_max + margin):
        raise ResolutionError(f"radius {r!r} below the resolution c^-(J_max - margin)")
    return min(mu.J_max, depth_for_radius(float(r), mu.c) + margin)


def ball_mass(mu: BoxMeasure, center, r, resolution_margin: int = 8):
    """(lower, upper) bracket of log mu(B(center, r)) for the sup-norm ball.

    Lower sums generation-J boxes inside the ball, upper the boxes meeting it,
    with J = min(J_max, ceil(log_c 1/r) + margin).
    """
    x = np.atleast_1d(np.asarray(center, float))
    if x.size != mu.d:
        raise DomainError(f"center has {x.size} coordinates, expected {mu.d}")
    lo, up = ball_mass_many(mu, x.reshape(1, -1), np.array([float(r)]), resolution_margin)
    return float(lo[0]), float(up[0])


def ball_mass_many(mu: BoxMeasure, centers, radii, resolution_margin: int = 8):
    """Vectorized ``ball_mass``: centers (N, d) or (N,), radii (N,) or scalar."""
    x = np.asarray(centers, float)
    if x.ndim == 1:
        x = x[:, None] if mu.d == 1 else x[None, :]
    r = np.broadcast_to(np.asarray(radii, float), (x.shape[0],))
    if np.any(r <= 0):
        raise DomainError("radii must be positive")
    floor_r = float(mu.c) ** (-mu.J_max + resolution_margin)
    if np.any(r < floor_r):
        raise ResolutionError("some radius is below the measure resolution")
    lower = np.full(x.shape[0], -np.inf)
    upper = np.full(x.shape[0], -np.inf)
    depths = np.array([ball_depth(mu, float(v), resolution_margin) for v in r]) if r.size < 64 else \
        np.minimum(mu.J_max, np.ceil(np.log(1.0 / r) / math.log(mu.c) - 1e-12).astype(int) + resolution_margin)
    for J in np.unique(depths):
        sel = depths == J
        if mu.d == 1:
            lo_o, hi_o = ball_ranges_many(x[sel, 0], r[sel], int(J), mu.c)
            lo_i, hi_i = ball_ranges_many(x[sel, 0], r[sel], int(J), mu.c, inner=True)
            upper[sel] = _range_logsumexp(mu.log_mass, int(J), lo_o, hi_o, mu.c)
            lower[sel] = _range_logsumexp(mu.log_mass, int(J), lo_i, hi_i, mu.c)
        else:
            lv = mu.log_mass[int(J)]
            for i in np.flatnonzero(sel):
                outs, ins = [], []
                for axis in range(mu.d):
                    a, b = ball_ranges_many(x[i:i + 1, axis], r[i:i + 1], int(J), mu.c)
                    ai, bi = ball_ranges_many(x[i:i + 1, axis], r[i:i + 1], int(J), mu.c, inner=True)
                    outs.append(slice(int(a[0]), int(b[0]) + 1))
                    ins.append(slice(int(ai[0]), int(bi[0]) + 1))
                block = lv[tuple(outs)]
                upper[i] = logsumexp(block) if block.size else -np.inf
                block = lv[tuple(ins)]
                lower[i] = logsumexp(block) if block.size else -np.inf
    return lower, upper


# --------------------------------------------------------------------------
# serialization

_MAGIC = b"UBQM\x01"


def _header(mu: BoxMeasure) -> dict:
    return {"c": mu.c, "d": mu.d, "J_max": mu.J_max, "kind": mu.kind, "spec": mu.spec, "seed": mu.seed}


def save_measure(mu: BoxMeasure, path, manifest: dict | None = None) -> None:
    """Binary file: magic, uint32 header length, JSON header, little-endian float64 levels."""
    head = _header(mu)
    if manifest is not None:
        head["manifest"] = manifest
    head = json.dumps(head, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for lv in mu.log_mass:
            fh.write(np.ascontiguousarray(lv, dtype="<f8").tobytes())


def load_measure(path) -> BoxMeasure:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob.startswith(b"{"):
        return measure_from_json(json.loads(blob))
    if not blob.startswith(_MAGIC):
        raise DomainError(f"{path}: not a measure file")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack("<I", blob[pos:pos + 4])
    pos += 4
    head = json.loads(blob[pos:pos + hlen])
    pos += hlen
    c, d, J = head["c"], head["d"], head["J_max"]
    levels = []
    for j in range(J + 1):
        n = c ** (j * d)
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        levels.append(arr.reshape((c ** j,) * d))
    return BoxMeasure(GridGeometry(c, d), J, tuple(levels), head["kind"], head["spec"], head["seed"])


def measure_to_json(mu: BoxMeasure) -> dict:
    out = _header(mu)
    out["log_mass"] = [np.where(np.isfinite(lv), lv, -1e308).ravel().tolist() for lv in mu.log_mass]
    return out


def measure_from_json(obj: dict) -> BoxMeasure:
    c, d, J = obj["c"], obj["d"], obj["J_max"]
    levels = []
    for j, vals in enumerate(obj["log_mass"]):
        arr = np.asarray(vals, float)
        arr[arr <= -1e308] = -np.inf
        levels.append(arr.reshape((c ** j,) * d))
    return BoxMeasure(GridGeometry(c, d), J, tuple(levels), obj.get("kind", "custom"),
                      obj.get("spec", {}), obj.get("seed"))


def lebesgue(c: int, d: int, J_max: int) -> BoxMeasure:
    return build_multinomial(MultinomialSpec.uniform(c, d), J_max)
