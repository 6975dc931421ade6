"""Weak-redundancy diagnostics for point-scale systems.

For each scale class T_j the balls {B(x_n, lambda_n) : n in T_j} must split
into N_j families of pairwise disjoint balls, and the system is weakly
redundant when log N_j = o(j).  Balls are treated as closed, so two balls
that touch are counted as overlapping (the conservative choice).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ResolutionError, ResourceError
from .systems import PointScaleSystem, bucket, convergents_from_terms, gen_nalpha, parse_irrational

SAMPLE_POINT_CAP = 1 << 22


# --------------------------------------------------------------------------
# per-scale counts


def max_overlap_1d(centers, radii) -> int:
    """Largest number of closed intervals [x - r, x + r] sharing a point (endpoint sweep).

    Interval graphs are perfect, so this is also the chromatic number of the
    overlap graph: the minimal number of disjoint subfamilies.
    """
    x = np.asarray(centers, float).ravel()
    r = np.asarray(radii, float).ravel()
    if x.size == 0:
        return 0
    pos = np.concatenate([x - r, x + r])
    kind = np.concatenate([np.zeros(x.size, np.int8), np.ones(x.size, np.int8)])  # starts first at ties
    order = np.lexsort((kind, pos))
    step = np.where(kind[order] == 0, 1, -1)
    return int(np.cumsum(step).max())


def sample_multiplicity(centers, radii, resolution: int | None = None) -> int:
    """Max number of closed sup-norm balls containing a common sample point.

    Samples the grid {i / G} together with the ball centres; a lower bound
    for the chromatic number of the overlap graph.
    """
    x = np.atleast_2d(np.asarray(centers, float))
    r = np.asarray(radii, float).ravel()
    n, d = x.shape
    if n == 0:
        return 0
    if resolution is None:
        resolution = int(min(4.0 / r.min(), SAMPLE_POINT_CAP ** (1.0 / d)))
    G = max(int(resolution), 1)
    lo = np.clip(np.ceil((x - r[:, None]) * G), 0, G + 1).astype(np.int64)
    hi = np.clip(np.floor((x + r[:, None]) * G), -1, G).astype(np.int64)
    ok = np.all(hi >= lo, axis=1)
    best = 0
    if ok.any():
        diff = np.zeros((G + 2,) * d, np.int32)
        lo_, hi_ = lo[ok], hi[ok] + 1
        for corner in range(1 << d):
            bits = [(corner >> i) & 1 for i in range(d)]
            idx = tuple(np.where(bits[i], hi_[:, i], lo_[:, i]) for i in range(d))
            np.add.at(diff, idx, (-1) ** sum(bits))
        for axis in range(d):
            np.cumsum(diff, axis=axis, out=diff)
        best = int(diff.max())
    # centres as extra sample points
    for start in range(0, n, 2048):
        blk = x[start:start + 2048]
        inside = np.all(np.abs(blk[:, None, :] - x[None, :, :]) <= r[None, :, None], axis=2)
        best = max(best, int(inside.sum(axis=1).max()))
    return best


def greedy_coloring(centers, radii) -> int:
    """First-fit colouring in lexicographic order of centres; an upper bound on N_j."""
    x = np.atleast_2d(np.asarray(centers, float))
    r = np.asarray(radii, float).ravel()
    n, d = x.shape
    if n == 0:
        return 0
    order = np.lexsort(x.T[::-1])
    cell = 2.0 * r.max()
    keys = np.floor(x / cell).astype(np.int64)
    grid: dict = {}
    colors = np.full(n, -1, np.int64)
    offsets = np.array(np.meshgrid(*([[-1, 0, 1]] * d), indexing="ij")).reshape(d, -1).T
    for i in order:
        used = set()
        for off in offsets:
            for m in grid.get(tuple(keys[i] + off), ()):
                if np.all(np.abs(x[i] - x[m]) <= r[i] + r[m]):
                    used.add(colors[m])
        c = 0
        while c in used:
            c += 1
        colors[i] = c
        grid.setdefault(tuple(keys[i]), []).append(i)
    return int(colors.max()) + 1


# --------------------------------------------------------------------------
# report


@dataclass
class RedundancyReport:
    js: list
    sizes: list  # #T_j
    multiplicity: list  # m_j (lower bound)
    n_lower: list  # N_j bracket; equal for d = 1
    n_upper: list
    slope: float  # regression slope of log2 N_j against j
    max_ratio: float  # max_j log2 N_j / j
    local_slopes: list  # differences of log2 N_j between consecutive nonempty scales
    peak_slope: float  # steepest 6-scale window
    threshold: float = 0.05
    exact: bool = True
    notes: list = field(default_factory=list)

    @property
    def weakly_redundant(self) -> bool:
        """Finite-range estimate: the fitted growth rate of N_j is below ``threshold``."""
        return self.slope < self.threshold

    def rows(self) -> list:
        return list(zip(self.js, self.sizes, self.multiplicity, self.n_lower, self.n_upper))

    def to_dict(self) -> dict:
        return {
            "j": self.js, "size": self.sizes, "multiplicity": self.multiplicity,
            "N_lower": self.n_lower, "N_upper": self.n_upper, "slope": self.slope,
            "max_ratio": self.max_ratio, "local_slopes": self.local_slopes,
            "peak_slope": self.peak_slope,
            "threshold": self.threshold, "weakly_redundant_estimate": self.weakly_redundant,
            "exact": self.exact, "notes": self.notes,
        }


def growth_slope(js, counts) -> tuple:
    """(regression slope of log2 N against j, max log2 N / j, consecutive local slopes), N > 0 only."""
    pairs = [(j, n) for j, n in zip(js, counts) if n > 0]
    if len(pairs) < 2:
        return 0.0, 0.0, []
    j = np.array([p[0] for p in pairs], float)
    y = np.log2([p[1] for p in pairs])
    slope = float(np.polyfit(j, y, 1)[0])
    ratio = float(max((yy / jj for jj, yy in zip(j, y) if jj > 0), default=0.0))
    local = [float((y[i + 1] - y[i]) / (j[i + 1] - j[i])) for i in range(len(j) - 1)]
    return max(slope, 0.0), ratio, local


def peak_window_slope(js, counts, width: int = 6) -> float:
    """Largest regression slope of log2 N_j over ``width`` consecutive nonempty scales."""
    pairs = [(j, n) for j, n in zip(js, counts) if n > 0]
    best = 0.0
    for i in range(len(pairs) - width + 1):
        win = pairs[i:i + width]
        best = max(best, float(np.polyfit([p[0] for p in win], np.log2([p[1] for p in win]), 1)[0]))
    return best


def analyze(system: PointScaleSystem, j_range=None, threshold: float = 0.05) -> RedundancyReport:
    """Per-scale disjoint-subfamily counts N_j and their growth rate.

    d = 1 gives the exact N_j (maximum overlap depth).  d > 1 gives the
    bracket [sample multiplicity, greedy first-fit].
    """
    buckets = bucket(system)
    levels = buckets.levels()
    if j_range is None:
        j_range = (min(levels), max(levels)) if levels else (0, 0)
    j0, j1 = j_range
    js, sizes, mult, lower, upper = [], [], [], [], []
    exact = system.d == 1
    for j in range(j0, j1 + 1):
        idx = buckets[j]
        x = system.points[idx]
        r = system.scales[idx]
        js.append(j)
        sizes.append(int(idx.size))
        if exact:
            n = max_overlap_1d(x[:, 0], r)
            mult.append(n)
            lower.append(n)
            upper.append(n)
        else:
            m = sample_multiplicity(x, r)
            g = greedy_coloring(x, r)
            mult.append(m)
            lower.append(m)
            upper.append(g)
    slope, ratio, local = growth_slope(js, upper)
    notes = [] if exact else ["d > 1: slope fitted on the greedy upper bound"]
    peak = peak_window_slope(js, upper)
    return RedundancyReport(js, sizes, mult, lower, upper, slope, ratio, local, peak, threshold, exact, notes)


# --------------------------------------------------------------------------
# irrationality measure


DIGIT_BUDGET_BITS = 1 << 20


@dataclass
class IrrationalityEstimate:
    terms: list
    p: list
    q: list
    xi: list  # xi_k = 1 + ln q_{k+1} / ln q_k, for k with q_k > 1
    k_index: list
    estimate: float  # max of xi_k over the second half of the computed range
    truncated: bool  # stopped by the size budget before k_max

    def to_dict(self) -> dict:
        return {"k": self.k_index, "xi": self.xi, "estimate": self.estimate, "truncated": self.truncated,
                "q_bits": [int(v).bit_length() for v in self.q]}


def _log_int(n: int) -> float:
    b = n.bit_length()
    if b < 1000:
        return math.log(n)
    shift = b - 64
    return math.log(n >> shift) + shift * math.log(2)


def irrationality_measure(alpha, k_max: int = 64) -> IrrationalityEstimate:
    """Continued-fraction estimate of the irrationality exponent of ``alpha``.

    Uses |alpha - p_k/q_k| ~ 1/(q_k q_{k+1}), so xi_k = 1 + ln q_{k+1}/ln q_k.
    Convergent growth is capped at about a million bits, and a decimal
    literal only determines a prefix of its expansion; if either limit is
    hit first, fewer than ``k_max`` exponents are returned and ``truncated``
    is set.
    """
    irr = parse_irrational(alpha)
    terms = []
    truncated = False
    for k in range(k_max + 2):
        try:
            t = irr.terms(k + 1)
        except (ResourceError, ResolutionError):  # size budget, or a literal out of digits
            truncated = True
            break
        if len(t) <= k:
            break
        terms = t
        _, qs = convergents_from_terms(terms)
        if qs[-1].bit_length() > DIGIT_BUDGET_BITS:
            truncated = k < k_max + 1
            break
    ps, qs = convergents_from_terms(terms)
    xi, ks = [], []
    for k in range(len(qs) - 1):
        if qs[k] > 1:
            xi.append(1.0 + _log_int(qs[k + 1]) / _log_int(qs[k]))
            ks.append(k)
    tail = xi[len(xi) // 2:] if xi else []
    est = max(tail) if tail else float("nan")
    return IrrationalityEstimate(terms, ps, qs, xi, ks, est, truncated)


@dataclass
class NalphaCrosscheck:
    report: RedundancyReport
    irrationality: IrrationalityEstimate
    agree: bool

    def to_dict(self) -> dict:
        return {"redundancy": self.report.to_dict(), "irrationality": self.irrationality.to_dict(),
                "agree": self.agree}


def nalpha_redundancy_crosscheck(alpha, n_max: int, j_range=None, k_max: int = 64,
                                 growth_tol: float = 0.2, xi_tol: float = 0.05) -> NalphaCrosscheck:
    """Run the {n alpha} redundancy scan and the irrationality estimate side by side.

    They agree when both point the same way: no stretch of N_j grows
    faster than ``growth_tol`` over a 6-scale window and xi is within ``xi_tol`` of 2, or both fail.
    A consistency check only.
    """
    irr = parse_irrational(alpha)
    est = irrationality_measure(irr, k_max)
    system = gen_nalpha(irr, n_max)
    if j_range is None:
        j_range = (4, int(math.floor(math.log2(n_max))) - 1)
    rep = analyze(system, j_range)
    flat = rep.peak_slope < growth_tol
    near_two = est.estimate <= 2.0 + xi_tol
    return NalphaCrosscheck(rep, est, flat == near_two)


__all__ = [
    "max_overlap_1d", "sample_multiplicity", "greedy_coloring", "RedundancyReport", "analyze",
    "growth_slope", "peak_window_slope", "IrrationalityEstimate", "irrationality_measure", "NalphaCrosscheck",
    "nalpha_redundancy_crosscheck",
]
