"""Conditioned selection of point-scale pairs and box counts of the limsup approximants.

A pair (x_n, lambda_n) is kept when the ball B(x_n, lambda_n^rho) has mass
between lambda_n^{rho(alpha + eps_n)} and lambda_n^{rho(alpha - eps_n)}.  Ball
masses come as certified brackets, so every index ends up selected,
rejected, indeterminate (bracket straddles a threshold) or unresolved
(ball below the measure resolution).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cgrid import ball_ranges_many
from .errors import DomainError, ResourceError
from .measures import BoxMeasure, MultinomialSpec, ball_mass_many
from .spectrum import GaugeParams, dim_formula, DimFormulaInputs, eps_schedule, multinomial_tau_star, \
    theorem1_upper_bound, EMPTY
from .systems import PointScaleSystem

MARK_BUDGET = 1 << 26


@dataclass
class SelectionSpec:
    rho: float = 1.0
    alpha: float = 1.0
    eps: object = "auto"  # float, sequence (one per index), "auto", or {"M": .., "gauges": {..}}
    delta: float = 1.0
    margin: int = 8

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise DomainError("rho must lie in (0, 1]")
        if not self.alpha >= 0:
            raise DomainError("alpha must be >= 0")
        if not self.delta >= 1:
            raise DomainError("delta must be >= 1")
        if int(self.margin) != self.margin or self.margin < 0:
            raise DomainError("margin must be a non-negative integer")

    def eps_values(self, scales: np.ndarray, d: int = 1) -> np.ndarray:
        """Per-index tolerance; NaN where the automatic schedule is undefined (scale too large)."""
        lam = np.asarray(scales, float)
        e = self.eps
        if isinstance(e, str) or isinstance(e, dict):
            if isinstance(e, str) and e != "auto":
                raise DomainError(f"unknown eps mode {e!r}")
            cfg = e if isinstance(e, dict) else {}
            gauges = GaugeParams.from_dict(cfg.get("gauges"))
            M = float(cfg.get("M", 2.0))
            out = np.full(lam.shape, np.nan)
            ok = lam < gauges.r_cap
            if np.any(ok):
                out[ok] = eps_schedule(M, self.alpha, gauges, lam[ok], self.rho)
            return out
        arr = np.asarray(e, float)
        if arr.ndim == 0:
            if not arr > 0 and arr != 0:
                raise DomainError("eps must be >= 0")
            return np.full(lam.shape, float(arr))
        if arr.shape != lam.shape:
            raise DomainError("explicit eps list must have one entry per index")
        if np.any(arr < 0):
            raise DomainError("eps must be >= 0")
        return arr

    def to_dict(self) -> dict:
        eps = self.eps.tolist() if isinstance(self.eps, np.ndarray) else self.eps
        return {"rho": self.rho, "alpha": self.alpha, "eps": eps, "delta": self.delta, "margin": self.margin}


@dataclass
class Selection:
    spec: SelectionSpec
    system: PointScaleSystem = field(repr=False)
    selected: np.ndarray  # indices, increasing
    indeterminate: np.ndarray
    unresolved: np.ndarray  # ball below resolution or eps undefined
    lower: np.ndarray  # log-mass bracket per index (NaN when unresolved)
    upper: np.ndarray
    eps: np.ndarray
    c: int = 2

    def counts_by_bucket(self, c: int | None = None) -> dict:
        from .systems import bucket_index

        c = c or self.c
        j = bucket_index(self.system.scales[self.selected], c)
        vals, cnt = np.unique(j, return_counts=True)
        return {int(a): int(b) for a, b in zip(vals, cnt)}

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "system": {"family": self.system.family, "params": self.system.params, "seed": self.system.seed},
            "c": self.c,
            "selected": self.selected.tolist(),
            "indeterminate": self.indeterminate.tolist(),
            "unresolved": self.unresolved.tolist(),
            "counts_by_bucket": {str(k): v for k, v in self.counts_by_bucket().items()},
        }


def select(system: PointScaleSystem, mu: BoxMeasure, spec: SelectionSpec, indices=None) -> Selection:
    """Certified selection over ``indices`` (all pairs by default)."""
    if system.d != mu.d:
        raise DomainError("system and measure dimensions differ")
    n_all = len(system)
    idx = np.arange(n_all) if indices is None else np.asarray(indices, np.int64)
    lam = system.scales[idx]
    eps = spec.eps_values(lam, mu.d)
    r = lam ** spec.rho
    floor_r = float(mu.c) ** (-mu.J_max + spec.margin)
    ok = (r >= floor_r) & np.isfinite(eps) & (lam < 1.0)
    lo = np.full(idx.size, np.nan)
    up = np.full(idx.size, np.nan)
    pts = system.points[idx]
    # points exactly at 1 sit on the closed edge; ball masses only look at [0,1)
    if np.any(ok):
        l_, u_ = ball_mass_many(mu, pts[ok], r[ok], spec.margin)
        lo[ok] = l_
        up[ok] = u_
    ln_lam = np.log(lam)
    need_lo = spec.rho * (spec.alpha + eps) * ln_lam  # log mu(B) must be >= this
    need_hi = spec.rho * (spec.alpha - eps) * ln_lam  # and <= this
    with np.errstate(invalid="ignore"):
        sure_in = ok & (lo >= need_lo) & (up <= need_hi)
        sure_out = ok & ((up < need_lo) | (lo > need_hi))
    indet = ok & ~sure_in & ~sure_out
    return Selection(spec, system, idx[sure_in], idx[indet], idx[~ok], lo, up, eps, mu.c)


# --------------------------------------------------------------------------
# box counting


def _count_ranges_1d(lo: np.ndarray, hi: np.ndarray) -> int:
    """Size of a union of inclusive integer ranges (empty ones have hi < lo)."""
    keep = hi >= lo
    lo, hi = lo[keep], hi[keep]
    if lo.size == 0:
        return 0
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    reach = np.maximum.accumulate(hi)
    # a range starts a new block when it begins beyond everything before it
    prev = np.concatenate([[lo[0] - 1], reach[:-1]])
    start = np.maximum(lo, prev + 1)
    return int(np.sum(np.maximum(hi - start + 1, 0)))


def count_boxes(centers, radii, J: int, c: int, d: int) -> int:
    """Number of generation-J boxes meeting the union of open sup-norm balls."""
    x = np.asarray(centers, float).reshape(-1, d)
    r = np.asarray(radii, float).ravel()
    if x.shape[0] == 0:
        return 0
    if d == 1:
        lo, hi = ball_ranges_many(x[:, 0], r, J, c)
        return _count_ranges_1d(lo, hi)
    n = c ** J
    if n ** d > MARK_BUDGET:
        raise ResourceError(f"generation {J} in dimension {d} needs {n ** d} marks")
    ranges = [ball_ranges_many(x[:, a], r, J, c) for a in range(d)]
    keep = np.all([hi >= lo for lo, hi in ranges], axis=0)
    if not keep.any():
        return 0
    diff = np.zeros((n + 1,) * d, np.int32)
    for corner in range(1 << d):
        bits = [(corner >> a) & 1 for a in range(d)]
        idx = tuple(np.where(bits[a], ranges[a][1][keep] + 1, ranges[a][0][keep]) for a in range(d))
        np.add.at(diff, idx, (-1) ** sum(bits))
    for a in range(d):
        np.cumsum(diff, axis=a, out=diff)
    return int(np.count_nonzero(diff[(slice(0, n),) * d]))


def _band(scales: np.ndarray, power: float, J: int, c: int) -> tuple:
    """Index range [start, stop) of pairs with c^-(J/power + 1) < lambda <= c^-(J/power).

    Scales are non-increasing, so the band is contiguous.  It spans one
    factor c in lambda, so lattice-valued scales never leave it empty.
    """
    lp = -np.log(scales) / math.log(c)  # log_c(1/lambda), non-decreasing
    top = J / power
    start = int(np.searchsorted(lp, top - 1e-9, side="left"))
    stop = int(np.searchsorted(lp, top + 1 - 1e-9, side="left"))
    return start, stop


def tail_count(selection: Selection, J: int, n_tail: int, power: float | None = None) -> int:
    """Generation-J boxes meeting the union of B(x_n, lambda_n^power) over selected n >= n_tail
    with lambda_n > c^-(J/power + 1).

    ``power`` defaults to delta.  Pairs below that scale are left out: a
    finite system is dense enough that including them would cover every box.
    """
    sys_ = selection.system
    c = selection.c
    power = selection.spec.delta if power is None else power
    _, stop = _band(sys_.scales, power, J, c)
    sel = selection.selected
    sel = sel[(sel >= n_tail) & (sel < stop)]
    return count_boxes(sys_.points[sel], sys_.scales[sel] ** power, J, c, sys_.d)


def band_count(selection: Selection, J: int, power: float | None = None) -> int:
    """``tail_count`` with the tail started at the first pair of the scale band for generation J."""
    c = selection.c
    power = selection.spec.delta if power is None else power
    start, _ = _band(selection.system.scales, power, J, c)
    return tail_count(selection, J, start, power)


@dataclass
class DimEstimate:
    Js: list
    counts: list
    slope: float  # origin slope of log_c count on J
    free_slope: float  # ordinary least squares slope, diagnostic
    r2: float
    window: tuple
    bound: object  # upper bound or EMPTY
    gap: float | None
    tails: dict  # N_tail -> count at the top J
    coarse: dict | None = None  # rho < 1: counts through B(x_n, lambda_n^rho)
    estimate: float = 0.0  # min of the fine and coarse slopes

    def to_dict(self) -> dict:
        b = None if self.bound is EMPTY else self.bound
        return {"J": self.Js, "counts": self.counts, "slope": self.slope, "free_slope": self.free_slope,
                "r2": self.r2,
                "window": list(self.window), "bound": b, "empty": self.bound is EMPTY, "gap": self.gap,
                "tails": {str(k): v for k, v in self.tails.items()}, "coarse": self.coarse,
                "estimate": self.estimate}


def _fit(js, counts, c, d: int = 1) -> tuple:
    """(origin slope, free slope, r2 of the free fit) of log_c(count / 3^d) against J.

    A ball of the scale band has radius at most c^-J and meets at most 3^d
    generation-J boxes, so count / 3^d is the number of band balls needed;
    dividing removes a fixed log_c(3^d)/J bias from the ratio.  The origin
    slope sum(J y) / sum(J^2) is a weighted mean of the box-counting ratios
    and is the reported dimension estimate.  Zero counts are skipped.
    """
    pairs = [(j, n) for j, n in zip(js, counts) if n > 0]
    if not pairs:
        return 0.0, 0.0, 0.0
    x = np.array([p[0] for p in pairs], float)
    y = np.maximum(np.log([p[1] / 3.0 ** d for p in pairs]), 0.0) / math.log(c)
    origin = float(np.dot(x, y) / np.dot(x, x))
    if len(pairs) < 2:
        return origin, origin, 0.0
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss if ss > 0 else 1.0
    return origin, float(slope), r2


J_FLOAT_CAP = 48  # c^J index products stay exact in float64 below this (c = 2)


def default_J(system: PointScaleSystem, delta: float, c: int = 2) -> int:
    """max(8, ceil(delta log_c(1/lambda_min)) - 2), capped so box indices stay exact."""
    lam_min = float(system.scales.min())
    cap = max(8, int(J_FLOAT_CAP / math.log2(c)))
    return min(cap, max(8, math.ceil(delta * math.log(1.0 / lam_min, c)) - 2))


def tau_star_of(mu: BoxMeasure, alpha: float) -> float:
    """tau*(alpha) from the measure's closed form when it is a 1-d multinomial, else from a fit."""
    if mu.kind == "multinomial" and mu.spec and "weights" in mu.spec and mu.d == 1:
        return multinomial_tau_star(MultinomialSpec.from_rows(mu.spec["weights"]), alpha)
    from .spectrum import spectrum

    q = np.arange(-5.0, 5.0 + 1e-9, 0.1)
    hi = mu.J_max
    tab = spectrum(mu, q, (max(1, hi - 8), hi), np.array([alpha]))
    return float(tab.tau_star[0])


def limsup_boxcount(selection: Selection, mu: BoxMeasure | None = None, J: int | None = None,
                    window: int | None = None, tails=(1, 4, 16, 64), tau_star: float | None = None,
                    coarse_J: int | None = None) -> DimEstimate:
    """Box-count slope of the limsup approximants over generations [J - window, J].

    Generation J is paired with the pairs whose lambda is about c^-(J/delta),
    so the default window (6 delta generations) spans six factors of c in
    lambda.  For rho < 1 the selected points also sit inside the larger
    balls B(x_n, lambda_n^rho); counting through those gives a second upper
    estimate (fitted over a window ending at ``coarse_J``) and ``estimate``
    is the smaller slope.
    """
    spec = selection.spec
    c = selection.c
    sys_ = selection.system
    if J is None:
        J = default_J(sys_, spec.delta, c)
    if window is None:
        window = max(6, round(6 * spec.delta))
    js = list(range(max(1, J - window), J + 1))
    counts = [band_count(selection, j) for j in js]
    slope, free, r2 = _fit(js, counts, c, sys_.d)
    tails_out = {int(t): tail_count(selection, J, int(t)) for t in tails}
    if tau_star is None and mu is not None:
        tau_star = tau_star_of(mu, spec.alpha)
    bound = theorem1_upper_bound(tau_star, spec.rho, spec.delta, sys_.d) if tau_star is not None else None
    coarse = None
    estimate = slope
    if spec.rho < 1:
        if coarse_J is None:
            coarse_J = math.floor(spec.rho * math.log(1.0 / float(sys_.scales.min()), c)) - 1
        cw = max(4, round(6 * spec.rho))
        cj = list(range(max(1, coarse_J - cw), coarse_J + 1))
        cc = [band_count(selection, j, power=spec.rho) for j in cj]
        cs, cfree, cr2 = _fit(cj, cc, c, sys_.d)
        coarse = {"J": cj, "counts": cc, "slope": cs, "free_slope": cfree, "r2": cr2}
        estimate = min(slope, cs)
    gap = None
    if bound is not None and bound is not EMPTY:
        gap = estimate - bound
    return DimEstimate(js, counts, slope, free, r2, (js[0], js[-1]), bound, gap, tails_out, coarse, estimate)


@dataclass
class SaturationRow:
    delta: float
    slope: float
    theory: float
    plateau: bool
    estimate: DimEstimate

    def to_dict(self) -> dict:
        return {"delta": self.delta, "slope": self.slope, "theory": self.theory, "plateau": self.plateau}


def saturation_scan(system: PointScaleSystem, mu: BoxMeasure, spec: SelectionSpec, deltas, J: int | None = None,
                    tau_star: float | None = None, coarse_J: int | None = None, window: int | None = None) -> list:
    """Measured slope against D(tau*(alpha), rho, delta) for each delta.

    Selection does not depend on delta, so it runs once.
    """
    sel = select(system, mu, spec)
    if tau_star is None:
        tau_star = tau_star_of(mu, spec.alpha)
    rows = []
    for dl in deltas:
        sub = Selection(SelectionSpec(spec.rho, spec.alpha, spec.eps, float(dl), spec.margin), system,
                        sel.selected, sel.indeterminate, sel.unresolved, sel.lower, sel.upper, sel.eps, sel.c)
        est = limsup_boxcount(sub, J=J, window=window, tau_star=tau_star, coarse_J=coarse_J)
        beta = min(max(tau_star, 1e-300), system.d)
        th = dim_formula(DimFormulaInputs(beta, spec.rho, float(dl), system.d))
        rows.append(SaturationRow(float(dl), est.estimate, th.D, th.saturated,
                                  est))
    return rows
