"""Scaling functions, Legendre transforms, gauges and dimension formulas."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .measures import BoxMeasure

R_CAP = math.exp(-math.e)


# --------------------------------------------------------------------------
# partition sums


def log_partition(mu: BoxMeasure, q, j: int) -> np.ndarray:
    """ln sum_k mu(I_{j,k})^q over boxes of positive mass, for each q."""
    lv = np.asarray(mu.level(j)).ravel()
    q = np.atleast_1d(np.asarray(q, float))
    pos = np.isfinite(lv)
    if np.any(q < 0) and not np.all(pos):
        raise DomainError("q < 0 needs every box to carry positive mass")
    lv = lv[pos]
    top, bottom = lv.max(), lv.min()
    out = np.empty(q.size)
    # one pass per q keeps the temporaries small; the shift makes the largest term exp(0)
    for i, qq in enumerate(q):
        shift = qq * (top if qq >= 0 else bottom)
        out[i] = math.log(np.exp(qq * lv - shift).sum()) + shift
    return out


def partition_exponent(mu: BoxMeasure, q, j: int):
    """tau_j(q) = -j^{-1} log_c sum_k mu(I_{j,k})^q."""
    if j < 1:
        raise DomainError("partition exponent needs j >= 1")
    out = -log_partition(mu, q, j) / (j * math.log(mu.c))
    return float(out[0]) if np.ndim(q) == 0 else out


@dataclass
class SpectrumTable:
    q_grid: np.ndarray
    js: np.ndarray
    tau_j: np.ndarray  # (len(js), len(q_grid))
    tau: np.ndarray
    intercept: np.ndarray
    r2: np.ndarray
    j_window: tuple
    concavity_violations: list = field(default_factory=list)
    alpha_grid: np.ndarray | None = None
    tau_star: np.ndarray | None = None

    def to_dict(self) -> dict:
        def clean(a):
            return None if a is None else [None if not np.isfinite(v) else float(v) for v in np.ravel(a)]

        out = {
            "q_grid": clean(self.q_grid),
            "js": [int(j) for j in self.js],
            "tau_j": [clean(row) for row in self.tau_j],
            "tau": clean(self.tau),
            "intercept": clean(self.intercept),
            "r2": clean(self.r2),
            "j_window": list(self.j_window),
            "concavity_violations": [float(q) for q in self.concavity_violations],
        }
        if self.alpha_grid is not None:
            out["alpha_grid"] = clean(self.alpha_grid)
            out["tau_star"] = clean(self.tau_star)
        return out


def tau_fit(mu: BoxMeasure, q_grid, j_window) -> SpectrumTable:
    """Least-squares slope of -log_c sum mu^q against j over ``j_window = (j_min, j_max)``."""
    j_min, j_max = int(j_window[0]), int(j_window[1])
    js = np.arange(max(j_min, 1), j_max + 1)
    if js.size < 4:
        raise DomainError(f"need at least 4 scales in the fit window, got {js.size}")
    q = np.asarray(q_grid, float)
    y = np.array([-log_partition(mu, q, int(j)) / math.log(mu.c) for j in js])  # (nj, nq)
    jc = js - js.mean()
    slope = (jc[:, None] * (y - y.mean(axis=0))).sum(axis=0) / (jc ** 2).sum()
    intercept = y.mean(axis=0) - slope * js.mean()
    resid = y - (intercept + np.outer(js, slope))
    ss_tot = ((y - y.mean(axis=0)) ** 2).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2 = np.where(ss_tot > 0, 1 - (resid ** 2).sum(axis=0) / ss_tot, 1.0)
    table = SpectrumTable(q, js, y / js[:, None], slope, intercept, r2, (j_min, j_max))
    table.concavity_violations = concavity_violations(q, slope)
    return table


def concavity_violations(q, tau, tol: float = 1e-6) -> list:
    """Grid points where the discrete second derivative is positive beyond ``tol``."""
    q = np.asarray(q, float)
    tau = np.asarray(tau, float)
    if q.size < 3:
        return []
    s = np.diff(tau) / np.diff(q)
    bad = np.flatnonzero(np.diff(s) > tol)
    return [float(q[i + 1]) for i in bad]


def legendre(table_or_q, tau_or_alpha, alpha_grid=None) -> np.ndarray:
    """tau*(alpha) = min over the q grid of (alpha q - tau(q)).

    Call as ``legendre(table, alpha_grid)`` or ``legendre(q_grid, tau, alpha_grid)``.
    Values of alpha outside the slope range attained on the grid come back as
    ``-inf``: the grid cannot say anything about them.
    """
    if isinstance(table_or_q, SpectrumTable):
        q, tau, alpha = table_or_q.q_grid, table_or_q.tau, tau_or_alpha
    else:
        q, tau, alpha = table_or_q, tau_or_alpha, alpha_grid
    q = np.asarray(q, float)
    tau = np.asarray(tau, float)
    alpha = np.atleast_1d(np.asarray(alpha, float))
    vals = (np.multiply.outer(alpha, q) - tau[None, :]).min(axis=1)
    lo, hi = slope_range(q, tau)
    vals = np.where((alpha >= lo) & (alpha <= hi), vals, -np.inf)
    if isinstance(table_or_q, SpectrumTable):
        table_or_q.alpha_grid = alpha
        table_or_q.tau_star = vals
    return vals


def slope_range(q, tau):
    """Range of alpha whose minimizer lies inside the grid, with an end-slope tolerance.

    The end slopes are estimated to second order; the tolerance at each end is
    the gap between that estimate and the end chord (at least 1e-9).
    """
    q = np.asarray(q, float)
    tau = np.asarray(tau, float)
    if q.size == 1:
        return -np.inf, np.inf
    if q.size == 2:
        s = (tau[1] - tau[0]) / (q[1] - q[0])
        return s - 1e-9, s + 1e-9
    g = np.gradient(tau, q, edge_order=2)
    first_chord = (tau[1] - tau[0]) / (q[1] - q[0])
    last_chord = (tau[-1] - tau[-2]) / (q[-1] - q[-2])
    tol_first = max(abs(g[0] - first_chord), 1e-9)
    tol_last = max(abs(g[-1] - last_chord), 1e-9)
    return g[-1] - tol_last, g[0] + tol_first


def spectrum(mu: BoxMeasure, q_grid, j_window, alpha_grid=None) -> SpectrumTable:
    table = tau_fit(mu, q_grid, j_window)
    if alpha_grid is None:
        lo, hi = slope_range(table.q_grid, table.tau)
        alpha_grid = np.linspace(lo, hi, 2 * len(table.q_grid) + 1)
    legendre(table, alpha_grid)
    return table


# --------------------------------------------------------------------------
# dimension formulas


class _EmptySet:
    """Sentinel for a limsup set that is empty (tau*(alpha) < 0)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "EMPTY"


EMPTY = _EmptySet()


@dataclass(frozen=True)
class DimFormulaInputs:
    beta: float
    rho: float
    delta: float
    d: int = 1

    def __post_init__(self):
        if not 0 < self.beta <= self.d:
            raise DomainError("beta must lie in (0, d]")
        if not 0 < self.rho <= 1:
            raise DomainError("rho must lie in (0, 1]")
        if not self.delta >= 1:
            raise DomainError("delta must be >= 1")


@dataclass(frozen=True)
class DimFormula:
    D: float
    delta_star: float
    saturated: bool


def dim_formula(inp: DimFormulaInputs) -> DimFormula:
    """D = min((d(1-rho) + rho beta)/delta, beta), delta* = (d(1-rho) + rho beta)/beta."""
    num = inp.d * (1 - inp.rho) + inp.rho * inp.beta
    D = min(num / inp.delta, inp.beta)
    star = num / inp.beta
    return DimFormula(D, star, inp.rho < 1 and inp.delta <= star)


def theorem1_upper_bound(tau_star_alpha, rho, delta, d=1):
    """Upper bound min((d(1-rho) + rho t)/delta, t) for t = tau*(alpha); EMPTY when t < 0."""
    if not 0 < rho <= 1 or not delta >= 1:
        raise DomainError("need rho in (0,1] and delta >= 1")
    t = tau_star_alpha
    if not t >= 0:  # also catches the -inf sentinel and NaN
        return EMPTY
    return min((d * (1 - rho) + rho * t) / delta, t)


# --------------------------------------------------------------------------
# gauges


@dataclass(frozen=True)
class Gauge:
    """One gauge function, evaluated through L = ln(1/r).

    ``family`` is ``"phi_C"`` (C L^-1/2 (ln ln L)^1/2), ``"psi_gamma"``
    (C L^-1/2 (ln L)^gamma), ``"phi_tilde"`` ((ln L)^-kappa) or ``"zero"``.
    Each is clamped to its value at the point where it stops being monotone,
    never evaluated above r = e^-e.
    """

    family: str = "zero"
    C: float = 1.0
    gamma: float = 1.0
    kappa: float = 1.0

    def __post_init__(self):
        if self.family not in ("zero", "phi_C", "psi_gamma", "phi_tilde"):
            raise DomainError(f"unknown gauge family {self.family!r}")

    @property
    def L_cap(self) -> float:
        base = math.e  # r_cap = e^-e
        if self.family == "phi_C":
            # f(L) = ln ln L / L decreases once ln L * ln ln L >= 1
            lo, hi = math.e, 10.0
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if math.log(mid) * math.log(math.log(mid)) < 1:
                    lo = mid
                else:
                    hi = mid
            return max(base, hi)
        if self.family == "psi_gamma":
            return max(base, math.exp(2 * self.gamma))
        return base

    def at_log(self, L):
        """Gauge value at r = e^-L."""
        L = np.maximum(np.asarray(L, float), self.L_cap)
        if self.family == "zero":
            out = np.zeros_like(L)
        elif self.family == "phi_C":
            out = self.C * np.sqrt(np.log(np.log(L)) / L)
        elif self.family == "psi_gamma":
            out = self.C * L ** -0.5 * np.log(L) ** self.gamma
        else:
            out = np.log(L) ** -self.kappa
        return float(out) if out.ndim == 0 else out

    def __call__(self, r):
        r = np.asarray(r, float)
        with np.errstate(divide="ignore"):
            return self.at_log(-np.log(r))

    def to_dict(self) -> dict:
        return {"family": self.family, "C": self.C, "gamma": self.gamma, "kappa": self.kappa}

    @classmethod
    def from_dict(cls, obj) -> "Gauge":
        if obj is None:
            return cls()
        if isinstance(obj, Gauge):
            return obj
        return cls(**{k: obj[k] for k in ("family", "C", "gamma", "kappa") if k in obj})


@dataclass(frozen=True)
class GaugeParams:
    phi: Gauge = Gauge("phi_C", C=1.0)
    psi: Gauge = Gauge("psi_gamma", C=1.0, gamma=1.0)
    chi: Gauge = Gauge("zero")
    r_cap: float = R_CAP

    def xi_at_log(self, L, d: int, rho: float = 1.0):
        """(4+d) phi + chi, with chi dropped when rho = 1."""
        chi = 0.0 if rho >= 1 else self.chi.at_log(L)
        return (4 + d) * self.phi.at_log(L) + chi

    def xi(self, r, d: int, rho: float = 1.0):
        with np.errstate(divide="ignore"):
            return self.xi_at_log(-np.log(np.asarray(r, float)), d, rho)

    def to_dict(self) -> dict:
        return {"phi": self.phi.to_dict(), "psi": self.psi.to_dict(), "chi": self.chi.to_dict()}

    @classmethod
    def from_dict(cls, obj) -> "GaugeParams":
        if obj is None:
            return cls()
        if isinstance(obj, GaugeParams):
            return obj
        kw = {k: Gauge.from_dict(obj[k]) for k in ("phi", "psi", "chi") if k in obj}
        return cls(**kw)


def eps_schedule(M, alpha, gauges: GaugeParams, lam, rho=1.0):
    """epsilon = max(eps-, eps+) solving lam^{alpha +- eps} = M^-+ (2 lam)^{alpha +- psi(2lam) +- 2 alpha chi(2lam)}."""
    if M < 1:
        raise DomainError("M must be >= 1")
    lam = np.asarray(lam, float)
    if np.any(lam >= gauges.r_cap) or np.any(lam <= 0):
        raise DomainError(f"scale must lie in (0, {gauges.r_cap:.4g}) for the gauges to apply")
    ln_lam = np.log(lam)
    ln_2lam = math.log(2) + ln_lam
    psi = gauges.psi.at_log(-ln_2lam)
    chi = 0.0 if rho >= 1 else gauges.chi.at_log(-ln_2lam)
    ln_m = math.log(M)
    eps_plus = (-ln_m + (alpha + psi + 2 * alpha * chi) * ln_2lam) / ln_lam - alpha
    eps_minus = alpha - (ln_m + (alpha - psi - 2 * alpha * chi) * ln_2lam) / ln_lam
    out = np.maximum(eps_plus, eps_minus)
    return float(out) if out.ndim == 0 else out


def multinomial_tau_star(spec, alpha):
    """Exact tau*(alpha) for a one-dimensional multinomial via its tilted measure.

    alpha must lie in the open range (min -log_c pi, max -log_c pi); the
    matching q solves tau'(q) = alpha and tau* = q alpha - tau(q).
    """
    from scipy.optimize import brentq

    lo = float(spec.tau_prime(60.0))
    hi = float(spec.tau_prime(-60.0))
    if not lo < alpha < hi:
        if alpha < lo - 1e-12 or alpha > hi + 1e-12:
            return -math.inf
        # endpoint: only the extreme digits survive, tau* = log_c(their number)
        h = -np.log(np.array([float(w) for w in spec.weights[0]])) / math.log(spec.c)
        return math.log(int(np.sum(np.abs(h - alpha) <= 1e-12)), spec.c)
    q = brentq(lambda t: float(spec.tau_prime(t)) - alpha, -60.0, 60.0, xtol=1e-14)
    return q * alpha - float(spec.tau(q))
