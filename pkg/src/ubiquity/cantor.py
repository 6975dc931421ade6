"""Generalized Cantor construction of a measure on a limsup set.

Starting from the unit interval, every current box L is refined by picking
b-adic witness pairs (x, lambda) inside L whose neighbourhoods pass finite
mass audits, keeping a disjoint subfamily of their closed balls, and
placing one maximal b-adic box inside each shrunken ball B(x, lambda^d_p).
Masses are handed down in proportion to the analyzing measure m of the
enclosing balls.  The relative witness depth of each L is increased until
every child satisfies the mass bound

    m_delta(I) <= |I|^{theta_p - 2 phi(|I|)}   (minus chi(|I|) when rho < 1)

with theta_p = beta / d_p for rho = 1 and (1 - rho + rho beta) / d_p for rho < 1.

All boxes are stored with exact integer indices, so trees can be much
deeper than any stored measure grid.  Only d = 1 is supported, and the
analyzing measure m must be a multinomial, which is exactly self-similar:
its renormalized restriction to any b-adic box equals m again.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp
from scipy.stats import kendalltau

from .errors import ConstructionError, DomainError, ResourceError
from .measures import BoxMeasure, MultinomialSpec, multinomial_exact_mass, multinomial_level
from .rng import STREAM_AUDIT, generator
from .spectrum import DimFormulaInputs, GaugeParams, dim_formula
from .systems import PointScaleSystem

NODE_BUDGET = 400_000
LEVEL_CACHE_DEPTH = 22
FLOAT_TOL = 1e-12


# --------------------------------------------------------------------------
# greedy disjoint selection


@dataclass
class DisjointSelection:
    kept: np.ndarray  # indices into the input, in selection order
    captured: float  # summed mass of the kept balls
    total: float  # mass of the union if supplied, else the summed input mass
    K: int  # (2c + 1)^d

    @property
    def meets_bound(self) -> bool:
        return self.captured >= self.total / self.K * (1 - 1e-12)


def greedy_disjoint(centers, radii, masses, c: int = 2, union_mass: float | None = None) -> DisjointSelection:
    """Max-mass-first selection of pairwise disjoint closed sup-norm balls.

    A ball is discarded as soon as it meets a ball already kept.  Ties in
    mass go to the lower input index.  With radii within a factor c of each
    other, every discard lies in the (2c+1)-dilate of the kept ball that
    blocked it, which is where K = (2c+1)^d comes from.
    """
    x = np.atleast_2d(np.asarray(centers, float))
    if x.size == 0:
        return DisjointSelection(np.zeros(0, np.int64), 0.0, 0.0 if union_mass is None else union_mass, (2 * c + 1))
    r = np.asarray(radii, float).ravel()
    w = np.asarray(masses, float).ravel()
    n, d = x.shape
    if x.shape[0] == 1 and r.size > 1:
        x = x.T
        n, d = x.shape
    order = np.lexsort((np.arange(n), -w))
    kept: list = []
    for i in order:
        if kept:
            k = np.asarray(kept)
            if np.any(np.all(np.abs(x[k] - x[i]) <= (r[k] + r[i])[:, None], axis=1)):
                continue
        kept.append(int(i))
    kept_arr = np.asarray(kept, np.int64)
    total = float(w.sum()) if union_mass is None else float(union_mass)
    return DisjointSelection(kept_arr, float(w[kept_arr].sum()), total, (2 * c + 1) ** d)


# --------------------------------------------------------------------------
# configuration


def _as_multinomial(obj, name: str) -> MultinomialSpec:
    if isinstance(obj, MultinomialSpec):
        return obj
    if isinstance(obj, BoxMeasure):
        if obj.kind != "multinomial" or "weights" not in obj.spec:
            raise DomainError(f"{name} must be a multinomial measure: the tree is deeper than any stored grid")
        return MultinomialSpec.from_rows(obj.spec["weights"])
    if isinstance(obj, dict):
        if "weights" in obj:
            return MultinomialSpec.from_rows(obj["weights"])
        if obj.get("kind") == "lebesgue":
            return MultinomialSpec.uniform(int(obj.get("c", 2)))
    if isinstance(obj, str) and obj.startswith("lebesgue"):
        c = int(obj.split(":")[1]) if ":" in obj else 2
        return MultinomialSpec.uniform(c)
    if isinstance(obj, (list, tuple)):
        return MultinomialSpec.from_rows(obj)
    raise DomainError(f"cannot read {name} as a multinomial measure: {obj!r}")


@dataclass
class CantorConfig:
    """Inputs for ``build`` / ``build_rho``.

    ``delta`` is either the target exponent or a non-decreasing schedule
    d_1..d_N whose last entry is the target.  ``mu`` defaults to ``m``;
    ``alpha`` and ``beta`` default to the entropy dimensions of mu and m.
    The witness system is the b-adic grid with b equal to the base of m.
    """

    m: MultinomialSpec
    mu: MultinomialSpec | None = None
    alpha: float | None = None
    beta: float | None = None
    delta: float | list = 2.0
    rho: float = 1.0
    gauges: GaugeParams = field(default_factory=GaugeParams)
    generations: int = 3
    t_min: int = 3
    j_cap: int = 14  # largest relative witness depth tried per box
    M: float = 2.0
    margin: int = 4
    min_children: int = 2
    exact: bool = False
    node_budget: int = NODE_BUDGET
    system: str = "badic"

    def __post_init__(self):
        self.m = _as_multinomial(self.m, "m")
        self.mu = self.m if self.mu is None else _as_multinomial(self.mu, "mu")
        if isinstance(self.system, PointScaleSystem):
            fam = self.system.family
            if fam != "badic":
                raise DomainError(f"the construction needs b-adic witnesses, got a {fam} system")
            if int(self.system.params.get("b", self.m.c)) != self.m.c:
                raise DomainError("the b-adic system and the analyzing measure must share the base")
            self.system = "badic"
        if self.system != "badic":
            raise DomainError("only the b-adic system is supported by the construction")
        if self.m.d != 1 or self.mu.d != 1:
            raise DomainError("the construction supports d = 1")
        if self.mu.c != self.m.c:
            raise DomainError("mu and m must share the base c")
        if self.alpha is None:
            self.alpha = self.mu.entropy()
        if self.beta is None:
            self.beta = self.m.entropy()
        if not (0 < self.beta <= 1):
            raise DomainError("beta must lie in (0, d]")
        if not (0 < self.rho <= 1):
            raise DomainError("rho must lie in (0, 1]")
        if self.generations < 1:
            raise DomainError("need at least one generation")
        sched = self.schedule
        if any(v < 1 for v in sched):
            raise DomainError("delta schedule entries must be >= 1")
        if any(b < a for a, b in zip(sched, sched[1:])):
            raise DomainError("delta schedule must be non-decreasing")
        if self.M < 1:
            raise DomainError("M must be >= 1")
        if self.t_min < 1 or self.j_cap < self.t_min:
            raise DomainError("need 1 <= t_min <= j_cap")
        if self.exact and (self.m.c > 3 or self.generations > 5):
            raise DomainError("exact masses are offered for c <= 3 and at most 5 generations")
        self.gauges = GaugeParams.from_dict(self.gauges)

    @property
    def c(self) -> int:
        return self.m.c

    @property
    def target(self) -> float:
        return self.schedule[-1]

    @property
    def schedule(self) -> list:
        if isinstance(self.delta, (list, tuple)):
            s = [float(v) for v in self.delta]
            if len(s) != self.generations:
                raise DomainError("delta schedule length must equal the number of generations")
            return s
        return [float(self.delta)] * self.generations

    def theta(self, p: int) -> float:
        """Exponent in the mass bound at generation p (1-based)."""
        dp = self.schedule[p - 1]
        return (1 - self.rho + self.rho * self.beta) / dp

    def to_dict(self) -> dict:
        return {
            "m": self.m.to_dict(), "mu": self.mu.to_dict(), "alpha": self.alpha, "beta": self.beta,
            "delta": self.delta, "rho": self.rho, "gauges": self.gauges.to_dict(),
            "generations": self.generations, "t_min": self.t_min, "j_cap": self.j_cap, "M": self.M,
            "margin": self.margin, "min_children": self.min_children, "exact": self.exact, "system": self.system,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "CantorConfig":
        kw = dict(obj)
        if "m" not in kw:
            raise DomainError("config needs the analyzing measure 'm'")
        kw["m"] = _as_multinomial(kw["m"], "m")
        if kw.get("mu") is not None:
            kw["mu"] = _as_multinomial(kw["mu"], "mu")
        kw["gauges"] = GaugeParams.from_dict(kw.get("gauges"))
        known = set(cls.__dataclass_fields__)
        extra = set(kw) - known
        if extra:
            raise DomainError(f"unknown config keys: {sorted(extra)}")
        return cls(**kw)


# --------------------------------------------------------------------------
# tree


@dataclass
class Node:
    gen: int
    g: int  # box depth: I = [k c^-g, (k+1) c^-g]
    k: int
    parent: int  # index into the previous generation, -1 for the root
    log_mass: float
    mass: Fraction | None = None
    witness: tuple | None = None  # (level j, index n): x = n c^-j, lambda = 2 c^-j
    ball: tuple | None = None  # enclosing ball as level-j index range [lo, hi) covering it
    group: int = -1  # index of the enclosing ball among its parent's kept balls
    t: int = 0  # relative witness depth used for this node's generation
    bound: float = 0.0  # log of the node mass bound
    audit: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"gen": self.gen, "g": self.g, "k": str(self.k), "parent": self.parent,
               "log_mass": self.log_mass, "t": self.t, "log_bound": self.bound, "group": self.group,
               "audit": self.audit}
        if self.mass is not None:
            out["mass"] = f"{self.mass.numerator}/{self.mass.denominator}"
        if self.witness is not None:
            out["witness"] = {"level": self.witness[0], "index": str(self.witness[1])}
        if self.ball is not None:
            out["ball"] = {"level": self.ball[0], "lo": str(self.ball[1]), "hi": str(self.ball[2])}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        mass = Fraction(d["mass"]) if "mass" in d else None
        w = d.get("witness")
        b = d.get("ball")
        return cls(d["gen"], d["g"], int(d["k"]), d["parent"], d["log_mass"], mass,
                   (w["level"], int(w["index"])) if w else None,
                   (b["level"], int(b["lo"]), int(b["hi"])) if b else None,
                   d.get("group", -1), d.get("t", 0), d.get("log_bound", 0.0), d.get("audit", {}))


@dataclass
class CantorTree:
    config: CantorConfig
    generations: list  # generations[p] = list of Node; generations[0] = [root]
    notes: list = field(default_factory=list)

    @property
    def c(self) -> int:
        return self.config.c

    @property
    def leaves(self) -> list:
        return self.generations[-1]

    def sizes(self) -> list:
        return [len(g) for g in self.generations]

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "notes": self.notes,
                "generations": [[n.to_dict() for n in gen] for gen in self.generations]}

    @classmethod
    def from_dict(cls, obj: dict) -> "CantorTree":
        cfg = CantorConfig.from_dict(obj["config"])
        gens = [[Node.from_dict(n) for n in gen] for gen in obj["generations"]]
        return cls(cfg, gens, obj.get("notes", []))

    def save(self, path, manifest: dict | None = None) -> None:
        out = self.to_dict()
        if manifest is not None:
            out["manifest"] = manifest
        with open(path, "w") as fh:
            json.dump(out, fh)

    @classmethod
    def load(cls, path) -> "CantorTree":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# helpers


@lru_cache(maxsize=None)
def _level(weights: tuple, s: int) -> np.ndarray:
    return multinomial_level(MultinomialSpec(weights), s).ravel()


def _rel_log_mass(spec: MultinomialSpec, s: int) -> np.ndarray:
    """log m of every box of depth s inside a box (self-similarity makes this L-independent)."""
    if s > LEVEL_CACHE_DEPTH:
        raise ResourceError(f"relative depth {s} exceeds the cached level limit {LEVEL_CACHE_DEPTH}")
    return _level(spec.weights, s)


def _digit_log_mass(spec: MultinomialSpec, g: int, k: int) -> float:
    """log mu(I_{g,k}) for a huge integer index k."""
    if k < 0 or k >= spec.c ** g:
        return float("nan")
    lw = spec.log_weights[0]
    c = spec.c
    if c == 2:
        ones = k.bit_count()
        return ones * lw[1] + (g - ones) * lw[0]
    counts = [0] * c
    for ch in np.base_repr(k, c).rjust(g, "0") if c <= 36 else ():
        counts[int(ch, 36)] += 1
    if c > 36:
        kk = k
        for _ in range(g):
            kk, dgt = divmod(kk, c)
            counts[dgt] += 1
    return float(sum(n * lw[t] for t, n in enumerate(counts)))


def _lt_pow(v: Fraction, base: Fraction, expo: Fraction) -> bool:
    """Exact test v < base^expo for rational base in (0,1] and rational expo > 0."""
    if v <= 0:
        return True
    p, q = expo.numerator, expo.denominator
    return v ** q < base ** p


def _rational(x: float, max_den: int = 1000) -> Fraction:
    return Fraction(x).limit_denominator(max_den)


def max_box_in_ball(center: Fraction, radius_base: Fraction, radius_expo: Fraction, c: int) -> tuple:
    """Largest closed c-adic box inside the open ball B(center, radius_base^radius_expo).

    Among boxes of maximal size the lowest one is returned, as (depth, index).
    """
    ln_r = float(radius_expo) * math.log(float(radius_base)) if radius_base > 0 else -math.inf
    g = max(0, int(math.floor(-(math.log(2) + ln_r) / math.log(c))) - 1)

    def lt_r(v):
        return _lt_pow(v, radius_base, radius_expo)

    for g in range(g, g + 64):
        h = Fraction(1, c ** g)
        i = math.floor(center / h) - int(math.ceil(math.exp(ln_r + g * math.log(c)))) - 1
        while not lt_r(center - i * h):
            i += 1
        while lt_r(center - (i - 1) * h):
            i -= 1
        i = max(i, 0)  # boxes live in [0, 1]
        if (i + 1) * h <= 1 and lt_r((i + 1) * h - center):
            return g, i
    raise ConstructionError("no c-adic box fits inside the ball", diagnostic={"center": str(center)})


# --------------------------------------------------------------------------
# audits on the candidate region


def audit_start(t: int) -> int:
    """First relative depth audited for witnesses at relative depth t.

    Stands in for the depth j(y) after which a typical point obeys the
    scaling conditions; depths right below L carry L's own (atypical) digits.
    """
    return max(1, (t + 1) // 2)


def _audit_masks(cfg: CantorConfig, L: Node, t: int) -> tuple:
    """Boolean masks (pm, dm) over level-t relative witness indices of box L.

    A candidate passes when every box in the 3-neighbourhood of its
    ancestors, at depths g_L + ceil(t/2) .. g_L + t + margin, satisfies
    M^-1 |I|^{alpha + psi} <= mu(I) <= M |I|^{alpha - psi}  (pm)
    and, inside L, m^L(I) <= M |I|_rel^{beta - phi}          (dm).
    """
    c = cfg.c
    n = c ** t
    lnc = math.log(c)
    lnM = math.log(cfg.M)
    mu_base = [_digit_log_mass(cfg.mu, L.g, L.k + off) for off in (-1, 0, 1)]
    pm = np.ones(n, bool)
    dm = np.ones(n, bool)
    kr = np.arange(n, dtype=np.int64)
    for s in range(audit_start(t), t + cfg.margin + 1):
        width = c ** s
        if s <= t:
            a = kr // c ** (t - s)
        else:
            a = kr * c ** (s - t)
        g_abs = L.g + s
        ln_size = -g_abs * lnc
        psi = cfg.gauges.psi.at_log(g_abs * lnc)
        rel_mu = _rel_log_mass(cfg.mu, s)
        rel_m = rel_mu if cfg.m is cfg.mu else _rel_log_mass(cfg.m, s)
        phi = cfg.gauges.phi.at_log(s * lnc)
        dm_cap = lnM + (cfg.beta - phi) * (-s * lnc)
        lo_cap = -lnM + (cfg.alpha + psi) * ln_size
        hi_cap = lnM + (cfg.alpha - psi) * ln_size
        for off in (-1, 0, 1):
            b = a + off
            side = np.where(b < 0, 0, np.where(b >= width, 2, 1))
            rel = np.mod(b, width)
            base = np.asarray(mu_base)[side]
            val = base + rel_mu[rel]
            defined = np.isfinite(base)
            ok = (val >= lo_cap - FLOAT_TOL) & (val <= hi_cap + FLOAT_TOL)
            pm &= ok | ~defined
            inside = side == 1
            dm &= (rel_m[rel] <= dm_cap + FLOAT_TOL) | ~inside
    return pm, dm


# --------------------------------------------------------------------------
# one refinement step


def _refine(cfg: CantorConfig, L: Node, p: int, t: int) -> tuple:
    """Children of L at relative witness depth t, plus the worst node mass bound excess."""
    c = cfg.c
    lnc = math.log(c)
    n = c ** t
    jw = L.g + t  # absolute witness level; lambda = 2 c^-jw
    h = Fraction(1, c ** jw)
    lam = 2 * h
    dp = _rational(cfg.schedule[p - 1])
    rho = _rational(cfg.rho)
    rel_m = _rel_log_mass(cfg.m, t)

    if cfg.rho >= 1:
        reach = 2  # closed ball [x - 2h, x + 2h] covers level-jw boxes n-2 .. n+1
    else:
        # closed rho-ball B(y, lambda^rho) is covered by level-jw boxes y-reach .. y+reach-1
        reach = 1
        while _lt_pow(reach * h, lam, rho):
            reach += 1
    if 2 * reach >= n:
        return [], math.inf, {"reason": "no room"}
    idx = np.arange(reach, n - reach + 1, dtype=np.int64)
    pm, dm = _audit_masks(cfg, L, t)
    ok = pm[idx] & dm[idx]
    cand = idx[ok]
    diag = {"t": t, "candidates": int(idx.size), "passed_pm": int(pm[idx].sum()), "passed_dm": int(dm[idx].sum())}
    if cand.size == 0:
        return [], math.inf, diag
    # m^L of every closed ball from a sliding window of level-t box masses
    win = np.lib.stride_tricks.sliding_window_view(rel_m, 2 * reach)
    ball_log = logsumexp(win, axis=1)  # window starting at box i covers centre i + reach
    cand_log = ball_log[cand - reach]
    union = np.zeros(n, bool)
    for off in range(-reach, reach):
        union[cand + off] = True
    union_log = float(logsumexp(rel_m[union]))
    # greedy max-mass-first on the integer grid: closed balls meet iff |n1 - n2| <= 2 reach
    order = np.lexsort((cand, -cand_log))
    blocked = np.zeros(n + 4 * reach + 2, bool)
    kept = []
    for i in order:
        x = int(cand[i])
        if blocked[x + 2 * reach]:
            continue
        kept.append(i)
        blocked[x:x + 4 * reach + 1] = True
    kept = np.asarray(sorted(kept, key=lambda i: cand[i]), np.int64)
    kept_log = cand_log[kept]
    total_log = float(logsumexp(kept_log))
    K = 2 * c + 1
    diag.update(kept=int(kept.size), capture=math.exp(total_log - union_log))
    if total_log < union_log - math.log(K) - 1e-9:
        diag["capture_below_1/K"] = True

    children = []
    base_k = L.k * n
    exact_w = None
    if cfg.exact:
        exact_w = [sum((multinomial_exact_mass(cfg.m, t, int(cand[i]) + off) for off in range(-reach, reach)),
                       Fraction(0)) for i in kept]
        exact_total = sum(exact_w)
    worst = -math.inf
    for rank, i in enumerate(kept):
        y_rel = int(cand[i])
        y = base_k + y_rel
        share = kept_log[rank] - total_log
        if cfg.rho >= 1:
            pts = [y]
        else:
            # witnesses inside the rho-ball with disjoint closed lambda-balls (spacing 5 on the grid)
            span = 0
            while _lt_pow((5 * (span + 1) + 2) * h, lam, rho):
                span += 1
            pts = [y + 5 * s for s in range(-span, span + 1)]
        ln_s = math.log(len(pts))
        for x_idx in pts:
            g, k = max_box_in_ball(Fraction(x_idx, c ** jw), lam, dp, c)
            log_mass = L.log_mass + share - ln_s
            mass = None
            if exact_w is not None:
                mass = L.mass * exact_w[rank] / exact_total / len(pts)
            ln_size = -g * lnc
            phi = cfg.gauges.phi.at_log(g * lnc)
            chi = cfg.gauges.chi.at_log(g * lnc) if cfg.rho < 1 else 0.0
            bound = (cfg.theta(p) - 2 * phi - chi) * ln_size
            worst = max(worst, log_mass - bound)
            children.append(Node(
                gen=p, g=g, k=k, parent=-1, log_mass=log_mass, mass=mass,
                witness=(jw, x_idx), ball=(jw, y - reach, y + reach), group=rank, t=t, bound=bound,
                audit={"pm_depths": [L.g + audit_start(t), jw + cfg.margin],
                       "dm_depths": [audit_start(t), t + cfg.margin],
                       "growth": "finite surrogate: audit depth stands in for n_L", "S": len(pts)},
            ))
    return children, worst, diag


def ramp_schedule(delta: float, generations: int) -> list:
    """d_p = 1 + (delta - 1) p / N: non-decreasing, ending at delta."""
    return [1 + (delta - 1) * p / generations for p in range(1, generations + 1)]


def is_degenerate(cfg: CantorConfig) -> bool:
    """delta = 1 and rho = 1: no contraction, the constructed measure is m itself."""
    return cfg.rho >= 1 and all(v == 1 for v in cfg.schedule)


def _build_identity(cfg: CantorConfig) -> CantorTree:
    """Tree of m on its own boxes: every node splits into all its descendants t_min levels down.

    Each child is its own witness box I_{g,k} with x = k c^-g, so I lies in B(x, 2 c^-g).
    """
    c, t = cfg.c, cfg.t_min
    lnc = math.log(c)
    n = c ** t
    rel = _rel_log_mass(cfg.m, t)
    rel_exact = [multinomial_exact_mass(cfg.m, t, i) for i in range(n)] if cfg.exact else None
    root = Node(gen=0, g=0, k=0, parent=-1, log_mass=0.0, mass=Fraction(1) if cfg.exact else None)
    gens = [[root]]
    total = 1
    for p in range(1, cfg.generations + 1):
        nxt = []
        for li, L in enumerate(gens[-1]):
            g = L.g + t
            phi = cfg.gauges.phi.at_log(g * lnc)
            bound = (cfg.theta(p) - 2 * phi) * (-g * lnc)
            for i in range(n):
                k = L.k * n + i
                nxt.append(Node(gen=p, g=g, k=k, parent=li, log_mass=L.log_mass + float(rel[i]),
                                mass=None if rel_exact is None else L.mass * rel_exact[i],
                                witness=(g, k), ball=(g, k, k + 1), group=0, t=t, bound=bound,
                                audit={"identity": True}))
        total += len(nxt)
        if total > cfg.node_budget:
            raise ResourceError(f"tree exceeds the node budget {cfg.node_budget} at generation {p}")
        gens.append(nxt)
    return CantorTree(cfg, gens, ["delta = 1, rho = 1: the measure is m on its own boxes (no construction)"])


def _build(cfg: CantorConfig) -> CantorTree:
    if is_degenerate(cfg):
        return _build_identity(cfg)
    root = Node(gen=0, g=0, k=0, parent=-1, log_mass=0.0, mass=Fraction(1) if cfg.exact else None)
    gens = [[root]]
    total = 1
    for p in range(1, cfg.generations + 1):
        nxt = []
        for li, L in enumerate(gens[-1]):
            last = None
            for t in range(cfg.t_min, cfg.j_cap + 1):
                kids, worst, diag = _refine(cfg, L, p, t)
                last = (t, worst, diag)
                if len(kids) >= cfg.min_children and worst <= FLOAT_TOL:
                    break
            else:
                t, worst, diag = last
                raise ConstructionError(
                    f"generation {p}, box {li}: the mass bound still fails at the search cap t={cfg.j_cap}",
                    diagnostic={"failed": "node mass bound: |I|^-2phi slack too small for the mass constant",
                                "generation": p, "box": li, "depth": L.g, "t": t,
                                "log_excess": float(worst), **diag},
                )
            for kid in kids:
                kid.parent = li
            nxt.extend(kids)
            total += len(kids)
            if total > cfg.node_budget:
                raise ResourceError(f"tree exceeds the node budget {cfg.node_budget} at generation {p}")
        gens.append(nxt)
    notes = ["the growth condition on n_L is replaced by the finite audit depth recorded on every node"]
    return CantorTree(cfg, gens, notes)


def build(cfg: CantorConfig) -> CantorTree:
    """Cantor tree for rho = 1."""
    if cfg.rho != 1:
        raise DomainError("build handles rho = 1; use build_rho")
    return _build(cfg)


def build_rho(cfg: CantorConfig) -> CantorTree:
    """Cantor tree for rho <= 1: each enclosing ball is a rho-ball split evenly among #S witnesses."""
    return _build(cfg)


def grid_count_certificate(j: int, rho: float, y: Fraction, c: int = 2) -> tuple:
    """(#{k : |k c^-j - y| < c^-rho j}, c^{j(1-rho)-1}) counted exactly; the first must dominate."""
    r = _rational(rho)
    base = Fraction(1, c ** j)
    scaled = y * c ** j  # condition |k - scaled| < c^{j(1-rho)}
    lo = math.floor(scaled)
    count = 0
    k = lo
    while _lt_pow(abs(k - scaled) * base, base, r):
        count += 1
        k -= 1
    k = lo + 1
    while _lt_pow(abs(k - scaled) * base, base, r):
        count += 1
        k += 1
    return count, c ** (j * (1 - rho) - 1)


# --------------------------------------------------------------------------
# invariants


def check_invariants(tree: CantorTree) -> list:
    """Record-by-record check of the tree invariants; returns a list of violation strings."""
    cfg = tree.config
    c = cfg.c
    bad = []
    sched = cfg.schedule
    identity = is_degenerate(cfg)  # adjacent boxes by design, no separation to check
    if any(b < a for a, b in zip(sched, sched[1:])) or any(v > cfg.target for v in sched):
        bad.append("delta schedule not monotone")
    for p in range(1, len(tree.generations)):
        prev, cur = tree.generations[p - 1], tree.generations[p]
        dp = _rational(sched[p - 1])
        # nesting and conservation
        by_parent: dict = {}
        for i, nd in enumerate(cur):
            L = prev[nd.parent]
            shift = nd.g - L.g
            if shift < 0 or (nd.k >> 0) // c ** shift != L.k:
                bad.append(f"gen {p} node {i}: not nested in its parent")
            by_parent.setdefault(nd.parent, []).append(nd)
            if nd.log_mass > nd.bound + FLOAT_TOL:
                bad.append(f"gen {p} node {i}: mass bound violated by {nd.log_mass - nd.bound:.3g}")
            jw, x_idx = nd.witness
            lam = Fraction(2, c ** jw)
            x = Fraction(x_idx, c ** jw)
            lo, hi = Fraction(nd.k, c ** nd.g), Fraction(nd.k + 1, c ** nd.g)
            if not (_lt_pow(x - lo, lam, dp) and _lt_pow(hi - x, lam, dp)):
                bad.append(f"gen {p} node {i}: box not inside B(x, lambda^d_p)")
            blev, blo, bhi = nd.ball
            if not (Fraction(blo, c ** blev) <= lo and hi <= Fraction(bhi, c ** blev)):
                bad.append(f"gen {p} node {i}: box not inside its enclosing ball")
        for pi, kids in by_parent.items():
            s = logsumexp([k.log_mass for k in kids])
            if abs(s - prev[pi].log_mass) > 1e-12 * max(1.0, abs(prev[pi].log_mass)):
                bad.append(f"gen {p} parent {pi}: children masses do not sum to the parent")
            if prev[pi].mass is not None and sum(k.mass for k in kids) != prev[pi].mass:
                bad.append(f"gen {p} parent {pi}: exact masses not conserved")
        # disjointness and separation, by sorted left endpoints
        G = max(nd.g for nd in cur) if cur else 0
        spans = sorted((nd.k * c ** (G - nd.g), (nd.k + 1) * c ** (G - nd.g), (nd.parent, nd.group), nd.ball)
                       for nd in cur)
        for a, b in zip(spans, spans[1:]):
            if b[0] < a[1]:
                bad.append(f"gen {p}: overlapping boxes")
            elif a[2] != b[2] and not identity:
                widest = max((s[3][2] - s[3][1]) * c ** (G - s[3][0]) for s in (a, b))
                if 3 * (b[0] - a[1]) < widest:
                    bad.append(f"gen {p}: boxes from distinct balls closer than max|ball|/3")
    return bad


# --------------------------------------------------------------------------
# scaling audit


@dataclass
class ScalingAudit:
    D: float
    decades: list
    max_log_ratio: list
    counts: list
    tau: float
    p_value: float
    local_exponent: float
    n_balls: int
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.p_value >= 0.05)

    def rows(self) -> list:
        return list(zip(self.decades, self.counts, self.max_log_ratio))

    def to_dict(self) -> dict:
        return {"D": self.D, "decades": self.decades, "max_log_ratio": self.max_log_ratio,
                "counts": self.counts, "kendall_tau": self.tau, "p_value": self.p_value,
                "passed": self.passed, "local_exponent": self.local_exponent,
                "n_balls": self.n_balls, "notes": self.notes}


def tree_exponent(cfg: CantorConfig) -> float:
    """D(beta, rho, delta) for the configured target."""
    return dim_formula(DimFormulaInputs(cfg.beta, cfg.rho, cfg.target, 1)).D


def audit_scaling(tree: CantorTree, gauges: GaugeParams | None = None, n_balls: int = 5000,
                  D: float | None = None, seed: int = 0) -> ScalingAudit:
    """Ratios m_delta(B) / |B|^{D - xi(|B|)} on random balls centred at leaf points.

    Centres are drawn from m_delta (leaf by mass, then uniform inside the
    leaf); radii are log-uniform between the smallest leaf and 1, and
    m_delta is spread uniformly inside each leaf.  The audit fails when
    the per-decade maxima trend upwards toward small radii (one-sided
    Kendall test at 5%).
    """
    cfg = tree.config
    gauges = cfg.gauges if gauges is None else GaugeParams.from_dict(gauges)
    if D is None:
        D = tree_exponent(cfg)
    c = cfg.c
    lnc = math.log(c)
    leaves = sorted(tree.leaves, key=lambda nd: Fraction(nd.k, c ** nd.g))
    if not leaves:
        raise ConstructionError("empty tree")
    G = max(nd.g for nd in leaves) + 8
    lo = [nd.k * c ** (G - nd.g) for nd in leaves]
    size = [c ** (G - nd.g) for nd in leaves]
    logm = np.array([nd.log_mass for nd in leaves])
    w = np.exp(logm - logm.max())
    prefix = np.concatenate([[0.0], np.cumsum(w)])
    rng = generator(seed, STREAM_AUDIT)
    pick = rng.choice(len(leaves), size=n_balls, p=w / w.sum())
    u = rng.random(n_balls)
    L_min = min(nd.g for nd in leaves) * lnc
    L_max = max(nd.g for nd in leaves) * lnc
    ln_r = -rng.uniform(0.0, L_max, n_balls)
    ln_b, ln_mass = np.empty(n_balls), np.empty(n_balls)
    for s in range(n_balls):
        i = int(pick[s])
        x = lo[i] + int(u[s] * size[i])
        e = G * lnc + ln_r[s]  # log of radius in grid units
        n_int = int(e // lnc)
        frac = math.exp(e - n_int * lnc)
        r = max(1, (c ** n_int * int(frac * (1 << 52))) >> 52)
        a, b = x - r, x + r
        i0 = bisect.bisect_right(lo, a) - 1
        i0 = max(i0, 0)
        i1 = bisect.bisect_left(lo, b)
        tot = 0.0
        if i1 - i0 > 2:
            tot += prefix[i1 - 1] - prefix[i0 + 1]
        for j in {i0, i1 - 1}:
            if 0 <= j < len(leaves):
                ov = min(b, lo[j] + size[j]) - max(a, lo[j])
                if ov > 0:
                    tot += w[j] * (ov / size[j])
        ln_mass[s] = math.log(tot) + logm.max() if tot > 0 else -math.inf
        ln_b[s] = math.log(2) + ln_r[s]
    ln_b = np.minimum(ln_b, 0.0)
    xi = gauges.xi_at_log(-ln_b, 1, cfg.rho)
    ratio = ln_mass - (D - xi) * ln_b
    dec = np.floor(-ln_b / math.log(10)).astype(int)
    decades, maxima, counts = [], [], []
    for k in sorted(set(dec.tolist())):
        sel = (dec == k) & np.isfinite(ratio)
        if sel.sum() >= 5:
            decades.append(int(k))
            maxima.append(float(ratio[sel].max()))
            counts.append(int(sel.sum()))
    if len(decades) >= 3:
        res = kendalltau(decades, maxima, alternative="greater")
        tau, pv = float(res.statistic), float(res.pvalue)
    else:
        tau, pv = float("nan"), 1.0
    fin = np.isfinite(ln_mass) & (ln_b < -1.0)
    slope = float(np.polyfit(ln_b[fin], ln_mass[fin], 1)[0]) if fin.sum() > 2 else float("nan")
    notes = ["m_delta is spread uniformly inside leaves",
             f"radius range e^-{L_max:.1f} .. 1; leaves between e^-{L_max:.1f} and e^-{L_min:.1f}"]
    return ScalingAudit(D, decades, maxima, counts, tau, pv, slope, n_balls, notes)


def node_exponents(tree: CantorTree) -> np.ndarray:
    """ln m_delta(I) / ln |I| for every non-root node."""
    c = tree.c
    return np.array([nd.log_mass / (-nd.g * math.log(c)) for gen in tree.generations[1:] for nd in gen])


__all__ = [
    "DisjointSelection", "greedy_disjoint", "ramp_schedule", "is_degenerate", "CantorConfig", "Node", "CantorTree", "build", "build_rho",
    "max_box_in_ball", "grid_count_certificate", "check_invariants", "ScalingAudit", "audit_scaling",
    "tree_exponent", "node_exponents",
]
