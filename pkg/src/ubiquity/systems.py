"""Point-scale systems {(x_n, lambda_n)} and their dyadic scale buckets T_j."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import rng
from .errors import DomainError, ResolutionError, ResourceError

DEFAULT_PAIR_BUDGET = 20_000_000


@dataclass(eq=False)
class PointScaleSystem:
    points: np.ndarray  # (N, d)
    scales: np.ndarray  # (N,), non-increasing
    family: str
    params: dict
    seed: int | None = None
    extra: dict = field(default_factory=dict)  # exact side data (integer indices, numerators, ...)

    def __post_init__(self):
        self.points = np.asarray(self.points, float)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.scales = np.asarray(self.scales, float)
        if self.points.shape[0] != self.scales.shape[0]:
            raise DomainError("points and scales differ in length")
        if self.scales.size and np.any(np.diff(self.scales) > 0):
            raise DomainError("scales must be non-increasing")
        if np.any(self.scales <= 0):
            raise DomainError("scales must be positive")
        if np.any((self.points < 0) | (self.points > 1)):
            raise DomainError("points must lie in [0,1]^d")

    def __len__(self) -> int:
        return self.scales.size

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": self.params,
            "seed": self.seed,
            "pairs": [[row.tolist(), float(lam)] for row, lam in zip(self.points, self.scales)],
        }


# --------------------------------------------------------------------------
# buckets


def bucket_index(scales, c: int = 2) -> np.ndarray:
    """j with c^-(j+1) < lambda <= c^-j, exact at the boundaries."""
    lam = np.asarray(scales, float)
    if c == 2:
        m, e = np.frexp(lam)  # lam = m 2^e, m in [0.5, 1)
        return np.where(m == 0.5, 1 - e, -e).astype(np.int64)
    j = np.floor(-np.log(lam) / math.log(c)).astype(np.int64)
    # repair rounding at exact powers
    j = np.where(lam > float(c) ** -j.astype(float), j - 1, j)
    j = np.where(lam <= float(c) ** -(j + 1).astype(float), j + 1, j)
    return j


@dataclass
class ScaleBuckets:
    c: int
    buckets: dict  # j -> int64 index array

    def __getitem__(self, j):
        return self.buckets.get(int(j), np.zeros(0, np.int64))

    def levels(self) -> list:
        return sorted(self.buckets)

    def sizes(self) -> dict:
        return {j: int(v.size) for j, v in sorted(self.buckets.items())}


def bucket(system: PointScaleSystem, c: int = 2) -> ScaleBuckets:
    """T_j = {n : c^-(j+1) < lambda_n <= c^-j} (c=2 by default)."""
    j = bucket_index(system.scales, c)
    order = np.argsort(j, kind="stable")
    js, starts = np.unique(j[order], return_index=True)
    ends = list(starts[1:]) + [order.size]
    return ScaleBuckets(c, {int(a): order[s:e] for a, s, e in zip(js, starts, ends)})


# --------------------------------------------------------------------------
# b-adic and rational families


def gen_badic(b: int, d: int = 1, j_max: int = 10, budget: int = DEFAULT_PAIR_BUDGET) -> PointScaleSystem:
    """All pairs (k b^-j, 2 b^-j), j = 1..j_max, sorted by decreasing radius."""
    if b < 2 or d < 1 or j_max < 1:
        raise DomainError("need b >= 2, d >= 1, j_max >= 1")
    total = sum(b ** (j * d) for j in range(1, j_max + 1))
    if total > budget:
        raise ResourceError(f"{total} b-adic pairs exceed the budget {budget}")
    pts, lams, levels, idx = [], [], [], []
    for j in range(1, j_max + 1):
        n = b ** j
        k = np.indices((n,) * d).reshape(d, -1).T.astype(np.int64)
        pts.append(k / n)
        lams.append(np.full(k.shape[0], 2.0 / n))
        levels.append(np.full(k.shape[0], j, np.int64))
        idx.append(k)
    return PointScaleSystem(np.concatenate(pts), np.concatenate(lams), "badic",
                            {"b": b, "d": d, "j_max": j_max},
                            extra={"level": np.concatenate(levels), "index": np.concatenate(idx)})


def gen_rationals(q_max: int, d: int = 1, irreducible_only: bool = True, hurwitz: bool = False,
                  budget: int = DEFAULT_PAIR_BUDGET) -> PointScaleSystem:
    """Pairs (p/q, 2 q^-(1+1/d)) with p in {0..q}^d; ``hurwitz`` uses 2/(sqrt5 q^2) (d=1).

    With ``irreducible_only`` a pair is kept when at least one p_i/q is in lowest terms.
    """
    if q_max < 1:
        raise DomainError("q_max must be >= 1")
    if hurwitz and d != 1:
        raise DomainError("the Hurwitz radius is defined for d = 1 only")
    total = sum((q + 1) ** d for q in range(1, q_max + 1))
    if total > budget:
        raise ResourceError(f"{total} rational pairs exceed the budget {budget}")
    ps, qs = [], []
    for q in range(1, q_max + 1):
        p = np.indices((q + 1,) * d).reshape(d, -1).T.astype(np.int64)
        if irreducible_only:
            keep = (np.gcd(p, q) == 1).any(axis=1)
            p = p[keep]
        ps.append(p)
        qs.append(np.full(p.shape[0], q, np.int64))
    p = np.concatenate(ps)
    q = np.concatenate(qs)
    if hurwitz:
        lam = 2.0 / (math.sqrt(5.0) * q.astype(float) ** 2)
    else:
        lam = 2.0 * q.astype(float) ** -(1.0 + 1.0 / d)
    return PointScaleSystem(p / q[:, None], lam, "rationals",
                            {"q_max": q_max, "d": d, "irreducible_only": irreducible_only, "hurwitz": hurwitz},
                            extra={"p": p, "q": q})


# --------------------------------------------------------------------------
# irrational numbers given exactly


def _cf_of_fraction(x: Fraction) -> list:
    out = []
    p, q = x.numerator, x.denominator
    while q:
        a, r = divmod(p, q)
        out.append(a)
        p, q = q, r
    return out


class Irrational:
    """An irrational number known through its continued fraction.

    ``terms(k)`` returns the first k partial quotients exactly and
    ``fixed_point(bits)`` returns floor(alpha 2^bits).  Build one with
    :func:`parse_irrational`.
    """

    def __init__(self, name: str, next_term: Callable[[list, list], int] | None = None,
                 fixed: Callable[[int], int] | None = None, prefix: list | None = None):
        self.name = name
        self._next = next_term  # (terms so far, denominators so far) -> next partial quotient
        self._fixed = fixed
        self._terms = list(prefix or [])

    def terms(self, k: int) -> list:
        if self._next is not None:
            while len(self._terms) < k:
                _, qs = convergents_from_terms(self._terms)
                self._terms.append(int(self._next(self._terms, qs)))
            return self._terms[:k]
        bits = 256
        while True:
            a = self._fixed(bits)
            lo = _cf_of_fraction(Fraction(a, 1 << bits))
            hi = _cf_of_fraction(Fraction(a + 1, 1 << bits))
            common = []
            for s, t in zip(lo, hi):
                if s != t:
                    break
                common.append(s)
            # the last common term may still be truncated
            if len(common) - 1 >= k:
                return common[:k]
            bits *= 2
            if bits > 1 << 20:
                raise DomainError(f"{self.name}: could not resolve {k} partial quotients")

    def fixed_point(self, bits: int) -> int:
        if self._fixed is not None:
            return self._fixed(bits)
        # bracket alpha between consecutive convergents until their floors agree
        k = 8
        while True:
            ps, qs = convergents_from_terms(self.terms(k))
            a = (ps[-1] << bits) // qs[-1]
            b = (ps[-2] << bits) // qs[-2]
            if a == b and qs[-1] * qs[-2] > 1 << (bits + 2):
                return a
            k *= 2

    def __float__(self):
        return self.fixed_point(64) / 2.0**64


def convergents_from_terms(terms) -> tuple:
    ps, qs = [], []
    p_prev, p = 1, terms[0] if terms else 0
    q_prev, q = 0, 1
    if not terms:
        return [], []
    ps.append(p)
    qs.append(q)
    for a in terms[1:]:
        p_prev, p = p, a * p + p_prev
        q_prev, q = q, a * q + q_prev
        ps.append(p)
        qs.append(q)
    return ps, qs


def _quadratic(a: int, n: int, b: int, name: str) -> Irrational:
    r = math.isqrt(n)
    if r * r == n:
        raise DomainError(f"{name}: sqrt({n}) is rational")
    if b == 0:
        raise DomainError("zero denominator")
    if b < 0:
        a, b = -a, -b
        return _quadratic_signed(a, n, b, name, sign=-1)
    return _quadratic_signed(a, n, b, name, sign=1)


def _quadratic_signed(a, n, b, name, sign):
    def fixed(bits):
        s = math.isqrt(n << (2 * bits))
        if sign > 0:
            return ((a << bits) + s) // b
        # (a - sqrt n)/b: floor((a 2^B - sqrt(n) 2^B)/b) with sqrt rounded up
        s_up = s if s * s == n << (2 * bits) else s + 1
        return ((a << bits) - s_up) // b

    return Irrational(name, fixed=fixed)


LIOUVILLE_BIT_CAP = 1 << 20


def _liouville_rule(K: int | None):
    def nxt(terms, qs):
        k = len(terms)  # producing a_k
        if k == 0:
            return 0
        if K is None or k <= K:
            if qs[-1].bit_length() * (k - 1) > LIOUVILLE_BIT_CAP:
                raise ResourceError(f"partial quotient a_{k} would exceed {LIOUVILLE_BIT_CAP} bits")
            return qs[-1] ** (k - 1)
        return 1

    return nxt


def parse_irrational(desc) -> Irrational:
    """Build an :class:`Irrational` from a descriptor.

    Accepted: ``"golden"``, ``"sqrt2"``, ``"sqrt:n"``, ``{"quadratic": [a, n, b]}``
    for (a + sqrt n)/b, ``{"cf": [...], "period": [...]}`` (eventually periodic),
    ``"liouville"`` (a_{k+1} = q_k^k for every k; ``"liouville:K"`` switches to
    ones after K terms), and
    ``{"literal": "0.4142135623..."}``.  Rationals (finite continued fractions,
    ``Fraction``, literals whose expansion terminates, plain floats) raise
    :class:`DomainError`.
    """
    if isinstance(desc, Irrational):
        return desc
    if isinstance(desc, (Fraction, int)):
        raise DomainError(f"{desc} is rational")
    if isinstance(desc, float):
        raise DomainError("a float is a dyadic rational; pass an exact descriptor or a literal string")
    if isinstance(desc, str):
        s = desc.strip().lower()
        if s in ("golden", "phi", "golden_ratio"):
            return _quadratic(1, 5, 2, "golden")
        if s == "sqrt2":
            return _quadratic(0, 2, 1, "sqrt2")
        if s.startswith("sqrt:"):
            return _quadratic(0, int(s[5:]), 1, s)
        if s.startswith("liouville"):
            K = int(s.split(":")[1]) if ":" in s else None
            return Irrational(s, next_term=_liouville_rule(K))
        return parse_irrational({"literal": desc})
    if "quadratic" in desc:
        a, n, b = (int(v) for v in desc["quadratic"])
        return _quadratic(a, n, b, f"({a}+sqrt{n})/{b}")
    if "liouville" in desc:
        K = desc["liouville"]
        K = None if K in (None, True, "inf") else int(K)
        return Irrational("liouville" if K is None else f"liouville:{K}", next_term=_liouville_rule(K))
    if "cf" in desc:
        head = [int(v) for v in desc["cf"]]
        period = [int(v) for v in desc.get("period", [])]
        if not period:
            raise DomainError("a finite continued fraction is rational")
        if any(v <= 0 for v in head[1:] + period):
            raise DomainError("partial quotients after the first must be positive")

        def nxt(terms, qs):
            k = len(terms)
            if k < len(head):
                return head[k]
            return period[(k - len(head)) % len(period)]

        return Irrational("cf", next_term=nxt)
    if "literal" in desc:
        text = str(desc["literal"]).strip()
        value = Fraction(text)
        digits = len(text.split(".")[1]) if "." in text else 0
        half = Fraction(1, 2 * 10 ** digits)
        lo = _cf_of_fraction(value - half)
        hi = _cf_of_fraction(value + half)
        exact = _cf_of_fraction(value)
        common = 0
        for s, t in zip(lo, hi):
            if s != t:
                break
            common += 1
        # a literal whose exact expansion ends inside the determined prefix reads as a rational
        if len(exact) <= common + 1:
            raise DomainError(f"literal {text} is a rational with a short continued fraction")
        stable = exact[: max(common - 1, 1)]

        def fixed(bits):
            if bits > 3.3 * digits - 4:
                raise DomainError(f"literal {text[:12]}... carries only {digits} digits")
            return (value.numerator << bits) // value.denominator

        out = Irrational("literal", fixed=fixed, prefix=None)
        out._stable_terms = stable
        out.terms = lambda k, _s=stable, _t=text: _s[:k] if k <= len(_s) else _short(_t, k, len(_s))
        return out
    raise DomainError(f"unrecognised irrational descriptor {desc!r}")


def _short(text, k, have):
    raise ResolutionError(f"literal {text[:12]}... determines only {have} partial quotients, {k} requested")


# --------------------------------------------------------------------------
# {n alpha}


FRAC_BITS = 128


def gen_nalpha(alpha, n_max: int, budget: int = DEFAULT_PAIR_BUDGET) -> PointScaleSystem:
    """Pairs ({n alpha}, 1/n), n = 1..n_max, with {n alpha} from 128-bit fixed point."""
    if n_max < 1:
        raise DomainError("n_max must be >= 1")
    if n_max > budget:
        raise ResourceError(f"{n_max} pairs exceed the budget {budget}")
    irr = parse_irrational(alpha)
    A = irr.fixed_point(FRAC_BITS) & ((1 << FRAC_BITS) - 1)
    mask = (1 << FRAC_BITS) - 1
    hi = np.empty(n_max, np.uint64)
    lo = np.empty(n_max, np.uint64)
    acc = 0
    for n in range(n_max):
        acc = (acc + A) & mask
        hi[n] = acc >> 64
        lo[n] = acc & 0xFFFFFFFFFFFFFFFF
    x = hi.astype(np.float64) / 2.0**64 + lo.astype(np.float64) / 2.0**128
    x = np.minimum(x, np.nextafter(1.0, 0.0))
    lam = 1.0 / np.arange(1, n_max + 1, dtype=float)
    return PointScaleSystem(x, lam, "nalpha", {"alpha": _desc_json(alpha), "n_max": n_max},
                            extra={"frac_hi": hi, "frac_lo": lo})


def _desc_json(alpha):
    if isinstance(alpha, Irrational):
        return alpha.name
    return alpha


# --------------------------------------------------------------------------
# random families


def gen_poisson(gamma: float, lam_min: float, seed: int = 0, budget: int = DEFAULT_PAIR_BUDGET) -> PointScaleSystem:
    """Poisson cloud on [0,1] x [lam_min, 1] with intensity ds gamma dlam / lam^2."""
    if not gamma > 0 or not 0 < lam_min < 1:
        raise DomainError("need gamma > 0 and lam_min in (0, 1)")
    mean = gamma * (1.0 / lam_min - 1.0)
    if mean > budget:
        raise ResourceError(f"expected {mean:.3g} points exceed the budget {budget}")
    count = int(rng.generator(seed, rng.STREAM_POISSON).poisson(mean))
    u = rng.uniforms(seed, rng.substream(rng.STREAM_POISSON, 1), 2 * count).reshape(count, 2)
    s = u[:, 0]
    inv = 1.0 / lam_min
    lam = 1.0 / (1.0 + u[:, 1] * (inv - 1.0))
    order = np.argsort(-lam, kind="stable")
    return PointScaleSystem(s[order], lam[order], "poisson", {"gamma": gamma, "lam_min": lam_min}, seed)


def gen_uniform(lam_rule, n_max: int, d: int = 1, seed: int = 0,
                budget: int = DEFAULT_PAIR_BUDGET) -> PointScaleSystem:
    """i.i.d. uniform points paired with ``{"harmonic": gamma}`` (gamma/n) or an explicit list."""
    if n_max < 1:
        raise DomainError("n_max must be >= 1")
    if n_max * d > budget:
        raise ResourceError("uniform family exceeds the budget")
    if isinstance(lam_rule, dict) and "harmonic" in lam_rule:
        gamma = float(lam_rule["harmonic"])
        if not gamma > 0:
            raise DomainError("gamma must be positive")
        lam = gamma / np.arange(1, n_max + 1, dtype=float)
        rule = {"harmonic": gamma}
    else:
        lam = np.asarray(lam_rule, float)[:n_max]
        if lam.size < n_max:
            raise DomainError("explicit radius list shorter than n_max")
        if np.any(np.diff(lam) > 0):
            raise DomainError("radius list must be non-increasing")
        rule = {"list": lam.tolist()}
    x = rng.uniforms(seed, rng.STREAM_UNIFORM, n_max * d).reshape(n_max, d)
    return PointScaleSystem(x, lam, "uniform", {"lam_rule": rule, "n_max": n_max, "d": d}, seed)


def stacked(j_max: int, point: float = 0.5) -> PointScaleSystem:
    """Negative control: 2^j balls of radius 2^-j all centred at one point, j = 1..j_max."""
    lam = np.concatenate([np.full(2 ** j, 2.0 ** -j) for j in range(1, j_max + 1)])
    return PointScaleSystem(np.full(lam.size, point), lam, "stacked", {"j_max": j_max, "point": point})


# --------------------------------------------------------------------------
# JSON


GENERATORS = {
    "badic": lambda p, seed: gen_badic(p["b"], p.get("d", 1), p["j_max"]),
    "rationals": lambda p, seed: gen_rationals(p["q_max"], p.get("d", 1), p.get("irreducible_only", True),
                                               p.get("hurwitz", False)),
    "nalpha": lambda p, seed: gen_nalpha(p["alpha"], p["n_max"]),
    "poisson": lambda p, seed: gen_poisson(p["gamma"], p["lam_min"], seed or 0),
    "uniform": lambda p, seed: gen_uniform(p["lam_rule"].get("list", p["lam_rule"]), p["n_max"], p.get("d", 1),
                                           seed or 0),
    "stacked": lambda p, seed: stacked(p["j_max"], p.get("point", 0.5)),
}


def regenerate(family: str, params: dict, seed=None) -> PointScaleSystem:
    if family not in GENERATORS:
        raise DomainError(f"unknown family {family!r}")
    return GENERATORS[family](params, seed)


def system_from_dict(obj: dict) -> PointScaleSystem:
    family = obj.get("family", "custom")
    if family in GENERATORS:
        sys_ = regenerate(family, obj["params"], obj.get("seed"))
        if "pairs" in obj and len(obj["pairs"]) != len(sys_):
            raise DomainError("stored pairs disagree with the regenerated family")
        return sys_
    pairs = obj["pairs"]
    pts = np.array([p[0] for p in pairs], float)
    lam = np.array([p[1] for p in pairs], float)
    return PointScaleSystem(pts, lam, family, obj.get("params", {}), obj.get("seed"))


def save_system(system: PointScaleSystem, path, manifest: dict | None = None) -> None:
    obj = system.to_dict()
    if manifest is not None:
        obj["manifest"] = manifest
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_system(path) -> PointScaleSystem:
    with open(path) as fh:
        return system_from_dict(json.load(fh))
