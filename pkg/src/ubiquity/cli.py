"""Command-line front end: ``ubiq <subcommand> ...``.

Every output embeds a run manifest (command, parameters, seed, input
digests, version).  JSON outputs also carry the wall time; CSV outputs put
the manifest in a ``#`` header without it, so reruns are byte-identical.
Outputs are written to a temporary file and renamed only after success.

Exit codes: 0 success, 2 invalid input (bad arguments, missing or
malformed files, values outside the domain), 3 resource, resolution or
construction failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConstructionError, DomainError, ResolutionError, ResourceError

EXIT_OK, EXIT_INVALID, EXIT_RESOURCE = 0, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# config and manifest


def parse_value(text: str):
    """JSON literal if it parses, else the raw string (numbers keep full precision)."""
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return text


def read_config(path) -> dict:
    """JSON object, or ``key = value`` lines with JSON values; ``#`` starts a comment."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        return json.loads(text)
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def merge_sets(cfg: dict, sets) -> dict:
    out = dict(cfg)
    for item in sets or ():
        if "=" not in item:
            raise DomainError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def digest(path) -> str:
    """SHA-256 of a file; for JSON outputs the manifest wall time is left out."""
    if str(path).endswith(".json"):
        try:
            obj = json.loads(Path(path).read_text())
        except (UnicodeDecodeError, json.JSONDecodeError):
            obj = None
        if isinstance(obj, dict) and isinstance(obj.get("manifest"), dict):
            obj["manifest"].pop("wall_time", None)
            return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, Path):
        return str(v)
    return v


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int | None
    inputs: dict  # path -> sha256
    version: str = __version__
    started: float | None = None

    def to_dict(self, with_time: bool = True) -> dict:
        out = {"command": self.command, "params": {k: _jsonable(v) for k, v in sorted(self.params.items())},
               "seed": self.seed, "inputs": self.inputs, "version": self.version}
        if with_time and self.started is not None:
            out["wall_time"] = round(time.perf_counter() - self.started, 6)
        return out


def _partial(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".partial")


def _atomic_write(path, data: str | bytes) -> None:
    tmp = _partial(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
    os.replace(tmp, path)


def write_json(path, payload: dict, manifest: RunManifest) -> None:
    body = dict(payload)
    body["manifest"] = manifest.to_dict()
    _atomic_write(path, json.dumps(body, indent=1, default=_jsonable, allow_nan=False))


def csv_text(header, rows, manifest: RunManifest) -> str:
    buf = io.StringIO()
    buf.write("# manifest: " + json.dumps(manifest.to_dict(with_time=False), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(path, header, rows, manifest: RunManifest) -> None:
    _atomic_write(path, csv_text(header, rows, manifest))


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return p


def threads_cap(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("UBIQ_THREADS")
    return max(1, int(env)) if env else 1


def _floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _clean(v):
    """NaN/inf -> None so JSON stays strict."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (float, np.floating)) and not math.isfinite(float(v)):
        return None
    return _jsonable(v)


# --------------------------------------------------------------------------
# Jarnik-Besicovitch demo


def digit_counts(p: np.ndarray, q: np.ndarray, n: np.ndarray, b: int) -> np.ndarray:
    """Counts of each base-b digit among the first n[i] digits of p[i]/q[i] (long division)."""
    counts = np.zeros((len(q), b), np.int64)
    rem = np.mod(p, q).astype(np.int64)
    for step in range(int(n.max(initial=0))):
        rem = rem * b
        dig = rem // q
        rem = rem % q
        active = step < n
        for i in range(b):
            counts[:, i] += (dig == i) & active
    return counts


@dataclass
class JBRow:
    delta: float
    measured: float  # free-intercept box-count slope
    origin_slope: float
    theoretical: float
    selected: int

    @property
    def ratio(self) -> float:
        return self.measured / self.theoretical if self.theoretical else float("nan")


def jb_theoretical(b: int, pi, delta: float) -> float:
    """sum_i -pi_i log_b pi_i / delta."""
    return sum(-p * math.log(p) / math.log(b) for p in pi) / delta


def demo_jarnik_besicovitch(b: int = 2, pi=(0.8, 0.2), deltas=(1.0, 1.5, 2.0), J: int = 18,
                            eps: float = 0.06, q_max: int = 1500) -> list:
    """Rationals p/q with Hurwitz radii whose first floor(log_b q^2) digits have frequencies within eps of pi.

    The measured column is the free-intercept slope of the limsup box
    counts at depth J: a coarse upper-estimate consistency check for the
    dimension (sum -pi_i log_b pi_i) / delta of points with digit frequencies
    pi that are delta-well approximable, not a dimension certificate.
    """
    from .selection import Selection, SelectionSpec, limsup_boxcount
    from .systems import gen_rationals

    pi = [float(v) for v in pi]
    if len(pi) != b or any(not v > 0 for v in pi) or abs(sum(pi) - 1) > 1e-12:
        raise DomainError("pi must have b positive entries summing to 1")
    if not eps > 0:
        raise DomainError("eps must be positive")
    system = gen_rationals(q_max, 1, True, True)
    p = system.extra["p"][:, 0].astype(np.int64)
    q = system.extra["q"].astype(np.int64)
    # digits read: floor(log_b q^2), computed exactly in integers
    n = np.array([_ilog(int(qq) ** 2, b) for qq in q], np.int64)
    counts = digit_counts(p, q, n, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = counts / np.maximum(n, 1)[:, None]
    ok = np.all(np.abs(freq - np.asarray(pi)) <= eps + 1e-12, axis=1) & (n > 0) & (p < q)
    idx = np.flatnonzero(ok)
    H = jb_theoretical(b, pi, 1.0)
    rows = []
    empty = np.zeros(0, np.int64)
    for dl in deltas:
        sel = Selection(SelectionSpec(1.0, H, eps, float(dl), 1), system, idx, empty, empty, None, None, None, b)
        est = limsup_boxcount(sel, J=J, tau_star=H)
        rows.append(JBRow(float(dl), est.free_slope, est.slope, jb_theoretical(b, pi, float(dl)), int(idx.size)))
    return rows


def _ilog(n: int, b: int) -> int:
    """floor(log_b n) for n >= 1, exact."""
    k, v = 0, b
    while v <= n:
        k += 1
        v *= b
    return k


# --------------------------------------------------------------------------
# subcommands


def _measure_spec(kind: str, spec: dict, depth: int, seed: int):
    from . import measures as M

    if kind == "multinomial":
        if "weights" not in spec:
            raise DomainError("multinomial spec needs 'weights'")
        return M.build_multinomial(M.MultinomialSpec.from_rows(spec["weights"]), depth)
    if kind == "cascade":
        cs = M.CascadeSpec(int(spec.get("c", 2)), int(spec.get("d", 1)), spec["generator"],
                           int(spec.get("depth", depth)), seed)
        return M.build_cascade(cs, depth)
    if kind == "cpc":
        return M.build_cpc(M.CpcSpec(float(spec["xi"]), float(spec["eps"]), seed,
                                     bool(spec.get("renormalize", False))), depth)
    if kind == "gibbs":
        gs = M.GibbsSpec(int(spec.get("c", 2)), int(spec.get("d", 1)), spec["potential"],
                         int(spec.get("depth", depth)))
        return M.build_gibbs_finite(gs, depth)
    if kind == "lebesgue":
        return M.lebesgue(int(spec.get("c", 2)), int(spec.get("d", 1)), depth)
    raise DomainError(f"unknown measure kind {kind!r}")


def cmd_measure_build(a, man: RunManifest) -> None:
    from .measures import measure_to_json, save_measure

    if a.spec is None:
        spec = {}
    elif Path(a.spec).is_file():
        man.inputs[str(a.spec)] = digest(a.spec)
        spec = read_config(a.spec)
    else:
        spec = parse_value(a.spec)
        if not isinstance(spec, dict):
            raise FileNotFoundError(f"--spec is neither a file nor an inline JSON object: {a.spec}")
    spec = merge_sets(spec, a.set)
    man.params.update(spec=spec)
    mu = _measure_spec(a.kind, spec, a.depth, a.seed)
    if a.out.endswith(".json"):
        body = measure_to_json(mu)
        body["manifest"] = man.to_dict()
        _atomic_write(a.out, json.dumps(body))
        return
    tmp = _partial(a.out)
    save_measure(mu, tmp, man.to_dict())
    os.replace(tmp, a.out)


def cmd_spectrum(a, man: RunManifest) -> None:
    from .measures import load_measure
    from .spectrum import spectrum

    man.inputs[str(a.measure)] = digest(_require(a.measure))
    mu = load_measure(a.measure)
    q = np.round(np.arange(a.q_min, a.q_max + a.q_step / 2, a.q_step), 12)
    tab = spectrum(mu, q, (a.j_min, a.j_max))
    write_json(a.out, _clean(tab.to_dict()), man)
    if a.csv:
        rows = [[float(qq)] + [float(v) for v in tab.tau_j[:, i]] + [float(tab.tau[i])]
                for i, qq in enumerate(tab.q_grid)]
        write_csv(a.csv, ["q"] + [f"tau_{int(j)}" for j in tab.js] + ["tau"], rows, man)
    if a.legendre_csv and tab.alpha_grid is not None:
        rows = [[float(x), float(y)] for x, y in zip(tab.alpha_grid, tab.tau_star)]
        write_csv(a.legendre_csv, ["alpha", "tau_star"], rows, man)


def _system_params(a) -> dict:
    params = read_config(_require(a.config)) if a.config else {}
    return merge_sets(params, a.set)


def cmd_system_gen(a, man: RunManifest) -> None:
    from .systems import regenerate, save_system

    params = _system_params(a)
    if a.config:
        man.inputs[str(a.config)] = digest(a.config)
    man.params.update(params=params)
    try:
        system = regenerate(a.family, params, a.seed)
    except KeyError as e:
        raise DomainError(f"family {a.family} needs parameter {e}") from None
    tmp = _partial(a.out)
    save_system(system, tmp, man.to_dict())
    os.replace(tmp, a.out)


def cmd_redundancy(a, man: RunManifest) -> None:
    from .redundancy import analyze
    from .systems import load_system

    man.inputs[str(a.system)] = digest(_require(a.system))
    system = load_system(a.system)
    rep = analyze(system, (a.j_min, a.j_max), a.threshold)
    write_json(a.out, _clean(rep.to_dict()), man)
    if a.csv:
        write_csv(a.csv, ["j", "size", "m_j", "N_j_lower", "N_j_upper"], rep.rows(), man)


def cmd_select(a, man: RunManifest) -> None:
    from .measures import load_measure
    from .selection import SelectionSpec, select, tau_star_of
    from .systems import load_system

    man.inputs[str(a.system)] = digest(_require(a.system))
    man.inputs[str(a.measure)] = digest(_require(a.measure))
    system = load_system(a.system)
    mu = load_measure(a.measure)
    eps = a.eps if a.eps == "auto" else parse_value(a.eps)
    spec = SelectionSpec(a.rho, a.alpha, eps, a.delta, a.margin)
    sel = select(system, mu, spec)
    out = sel.to_dict()
    out["system_file"] = str(a.system)
    out["tau_star"] = tau_star_of(mu, a.alpha)
    write_json(a.out, _clean(out), man)


def _selection_from_json(obj: dict):
    from .selection import Selection, SelectionSpec
    from .systems import regenerate, system_from_dict, load_system

    sysd = obj["system"]
    try:
        system = regenerate(sysd["family"], sysd["params"], sysd.get("seed"))
    except DomainError:
        system = load_system(obj["system_file"]) if "system_file" in obj else system_from_dict(sysd)
    s = obj["spec"]
    spec = SelectionSpec(s["rho"], s["alpha"], s["eps"], s["delta"], s["margin"])
    arr = lambda k: np.asarray(obj.get(k, []), np.int64)  # noqa: E731
    return Selection(spec, system, arr("selected"), arr("indeterminate"), arr("unresolved"),
                     None, None, None, int(obj.get("c", 2)))


def cmd_dim(a, man: RunManifest) -> None:
    from .selection import Selection, SelectionSpec, limsup_boxcount

    man.inputs[str(a.selection)] = digest(_require(a.selection))
    obj = json.loads(Path(a.selection).read_text())
    sel = _selection_from_json(obj)
    if a.delta is not None:
        s = sel.spec
        sel = Selection(SelectionSpec(s.rho, s.alpha, s.eps, a.delta, s.margin), sel.system, sel.selected,
                        sel.indeterminate, sel.unresolved, None, None, None, sel.c)
    tails = [int(t) for t in _floats(a.tails)]
    est = limsup_boxcount(sel, J=a.J, window=a.window, tails=tails, tau_star=obj.get("tau_star"))
    rows = [[j, n] for j, n in zip(est.Js, est.counts)]
    summary = {"slope": est.slope, "free_slope": est.free_slope, "estimate": est.estimate,
               "bound": est.to_dict()["bound"], "gap": est.gap}
    if a.out.endswith(".json"):
        write_json(a.out, _clean(est.to_dict()), man)
        return
    man.params.update(summary=_clean(summary))
    write_csv(a.out, ["J", "count"], rows, man)


def cmd_cantor_build(a, man: RunManifest) -> None:
    from .cantor import CantorConfig, build, build_rho

    man.inputs[str(a.config)] = digest(_require(a.config))
    cfg = CantorConfig.from_dict(merge_sets(read_config(a.config), a.set))
    tree = build(cfg) if cfg.rho >= 1 else build_rho(cfg)
    tmp = _partial(a.out)
    tree.save(tmp, man.to_dict())
    os.replace(tmp, a.out)


def cmd_cantor_audit(a, man: RunManifest) -> None:
    from .cantor import CantorTree, audit_scaling, check_invariants

    man.inputs[str(a.tree)] = digest(_require(a.tree))
    tree = CantorTree.load(a.tree)
    rep = audit_scaling(tree, n_balls=a.balls, D=a.D, seed=a.seed)
    bad = check_invariants(tree)
    man.params.update(passed=rep.passed, kendall_tau=_clean(rep.tau), p_value=rep.p_value, D=rep.D,
                      local_exponent=_clean(rep.local_exponent), invariant_violations=len(bad))
    write_csv(a.out, ["decade", "balls", "max_log_ratio"], rep.rows(), man)
    print(f"audit {'PASS' if rep.passed else 'FAIL'}: D={rep.D:.6g} tau={rep.tau:.3f} p={rep.p_value:.3g} "
          f"invariant violations={len(bad)}")


def cmd_demo_jb(a, man: RunManifest) -> None:
    rows = demo_jarnik_besicovitch(a.b, _floats(a.pi), _floats(a.deltas), a.J, a.eps, a.q_max)
    table = [[r.delta, r.measured, r.ratio, r.theoretical, r.origin_slope, r.selected] for r in rows]
    write_csv(a.out, ["delta", "measured_slope", "ratio", "theoretical", "origin_slope", "selected"], table, man)
    for r in rows:
        print(f"delta={r.delta:g} measured={r.measured:.4f} theoretical={r.theoretical:.5f}")


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="ubiq", description="Heterogeneous ubiquity toolkit.")
    top.add_argument("--version", action="version", version=__version__)
    top.add_argument("--threads", type=int, default=None, help="worker cap (also UBIQ_THREADS)")
    top.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    sub = top.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def leaf(parent, name, fn, help_):
        p = parent.add_parser(name, help=help_, description=help_)
        p.set_defaults(fn=fn, command=name)
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
        return p

    meas = sub.add_parser("measure", help="build measures").add_subparsers(dest="sub", required=True,
                                                                           parser_class=_Parser)
    p = leaf(meas, "build", cmd_measure_build, "Build a box measure and store all generations.")
    p.add_argument("--kind", required=True, choices=["multinomial", "cascade", "cpc", "gibbs", "lebesgue"])
    p.add_argument("--spec", default=None, help="JSON/key=value file or inline JSON")
    p.add_argument("--set", action="append", help="override a spec key: key=value")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--out", required=True)

    p = leaf(sub, "spectrum", cmd_spectrum, "Fit tau(q) and its Legendre transform.")
    p.add_argument("--measure", required=True)
    p.add_argument("--q-min", type=float, default=-5.0)
    p.add_argument("--q-max", type=float, default=5.0)
    p.add_argument("--q-step", type=float, default=0.1)
    p.add_argument("--j-min", type=int, default=6)
    p.add_argument("--j-max", type=int, default=14)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="also write (q, tau_j, tau) as CSV")
    p.add_argument("--legendre-csv", default=None, help="also write (alpha, tau*) as CSV")

    sysp = sub.add_parser("system", help="point-scale systems").add_subparsers(dest="sub", required=True,
                                                                               parser_class=_Parser)
    p = leaf(sysp, "gen", cmd_system_gen, "Generate a point-scale system.")
    p.add_argument("--family", required=True, choices=["badic", "rationals", "nalpha", "poisson", "uniform",
                                                       "stacked"])
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", help="family parameter key=value (JSON values)")
    p.add_argument("--out", required=True)

    p = leaf(sub, "redundancy", cmd_redundancy, "Per-scale disjoint-family counts N_j.")
    p.add_argument("--system", required=True)
    p.add_argument("--j-min", type=int, default=4)
    p.add_argument("--j-max", type=int, default=20)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)

    p = leaf(sub, "select", cmd_select, "Certified selection of pairs by local mass.")
    p.add_argument("--system", required=True)
    p.add_argument("--measure", required=True)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--eps", default="auto")
    p.add_argument("--margin", type=int, default=8)
    p.add_argument("--out", required=True)

    p = leaf(sub, "dim", cmd_dim, "Box-count slope of the limsup set of a selection.")
    p.add_argument("--selection", required=True)
    p.add_argument("--J", type=int, default=None)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--delta", type=float, default=None, help="override the selection's delta")
    p.add_argument("--tails", default="1,4,16,64")
    p.add_argument("--out", required=True)

    can = sub.add_parser("cantor", help="Cantor construction").add_subparsers(dest="sub", required=True,
                                                                             parser_class=_Parser)
    p = leaf(can, "build", cmd_cantor_build, "Build a Cantor tree from a config file.")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append")
    p.add_argument("--out", required=True)
    p = leaf(can, "audit", cmd_cantor_audit, "Scaling audit of a Cantor tree.")
    p.add_argument("--tree", required=True)
    p.add_argument("--balls", type=int, default=5000)
    p.add_argument("--D", type=float, default=None, help="exponent to audit against (default D(beta,rho,delta))")
    p.add_argument("--out", required=True)

    demo = sub.add_parser("demo", help="end-to-end demonstrations").add_subparsers(dest="sub", required=True,
                                                                                  parser_class=_Parser)
    p = leaf(demo, "jb", cmd_demo_jb, "Jarnik-Besicovitch digit-frequency experiment.")
    p.add_argument("--b", type=int, default=2)
    p.add_argument("--pi", default="0.8,0.2")
    p.add_argument("--deltas", default="1,1.5,2")
    p.add_argument("--J", type=int, default=18)
    p.add_argument("--eps", type=float, default=0.06)
    p.add_argument("--q-max", type=int, default=1500)
    p.add_argument("--out", required=True)
    return top


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except UsageError as e:
        print(f"ubiq: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    params = {k: v for k, v in vars(a).items() if k not in ("fn", "threads", "cmd", "sub", "command", "seed")}
    name = " ".join(x for x in (a.cmd, getattr(a, "sub", None)) if x)
    man = RunManifest(name, params, a.seed, {}, started=time.perf_counter())
    man.params["threads"] = threads_cap(a.threads)
    try:
        a.fn(a, man)
    except (ResourceError, ResolutionError, MemoryError) as e:
        _discard(a)
        print(f"ubiq: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except ConstructionError as e:
        _discard(a)
        print(f"ubiq: construction failed: {e}; diagnostic: {json.dumps(_clean(e.diagnostic))}", file=sys.stderr)
        return EXIT_RESOURCE
    except (DomainError, OSError, json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
        _discard(a)
        print(f"ubiq: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def _discard(a) -> None:
    for name in ("out", "csv", "legendre_csv"):
        path = getattr(a, name, None)
        if path and _partial(path).exists():
            _partial(path).unlink()


if __name__ == "__main__":
    sys.exit(main())
