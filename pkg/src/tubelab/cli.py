"""Command line entry point: ``tubelab <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .arrangement import load_arrangement
from .errors import TubelabError


def _dump(obj, path: str | None) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (set, frozenset, tuple)):
        return sorted(v) if isinstance(v, (set, frozenset)) else list(v)
    raise TypeError(f"cannot serialize {type(v)}")


def _params(pairs: list[str] | None) -> dict:
    out = {}
    for p in pairs or []:
        if "=" not in p:
            raise SystemExit(f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k] = float(v)
    return out


# ---------------------------------------------------------------------------

def cmd_generate(a) -> int:
    from .experiment import generate

    params = _params(a.param)
    for k in ("count", "ell"):
        if k in params:
            params[k] = int(params[k])
    shading = None
    if a.interval is not None:
        shading = {"kind": "interval", "fraction": a.interval}
    arr = generate(a.kind, a.n, a.delta, a.seed, params, shading)
    arr.save(a.out)
    _dump({"tubes": len(arr), "n": arr.n, "delta": arr.delta, "out": a.out}, None)
    return 0


def cmd_axioms(a) -> int:
    from . import axioms

    arr = load_arrangement(a.input)
    if a.mode == "linear":
        rep = axioms.linear_wolff_constant(arr, probes=a.probes, seed=a.seed)
    elif a.mode == "polynomial":
        rep = axioms.polynomial_wolff_constant(arr, E_max=a.emax, probes=a.probes, seed=a.seed)
    elif a.mode == "hypersurface":
        from .arrangements import quadric_polynomial

        res = axioms.hypersurface_concentration(arr, quadric_polynomial(), ([0.0] * arr.n, a.radius))
        _dump({"count": res.count, "bound": res.bound, "ratio": res.ratio}, None)
        return 0
    else:
        _dump({"essential_distinctness": axioms.essential_distinctness(arr)}, None)
        return 0
    if a.csv:
        Path(a.csv).write_text(rep.to_csv())
    _dump(rep.summary(), None)
    return 0


def cmd_functional(a) -> int:
    from . import functionals as F

    arr = load_arrangement(a.input)
    if a.name == "union_volume":
        out = {"union_volume": F.union_volume(arr)}
    elif a.name == "mu":
        m = F.multiplicity(arr, keep_set=False)
        out = {"mu": m.mu, "class": m.klass, "B_measure": m.B_measure, "max": m.max_multiplicity}
    elif a.name == "histogram":
        out = {"histogram": F.multiplicity_histogram(arr).tolist()}
    elif a.name == "trilinear":
        out = {"trilinear": F.trilinear_functional(arr)}
    else:
        out = {"lp": F.lp_norm(arr, a.p), "p": a.p}
    _dump(out, None)
    return 0


def cmd_check(a) -> int:
    from .functionals import check, checks_to_csv

    arr = load_arrangement(a.input) if a.input else None
    res = check(a.name, arr, _params(a.param))
    sys.stdout.write(checks_to_csv([res]))
    return 0


def cmd_grains(a) -> int:
    from .functionals import union_cells
    from .partition_grains import CubeSet, grains_decompose

    arr = load_arrangement(a.input)
    cubes = CubeSet.from_cells(arr.grid, union_cells(arr).cells)
    gd = grains_decompose(cubes, a.epsilon, degree=a.degree, seed=a.seed, check=False)
    _dump(gd.manifest(), a.out)
    return 0 if gd.passed else 1


def cmd_reduce(a) -> int:
    from . import reductions as R

    arr = load_arrangement(a.input)
    op = a.op
    if op == "dyadic":
        ref = R.dyadic_refine(arr)
        out = ref.manifest(arr)
    elif op == "twoends":
        ref, cert = R.two_ends_reduce(arr, a.eps0)
        out = ref.manifest(arr)
        out["certificate"] = {"r0": cert.r0, "alpha": cert.alpha, "alpha_bound": cert.alpha_bound,
                              "passed": cert.passed, "skipped": cert.skipped,
                              "records": [r.__dict__ for r in cert.records]}
    elif op == "transversal":
        sp = R.robust_transversality_split(arr, a.s, a.t)
        out = {"good": len(sp.good), "bad": len(sp.bad), "good_measure": sp.good.measure,
               "bad_measure": sp.bad.measure}
        ref = None
    elif op == "plainy":
        sp = R.planiness_split(arr, a.lam, a.fraction)
        out = {"theta0": sp.theta0, "plainy_cells": len(sp.plainy), "trilinear_cells": len(sp.trilinear),
               "mass_plainy": sp.mass_plainy, "mass_trilinear": sp.mass_trilinear, "branch": sp.branch}
        ref = None
    elif op == "hairbrush":
        if a.tube is None:
            lh = R.find_large_hairbrush(arr, a.s, eps0=a.eps0)
            out = dict(lh.__dict__)
        else:
            h = R.hairbrush(arr, a.tube)
            out = {"stem": h.stem, "hair": sorted(h.hair), "stem_shaded": h.stem_shaded}
        ref = None
    else:
        out = R.fat_scale_pipeline(arr, a.theta, eps0=a.eps0).to_dict()
        ref = None
    if a.save and ref is not None:
        ref.arrangement.save(a.save)
    _dump({"op": op, **out}, a.out)
    return 0


def cmd_run(a) -> int:
    from .experiment import ExperimentSpec, run_experiment, write_outputs

    spec = ExperimentSpec.load(a.spec)
    if a.seed is not None:
        spec.seed = a.seed
    rep = run_experiment(spec)
    files = write_outputs(rep, a.out)
    _dump({"rows": len(rep.rows), "hard_failure": rep.hard_failure, "report_hash": rep.report_hash, **files}, None)
    return 1 if rep.hard_failure else 0


def cmd_report(a) -> int:
    from .experiment import ExperimentReport, emit_plotdata, series

    rep = ExperimentReport.from_json(Path(a.input).read_text())
    if a.plotdata:
        emit_plotdata(rep, a.plotdata)
    _dump({f.check: {"slope": f.slope, "flag": f.flag, "points": len(f.points)} for f in series(rep)}, None)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    from .experiment import GENERATORS

    p = argparse.ArgumentParser(prog="tubelab", description="Voxelized experiments on delta-tube arrangements.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="build an arrangement and save it")
    g.add_argument("--kind", choices=sorted(GENERATORS), required=True)
    g.add_argument("--n", type=int, default=4)
    g.add_argument("--delta", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--param", action="append", help="generator keyword, key=value")
    g.add_argument("--interval", type=float, help="keep a random sub-interval of this relative length")
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_generate)

    x = sub.add_parser("axioms", help="estimate Wolff-type constants")
    x.add_argument("--in", dest="input", required=True)
    x.add_argument("--mode", choices=["linear", "polynomial", "hypersurface", "distinct"], default="linear")
    x.add_argument("--emax", type=int, default=4)
    x.add_argument("--probes", type=int, default=16)
    x.add_argument("--radius", type=float, default=1.0)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--csv")
    x.set_defaults(fn=cmd_axioms)

    f = sub.add_parser("functional", help="evaluate a functional")
    f.add_argument("--in", dest="input", required=True)
    f.add_argument("--name", choices=["union_volume", "mu", "histogram", "trilinear", "lp"], default="union_volume")
    f.add_argument("--p", type=float, default=85 / 57)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(fn=cmd_functional)

    c = sub.add_parser("check", help="evaluate one catalogued inequality")
    c.add_argument("--in", dest="input")
    c.add_argument("--name", required=True)
    c.add_argument("--param", action="append", help="symbol value, key=value")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_check)

    r = sub.add_parser("grains", help="grains decomposition of the union's cubes")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--epsilon", type=float, default=0.2)
    r.add_argument("--degree", type=int, default=4)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out")
    r.set_defaults(fn=cmd_grains)

    d = sub.add_parser("reduce", help="apply a structural reduction")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--op", choices=["dyadic", "twoends", "transversal", "plainy", "hairbrush", "fatscale"],
                   required=True)
    d.add_argument("--eps0", type=float, default=0.1)
    d.add_argument("--s", type=float, default=0.1)
    d.add_argument("--t", type=float, default=0.5)
    d.add_argument("--lam", type=float, default=1.0)
    d.add_argument("--fraction", type=float, default=0.01)
    d.add_argument("--tube", type=int)
    d.add_argument("--theta", type=float, default=0.25)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--save", help="write the refined arrangement here")
    d.add_argument("--out")
    d.set_defaults(fn=cmd_reduce)

    u = sub.add_parser("run", help="run an experiment spec")
    u.add_argument("--spec", required=True)
    u.add_argument("--out", required=True)
    u.add_argument("--seed", type=int, help="override the spec seed")
    u.set_defaults(fn=cmd_run)

    e = sub.add_parser("report", help="summarize a saved report and emit plot data")
    e.add_argument("--in", dest="input", required=True)
    e.add_argument("--plotdata")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(fn=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.fn(args))
    except TubelabError as exc:
        sys.stderr.write(f"tubelab: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
