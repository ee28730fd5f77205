"""Configuration-driven scaling studies.

A run takes an :class:`ExperimentSpec` (plain JSON), sweeps the configured
delta values, and writes one CSV row per (delta, check). Rows carry a hash of
the configuration so any row can be recomputed from the spec alone.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__, kernels
from .arrangement import Arrangement
from .arrangements import (
    gen_bush,
    gen_direction_separated,
    gen_empty,
    gen_flat_concentration,
    gen_quadric,
    interval_shading,
    random_cell_shading,
)
from .axioms import linear_wolff_constant, polynomial_wolff_constant
from .errors import DomainError, SpecificationError, TubelabError
from .functionals import CHECKS, check, lp_norm, measured_lambda, multiplicity, trilinear_functional, union_volume
from .geometry import Tube, VoxelGrid

SPEC_VERSION = "1"
CSV_SCHEMA_VERSION = "1"
CSV_COLUMNS = ["config_hash", "delta", "log2_inv_delta", "check", "lhs", "rhs", "ratio", "log2_ratio", "verdict",
               "note"]


# ---------------------------------------------------------------------------
# generators

def gen_parallel(n: int, delta: float, seed: int = 0, spacing: float = 4.0, extent: float = 0.5,
                 count: int | None = None, cell_budget: int | None = None) -> Arrangement:
    """Pairwise disjoint parallel tubes on a square lattice of pitch ``spacing * delta``."""
    pitch = spacing * delta
    k = int(math.floor(extent / pitch))
    axes = [np.arange(-k, k + 1) * pitch] * (n - 1)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n - 1)
    pts = pts[np.linalg.norm(pts, axis=1) <= extent]
    if count is not None:
        pts = pts[:count]
    d = np.zeros(n)
    d[0] = 1.0
    tubes = [Tube(i, (0.0, *map(float, p)), tuple(d), delta) for i, p in enumerate(pts)]
    kw = {"cell_budget": cell_budget} if cell_budget else {}
    return Arrangement(n, delta, tubes, seed=seed, provenance={"kind": "parallel", "spacing": spacing}, **kw)


def _bush(n: int, delta: float, seed: int = 0, count: int = 24, **kw) -> Arrangement:
    return gen_bush([0.0] * n, count, delta, seed=seed, **kw)


def _flat(n: int, delta: float, seed: int = 0, ell: int = 2, **kw) -> Arrangement:
    return gen_flat_concentration(ell, delta, seed=seed, n=n, **kw)


def _quadric(n: int, delta: float, seed: int = 0, **kw) -> Arrangement:
    if n != 4:
        raise DomainError("the quadric generator lives in R^4")
    return gen_quadric(delta, seed=seed, **kw)


GENERATORS: dict[str, Callable[..., Arrangement]] = {
    "separated": gen_direction_separated,
    "quadric": _quadric,
    "flat": _flat,
    "bush": _bush,
    "parallel": gen_parallel,
    "empty": gen_empty,
}


def generate(kind: str, n: int, delta: float, seed: int = 0, params: dict | None = None,
             shading: dict | None = None) -> Arrangement:
    if kind not in GENERATORS:
        raise DomainError(f"unknown generator {kind!r}; choose from {sorted(GENERATORS)}")
    arr = GENERATORS[kind](n=n, delta=delta, seed=seed, **dict(params or {}))
    if shading:
        sk = shading.get("kind", "full")
        if sk == "interval":
            arr = interval_shading(arr, float(shading["fraction"]), seed=seed)
        elif sk == "random":
            arr = random_cell_shading(arr, float(shading["probability"]), seed=seed)
        elif sk != "full":
            raise DomainError(f"unknown shading kind {sk!r}")
    return arr


# ---------------------------------------------------------------------------
# metrics that are measured rather than compared with a catalogued bound

def _mass(arr: Arrangement) -> float:
    return arr.delta ** (arr.n - 1) * len(arr)


METRICS: dict[str, Callable[[Arrangement, dict], float]] = {
    "union_volume": lambda a, c: union_volume(a),
    "union_volume/delta": lambda a, c: union_volume(a) / a.delta,
    "union_volume/delta^2": lambda a, c: union_volume(a) / a.delta**2,
    "union_volume/mass": lambda a, c: union_volume(a) / _mass(a),
    "mu": lambda a, c: multiplicity(a, keep_set=False).mu,
    "trilinear": lambda a, c: trilinear_functional(a),
    "trilinear/scale": lambda a, c: trilinear_functional(a) / (a.delta ** (-1 / 3) * _mass(a) ** (4 / 3)),
    "lp_85_57": lambda a, c: lp_norm(a, 85 / 57),
    "tube_count": lambda a, c: float(len(a)),
}


# ---------------------------------------------------------------------------
# spec

@dataclass
class ExperimentSpec:
    """Everything needed to reproduce a run. Field order fixes the serialized form."""

    name: str = "experiment"
    generator: dict = field(default_factory=lambda: {"kind": "separated", "n": 4, "params": {}})
    deltas: list = field(default_factory=lambda: [0.125, 0.0625])
    params: dict = field(default_factory=dict)
    checks: list = field(default_factory=lambda: ["union_volume"])
    axioms: list = field(default_factory=list)
    reductions: list = field(default_factory=list)
    seed: int = 0
    outputs: dict = field(default_factory=dict)
    version: str = SPEC_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        data = json.loads(text)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise DomainError(f"unknown spec keys {sorted(unknown)}")
        spec = cls(**data)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentSpec":
        return cls.from_json(Path(path).read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def validate(self) -> None:
        kind = self.generator.get("kind")
        if kind not in GENERATORS:
            raise DomainError(f"unknown generator {kind!r}")
        n = int(self.generator.get("n", 4))
        budget = int(self.generator.get("params", {}).get("cell_budget", 2**31))
        if not self.deltas:
            raise DomainError("the delta sweep is empty")
        for d in self.deltas:
            k = math.log2(1 / d) if d > 0 else math.nan
            if not (d > 0 and math.isclose(k, round(k), abs_tol=1e-12)):
                raise DomainError(f"delta={d} is not dyadic")
            VoxelGrid(n, d / 2, budget)  # raises when the grid exceeds the cell budget
        for c in self.checks:
            if c not in CHECKS and c not in METRICS:
                raise SpecificationError(c, "check list")
        for a in self.axioms:
            if a not in ("linear", "polynomial"):
                raise DomainError(f"unknown axiom mode {a!r}")
        for r in self.reductions:
            if r not in REDUCTION_ROWS:
                raise DomainError(f"unknown reduction {r!r}")


# ---------------------------------------------------------------------------
# report

@dataclass
class ExperimentReport:
    spec: ExperimentSpec
    rows: list[dict]
    k_table: list[dict]
    meta: dict

    @property
    def hard_failure(self) -> bool:
        return any(r["verdict"] == "error" for r in self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in CSV_COLUMNS})
        return buf.getvalue()

    def to_json(self, include_runtime: bool = False) -> str:
        meta = dict(self.meta)
        if not include_runtime:
            meta.pop("runtime", None)
        return json.dumps({"spec": asdict(self.spec), "rows": self.rows, "k_table": self.k_table, "meta": meta},
                          sort_keys=True, indent=2, default=_jsonable)

    @property
    def report_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(ExperimentSpec(**d["spec"]), d["rows"], d["k_table"], d["meta"])

    def scaling_table(self) -> list[dict]:
        return [{"check": r["check"], "log2_inv_delta": r["log2_inv_delta"], "log2_ratio": r["log2_ratio"]}
                for r in self.rows if r["log2_ratio"] != ""]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"cannot serialize {type(v)}")


def _row(spec: ExperimentSpec, delta: float, name: str, lhs="", rhs="", ratio="", verdict="", note="") -> dict:
    lr = math.log2(ratio) if isinstance(ratio, float) and ratio > 0 and math.isfinite(ratio) else ""
    return {"config_hash": spec.config_hash, "delta": float(delta), "log2_inv_delta": math.log2(1 / delta),
            "check": name, "lhs": lhs, "rhs": rhs, "ratio": ratio, "log2_ratio": lr, "verdict": verdict,
            "note": note}


def _reduction_dyadic(arr, p):
    from .reductions import dyadic_refine

    r = dyadic_refine(arr)
    return r.ratio, r.meta["bound"], "pass" if r.empty or r.ratio >= r.meta["bound"] else "fail"


def _reduction_twoends(arr, p):
    from .reductions import two_ends_reduce

    r, cert = two_ends_reduce(arr, float(p.get("eps0", 0.1)))
    return cert.alpha, cert.alpha_bound, "pass" if cert.passed else "fail"


def _reduction_transversal(arr, p):
    from .reductions import robust_transversality_split

    sp = robust_transversality_split(arr, float(p.get("s", 0.1)), float(p.get("t", 0.5)))
    tot = len(sp.good) + len(sp.bad)
    return (len(sp.good) / tot if tot else 0.0), "", "measured"


def _reduction_plainy(arr, p):
    from .reductions import planiness_split

    sp = planiness_split(arr, float(p.get("lam", 1.0)), float(p.get("fraction", 0.01)))
    return (sp.mass_plainy / sp.total if sp.total else 0.0), "", sp.branch


REDUCTION_ROWS: dict[str, Callable[[Arrangement, dict], tuple]] = {
    "dyadic": _reduction_dyadic,
    "twoends": _reduction_twoends,
    "transversal": _reduction_transversal,
    "plainy": _reduction_plainy,
}


def _one_delta(spec: ExperimentSpec, delta: float) -> tuple[list[dict], dict]:
    g = spec.generator
    rows: list[dict] = []
    ktab: dict = {"delta": float(delta)}
    try:
        arr = generate(g["kind"], int(g.get("n", 4)), delta, spec.seed, g.get("params"), g.get("shading"))
    except (TubelabError, ValueError, MemoryError) as exc:
        for c in spec.checks:
            rows.append(_row(spec, delta, c, verdict="error", note=f"generator: {exc}"))
        return rows, ktab
    ktab["tubes"] = len(arr)
    params = dict(spec.params)
    need_K = any(c in CHECKS and "K" in CHECKS[c].symbols for c in spec.checks) and "K" not in params
    if "linear" in spec.axioms or need_K:
        try:
            rep = linear_wolff_constant(arr, seed=spec.seed)
            ktab["K_linear"] = rep.K_lower
            params.setdefault("K", max(rep.K_lower, 1.0))
        except (TubelabError, ValueError, MemoryError) as exc:
            ktab["K_linear"] = f"error: {exc}"
    if "polynomial" in spec.axioms:
        try:
            ktab["K_polynomial"] = polynomial_wolff_constant(arr, seed=spec.seed).K_lower
        except (TubelabError, ValueError, MemoryError) as exc:
            ktab["K_polynomial"] = f"error: {exc}"
    for name in spec.reductions:
        try:
            val, bound, verdict = REDUCTION_ROWS[name](arr, params)
            rows.append(_row(spec, delta, f"reduce:{name}", lhs=float(val), rhs=bound, ratio=float(val),
                             verdict=verdict))
        except (TubelabError, ValueError, MemoryError) as exc:
            rows.append(_row(spec, delta, f"reduce:{name}", verdict="error", note=str(exc)))
    for c in spec.checks:
        try:
            if c in METRICS:
                if len(arr) == 0:
                    rows.append(_row(spec, delta, c, verdict="vacuous-pass", note="empty arrangement"))
                    continue
                v = float(METRICS[c](arr, params))
                rows.append(_row(spec, delta, c, lhs=v, ratio=v, verdict="measured"))
            else:
                p = dict(params)
                if len(arr) and "lambda" not in p and "lambda" in CHECKS[c].symbols:
                    p["lambda"] = measured_lambda(arr)
                res = check(c, arr, p)
                rows.append(_row(spec, delta, c, lhs=float(res.lhs), rhs=float(res.rhs), ratio=float(res.ratio),
                                 verdict=res.verdict, note=res.note))
        except (TubelabError, ValueError, MemoryError, ZeroDivisionError) as exc:
            rows.append(_row(spec, delta, c, verdict="error", note=f"{type(exc).__name__}: {exc}"))
    return rows, ktab


def run_experiment(spec: ExperimentSpec) -> ExperimentReport:
    """Sweep the deltas (in parallel when ``TUBELAB_THREADS`` > 1) and assemble rows in sweep order."""
    spec.validate()
    t0 = time.perf_counter()
    results = kernels.ordered_map(lambda d: _one_delta(spec, float(d)), spec.deltas)
    rows = [r for rs, _ in results for r in rs]
    ktab = [k for _, k in results]
    meta = {"tool_version": __version__, "csv_schema": CSV_SCHEMA_VERSION, "config_hash": spec.config_hash,
            "runtime": {"seconds": time.perf_counter() - t0, "threads": kernels.thread_count(),
                        "backend": kernels.BACKEND, "python": platform.python_version()}}
    return ExperimentReport(spec, rows, ktab, meta)


# ---------------------------------------------------------------------------
# plot data

@dataclass
class SeriesFit:
    check: str
    points: list[tuple[float, float]]
    slope: float | None
    flag: str


def fit_series(points: list[tuple[float, float]]) -> tuple[float | None, str]:
    """Least-squares exponent ``d log ratio / d log delta``; needs three deltas."""
    if len(points) < 3:
        return None, "too-few-deltas"
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    slope = np.polyfit(x, y, 1)[0]
    return float(-slope), "ok"  # x is log2(1/delta)


def series(report: ExperimentReport) -> list[SeriesFit]:
    by: dict[str, list[tuple[float, float]]] = {}
    for r in report.rows:
        if r["log2_ratio"] == "":
            continue
        by.setdefault(r["check"], []).append((float(r["log2_inv_delta"]), float(r["log2_ratio"])))
    out = []
    for name in sorted(by):
        pts = sorted(by[name])
        slope, flag = fit_series(pts)
        out.append(SeriesFit(name, pts, slope, flag))
    return out


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def emit_plotdata(report: ExperimentReport, outdir: str | Path) -> list[Path]:
    """Write one two-column file per check plus ``slopes.json``."""
    if not report.rows:
        raise DomainError("report has no rows")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    fits = series(report)
    for f in fits:
        p = out / f"{_safe(f.check)}.dat"
        p.write_text("# log2_inv_delta log2_ratio\n" + "".join(f"{x!r} {y!r}\n" for x, y in f.points))
        written.append(p)
    slopes = {f.check: {"slope": f.slope, "flag": f.flag, "points": len(f.points)} for f in fits}
    sp = out / "slopes.json"
    sp.write_text(json.dumps(slopes, sort_keys=True, indent=2) + "\n")
    written.append(sp)
    return written


def write_outputs(report: ExperimentReport, outdir: str | Path) -> dict[str, Any]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json() + "\n")
    (out / "spec.json").write_text(report.spec.to_json() + "\n")
    files = emit_plotdata(report, out / "plotdata") if report.rows else []
    return {"csv": str(out / "report.csv"), "json": str(out / "report.json"), "plotdata": [str(p) for p in files]}
