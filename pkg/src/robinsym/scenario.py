"""Scenario configs: parsing, running and report output."""
from __future__ import annotations

import json
import math
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compare import (
    ALL_CHECKS,
    ComparisonReport,
    CounterexampleSpec,
    run_comparison,
    run_counterexample,
    run_radial_scenario,
)
from .fem import (
    DIRICHLET,
    BoundaryCoefficient,
    SourceSpec,
    boundary_trace_min,
    l2_error,
    solve_robin_problem,
    write_field_csv,
)
from .mesh import WHOLE_BOUNDARY, ShapeSpec, refine_uniform, triangulate, write_mesh
from .rearrange import check_f_condition, decreasing_rearrangement, lp_norm, radial_source_profile

FEM_KINDS = ("rectangle", "disk", "polygon")
ANALYTIC_KINDS = ("ball", "counterexample")

_TOP_KEYS = {"name", "geometry", "markers", "beta", "source", "N", "levels", "checks", "tol"}
_GEOMETRY_KEYS = {
    "rectangle": {"kind", "width", "height", "h"},
    "disk": {"kind", "radius", "segments", "h", "center"},
    "polygon": {"kind", "vertices", "h"},
    "ball": {"kind", "measure", "radius"},
    "counterexample": {"kind", "n", "r"},
}
_SOURCE_KEYS = {
    "constant": {"kind", "value", "amplitude"},
    "radial_power": {"kind", "center", "exponent", "amplitude"},
    "gaussian": {"kind", "center", "width", "amplitude"},
    "disk_indicator": {"kind", "center", "radius", "amplitude"},
}
_TOL_KEYS = {"cg", "fubini", "t_levels"}
DEFAULT_TOL = {"cg": 1e-10, "fubini": 0.02, "t_levels": 256}


class ScenarioError(ValueError):
    """Invalid scenario text; the message names the offending field."""


@dataclass
class Scenario:
    name: str
    kind: str
    geometry: ShapeSpec | CounterexampleSpec | float  # float: ball measure
    beta: BoundaryCoefficient | None
    source: SourceSpec | None
    N: int = 2
    levels: int = 3
    checks: tuple[str, ...] = ALL_CHECKS
    tol: dict = field(default_factory=lambda: dict(DEFAULT_TOL))

    @property
    def is_fem(self) -> bool:
        return self.kind in FEM_KINDS

    def informational_checks(self) -> list[str]:
        if self.source is not None and not self.source.is_constant and "pointwise" in self.checks:
            return ["pointwise"]
        return []


def _reject_unknown(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ScenarioError(f"{where}: expected an object")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ScenarioError(f"{where}: unknown key(s) {extra}")


def _number(obj, key, where, default=None, positive=True):
    if key not in obj:
        if default is None:
            raise ScenarioError(f"{where}.{key}: required")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioError(f"{where}.{key}: expected a number")
    if positive and not val > 0:
        raise ScenarioError(f"{where}.{key}: must be positive")
    return float(val)


def _point(obj, key, where):
    val = obj.get(key, (0.0, 0.0))
    if not (isinstance(val, (list, tuple)) and len(val) == 2 and all(isinstance(c, (int, float)) for c in val)):
        raise ScenarioError(f"{where}.{key}: expected [x, y]")
    return (float(val[0]), float(val[1]))


def _parse_geometry(g, markers):
    _reject_unknown(g, set().union(*_GEOMETRY_KEYS.values()), "geometry")
    kind = g.get("kind")
    if kind not in _GEOMETRY_KEYS:
        raise ScenarioError(f"geometry.kind: expected one of {sorted(_GEOMETRY_KEYS)}, got {kind!r}")
    _reject_unknown(g, _GEOMETRY_KEYS[kind], f"geometry[{kind}]")
    try:
        if kind == "rectangle":
            return ShapeSpec.rectangle(_number(g, "width", "geometry"), _number(g, "height", "geometry"),
                                       _number(g, "h", "geometry"), markers)
        if kind == "disk":
            segs = g.get("segments", 64)
            if not isinstance(segs, int) or isinstance(segs, bool):
                raise ScenarioError("geometry.segments: expected an integer")
            return ShapeSpec.disk(_number(g, "radius", "geometry", 1.0), segs, _number(g, "h", "geometry"),
                                  _point(g, "center", "geometry"), markers)
        if kind == "polygon":
            verts = g.get("vertices")
            if not isinstance(verts, list) or len(verts) < 3:
                raise ScenarioError("geometry.vertices: expected a list of at least 3 points")
            return ShapeSpec.polygon(verts, _number(g, "h", "geometry"), markers)
        if kind == "ball":
            if "radius" in g:
                return math.pi * _number(g, "radius", "geometry") ** 2  # rescaled below for N != 2
            return _number(g, "measure", "geometry", 1.0)
        n = g.get("n", 3)
        if not isinstance(n, int):
            raise ScenarioError("geometry.n: expected an integer")
        return CounterexampleSpec(n, _number(g, "r", "geometry"))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"geometry: {exc}") from exc


def _parse_source(src):
    if src is None:
        return SourceSpec.constant(1.0)
    _reject_unknown(src, set().union(*_SOURCE_KEYS.values()), "source")
    kind = src.get("kind", "constant")
    if kind not in _SOURCE_KEYS:
        raise ScenarioError(f"source.kind: expected one of {sorted(_SOURCE_KEYS)}, got {kind!r}")
    _reject_unknown(src, _SOURCE_KEYS[kind], f"source[{kind}]")
    amp = _number(src, "amplitude", "source", _number(src, "value", "source", 1.0, False), False)
    if amp < 0:
        raise ScenarioError("source.amplitude: must be nonnegative")
    kw = {"amplitude": amp}
    if kind != "constant":
        kw["center"] = _point(src, "center", "source")
    if kind == "radial_power":
        kw["exponent"] = _number(src, "exponent", "source", 0.0, False)
        if kw["exponent"] <= -2:
            raise ScenarioError("source.exponent: must exceed -2 for an integrable source")
    if kind == "gaussian":
        kw["width"] = _number(src, "width", "source")
    if kind == "disk_indicator":
        kw["radius"] = _number(src, "radius", "source")
    return SourceSpec(kind, **kw)


def _parse_beta(raw, shape):
    if raw is None:
        raise ScenarioError("beta: required")
    if not isinstance(raw, dict) or not raw:
        raise ScenarioError("beta: expected a non-empty object")
    ids = shape.marker_ids() if isinstance(shape, ShapeSpec) else {"boundary": WHOLE_BOUNDARY}
    rules = {}
    for key, val in raw.items():
        if key in ("default", "*", str(WHOLE_BOUNDARY)):
            marker = WHOLE_BOUNDARY
        elif key in ids:
            marker = ids[key]
        else:
            try:
                marker = int(key)
            except ValueError:
                raise ScenarioError(f"beta.{key}: not a marker id or boundary piece name") from None
            if isinstance(shape, ShapeSpec) and marker not in ids.values():
                raise ScenarioError(f"beta.{key}: marker absent from the geometry")
        if val == "dirichlet":
            rules[marker] = DIRICHLET
        elif isinstance(val, (int, float)) and not isinstance(val, bool):
            if not val > 0 or not math.isfinite(val):
                raise ScenarioError(f"beta.{key}: {val!r} violates 0 < m <= beta <= M")
            rules[marker] = float(val)
        else:
            raise ScenarioError(f"beta.{key}: expected a positive number or \"dirichlet\"")
    try:
        return BoundaryCoefficient(rules)
    except ValueError as exc:
        raise ScenarioError(f"beta: {exc}") from exc


def parse_scenario(text: str) -> Scenario:
    """Validate a JSON scenario and fill defaults."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    _reject_unknown(raw, _TOP_KEYS, "scenario")
    if "geometry" not in raw:
        raise ScenarioError("geometry: required")
    markers = raw.get("markers", {})
    if not isinstance(markers, dict) or not all(isinstance(v, int) for v in markers.values()):
        raise ScenarioError("markers: expected an object of piece name -> integer id")
    geometry = _parse_geometry(raw["geometry"], markers)
    kind = raw["geometry"]["kind"]
    N = raw.get("N", 3 if kind == "counterexample" else 2)
    if N not in (2, 3):
        raise ScenarioError("N: expected 2 or 3")
    if kind in FEM_KINDS and N != 2:
        raise ScenarioError("N: finite element scenarios are planar (N = 2)")
    if kind == "counterexample":
        N = geometry.n
    if kind == "ball" and "radius" in raw["geometry"] and N == 3:
        geometry = 4 / 3 * math.pi * raw["geometry"]["radius"] ** 3
    levels = raw.get("levels", 3)
    if not isinstance(levels, int) or isinstance(levels, bool) or levels < 1:
        raise ScenarioError("levels: expected a positive integer")
    checks = raw.get("checks", list(ALL_CHECKS))
    if not isinstance(checks, list) or any(c not in ALL_CHECKS for c in checks):
        raise ScenarioError(f"checks: expected a subset of {list(ALL_CHECKS)}")
    checks = tuple(dict.fromkeys(checks))
    if kind in FEM_KINDS and levels < 2 and set(checks) - {"fcond", "fubini"}:
        raise ScenarioError("levels: inequality checks need at least 2 levels")
    tol = dict(DEFAULT_TOL)
    if "tol" in raw:
        _reject_unknown(raw["tol"], _TOL_KEYS, "tol")
        for k in ("cg", "fubini"):
            if k in raw["tol"]:
                tol[k] = _number(raw["tol"], k, "tol")
        if "t_levels" in raw["tol"]:
            tl = raw["tol"]["t_levels"]
            if not isinstance(tl, int) or tl < 2:
                raise ScenarioError("tol.t_levels: expected an integer >= 2")
            tol["t_levels"] = tl
    if kind == "counterexample":
        beta = None
        source = None
    else:
        beta = _parse_beta(raw.get("beta"), geometry)
        source = _parse_source(raw.get("source"))
    name = raw.get("name", "scenario")
    if not isinstance(name, str):
        raise ScenarioError("name: expected a string")
    return Scenario(name, kind, geometry, beta, source, N, levels, checks, tol)


# -- output ------------------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return "null"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "null"
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        s = format(x, ".17g")
        return s if any(c in s for c in ".en") else s + ".0"
    return json.dumps(str(x))


def to_json(obj, indent=0) -> str:
    """Deterministic JSON with every float at 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_fmt(v) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + 1) for v in seq) + "\n" + end + "]"
    return _fmt(obj)


def write_curves_csv(curves: dict, path):
    t = np.asarray(curves["t"])
    cols = [np.asarray(curves.get(k, np.full(t.shape, np.nan))) for k in ("mu", "phi", "U", "V")]
    rows = ["t,mu,phi,U,V"]
    for i in range(len(t)):
        rows.append(",".join(format(float(c[i]), ".17g") for c in (t, *cols)))
    Path(path).write_text("\n".join(rows) + "\n")


def exit_status(report: ComparisonReport) -> int:
    return 2 if report.violated() else 0


def build_report(s: Scenario) -> ComparisonReport:
    if s.kind == "counterexample":
        return run_counterexample(s.geometry, s.name)
    if s.kind == "ball":
        beta = s.beta.rules.get(WHOLE_BOUNDARY)
        if beta is None or callable(beta):
            raise ScenarioError("beta: a ball scenario needs one constant value for the whole boundary")
        return run_radial_scenario(s.geometry, s.N, beta, s.source, s.checks, s.name)
    mesh = triangulate(s.geometry)
    report = run_comparison(mesh, s.beta, s.source, s.checks, s.levels, s.tol["cg"], s.tol["fubini"],
                            s.tol["t_levels"], s.name)
    for k in s.informational_checks():
        report.checks[k].informational = True
    return report


def _commit(tmp: Path, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    for f in sorted(tmp.iterdir()):
        shutil.move(str(f), out_dir / f.name)


def run_scenario(s: Scenario, out_dir) -> int:
    """Run a comparison and write report.json, curves.csv, radial.csv and mesh_L.txt.

    Files are staged in a temporary directory so a failure leaves ``out_dir``
    untouched.  Returns 0 when every binding check holds, 2 on a violation.
    """
    out_dir = Path(out_dir)
    report = build_report(s)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        doc = report.to_dict()
        doc["informational_checks"] = [k for k, c in report.checks.items() if c.informational]
        doc["exit_status"] = exit_status(report)
        if report.curves:
            doc["curves_file"] = "curves.csv"
            write_curves_csv(report.curves, tmp / "curves.csv")
        levels = report.curves.get("_levels")
        if levels:
            levels[-1].v.write_csv(tmp / "radial.csv")
            for d in levels:
                write_mesh(d.mesh, tmp / f"mesh_{d.level}.txt")
        elif "_radial" in report.curves:
            report.curves["_radial"].write_csv(tmp / "radial.csv")
        (tmp / "report.json").write_text(to_json(doc) + "\n")
        _commit(tmp, out_dir)
    return exit_status(report)


def solve_only(s: Scenario, out_dir, levels=None) -> dict:
    """Discrete solves on each refinement level (no comparison)."""
    if not s.is_fem:
        raise ScenarioError("solve needs a finite element geometry")
    levels = s.levels if levels is None else levels
    out_dir = Path(out_dir)
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        mesh = triangulate(s.geometry)
        for L in range(levels):
            if L:
                mesh = refine_uniform(mesh)
            u = solve_robin_problem(mesh, s.beta, s.source, s.tol["cg"])
            write_mesh(mesh, tmp / f"mesh_{L}.txt")
            write_field_csv(u, tmp / f"u_{L}.csv")
            rows.append({
                "level": L, "h": mesh.max_edge_length(), "n_vertices": mesh.n_vertices,
                "u_l1": lp_norm(u, 1), "u_m": boundary_trace_min(u)[0], "u_max": float(u.values.max()),
                "cg_iterations": u.info["cg_iterations"], "cg_residual": u.info["cg_residual"],
                "min_rayleigh": u.info["min_rayleigh"],
            })
        doc = {"scenario": s.name, "levels": rows}
        (tmp / "report.json").write_text(to_json(doc) + "\n")
        _commit(tmp, out_dir)
    return doc


def _disk_exact(s: Scenario):
    """Closed-form solution on the disk with constant beta and f, or None."""
    g = s.geometry
    if s.kind != "disk" or not s.source.is_constant:
        return None
    rules = s.beta.rules
    vals = set(rules.values())
    if len(vals) != 1 or any(callable(v) for v in vals):
        return None
    beta = vals.pop()
    f, R, (cx, cy) = s.source.amplitude, g.radius, g.center
    robin = 0.0 if math.isinf(beta) else f * R / (2 * beta)
    return lambda x, y: f * (R ** 2 - (x - cx) ** 2 - (y - cy) ** 2) / 4 + robin


def convergence_study(s: Scenario, levels=None) -> list[dict]:
    """Per-level error and observed order (exact L2 error on the disk, else u_l1 self-convergence)."""
    levels = s.levels if levels is None else levels
    if not s.is_fem:
        raise ScenarioError("convergence needs a finite element geometry")
    if levels < 3:
        raise ScenarioError("convergence needs at least 3 levels")
    exact = _disk_exact(s)
    mesh = triangulate(s.geometry)
    rows, prev = [], None
    for L in range(levels):
        if L:
            mesh = refine_uniform(mesh)
        u = solve_robin_problem(mesh, s.beta, s.source, s.tol["cg"])
        q = lp_norm(u, 1)
        if exact is not None:
            err = l2_error(u, exact)
        else:
            err = math.nan if prev is None else abs(q - prev)
        prev = q
        rows.append({"level": L, "h": mesh.max_edge_length(), "n_vertices": mesh.n_vertices,
                     "mode": "exact_l2" if exact is not None else "self_l1", "u_l1": q, "error": err})
    for a, b in zip(rows, rows[1:]):
        b["order"] = math.log2(a["error"] / b["error"]) if a["error"] > 0 and b["error"] > 0 else math.nan
    rows[0]["order"] = math.nan
    return rows


def write_convergence_csv(rows, path):
    keys = ["level", "h", "n_vertices", "mode", "u_l1", "error", "order"]
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(r[k] if isinstance(r[k], str) else format(r[k], ".17g") for k in keys))
    Path(path).write_text("\n".join(lines) + "\n")


def fcond_report(s: Scenario) -> dict:
    """Source condition for the scenario's rearranged datum in dimension N."""
    if s.kind == "counterexample":
        return run_counterexample(s.geometry).f_condition
    if s.kind == "ball":
        f_star = radial_source_profile(s.source, s.geometry, s.N)
    else:
        f_star = decreasing_rearrangement(s.source, triangulate(s.geometry))
    return check_f_condition(f_star, s.N).to_dict()

