"""Numerical checks of the Robin comparison principle.

Scalar inequalities (L1 norms, boundary minima) are judged against a two-level
error budget ``err``:

* ``holds``: margin >= err
* ``holds-within-tolerance``: -err <= margin < err
* ``violated``: margin < -err

Curve inequalities (mu <= phi, U <= V) touch by construction at small levels,
so they are ``holds`` when the largest excess is at rounding level and
``holds-within-tolerance`` when it stays below the budget.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fem import BoundaryCoefficient, ScalarField, SourceSpec, boundary_trace_min, solve_robin_problem
from .mesh import TriMesh, refine_uniform
from .radial import (
    RadialSolution,
    ball_perimeter,
    effective_beta,
    phi_of_t,
    radial_l1_norm,
    solve_symmetrized,
)
from .rearrange import (
    DistributionCurve,
    RearrangedProfile,
    check_f_condition,
    cumulative_and_F,
    decreasing_rearrangement,
    distribution_function,
    lp_norm,
    omega,
    radial_source_profile,
)

HOLDS = "holds"
WITHIN = "holds-within-tolerance"
VIOLATED = "violated"
NOT_APPLICABLE = "not-applicable"
VERDICTS = (HOLDS, WITHIN, VIOLATED, NOT_APPLICABLE)

ALL_CHECKS = ("l1", "pointwise", "boundary_min", "fubini", "uv", "fcond")

ROUNDING = 1e-12


def gamma_N(N: int) -> float:
    """Isoperimetric constant N^2 omega_N^(-2/N)."""
    return N ** 2 * omega(N) ** (-2.0 / N)


def _error_floor(*values):
    scale = max([1.0] + [abs(v) for v in values if math.isfinite(v)])
    return 64 * np.finfo(float).eps * scale


def scalar_verdict(margin: float, err: float) -> str:
    if margin >= err:
        return HOLDS
    if margin >= -err:
        return WITHIN
    return VIOLATED


def curve_verdict(excess: float, tol: float, scale: float = 1.0) -> str:
    if excess <= ROUNDING * scale:
        return HOLDS
    if excess <= tol:
        return WITHIN
    return VIOLATED


@dataclass
class CheckResult:
    verdict: str
    margin: float = math.nan
    tolerance: float = math.nan
    where: float = math.nan
    informational: bool = False
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def compare_l1(u, v, err_estimate=None) -> CheckResult:
    """||u||_1 <= ||v||_1 up to ``err_estimate``; ``u``/``v`` may be norms or solutions."""
    if isinstance(u, ScalarField):
        if err_estimate is None:
            raise ValueError("an error estimate is required for a discrete field")
        u_l1 = lp_norm(u, 1)
    else:
        u_l1 = float(u)
    v_l1 = radial_l1_norm(v) if isinstance(v, RadialSolution) else float(v)
    err = 0.0 if err_estimate is None else float(err_estimate)
    slack = v_l1 - u_l1
    return CheckResult(scalar_verdict(slack, err), slack, err, detail={"u_l1": u_l1, "v_l1": v_l1})


def compare_distributions(mu: DistributionCurve, phi: DistributionCurve, tol) -> CheckResult:
    """mu(t) <= phi(t) + tol on a common grid."""
    if mu.t.shape != phi.t.shape or not np.array_equal(mu.t, phi.t):
        raise ValueError("distribution curves sampled on different grids")
    diff = mu.mu - phi.mu
    k = int(np.argmax(diff))
    tol_k = float(np.max(np.broadcast_to(tol, diff.shape)))
    scale = float(max(np.max(mu.mu), np.max(phi.mu), 1.0))
    return CheckResult(curve_verdict(float(diff[k]), tol_k, scale), float(-diff[k]), tol_k, float(mu.t[k]))


def boundary_min_check(u_m: float, v_m: float, err_estimate: float = 0.0) -> CheckResult:
    return CheckResult(scalar_verdict(v_m - u_m, err_estimate), v_m - u_m, err_estimate,
                       detail={"u_m": u_m, "v_m": v_m})


@dataclass
class FubiniResult:
    lhs: float
    rhs: float
    rel_gap: float


def _edge_slice_integral(u0, u1, length, beta, t, left=False):
    """int over {u > t} of 1/(beta u) along edges with linear trace, for every level t.

    ``left=True`` gives the limit from below, which differs only where a
    constant trace jumps to zero.
    """
    lo = np.minimum(u0, u1)[None, :]
    hi = np.maximum(u0, u1)[None, :]
    t = np.asarray(t, dtype=float)[:, None]
    coef = (length / beta)[None, :]
    flat = hi - lo <= 1e-14 * hi
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = coef / np.where(flat, 1.0, hi - lo)
        val = np.where(t < lo, slope * np.log(hi / lo), slope * np.log(hi / np.maximum(t, lo)))
        val = np.where(flat, coef / hi, val)
    alive = t <= hi if left else t < hi
    return np.where(alive, val, 0.0).sum(axis=1)


def fubini_boundary_check(u: ScalarField, beta: BoundaryCoefficient, t_grid=None, refine=4) -> FubiniResult:
    """Slice the boundary integral of 1/(beta u) by level and integrate over t."""
    mesh = u.mesh
    bvals = beta.edge_values(mesh)
    robin = np.isfinite(bvals)
    lengths = mesh.edge_lengths()
    rhs = float(np.sum(lengths[robin] / bvals[robin]))
    if not robin.any():
        return FubiniResult(0.0, 0.0, 0.0)
    E = mesh.boundary_edges[robin]
    u0, u1 = u.values[E[:, 0]], u.values[E[:, 1]]
    if np.any(u0 <= 0) or np.any(u1 <= 0):
        raise ValueError("the trace must be positive on Robin edges")
    knots = np.unique(np.concatenate([[0.0], u0, u1, [] if t_grid is None else np.asarray(t_grid, float)]))
    knots = knots[(knots >= 0) & (knots <= max(u0.max(), u1.max()))]
    # trapezoid on every knot interval with one-sided end values
    frac = np.arange(refine + 1) / refine
    t = knots[:-1, None] + frac[None, :] * np.diff(knots)[:, None]
    a, b = t[:, :-1].ravel(), t[:, 1:].ravel()

    def slices(points, left):
        return np.concatenate([
            _edge_slice_integral(u0, u1, lengths[robin], bvals[robin], points[i:i + 2048], left)
            for i in range(0, len(points), 2048)
        ])

    lhs = float(np.sum((b - a) * (slices(a, False) + slices(b, True)) / 2))
    return FubiniResult(lhs, rhs, abs(lhs - rhs) / rhs if rhs else 0.0)


def cumulative_curve(t, y, y_mid=None) -> np.ndarray:
    """int_0^t y on the grid: Simpson with midpoint values if given, else trapezoid."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    dt = np.diff(t)
    if y_mid is None:
        inc = dt * (y[:-1] + y[1:]) / 2
    else:
        inc = dt / 6 * (y[:-1] + 4 * np.asarray(y_mid, dtype=float) + y[1:])
    start = t[0] * y[0] if t[0] > 0 else 0.0  # curves are constant below the first level
    return start + np.concatenate([[0.0], np.cumsum(inc)])


def cumulative_UV_check(mu: DistributionCurve, phi: DistributionCurve, f_star: RearrangedProfile, N: int,
                        tol: float, mu_mid=None, phi_mid=None, f_condition=None) -> CheckResult:
    """U(tau) <= V(tau) + tol * tau with U, V the running integrals of mu and phi."""
    if not np.array_equal(mu.t, phi.t):
        raise ValueError("distribution curves sampled on different grids")
    fc = f_condition if f_condition is not None else check_f_condition(f_star, N)
    U = cumulative_curve(mu.t, mu.mu, mu_mid)
    V = cumulative_curve(phi.t, phi.mu, phi_mid)
    detail = {"U": U, "V": V}
    if f_star.is_step:
        F = cumulative_and_F(f_star, N)
        detail["F_mu"] = F.F(mu.mu)
        detail["F_phi"] = F.F(phi.mu)
    if not fc.satisfied:
        return CheckResult(NOT_APPLICABLE, detail=detail)
    excess = U - V - tol * mu.t
    k = int(np.argmax(excess))
    scale = float(max(V[-1], 1.0))
    return CheckResult(curve_verdict(float(U[k] - V[k]), tol * float(mu.t[k]), scale),
                       float(V[k] - U[k]), tol, float(mu.t[k]), detail=detail)


# -- counterexample ----------------------------------------------------------------------------

@dataclass(frozen=True)
class CounterexampleSpec:
    """Point source of strength n(n-2)omega_n at the centre of B_r, plus a disjoint
    Dirichlet ball B_R with r^n + R^n = 1."""

    n: int
    r: float

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("the construction needs dimension n >= 3")
        if not 0 < self.r < 1:
            raise ValueError("small radius must lie in (0, 1)")

    @property
    def R(self) -> float:
        return (1 - self.r ** self.n) ** (1.0 / self.n)

    @property
    def source_strength(self) -> float:
        return self.n * (self.n - 2) * omega(self.n)

    @property
    def robin_beta(self) -> float:
        return self.r ** (self.n - 1)

    def u_constant(self) -> float:
        """Additive constant making u satisfy the Robin condition on the small sphere."""
        n, r = self.n, self.r
        return (n - 2) / r ** (2 * n - 2) - 1 / r ** (n - 2)

    def u_constant_alternative(self) -> float:
        """Variant ending in -1/r^(n-1); it fails the Robin condition and is kept for comparison."""
        n, r = self.n, self.r
        return (n - 2) / r ** (2 * n - 2) - 1 / r ** (n - 1)

    def u(self, rho, constant=None):
        c = self.u_constant() if constant is None else constant
        return np.asarray(rho, dtype=float) ** (2 - self.n) + c

    def v(self, rho):
        return np.asarray(rho, dtype=float) ** (2 - self.n) + self.n - 3


def counterexample_eval(ce: CounterexampleSpec, mollifier_radius=None) -> dict:
    n, r = ce.n, ce.r
    w = omega(n)
    u_l1 = n * w * r ** 2 / 2 + (n - 2) * w / r ** (n - 2) - w * r ** 2
    # same integral assembled from the pieces: int_{B_r} |x|^(2-n) + constant * |B_r|
    u_l1_pieces = n * w * r ** 2 / 2 + ce.u_constant() * w * r ** n
    v_l1 = n * w / 2 + w * (n - 3)
    # reciprocal boundary integral: Robin sphere |dB_r| / r^(n-1), Dirichlet sphere contributes 0
    rec = n * w * r ** (n - 1) / ce.robin_beta
    measure = w * (r ** n + ce.R ** n)
    beta_bar = effective_beta(rec, measure, n)
    du = (2 - n) * r ** (1 - n)  # outward derivative on the small sphere
    robin_u = du + ce.robin_beta * float(ce.u(r))
    robin_u_alt = du + ce.robin_beta * float(ce.u(r, ce.u_constant_alternative()))
    robin_v = (2 - n) * 1.0 + 1.0 * float(ce.v(1.0))
    bound_formula = (n - 2) * w / r ** (n - 2) - w * r ** 2
    eps = r / 4 if mollifier_radius is None else mollifier_radius
    m_eps = w * eps ** n
    delta_profile = RearrangedProfile([0.0, m_eps, measure], [ce.source_strength / m_eps, 0.0])
    fc = check_f_condition(delta_profile, n)
    return {
        "n": n,
        "r": r,
        "R": ce.R,
        "u_l1": u_l1,
        "u_l1_from_pieces": u_l1_pieces,
        "v_l1": v_l1,
        "beta_bar": beta_bar,
        "ball_perimeter": ball_perimeter(measure, n),
        "bc_residuals": {
            "robin_u": abs(robin_u),
            "robin_v": abs(robin_v),
            "robin_u_alternative_constant": abs(robin_u_alt),
        },
        "scale": {"robin_u": abs(du), "robin_v": float(n - 2)},
        "constant_times_ball": ce.u_constant() * w * r ** n,
        "lower_bound_formula": bound_formula,
        "alternative_constant_times_ball": ce.u_constant_alternative() * w * r ** n,
        "f_condition": fc.to_dict(),
        "comparison": compare_l1(u_l1, v_l1, 0.0).to_dict(),
    }


# -- full pipeline -----------------------------------------------------------------------------

@dataclass
class LevelData:
    level: int
    mesh: TriMesh
    u: ScalarField
    f_star: RearrangedProfile
    v: RadialSolution
    measure: float
    beta_bar: float
    u_l1: float
    v_l1: float
    u_m: float
    u_min_global: float
    v_m: float

    def summary(self):
        return {
            "level": self.level,
            "h": self.mesh.max_edge_length(),
            "n_vertices": self.mesh.n_vertices,
            "n_triangles": self.mesh.n_triangles,
            "measure": self.measure,
            "beta_bar": self.beta_bar,
            "u_l1": self.u_l1,
            "v_l1": self.v_l1,
            "u_m": self.u_m,
            "u_min": self.u_min_global,
            "v_m": self.v_m,
            "cg_iterations": self.u.info.get("cg_iterations"),
        }


def solve_level(mesh: TriMesh, beta: BoundaryCoefficient, f: SourceSpec, level=0, rel_tol=1e-10) -> LevelData:
    u = solve_robin_problem(mesh, beta, f, rel_tol)
    measure = float(mesh.areas().sum())
    bb = effective_beta(beta.reciprocal_integral(mesh), measure, 2)
    f_star = decreasing_rearrangement(f, mesh)
    v = solve_symmetrized(f_star, 2, bb)
    u_m, u_min = boundary_trace_min(u)
    return LevelData(level, mesh, u, f_star, v, measure, bb, lp_norm(u, 1), radial_l1_norm(v), u_m, u_min, v.v_m)


@dataclass
class ComparisonReport:
    scenario: str
    N: int
    measure: float
    beta_bar: float
    gamma_N: float
    u_l1: float
    v_l1: float
    u_m: float
    v_m: float
    error_estimates: dict
    f_condition: dict
    fubini: dict
    checks: dict
    levels: list
    extra: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict, repr=False)  # t, mu, phi, U, V (CSV sibling)

    def verdicts(self) -> dict:
        return {k: c.verdict for k, c in self.checks.items()}

    def violated(self) -> bool:
        return any(c.verdict == VIOLATED and not c.informational for c in self.checks.values())

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "N": self.N,
            "measure": self.measure,
            "beta_bar": self.beta_bar,
            "gamma_N": self.gamma_N,
            "u_l1": self.u_l1,
            "v_l1": self.v_l1,
            "u_m": self.u_m,
            "v_m": self.v_m,
            "error_estimates": self.error_estimates,
            "f_condition": self.f_condition,
            "fubini": self.fubini,
            "checks": {k: {kk: vv for kk, vv in c.to_dict().items() if kk != "detail"} for k, c in self.checks.items()},
            "levels": self.levels,
        }
        out.update(self.extra)
        return out


def common_grid(u: ScalarField, v: RadialSolution, t_levels=256):
    """Uniform levels plus every vertex value of u and both boundary minima."""
    top = max(float(u.values.max()), v.v_max)
    u_m, _ = boundary_trace_min(u)
    t = np.concatenate([np.linspace(0.0, top, t_levels), np.unique(u.values), [u_m, v.v_m, v.v_max]])
    t = np.unique(t[t >= 0])
    # drop near-duplicates so that midpoints stay strictly increasing
    keep = np.concatenate([[True], np.diff(t) > 1e-13 * max(top, 1e-300)])
    return t[keep]


def run_comparison(mesh: TriMesh, beta: BoundaryCoefficient, f: SourceSpec, checks=ALL_CHECKS, levels=3,
                   rel_tol=1e-10, fubini_tol=0.02, t_levels=256, name="scenario") -> ComparisonReport:
    """Solve on ``levels`` uniform refinements of ``mesh`` and run the requested checks."""
    checks = tuple(checks)
    unknown = set(checks) - set(ALL_CHECKS)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}")
    if levels < 1:
        raise ValueError("need at least one level")
    if levels < 2 and set(checks) - {"fcond", "fubini"}:
        raise ValueError("inequality checks need at least two levels for the error estimate")
    data = []
    m = mesh
    for L in range(levels):
        if L:
            m = refine_uniform(m)
        data.append(solve_level(m, beta, f, L, rel_tol))
    fine = data[-1]
    prev = data[-2] if len(data) > 1 else None

    def est(attr):
        a = getattr(fine, attr)
        if prev is None:
            return math.nan
        b = getattr(prev, attr)
        if math.isinf(a) and math.isinf(b):
            return 0.0
        return max(abs(a - b), _error_floor(a, b))

    err = {k: est(k) for k in ("u_l1", "v_l1", "u_m", "v_m")}

    t = common_grid(fine.u, fine.v, t_levels)
    t_mid = 0.5 * (t[:-1] + t[1:])
    mu = distribution_function(fine.u, t)
    phi = phi_of_t(fine.v, t)
    mu_mid = distribution_function(fine.u, t_mid).mu
    phi_mid = phi_of_t(fine.v, t_mid).mu
    if prev is not None:
        mu_prev = distribution_function(prev.u, t).mu
        err["mu"] = max(float(np.max(np.abs(mu.mu - mu_prev))), _error_floor(fine.measure))
    else:
        err["mu"] = math.nan

    fc = check_f_condition(fine.f_star, 2)
    results: dict[str, CheckResult] = {}
    if "l1" in checks:
        results["l1"] = compare_l1(fine.u_l1, fine.v_l1, err["u_l1"] + err["v_l1"])
    if "pointwise" in checks:
        res = compare_distributions(mu, phi, err["mu"])
        res.informational = not f.is_constant
        results["pointwise"] = res
    if "boundary_min" in checks:
        results["boundary_min"] = boundary_min_check(fine.u_m, fine.v_m, err["u_m"] + err["v_m"])
    fub = {}
    if "fubini" in checks:
        bvals = beta.edge_values(fine.mesh)
        if np.any(np.isfinite(bvals)) and np.all(fine.u.values[fine.mesh.boundary_edges[np.isfinite(bvals)]] > 0):
            fr = fubini_boundary_check(fine.u, beta, t)
            fub = asdict(fr)
            results["fubini"] = CheckResult(HOLDS if fr.rel_gap <= fubini_tol else VIOLATED,
                                            fubini_tol - fr.rel_gap, fubini_tol, detail=fub)
        elif not np.any(np.isfinite(bvals)):
            fub = {"lhs": 0.0, "rhs": 0.0, "rel_gap": 0.0}
            results["fubini"] = CheckResult(HOLDS, 0.0, fubini_tol, detail=fub)
        else:
            results["fubini"] = CheckResult(NOT_APPLICABLE)
    uv = cumulative_UV_check(mu, phi, fine.f_star, 2, err["mu"] / max(float(t[-1]), 1e-300) if prev else 0.0,
                             mu_mid, phi_mid, fc)
    if "uv" in checks:
        results["uv"] = uv
    if "fcond" in checks:
        results["fcond"] = CheckResult(HOLDS if fc.satisfied else VIOLATED, 1.0 - fc.worst_ratio, 0.0,
                                       fc.worst_s, detail=fc.to_dict())

    U, V = uv.detail["U"], uv.detail["V"]
    uniform = np.linspace(0.0, float(t[-1]), t_levels)
    F = cumulative_and_F(fine.f_star, 2)
    mu_u = distribution_function(fine.u, uniform).mu
    phi_u = phi_of_t(fine.v, uniform).mu
    extra = {
        "uv_diagnostics": {
            "t": uniform.tolist(),
            "F_mu": F.F(mu_u).tolist(),
            "F_phi": F.F(phi_u).tolist(),
        },
        "layer_cake": {"U_end": float(U[-1]), "V_end": float(V[-1])},
        "source_constant": f.is_constant,
    }
    return ComparisonReport(
        scenario=name, N=2, measure=fine.measure, beta_bar=fine.beta_bar, gamma_N=gamma_N(2),
        u_l1=fine.u_l1, v_l1=fine.v_l1, u_m=fine.u_m, v_m=fine.v_m,
        error_estimates=err, f_condition=fc.to_dict(), fubini=fub, checks=results,
        levels=[d.summary() for d in data], extra=extra,
        curves={"t": t, "mu": mu.mu, "phi": phi.mu, "U": U, "V": V, "_levels": data},
    )


def run_radial_scenario(measure: float, N: int, beta_value: float, source: SourceSpec, checks=ALL_CHECKS,
                        name="radial") -> ComparisonReport:
    """Ball-only scenario (any N): symmetrized solution and the source condition."""
    f_star = radial_source_profile(source, measure, N)
    bb = effective_beta(ball_perimeter(measure, N) / beta_value if math.isfinite(beta_value) else 0.0,
                        measure, N)
    v = solve_symmetrized(f_star, N, bb)
    fc = check_f_condition(f_star, N)
    results = {}
    for c in checks:
        if c == "fcond":
            results[c] = CheckResult(HOLDS if fc.satisfied else VIOLATED, 1.0 - fc.worst_ratio, 0.0,
                                     fc.worst_s, detail=fc.to_dict())
        else:
            # no discrete solution to compare against
            results[c] = CheckResult(NOT_APPLICABLE)
    t = np.linspace(0.0, v.v_max, 256)
    phi = phi_of_t(v, t)
    return ComparisonReport(
        scenario=name, N=N, measure=measure, beta_bar=bb, gamma_N=gamma_N(N), u_l1=math.nan,
        v_l1=radial_l1_norm(v), u_m=math.nan, v_m=v.v_m, error_estimates={}, f_condition=fc.to_dict(),
        fubini={}, checks=results, levels=[], extra={"comparison_applicable": fc.satisfied},
        curves={"t": t, "phi": phi.mu, "_radial": v},
    )


def run_counterexample(ce: CounterexampleSpec, name="counterexample") -> ComparisonReport:
    ev = counterexample_eval(ce)
    w = omega(ce.n)
    checks = {
        "l1": CheckResult(**{k: v for k, v in ev["comparison"].items()}),
        "fcond": CheckResult(HOLDS if ev["f_condition"]["satisfied"] else VIOLATED,
                             1.0 - ev["f_condition"]["worst_ratio"], 0.0, ev["f_condition"]["worst_s"]),
    }
    extra = {k: ev[k] for k in ("n", "r", "R", "bc_residuals", "lower_bound_formula", "constant_times_ball",
                                "alternative_constant_times_ball")}
    return ComparisonReport(
        scenario=name, N=ce.n, measure=w, beta_bar=ev["beta_bar"], gamma_N=gamma_N(ce.n),
        u_l1=ev["u_l1"], v_l1=ev["v_l1"], u_m=0.0, v_m=float(ce.v(1.0)), error_estimates={},
        f_condition=ev["f_condition"], fubini={}, checks=checks, levels=[], extra=extra,
    )
