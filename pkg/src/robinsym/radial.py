"""The symmetrized Robin problem on the ball of equal measure.

For a step profile f* the radial solution has the explicit form

    v(r) = v(R) + int_r^R F0(omega s^N) / (N omega s^(N-1)) ds,
    v(R) = F0(|Omega|) / (beta_bar * Per(ball)),

and on every profile step the integrand is ``K s^(1-N) + c s / N`` up to
constants, so everything below is integrated in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rearrange import DistributionCurve, RearrangedProfile, omega

GRID_RADII = 1024


def ball_radius(measure: float, N: int) -> float:
    return (measure / omega(N)) ** (1.0 / N)


def ball_perimeter(measure: float, N: int) -> float:
    return N * omega(N) * ball_radius(measure, N) ** (N - 1)


def effective_beta(boundary_reciprocal_integral: float, domain_measure: float, N: int) -> float:
    """beta_bar with Per(ball)/beta_bar equal to the boundary integral of 1/beta.

    An all-Dirichlet boundary (integral 0) gives ``inf``.
    """
    if not domain_measure > 0:
        raise ValueError("domain measure must be positive")
    if boundary_reciprocal_integral < 0:
        raise ValueError("boundary integral of 1/beta must be nonnegative")
    if boundary_reciprocal_integral == 0:
        return math.inf
    return ball_perimeter(domain_measure, N) / boundary_reciprocal_integral


def _radial_antiderivative(N, a, b):
    """int_a^b s^(1-N) ds (a > 0)."""
    if N == 2:
        return np.log(b / a)
    return (b ** (2 - N) - a ** (2 - N)) / (2 - N)


@dataclass(eq=False)
class RadialSolution:
    N: int
    omega_N: float
    R: float
    beta_bar: float
    profile: RearrangedProfile
    total_source: float
    v_m: float
    radii: np.ndarray      # profile breakpoint images rho_i = (s_i/omega)^(1/N)
    v_at_radii: np.ndarray
    r_samples: np.ndarray
    v_samples: np.ndarray

    @property
    def measure(self) -> float:
        return self.profile.total_measure

    @property
    def perimeter(self) -> float:
        return self.N * self.omega_N * self.R ** (self.N - 1)

    @property
    def v_max(self) -> float:
        return float(self.v_at_radii[0])

    def _coeffs(self):
        p = self.profile
        return p._cum[:-1] - p.values * p.breakpoints[:-1], p.values

    def __call__(self, r):
        """v at radius ``r`` (exact)."""
        r = np.asarray(r, dtype=float)
        K, c = self._coeffs()
        rho = self.radii
        i = np.clip(np.searchsorted(rho, r, side="right") - 1, 0, len(c) - 1)
        b = rho[i + 1]
        rr = np.clip(r, rho[i], b)
        with np.errstate(divide="ignore", invalid="ignore"):
            sing = np.where(K[i] != 0, K[i] / (self.N * self.omega_N)
                            * _radial_antiderivative(self.N, np.where(rr > 0, rr, 1.0), b), 0.0)
        return self.v_at_radii[i + 1] + sing + c[i] * (b ** 2 - rr ** 2) / (2 * self.N)

    def derivative(self, r):
        """dv/dr = -F0(omega r^N) / (N omega r^(N-1))."""
        r = np.asarray(r, dtype=float)
        F0 = self.profile.cumulative(self.omega_N * r ** self.N)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, -F0 / (self.N * self.omega_N * r ** (self.N - 1)), 0.0)

    def write_csv(self, path):
        rows = ["r,v"] + [f"{r:.17g},{v:.17g}" for r, v in zip(self.r_samples, self.v_samples)]
        Path(path).write_text("\n".join(rows) + "\n")


def solve_symmetrized(f_star: RearrangedProfile, N: int, beta_bar: float, n_radii=GRID_RADII) -> RadialSolution:
    """Radial solution of -lap v = f# on the ball with dv/dn + beta_bar v = 0."""
    if N < 2:
        raise ValueError("dimension must be at least 2")
    if not f_star.is_step:
        raise TypeError("the radial solver needs a step profile")
    if len(f_star.values) == 0:
        raise ValueError("empty profile")
    if not beta_bar > 0:
        raise ValueError("beta_bar must be positive")
    w = omega(N)
    meas = f_star.total_measure
    R = (meas / w) ** (1.0 / N)
    total = f_star.total()
    per = N * w * R ** (N - 1)
    v_m = 0.0 if math.isinf(beta_bar) else total / (beta_bar * per)
    rho = (f_star.breakpoints / w) ** (1.0 / N)
    rho[-1] = R
    K = f_star._cum[:-1] - f_star.values * f_star.breakpoints[:-1]
    c = f_star.values
    a, b = rho[:-1], rho[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        sing = np.where(K != 0, K / (N * w) * _radial_antiderivative(N, np.where(a > 0, a, 1.0), b), 0.0)
    pieces = sing + c * (b ** 2 - a ** 2) / (2 * N)
    # v(rho_i) = v_m + sum of pieces outward of rho_i
    v_rho = v_m + np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
    sol = RadialSolution(N, w, R, float(beta_bar), f_star, float(total), float(v_m), rho, v_rho,
                         np.empty(0), np.empty(0))
    grid = np.unique(np.concatenate([np.linspace(0.0, R, n_radii), rho]))
    sol.r_samples = grid
    sol.v_samples = sol(grid)
    return sol


def _radius_of_level(sol: RadialSolution, t):
    """Radius where v = t for t in (v_m, v(0)); vectorized bisection on the exact v."""
    t = np.asarray(t, dtype=float)
    rho, vr = sol.radii, sol.v_at_radii
    # bracket on the breakpoint radii (v decreasing)
    k = np.clip(np.searchsorted(-vr, -t, side="left"), 1, len(rho) - 1)
    lo, hi = rho[k - 1].copy(), rho[k].copy()
    for _ in range(70):
        mid = 0.5 * (lo + hi)
        above = sol(mid) > t
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def phi_of_t(sol: RadialSolution, t_grid) -> DistributionCurve:
    """phi(t) = |{v > t}|."""
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be increasing")
    out = np.zeros_like(t)
    out[t < sol.v_m] = sol.measure
    mid = (t >= sol.v_m) & (t < sol.v_max)
    if mid.any():
        r = _radius_of_level(sol, t[mid])
        out[mid] = sol.omega_N * r ** sol.N
    return DistributionCurve(t, out, exact=True)


def _outer_integral(sol: RadialSolution, r0):
    """int_{r0}^R rho F0(omega rho^N) / N d rho, exact."""
    K, c = sol._coeffs()
    N, w = sol.N, sol.omega_N
    rho = sol.radii
    a = np.maximum(rho[:-1], r0)
    b = rho[1:]
    live = b > a
    vals = np.where(live, K * (b ** 2 - a ** 2) / 2 + c * w * (b ** (N + 2) - a ** (N + 2)) / (N + 2), 0.0) / N
    return float(np.sum(vals))


def radial_l1_norm(sol: RadialSolution) -> float:
    """||v||_L1 of the ball, via int v = v_m |ball| + int_0^R rho F0 / N."""
    return sol.v_m * sol.measure + _outer_integral(sol, 0.0)


def radial_cumulative(sol: RadialSolution, tau) -> np.ndarray:
    """V(tau) = int_0^tau phi(t) dt, exact."""
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    out = np.empty_like(tau)
    for k, t in enumerate(tau):
        if t <= sol.v_m:
            out[k] = max(t, 0.0) * sol.measure
        elif t >= sol.v_max:
            out[k] = radial_l1_norm(sol)
        else:
            r = float(_radius_of_level(sol, np.array([t]))[0])
            out[k] = sol.v_m * sol.measure + _outer_integral(sol, r)
    return out


def layer_cake_l1(sol: RadialSolution, order=8, panels=8) -> float:
    """int_0^v(0) phi(t) dt by composite Gauss-Legendre on each profile piece (independent check)."""
    x, wts = np.polynomial.legendre.leggauss(order)
    levels = np.unique(np.concatenate([[sol.v_m], sol.v_at_radii]))
    levels = levels[levels >= sol.v_m]
    if len(levels) < 2:
        return sol.v_m * sol.measure
    # phi behaves like (v(0) - t)^(N/2) at the top: grade geometrically towards it
    top, below = levels[-1], levels[-2]
    graded = top - (top - below) * 0.5 ** np.arange(1, 40)
    levels = np.unique(np.concatenate([levels, graded]))
    frac = np.arange(panels) / panels
    levels = np.concatenate([(levels[:-1, None] + frac * np.diff(levels)[:, None]).ravel(), levels[-1:]])
    total = sol.v_m * sol.measure
    lo, hi = levels[:-1], levels[1:]
    t = 0.5 * (hi - lo)[:, None] * x[None, :] + 0.5 * (hi + lo)[:, None]
    phi = phi_of_t(sol, np.sort(t.ravel())).mu
    order_idx = np.argsort(t.ravel(), kind="stable")
    vals = np.empty(t.size)
    vals[order_idx] = phi
    vals = vals.reshape(t.shape)
    return float(total + np.sum(0.5 * (hi - lo) * (vals @ wts)))


@dataclass(frozen=True)
class BoundaryIdentity:
    lhs: float
    rhs: float


def boundary_lemma_identity(sol: RadialSolution, t: float) -> BoundaryIdentity:
    """Both sides of int_0^t int_{bdry V_tau} 1/(beta_bar v) = Per/beta_bar for t >= v_m."""
    if math.isinf(sol.beta_bar):
        raise ValueError("identity needs a finite beta_bar")
    if t < sol.v_m:
        raise ValueError("t must be at least v_m")
    # the trace of v is the constant v_m and the boundary slice is empty above v_m
    lhs = sol.v_m * sol.perimeter / (sol.beta_bar * sol.v_m) if sol.v_m > 0 else sol.perimeter / sol.beta_bar
    return BoundaryIdentity(float(lhs), float(sol.perimeter / sol.beta_bar))
