"""Level-set measures and decreasing rearrangements.

Two profile flavours share one interface:

* :class:`RearrangedProfile` is a right-continuous nonincreasing step function
  on ``[0, |Omega|]``; sources and analytic data are rearranged into it.
* :class:`FieldProfile` is the rearrangement of a P1 field.  Between two
  consecutive vertex values the distribution function of a P1 field is a
  quadratic polynomial, so the profile keeps those quadratics and evaluates
  the rearrangement, its norms and its distribution exactly.  Its step view
  (``breakpoints``/``values``) samples the exact profile at >= 1024 points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fem import SUBCENTROIDS, ScalarField, SourceSpec
from .mesh import TriMesh

MIN_STEPS = 1024
STEPS_PER_DECADE = 200


def omega(N: int) -> float:
    """Lebesgue measure of the unit ball in R^N."""
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


@dataclass(frozen=True)
class DistributionCurve:
    t: np.ndarray
    mu: np.ndarray
    exact: bool = True

    def write_csv(self, path, name="mu"):
        rows = [f"t,{name}"] + [f"{a:.17g},{b:.17g}" for a, b in zip(self.t, self.mu)]
        Path(path).write_text("\n".join(rows) + "\n")


# -- exact distribution of a P1 field ------------------------------------------------------

def _sorted_values(field: ScalarField):
    vals = np.sort(field.values[field.mesh.triangles], axis=1)
    return vals, field.mesh.areas()


def _partial_measure(a, b, c, area, t):
    """|{u > t}| within triangles where a <= t < c (broadcast over t)."""
    out = np.zeros(np.broadcast(a, t).shape)
    lower = (t >= a) & (t < b)
    upper = (t >= b) & (t < c)
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = area * (1.0 - (t - a) ** 2 / ((b - a) * (c - a)))
        up = area * (c - t) ** 2 / ((c - a) * (c - b))
    out = np.where(lower, lo, out)
    out = np.where(upper, up, out)
    return out


def _measure_above(abc, area, t, strict=True, chunk=256):
    """Exact |{u > t}| (or |{u >= t}|) for many levels ``t``."""
    t = np.asarray(t, dtype=float)
    flat_t = t.ravel()
    order = np.argsort(flat_t, kind="stable")
    ts = flat_t[order]
    a, b, c = abc[:, 0], abc[:, 1], abc[:, 2]
    by_a = np.argsort(a, kind="stable")
    a_sorted = a[by_a]
    # suffix sums of area over triangles sorted by their minimum value
    tail = np.concatenate([np.cumsum(area[by_a][::-1])[::-1], [0.0]])
    res = np.empty_like(ts)
    for start in range(0, len(ts), chunk):
        q = ts[start:start + chunk]
        full = tail[np.searchsorted(a_sorted, q, side="right")]
        sel = (a <= q[-1]) & (c > q[0]) & (c > a)
        part = _partial_measure(a[sel][None, :], b[sel][None, :], c[sel][None, :],
                                area[sel][None, :], q[:, None]).sum(axis=1)
        res[start:start + chunk] = full + part
    if not strict:
        flat = a == c
        if flat.any():
            fv = a[flat]
            fa = area[flat]
            o = np.argsort(fv, kind="stable")
            fv, fa = fv[o], fa[o]
            cs = np.concatenate([[0.0], np.cumsum(fa)])
            res += cs[np.searchsorted(fv, ts, side="right")] - cs[np.searchsorted(fv, ts, side="left")]
    out = np.empty_like(res)
    out[order] = res
    return out.reshape(t.shape)


def distribution_function(field: ScalarField, t_grid) -> DistributionCurve:
    """Exact area of ``{u_h > t}`` for each level, from the linear interpolant."""
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    abc, area = _sorted_values(field)
    return DistributionCurve(t, _measure_above(abc, area, t), exact=True)


# -- profiles --------------------------------------------------------------------------------

class RearrangedProfile:
    """Nonincreasing step function: ``values[i]`` on ``[breakpoints[i], breakpoints[i+1])``."""

    def __init__(self, breakpoints, values):
        s = np.asarray(breakpoints, dtype=float)
        c = np.asarray(values, dtype=float)
        if s.ndim != 1 or len(s) != len(c) + 1 or len(c) == 0:
            raise ValueError("need k+1 breakpoints for k values")
        if s[0] != 0 or np.any(np.diff(s) <= 0):
            raise ValueError("breakpoints must start at 0 and increase strictly")
        if np.any(np.diff(c) > 0):
            raise ValueError("profile values must be nonincreasing")
        if np.any(c < 0):
            raise ValueError("profile values must be nonnegative")
        self.breakpoints = s
        self.values = c
        self._cum = np.concatenate([[0.0], np.cumsum(c * np.diff(s))])

    @property
    def total_measure(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def is_step(self) -> bool:
        return True

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.clip(np.searchsorted(self.breakpoints, s, side="right") - 1, 0, len(self.values) - 1)
        return self.values[idx]

    def measure_above(self, t):
        """|{h* > t}|."""
        t = np.asarray(t, dtype=float)
        # values nonincreasing: count of steps strictly above t
        k = np.searchsorted(-self.values, -t, side="left")
        return self.breakpoints[k]

    def cumulative(self, s):
        """F0(s) = integral of h* over [0, s], exact (piecewise linear)."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.total_measure)
        idx = np.clip(np.searchsorted(self.breakpoints, s, side="right") - 1, 0, len(self.values) - 1)
        return self._cum[idx] + self.values[idx] * (s - self.breakpoints[idx])

    def total(self) -> float:
        return float(self._cum[-1])

    def power_integral(self, p) -> float:
        return float(np.sum(self.values ** p * np.diff(self.breakpoints)))

    def max_value(self) -> float:
        return float(self.values[0])

    def scaled(self, c) -> "RearrangedProfile":
        return RearrangedProfile(self.breakpoints, c * self.values)

    def write_csv(self, path):
        rows = ["s,value"] + [f"{s:.17g},{v:.17g}" for s, v in zip(self.breakpoints[:-1], self.values)]
        rows.append(f"{self.breakpoints[-1]:.17g},{self.values[-1]:.17g}")
        Path(path).write_text("\n".join(rows) + "\n")


def step_profile(samples, weights) -> RearrangedProfile:
    """Sort weighted samples descending (stable) and merge equal values."""
    samples = np.asarray(samples, dtype=float).ravel()
    weights = np.asarray(weights, dtype=float).ravel()
    if np.any(samples < 0):
        raise ValueError("cannot rearrange negative values")
    keep = weights > 0
    samples, weights = samples[keep], weights[keep]
    order = np.argsort(-samples, kind="stable")
    vals = samples[order]
    w = weights[order]
    start = np.concatenate([[True], vals[1:] != vals[:-1]])
    groups = np.cumsum(start) - 1
    merged_w = np.bincount(groups, weights=w)
    merged_v = vals[start]
    return RearrangedProfile(np.concatenate([[0.0], np.cumsum(merged_w)]), merged_v)


class FieldProfile(RearrangedProfile):
    """Exact rearrangement of a nonnegative P1 field."""

    def __init__(self, field: ScalarField, min_steps=MIN_STEPS):
        abc, area = _sorted_values(field)
        if abc.size and abc[:, 0].min() < 0:
            raise ValueError("cannot rearrange negative values")
        self._abc, self._area = abc, area
        levels = np.unique(field.values)
        self.levels = levels
        self.measure = float(area.sum())
        lo, hi = levels[:-1], levels[1:]
        # quadratic on each open interval, stored by its values at both ends and the middle
        self._p0 = _measure_above(abc, area, lo) if len(lo) else np.empty(0)
        self._pm = _measure_above(abc, area, 0.5 * (lo + hi)) if len(lo) else np.empty(0)
        self._p1 = _measure_above(abc, area, hi, strict=False) if len(lo) else np.empty(0)
        self._mu_levels = _measure_above(abc, area, levels)
        self._mu_levels_left = _measure_above(abc, area, levels, strict=False)
        s, c = self._step_view(min_steps)
        super().__init__(s, c)
        self._exact_moments = {}

    # quadratic through (0, p0), (1/2, pm), (1, p1) in local coordinate x in [0, 1]
    def _poly(self, j, x):
        p0, pm, p1 = self._p0[j], self._pm[j], self._p1[j]
        return p0 * (2 * x - 1) * (x - 1) + pm * 4 * x * (1 - x) + p1 * x * (2 * x - 1)

    def measure_above(self, t):
        t = np.asarray(t, dtype=float)
        L = self.levels
        out = np.where(t < L[0], self.measure, 0.0)
        j = np.searchsorted(L, t, side="right") - 1
        inside = (j >= 0) & (j < len(L) - 1)
        jj = np.clip(j, 0, max(len(L) - 2, 0))
        if len(L) > 1:
            x = np.where(inside, (t - L[jj]) / (L[jj + 1] - L[jj]), 0.0)
            out = np.where(inside, self._poly(jj, x), out)
        at_top = j == len(L) - 1
        out = np.where(at_top & (t == L[-1]), self._mu_levels[-1], out)
        return out

    def __call__(self, s):
        """Right-continuous rearrangement inf{t : mu(t) <= s}."""
        shape = np.shape(s)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        L = self.levels
        out = np.full(s.shape, L[-1])
        if len(L) > 1:
            p0, p1 = self._p0, self._p1
            # interval j carries s in [p1_j, p0_j) with mu strictly decreasing in t;
            # s in [p0_j, p1_{j-1}) is a plateau (or a rounding gap) at level L_j
            idx = np.searchsorted(-p1, -s, side="left")
            j = np.minimum(idx, len(p0) - 1)
            inside = (idx < len(p0)) & (s < p0[j])
            xl = np.zeros(s.shape)
            xr = np.ones(s.shape)
            for _ in range(64):
                xm = 0.5 * (xl + xr)
                above = self._poly(j, xm) > s
                xl = np.where(above, xm, xl)
                xr = np.where(above, xr, xm)
            t = L[j] + xr * (L[j + 1] - L[j])
            out = np.where(inside, t, np.where(idx < len(p0), L[j], L[-1]))
        return np.where(s >= self.measure, L[0], out).reshape(shape)

    def _step_view(self, min_steps):
        L = self.levels
        lo = max(L[0], 0.0)
        n = min_steps
        pos = L[L > 0]
        if len(pos) and pos[-1] > pos[0]:
            n = max(n, int(math.ceil(STEPS_PER_DECADE * math.log10(pos[-1] / pos[0]))))
        s = np.concatenate([[0.0, self.measure], self._mu_levels, self._mu_levels_left,
                            self.measure_above(np.linspace(lo, L[-1], n + 1))])
        s = np.unique(s[(s >= 0) & (s <= self.measure)])
        vals = self(s[:-1])
        return s, np.minimum.accumulate(vals)

    def cumulative(self, s):
        """F0(s) via the exact identity int_0^s h* = s h*(s) + int_{h*(s)}^max mu(t) dt."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        h = self(s)
        return np.array([si * hi + self._integral_mu(hi) for si, hi in zip(s, h)])

    def _integral_mu(self, t0):
        """Integral of mu over [t0, max], exact (Simpson on each quadratic piece)."""
        L = self.levels
        if len(L) < 2 or t0 >= L[-1]:
            return 0.0
        j0 = max(int(np.searchsorted(L, t0, side="right")) - 1, 0)
        total = 0.0
        if t0 < L[0]:
            total += (L[0] - t0) * self.measure
            t0 = L[0]
        # partial first piece
        a, b = t0, L[j0 + 1]
        xa = (a - L[j0]) / (L[j0 + 1] - L[j0])
        xm = 0.5 * (xa + 1.0)
        total += (b - a) / 6 * (self._poly(j0, xa) + 4 * self._poly(j0, xm) + self._p1[j0])
        d = np.diff(L)[j0 + 1:]
        total += float(np.sum(d / 6 * (self._p0[j0 + 1:] + 4 * self._pm[j0 + 1:] + self._p1[j0 + 1:])))
        return float(total)

    def power_integral(self, p) -> float:
        """int_0^|Omega| (h*)^p ds by the layer-cake formula, exact for p in {1, 2}."""
        if p in self._exact_moments:
            return self._exact_moments[p]
        L = self.levels
        total = L[0] ** p * self.measure
        if len(L) > 1:
            lo, hi = L[:-1], L[1:]
            mid = 0.5 * (lo + hi)
            g0 = p * lo ** (p - 1) * self._p0
            gm = p * mid ** (p - 1) * self._pm
            g1 = p * hi ** (p - 1) * self._p1
            total += float(np.sum((hi - lo) / 6 * (g0 + 4 * gm + g1)))
        self._exact_moments[p] = float(total)
        return float(total)

    def total(self) -> float:
        return self.power_integral(1)

    def max_value(self) -> float:
        return float(self.levels[-1])

    @property
    def is_step(self) -> bool:
        return False

    @property
    def total_measure(self) -> float:
        return self.measure


def decreasing_rearrangement(data, mesh: TriMesh | None = None, min_steps=MIN_STEPS) -> RearrangedProfile:
    """Rearrange a P1 field exactly, or a source sampled on ``mesh``.

    Sources are sampled at the centroids of 16 sub-triangles per triangle and
    the samples sorted descending with their sub-triangle areas as weights.
    """
    if isinstance(data, ScalarField):
        if np.any(data.values < 0):
            raise ValueError("cannot rearrange negative values")
        return FieldProfile(data, min_steps)
    if isinstance(data, SourceSpec):
        if mesh is None:
            raise ValueError("a mesh is needed to sample a source")
        p = mesh.vertices[mesh.triangles]
        pts = np.einsum("qk,tkd->tqd", SUBCENTROIDS, p)
        vals = data(pts[..., 0], pts[..., 1])
        w = np.broadcast_to(mesh.areas()[:, None] / len(SUBCENTROIDS), vals.shape)
        return step_profile(vals, w)
    raise TypeError(f"cannot rearrange {type(data).__name__}")


def radial_source_profile(source: SourceSpec, measure: float, N: int, steps=MIN_STEPS) -> RearrangedProfile:
    """Rearrangement of a source centred in a ball of the given measure in R^N.

    Constant data and ball indicators are represented exactly; smooth radial
    data are discretized into ``steps`` cells of equal measure, each carrying
    its value at the cell's left end.
    """
    if not measure > 0:
        raise ValueError("measure must be positive")
    w = omega(N)
    a = float(source.amplitude)
    if source.kind == "constant" or a == 0:
        return RearrangedProfile([0.0, measure], [a])
    if source.kind == "disk_indicator":
        m = w * source.radius ** N
        if m >= measure:
            return RearrangedProfile([0.0, measure], [a])
        return RearrangedProfile([0.0, m, measure], [a, 0.0])
    s = np.linspace(0.0, measure, steps + 1)
    r_left = (s[:-1] / w) ** (1.0 / N)
    if source.kind == "gaussian":
        vals = a * np.exp(-r_left ** 2 / (2 * source.width ** 2))
    else:
        p = source.exponent
        R = (measure / w) ** (1.0 / N)
        if p >= 0:
            # increasing in |x|: the largest values sit on the outer shell
            vals = a * ((measure - s[:-1]) / w) ** (p / N)
            vals = np.maximum(vals, 0.0)
            vals[0] = a * R ** p
        else:
            # singular at the centre: use exact cell averages
            q = 1.0 + p / N
            if q <= 0:
                raise ValueError("radial power not integrable")
            vals = a * w ** (-p / N) * (s[1:] ** q - s[:-1] ** q) / (q * np.diff(s))
    return RearrangedProfile(s, np.minimum.accumulate(vals))


def schwarz_value(profile: RearrangedProfile, x, N: int) -> float:
    """h^#(x) = h*(omega_N |x|^N) on the ball of measure |Omega|."""
    r = float(np.linalg.norm(np.asarray(x, dtype=float)))
    w = omega(N)
    R = (profile.total_measure / w) ** (1.0 / N)
    if r > R * (1 + 1e-12):
        raise ValueError(f"point at radius {r} lies outside the ball of radius {R}")
    s = min(w * r ** N, profile.total_measure)
    if s >= profile.total_measure:
        return float(profile.values[-1]) if profile.is_step else float(profile.levels[0])
    return float(np.atleast_1d(profile(s))[0])


def lp_norm(data, p) -> float:
    """L^p norm (p in {1, 2, inf}) of a P1 field or a profile."""
    if p not in (1, 2, math.inf):
        raise ValueError(f"unsupported p={p}")
    if isinstance(data, ScalarField):
        vals = np.abs(data.values[data.mesh.triangles])
        area = data.mesh.areas()
        if p == math.inf:
            return float(np.abs(data.values).max())
        if p == 1:
            return float(np.sum(area * vals.mean(axis=1)))
        a, b, c = vals.T
        return math.sqrt(float(np.sum(area / 6 * (a * a + b * b + c * c + a * b + b * c + c * a))))
    if isinstance(data, RearrangedProfile):
        if p == math.inf:
            return data.max_value()
        val = data.power_integral(p)
        return val if p == 1 else math.sqrt(val)
    raise TypeError(f"cannot take a norm of {type(data).__name__}")


@dataclass(frozen=True)
class FConditionResult:
    satisfied: bool
    worst_s: float
    worst_ratio: float
    # sup of s^(1-2/N) F0(s) / (|Omega|^(1-2/N) F0(|Omega|)); always <= 1 by monotonicity
    monotone_form_ratio: float

    def to_dict(self):
        return {"satisfied": self.satisfied, "worst_s": self.worst_s, "worst_ratio": self.worst_ratio,
                "monotone_form_ratio": self.monotone_form_ratio}


def check_f_condition(f_star: RearrangedProfile, N: int, rtol=1e-12) -> FConditionResult:
    """Test  int_0^s f* <= (s/|Omega|)^(1-2/N) int_0^|Omega| f*  at every breakpoint."""
    if N < 2:
        raise ValueError("dimension must be at least 2")
    total = f_star.total()
    if total <= 0:
        return FConditionResult(True, 0.0, 0.0, 0.0)
    meas = f_star.total_measure
    s = f_star.breakpoints[1:]
    F0 = f_star.cumulative(s)
    alpha = 1.0 - 2.0 / N
    ratio = F0 / ((s / meas) ** alpha * total)
    k = int(np.argmax(ratio))
    mono = float(np.max((s / meas) ** alpha * F0) / total)
    worst = float(ratio[k])
    return FConditionResult(worst <= 1.0 + rtol, float(s[k]), worst, mono)


@dataclass(frozen=True)
class CumulativeF:
    """F0(s) = int_0^s f* and F(s) = int_0^s sigma^(2/N-1) F0(sigma) dsigma."""

    profile: RearrangedProfile
    N: int

    def F0(self, s):
        return self.profile.cumulative(s)

    def F(self, s):
        prof = self.profile
        if not prof.is_step:
            raise TypeError("F is defined for step profiles")
        e = 2.0 / self.N - 1.0
        bp, c = prof.breakpoints, prof.values
        K = prof._cum[:-1] - c * bp[:-1]  # F0 = K + c sigma on each step
        def piece(k, a, b):
            return K[k] * (b ** (e + 1) - a ** (e + 1)) / (e + 1) + c[k] * (b ** (e + 2) - a ** (e + 2)) / (e + 2)
        full = np.concatenate([[0.0], np.cumsum(piece(np.arange(len(c)), bp[:-1], bp[1:]))])
        s = np.clip(np.asarray(s, dtype=float), 0.0, prof.total_measure)
        idx = np.clip(np.searchsorted(bp, s, side="right") - 1, 0, len(c) - 1)
        return full[idx] + piece(idx, bp[idx], s)


def cumulative_and_F(f_star: RearrangedProfile, N: int) -> CumulativeF:
    if N < 2:
        raise ValueError("dimension must be at least 2")
    return CumulativeF(f_star, N)
