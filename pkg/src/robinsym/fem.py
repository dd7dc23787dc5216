"""P1 finite elements for -lap(u) = f with Robin / Dirichlet boundary data.

The discrete problem is the optimality system of the energy

    E(w) = 1/2 int |grad w|^2 + 1/2 int_{boundary} beta w^2 - int f w,

assembled as ``A = K + M_beta`` and ``b``.  Edges where ``beta`` is
:data:`DIRICHLET` are eliminated (their vertices carry the value 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import WHOLE_BOUNDARY, TriMesh

DIRICHLET = math.inf

DEFAULT_REL_TOL = 1e-10

# barycentric coordinates of the centroids of the 16 sub-triangles obtained by
# splitting a triangle twice through its edge midpoints
def _subcentroids(n=4):
    pts = []
    for i in range(n):
        for j in range(n - i):
            pts.append(((3 * i + 1) / (3 * n), (3 * j + 1) / (3 * n)))
            if i + j < n - 1:
                pts.append(((3 * i + 2) / (3 * n), (3 * j + 2) / (3 * n)))
    lam = np.array(pts)
    return np.column_stack([1 - lam.sum(axis=1), lam])


SUBCENTROIDS = _subcentroids()
EDGE_MIDPOINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])

# 6-point degree-4 rule (Dunavant)
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
DEGREE4_POINTS = np.array([
    [_B1, _A1, _A1], [_A1, _B1, _A1], [_A1, _A1, _B1],
    [_B2, _A2, _A2], [_A2, _B2, _A2], [_A2, _A2, _B2],
])
DEGREE4_WEIGHTS = np.array([_W1] * 3 + [_W2] * 3)


class AssemblyError(ValueError):
    pass


class CGNotConverged(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class BoundaryCoefficient:
    """Robin parameter per boundary marker.

    ``rules`` maps marker id to a positive float, :data:`DIRICHLET`, or a
    callable ``beta(x, y)`` sampled at edge midpoints.  Marker 0 supplies the
    value for every marker not listed explicitly.
    """

    rules: dict[int, float | Callable]
    lower: float = 1e-8
    upper: float = 1e12

    def __post_init__(self):
        for marker, rule in self.rules.items():
            if callable(rule):
                continue
            self._check(float(rule), marker)

    def _check(self, value, marker):
        if value == DIRICHLET:
            return
        if not (self.lower <= value <= self.upper) or not math.isfinite(value):
            raise ValueError(
                f"beta={value!r} on marker {marker} outside [{self.lower:g}, {self.upper:g}]; "
                "the Robin parameter must satisfy 0 < m <= beta <= M"
            )

    @classmethod
    def constant(cls, value):
        return cls({WHOLE_BOUNDARY: value})

    def edge_values(self, mesh: TriMesh) -> np.ndarray:
        """Beta on every boundary edge (``inf`` on Dirichlet edges)."""
        present = set(mesh.markers())
        absent = [m for m in self.rules if m != WHOLE_BOUNDARY and m not in present]
        if absent:
            raise AssemblyError(f"beta references marker(s) {absent} absent from the mesh")
        out = np.empty(len(mesh.boundary_edges))
        mids = mesh.edge_midpoints()
        for marker in present:
            sel = mesh.edge_markers == marker
            rule = self.rules.get(marker, self.rules.get(WHOLE_BOUNDARY))
            if rule is None:
                raise AssemblyError(f"no beta given for marker {marker}")
            if callable(rule):
                vals = np.asarray(rule(mids[sel, 0], mids[sel, 1]), dtype=float)
                vals = np.broadcast_to(vals, (int(sel.sum()),))
                for v in np.unique(vals):
                    self._check(float(v), marker)
                out[sel] = vals
            else:
                out[sel] = float(rule)
        return out

    def reciprocal(self, mesh: TriMesh) -> np.ndarray:
        """1/beta per edge with 1/DIRICHLET = 0 exactly."""
        beta = self.edge_values(mesh)
        rec = np.zeros_like(beta)
        finite = np.isfinite(beta)
        rec[finite] = 1.0 / beta[finite]
        return rec

    def reciprocal_integral(self, mesh: TriMesh) -> float:
        """Boundary integral of 1/beta, the left side of the balance condition."""
        return float(np.dot(mesh.edge_lengths(), self.reciprocal(mesh)))

    def scaled(self, c):
        rules = {}
        for k, r in self.rules.items():
            if callable(r):
                rules[k] = lambda x, y, r=r: c * np.asarray(r(x, y))
            else:
                rules[k] = r if r == DIRICHLET else c * r
        return BoundaryCoefficient(rules, self.lower, self.upper * max(1.0, c))


@dataclass(frozen=True)
class SourceSpec:
    """Nonnegative source term f.

    kinds: ``constant(value)``, ``radial_power(center, exponent, amplitude)``,
    ``gaussian(center, width, amplitude)``, ``disk_indicator(center, radius,
    amplitude)``.
    """

    kind: str
    amplitude: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    exponent: float = 0.0
    width: float = 1.0
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "radial_power", "gaussian", "disk_indicator"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if not self.amplitude >= 0:
            raise ValueError("source amplitude must be nonnegative")
        if self.kind == "gaussian" and not self.width > 0:
            raise ValueError("gaussian width must be positive")
        if self.kind == "disk_indicator" and not self.radius > 0:
            raise ValueError("indicator radius must be positive")

    @classmethod
    def constant(cls, value=1.0):
        return cls("constant", amplitude=value)

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant" or self.amplitude == 0 or (
            self.kind == "radial_power" and self.exponent == 0)

    @property
    def is_discontinuous(self) -> bool:
        return self.kind == "disk_indicator"

    def scaled(self, c):
        from dataclasses import replace
        return replace(self, amplitude=self.amplitude * c)

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast(x, y).shape, float(self.amplitude))
        r2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        if self.kind == "radial_power":
            with np.errstate(divide="ignore"):
                return self.amplitude * r2 ** (0.5 * self.exponent)
        if self.kind == "gaussian":
            return self.amplitude * np.exp(-r2 / (2 * self.width ** 2))
        return np.where(r2 < self.radius ** 2, float(self.amplitude), 0.0)

    def cut_triangles(self, mesh: TriMesh) -> np.ndarray:
        """Triangles crossed by the indicator circle (all False for smooth sources)."""
        if not self.is_discontinuous:
            return np.zeros(mesh.n_triangles, dtype=bool)
        p = mesh.vertices[mesh.triangles] - np.asarray(self.center)
        dmax = np.linalg.norm(p, axis=2).max(axis=1)
        dmin = np.full(len(p), np.inf)
        for k in range(3):
            a, b = p[:, k], p[:, (k + 1) % 3]
            ab = b - a
            t = np.clip(-(a * ab).sum(1) / (ab * ab).sum(1), 0, 1)
            dmin = np.minimum(dmin, np.linalg.norm(a + t[:, None] * ab, axis=1))
        cross = [p[:, (k + 1) % 3, 0] * p[:, k, 1] - p[:, (k + 1) % 3, 1] * p[:, k, 0] for k in range(3)]
        inside = np.all(np.array(cross) <= 0, axis=0)  # origin inside a ccw triangle
        dmin[inside] = 0.0
        return (dmin < self.radius) & (dmax > self.radius)


@dataclass(frozen=True, eq=False)
class ScalarField:
    mesh: TriMesh
    values: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_vertices,):
            raise ValueError(f"field has {vals.shape} values for {self.mesh.n_vertices} vertices")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", vals)


@dataclass
class Assembly:
    A: sp.csr_matrix
    b: np.ndarray
    dirichlet: np.ndarray  # sorted vertex indices
    stiffness: sp.csr_matrix
    boundary_mass: sp.csr_matrix

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(len(self.b), dtype=bool)
        mask[self.dirichlet] = False
        return np.nonzero(mask)[0]


def _gradients(mesh):
    p = mesh.vertices[mesh.triangles]
    area = mesh.signed_areas()
    # grad of barycentric coordinate k: rot(p_{k+2} - p_{k+1}) / (2 area)
    g = np.empty((len(p), 3, 2))
    for k in range(3):
        e = p[:, (k + 2) % 3] - p[:, (k + 1) % 3]
        g[:, k, 0] = -e[:, 1]
        g[:, k, 1] = e[:, 0]
    return g / (2 * area)[:, None, None], area


def stiffness_matrix(mesh: TriMesh) -> sp.csr_matrix:
    g, area = _gradients(mesh)
    local = np.einsum("tid,tjd->tij", g, g) * area[:, None, None]
    T = mesh.triangles
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def boundary_mass_matrix(mesh: TriMesh, weights: np.ndarray) -> sp.csr_matrix:
    """sum_e w_e (l_e/6) [[2,1],[1,2]] over boundary edges."""
    E = mesh.boundary_edges
    scale = weights * mesh.edge_lengths() / 6.0
    i, j = E[:, 0], E[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    vals = np.concatenate([2 * scale, 2 * scale, scale, scale])
    n = mesh.n_vertices
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _quadrature_samples(mesh: TriMesh, f: SourceSpec):
    """Per-triangle quadrature: (barycentric points, per-triangle weights, f values)."""
    p = mesh.vertices[mesh.triangles]
    area = mesh.areas()
    pts = np.einsum("qk,tkd->tqd", EDGE_MIDPOINTS, p)
    vals = f(pts[..., 0], pts[..., 1])
    lam = np.broadcast_to(EDGE_MIDPOINTS, (len(p), 3, 3))
    w = np.broadcast_to(area[:, None] / 3.0, (len(p), 3))
    return lam, w, vals


def load_vector(mesh: TriMesh, f: SourceSpec) -> np.ndarray:
    lam, w, vals = _quadrature_samples(mesh, f)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise AssemblyError("source must be finite and nonnegative at every quadrature point")
    local = np.einsum("tq,tq,tqk->tk", w, vals, lam)
    cut = f.cut_triangles(mesh)
    if cut.any():
        p = mesh.vertices[mesh.triangles[cut]]
        pts = np.einsum("qk,tkd->tqd", SUBCENTROIDS, p)
        sub = f(pts[..., 0], pts[..., 1])
        area = mesh.areas()[cut] / len(SUBCENTROIDS)
        local[cut] = np.einsum("t,tq,qk->tk", area, sub, SUBCENTROIDS)
    b = np.zeros(mesh.n_vertices)
    np.add.at(b, mesh.triangles.ravel(), local.ravel())
    return b


def assemble(mesh: TriMesh, beta: BoundaryCoefficient, f: SourceSpec) -> Assembly:
    """Matrix ``K + M_beta`` and load ``b`` of the weak form, plus Dirichlet vertices."""
    bvals = beta.edge_values(mesh)
    dirichlet_edge = ~np.isfinite(bvals)
    weights = np.where(dirichlet_edge, 0.0, bvals)
    K = stiffness_matrix(mesh)
    M = boundary_mass_matrix(mesh, weights)
    b = load_vector(mesh, f)
    dirichlet = np.unique(mesh.boundary_edges[dirichlet_edge])
    return Assembly((K + M).tocsr(), b, dirichlet, K, M)


@dataclass
class CGInfo:
    iterations: int
    residual: float
    min_rayleigh: float


def cg_solve(A, b, rel_tol=DEFAULT_REL_TOL, x0=None, maxiter=None):
    """Jacobi-preconditioned conjugate gradients.

    Returns ``(x, info)``.  Raises :class:`CGNotConverged` after ``10 * n``
    iterations.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    diag = A.diagonal() if sp.issparse(A) else np.diag(np.asarray(A))
    if np.any(diag <= 0):
        raise ValueError("operator is not positive definite (nonpositive diagonal)")
    inv_d = 1.0 / diag
    maxiter = 10 * n if maxiter is None else maxiter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    target = rel_tol * bnorm
    rnorm = np.linalg.norm(r)
    min_rq = math.inf
    if rnorm <= target:
        return x, CGInfo(0, float(rnorm), min_rq)
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        min_rq = min(min_rq, pAp / (p @ p))
        if pAp <= 0:
            raise CGNotConverged("operator is not positive definite", float(rnorm), it)
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            return x, CGInfo(it, float(rnorm), float(min_rq))
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise CGNotConverged(f"CG did not converge in {maxiter} iterations (residual {rnorm:.3e})",
                         float(rnorm), maxiter)


def solve_robin_problem(mesh: TriMesh, beta: BoundaryCoefficient, f: SourceSpec,
                        rel_tol=DEFAULT_REL_TOL) -> ScalarField:
    asm = assemble(mesh, beta, f)
    free = asm.free
    u = np.zeros(mesh.n_vertices)
    info = CGInfo(0, 0.0, math.inf)
    if len(free) and np.any(asm.b[free] != 0):
        A = asm.A[free][:, free]
        u[free], info = cg_solve(A, asm.b[free], rel_tol)
    return ScalarField(mesh, u, {"cg_iterations": info.iterations, "cg_residual": info.residual,
                                 "min_rayleigh": info.min_rayleigh, "load": asm.b})


def energy_value(mesh: TriMesh, beta: BoundaryCoefficient, field: ScalarField, f: SourceSpec) -> float:
    """Discrete energy 1/2 |grad w|^2 + 1/2 beta w^2 - f w, exact for P1 ``w``."""
    if field.mesh is not mesh:
        raise ValueError("field lives on a different mesh")
    w = field.values
    bvals = beta.edge_values(mesh)
    dirichlet_edge = ~np.isfinite(bvals)
    if np.any(w[mesh.boundary_edges[dirichlet_edge]] != 0):
        return math.inf
    K = stiffness_matrix(mesh)
    M = boundary_mass_matrix(mesh, np.where(dirichlet_edge, 0.0, bvals))
    b = load_vector(mesh, f)
    return float(0.5 * w @ (K @ w) + 0.5 * w @ (M @ w) - b @ w)


def boundary_trace_min(field: ScalarField) -> tuple[float, float]:
    """(minimum over boundary vertices, minimum over all vertices)."""
    bv = field.mesh.boundary_vertices()
    return float(field.values[bv].min()), float(field.values.min())


def interpolate(mesh: TriMesh, fn) -> ScalarField:
    return ScalarField(mesh, fn(mesh.vertices[:, 0], mesh.vertices[:, 1]))


def l2_error(field: ScalarField, exact) -> float:
    """L2 norm of ``field - exact`` on the mesh by a degree-4 rule."""
    mesh = field.mesh
    p = mesh.vertices[mesh.triangles]
    pts = np.einsum("qk,tkd->tqd", DEGREE4_POINTS, p)
    uh = DEGREE4_POINTS @ field.values[mesh.triangles].T  # (q, t)
    diff = uh.T - exact(pts[..., 0], pts[..., 1])
    return float(math.sqrt(np.sum(mesh.areas()[:, None] * DEGREE4_WEIGHTS * diff ** 2)))


def write_field_csv(field: ScalarField, path) -> None:
    v = field.mesh.vertices
    rows = ["vertex,x,y,value"]
    rows += [f"{i},{x:.17g},{y:.17g},{u:.17g}" for i, ((x, y), u) in enumerate(zip(v, field.values))]
    Path(path).write_text("\n".join(rows) + "\n")


def write_matrix_coo(A, path) -> None:
    coo = sp.coo_matrix(A)
    order = np.lexsort((coo.col, coo.row))
    rows = [f"{i} {j} {x:.17g}" for i, j, x in zip(coo.row[order], coo.col[order], coo.data[order])]
    Path(path).write_text("\n".join(rows) + "\n")
