"""Planar triangulations with marked boundary edges.

A :class:`TriMesh` stores counterclockwise triangles and the boundary edges
oriented as they appear in their owning triangle, so the outward normal of a
boundary edge ``(i, j)`` is the edge direction rotated clockwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

# marker 0 is reserved for "the whole boundary" in coefficient rules
WHOLE_BOUNDARY = 0

OBTUSE_TOL_DEG = 1e-9


@dataclass(frozen=True)
class ShapeSpec:
    """Geometry description consumed by :func:`triangulate`.

    ``kind`` is one of ``"rectangle"``, ``"disk"`` or ``"polygon"``.
    ``markers`` maps boundary piece names to marker ids.  Piece names are
    ``bottom/right/top/left`` for rectangles, ``boundary`` for disks and
    ``e0, e1, ...`` (edge from vertex i to i+1) for polygons.  Pieces not
    listed keep their default id (1, 2, ... in piece order).
    """

    kind: str
    h: float
    width: float = 1.0
    height: float = 1.0
    radius: float = 1.0
    segments: int = 64
    center: tuple[float, float] = (0.0, 0.0)
    vertices: tuple[tuple[float, float], ...] = ()
    markers: dict[str, int] = field(default_factory=dict)

    @classmethod
    def rectangle(cls, width, height, h, markers=None):
        return cls("rectangle", h, width=width, height=height, markers=dict(markers or {}))

    @classmethod
    def disk(cls, radius, segments, h, center=(0.0, 0.0), markers=None):
        return cls("disk", h, radius=radius, segments=int(segments),
                   center=tuple(center), markers=dict(markers or {}))

    @classmethod
    def polygon(cls, vertices, h, markers=None):
        verts = tuple((float(x), float(y)) for x, y in vertices)
        return cls("polygon", h, vertices=verts, markers=dict(markers or {}))

    def piece_names(self) -> list[str]:
        if self.kind == "rectangle":
            return ["bottom", "right", "top", "left"]
        if self.kind == "disk":
            return ["boundary"]
        return [f"e{i}" for i in range(len(self.vertices))]

    def marker_ids(self) -> dict[str, int]:
        names = self.piece_names()
        unknown = set(self.markers) - set(names)
        if unknown:
            raise ValueError(f"unknown boundary pieces {sorted(unknown)} for {self.kind}")
        ids = {name: i + 1 for i, name in enumerate(names)}
        for name, mid in self.markers.items():
            if int(mid) < 1:
                raise ValueError(f"marker id for {name!r} must be >= 1 (0 is reserved)")
            ids[name] = int(mid)
        return ids


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_markers: np.ndarray
    marker_table: dict[int, str] = field(default_factory=dict)
    # (cx, cy, radius) when the boundary approximates a circle; used to snap
    # boundary midpoints during refinement
    circle: tuple[float, float, float] | None = None

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges", "edge_markers"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas())

    def edge_lengths(self) -> np.ndarray:
        p = self.vertices[self.boundary_edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def edge_midpoints(self) -> np.ndarray:
        return self.vertices[self.boundary_edges].mean(axis=1)

    def outward_normals(self) -> np.ndarray:
        p = self.vertices[self.boundary_edges]
        d = p[:, 1] - p[:, 0]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def markers(self) -> list[int]:
        return sorted(set(int(m) for m in self.edge_markers))

    def max_edge_length(self) -> float:
        p = self.vertices[self.triangles]
        return float(max(np.linalg.norm(p[:, (k + 1) % 3] - p[:, k], axis=1).max() for k in range(3)))


def _unique_edges(triangles):
    """All edges as sorted pairs, with the triangle-edge -> unique-edge map."""
    tri_edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(tri_edges, axis=1)
    edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return tri_edges, edges, inverse.ravel(), counts


def _find_boundary(triangles):
    tri_edges, _, inverse, counts = _unique_edges(triangles)
    on_boundary = counts[inverse] == 1
    return tri_edges[on_boundary]


def mesh_from_triangles(vertices, triangles, marker_fn=None, marker_table=None, circle=None) -> TriMesh:
    """Build a mesh, discovering boundary edges and marking them with ``marker_fn(midpoints)``."""
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    flip = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    triangles = triangles.copy()
    triangles[flip] = triangles[flip][:, [0, 2, 1]]
    edges = _find_boundary(triangles)
    mids = vertices[edges].mean(axis=1)
    if marker_fn is None:
        markers = np.ones(len(edges), dtype=np.int64)
    else:
        markers = np.asarray(marker_fn(mids), dtype=np.int64)
    return TriMesh(vertices, triangles, edges, markers, dict(marker_table or {}), circle)


def _segment_marker_fn(polygon, ids):
    """Marker lookup by nearest polygon edge."""
    poly = np.asarray(polygon, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)

    def fn(mids):
        d = np.empty((len(mids), len(a)))
        for k in range(len(a)):
            ab = b[k] - a[k]
            t = np.clip(((mids - a[k]) @ ab) / (ab @ ab), 0.0, 1.0)
            d[:, k] = np.linalg.norm(mids - (a[k] + t[:, None] * ab), axis=1)
        return np.asarray(ids)[np.argmin(d, axis=1)]

    return fn


def _polygon_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _check_polygon(poly):
    from shapely.geometry import Polygon

    if len(poly) < 3:
        raise ValueError("degenerate polygon: fewer than 3 vertices")
    shp = Polygon(poly)
    if not shp.is_valid or shp.area <= 0 or not shp.exterior.is_simple:
        raise ValueError("degenerate polygon: not simple or zero area")
    if _polygon_area(poly) <= 0:
        raise ValueError("polygon must be counterclockwise")
    lengths = np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)
    if lengths.min() <= 1e-12 * lengths.max():
        raise ValueError("degenerate polygon: repeated vertex")
    return shp


def _grid_divisions(coords, length, h):
    """Smallest cell count >= length/h whose grid hits every coordinate."""
    rel = (np.unique(coords) - coords.min()) / length
    n0 = max(1, math.ceil(length / h - 1e-9))
    for n in range(n0, 4 * n0 + 8):
        if np.allclose(rel * n, np.round(rel * n), atol=1e-9):
            return n
    return None


def _structured(poly, h):
    """Right-triangle split of grid cells inside a rectilinear polygon, or None."""
    d = np.roll(poly, -1, axis=0) - poly
    if not np.all((np.abs(d[:, 0]) < 1e-14) | (np.abs(d[:, 1]) < 1e-14)):
        return None
    x0, y0 = poly.min(axis=0)
    width, height = poly.max(axis=0) - poly.min(axis=0)
    nx = _grid_divisions(poly[:, 0], width, h)
    ny = _grid_divisions(poly[:, 1], height, h)
    if nx is None or ny is None:
        return None
    xs = x0 + width * np.arange(nx + 1) / nx
    ys = y0 + height * np.arange(ny + 1) / ny
    xs[-1], ys[-1] = x0 + width, y0 + height
    from shapely import contains_xy
    from shapely.geometry import Polygon

    shp = Polygon(poly)
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    inside = contains_xy(shp, CX, CY)
    I, J = np.nonzero(inside)
    vid = lambda i, j: i * (ny + 1) + j  # noqa: E731
    v00, v10, v01, v11 = vid(I, J), vid(I + 1, J), vid(I, J + 1), vid(I + 1, J + 1)
    tris = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    used, tris = np.unique(tris, return_inverse=True)
    return verts[used], tris.reshape(-1, 3)


def _delaunay_polygon(poly, h):
    from shapely import contains_xy, points
    from shapely.geometry import Polygon

    shp = Polygon(poly)
    pts = []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        n = max(1, math.ceil(np.linalg.norm(b - a) / h - 1e-9))
        t = np.arange(n) / n
        pts.append(a + t[:, None] * (b - a))
    bpts = np.concatenate(pts)
    x0, y0 = poly.min(axis=0)
    x1, y1 = poly.max(axis=0)
    dy = h * math.sqrt(3) / 2
    rows = []
    for k, y in enumerate(np.arange(y0 + dy / 2, y1, dy)):
        xs = np.arange(x0 + (h / 2 if k % 2 else 0.0), x1 + h, h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    lattice = np.concatenate(rows)
    keep = contains_xy(shp, lattice[:, 0], lattice[:, 1])
    lattice = lattice[keep]
    if len(lattice):
        dist = shp.exterior.distance(points(lattice))
        lattice = lattice[dist > 0.5 * h]
    verts = np.concatenate([bpts, lattice])
    tri = Delaunay(verts).simplices
    cent = verts[tri].mean(axis=1)
    tri = tri[contains_xy(shp, cent[:, 0], cent[:, 1])]
    p = verts[tri]
    area = np.abs(0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                         - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])))
    if abs(area.sum() - shp.area) > 1e-10 * shp.area:
        raise ValueError("polygon triangulation does not conform to the boundary; try a smaller h")
    return verts, tri


def _disk_rings(radius, segments, h):
    if segments < 4:
        raise ValueError("disk needs at least 4 boundary segments")
    target = radius / h
    best = None
    for K in range(1, segments // 4 + 1):
        if segments % K or segments // K < 4:
            continue
        dev = abs(math.log(K / target))
        if dev <= math.log(2) + 1e-12 and (best is None or dev < best[0]):
            best = (dev, K)
    if best is None:
        raise ValueError(
            f"h={h} too large to resolve the disk or incompatible with {segments} boundary segments "
            "(need a ring count K dividing the segment count with radius/K within a factor 2 of h)"
        )
    return best[1]


def _disk(radius, segments, h, center):
    K = _disk_rings(radius, segments, h)
    m = segments // K
    pts = [np.zeros(2)]
    rings = [np.array([0])]
    for k in range(1, K + 1):
        count = m * k
        th = 2 * np.pi * np.arange(count) / count
        r = radius * k / K
        rings.append(np.arange(len(pts), len(pts) + count))
        pts.extend(np.column_stack([r * np.cos(th), r * np.sin(th)]))
    P = np.array(pts)
    r1 = rings[1]
    tris = [(0, r1[i], r1[(i + 1) % len(r1)]) for i in range(len(r1))]
    for k in range(1, K):
        A, B = rings[k], rings[k + 1]
        na, nb = len(A), len(B)
        i = j = 0
        # zip two rings together, always taking the shorter diagonal
        while i < na or j < nb:
            ai, ai1 = A[i % na], A[(i + 1) % na]
            bj, bj1 = B[j % nb], B[(j + 1) % nb]
            if i == na:
                take_outer = True
            elif j == nb:
                take_outer = False
            else:
                take_outer = np.linalg.norm(P[ai] - P[bj1]) <= np.linalg.norm(P[ai1] - P[bj])
            if take_outer:
                tris.append((ai, bj, bj1))
                j += 1
            else:
                tris.append((ai, bj, ai1))
                i += 1
    P[:, 0] += center[0]
    P[:, 1] += center[1]
    return P, np.array(tris)


def triangulate(spec: ShapeSpec) -> TriMesh:
    """Generate a conforming triangulation for ``spec`` with markers assigned."""
    if not spec.h > 0:
        raise ValueError("mesh size h must be positive")
    ids = spec.marker_ids()
    table = {mid: name for name, mid in ids.items()}
    if spec.kind == "disk":
        if spec.radius <= 0:
            raise ValueError("disk radius must be positive")
        if spec.h > 2 * spec.radius:
            raise ValueError("h too large to resolve the disk")
        P, T = _disk(spec.radius, spec.segments, spec.h, spec.center)
        mid = ids["boundary"]
        return mesh_from_triangles(P, T, lambda m: np.full(len(m), mid), table,
                                   circle=(spec.center[0], spec.center[1], float(spec.radius)))
    if spec.kind == "rectangle":
        if spec.width <= 0 or spec.height <= 0:
            raise ValueError("degenerate rectangle")
        w, hh = spec.width, spec.height
        poly = np.array([[0, 0], [w, 0], [w, hh], [0, hh]], dtype=float)
        names = ["bottom", "right", "top", "left"]
    elif spec.kind == "polygon":
        poly = np.array(spec.vertices, dtype=float)
        names = spec.piece_names()
    else:
        raise ValueError(f"unknown shape kind {spec.kind!r}")
    _check_polygon(poly)
    lengths = np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1)
    if spec.h > 2 * lengths.min():
        raise ValueError(f"h={spec.h} too large to resolve a boundary segment of length {lengths.min():g}")
    built = _structured(poly, spec.h)
    if built is None:
        if spec.kind == "rectangle":
            raise AssertionError("rectangle must mesh on a structured grid")
        built = _delaunay_polygon(poly, spec.h)
    P, T = built
    fn = _segment_marker_fn(poly, [ids[n] for n in names])
    return mesh_from_triangles(P, T, fn, table)


def refine_uniform(mesh: TriMesh) -> TriMesh:
    """Split every triangle into four through its edge midpoints."""
    T = mesh.triangles
    _, edges, inverse, counts = _unique_edges(T)
    nT = len(T)
    V = mesh.n_vertices
    mids = mesh.vertices[edges].mean(axis=1)
    if mesh.circle is not None:
        cx, cy, r = mesh.circle
        bnd = counts == 1
        d = mids[bnd] - (cx, cy)
        mids[bnd] = (cx, cy) + r * d / np.linalg.norm(d, axis=1)[:, None]
    verts = np.concatenate([mesh.vertices, mids])
    # midpoints of edges (01), (12), (20) of every triangle
    m01 = V + inverse[:nT]
    m12 = V + inverse[nT:2 * nT]
    m20 = V + inverse[2 * nT:]
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    tris = np.concatenate([
        np.column_stack([a, m01, m20]),
        np.column_stack([m01, b, m12]),
        np.column_stack([m20, m12, c]),
        np.column_stack([m01, m12, m20]),
    ])
    key = np.sort(mesh.boundary_edges, axis=1)
    idx = np.searchsorted(edges[:, 0] * (V + 1) + edges[:, 1], key[:, 0] * (V + 1) + key[:, 1])
    bm = V + idx
    be = mesh.boundary_edges
    new_edges = np.concatenate([np.column_stack([be[:, 0], bm]), np.column_stack([bm, be[:, 1]])])
    new_markers = np.concatenate([mesh.edge_markers, mesh.edge_markers])
    return TriMesh(verts, tris, new_edges, new_markers, dict(mesh.marker_table), mesh.circle)


def mesh_measures(mesh: TriMesh) -> dict:
    """Area and boundary length (total and per marker)."""
    lengths = mesh.edge_lengths()
    per_marker = {int(m): float(lengths[mesh.edge_markers == m].sum()) for m in mesh.markers()}
    return {
        "area": float(mesh.areas().sum()),
        "boundary_length": float(lengths.sum()),
        "boundary_length_per_marker": per_marker,
    }


@dataclass
class MeshDiagnostics:
    orientation_violations: int = 0
    tiling_violations: int = 0
    normal_violations: int = 0
    obtuse_triangles: int = 0
    max_angle_deg: float = 0.0
    messages: list[str] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return self.orientation_violations + self.tiling_violations + self.normal_violations

    @property
    def ok(self) -> bool:
        return self.violations == 0


def triangle_angles(mesh: TriMesh) -> np.ndarray:
    """Interior angles in degrees, shape (T, 3)."""
    p = mesh.vertices[mesh.triangles]
    out = np.empty((len(p), 3))
    for k in range(3):
        u = p[:, (k + 1) % 3] - p[:, k]
        v = p[:, (k + 2) % 3] - p[:, k]
        cos = (u * v).sum(1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out[:, k] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    return out


def validate_mesh(mesh: TriMesh) -> MeshDiagnostics:
    diag = MeshDiagnostics()
    sa = mesh.signed_areas()
    diag.orientation_violations = int((sa <= 0).sum())
    if diag.orientation_violations:
        diag.messages.append(f"{diag.orientation_violations} triangle(s) with nonpositive signed area")

    tri_edges, edges, inverse, counts = _unique_edges(mesh.triangles)
    over = int((counts > 2).sum())
    single = {tuple(e) for e in edges[counts == 1]}
    marked = [tuple(sorted(e)) for e in mesh.boundary_edges]
    marked_set = set(marked)
    missing = len(single - marked_set)
    extra = len(marked_set - single)
    dup = len(marked) - len(marked_set)
    diag.tiling_violations = over + missing + extra + dup
    if diag.tiling_violations:
        diag.messages.append(
            f"boundary tiling: {over} edge(s) shared by >2 triangles, {missing} unmarked boundary edge(s), "
            f"{extra} marked interior edge(s), {dup} duplicate(s)"
        )

    # outward normal test against the owning triangle's centroid
    owner = {}
    for t_idx, (i, j) in enumerate(tri_edges):
        owner.setdefault((min(i, j), max(i, j)), t_idx % len(mesh.triangles))
    normals = mesh.outward_normals()
    mids = mesh.edge_midpoints()
    cent = mesh.vertices[mesh.triangles].mean(axis=1)
    bad = 0
    for k, (i, j) in enumerate(mesh.boundary_edges):
        t = owner.get((min(i, j), max(i, j)))
        if t is None or np.dot(normals[k], mids[k] - cent[t]) <= 0:
            bad += 1
    diag.normal_violations = bad
    if bad:
        diag.messages.append(f"{bad} boundary edge(s) with inward normal")

    ang = triangle_angles(mesh)
    diag.max_angle_deg = float(ang.max()) if len(ang) else 0.0
    diag.obtuse_triangles = int((ang.max(axis=1) > 90.0 + OBTUSE_TOL_DEG).sum())
    return diag


def write_mesh(mesh: TriMesh, path) -> None:
    """Text format: ``V T E`` header, vertices, triangles, marked edges (0-based)."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_edges)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines += [f"{i} {j} {m}" for (i, j), m in zip(mesh.boundary_edges, mesh.edge_markers)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> TriMesh:
    tokens = Path(path).read_text().split("\n")
    V, T, E = (int(x) for x in tokens[0].split())
    body = tokens[1:]
    verts = np.array([[float(x) for x in line.split()] for line in body[:V]]).reshape(V, 2)
    tris = np.array([[int(x) for x in line.split()] for line in body[V:V + T]], dtype=np.int64).reshape(T, 3)
    rows = np.array([[int(x) for x in line.split()] for line in body[V + T:V + T + E]], dtype=np.int64).reshape(E, 3)
    return TriMesh(verts, tris, rows[:, :2], rows[:, 2])
