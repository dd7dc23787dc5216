import math

import numpy as np
import pytest
import scipy.sparse as sp

from robinsym.fem import (
    DIRICHLET,
    AssemblyError,
    BoundaryCoefficient,
    CGNotConverged,
    ScalarField,
    SourceSpec,
    assemble,
    boundary_mass_matrix,
    boundary_trace_min,
    cg_solve,
    energy_value,
    l2_error,
    load_vector,
    solve_robin_problem,
    stiffness_matrix,
    write_field_csv,
    write_matrix_coo,
)
from robinsym.mesh import ShapeSpec, refine_uniform, triangulate

from _cases import disk_mesh


def disk_exact(beta, f=1.0, R=1.0):
    return lambda x, y: f * (R * R - x * x - y * y) / 4 + f * R / (2 * beta)


@pytest.fixture(scope="module")
def square():
    return triangulate(ShapeSpec.rectangle(1, 1, 1 / 8))


def test_stiffness_properties(square):
    K = stiffness_matrix(square)
    assert abs(K - K.T).max() < 1e-14
    assert np.allclose(K @ np.ones(square.n_vertices), 0.0, atol=1e-13)
    x, y = square.vertices.T
    # energy of a linear function equals |grad|^2 * area
    assert (x @ (K @ x)) == pytest.approx(1.0)
    assert ((2 * x - y) @ (K @ (2 * x - y))) == pytest.approx(5.0)


def test_boundary_mass_total(square):
    w = np.full(len(square.boundary_edges), 3.0)
    M = boundary_mass_matrix(square, w)
    one = np.ones(square.n_vertices)
    assert one @ (M @ one) == pytest.approx(12.0)
    x = square.vertices[:, 0]
    # int_{bdry} x^2: bottom and top give 1/3 each, right gives 1
    assert (x @ (M @ x)) / 3 == pytest.approx(2 / 3 + 1, rel=1e-12)


def test_load_vector_integrates_source(square):
    assert load_vector(square, SourceSpec.constant(2.5)).sum() == pytest.approx(2.5)
    g = SourceSpec("gaussian", amplitude=1.0, center=(0.5, 0.5), width=0.2)
    fine = refine_uniform(square)
    # int of the gaussian over the square (erf closed form)
    exact = (0.2 * math.sqrt(2 * math.pi) * math.erf(0.5 / (0.2 * math.sqrt(2)))) ** 2
    assert load_vector(fine, g).sum() == pytest.approx(exact, rel=1e-3)


def test_indicator_load_uses_refined_rule():
    m = triangulate(ShapeSpec.rectangle(2, 2, 0.1))
    src = SourceSpec("disk_indicator", amplitude=1.0, center=(1.0, 1.0), radius=0.5)
    assert src.cut_triangles(m).any()
    assert load_vector(m, src).sum() == pytest.approx(math.pi / 4, rel=5e-3)


def test_negative_source_rejected(square):
    with pytest.raises(ValueError):
        SourceSpec.constant(-1.0)
    with pytest.raises(AssemblyError):
        load_vector(square, SourceSpec("radial_power", exponent=-1.0, center=(1 / 16, 0.0)))


@pytest.mark.parametrize("bad", [0.0, -1.0, 1e20, math.nan])
def test_beta_bounds(bad):
    with pytest.raises(ValueError):
        BoundaryCoefficient.constant(bad)


def test_beta_marker_errors(square):
    with pytest.raises(AssemblyError):
        BoundaryCoefficient({9: 1.0}).edge_values(square)
    with pytest.raises(AssemblyError):
        BoundaryCoefficient({1: 1.0}).edge_values(square)
    with pytest.raises(ValueError):
        BoundaryCoefficient({0: lambda x, y: x - 0.5}).edge_values(square)


def test_beta_callable_and_reciprocal(square):
    beta = BoundaryCoefficient({0: lambda x, y: 1.0 + x})
    vals = beta.edge_values(square)
    assert vals.min() >= 1.0 and vals.max() <= 2.0
    mixed = BoundaryCoefficient({1: DIRICHLET, 0: 2.0})
    assert mixed.reciprocal_integral(square) == pytest.approx(1.5)


def test_cg_solves_spd_system():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((30, 30))
    A = sp.csr_matrix(B @ B.T + 30 * np.eye(30))
    b = rng.standard_normal(30)
    x, info = cg_solve(A, b, 1e-12)
    assert np.linalg.norm(A @ x - b) <= 1e-12 * np.linalg.norm(b) * 1.0001
    assert info.min_rayleigh > 0


def test_cg_reports_non_convergence():
    A = sp.diags(np.linspace(1, 1e6, 200)).tocsr() + sp.eye(200, k=1) * 0.1 + sp.eye(200, k=-1) * 0.1
    with pytest.raises(CGNotConverged) as exc:
        cg_solve(A, np.ones(200), 1e-14, maxiter=2)
    assert exc.value.iterations == 2
    with pytest.raises(ValueError):
        cg_solve(sp.diags([-1.0, 1.0]).tocsr(), np.ones(2))


def test_disk_second_order():
    m = disk_mesh()
    errs = []
    for _ in range(3):
        u = solve_robin_problem(m, BoundaryCoefficient.constant(2.0), SourceSpec.constant(1.0))
        errs.append(l2_error(u, disk_exact(2.0)))
        m = refine_uniform(m)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders > 1.8) & (orders < 2.2))


def test_dirichlet_square_torsion():
    m = triangulate(ShapeSpec.rectangle(1, 1, 1 / 32))
    u = solve_robin_problem(m, BoundaryCoefficient.constant(DIRICHLET), SourceSpec.constant(1.0))
    assert boundary_trace_min(u)[0] == 0.0
    assert np.all(u.values[m.boundary_vertices()] == 0.0)
    # torsion function of the unit square: maximum 0.0736713...
    assert u.values.max() == pytest.approx(0.07367135, rel=2e-3)


def test_robin_solution_positive_and_linear_in_source(square):
    beta = BoundaryCoefficient({1: 0.5, 2: 4.0, 0: 1.0})
    u1 = solve_robin_problem(square, beta, SourceSpec.constant(1.0))
    u3 = solve_robin_problem(square, beta, SourceSpec.constant(3.0))
    assert boundary_trace_min(u1)[1] > 0
    assert np.allclose(u3.values, 3 * u1.values, rtol=1e-8)
    assert u1.info["min_rayleigh"] > 0


def test_solution_minimizes_energy(square):
    beta = BoundaryCoefficient.constant(2.0)
    f = SourceSpec("gaussian", amplitude=2.0, center=(0.3, 0.6), width=0.25)
    u = solve_robin_problem(square, beta, f, 1e-13)
    e0 = energy_value(square, beta, u, f)
    assert e0 == pytest.approx(-0.5 * u.info["load"] @ u.values, rel=1e-10)
    rng = np.random.default_rng(1)
    for _ in range(5):
        w = ScalarField(square, u.values + 1e-3 * rng.standard_normal(square.n_vertices))
        assert energy_value(square, beta, w, f) > e0


def test_energy_infinite_off_dirichlet_constraint(square):
    beta = BoundaryCoefficient.constant(DIRICHLET)
    one = ScalarField(square, np.ones(square.n_vertices))
    assert energy_value(square, beta, one, SourceSpec.constant()) == math.inf


def test_assembly_free_dofs(square):
    asm = assemble(square, BoundaryCoefficient({1: DIRICHLET, 0: 1.0}), SourceSpec.constant())
    bottom = np.nonzero(np.isclose(square.vertices[:, 1], 0.0))[0]
    assert set(asm.dirichlet) == set(bottom)
    assert len(asm.free) == square.n_vertices - len(bottom)


def test_zero_source_gives_zero(square):
    u = solve_robin_problem(square, BoundaryCoefficient.constant(1.0), SourceSpec.constant(0.0))
    assert np.all(u.values == 0)


def test_scalar_field_validation(square):
    with pytest.raises(ValueError):
        ScalarField(square, np.zeros(3))
    with pytest.raises(ValueError):
        ScalarField(square, np.full(square.n_vertices, np.nan))


def test_writers(tmp_path, square):
    u = solve_robin_problem(square, BoundaryCoefficient.constant(1.0), SourceSpec.constant())
    write_field_csv(u, tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "vertex,x,y,value" and len(lines) == square.n_vertices + 1
    assert float(lines[5].split(",")[3]) == u.values[4]
    write_matrix_coo(stiffness_matrix(square), tmp_path / "K.txt")
    first = (tmp_path / "K.txt").read_text().splitlines()[0].split()
    assert first[:2] == ["0", "0"]
