import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbpdp import jsonio
from sbpdp.errors import BlocksOverlapError, ConstructionInfeasibleError
from sbpdp.sbp1d import (
    CertificateReport,
    Grid1D,
    OperatorKind,
    SbpOperator1D,
    assemble_constraint_system,
    coefficient_objective,
    construct_classical,
    construct_degree_preserving,
    interior_stencil,
    quadrature_degree,
    truncation_objective,
    uniform_grid,
    verify_sbp,
)


@pytest.fixture(scope="module")
def dp_ops():
    return {(p, n): construct_degree_preserving(p, n)
            for p in (1, 2, 3) for n in (16, 22)}


@pytest.fixture(scope="module")
def cl_ops():
    return {(p, n): construct_classical(p, n)
            for p in (1, 2, 3) for n in (16, 22)}


# ---------------------------------------------------------------------------
# grids


def test_uniform_grid_endpoints_only():
    g = uniform_grid(2)
    assert np.allclose(g.nodes, [-1.0, 1.0])


def test_uniform_grid_midpoint():
    g = uniform_grid(3)
    assert np.allclose(g.nodes, [-1.0, 0.0, 1.0])


def test_uniform_grid_22_nodes():
    g = uniform_grid(22)
    assert g.n == 22
    assert np.abs(np.diff(g.nodes) - 2.0 / 21.0).max() < 1e-14
    assert g.nodes[0] == -1.0 and g.nodes[-1] == 1.0


def test_uniform_grid_rejects_tiny():
    with pytest.raises(ValueError):
        uniform_grid(1)


def test_grid_rejects_unsorted():
    with pytest.raises(ValueError):
        Grid1D(np.array([-1.0, 0.5, 0.25, 1.0]))


# ---------------------------------------------------------------------------
# interior stencils


def test_stencil_p1():
    assert np.allclose(interior_stencil(1), [-0.5, 0.0, 0.5])


def test_stencil_p2():
    assert np.allclose(interior_stencil(2),
                       [1 / 12, -2 / 3, 0.0, 2 / 3, -1 / 12])


def test_stencil_p3_against_vandermonde_oracle():
    # independent oracle: solve sum_m c_m m^k = delta_{k,1} numerically
    offsets = np.arange(-3, 4, dtype=float)
    vand = np.array([offsets**k for k in range(7)])
    rhs = np.zeros(7)
    rhs[1] = 1.0
    oracle = np.linalg.solve(vand, rhs)
    assert np.abs(interior_stencil(3) - oracle).max() < 1e-14


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_stencil_antisymmetric_zero_sum(p):
    c = interior_stencil(p)
    assert c.size == 2 * p + 1
    assert np.abs(c + c[::-1]).max() == 0.0
    assert abs(c.sum()) < 1e-15


def test_stencil_rejects_out_of_range():
    for p in (0, 5):
        with pytest.raises(ValueError):
            interior_stencil(p)


# ---------------------------------------------------------------------------
# constraint system


def test_constraint_system_recovers_trapezoid_norm():
    # oracle: with one free weight the two active constraints force the
    # composite trapezoidal rule h = (1/2, 1, 1/2) * spacing
    grid = uniform_grid(3)
    system = assemble_constraint_system(grid, p=1, bp=1, target_norm_degree=1)
    x = system.solution()
    h, q = system.structure.assemble(x)
    assert abs(h[0] - 0.5) < 1e-12
    assert np.allclose(grid.spacing * h, [0.5, 1.0, 0.5], atol=1e-12)
    # first-column structure: corner plus mirrored stencil entries
    assert abs(q[0, 0] + 0.5) < 1e-15


def test_constraint_particular_satisfies_system():
    grid = uniform_grid(22)
    system = assemble_constraint_system(grid, p=2, bp=5, target_norm_degree=4)
    res = np.linalg.norm(system.matrix @ system.particular - system.rhs)
    assert res <= 1e-12


def test_constraint_k0_row_annihilates_constants():
    grid = uniform_grid(16)
    system = assemble_constraint_system(grid, p=2, bp=5, target_norm_degree=4)
    _, q = system.structure.assemble(system.solution())
    assert np.abs(q @ np.ones(16)).max() < 1e-12


def test_constraint_blocks_overlap():
    with pytest.raises(BlocksOverlapError):
        assemble_constraint_system(uniform_grid(8), p=2, bp=5,
                                   target_norm_degree=4)


def test_constraint_inconsistent_raises():
    # a single free boundary weight cannot buy quadrature degree 4
    with pytest.raises(ConstructionInfeasibleError):
        assemble_constraint_system(uniform_grid(12), p=1, bp=1,
                                   target_norm_degree=4)


# ---------------------------------------------------------------------------
# constructors


def test_classical_p3_n22_certificates(cl_ops):
    op = cl_ops[(3, 22)]
    assert op.kind is OperatorKind.CLASSICAL
    assert op.bp == 6
    assert op.norm_degree == 5
    assert np.abs(op.q + op.q.T - op.e).max() <= 1e-10
    assert np.abs(op.d @ np.ones(22)).max() <= 1e-12


def test_classical_norm_degree_is_exactly_2pm1(cl_ops):
    for (p, _n), op in cl_ops.items():
        assert quadrature_degree(op.h_diag, op.grid) == 2 * p - 1


def test_classical_matches_literature_p2():
    # the unique width-4 block operator has h_1 = 17/48
    op = construct_classical(2, 16)
    assert abs(op.h_diag[0] / op.grid.spacing - 17.0 / 48.0) < 1e-9


def test_degree_preserving_p3_n22_norm_degree(dp_ops):
    assert dp_ops[(3, 22)].norm_degree == 7


def test_degree_preserving_p2_block_width(dp_ops):
    op = dp_ops[(2, 22)]
    assert op.bp == 5
    interior = op.h_diag[op.bp:op.n - op.bp] / op.grid.spacing
    assert np.abs(interior - 1.0).max() < 1e-14


def test_degree_preserving_first_moment_vanishes(dp_ops):
    for op in dp_ops.values():
        assert abs(op.h_diag @ op.grid.nodes) <= 1e-12


def test_degree_preserving_quadrature_at_least_2p(dp_ops):
    for (p, _n), op in dp_ops.items():
        assert quadrature_degree(op.h_diag, op.grid) >= 2 * p


def test_degree_preserving_too_few_nodes():
    with pytest.raises(BlocksOverlapError):
        construct_degree_preserving(2, 8)


def test_accuracy_invariant(dp_ops, cl_ops):
    for op in list(dp_ops.values()) + list(cl_ops.values()):
        xi = op.grid.nodes
        for k in range(op.p + 1):
            dmono = k * xi ** (k - 1) if k else np.zeros_like(xi)
            assert np.abs(op.d @ xi**k - dmono).max() <= 1e-9 * op.n


def test_norm_symmetric_about_midpoint(dp_ops):
    for op in dp_ops.values():
        assert np.abs(op.h_diag - op.h_diag[::-1]).max() <= 1e-12


def test_optimization_monotone_in_truncation_objective():
    grid = uniform_grid(22)
    op = construct_degree_preserving(3, 22)
    system = assemble_constraint_system(grid, 3, op.bp, 6)
    h_part, q_part = system.structure.assemble(system.particular)
    if h_part[:op.bp].min() > 0:
        unopt = SbpOperator1D(grid=grid, p=3, h_diag=grid.spacing * h_part,
                              q=q_part, bp=op.bp, norm_degree=0,
                              kind=OperatorKind.DEGREE_PRESERVING)
        assert truncation_objective(op) <= truncation_objective(unopt) * (1 + 1e-9)


# ---------------------------------------------------------------------------
# objectives


def test_truncation_objective_nonnegative(dp_ops):
    for op in dp_ops.values():
        assert truncation_objective(op) >= 0.0


def test_truncation_objective_zero_when_exact():
    # p=1 operator applied with p=0 bookkeeping differentiates xi exactly
    op = construct_degree_preserving(1, 16)
    probe = SbpOperator1D(grid=op.grid, p=0, h_diag=op.h_diag, q=op.q,
                          bp=op.bp, norm_degree=op.norm_degree, kind=op.kind)
    assert truncation_objective(probe) < 1e-22


def test_truncation_objective_dense_oracle():
    op = construct_degree_preserving(2, 22)
    h_mat = np.diag(op.h_diag)
    eps = np.linalg.solve(h_mat, op.q @ op.grid.nodes**3) - 3 * op.grid.nodes**2
    oracle = eps @ h_mat @ eps
    value = truncation_objective(op)
    assert abs(value - oracle) <= 1e-12 * max(1.0, abs(oracle))


def test_coefficient_objective_examples():
    grid = uniform_grid(4)
    zero = SbpOperator1D(grid=grid, p=1, h_diag=np.ones(4),
                         q=np.zeros((4, 4)), bp=1, norm_degree=0,
                         kind=OperatorKind.CLASSICAL)
    assert coefficient_objective(zero) == 0.0
    corners = np.zeros((4, 4))
    corners[0, 0] = -0.5
    corners[-1, -1] = 0.5
    only_corners = SbpOperator1D(grid=grid, p=1, h_diag=np.ones(4),
                                 q=corners, bp=1, norm_degree=0,
                                 kind=OperatorKind.CLASSICAL)
    assert coefficient_objective(only_corners) == 0.5


@given(st.integers(min_value=4, max_value=10), st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_coefficient_objective_sign_invariance(n, seed):
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((n, n))
    grid = uniform_grid(n)
    a = SbpOperator1D(grid=grid, p=1, h_diag=np.ones(n), q=q, bp=1,
                      norm_degree=0, kind=OperatorKind.CLASSICAL)
    b = SbpOperator1D(grid=grid, p=1, h_diag=np.ones(n), q=-q.T, bp=1,
                      norm_degree=0, kind=OperatorKind.CLASSICAL)
    assert abs(coefficient_objective(a) - coefficient_objective(b)) < 1e-12


# ---------------------------------------------------------------------------
# verification and quadrature scanning


def test_verify_classical_p3(cl_ops):
    rep = verify_sbp(cl_ops[(3, 22)])
    assert rep.passed
    assert rep.accuracy_degree >= 3
    assert rep.norm_degree == 5


def test_verify_degree_preserving_p3(dp_ops):
    rep = verify_sbp(dp_ops[(3, 22)])
    assert rep.passed
    assert rep.norm_degree == 7


def test_verify_flags_zero_derivative():
    grid = uniform_grid(8)
    fake = SbpOperator1D(grid=grid, p=1,
                         h_diag=np.full(8, 0.25), q=np.zeros((8, 8)),
                         bp=1, norm_degree=0, kind=OperatorKind.CLASSICAL)
    rep = verify_sbp(fake)
    assert not rep.passed
    assert rep.accuracy_degree < 1


def test_quadrature_degree_trapezoid():
    grid = Grid1D(np.array([-1.0, 1.0]))
    assert quadrature_degree(np.array([1.0, 1.0]), grid) == 1


def test_quadrature_degree_simpson():
    grid = uniform_grid(3)
    assert quadrature_degree(np.array([1 / 3, 4 / 3, 1 / 3]), grid) == 3


def test_quadrature_degree_gauss4_oracle():
    # oracle: numpy's Gauss-Legendre rule, degree 2n-1 = 7
    nodes, weights = np.polynomial.legendre.leggauss(4)
    grid_nodes = np.concatenate(([-1.0], nodes, [1.0]))
    h = np.concatenate(([0.0], weights, [0.0]))
    # scan moments directly; endpoint padding keeps the Grid1D contract
    degree = quadrature_degree(h, Grid1D(grid_nodes))
    assert degree == 7


# ---------------------------------------------------------------------------
# serialization and determinism


def test_roundtrip_and_determinism(tmp_path):
    op1 = construct_degree_preserving(2, 16)
    op2 = construct_degree_preserving(2, 16)
    f1 = tmp_path / "a.json"
    f2 = tmp_path / "b.json"
    op1.save(f1)
    op2.save(f2)
    assert f1.read_bytes() == f2.read_bytes()
    back = SbpOperator1D.load(f1)
    assert np.array_equal(back.q, op1.q)
    assert np.array_equal(back.h_diag, op1.h_diag)
    assert back.kind is op1.kind and back.norm_degree == op1.norm_degree
    assert verify_sbp(back).passed


def test_serialized_floats_carry_17_digits(tmp_path):
    op = construct_classical(2, 12)
    path = tmp_path / "op.json"
    op.save(path)
    text = path.read_text()
    # h_1 = 17/48 * spacing is non-terminating in binary; its 17-digit
    # form must appear verbatim
    assert format(op.h_diag[0], ".17g") in text
    reloaded = SbpOperator1D.load(path)
    assert np.array_equal(reloaded.h_diag, op.h_diag)


def test_certificate_report_dict(dp_ops):
    rep = verify_sbp(dp_ops[(1, 16)])
    data = rep.as_dict()
    assert data["passed"] is True
    assert {c["name"] for c in data["checks"]} >= {
        "norm_positive", "sbp_identity", "accuracy", "quadrature_degree"}
