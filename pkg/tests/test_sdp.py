from fractions import Fraction

import numpy as np
import pytest

import corpus
from jacsdp.detvar import phi_system
from jacsdp.polycore import Polynomial
from jacsdp.relaxation import (
    MomentBasis,
    RelaxationSDP,
    assemble,
    localizing_block,
)
from jacsdp.sdp import block_values, moment_matrix_values, solve, solve_refined

HANKEL_BASIS = MomentBasis.build(1, 1)
HANKEL_BLOCK = localizing_block(Polynomial.constant(1, 1), 1, HANKEL_BASIS)


def hankel_sdp(objective, rows, rhs):
    return RelaxationSDP(
        basis=HANKEL_BASIS,
        objective=objective,
        eq_rows=rows,
        eq_rhs=rhs,
        eq_multiplicity=tuple(1 for _ in rows),
        psd_blocks=(HANKEL_BLOCK,),
        variant="custom",
    )


def test_correlation_toy_has_analytic_optimum():
    # min y1 subject to [[1, y1], [y1, 1]] >= 0 has optimum -1
    sdp = hankel_sdp({1: Fraction(1)}, (((0, 1.0),), ((2, 1.0),)), (1.0, 1.0))
    sol = solve(sdp)
    assert sol.status == "optimal"
    assert sol.primal_obj == pytest.approx(-1.0, abs=1e-7)
    assert sol.gap <= 1e-6


def test_minimal_second_moment_is_zero():
    sdp = hankel_sdp({2: Fraction(1)}, (((0, 1.0),),), (1.0,))
    sol = solve(sdp)
    assert sol.status == "optimal"
    assert sol.primal_obj == pytest.approx(0.0, abs=1e-7)


def test_infeasible_equalities_detected():
    # y1 pinned to two different values
    sdp = hankel_sdp(
        {2: Fraction(1)}, (((0, 1.0),), ((1, 1.0),), ((1, 1.0), (0, 1e-9))), (1.0, 0.0, 1.0)
    )
    sol = solve(sdp)
    assert sol.status == "infeasible"


def test_psd_infeasible_detected():
    # y0 = 1, y2 = -1 cannot make the Hankel matrix PSD
    sdp = hankel_sdp({1: Fraction(1)}, (((0, 1.0),), ((2, 1.0),)), (1.0, -1.0))
    assert solve(sdp).status == "infeasible"


def test_unbounded_objective_detected():
    # min y1 with y2 free: slide to -infinity along y2 = y1^2
    sdp = hankel_sdp({1: Fraction(1)}, (((0, 1.0),),), (1.0,))
    assert solve(sdp).status == "unbounded"


def test_m5_bound_matches_global_minimum():
    p = corpus.m5_quadratics()
    sdp = assemble(p, phi_system(p), 4, "jacobian-schmudgen")
    sol = solve(sdp)
    assert sol.status in ("optimal", "near-optimal")
    assert sol.primal_obj == pytest.approx(corpus.M5_MINIMUM, abs=1e-3)
    assert sol.dual_obj <= sol.primal_obj + 1e-6


def test_converged_solve_contract():
    p = corpus.motzkin_ball()
    sdp = assemble(p, None, 4, "baseline-putinar")
    sol = solve(sdp)
    assert sol.status == "optimal"
    assert abs(sol.primal_obj - sol.dual_obj) <= 1e-5 * (1 + abs(sol.primal_obj))
    for block in sdp.psd_blocks:
        eigs = np.linalg.eigvalsh(block_values(sdp, sol.y, block))
        assert eigs.min() >= -1e-7 * max(1.0, eigs.max())
    assert sol.residuals["equality"] <= 1e-7


def test_solver_is_deterministic():
    p = corpus.m5_quadratics()
    sdp = assemble(p, phi_system(p), 4, "jacobian-schmudgen")
    a = solve(sdp)
    b = solve(sdp)
    assert a.iterations == b.iterations
    assert a.primal_obj == b.primal_obj
    assert a.dual_obj == b.dual_obj
    assert np.array_equal(a.y, b.y)


def test_moment_matrix_values_point_mass():
    y = np.zeros(3)
    y[0] = 1.0  # point mass at u = 0
    values = moment_matrix_values(y, HANKEL_BLOCK, HANKEL_BASIS)
    assert np.allclose(values, [[1.0, 0.0], [0.0, 0.0]])


def test_moment_matrix_values_outer_product():
    u = 0.7
    y = np.array([1.0, u, u**2])
    q = corpus.parse_poly("1 - x1^2", ["x1"])
    block = localizing_block(q, 1, HANKEL_BASIS)
    values = moment_matrix_values(y, block, HANKEL_BASIS)
    assert values.shape == (1, 1)
    assert values[0, 0] == pytest.approx(q.evaluate([u]) * 1.0, abs=1e-12)


def test_m5_solution_blocks_are_psd():
    p = corpus.m5_quadratics()
    sdp = assemble(p, phi_system(p), 4, "jacobian-schmudgen")
    sol = solve(sdp)
    for block in sdp.psd_blocks:
        eigs = np.linalg.eigvalsh(block_values(sdp, sol.y, block))
        assert eigs.min() >= -1e-7 * max(1.0, eigs.max())


def test_refinement_reduces_moment_rank():
    p = corpus.m5_quadratics()
    sdp = assemble(p, phi_system(p), 4, "jacobian-schmudgen")
    sol, refined, ycert = solve_refined(sdp)
    assert refined is not None
    mm = moment_matrix_values(ycert, sdp.psd_blocks[0], sdp.basis)
    eigs = np.linalg.eigvalsh(mm)[::-1]
    assert int(np.sum(eigs > 1e-6 * eigs[0])) == 4


def test_cross_check_against_external_solver():
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers

    solvers.options["show_progress"] = False
    p = corpus.motzkin_ball()
    sdp = assemble(p, None, 4, "baseline-putinar")
    m = sdp.num_moments
    c = np.zeros(m)
    for pos, coef in sdp.objective.items():
        c[pos] = float(coef)
    e = np.zeros((len(sdp.eq_rows), m))
    for k, row in enumerate(sdp.eq_rows):
        for pos, v in row:
            e[k, pos] = v
    rhs = np.array(sdp.eq_rhs)
    gs, hs = [], []
    for blk in sdp.psd_blocks:
        s = blk.size
        g = np.zeros((s * s, m))
        for alpha, entry in blk.coeffs.items():
            pos = sdp.basis.position(alpha)
            for (i, j), coef in entry.items():
                g[i * s + j, pos] -= float(coef)
                if i != j:
                    g[j * s + i, pos] -= float(coef)
        gs.append(matrix(g))
        hs.append(matrix(np.zeros((s, s))))
    try:
        ext = solvers.sdp(matrix(c), None, None, gs, hs, matrix(e), matrix(rhs))
    except (ZeroDivisionError, ValueError):  # cvxopt can die on degenerate SDPs
        pytest.skip("external solver failed numerically")
    if ext["status"] not in ("optimal", "unknown") or ext["primal objective"] is None:
        pytest.skip(f"external solver returned {ext['status']}")
    ours = solve(sdp)
    assert ours.primal_obj == pytest.approx(ext["primal objective"], abs=1e-5)
