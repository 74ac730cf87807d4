import itertools

import numpy as np
import pytest

import corpus
from jacsdp.certify import (
    ExtractionError,
    extract_minimizers,
    flat_extension_check,
    numerical_rank,
    verify_candidate,
)
from jacsdp.detvar import OptProblem, phi_system
from jacsdp.polycore import Polynomial, parse_poly
from jacsdp.relaxation import assemble
from jacsdp.sdp import solve_refined


def moment_vector_of_atoms(basis, atoms, weights=None):
    """Moments of a finite atomic probability measure (independent oracle)."""
    if weights is None:
        weights = [1.0 / len(atoms)] * len(atoms)
    y = np.zeros(len(basis))
    for w, atom in zip(weights, atoms):
        for k, mono in enumerate(basis.monomials):
            y[k] += w * np.prod([x**e for x, e in zip(atom, mono.exponents)])
    return y


def plain_moment_sdp(n, order):
    """Unconstrained baseline SDP: just the moment matrix and y0 = 1."""
    f = Polynomial.variable(n, 0)
    return assemble(OptProblem(n, f), None, order, "baseline-putinar")


# -- numerical rank ------------------------------------------------------------


def test_rank_identity():
    assert numerical_rank(np.eye(3)) == 3


def test_rank_outer_product():
    v = np.array([1.0, -2.0, 0.5])
    assert numerical_rank(np.outer(v, v)) == 1


def test_rank_zero_matrix():
    assert numerical_rank(np.zeros((4, 4))) == 0


# -- flat extension -------------------------------------------------------------


def test_point_mass_is_flat():
    p = corpus.motzkin_ball()
    sdp = assemble(p, None, 3, "baseline-putinar")
    y = moment_vector_of_atoms(sdp.basis, [(0.1, -0.2, 0.3)])
    report = flat_extension_check(y, sdp)
    assert report.fec
    assert report.common_rank == 1
    assert all(rp.rank == rp.rank_prev for rp in report.rank_pairs if rp.rank_prev is not None)


def test_full_rank_moment_vector_is_not_flat():
    # moments of the uniform measure on [-1, 1]: full rank at every order
    sdp = plain_moment_sdp(1, 2)
    y = np.array([1.0 if k % 2 == 0 else 0.0 for k in range(5)])
    y = np.array([1.0, 0.0, 1 / 3, 0.0, 1 / 5])
    report = flat_extension_check(y, sdp)
    assert not report.fec
    assert report.rank_pairs[0].rank == 3
    assert report.rank_pairs[0].rank_prev == 2


def test_order_guard():
    sdp = plain_moment_sdp(1, 1)
    with pytest.raises(ValueError, match="N >= 2"):
        flat_extension_check(np.zeros(3), sdp)


# -- extraction -----------------------------------------------------------------


def test_extraction_recovers_point_mass_exactly():
    sdp = plain_moment_sdp(2, 2)
    u = (0.37, -1.21)
    y = moment_vector_of_atoms(sdp.basis, [u])
    points = extract_minimizers(y, sdp)
    assert len(points) == 1
    assert np.allclose(points[0], u, atol=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_extraction_round_trip_atomic_measures(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    k = int(rng.integers(1, 5))
    order = 3 if k <= 3 else 4
    atoms = [tuple(rng.uniform(-1.5, 1.5, size=n)) for _ in range(k)]
    weights = rng.uniform(0.2, 1.0, size=k)
    weights /= weights.sum()
    sdp = plain_moment_sdp(n, order)
    y = moment_vector_of_atoms(sdp.basis, atoms, weights)
    points = extract_minimizers(y, sdp, seed=seed)
    assert len(points) == k
    # Hausdorff match to 1e-6
    for atom in atoms:
        assert min(np.linalg.norm(np.array(p) - np.array(atom)) for p in points) < 1e-6
    for p in points:
        assert min(np.linalg.norm(np.array(p) - np.array(a)) for a in atoms) < 1e-6


def test_extraction_set_is_seed_invariant():
    rng = np.random.default_rng(123)
    atoms = [tuple(rng.uniform(-1, 1, size=2)) for _ in range(3)]
    sdp = plain_moment_sdp(2, 3)
    y = moment_vector_of_atoms(sdp.basis, atoms)
    sets = []
    for seed in (0, 1, 2):
        pts = extract_minimizers(y, sdp, seed=seed)
        sets.append(sorted(tuple(np.round(p, 6)) for p in pts))
    assert sets[0] == sets[1] == sets[2]


def test_extraction_refuses_without_flatness():
    sdp = plain_moment_sdp(1, 2)
    y = np.array([1.0, 0.0, 1 / 3, 0.0, 1 / 5])
    with pytest.raises(ExtractionError, match="flat-extension"):
        extract_minimizers(y, sdp)


# -- candidate verification -------------------------------------------------------


def test_verify_motzkin_ball_origin():
    p = corpus.motzkin_ball()
    check = verify_candidate((0.0, 0.0, 0.0), p, bound=-1.6948e-8, tol=1e-6)
    assert check.feasible
    assert check.objective == 0.0
    assert check.certified


def test_verify_infeasible_point():
    p = corpus.motzkin_ball()
    check = verify_candidate((1.0, 1.0, 1.0), p, bound=0.0, tol=1e-6)
    assert not check.feasible
    assert not check.certified
    assert check.min_inequality_value == pytest.approx(-2.0)


def test_verify_m5_minimizer():
    p = corpus.m5_quadratics()
    check = verify_candidate((corpus.M5_X1, 1.0), p, bound=27.9629, tol=1e-3)
    assert check.feasible
    assert check.certified
    assert check.gap_to_bound <= 1e-3


# -- end-to-end on the corpus -------------------------------------------------------


def test_m5_certificate_and_extraction():
    p = corpus.m5_quadratics()
    sdp = assemble(p, phi_system(p), 4, "jacobian-schmudgen")
    sol, refined, ycert = solve_refined(sdp)
    report = flat_extension_check(ycert, sdp)
    assert report.fec
    assert report.common_rank == 4
    points = extract_minimizers(ycert, sdp)
    expected = {(round(corpus.M5_X1, 3), 1.0), (round(corpus.M5_X1, 3), -1.0),
                (round(-corpus.M5_X1, 3), 1.0), (round(-corpus.M5_X1, 3), -1.0)}
    got = {(round(float(p_[0]), 3), round(float(p_[1]), 3)) for p_ in points}
    assert got == expected
    for point in points:
        check = verify_candidate(point, p, sol.primal_obj, tol=1e-3)
        assert check.certified


def test_robinson_certificate_and_extraction():
    p = corpus.robinson_eq()
    sdp = assemble(p, phi_system(p), 4, "jacobian-schmudgen")
    sol, refined, ycert = solve_refined(sdp)
    report = flat_extension_check(ycert, sdp)
    assert report.fec and report.common_rank == 1
    (point,) = extract_minimizers(ycert, sdp)
    assert np.allclose(point, [1 / 3, 1 / 3, 1 / 3], atol=1e-3)


def test_report_serializes():
    p = corpus.robinson_eq()
    sdp = assemble(p, phi_system(p), 4, "jacobian-schmudgen")
    _, _, ycert = solve_refined(sdp)
    report = flat_extension_check(ycert, sdp)
    blob = report.to_json_dict()
    assert blob["fec"] is True
    assert blob["rank_pairs"][0]["label"] == "1"
