import itertools
import math
from functools import lru_cache

import numpy as np
import pytest
import scipy.optimize

import corpus
from jacsdp.detvar import (
    AugmentedSystem,
    OptProblem,
    admissible_active_sets,
    eta_count,
    eta_generators,
    inactive_system,
    jacobian_columns,
    m_bound,
    minor_rank,
    phi_system,
    psi_system,
)
from jacsdp.polycore import (
    Monomial,
    PolyMatrix,
    Polynomial,
    gradient,
    minor,
    monomials_up_to,
    parse_poly,
    partial,
    poly_to_str,
)


def indeterminate_matrix(n, k):
    nv = n * k
    grid = tuple(
        tuple(Polynomial.variable(nv, i * k + j) for j in range(k)) for i in range(n)
    )
    return PolyMatrix(n, k, grid)


# -- m_bound ------------------------------------------------------------------


@pytest.mark.parametrize("m1,m2,n,expected", [(0, 3, 2, 1), (1, 0, 3, 1), (0, 0, 5, 0)])
def test_m_bound(m1, m2, n, expected):
    assert m_bound(m1, m2, n) == expected


# -- Jacobian assembly ----------------------------------------------------------


def test_jacobian_unconstrained_single_column():
    p = corpus.unconstrained_octic()
    jac = jacobian_columns(p, ())
    assert (jac.rows, jac.cols) == (3, 1)
    assert [jac.entry(i, 0) for i in range(3)] == gradient(p.objective)


def test_jacobian_m5_active_first():
    p = corpus.m5_quadratics()
    jac = jacobian_columns(p, (0,))
    assert (jac.rows, jac.cols) == (2, 2)
    assert jac.entry(0, 0) == parse_poly("2*x1", corpus.X2)
    assert jac.entry(1, 0) == parse_poly("2*x2", corpus.X2)
    assert jac.entry(0, 1).is_zero()
    assert jac.entry(1, 1) == parse_poly("2*x2", corpus.X2)


def test_jacobian_robinson_constant_column():
    p = corpus.robinson_eq()
    jac = jacobian_columns(p, ())
    assert (jac.rows, jac.cols) == (3, 2)
    one = Polynomial.constant(3, 1)
    assert [jac.entry(i, 1) for i in range(3)] == [one, one, one]


def test_jacobian_rejects_wide_matrices():
    p = corpus.m5_quadratics()
    with pytest.raises(ValueError, match="columns"):
        jacobian_columns(p, (0, 1))


# -- minor rank ---------------------------------------------------------------


@pytest.mark.parametrize(
    "rows,expected",
    [((0, 1, 2), 1), ((0, 1, 5), 4), ((3, 4, 5), 10)],
)
def test_minor_rank_paper_diagram(rows, expected):
    assert minor_rank(rows) == expected


def test_minor_rank_rejects_unsorted():
    with pytest.raises(ValueError):
        minor_rank((2, 1))


def brute_force_rank(rows, n):
    """Longest descending chain in the minor partial order (oracle)."""
    k = len(rows)
    index_sets = list(itertools.combinations(range(n), k))

    @lru_cache(maxsize=None)
    def chain(target):
        best = 1
        s = sum(target)
        for other in index_sets:
            if sum(other) < s and all(a <= b for a, b in zip(other, target)):
                best = max(best, 1 + chain(other))
        return best

    return chain(tuple(rows))


def test_minor_rank_matches_longest_chain_oracle():
    for n in range(1, 9):
        for k in range(1, min(n, 4) + 1):
            for rows in itertools.combinations(range(n), k):
                assert minor_rank(rows) == brute_force_rank(rows, n), (n, k, rows)


# -- minimal generators ---------------------------------------------------------


def test_eta_n6_k3_matches_diagram():
    m = indeterminate_matrix(6, 3)
    etas = eta_generators(m)
    assert len(etas) == 10
    cols = (0, 1, 2)
    assert etas[0] == minor(m, (0, 1, 2), cols)
    assert etas[3] == (
        minor(m, (0, 1, 5), cols) + minor(m, (0, 2, 4), cols) + minor(m, (1, 2, 3), cols)
    )
    assert etas[9] == minor(m, (3, 4, 5), cols)


def test_eta_square_case_is_determinant():
    m = indeterminate_matrix(2, 2)
    etas = eta_generators(m)
    assert len(etas) == 1
    assert etas[0] == minor(m, (0, 1), (0, 1))


def test_eta_k2_row_sums():
    n = 5
    m = indeterminate_matrix(n, 2)
    etas = eta_generators(m)
    assert len(etas) == 2 * n - 3
    for ell, eta in enumerate(etas, start=1):
        expected = Polynomial.zero(m.nvars)
        for i, j in itertools.combinations(range(n), 2):
            if (i + 1) + (j + 1) == ell + 2:
                expected = expected + minor(m, (i, j), (0, 1))
        assert eta == expected


def test_eta_constant_index_sum_structure():
    # each generator sums exactly the minors of one index-sum class
    for n, k in [(4, 2), (5, 3), (6, 3), (4, 4)]:
        m = indeterminate_matrix(n, k)
        etas = eta_generators(m)
        assert len(etas) == eta_count(n, k)
        for ell, eta in enumerate(etas, start=1):
            target = ell + math.comb(k + 1, 2) - 1
            expected = Polynomial.zero(m.nvars)
            for rows in itertools.combinations(range(n), k):
                if sum(i + 1 for i in rows) == target:
                    expected = expected + minor(m, rows, tuple(range(k)))
            assert eta == expected


def test_eta_rejects_wide_matrix():
    with pytest.raises(ValueError):
        eta_generators(indeterminate_matrix(2, 3))


@pytest.mark.parametrize("n,k", [(n, k) for n in range(2, 7) for k in range(2, min(n, 4) + 1)])
def test_eta_vanishing_matches_maximal_minors(n, k):
    """Numeric variety oracle: all eta vanish iff all maximal minors vanish."""
    sym = indeterminate_matrix(n, k)
    etas = eta_generators(sym)
    rng = np.random.default_rng(n * 100 + k)
    row_sets = list(itertools.combinations(range(n), k))
    for sample in range(100):
        full = rng.standard_normal((n, k))
        low = rng.standard_normal((n, k - 1)) @ rng.standard_normal((k - 1, k))
        for mat in (full, low):
            mat = mat / max(np.linalg.norm(mat), 1e-30)
            point = mat.reshape(-1)
            eta_vals = np.array([e.evaluate(point) for e in etas])
            minor_vals = np.array(
                [np.linalg.det(mat[np.ix_(rows, range(k))]) for rows in row_sets]
            )
            assert (np.max(np.abs(eta_vals)) <= 1e-8) == (
                np.max(np.abs(minor_vals)) <= 1e-8
            )


# -- phi system -----------------------------------------------------------------


def test_phi_m5_structure():
    p = corpus.m5_quadratics()
    aug = phi_system(p)
    f = p.objective
    g1, g2, g3 = p.inequalities
    f1, f2 = partial(f, 0), partial(f, 1)
    expected = [
        g1 * g2 * g3 * f1,
        g1 * g2 * g3 * f2,
        (f1 * partial(g1, 1) - f2 * partial(g1, 0)) * g2 * g3,
        (f1 * partial(g2, 1) - f2 * partial(g2, 0)) * g1 * g3,
        (f1 * partial(g3, 1) - f2 * partial(g3, 0)) * g1 * g2,
    ]
    assert list(aug.generators) == expected
    assert aug.provenance == (((), 1), ((), 2), ((0,), 1), ((1,), 1), ((2,), 1))


@pytest.mark.parametrize("n", [2, 3, 4])
def test_phi_single_inequality_matches_display(n):
    """With one inequality the system is {g*df/dxi} + the 2x2 minor sums."""
    rng = np.random.default_rng(n)
    basis = monomials_up_to(n, 3)

    def random_poly():
        picks = rng.choice(len(basis), size=4, replace=False)
        return Polynomial(
            n, {basis[i]: int(rng.integers(-3, 4)) or 1 for i in picks}
        )

    f, g = random_poly(), random_poly()
    p = OptProblem(n, f, inequalities=(g,))
    aug = phi_system(p)
    assert len(aug.generators) == 3 * (n - 1)

    fs = gradient(f)
    gs = gradient(g)
    expected = [g * fi for fi in fs]
    for ell in range(3, 2 * n):  # display indices 3 .. 2n-1
        acc = Polynomial.zero(n)
        for i, j in itertools.combinations(range(n), 2):
            if (i + 1) + (j + 1) == ell:
                acc = acc + (fs[i] * gs[j] - fs[j] * gs[i])
        expected.append(acc)
    got = sorted(poly_to_str(q) for q in aug.generators)
    want = sorted(poly_to_str(q) for q in expected)
    assert got == want


def test_phi_equality_only_count():
    rng = np.random.default_rng(5)
    for n, m in [(3, 1), (4, 2), (5, 3)]:
        f = Polynomial(n, {Monomial(tuple(int(e) for e in row)): 1
                           for row in rng.integers(0, 3, size=(3, n))})
        hs = tuple(
            Polynomial(n, {Monomial(tuple(int(e) for e in rng.integers(0, 2, size=n))): 1})
            for _ in range(m)
        )
        aug = phi_system(OptProblem(n, f, equalities=hs))
        assert len(aug.generators) == n * (m + 1) - (m + 1) ** 2 + 1


def test_phi_full_equality_rank_is_empty():
    # m1 == n: no admissible active sets, hence no generators
    f = parse_poly("x1^2 + x2^2", corpus.X2)
    hs = (parse_poly("x1 - 1", corpus.X2), parse_poly("x2 - 1", corpus.X2))
    assert phi_system(OptProblem(2, f, equalities=hs)).generators == ()


def test_phi_rejects_more_equalities_than_variables():
    f = parse_poly("x1", ["x1"])
    hs = (f, f)
    with pytest.raises(ValueError, match="m1 <= n"):
        phi_system(OptProblem(1, f, equalities=hs))


# -- psi system -----------------------------------------------------------------


def test_psi_robinson_three_minors():
    p = corpus.robinson_eq()
    aug = psi_system(p)
    assert len(aug.generators) == 3
    jac = jacobian_columns(p, ())
    expected = [
        minor(jac, rows, (0, 1)) for rows in [(0, 1), (0, 2), (1, 2)]
    ]
    assert list(aug.generators) == expected


def test_psi_unconstrained_univariate_is_derivative():
    f = parse_poly("x1^4 - 2*x1^2", ["x1"])
    aug = psi_system(OptProblem(1, f))
    assert list(aug.generators) == [partial(f, 0)]


def test_psi_versus_phi_counts_n6():
    rng = np.random.default_rng(11)
    n = 6
    f = Polynomial(n, {Monomial(tuple(int(e) for e in rng.integers(0, 2, size=n))): 1
                       for _ in range(4)})
    hs = tuple(
        Polynomial(n, {Monomial(tuple(int(e) for e in rng.integers(0, 2, size=n))): 1})
        for _ in range(2)
    )
    p = OptProblem(n, f, equalities=hs)
    assert len(psi_system(p).generators) == math.comb(6, 3)  # 20
    assert len(phi_system(p).generators) == eta_count(6, 3)  # 10


# -- inactive system --------------------------------------------------------------


def test_inactive_unconstrained_is_gradient():
    p = corpus.unconstrained_octic()
    aug = inactive_system(p)
    assert list(aug.generators) == gradient(p.objective)


def test_inactive_robinson_count():
    assert len(inactive_system(corpus.robinson_eq()).generators) == 3


def test_inactive_full_rank_empty():
    f = parse_poly("x1^2 + x2^2", corpus.X2)
    hs = (parse_poly("x1", corpus.X2), parse_poly("x2 - 1", corpus.X2))
    assert inactive_system(OptProblem(2, f, equalities=hs)).generators == ()


# -- counting identities across random shapes -------------------------------------


def test_generator_counts_on_random_shapes():
    rng = np.random.default_rng(42)
    checked = 0
    while checked < 50:
        n = int(rng.integers(1, 6))
        m1 = int(rng.integers(0, n + 1))
        m2 = int(rng.integers(0, 4))

        def rand_poly():
            return Polynomial(
                n,
                {
                    Monomial(tuple(int(e) for e in rng.integers(0, 3, size=n))): int(c)
                    for c in rng.integers(1, 4, size=3)
                },
            )

        p = OptProblem(
            n,
            rand_poly(),
            equalities=tuple(rand_poly() for _ in range(m1)),
            inequalities=tuple(rand_poly() for _ in range(m2)),
        )
        subsets = admissible_active_sets(m1, m2, n)
        expected_phi = sum(
            n * (m1 + len(J) + 1) - (m1 + len(J) + 1) ** 2 + 1 for J in subsets
        )
        expected_psi = sum(math.comb(n, m1 + len(J) + 1) for J in subsets)
        assert len(phi_system(p).generators) == expected_phi
        assert len(psi_system(p).generators) == expected_psi
        checked += 1


# -- numeric critical points annihilate the phi system -----------------------------


def lagrangian_critical_points(problem, tries=30, seed=0):
    """Numeric oracle: solve the first-order stationarity system directly.

    For each active set A the square system [grad f - sum lam grad h -
    sum mu grad g_A; h; g_A] = 0 is attacked from random starts; converged
    roots (any multiplier sign) are first-order critical points.
    """
    rng = np.random.default_rng(seed)
    n, m1 = problem.nvars, problem.num_eq
    f_grad = gradient(problem.objective)
    h_grads = [gradient(h) for h in problem.equalities]
    points = []
    for size in range(0, n - m1 + 1):
        for active in itertools.combinations(range(problem.num_ineq), size):
            g_grads = [gradient(problem.inequalities[j]) for j in active]
            dim = n + m1 + size

            def residual(z):
                x = z[:n]
                lam = z[n : n + m1]
                mu = z[n + m1 :]
                r = [fg.evaluate(x) for fg in f_grad]
                for c, hg in zip(lam, h_grads):
                    r = [ri - c * hgi.evaluate(x) for ri, hgi in zip(r, hg)]
                for c, gg in zip(mu, g_grads):
                    r = [ri - c * ggi.evaluate(x) for ri, ggi in zip(r, gg)]
                r += [h.evaluate(x) for h in problem.equalities]
                r += [problem.inequalities[j].evaluate(x) for j in active]
                return np.array(r)

            for _ in range(tries):
                z0 = rng.uniform(-4, 4, size=dim)
                sol, info, ier, _ = scipy.optimize.fsolve(
                    residual, z0, full_output=True, xtol=1e-13
                )
                if ier == 1 and np.max(np.abs(residual(sol))) < 1e-9:
                    points.append(np.array(sol[:n]))
    return points


@pytest.mark.parametrize(
    "factory", [corpus.m5_quadratics, corpus.robinson_eq, corpus.motzkin_ball]
)
def test_phi_vanishes_at_numeric_critical_points(factory):
    problem = factory()
    aug = phi_system(problem)
    points = lagrangian_critical_points(problem)
    assert points, "oracle found no critical points"
    for x in points:
        for gen in aug.generators:
            assert abs(gen.evaluate(x)) <= 1e-6, (x, poly_to_str(gen))


# -- serialization ------------------------------------------------------------------


def test_augmented_system_json_round_trip_fields():
    aug = phi_system(corpus.m5_quadratics())
    blob = aug.to_json_dict()
    assert blob["variant"] == "minimal-eta"
    assert len(blob["generators"]) == 5
    assert blob["provenance"][2] == {"J": [0], "index": 1}
    rebuilt = [parse_poly(s, corpus.X2) for s in blob["generators"]]
    assert rebuilt == list(aug.generators)
