"""Jacobian minor systems cutting out the critical variety of a problem.

Given an objective f, equalities h_1..h_m1 and inequalities g_1..g_m2 in n
variables, every constrained minimizer at which first-order conditions hold
makes the n x (1+m1+|J|) Jacobian [grad f, grad h, grad g_J] rank deficient,
where J is the active inequality set.  This module builds polynomial systems
that vanish exactly on those rank-deficient loci:

* ``eta_generators`` -- the minimal family of nk-k^2+1 defining polynomials of
  the variety of n x k matrices of rank < k; the ell-th generator is the sum
  of all maximal minors whose (1-based) row-index sets share the sum
  ell + C(k+1,2) - 1.
* ``phi_system`` -- for every admissible active set J, the eta generators of
  the Jacobian times the product of the inactive constraints g_j, j not in J.
* ``psi_system`` -- the refined variant using every individual maximal minor
  instead of the eta sums (more equations, tighter relaxation).
* ``inactive_system`` -- the cheap variant for minimizers with all
  inequalities strictly positive: eta generators of [grad f, grad h] alone.

Index sets are 0-based throughout.  All functions are pure; subset enumeration
order (cardinality, then lexicographic) is part of the public contract since
golden tests depend on it.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Sequence

from .polycore import (
    PolyMatrix,
    Polynomial,
    gradient,
    minor,
    poly_to_str,
)


@dataclass(frozen=True)
class OptProblem:
    """A polynomial minimization problem: min f s.t. h = 0, g >= 0."""

    nvars: int
    objective: Polynomial
    equalities: tuple[Polynomial, ...] = ()
    inequalities: tuple[Polynomial, ...] = ()

    def __post_init__(self) -> None:
        for p in (self.objective, *self.equalities, *self.inequalities):
            if p.nvars != self.nvars:
                raise ValueError(
                    f"constraint has {p.nvars} variables, problem has {self.nvars}"
                )

    @property
    def num_eq(self) -> int:
        return len(self.equalities)

    @property
    def num_ineq(self) -> int:
        return len(self.inequalities)


@dataclass(frozen=True)
class AugmentedSystem:
    """A problem together with the minor-based generators that augment it.

    ``provenance[i]`` records which active set J and which generator index
    (1-based eta index, or 1-based maximal-minor position) produced
    ``generators[i]``.
    """

    source: OptProblem
    variant: str  # minimal-eta | all-minors | inactive
    generators: tuple[Polynomial, ...]
    provenance: tuple[tuple[tuple[int, ...], int], ...]

    def __post_init__(self) -> None:
        if self.variant not in ("minimal-eta", "all-minors", "inactive"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if len(self.generators) != len(self.provenance):
            raise ValueError("provenance length does not match generator count")
        for p in self.generators:
            if p.nvars != self.source.nvars:
                raise ValueError("generator variable count differs from problem")

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant,
            "generators": [poly_to_str(p) for p in self.generators],
            "provenance": [
                {"J": list(J), "index": idx} for J, idx in self.provenance
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def m_bound(m1: int, m2: int, n: int) -> int:
    """Largest total number of constraints that can be active: min(m1+m2, n-1)."""
    if n < 1:
        raise ValueError("need at least one variable")
    return min(m1 + m2, n - 1)


def admissible_active_sets(m1: int, m2: int, n: int) -> list[tuple[int, ...]]:
    """All inequality subsets J with |J| <= m_bound - m1, smallest first.

    Enumeration is by cardinality, then lexicographic, which fixes the
    generator order of every downstream system.
    """
    limit = m_bound(m1, m2, n) - m1
    out: list[tuple[int, ...]] = []
    for size in range(0, max(limit, -1) + 1):
        out.extend(itertools.combinations(range(m2), size))
    return out


def jacobian_columns(p: OptProblem, active: Sequence[int]) -> PolyMatrix:
    """Jacobian [grad f, grad h_1..h_m1, grad g_j (j in J)] as an n x k matrix."""
    J = tuple(active)
    if any(not 0 <= j < p.num_ineq for j in J):
        raise ValueError(f"active set {J} out of range for {p.num_ineq} inequalities")
    if any(a >= b for a, b in zip(J, J[1:])):
        raise ValueError(f"active set {J} is not strictly increasing")
    cols = 1 + p.num_eq + len(J)
    if cols > p.nvars:
        raise ValueError(
            f"Jacobian would have {cols} columns but only {p.nvars} rows"
        )
    columns = [gradient(p.objective)]
    columns += [gradient(h) for h in p.equalities]
    columns += [gradient(p.inequalities[j]) for j in J]
    return PolyMatrix.from_columns(columns)


def minor_rank(rows: Sequence[int]) -> int:
    """Position of a maximal-minor row set in the minor partial order.

    For 0-based strictly increasing rows (i_1, ..., i_k) the value is
    sum(i_j + 1) - (C(k+1,2) - 1); row sets of equal rank are exactly the
    summands of one minimal generator.
    """
    idx = tuple(rows)
    if not idx:
        raise ValueError("empty index set")
    if any(i < 0 for i in idx):
        raise ValueError(f"negative index in {idx}")
    if any(a >= b for a, b in zip(idx, idx[1:])):
        raise ValueError(f"index set {idx} is not strictly increasing")
    k = len(idx)
    return sum(i + 1 for i in idx) - (math.comb(k + 1, 2) - 1)


def eta_count(n: int, k: int) -> int:
    """Size of the minimal defining family for rank-deficient n x k matrices."""
    return n * k - k * k + 1


def eta_generators(m: PolyMatrix) -> list[Polynomial]:
    """Minimal defining polynomials of the rank < k locus of an n x k matrix.

    Generator ell is the sum of all k x k maximal minors det_I(m) whose row
    set I has minor_rank(I) == ell; there are exactly nk-k^2+1 of them.
    """
    n, k = m.rows, m.cols
    if k > n:
        raise ValueError(f"matrix has more columns ({k}) than rows ({n})")
    count = eta_count(n, k)
    sums = [Polynomial.zero(m.nvars) for _ in range(count)]
    all_cols = tuple(range(k))
    for rows in itertools.combinations(range(n), k):
        ell = minor_rank(rows)
        sums[ell - 1] = sums[ell - 1] + minor(m, rows, all_cols)
    return sums


def _inactive_product(p: OptProblem, active: tuple[int, ...]) -> Polynomial:
    # empty product convention: the constant 1
    prod = Polynomial.constant(p.nvars, 1)
    for j in range(p.num_ineq):
        if j not in active:
            prod = prod * p.inequalities[j]
    return prod


def _check_shape(p: OptProblem) -> None:
    if p.num_eq > p.nvars:
        raise ValueError(
            f"{p.num_eq} equality constraints in {p.nvars} variables: "
            "the critical-variety construction requires m1 <= n"
        )


def phi_system(p: OptProblem) -> AugmentedSystem:
    """Minor-sum generators over every admissible active set.

    For each J the Jacobian contributes len(J) = n*c - c^2 + 1 generators
    (c = 1 + m1 + |J| columns), each multiplied by the product of the
    inactive g_j.  Every first-order critical point of the problem is a
    common zero of the full list.
    """
    _check_shape(p)
    gens: list[Polynomial] = []
    prov: list[tuple[tuple[int, ...], int]] = []
    for J in admissible_active_sets(p.num_eq, p.num_ineq, p.nvars):
        jac = jacobian_columns(p, J)
        inactive = _inactive_product(p, J)
        for idx, eta in enumerate(eta_generators(jac), start=1):
            gens.append(eta * inactive)
            prov.append((J, idx))
    expected = sum(
        eta_count(p.nvars, 1 + p.num_eq + len(J))
        for J in admissible_active_sets(p.num_eq, p.num_ineq, p.nvars)
    )
    assert len(gens) == expected
    return AugmentedSystem(p, "minimal-eta", tuple(gens), tuple(prov))


def psi_system(p: OptProblem) -> AugmentedSystem:
    """All-maximal-minors refinement of :func:`phi_system`.

    Emits every individual maximal minor of each admissible Jacobian times
    the inactive product: C(n, 1+m1+|J|) generators per active set J.
    """
    _check_shape(p)
    gens: list[Polynomial] = []
    prov: list[tuple[tuple[int, ...], int]] = []
    for J in admissible_active_sets(p.num_eq, p.num_ineq, p.nvars):
        jac = jacobian_columns(p, J)
        inactive = _inactive_product(p, J)
        cols = tuple(range(jac.cols))
        for idx, rows in enumerate(itertools.combinations(range(jac.rows), jac.cols), start=1):
            gens.append(minor(jac, rows, cols) * inactive)
            prov.append((J, idx))
    expected = sum(
        math.comb(p.nvars, 1 + p.num_eq + len(J))
        for J in admissible_active_sets(p.num_eq, p.num_ineq, p.nvars)
    )
    assert len(gens) == expected
    return AugmentedSystem(p, "all-minors", tuple(gens), tuple(prov))


def inactive_system(p: OptProblem) -> AugmentedSystem:
    """Generators for minimizers at which no inequality is active.

    Only the equality Jacobian [grad f, grad h] is used, giving
    n*(m1+1) - (m1+1)^2 + 1 generators; with m1 == n the rank condition is
    vacuous and the list is empty.
    """
    _check_shape(p)
    if p.num_eq == p.nvars:
        return AugmentedSystem(p, "inactive", (), ())
    jac = PolyMatrix.from_columns(
        [gradient(p.objective)] + [gradient(h) for h in p.equalities]
    )
    gens = tuple(eta_generators(jac))
    prov = tuple(((), idx) for idx in range(1, len(gens) + 1))
    assert len(gens) == eta_count(p.nvars, 1 + p.num_eq)
    return AugmentedSystem(p, "inactive", gens, prov)
