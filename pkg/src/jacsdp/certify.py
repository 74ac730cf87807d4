"""Exactness certification and minimizer extraction from moment vectors.

A solved relaxation is exact when the flat-extension condition holds: the
numerical rank of every localizing block equals the rank of its order-(N-1)
truncation (the leading principal submatrix in the graded basis order).  When
it does, the moment vector is the moment sequence of an atomic measure and
the atoms -- the candidate global minimizers -- are recovered by the standard
shift-operator procedure: factor the moment matrix, reduce to a monomial
basis by column echelon form, form the n multiplication operators, and read
the points off a real Schur form of a random convex combination.

Ranks are counted relative to the largest eigenvalue; the tolerance is a
caller-visible knob because the right scale depends on the moment magnitudes
of the problem at hand.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from .detvar import OptProblem
from .polycore import Monomial
from .relaxation import RelaxationSDP
from .sdp import moment_matrix_values

RANK_TOL_DEFAULT = 1e-6
_CLUSTER_TOL = 1e-4
_ECHELON_TOL = 1e-8
_MAX_EXTRACTION_RETRIES = 5


class ExtractionError(RuntimeError):
    """Raised when minimizers cannot be recovered from the moment vector."""


@dataclass(frozen=True)
class RankPair:
    """Numerical ranks of one localizing block at orders N and N-1."""

    label: str
    nu: tuple[int, ...]
    rank: int
    rank_prev: int | None  # None when the block has no order-(N-1) truncation
    flat: bool


@dataclass(frozen=True)
class PointCheck:
    """Verification record for one candidate minimizer."""

    point: tuple[float, ...]
    objective: float
    max_equality_violation: float
    min_inequality_value: float
    gap_to_bound: float
    feasible: bool
    certified: bool


@dataclass
class CertificateReport:
    """Flat-extension ranks, the FEC flag, and any extracted minimizers."""

    rank_pairs: list[RankPair]
    fec: bool
    common_rank: int
    points: list[tuple[float, ...]] = field(default_factory=list)
    checks: list[PointCheck] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "fec": self.fec,
            "common_rank": self.common_rank,
            "rank_pairs": [
                {
                    "label": rp.label,
                    "nu": list(rp.nu),
                    "rank": rp.rank,
                    "rank_prev": rp.rank_prev,
                    "flat": rp.flat,
                }
                for rp in self.rank_pairs
            ],
            "points": [list(pt) for pt in self.points],
            "checks": [
                {
                    "point": list(ch.point),
                    "objective": ch.objective,
                    "max_equality_violation": ch.max_equality_violation,
                    "min_inequality_value": ch.min_inequality_value,
                    "gap_to_bound": ch.gap_to_bound,
                    "feasible": ch.feasible,
                    "certified": ch.certified,
                }
                for ch in self.checks
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def numerical_rank(matrix: np.ndarray, tol: float = RANK_TOL_DEFAULT) -> int:
    """Eigenvalues above tol * max(1, largest eigenvalue) of a symmetric PSD matrix."""
    if matrix.size == 0:
        return 0
    eigs = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    top = float(eigs[-1])
    return int(np.sum(eigs > tol * max(1.0, top)))


def flat_extension_check(
    y: np.ndarray,
    sdp: RelaxationSDP,
    tol: float = RANK_TOL_DEFAULT,
    relaxed: bool = False,
) -> CertificateReport:
    """Rank every localizing block at orders N and N-1 and test flatness.

    ``relaxed=True`` bases the flag on the plain moment matrix only (common
    practice); the default follows the strict every-block definition.  Blocks
    too high-degree to exist at order N-1 are reported with ``rank_prev``
    None and do not count against the flag.
    """
    if sdp.order < 2:
        raise ValueError("flat extension needs order N >= 2")
    n = sdp.basis.n
    pairs: list[RankPair] = []
    for block in sdp.psd_blocks:
        values = moment_matrix_values(y, block, sdp.basis)
        rank = numerical_rank(values, tol)
        d_prev = block.basis_degree - 1
        if d_prev < 0:
            pairs.append(RankPair(block.label, block.nu, rank, None, True))
            continue
        size_prev = math.comb(n + d_prev, d_prev)
        rank_prev = numerical_rank(values[:size_prev, :size_prev], tol)
        pairs.append(
            RankPair(block.label, block.nu, rank, rank_prev, rank == rank_prev)
        )
    if relaxed:
        fec = pairs[0].flat
    else:
        fec = all(rp.flat for rp in pairs)
    return CertificateReport(pairs, fec, pairs[0].rank)


def _column_echelon(v_t: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form of v_t with the pivot column indices."""
    mat = v_t.copy()
    rows, cols = mat.shape
    scale = max(float(np.max(np.abs(mat))), 1e-300)
    pivots: list[int] = []
    r = 0
    for col in range(cols):
        if r == rows:
            break
        lead = r + int(np.argmax(np.abs(mat[r:, col])))
        if abs(mat[lead, col]) <= _ECHELON_TOL * scale:
            continue
        mat[[r, lead]] = mat[[lead, r]]
        mat[r] = mat[r] / mat[r, col]
        for other in range(rows):
            if other != r:
                mat[other] -= mat[other, col] * mat[r]
        pivots.append(col)
        r += 1
    if r < rows:
        raise ExtractionError(
            f"moment-matrix factor lost rank during echelon reduction ({r} < {rows})"
        )
    return mat, pivots


def extract_minimizers(
    y: np.ndarray,
    sdp: RelaxationSDP,
    tol: float = RANK_TOL_DEFAULT,
    seed: int = 0,
) -> list[np.ndarray]:
    """Recover the atoms of a flat moment vector (the candidate minimizers).

    Refuses when the flat-extension condition fails.  The shift operators are
    simultaneously diagonalized through the real Schur form of a random
    convex combination; combinations whose eigenvalues come out complex or
    clustered closer than the 1e-4 relative threshold are redrawn up to five
    times before giving up.
    """
    report = flat_extension_check(y, sdp, tol)
    if not report.fec:
        detail = ", ".join(
            f"{rp.label}:{rp.rank}/{rp.rank_prev}" for rp in report.rank_pairs
        )
        raise ExtractionError(f"flat-extension condition fails ({detail})")
    rank = report.common_rank
    n = sdp.basis.n
    if rank == 0:
        raise ExtractionError("moment matrix is numerically zero")

    block = sdp.psd_blocks[0]
    values = moment_matrix_values(y, block, sdp.basis)
    eigvals, eigvecs = np.linalg.eigh(values)
    factor = eigvecs[:, -rank:] * np.sqrt(np.maximum(eigvals[-rank:], 0.0))

    echelon, pivots = _column_echelon(factor.T)
    block_monos = sdp.basis.monomials[: block.size]
    mono_pos = {m: i for i, m in enumerate(block_monos)}
    shift_ops = []
    for i in range(n):
        op = np.zeros((rank, rank))
        for ell, piv in enumerate(pivots):
            shifted = list(block_monos[piv].exponents)
            shifted[i] += 1
            target = Monomial(tuple(shifted))
            if target not in mono_pos:
                raise ExtractionError(
                    "pivot monomial shifted outside the moment-matrix basis"
                )
            op[:, ell] = echelon[:, mono_pos[target]]
        shift_ops.append(op)

    rng = np.random.default_rng(seed)
    last_error = "did not attempt"
    for _ in range(_MAX_EXTRACTION_RETRIES):
        weights = rng.random(n) + 0.1
        weights /= weights.sum()
        mix = sum(w * op for w, op in zip(weights, shift_ops))
        t_mat, q_mat = scipy.linalg.schur(mix, output="real")
        sub = np.diag(t_mat, -1) if rank > 1 else np.array([])
        if sub.size and np.max(np.abs(sub)) > 1e-8 * max(1.0, float(np.max(np.abs(t_mat)))):
            last_error = "complex eigenvalue pair in the Schur form"
            continue
        diag = np.diag(t_mat)
        spread = max(1.0, float(np.max(np.abs(diag))))
        if rank > 1 and np.min(np.abs(np.diff(np.sort(diag)))) <= _CLUSTER_TOL * spread:
            last_error = "clustered eigenvalues under the random combination"
            continue
        points = [
            np.array([q_mat[:, j] @ op @ q_mat[:, j] for op in shift_ops])
            for j in range(rank)
        ]
        return points
    raise ExtractionError(f"extraction failed after retries: {last_error}")


def verify_candidate(
    point: Sequence[float],
    problem: OptProblem,
    bound: float,
    tol: float = 1e-6,
) -> PointCheck:
    """Check a candidate point: feasibility, objective, and bound sandwich.

    A feasible point with f(x) - bound <= tol certifies the bound as the
    global minimum (the candidate matches the lower bound from below).
    """
    x = [float(v) for v in point]
    objective = problem.objective.evaluate(x)
    max_eq = max(
        (abs(h.evaluate(x)) for h in problem.equalities), default=0.0
    )
    min_ineq = min(
        (g.evaluate(x) for g in problem.inequalities), default=math.inf
    )
    feasible = max_eq <= tol and (not problem.inequalities or min_ineq >= -tol)
    gap = objective - bound
    return PointCheck(
        point=tuple(x),
        objective=objective,
        max_equality_violation=max_eq,
        min_inequality_value=min_ineq if problem.inequalities else math.inf,
        gap_to_bound=gap,
        feasible=feasible,
        certified=bool(feasible and gap <= tol),
    )
