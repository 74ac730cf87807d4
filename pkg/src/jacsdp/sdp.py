"""Embedded primal-dual interior-point solver for assembled moment SDPs.

The moment problem ``min c.y  s.t.  E y = e,  blocks(y) >= 0`` is reduced to
a standard conic pair by eliminating the equalities: with y = y_p + Z t for a
particular solution y_p and an orthonormal null-space basis Z of E,

    (moment side)   max  b.t   s.t.  C - sum_k t_k A_k = S >= 0
    (certificate)   min <C, X> s.t.  <A_k, X> = b_k,  X >= 0

where b = -Z'c, C = blocks(y_p), A_k = -blocks(Z_k).  The moment objective is
c.y = c.y_p - b.t, and the certificate side evaluates the dual (sum-of-squares
style) bound.  Both are reported; weak duality keeps dual <= primal.

The iteration is a Mehrotra predictor-corrector path-following method with
Nesterov-Todd scaling.  In the NT-scaled space both cone variables equal the
same diagonal matrix, which reduces the linearized complementarity equation to
``dXhat + dShat = R`` entrywise and leaves one dense positive-definite Schur
system per step.  Dense block linear algebra throughout: block sizes at desk
scale stay in the low hundreds.

Equality preprocessing uses pivoted QR on E' with relative pivot threshold
1e-10 to drop the redundant rows that minor-generator systems produce.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .relaxation import LMIBlock, RelaxationSDP, trace_refinement

_QR_PIVOT_TOL = 1e-10
_STEP_FRACTION = 0.99
_CHUNK_FLOATS = 4_000_000  # batch size guard when expanding svec rows to matrices


@dataclass
class SDPSolution:
    """Solver outcome: the moment vector plus both bound sides and diagnostics."""

    y: np.ndarray
    primal_obj: float
    dual_obj: float
    status: str  # optimal | near-optimal | infeasible | unbounded | max-iter
    iterations: int
    gap: float
    residuals: dict[str, float] = field(default_factory=dict)


# -- symmetric vectorization ---------------------------------------------------


class _SvecMap:
    """Cached upper-triangle indexing with sqrt(2) off-diagonal weights."""

    def __init__(self, size: int):
        self.size = size
        self.rows, self.cols = np.triu_indices(size)
        self.weights = np.where(self.rows == self.cols, 1.0, math.sqrt(2.0))
        self.dim = len(self.weights)

    def svec(self, a: np.ndarray) -> np.ndarray:
        return a[self.rows, self.cols] * self.weights

    def smat(self, v: np.ndarray) -> np.ndarray:
        a = np.zeros((self.size, self.size))
        vals = v / self.weights
        a[self.rows, self.cols] = vals
        a[self.cols, self.rows] = vals
        return a

    def smat_batch(self, vs: np.ndarray) -> np.ndarray:
        n = vs.shape[0]
        out = np.zeros((n, self.size, self.size))
        vals = vs / self.weights
        out[:, self.rows, self.cols] = vals
        out[:, self.cols, self.rows] = vals
        return out


@dataclass
class _BlockData:
    size: int
    sv: _SvecMap
    coeff: scipy.sparse.csr_matrix  # (num_moments, svec_dim): y -> svec(block)
    label: str


def _block_numeric(block: LMIBlock, basis_index, num_moments: int) -> _BlockData:
    sv = _SvecMap(block.size)
    rows, cols, vals = [], [], []
    for alpha, entry in block.coeffs.items():
        pos = basis_index(alpha)
        for (i, j), coef in entry.items():
            rows.append(pos)
            cols.append(i * block.size - (i * (i - 1)) // 2 + (j - i))
            weight = 1.0 if i == j else math.sqrt(2.0)
            vals.append(float(coef) * weight)
    coeff = scipy.sparse.csr_matrix(
        (vals, (rows, cols)), shape=(num_moments, sv.dim)
    )
    return _BlockData(block.size, sv, coeff, block.label)


def moment_matrix_values(y: np.ndarray, block: LMIBlock, basis) -> np.ndarray:
    """Dense symmetric matrix sum_alpha A_alpha y_alpha for one PSD block.

    ``y`` must cover the moment basis the block was assembled against.
    """
    out = np.zeros((block.size, block.size))
    for alpha, entry in block.coeffs.items():
        v = y[basis.position(alpha)]
        for (i, j), coef in entry.items():
            out[i, j] += float(coef) * v
            if i != j:
                out[j, i] += float(coef) * v
    return out


def block_values(sdp: RelaxationSDP, y: np.ndarray, block: LMIBlock) -> np.ndarray:
    """Convenience wrapper resolving positions through the SDP's own basis."""
    return moment_matrix_values(y, block, sdp.basis)


def _scaled_rows(ahat: np.ndarray, g: np.ndarray, sv: _SvecMap) -> np.ndarray:
    """svec(G' A_j G) for every row svec(A_j) of ahat, in bounded chunks."""
    p = ahat.shape[0]
    out = np.empty_like(ahat)
    chunk = max(1, _CHUNK_FLOATS // max(1, sv.size * sv.size))
    for start in range(0, p, chunk):
        stop = min(p, start + chunk)
        mats = sv.smat_batch(ahat[start:stop])
        scaled = np.matmul(np.matmul(g.T, mats), g)
        scaled = 0.5 * (scaled + np.swapaxes(scaled, 1, 2))
        out[start:stop] = scaled[:, sv.rows, sv.cols] * sv.weights
    return out


def _max_step(sigma: np.ndarray, delta_hat: np.ndarray) -> float:
    """Largest alpha with diag(sigma) + alpha*delta_hat staying PSD."""
    scale = np.sqrt(sigma)
    w = delta_hat / np.outer(scale, scale)
    lam_min = float(np.linalg.eigvalsh(w)[0]) if w.shape[0] else 0.0
    if lam_min >= -1e-14:
        return 1.0
    return min(1.0, -_STEP_FRACTION / lam_min)


_SCOUT_ITER = 20
_SCOUT_TRIP = 4.0


def solve(
    sdp: RelaxationSDP,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
    rescale: bool = True,
) -> SDPSolution:
    """Solve the assembled moment SDP with the embedded interior-point method.

    Deterministic for identical input and options.  Returns the best iterate
    with an honest status when the path stalls before the tolerances are met.

    Moment magnitudes spread over many decades (minimizers far from the unit
    box, or divergent minimizing pseudo-moment sequences) wreck the iteration
    in raw coordinates, so a short scout run watches the second-order moments;
    when they grow past a threshold the data is diagonally rescaled -- an
    exact reformulation equivalent to substituting x -> tau * x -- and the
    solve restarts on the balanced data.
    """
    if not sdp.psd_blocks:
        raise ValueError("SDP has no PSD blocks")

    num_moments = sdp.num_moments
    c = np.zeros(num_moments)
    for pos, coef in sdp.objective.items():
        c[pos] = float(coef)

    e_rows = np.zeros((len(sdp.eq_rows), num_moments))
    for k, row in enumerate(sdp.eq_rows):
        for pos, v in row:
            e_rows[k, pos] = v
    rhs = np.array(sdp.eq_rhs)

    blocks = [
        _block_numeric(b, sdp.basis.position, num_moments) for b in sdp.psd_blocks
    ]

    n = sdp.basis.n
    from .polycore import Monomial

    pure_power_positions = []
    for i in range(n):
        per_var = []
        for k in range(1, sdp.order + 1):
            exps = [0] * n
            exps[i] = 2 * k
            per_var.append((k, sdp.basis.position(Monomial(tuple(exps)))))
        pure_power_positions.append(per_var)

    sol, tau = _solve_numeric(
        c, e_rows, rhs, blocks, gap_tol, feas_tol, max_iter,
        scout_positions=pure_power_positions if rescale else None,
    )
    if tau is None:
        return sol

    # diagonal rescale: y_alpha = prod_i tau_i^alpha_i * yhat_alpha
    degrees = np.array(
        [m.exponents for m in sdp.basis.monomials], dtype=float
    )
    d_scale = np.exp(degrees @ np.log(tau))
    c2 = c * d_scale
    e2 = e_rows * d_scale[None, :]
    rhs2 = rhs.copy()
    for k in range(e2.shape[0]):
        row_scale = float(np.max(np.abs(e2[k])))
        if row_scale > 0:
            e2[k] /= row_scale
            rhs2[k] /= row_scale
    blocks2 = []
    for blk in blocks:
        # the block's d-basis is a prefix of the moment basis, so dividing the
        # svec column for entry (i, j) by d_scale[i] * d_scale[j] removes the
        # congruence factor and leaves the localizing block of the rescaled
        # polynomial itself
        col_scale = d_scale[blk.sv.rows] * d_scale[blk.sv.cols]
        coeff = blk.coeff.multiply(d_scale[:, None]).multiply(
            1.0 / col_scale[None, :]
        ).tocsr()
        peak = float(np.max(np.abs(coeff.data))) if coeff.nnz else 1.0
        coeff = coeff / max(peak, 1e-300)
        blocks2.append(_BlockData(blk.size, blk.sv, coeff, blk.label))
    sol2, _ = _solve_numeric(
        c2, e2, rhs2, blocks2, gap_tol, feas_tol, max_iter, scout_positions=None
    )
    y = d_scale * sol2.y
    residuals = dict(sol2.residuals)
    if len(rhs):
        residuals["equality"] = float(np.max(np.abs(e_rows @ y - rhs)))
    return SDPSolution(
        y=y,
        primal_obj=sol2.primal_obj,
        dual_obj=sol2.dual_obj,
        status=sol2.status,
        iterations=sol.iterations + sol2.iterations,
        gap=sol2.gap,
        residuals=residuals,
    )


def _solve_numeric(
    c: np.ndarray,
    e_rows: np.ndarray,
    rhs: np.ndarray,
    blocks: list[_BlockData],
    gap_tol: float,
    feas_tol: float,
    max_iter: int,
    scout_positions: list[int] | None,
) -> tuple[SDPSolution, np.ndarray | None]:
    num_moments = len(c)

    # particular solution + consistency
    y_p, *_ = np.linalg.lstsq(e_rows, rhs, rcond=None)
    eq_res = float(np.max(np.abs(e_rows @ y_p - rhs))) if len(rhs) else 0.0
    if eq_res > 1e-8 * max(1.0, float(np.max(np.abs(rhs))) if len(rhs) else 1.0):
        return (
            SDPSolution(
                y=y_p,
                primal_obj=math.nan,
                dual_obj=math.nan,
                status="infeasible",
                iterations=0,
                gap=math.inf,
                residuals={"equality": eq_res},
            ),
            None,
        )

    # null space of E via pivoted QR of E'
    q_full, r_fac, _ = scipy.linalg.qr(e_rows.T, mode="full", pivoting=True)
    diag = np.abs(np.diag(r_fac)) if min(e_rows.shape) else np.array([])
    if diag.size:
        rank = int(np.sum(diag > _QR_PIVOT_TOL * max(diag[0], 1.0)))
    else:
        rank = 0
    z_basis = q_full[:, rank:]
    p = z_basis.shape[1]

    const = float(c @ y_p)
    b = -(z_basis.T @ c)

    c_mats = []
    ahats = []
    for blk in blocks:
        c_mats.append(blk.sv.smat(blk.coeff.T @ y_p))
        ahats.append(-(blk.coeff.T @ z_basis).T)  # (p, sv_dim) dense

    if p == 0:
        eigs = [float(np.linalg.eigvalsh(cm)[0]) if cm.size else 0.0 for cm in c_mats]
        feasible = all(v >= -feas_tol for v in eigs)
        return (
            SDPSolution(
                y=y_p,
                primal_obj=const,
                dual_obj=const,
                status="optimal" if feasible else "infeasible",
                iterations=0,
                gap=0.0,
                residuals={"equality": eq_res, "min_eigenvalue": min(eigs)},
            ),
            None,
        )

    n_tot = sum(blk.size for blk in blocks)
    scale0 = max(
        10.0,
        max(float(np.linalg.norm(cm)) for cm in c_mats),
        float(np.max(np.abs(b))) if p else 1.0,
    )
    x_mats = [scale0 * np.eye(blk.size) for blk in blocks]
    s_mats = [scale0 * np.eye(blk.size) for blk in blocks]
    t = np.zeros(p)

    b_norm = 1.0 + float(np.linalg.norm(b))
    c_norm = 1.0 + math.sqrt(sum(float(np.linalg.norm(cm)) ** 2 for cm in c_mats))

    status = "max-iter"
    iterations = 0
    stalled = 0
    pobj = dobj = math.nan
    relgap = pres = dres = math.inf
    gap_inner = math.inf
    best = None  # (score, t, pobj, dobj, gap, residuals)

    for iteration in range(1, max_iter + 1):
        iterations = iteration
        svec_x = [blk.sv.svec(x) for blk, x in zip(blocks, x_mats)]
        ax = sum(ah @ sx for ah, sx in zip(ahats, svec_x))
        rp = b - ax
        rd_mats = [
            cm - s - blk.sv.smat(ah.T @ t)
            for cm, s, blk, ah in zip(c_mats, s_mats, blocks, ahats)
        ]
        gap_inner = sum(float(np.sum(x * s)) for x, s in zip(x_mats, s_mats))
        pobj = const - float(b @ t)
        dobj = const - sum(float(np.sum(cm * x)) for cm, x in zip(c_mats, x_mats))
        relgap = gap_inner / (1.0 + abs(pobj) + abs(dobj))
        pres = float(np.linalg.norm(rp)) / b_norm
        dres = math.sqrt(sum(float(np.linalg.norm(r)) ** 2 for r in rd_mats)) / c_norm

        score = max(relgap, dres)
        if best is None or score < best[0]:
            best = (score, t.copy(), pobj, dobj, gap_inner,
                    {"primal": pres, "dual": dres, "relative_gap": relgap})

        if relgap <= gap_tol and pres <= feas_tol and dres <= feas_tol:
            status = "optimal"
            break

        if (
            scout_positions
            and iteration % _SCOUT_ITER == 0
            and iteration <= 5 * _SCOUT_ITER
        ):
            y_now = y_p + z_basis @ t
            # per-variable scale from the growth of the pure even moments:
            # tau_i^2 = max_k (max(1, y_{2k e_i}))^(1/k)
            tau = np.array(
                [
                    math.sqrt(
                        max(
                            max(1.0, float(y_now[pos])) ** (1.0 / k)
                            for k, pos in per_var
                        )
                    )
                    for per_var in scout_positions
                ]
            )
            if float(tau.max()) > _SCOUT_TRIP:
                # moments running away: request a rescaled restart with extra
                # runway (squared scale), capped to keep coefficients finite
                tau = np.minimum(tau**2, 1e6)
                return (
                    SDPSolution(
                        y=y_now,
                        primal_obj=pobj,
                        dual_obj=dobj,
                        status="rescale",
                        iterations=iteration,
                        gap=gap_inner,
                        residuals={},
                    ),
                    tau,
                )

        # divergence checks (Farkas-style certificates from the iterate);
        # meaningless once the gap has closed on finite objectives
        t_norm = float(np.linalg.norm(t)) if relgap > 1e-6 else 0.0
        if t_norm > 1e8:
            astar_t = [blk.sv.smat(ah.T @ (t / t_norm)) for blk, ah in zip(blocks, ahats)]
            cert = math.sqrt(
                sum(float(np.linalg.norm(at + s / t_norm)) ** 2 for at, s in zip(astar_t, s_mats))
            )
            if float(b @ t) / (t_norm * b_norm) > 1e-6 and cert <= 1e-9:
                status = "unbounded"
                break
        x_norm = (
            math.sqrt(sum(float(np.linalg.norm(x)) ** 2 for x in x_mats))
            if relgap > 1e-6
            else 0.0
        )
        if x_norm > 1e8:
            ax_dir = float(np.linalg.norm(ax)) / x_norm
            cx_dir = (
                sum(float(np.sum(cm * x)) for cm, x in zip(c_mats, x_mats))
                / (x_norm * c_norm)
            )
            if ax_dir <= 1e-9 and cx_dir < -1e-5:
                status = "infeasible"
                break

        # Nesterov-Todd scaling point per block
        gs, sigmas, scaled_ahats, rd_hats = [], [], [], []
        try:
            for blk, x, s, ah, rd in zip(blocks, x_mats, s_mats, ahats, rd_mats):
                lx = scipy.linalg.cholesky(x, lower=True)
                ls = scipy.linalg.cholesky(s, lower=True)
                u, sig, vt = scipy.linalg.svd(ls.T @ lx)
                sig = np.maximum(sig, 1e-300)
                g = lx @ vt.T @ np.diag(sig ** -0.5)
                gs.append(g)
                sigmas.append(sig)
                scaled_ahats.append(_scaled_rows(ah, g, blk.sv))
                rd_hats.append(g.T @ rd @ g)
        except np.linalg.LinAlgError:
            status = "max-iter"
            break

        mu = gap_inner / n_tot
        schur = np.zeros((p, p))
        for va in scaled_ahats:
            schur += va @ va.T
        schur = 0.5 * (schur + schur.T)
        base = max(1.0, float(np.trace(schur)) / p)
        cho = None
        for boost in range(14):
            try:
                reg = 0.0 if boost == 0 else base * 10.0 ** (boost - 16)
                cho = scipy.linalg.cho_factor(schur + reg * np.eye(p))
                break
            except np.linalg.LinAlgError:
                continue
        if cho is None:
            status = "max-iter"
            break

        def solve_schur(rhs_vec):
            sol_vec = scipy.linalg.cho_solve(cho, rhs_vec)
            for _ in range(2):  # refinement against the unregularized matrix
                sol_vec += scipy.linalg.cho_solve(cho, rhs_vec - schur @ sol_vec)
            return sol_vec

        def directions(rtilde_list):
            rhs_vec = rp.copy()
            for va, rt, rdh, blk in zip(scaled_ahats, rtilde_list, rd_hats, blocks):
                rhs_vec -= va @ blk.sv.svec(rt - rdh)
            dt = solve_schur(rhs_vec)
            dshats, dxhats, dss = [], [], []
            for va, rt, rdh, blk, ah, rd in zip(
                scaled_ahats, rtilde_list, rd_hats, blocks, ahats, rd_mats
            ):
                dshat = rdh - blk.sv.smat(va.T @ dt)
                dshats.append(dshat)
                dxhats.append(rt - dshat)
                # dual step formed in unscaled space: exact, no G-inverse noise
                dss.append(rd - blk.sv.smat(ah.T @ dt))
            return dt, dxhats, dshats, dss

        # predictor: aim at complementarity zero
        rtilde_aff = [np.diag(-sig) for sig in sigmas]
        dt_aff, dxh_aff, dsh_aff, _ = directions(rtilde_aff)
        alpha_x_aff = min(_max_step(sig, dxh) for sig, dxh in zip(sigmas, dxh_aff))
        alpha_s_aff = min(_max_step(sig, dsh) for sig, dsh in zip(sigmas, dsh_aff))
        gap_aff = sum(
            float(
                np.sum(
                    (np.diag(sig) + alpha_x_aff * dxh)
                    * (np.diag(sig) + alpha_s_aff * dsh)
                )
            )
            for sig, dxh, dsh in zip(sigmas, dxh_aff, dsh_aff)
        )
        sigma_target = min(1.0, max(1e-10, (max(gap_aff, 0.0) / gap_inner) ** 3))

        # corrector: recentre and absorb the second-order term
        rtilde = []
        for sig, dxh, dsh in zip(sigmas, dxh_aff, dsh_aff):
            rc = sigma_target * mu * np.eye(len(sig)) - np.diag(sig**2)
            rc -= 0.5 * (dxh @ dsh + dsh @ dxh)
            denom = 0.5 * np.add.outer(sig, sig)
            rtilde.append(rc / denom)
        dt, dxhats, dshats, dss = directions(rtilde)

        alpha_x = min(_max_step(sig, dxh) for sig, dxh in zip(sigmas, dxhats))
        alpha_s = min(_max_step(sig, dsh) for sig, dsh in zip(sigmas, dshats))

        dxs = [g @ dxh @ g.T for g, dxh in zip(gs, dxhats)]
        # eigenvalue-based steps can overshoot in floating point near the
        # boundary; back off until both cones stay safely factorizable, and
        # once feasible also refuse steps that inflate the gap
        feas_regime = pres <= 1e-6 and dres <= 1e-6
        accepted = False
        for shrink in range(7):
            frac = 0.5**shrink
            x_try = [0.5 * ((x + frac * alpha_x * dx) + (x + frac * alpha_x * dx).T)
                     for x, dx in zip(x_mats, dxs)]
            s_try = [0.5 * ((s + frac * alpha_s * ds) + (s + frac * alpha_s * ds).T)
                     for s, ds in zip(s_mats, dss)]
            try:
                for m_try in (*x_try, *s_try):
                    scipy.linalg.cholesky(m_try, lower=True)
            except np.linalg.LinAlgError:
                continue
            if feas_regime:
                gap_try = sum(float(np.sum(x * s)) for x, s in zip(x_try, s_try))
                if gap_try > 1.5 * gap_inner and shrink < 6:
                    continue
            x_mats, s_mats = x_try, s_try
            t = t + frac * alpha_s * dt
            step_taken = frac * max(alpha_x, alpha_s)
            accepted = True
            break
        if not accepted:
            status = "max-iter"
            break
        if step_taken < 1e-8 and best is not None and score > 0.95 * best[0]:
            stalled += 1
            if stalled >= 8:
                status = "max-iter"
                break
        else:
            stalled = 0

    if status not in ("optimal", "infeasible", "unbounded") and best is not None:
        # fall back to the best iterate seen rather than the last one
        _, t, pobj, dobj, gap_inner, best_res = best
        relgap = best_res["relative_gap"]
        pres = best_res["primal"]
        dres = best_res["dual"]
    if status == "max-iter" and relgap <= 1e-6:
        status = "near-optimal"

    y = y_p + z_basis @ t
    return (
        SDPSolution(
            y=y,
            primal_obj=pobj,
            dual_obj=dobj,
            status=status,
            iterations=iterations,
            gap=gap_inner,
            residuals={
                "primal": pres,
                "dual": dres,
                "equality": float(np.max(np.abs(e_rows @ y - rhs))) if len(rhs) else 0.0,
                "relative_gap": relgap,
            },
        ),
        None,
    )


def solve_refined(
    sdp: RelaxationSDP,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
) -> tuple[SDPSolution, SDPSolution | None, np.ndarray]:
    """Two-phase solve: bound first, then the minimal-trace face point.

    Returns the bounding solve, the refinement solve (None when the bound
    phase failed or refinement did not converge usefully), and the moment
    vector to use for certification: the refined one when available,
    otherwise the bounding iterate.
    """
    sol = solve(sdp, gap_tol=gap_tol, feas_tol=feas_tol, max_iter=max_iter)
    if sol.status not in ("optimal", "near-optimal"):
        return sol, None, sol.y
    # the trace objective already pulls the moments down, so the refinement
    # solve never needs the divergence-rescue rescaling
    refined = solve(
        trace_refinement(sdp, sol.primal_obj),
        gap_tol=gap_tol,
        feas_tol=feas_tol,
        max_iter=max_iter,
        rescale=False,
    )
    if refined.status in ("optimal", "near-optimal"):
        return sol, refined, refined.y
    return sol, None, sol.y
