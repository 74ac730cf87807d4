"""Assembly of the moment-side SDP for a problem and its minor generators.

The decision vector is a truncated moment vector y indexed by all monomials
of degree <= 2N in the canonical graded-lex basis order.  The SDP is

    min  sum_alpha f_alpha * y_alpha
    s.t. one scalar equality row per distinct localizing-matrix entry of every
         equality polynomial (the h_i and the augmenting generators),
         y_0 = 1,
         one PSD localizing block per multiplier polynomial.

The multiplier family depends on the variant: preordering-type relaxations
use every cross product g_nu = prod g_j^{nu_j} over nu in {0,1}^m2, while
quadratic-module-type ones use only {1, g_1, ..., g_m2}.  Baseline variants
drop the augmenting generators and keep the original constraints only.

Coefficients stay exact rationals through construction; equality rows are
scaled to unit infinity-norm, sign-normalized and deduplicated (recording
multiplicity) when they are frozen to floats.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .detvar import (
    AugmentedSystem,
    OptProblem,
    inactive_system,
    phi_system,
    psi_system,
)
from .polycore import Monomial, Polynomial, monomials_up_to

CROSS_PRODUCT_CAP = 12  # 2^m2 blocks: refuse beyond this many inequalities

#: variant name -> (generator system or None for baselines, multiplier family)
VARIANTS: dict[str, tuple[str | None, str]] = {
    "jacobian-schmudgen": ("minimal-eta", "preordering"),
    "jacobian-allminors": ("all-minors", "preordering"),
    "jacobian-putinar": ("minimal-eta", "quadratic-module"),
    "inactive-schmudgen": ("inactive", "preordering"),
    "inactive-putinar": ("inactive", "quadratic-module"),
    "baseline-schmudgen": (None, "preordering"),
    "baseline-putinar": (None, "quadratic-module"),
}


class OrderTooSmallError(ValueError):
    """Requested relaxation order cannot accommodate every polynomial degree."""

    def __init__(self, requested: int, minimal: int):
        super().__init__(
            f"order N={requested} too small; minimal admissible order is N={minimal}"
        )
        self.requested = requested
        self.minimal = minimal


@dataclass(frozen=True)
class MomentBasis:
    """Bijection between monomials of degree <= 2N and moment positions."""

    n: int
    order: int
    monomials: tuple[Monomial, ...]
    index: dict[Monomial, int] = field(compare=False, repr=False)

    @staticmethod
    def build(n: int, order: int) -> "MomentBasis":
        monos = tuple(monomials_up_to(n, 2 * order))
        return MomentBasis(n, order, monos, {m: i for i, m in enumerate(monos)})

    def __len__(self) -> int:
        return len(self.monomials)

    def position(self, mono: Monomial) -> int:
        return self.index[mono]


@dataclass(frozen=True)
class LMIBlock:
    """One localizing-matrix block: values(y) = sum_alpha A_alpha y_alpha.

    ``coeffs`` maps each monomial alpha to the upper triangle (i <= j) of the
    symmetric coefficient matrix A_alpha; ``nu`` is the inequality subset
    whose product this block localizes (empty for the plain moment matrix).
    """

    size: int
    coeffs: dict[Monomial, dict[tuple[int, int], Fraction]] = field(compare=False)
    label: str
    nu: tuple[int, ...] = ()
    basis_degree: int = 0


def localizing_block(
    q: Polynomial, order: int, basis: MomentBasis, label: str = "", nu: tuple[int, ...] = ()
) -> LMIBlock:
    """Localizing matrix of q at the given order.

    With d = N - ceil(deg q / 2), entry (i, j) of the block is the linear form
    sum over the terms of q * x^(beta_i + beta_j); the block size is C(n+d, d).
    """
    if q.degree > 2 * order:
        raise OrderTooSmallError(order, math.ceil(q.degree / 2))
    d = order - math.ceil(q.degree / 2)
    rows = monomials_up_to(basis.n, d)
    size = len(rows)
    coeffs: dict[Monomial, dict[tuple[int, int], Fraction]] = {}
    for i in range(size):
        for j in range(i, size):
            shift = rows[i] * rows[j]
            for mono, coef in q.terms.items():
                alpha = mono * shift
                entry = coeffs.setdefault(alpha, {})
                entry[(i, j)] = entry.get((i, j), Fraction(0)) + coef
    coeffs = {
        alpha: {ij: c for ij, c in entry.items() if c != 0}
        for alpha, entry in coeffs.items()
    }
    coeffs = {alpha: entry for alpha, entry in coeffs.items() if entry}
    return LMIBlock(size, coeffs, label or "1", nu, d)


def objective_vector(f: Polynomial, basis: MomentBasis) -> dict[int, Fraction]:
    """Sparse objective: position of each monomial of f -> its coefficient."""
    if f.degree > 2 * basis.order:
        raise OrderTooSmallError(basis.order, math.ceil(f.degree / 2))
    return {basis.position(mono): coef for mono, coef in f.terms.items()}


def cross_products(
    g: Sequence[Polynomial], nvars: int | None = None
) -> list[tuple[tuple[int, ...], Polynomial]]:
    """All 2^m2 products of inequality subsets, by subset size then lex order."""
    m2 = len(g)
    if m2 > CROSS_PRODUCT_CAP:
        raise ValueError(
            f"{m2} inequalities would create 2^{m2} localizing blocks "
            f"(cap is {CROSS_PRODUCT_CAP})"
        )
    if nvars is None:
        if not g:
            raise ValueError("need nvars when the inequality list is empty")
        nvars = g[0].nvars
    if any(p.nvars != nvars for p in g):
        raise ValueError("inequalities mix variable counts")
    out: list[tuple[tuple[int, ...], Polynomial]] = []
    for size in range(m2 + 1):
        for subset in itertools.combinations(range(m2), size):
            prod = Polynomial.constant(nvars, 1)
            for j in subset:
                prod = prod * g[j]
            out.append((subset, prod))
    return out


def _multiplier_family(
    p: OptProblem, family: str
) -> list[tuple[tuple[int, ...], Polynomial]]:
    if family == "preordering":
        return cross_products(list(p.inequalities), p.nvars)
    if family == "quadratic-module":
        pairs = [((), Polynomial.constant(p.nvars, 1))]
        pairs += [((j,), q) for j, q in enumerate(p.inequalities)]
        return pairs
    raise ValueError(f"unknown multiplier family {family!r}")


def _subset_label(nu: tuple[int, ...]) -> str:
    return "*".join(f"g{j + 1}" for j in nu) if nu else "1"


def build_system(p: OptProblem, variant: str) -> AugmentedSystem | None:
    """The generator system a variant needs (None for the baselines)."""
    system, _ = _variant_spec(variant)
    if system is None:
        return None
    factory = {
        "minimal-eta": phi_system,
        "all-minors": psi_system,
        "inactive": inactive_system,
    }[system]
    return factory(p)


def _variant_spec(variant: str) -> tuple[str | None, str]:
    try:
        return VARIANTS[variant]
    except KeyError:
        raise ValueError(
            f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}"
        ) from None


def min_order(p: OptProblem, variant: str, aug: AugmentedSystem | None = None) -> int:
    """Smallest N whose degree-2N truncation holds every assembled polynomial."""
    system, family = _variant_spec(variant)
    if system is not None and aug is None:
        aug = build_system(p, variant)
    degrees = [p.objective.degree, 1]
    degrees += [h.degree for h in p.equalities]
    if aug is not None:
        degrees += [q.degree for q in aug.generators]
    degrees += [q.degree for _, q in _multiplier_family(p, family)]
    return math.ceil(max(degrees) / 2)


@dataclass(frozen=True)
class RelaxationSDP:
    """Machine-level moment SDP: linear objective, equality rows, PSD blocks.

    Equality rows are stored scaled (unit infinity norm), sign-normalized and
    deduplicated; ``eq_multiplicity[k]`` counts how many raw localizing
    entries collapsed into row k.  Row 0 always pins y_0 = 1.
    """

    basis: MomentBasis
    objective: dict[int, Fraction] = field(compare=False)
    eq_rows: tuple[tuple[tuple[int, float], ...], ...]
    eq_rhs: tuple[float, ...]
    eq_multiplicity: tuple[int, ...]
    psd_blocks: tuple[LMIBlock, ...]
    variant: str
    problem: OptProblem | None = None

    @property
    def num_moments(self) -> int:
        return len(self.basis)

    @property
    def order(self) -> int:
        return self.basis.order


def _canonical_row(
    row: dict[int, Fraction]
) -> tuple[tuple[int, Fraction], ...] | None:
    items = sorted((pos, c) for pos, c in row.items() if c != 0)
    if not items:
        return None
    scale = max(abs(c) for _, c in items)
    lead = items[0][1]
    if lead < 0:
        scale = -scale
    return tuple((pos, c / scale) for pos, c in items)


def _equality_rows(
    polys: Iterable[Polynomial], order: int, basis: MomentBasis
) -> tuple[list, list, list]:
    # Shifts x^gamma with deg(x^gamma * q) <= 2N: the rows span the full
    # degree-2N truncated ideal, matching the multiplier degrees of the dual
    # sum-of-squares program.  (For even-degree q this equals the distinct
    # localizing-matrix entries; for odd degree it adds one shift degree.)
    seen: dict[tuple, int] = {}
    rows: list[tuple[tuple[int, float], ...]] = []
    mult: list[int] = []
    for q in polys:
        if q.is_zero():
            continue
        if q.degree > 2 * order:
            raise OrderTooSmallError(order, math.ceil(q.degree / 2))
        for gamma in monomials_up_to(basis.n, 2 * order - q.degree):
            raw: dict[int, Fraction] = {}
            for mono, coef in q.terms.items():
                pos = basis.position(mono * gamma)
                raw[pos] = raw.get(pos, Fraction(0)) + coef
            canon = _canonical_row(raw)
            if canon is None:
                continue
            if canon in seen:
                mult[seen[canon]] += 1
            else:
                seen[canon] = len(rows)
                rows.append(tuple((pos, float(c)) for pos, c in canon))
                mult.append(1)
    rhs = [0.0] * len(rows)
    return rows, rhs, mult


def assemble(
    p: OptProblem,
    aug: AugmentedSystem | None,
    order: int,
    variant: str = "jacobian-schmudgen",
) -> RelaxationSDP:
    """Assemble the order-N moment SDP of the requested variant.

    Raises :class:`OrderTooSmallError` (reporting the minimal admissible
    order) when 2N cannot hold the objective, a constraint, a generator or a
    multiplier product.
    """
    system, family = _variant_spec(variant)
    if system is None:
        generators: tuple[Polynomial, ...] = ()
    else:
        if aug is None:
            aug = build_system(p, variant)
        if aug.variant != system:
            raise ValueError(
                f"variant {variant!r} needs a {system!r} system, got {aug.variant!r}"
            )
        generators = aug.generators

    minimal = min_order(p, variant, aug)
    if order < minimal:
        raise OrderTooSmallError(order, minimal)

    basis = MomentBasis.build(p.nvars, order)
    objective = objective_vector(p.objective, basis)

    rows, rhs, mult = _equality_rows(
        list(p.equalities) + list(generators), order, basis
    )
    rows.insert(0, ((0, 1.0),))
    rhs.insert(0, 1.0)
    mult.insert(0, 1)

    blocks = tuple(
        localizing_block(q, order, basis, _subset_label(nu), nu)
        for nu, q in _multiplier_family(p, family)
    )
    if not blocks:
        raise ValueError("assembled SDP has no PSD blocks")
    return RelaxationSDP(
        basis=basis,
        objective=objective,
        eq_rows=tuple(rows),
        eq_rhs=tuple(rhs),
        eq_multiplicity=tuple(mult),
        psd_blocks=blocks,
        variant=variant,
        problem=p,
    )


def trace_refinement(
    sdp: RelaxationSDP, bound: float, margin: float | None = None
) -> RelaxationSDP:
    """SDP selecting the minimal-trace point of the bound-achieving face.

    Interior-point iterates land in the relative interior of the optimal
    face, which for these relaxations is typically fat (high pure-power
    moments are only bounded below at finite order).  Re-minimizing the trace
    of the moment matrix subject to the original constraints plus the cap
    ``L_f(y) <= bound + margin`` collapses every recession direction (the
    moment map is injective, so any feasible ray adds trace) and lands on the
    extremal low-rank point that rank certification and extraction need.
    """
    if margin is None:
        margin = 1e-7 * (1.0 + abs(bound))
    moment_block = sdp.psd_blocks[0]
    if moment_block.nu != ():
        raise ValueError("first PSD block is not the plain moment matrix")

    trace_obj: dict[int, Fraction] = {}
    for beta in monomials_up_to(sdp.basis.n, moment_block.basis_degree):
        pos = sdp.basis.position(beta * beta)
        trace_obj[pos] = trace_obj.get(pos, Fraction(0)) + 1

    cap = Fraction(bound + margin)
    cap_coeffs: dict[Monomial, dict[tuple[int, int], Fraction]] = {}
    origin = Monomial((0,) * sdp.basis.n)
    cap_coeffs[origin] = {(0, 0): cap}
    for pos, coef in sdp.objective.items():
        alpha = sdp.basis.monomials[pos]
        entry = cap_coeffs.setdefault(alpha, {})
        entry[(0, 0)] = entry.get((0, 0), Fraction(0)) - coef
    cap_block = LMIBlock(1, cap_coeffs, "bound-cap", (), 0)

    return RelaxationSDP(
        basis=sdp.basis,
        objective=trace_obj,
        eq_rows=sdp.eq_rows,
        eq_rhs=sdp.eq_rhs,
        eq_multiplicity=sdp.eq_multiplicity,
        psd_blocks=sdp.psd_blocks + (cap_block,),
        variant=sdp.variant,
        problem=sdp.problem,
    )


# -- SDPA sparse interchange ---------------------------------------------------


def to_sdpa(sdp: RelaxationSDP) -> str:
    """Serialize to SDPA sparse format (.dat-s).

    The moment entry y_0 = 1 is substituted out, so the file variables are the
    positions 1..M-1 of the moment basis; the objective constant f_0 is
    dropped (the sidecar written by the CLI records it).  Equality rows are
    encoded as a trailing diagonal block of paired +/- entries.  Output is
    deterministic: entries are sorted, floats use shortest round-trip form.
    """
    m = sdp.num_moments - 1
    eq = [
        (row, rhs)
        for row, rhs in zip(sdp.eq_rows, sdp.eq_rhs)
        if not (len(row) == 1 and row[0][0] == 0)
    ]
    block_sizes = [b.size for b in sdp.psd_blocks]
    if eq:
        block_sizes.append(-2 * len(eq))

    obj = [0.0] * m
    for pos, coef in sdp.objective.items():
        if pos:
            obj[pos - 1] = float(coef)

    # entries[k] holds (block, i, j, value) for matrix F_k, k=0 is the constant
    entries: dict[int, list[tuple[int, int, int, float]]] = {}

    def put(k: int, blk: int, i: int, j: int, v: float) -> None:
        if v != 0.0:
            entries.setdefault(k, []).append((blk, i, j, v))

    for blk, block in enumerate(sdp.psd_blocks, start=1):
        for alpha, entry in block.coeffs.items():
            pos = sdp.basis.position(alpha)
            for (i, j), coef in entry.items():
                if pos == 0:
                    put(0, blk, i + 1, j + 1, -float(coef))
                else:
                    put(pos, blk, i + 1, j + 1, float(coef))
    if eq:
        blk = len(sdp.psd_blocks) + 1
        for k, (row, rhs) in enumerate(eq, start=1):
            const = rhs - sum(v for pos, v in row if pos == 0)
            put(0, blk, 2 * k - 1, 2 * k - 1, const)
            put(0, blk, 2 * k, 2 * k, -const)
            for pos, v in row:
                if pos == 0:
                    continue
                put(pos, blk, 2 * k - 1, 2 * k - 1, v)
                put(pos, blk, 2 * k, 2 * k, -v)

    lines = [
        f"{m} = mDIM",
        f"{len(block_sizes)} = nBLOCK",
        "(" + ", ".join(str(s) for s in block_sizes) + ") = bLOCKsTRUCT",
        " ".join(repr(v) for v in obj),
    ]
    for k in sorted(entries):
        for blk, i, j, v in sorted(entries[k]):
            lines.append(f"{k} {blk} {i} {j} {v!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SdpaData:
    """Parsed SDPA sparse file: header structure plus coefficient entries."""

    num_vars: int
    block_sizes: tuple[int, ...]
    objective: tuple[float, ...]
    entries: tuple[tuple[int, int, int, int, float], ...]  # (k, block, i, j, v)


def read_sdpa(text: str) -> SdpaData:
    """Parse SDPA sparse format produced by :func:`to_sdpa` (or compatible)."""
    lines = [
        ln.strip()
        for ln in text.splitlines()
        if ln.strip() and not ln.lstrip().startswith(("*", '"'))
    ]

    def leading_int(line: str) -> int:
        token = line.split("=")[0].strip().split()[0]
        return int(token)

    num_vars = leading_int(lines[0])
    nblocks = leading_int(lines[1])
    struct_txt = lines[2].split("=")[0]
    sizes = tuple(
        int(tok)
        for tok in struct_txt.replace("(", " ").replace(")", " ").replace(",", " ").split()
    )
    if len(sizes) != nblocks:
        raise ValueError(f"block structure lists {len(sizes)} sizes, header says {nblocks}")
    objective = tuple(
        float(tok) for tok in lines[3].replace(",", " ").replace("{", " ").replace("}", " ").split()
    )
    entries = []
    for ln in lines[4:]:
        k, blk, i, j, v = ln.split()
        entries.append((int(k), int(blk), int(i), int(j), float(v)))
    return SdpaData(num_vars, sizes, objective, tuple(entries))
