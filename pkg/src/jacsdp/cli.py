"""Batch front end: solve problem files, compare variants, export SDPA.

Problem files are small declarative text files::

    # comment
    name: motzkin_ball
    vars: x1 x2 x3
    min: x1^4*x2^2 + x1^2*x2^4 + x3^6 - 3*x1^2*x2^2*x3^2
    ge: 1 - x1^2 - x2^2 - x3^2
    eq: <expression>          (zero or more of each constraint line)
    optimum: 0.0              (optional metadata for harnesses)
    order: 4                  (optional metadata: pinned relaxation order)

Exit codes are a stable scripting contract: 0 success, 2 parse error,
3 guard violation (shape limits, inadmissible order), 4 solver failure,
5 certification refused (flat extension failed or extraction impossible).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .certify import (
    ExtractionError,
    extract_minimizers,
    flat_extension_check,
    verify_candidate,
)
from .detvar import OptProblem
from .polycore import ParseError, parse_poly, poly_to_str
from .relaxation import (
    CROSS_PRODUCT_CAP,
    OrderTooSmallError,
    VARIANTS,
    assemble,
    build_system,
    min_order,
    to_sdpa,
)
from .sdp import solve, solve_refined

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_GUARD = 3
EXIT_SOLVER = 4
EXIT_CERTIFY = 5

REPORT_SCHEMA = "jacsdp-run-report/1"


class ProblemFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class GuardError(ValueError):
    pass


@dataclass
class ProblemFile:
    """Parsed problem file: declared variables, objective and constraints."""

    variables: list[str]
    objective: str
    equalities: list[str] = field(default_factory=list)
    inequalities: list[str] = field(default_factory=list)
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.metadata.get("name", "unnamed")

    def problem(self) -> OptProblem:
        n = len(self.variables)
        return OptProblem(
            n,
            parse_poly(self.objective, self.variables),
            tuple(parse_poly(t, self.variables) for t in self.equalities),
            tuple(parse_poly(t, self.variables) for t in self.inequalities),
        )

    def canonical_text(self) -> str:
        """Canonical re-print; parsing it again yields the same problem."""
        p = self.problem()
        lines = []
        if "name" in self.metadata:
            lines.append(f"name: {self.metadata['name']}")
        lines.append("vars: " + " ".join(self.variables))
        lines.append("min: " + poly_to_str(p.objective, self.variables))
        for h in p.equalities:
            lines.append("eq: " + poly_to_str(h, self.variables))
        for g in p.inequalities:
            lines.append("ge: " + poly_to_str(g, self.variables))
        for key, value in self.metadata.items():
            if key != "name":
                lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"


def parse_problem_text(text: str) -> ProblemFile:
    variables: list[str] | None = None
    objective: str | None = None
    eqs: list[str] = []
    ges: list[str] = []
    metadata: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ProblemFormatError(f"expected 'key: value', got {line!r}", lineno)
        key, _, value = line.partition(":")
        key = key.strip().lower()
        value = value.strip()
        if key == "vars":
            variables = value.split()
            if not variables:
                raise ProblemFormatError("empty variable list", lineno)
        elif key == "min":
            if objective is not None:
                raise ProblemFormatError("duplicate objective line", lineno)
            objective = value
        elif key == "eq":
            eqs.append(value)
        elif key == "ge":
            ges.append(value)
        else:
            metadata[key] = value
    if variables is None:
        raise ProblemFormatError("missing 'vars:' line", 0)
    if objective is None:
        raise ProblemFormatError("missing 'min:' line", 0)
    pf = ProblemFile(variables, objective, eqs, ges, metadata)
    pf.problem()  # parse every expression now so errors surface here
    return pf


def parse_problem_file(path: str | Path) -> ProblemFile:
    return parse_problem_text(Path(path).read_text())


def _check_guards(p: OptProblem) -> None:
    if p.num_eq > p.nvars:
        raise GuardError(
            f"{p.num_eq} equality constraints in {p.nvars} variables: the "
            "construction requires at most n equalities (smoothness assumption)"
        )
    if p.num_ineq > CROSS_PRODUCT_CAP:
        raise GuardError(
            f"{p.num_ineq} inequality constraints would need "
            f"2^{p.num_ineq} localizing blocks (cap {CROSS_PRODUCT_CAP})"
        )


@dataclass
class RunReport:
    """Everything one pipeline run produced, JSON-serializable."""

    problem: str
    variant: str
    order: int
    primal_bound: float
    dual_bound: float
    status: str
    iterations: int
    gap: float
    residuals: dict
    fec: dict | None
    minimizers: list[list[float]]
    checks: list[dict]
    wall_time: float
    exit_code: int
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, **self.__dict__}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def run_pipeline(
    pf: ProblemFile,
    variant: str = "jacobian-schmudgen",
    order: int | None = None,
    rank_tol: float = 1e-6,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
    cert_tol: float = 1e-4,
    relaxed_fec: bool = False,
    seed: int = 0,
    certify: bool = True,
) -> RunReport:
    """Construct, solve, certify and extract for one problem file."""
    start = time.perf_counter()
    problem = pf.problem()
    _check_guards(problem)
    aug = build_system(problem, variant)
    if order is None:
        order = min_order(problem, variant, aug)
    sdp = assemble(problem, aug, order, variant)

    if certify:
        sol, refined, ycert = solve_refined(
            sdp, gap_tol=gap_tol, feas_tol=feas_tol, max_iter=max_iter
        )
    else:
        sol = solve(sdp, gap_tol=gap_tol, feas_tol=feas_tol, max_iter=max_iter)
        ycert = sol.y

    fec_blob = None
    minimizers: list[list[float]] = []
    checks: list[dict] = []
    exit_code = EXIT_OK
    error = None
    if sol.status not in ("optimal", "near-optimal"):
        exit_code = EXIT_SOLVER
        error = f"solver status {sol.status}"
    elif certify:
        report = flat_extension_check(ycert, sdp, rank_tol, relaxed=relaxed_fec)
        if report.fec:
            try:
                points = extract_minimizers(ycert, sdp, rank_tol, seed=seed)
                for point in points:
                    check = verify_candidate(point, problem, sol.primal_obj, cert_tol)
                    minimizers.append([float(v) for v in point])
                    checks.append(
                        {
                            "point": list(check.point),
                            "objective": check.objective,
                            "max_equality_violation": check.max_equality_violation,
                            "min_inequality_value": check.min_inequality_value,
                            "gap_to_bound": check.gap_to_bound,
                            "feasible": check.feasible,
                            "certified": check.certified,
                        }
                    )
            except ExtractionError as exc:
                exit_code = EXIT_CERTIFY
                error = str(exc)
        else:
            exit_code = EXIT_CERTIFY
            error = "flat-extension condition failed"
        report.points = [tuple(pt) for pt in minimizers]
        fec_blob = report.to_json_dict()
    return RunReport(
        problem=pf.name,
        variant=variant,
        order=order,
        primal_bound=sol.primal_obj,
        dual_bound=sol.dual_obj,
        status=sol.status,
        iterations=sol.iterations,
        gap=sol.gap,
        residuals=sol.residuals,
        fec=fec_blob,
        minimizers=minimizers,
        checks=checks,
        wall_time=time.perf_counter() - start,
        exit_code=exit_code,
        error=error,
    )


# -- subcommands -----------------------------------------------------------------


def _cmd_solve(args: argparse.Namespace) -> int:
    try:
        pf = parse_problem_file(args.file)
    except (ProblemFormatError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    order = None if args.order == "auto" else int(args.order)
    try:
        report = run_pipeline(
            pf,
            variant=args.variant,
            order=order,
            rank_tol=args.rank_tol,
            gap_tol=args.gap_tol,
            feas_tol=args.feas_tol,
            max_iter=args.max_iter,
            cert_tol=args.cert_tol,
            relaxed_fec=args.relaxed_fec,
            seed=args.seed,
        )
    except (GuardError, OrderTooSmallError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return report.exit_code


def _parse_orders(spec: str) -> list[int]:
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in spec.split(",")]


def _compare_cell(payload):
    pf_text, variant, order, gap_tol, feas_tol, max_iter = payload
    pf = parse_problem_text(pf_text)
    try:
        report = run_pipeline(
            pf,
            variant=variant,
            order=order,
            gap_tol=gap_tol,
            feas_tol=feas_tol,
            max_iter=max_iter,
            certify=False,
        )
        return {
            "variant": variant,
            "order": order,
            "primal": report.primal_bound,
            "dual": report.dual_bound,
            "status": report.status,
            "failed": report.status not in ("optimal", "near-optimal"),
        }
    except (GuardError, OrderTooSmallError, ValueError) as exc:
        return {
            "variant": variant,
            "order": order,
            "primal": None,
            "dual": None,
            "status": f"error: {exc}",
            "failed": True,
        }


def compare_grid(
    pf: ProblemFile,
    variants: list[str],
    orders: list[int],
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-8,
    max_iter: int = 200,
    jobs: int = 1,
) -> list[dict]:
    payloads = [
        (pf.canonical_text(), variant, order, gap_tol, feas_tol, max_iter)
        for variant in variants
        for order in orders
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_compare_cell, payloads))
    else:
        cells = [_compare_cell(p) for p in payloads]
    return cells


def comparison_markdown(name: str, cells: list[dict]) -> str:
    variants = sorted({c["variant"] for c in cells}, key=lambda v: list(VARIANTS).index(v))
    orders = sorted({c["order"] for c in cells})
    by_key = {(c["variant"], c["order"]): c for c in cells}
    lines = [f"# Bounds for {name}", ""]
    lines.append("| N | " + " | ".join(variants) + " |")
    lines.append("|---" * (len(variants) + 1) + "|")
    for order in orders:
        row = [str(order)]
        for variant in variants:
            cell = by_key.get((variant, order))
            if cell is None or cell["failed"]:
                row.append("failed")
            else:
                row.append(f"{cell['primal']:.6g}")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def _cmd_compare(args: argparse.Namespace) -> int:
    try:
        pf = parse_problem_file(args.file)
    except (ProblemFormatError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    variants = args.variants.split(",")
    for variant in variants:
        if variant not in VARIANTS:
            print(f"error: unknown variant {variant!r}", file=sys.stderr)
            return EXIT_GUARD
    orders = _parse_orders(args.orders)
    cells = compare_grid(
        pf, variants, orders,
        gap_tol=args.gap_tol, feas_tol=args.feas_tol,
        max_iter=args.max_iter, jobs=args.jobs,
    )
    markdown = comparison_markdown(pf.name, cells)
    if args.out:
        out = Path(args.out)
        if out.suffix == ".md":
            out.write_text(markdown)
        else:
            out.write_text(json.dumps({"problem": pf.name, "cells": cells}, indent=2) + "\n")
    print(markdown)
    return EXIT_OK


def _cmd_export(args: argparse.Namespace) -> int:
    try:
        pf = parse_problem_file(args.file)
    except (ProblemFormatError, ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    try:
        problem = pf.problem()
        _check_guards(problem)
        aug = build_system(problem, args.variant)
        order = min_order(problem, args.variant, aug) if args.order == "auto" else int(args.order)
        sdp = assemble(problem, aug, order, args.variant)
    except (GuardError, OrderTooSmallError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    out = Path(args.out)
    out.write_text(to_sdpa(sdp))
    constant = float(sdp.objective.get(0, 0))
    sidecar = {
        "problem": pf.name,
        "variant": args.variant,
        "order": order,
        "objective_constant": constant,
        "monomials": [poly_to_str_mono(m, pf.variables) for m in sdp.basis.monomials],
        "blocks": [
            {"label": b.label, "size": b.size} for b in sdp.psd_blocks
        ],
    }
    Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"wrote {out} and {out}.json")
    return EXIT_OK


def poly_to_str_mono(mono, names) -> str:
    from .polycore import Polynomial

    return poly_to_str(Polynomial(len(names), {mono: 1}), names)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jacsdp",
        description="Globally minimize polynomials via Jacobian-augmented moment relaxations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("file", help="problem file")
        p.add_argument("--variant", default="jacobian-schmudgen", choices=sorted(VARIANTS))
        p.add_argument("--gap-tol", type=float, default=1e-8)
        p.add_argument("--feas-tol", type=float, default=1e-8)
        p.add_argument("--max-iter", type=int, default=200)

    p_solve = sub.add_parser("solve", help="solve one problem and certify the bound")
    common(p_solve)
    p_solve.add_argument("--order", default="auto", help="relaxation order N, or 'auto'")
    p_solve.add_argument("--rank-tol", type=float, default=1e-6)
    p_solve.add_argument("--cert-tol", type=float, default=1e-4)
    p_solve.add_argument("--relaxed-fec", action="store_true",
                         help="flatness from the plain moment matrix only")
    p_solve.add_argument("--seed", type=int, default=0)
    p_solve.add_argument("--out", help="write the JSON report here as well")
    p_solve.set_defaults(func=_cmd_solve)

    p_cmp = sub.add_parser("compare", help="bound table across variants and orders")
    common(p_cmp)
    p_cmp.add_argument("--variants", default="baseline-putinar,jacobian-schmudgen")
    p_cmp.add_argument("--orders", required=True, help="e.g. 3..7 or 4,6")
    p_cmp.add_argument("--jobs", type=int, default=1)
    p_cmp.add_argument("--out", help=".md for markdown, anything else for JSON")
    p_cmp.set_defaults(func=_cmd_compare)

    p_exp = sub.add_parser("export", help="write the SDP in SDPA sparse format")
    common(p_exp)
    p_exp.add_argument("--order", default="auto")
    p_exp.add_argument("--out", required=True, help="output .dat-s path")
    p_exp.set_defaults(func=_cmd_export)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
