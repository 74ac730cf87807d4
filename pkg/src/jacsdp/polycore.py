"""Exact sparse multivariate polynomial arithmetic.

A monomial is an exponent vector alpha in N^n; a polynomial is a sparse map
from monomials to exact rational coefficients (``fractions.Fraction``).  All
construction-time arithmetic is exact; floating point enters only through
``Polynomial.evaluate`` (and downstream, at the SDP assembly boundary).

Canonical conventions used package-wide:

* no zero coefficient is ever stored, so ``p == q`` iff the term maps match;
* the monomial basis order is graded lexicographic: ascending total degree,
  and within a degree block x1-major (``1, x1, x2, x1^2, x1*x2, x2^2, ...``);
* the canonical text form lists terms in descending graded-lex order with
  explicit ``*`` products and ``^`` powers, e.g. ``x1^2*x2 - 1/2*x3 + 2``.

Values are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence


@dataclass(frozen=True)
class Monomial:
    """Exponent vector alpha; ``exponents[i]`` is the power of variable i."""

    exponents: tuple[int, ...]

    def __post_init__(self) -> None:
        if any(e < 0 for e in self.exponents):
            raise ValueError(f"negative exponent in monomial {self.exponents}")

    @property
    def nvars(self) -> int:
        return len(self.exponents)

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def __mul__(self, other: "Monomial") -> "Monomial":
        if len(self.exponents) != len(other.exponents):
            raise ValueError("monomial variable counts differ")
        return Monomial(tuple(a + b for a, b in zip(self.exponents, other.exponents)))

    def grlex_key(self) -> tuple[int, tuple[int, ...]]:
        """Sort key realizing the canonical ascending graded-lex order."""
        return (self.degree, tuple(-e for e in self.exponents))


def _fraction(value: int | Fraction) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    raise TypeError(f"expected exact rational coefficient, got {type(value).__name__}")


class Polynomial:
    """Sparse multivariate polynomial with exact rational coefficients."""

    __slots__ = ("terms", "nvars")

    def __init__(self, nvars: int, terms: dict[Monomial, Fraction] | None = None):
        if nvars < 0:
            raise ValueError("nvars must be nonnegative")
        clean: dict[Monomial, Fraction] = {}
        for mono, coef in (terms or {}).items():
            if mono.nvars != nvars:
                raise ValueError(f"monomial has {mono.nvars} variables, expected {nvars}")
            coef = _fraction(coef)
            if coef != 0:
                clean[mono] = coef
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "nvars", nvars)

    def __setattr__(self, name: str, value: object) -> None:
        raise AttributeError("Polynomial is immutable")

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero(nvars: int) -> "Polynomial":
        return Polynomial(nvars)

    @staticmethod
    def constant(nvars: int, value: int | Fraction) -> "Polynomial":
        return Polynomial(nvars, {Monomial((0,) * nvars): _fraction(value)})

    @staticmethod
    def variable(nvars: int, index: int) -> "Polynomial":
        """The polynomial x_index (0-based)."""
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} variables")
        exps = [0] * nvars
        exps[index] = 1
        return Polynomial(nvars, {Monomial(tuple(exps)): Fraction(1)})

    # -- ring structure ----------------------------------------------------

    def _require_same_ring(self, other: "Polynomial") -> None:
        if self.nvars != other.nvars:
            raise ValueError(
                f"variable-count mismatch: {self.nvars} vs {other.nvars}"
            )

    def __add__(self, other: "Polynomial | int | Fraction") -> "Polynomial":
        if isinstance(other, (int, Fraction)):
            other = Polynomial.constant(self.nvars, other)
        self._require_same_ring(other)
        out = dict(self.terms)
        for mono, coef in other.terms.items():
            out[mono] = out.get(mono, Fraction(0)) + coef
        return Polynomial(self.nvars, out)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.nvars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other: "Polynomial | int | Fraction") -> "Polynomial":
        if isinstance(other, (int, Fraction)):
            other = Polynomial.constant(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other: int | Fraction) -> "Polynomial":
        return Polynomial.constant(self.nvars, other) - self

    def __mul__(self, other: "Polynomial | int | Fraction") -> "Polynomial":
        if isinstance(other, (int, Fraction)):
            scale = _fraction(other)
            return Polynomial(self.nvars, {m: c * scale for m, c in self.terms.items()})
        self._require_same_ring(other)
        out: dict[Monomial, Fraction] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = ma * mb
                out[m] = out.get(m, Fraction(0)) + ca * cb
        return Polynomial(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, exponent: int) -> "Polynomial":
        if exponent < 0:
            raise ValueError("negative polynomial power")
        result = Polynomial.constant(self.nvars, 1)
        base = self
        e = exponent
        while e:
            if e & 1:
                result = result * base
            base = base * base
            e >>= 1
        return result

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Polynomial({poly_to_str(self)!r})"

    # -- queries -----------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        """Total degree; the zero polynomial reports 0."""
        return max((m.degree for m in self.terms), default=0)

    def coefficient(self, mono: Monomial) -> Fraction:
        return self.terms.get(mono, Fraction(0))

    def evaluate(self, point: Sequence[float]) -> float:
        """Value at a real point, term by term in floating point."""
        if len(point) != self.nvars:
            raise ValueError(f"point has {len(point)} coordinates, expected {self.nvars}")
        total = 0.0
        for mono, coef in self.terms.items():
            value = float(coef)
            for x, e in zip(point, mono.exponents):
                if e:
                    value *= float(x) ** e
            total += value
        return total

    def evaluate_exact(self, point: Sequence[int | Fraction]) -> Fraction:
        """Value at a rational point, in exact arithmetic."""
        if len(point) != self.nvars:
            raise ValueError(f"point has {len(point)} coordinates, expected {self.nvars}")
        total = Fraction(0)
        for mono, coef in self.terms.items():
            value = coef
            for x, e in zip(point, mono.exponents):
                if e:
                    value *= _fraction(x) ** e
            total += value
        return total


# -- calculus ---------------------------------------------------------------


def partial(p: Polynomial, i: int) -> Polynomial:
    """Exact partial derivative of p with respect to variable i (0-based)."""
    if not 0 <= i < p.nvars:
        raise IndexError(f"variable index {i} out of range for {p.nvars} variables")
    out: dict[Monomial, Fraction] = {}
    for mono, coef in p.terms.items():
        e = mono.exponents[i]
        if e == 0:
            continue
        exps = list(mono.exponents)
        exps[i] = e - 1
        m = Monomial(tuple(exps))
        out[m] = out.get(m, Fraction(0)) + coef * e
    return Polynomial(p.nvars, out)


def gradient(p: Polynomial) -> list[Polynomial]:
    """All n partial derivatives, in variable order."""
    return [partial(p, i) for i in range(p.nvars)]


# -- polynomial matrices -----------------------------------------------------


@dataclass(frozen=True)
class PolyMatrix:
    """Dense rectangular matrix of polynomials sharing one variable set."""

    rows: int
    cols: int
    entries: tuple[tuple[Polynomial, ...], ...]

    def __post_init__(self) -> None:
        if len(self.entries) != self.rows or any(len(r) != self.cols for r in self.entries):
            raise ValueError("entry grid does not match declared shape")
        nv = {p.nvars for row in self.entries for p in row}
        if len(nv) > 1:
            raise ValueError(f"entries mix variable counts {sorted(nv)}")

    @staticmethod
    def from_columns(columns: Sequence[Sequence[Polynomial]]) -> "PolyMatrix":
        rows = len(columns[0])
        grid = tuple(tuple(col[i] for col in columns) for i in range(rows))
        return PolyMatrix(rows, len(columns), grid)

    @property
    def nvars(self) -> int:
        return self.entries[0][0].nvars

    def entry(self, i: int, j: int) -> Polynomial:
        return self.entries[i][j]

    def evaluate(self, point: Sequence[float]) -> list[list[float]]:
        return [[p.evaluate(point) for p in row] for row in self.entries]


def poly_det(m: PolyMatrix) -> Polynomial:
    """Exact determinant by cofactor expansion along the sparsest row/column."""
    if m.rows != m.cols:
        raise ValueError(f"determinant of non-square {m.rows}x{m.cols} matrix")
    grid = [list(row) for row in m.entries]
    return _det_cofactor(grid, m.nvars)


def _det_cofactor(grid: list[list[Polynomial]], nvars: int) -> Polynomial:
    k = len(grid)
    if k == 0:
        return Polynomial.constant(nvars, 1)
    if k == 1:
        return grid[0][0]
    if k == 2:
        return grid[0][0] * grid[1][1] - grid[0][1] * grid[1][0]
    row_zeros = [sum(grid[i][j].is_zero() for j in range(k)) for i in range(k)]
    col_zeros = [sum(grid[i][j].is_zero() for i in range(k)) for j in range(k)]
    best_row = max(range(k), key=lambda i: row_zeros[i])
    best_col = max(range(k), key=lambda j: col_zeros[j])
    acc = Polynomial.zero(nvars)
    if row_zeros[best_row] >= col_zeros[best_col]:
        i = best_row
        for j in range(k):
            if grid[i][j].is_zero():
                continue
            sub = [row[:j] + row[j + 1 :] for r, row in enumerate(grid) if r != i]
            cofactor = _det_cofactor(sub, nvars)
            term = grid[i][j] * cofactor
            acc = acc + term if (i + j) % 2 == 0 else acc - term
    else:
        j = best_col
        for i in range(k):
            if grid[i][j].is_zero():
                continue
            sub = [row[:j] + row[j + 1 :] for r, row in enumerate(grid) if r != i]
            cofactor = _det_cofactor(sub, nvars)
            term = grid[i][j] * cofactor
            acc = acc + term if (i + j) % 2 == 0 else acc - term
    return acc


def minor(m: PolyMatrix, row_set: Sequence[int], col_set: Sequence[int]) -> Polynomial:
    """Determinant of the submatrix selected by 0-based row/column index sets."""
    rows = tuple(row_set)
    cols = tuple(col_set)
    if len(rows) != len(cols):
        raise ValueError("row and column index sets must have equal size")
    for name, idx, bound in (("row", rows, m.rows), ("column", cols, m.cols)):
        if any(not 0 <= i < bound for i in idx):
            raise ValueError(f"{name} index set {idx} out of range")
        if any(a >= b for a, b in zip(idx, idx[1:])):
            raise ValueError(f"{name} index set {idx} is not strictly increasing")
    grid = [[m.entry(i, j) for j in cols] for i in rows]
    return _det_cofactor(grid, m.nvars)


# -- monomial bases ----------------------------------------------------------


def _exponents_of_degree(n: int, d: int) -> Iterator[tuple[int, ...]]:
    if n == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _exponents_of_degree(n - 1, d - first):
            yield (first,) + rest


def monomials_up_to(n: int, d: int) -> list[Monomial]:
    """All monomials of total degree <= d in canonical graded-lex order.

    The result has C(n+d, d) entries and is a prefix of the order-(d+1) list;
    this is the basis ordering every moment-matrix index in the package uses.
    """
    if n < 1:
        raise ValueError("need at least one variable")
    if d < 0:
        raise ValueError("degree bound must be nonnegative")
    out = [Monomial(e) for deg in range(d + 1) for e in _exponents_of_degree(n, deg)]
    assert len(out) == math.comb(n + d, d)
    return out


# -- canonical text form ------------------------------------------------------


def default_var_names(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def _format_monomial(mono: Monomial, names: Sequence[str]) -> str:
    parts = []
    for name, e in zip(names, mono.exponents):
        if e == 1:
            parts.append(name)
        elif e > 1:
            parts.append(f"{name}^{e}")
    return "*".join(parts)


def poly_to_str(p: Polynomial, names: Sequence[str] | None = None) -> str:
    """Canonical text form: descending graded-lex terms, explicit signs."""
    if names is None:
        names = default_var_names(p.nvars)
    if len(names) != p.nvars:
        raise ValueError("wrong number of variable names")
    if p.is_zero():
        return "0"
    items = sorted(p.terms.items(), key=lambda kv: (-kv[0].degree, tuple(-e for e in kv[0].exponents)))
    chunks: list[tuple[str, str]] = []
    for mono, coef in items:
        sign = "-" if coef < 0 else "+"
        mag = -coef if coef < 0 else coef
        mono_txt = _format_monomial(mono, names)
        if not mono_txt:
            body = str(mag)
        elif mag == 1:
            body = mono_txt
        else:
            body = f"{mag}*{mono_txt}"
        chunks.append((sign, body))
    first_sign, first_body = chunks[0]
    text = (first_sign if first_sign == "-" else "") + first_body
    for sign, body in chunks[1:]:
        text += f" {sign} {body}"
    return text


class ParseError(ValueError):
    """Syntax or lookup failure in polynomial text, with a character position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


_TOKEN_OPS = set("+-*/^()")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _TOKEN_OPS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            start = i
            while i < len(text) and (text[i].isdigit() or text[i] == "."):
                i += 1
            tokens.append(("num", text[start:i], start))
            continue
        if ch.isalpha() or ch == "_":
            start = i
            while i < len(text) and (text[i].isalnum() or text[i] == "_"):
                i += 1
            tokens.append(("ident", text[start:i], start))
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive-descent parser for the canonical polynomial grammar.

    expr   := ['+'|'-'] term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := base ['^' integer]
    base   := number | variable | '(' expr ')' | ('+'|'-') factor
    """

    def __init__(self, text: str, names: Sequence[str]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.names = {name: idx for idx, name in enumerate(names)}
        self.nvars = len(names)

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def advance(self) -> tuple[str, str, int]:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str) -> None:
        kind, value, where = self.peek()
        if kind != "op" or value != op:
            raise ParseError(f"expected {op!r}", where)
        self.advance()

    def parse(self) -> Polynomial:
        p = self.expr()
        kind, value, where = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected trailing input {value!r}", where)
        return p

    def expr(self) -> Polynomial:
        p = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.term()
                p = p + rhs if value == "+" else p - rhs
            else:
                return p

    def term(self) -> Polynomial:
        p = self.factor()
        while True:
            kind, value, where = self.peek()
            if kind == "op" and value == "*":
                self.advance()
                p = p * self.factor()
            elif kind == "op" and value == "/":
                self.advance()
                divisor = self.factor()
                if divisor.degree > 0 or divisor.is_zero():
                    raise ParseError("division only by a nonzero constant", where)
                p = p * (1 / divisor.coefficient(Monomial((0,) * self.nvars)))
            else:
                return p

    def factor(self) -> Polynomial:
        p = self.base()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            kind, value, where = self.peek()
            if kind != "num" or "." in value:
                raise ParseError("exponent must be a nonnegative integer", where)
            self.advance()
            p = p ** int(value)
        return p

    def base(self) -> Polynomial:
        kind, value, where = self.advance()
        if kind == "num":
            try:
                coef = Fraction(value)  # decimals become exact rationals
            except ValueError:
                raise ParseError(f"bad numeric literal {value!r}", where) from None
            return Polynomial.constant(self.nvars, coef)
        if kind == "ident":
            if value not in self.names:
                raise ParseError(f"unknown identifier {value!r}", where)
            return Polynomial.variable(self.nvars, self.names[value])
        if kind == "op" and value == "(":
            p = self.expr()
            self.expect_op(")")
            return p
        if kind == "op" and value in "+-":
            p = self.factor()
            return p if value == "+" else -p
        raise ParseError(f"unexpected token {value!r}", where)


def parse_poly(text: str, names: Sequence[str]) -> Polynomial:
    """Parse polynomial text over the declared variable names (exact result)."""
    return _Parser(text, names).parse()
