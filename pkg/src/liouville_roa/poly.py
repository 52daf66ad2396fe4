"""
Sparse multivariate polynomials over a fixed, ordered variable context.

A :class:`Polynomial` maps exponent tuples (one entry per context variable)
to float coefficients.  Monomials are ordered graded-lexicographically:
total degree first, then lexicographic comparison of the exponent tuples.
That order is used for the monomial bases, for the dense moment vectors and
for the canonical printer.

Text grammar accepted by :func:`parse_poly`::

    expr   := ['+'|'-'] term (('+'|'-') term)*
    term   := factor ('*' factor)*
    factor := number | name ['^' int] | '(' expr ')' ['^' int]

Numbers use the usual decimal/exponent notation (``0.25``, ``1e-3``).
Parenthesised groups are expanded at parse time.
"""

from __future__ import annotations

import math
import re
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

ZERO_TOL = 1e-14

MultiIndex = tuple[int, ...]


class PolyError(ValueError):
    pass


class UnknownVariable(PolyError):
    pass


class PolySyntaxError(PolyError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ContextMismatch(PolyError):
    pass


class DimensionMismatch(PolyError):
    pass


def grlex_key(alpha: Sequence[int]) -> tuple:
    return (sum(alpha), tuple(alpha))


@lru_cache(maxsize=None)
def _basis_cached(n: int, d: int) -> tuple[MultiIndex, ...]:
    out: list[MultiIndex] = []
    for deg in range(d + 1):
        out.extend(_compositions(deg, n))
    return tuple(out)


def _compositions(total: int, parts: int) -> list[MultiIndex]:
    # all exponent tuples of the given total, lexicographically ascending
    if parts == 1:
        return [(total,)]
    res = []
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            res.append((first,) + rest)
    return res


def monomial_basis(n: int, d: int) -> list[MultiIndex]:
    """All exponent tuples in ``n`` variables of total degree ``<= d``, ascending grlex.

    >>> monomial_basis(1, 3)
    [(0,), (1,), (2,), (3,)]
    """
    if n < 1 or d < 0:
        raise ValueError("monomial_basis needs n >= 1 and d >= 0")
    return list(_basis_cached(n, d))


def basis_size(n: int, d: int) -> int:
    return math.comb(n + d, d)


def grlex_rank(alpha: Sequence[int]) -> int:
    """Position of ``alpha`` in :func:`monomial_basis` (combinatorial number system)."""
    n = len(alpha)
    d = sum(alpha)
    rank = math.comb(n + d - 1, n) if d > 0 else 0
    remaining = d
    for i in range(n - 1):
        slots = n - i - 1
        for v in range(alpha[i]):
            # compositions of (remaining - v) into `slots` parts
            rank += math.comb(remaining - v + slots - 1, slots - 1)
        remaining -= alpha[i]
    return rank


@lru_cache(maxsize=None)
def basis_index(n: int, d: int) -> dict[MultiIndex, int]:
    return {a: i for i, a in enumerate(_basis_cached(n, d))}


class Polynomial:
    """Immutable sparse polynomial.

    Parameters
    ----------
    variables : sequence of str
        Ordered variable names (the context).
    terms : mapping from exponent tuple to coefficient
        Coefficients smaller than ``ZERO_TOL`` in magnitude are dropped.
    """

    __slots__ = ("_vars", "_terms", "_hash")

    def __init__(self, variables: Sequence[str], terms: Mapping[MultiIndex, float] | None = None):
        self._vars = tuple(variables)
        n = len(self._vars)
        clean: dict[MultiIndex, float] = {}
        if terms:
            for alpha, c in terms.items():
                alpha = tuple(int(a) for a in alpha)
                if len(alpha) != n:
                    raise DimensionMismatch(
                        f"exponent {alpha} has length {len(alpha)}, context has {n} variables")
                if any(a < 0 for a in alpha):
                    raise PolyError(f"negative exponent in {alpha}")
                c = float(c)
                if abs(c) >= ZERO_TOL:
                    clean[alpha] = c
        self._terms = clean
        self._hash = None

    # construction helpers -------------------------------------------------
    @classmethod
    def zero(cls, variables: Sequence[str]) -> "Polynomial":
        return cls(variables)

    @classmethod
    def constant(cls, variables: Sequence[str], c: float) -> "Polynomial":
        return cls(variables, {(0,) * len(variables): c})

    @classmethod
    def variable(cls, variables: Sequence[str], name: str) -> "Polynomial":
        variables = tuple(variables)
        if name not in variables:
            raise UnknownVariable(f"unknown variable {name!r}")
        alpha = tuple(1 if v == name else 0 for v in variables)
        return cls(variables, {alpha: 1.0})

    # basic accessors ------------------------------------------------------
    @property
    def variables(self) -> tuple[str, ...]:
        return self._vars

    @property
    def nvars(self) -> int:
        return len(self._vars)

    @property
    def terms(self) -> dict[MultiIndex, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, alpha: Sequence[int]) -> float:
        return self._terms.get(tuple(alpha), 0.0)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        return max((sum(a) for a in self._terms), default=0)

    def degree_in(self, names: Iterable[str]) -> int:
        idx = [self._vars.index(v) for v in names if v in self._vars]
        return max((sum(a[i] for i in idx) for a in self._terms), default=0)

    def depends_on(self, name: str) -> bool:
        if name not in self._vars:
            return False
        i = self._vars.index(name)
        return any(a[i] for a in self._terms)

    def coefficient_norm(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    def sorted_terms(self, descending: bool = False) -> list[tuple[MultiIndex, float]]:
        return sorted(self._terms.items(), key=lambda kv: grlex_key(kv[0]), reverse=descending)

    # arithmetic -------------------------------------------------------------
    def _check(self, other: "Polynomial"):
        if self._vars != other._vars:
            raise ContextMismatch(f"contexts differ: {self._vars} vs {other._vars}")

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            self._check(other)
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.constant(self._vars, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for a, c in other._terms.items():
            out[a] = out.get(a, 0.0) + c
        return Polynomial(self._vars, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self._vars, {a: -c for a, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(float(other))
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out: dict[MultiIndex, float] = {}
        for a, ca in self._terms.items():
            for b, cb in other._terms.items():
                g = tuple(x + y for x, y in zip(a, b))
                out[g] = out.get(g, 0.0) + ca * cb
        return Polynomial(self._vars, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise PolyError("only nonnegative integer powers are supported")
        result = Polynomial.constant(self._vars, 1.0)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def scale(self, c: float) -> "Polynomial":
        return Polynomial(self._vars, {a: c * v for a, v in self._terms.items()})

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._vars == other._vars and self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash((self._vars, frozenset(self._terms.items())))
        return self._hash

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self.coefficient(a) - other.coefficient(a)) <= tol for a in keys)

    # evaluation ------------------------------------------------------------
    def exponent_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        items = self.sorted_terms()
        if not items:
            return np.zeros((0, self.nvars), dtype=int), np.zeros(0)
        E = np.array([a for a, _ in items], dtype=int).reshape(len(items), self.nvars)
        c = np.array([v for _, v in items])
        return E, c

    def __call__(self, *point) -> float:
        if len(point) == 1 and np.ndim(point[0]) > 0:
            point = point[0]
        return poly_eval(self, point)

    def evaluate(self, points) -> np.ndarray:
        """Evaluate at each row of ``points`` (shape ``(N, nvars)``)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, self.nvars) if self.nvars else pts.reshape(-1, 0)
        if pts.shape[1] != self.nvars:
            raise DimensionMismatch(f"points have {pts.shape[1]} columns, context has {self.nvars}")
        E, c = self.exponent_matrix()
        if len(c) == 0:
            return np.zeros(pts.shape[0])
        maxdeg = E.max(axis=0) if E.size else np.zeros(0, dtype=int)
        out = np.zeros(pts.shape[0])
        # power tables per variable avoid repeated pow calls
        powers = []
        for j in range(self.nvars):
            tab = np.ones((int(maxdeg[j]) + 1, pts.shape[0]))
            for p in range(1, int(maxdeg[j]) + 1):
                tab[p] = tab[p - 1] * pts[:, j]
            powers.append(tab)
        for row, coef in zip(E, c):
            term = np.full(pts.shape[0], coef)
            for j, e in enumerate(row):
                if e:
                    term = term * powers[j][e]
            out += term
        return out

    # calculus and substitution ----------------------------------------------
    def derivative(self, name: str) -> "Polynomial":
        return partial_derivative(self, name)

    def embed(self, variables: Sequence[str]) -> "Polynomial":
        """Re-express in a larger context that contains every current variable."""
        variables = tuple(variables)
        missing = [v for v in self._vars if v not in variables]
        if missing:
            # allowed only if the polynomial does not depend on the missing ones
            for v in missing:
                if self.depends_on(v):
                    raise ContextMismatch(f"variable {v!r} not in target context {variables}")
        pos = {v: i for i, v in enumerate(self._vars)}
        out = {}
        for a, c in self._terms.items():
            out[tuple(a[pos[v]] if v in pos else 0 for v in variables)] = c
        return Polynomial(variables, out)

    def substitute(self, mapping: Mapping[str, "Polynomial | float"], variables: Sequence[str]) -> "Polynomial":
        """Compose: replace each context variable by a polynomial over ``variables``.

        Variables absent from ``mapping`` must also exist in ``variables`` and are kept.
        """
        variables = tuple(variables)
        images = []
        for v in self._vars:
            if v in mapping:
                img = mapping[v]
                if not isinstance(img, Polynomial):
                    img = Polynomial.constant(variables, float(img))
                elif img.variables != variables:
                    img = img.embed(variables)
            else:
                img = Polynomial.variable(variables, v)
            images.append(img)
        one = Polynomial.constant(variables, 1.0)
        cache: list[dict[int, Polynomial]] = [{0: one} for _ in images]

        def power(i: int, e: int) -> Polynomial:
            tab = cache[i]
            if e not in tab:
                tab[e] = power(i, e - 1) * images[i]
            return tab[e]

        acc: dict[MultiIndex, float] = {}
        for a, c in self._terms.items():
            term = one.scale(c)
            for i, e in enumerate(a):
                if e:
                    term = term * power(i, e)
            for b, v in term._terms.items():
                acc[b] = acc.get(b, 0.0) + v
        return Polynomial(variables, acc)

    # printing -----------------------------------------------------------------
    def to_string(self) -> str:
        return format_poly(self)

    def __str__(self):
        return format_poly(self)

    def __repr__(self):
        return f"Polynomial({list(self._vars)}, {format_poly(self)!r})"


# ---------------------------------------------------------------------------
# functional interface

def poly_add(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    return p + q


def poly_mul(p: Polynomial, q: Polynomial) -> Polynomial:
    p._check(q)
    return p * q


def poly_scale(p: Polynomial, c: float) -> Polynomial:
    return p.scale(c)


def poly_eval(p: Polynomial, point) -> float:
    point = np.asarray(point, dtype=float).ravel()
    if point.shape[0] != p.nvars:
        raise DimensionMismatch(f"point has length {point.shape[0]}, context has {p.nvars} variables")
    total = 0.0
    for a, c in p.items():
        term = c
        for xi, e in zip(point, a):
            if e:
                term *= xi ** e
        total += term
    return float(total)


def partial_derivative(p: Polynomial, name: str) -> Polynomial:
    if name not in p.variables:
        raise UnknownVariable(f"unknown variable {name!r}")
    i = p.variables.index(name)
    out = {}
    for a, c in p.items():
        if a[i]:
            b = list(a)
            b[i] -= 1
            out[tuple(b)] = c * a[i]
    return Polynomial(p.variables, out)


def lie_derivative(v: Polynomial, f: Sequence[Polynomial], time_var: str = "t",
                   state_vars: Sequence[str] | None = None) -> Polynomial:
    """``dv/dt + sum_i dv/dx_i * f_i`` in the context of the vector field.

    ``v`` lives on (time, state); every ``f_i`` shares one context that contains
    all variables of ``v``.  ``state_vars`` defaults to the non-time variables of
    ``v`` in order and must have one entry per component of ``f``.
    """
    if not f:
        raise DimensionMismatch("empty vector field")
    ctx = f[0].variables
    for fi in f:
        if fi.variables != ctx:
            raise ContextMismatch("vector field components use different contexts")
    if state_vars is None:
        state_vars = [name for name in v.variables if name != time_var]
    if len(state_vars) != len(f):
        raise DimensionMismatch(f"{len(state_vars)} state variables but {len(f)} field components")
    V = v.embed(ctx)
    out = partial_derivative(V, time_var) if time_var in ctx else Polynomial.zero(ctx)
    for name, fi in zip(state_vars, f):
        out = out + partial_derivative(V, name) * fi
    return out


def affine(variables: Sequence[str], name: str, offset: float, scale: float) -> Polynomial:
    """``offset + scale * name`` over ``variables``."""
    return Polynomial.variable(variables, name).scale(scale) + offset


# ---------------------------------------------------------------------------
# printing

def _fmt_number(c: float) -> str:
    s = repr(float(c))
    if s.endswith(".0") and "e" not in s:
        s = s[:-2]
    return s


def format_poly(p: Polynomial) -> str:
    """Canonical text: terms in descending graded-lex order, explicit signs."""
    items = p.sorted_terms(descending=True)
    if not items:
        return "0"
    parts = []
    for idx, (alpha, c) in enumerate(items):
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        factors = []
        for name, e in zip(p.variables, alpha):
            if e == 1:
                factors.append(name)
            elif e > 1:
                factors.append(f"{name}^{e}")
        if not factors:
            body = _fmt_number(mag)
        elif mag == 1.0:
            body = "*".join(factors)
        else:
            body = _fmt_number(mag) + "*" + "*".join(factors)
        if idx == 0:
            parts.append(body if sign == "+" else "-" + body)
        else:
            parts.append(f" {sign} {body}")
    return "".join(parts)


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*^()])
""", re.VERBOSE)


def _tokenize(text: str):
    pos = 0
    toks = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise PolySyntaxError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind != "ws":
            toks.append((kind, m.group(), pos))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, variables: tuple[str, ...]):
        self.toks = _tokenize(text)
        self.i = 0
        self.vars = variables

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, pos = self.take()
        if val != value:
            found = "end of input" if kind == "end" else repr(val)
            raise PolySyntaxError(f"expected {value!r}, found {found}", pos)

    def expr(self) -> Polynomial:
        kind, val, pos = self.peek()
        sign = 1.0
        if val in "+-" and kind == "op":
            self.take()
            sign = -1.0 if val == "-" else 1.0
        acc = self.term().scale(sign)
        while True:
            kind, val, pos = self.peek()
            if kind == "op" and val in "+-":
                self.take()
                t = self.term()
                acc = acc + t if val == "+" else acc - t
            else:
                return acc

    def term(self) -> Polynomial:
        acc = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "op" and val == "*":
                self.take()
                acc = acc * self.factor()
            else:
                return acc

    def exponent(self) -> int:
        kind, val, pos = self.peek()
        if kind == "op" and val == "^":
            self.take()
            kind, val, pos = self.take()
            if kind != "num" or not re.fullmatch(r"\d+", val):
                raise PolySyntaxError("exponent must be a nonnegative integer", pos)
            return int(val)
        return 1

    def factor(self) -> Polynomial:
        kind, val, pos = self.take()
        if kind == "num":
            return Polynomial.constant(self.vars, float(val))
        if kind == "name":
            if val not in self.vars:
                raise UnknownVariable(f"unknown variable {val!r} at position {pos}")
            return Polynomial.variable(self.vars, val) ** self.exponent()
        if kind == "op" and val == "(":
            kind2, val2, pos2 = self.peek()
            if kind2 == "op" and val2 == ")":
                raise PolySyntaxError("empty parentheses", pos2)
            inner = self.expr()
            self.expect(")")
            return inner ** self.exponent()
        found = "end of input" if kind == "end" else repr(val)
        raise PolySyntaxError(f"expected a number, variable or '(', found {found}", pos)


def parse_poly(text: str, variables: Sequence[str]) -> Polynomial:
    """Parse ``text`` over the ordered ``variables``.

    >>> str(parse_poly("x1^2 - 0.25*x1", ["x1"]))
    'x1^2 - 0.25*x1'
    """
    variables = tuple(variables)
    parser = _Parser(text, variables)
    kind, _, pos = parser.peek()
    if kind == "end":
        raise PolySyntaxError("empty expression", pos)
    result = parser.expr()
    kind, val, pos = parser.peek()
    if kind != "end":
        raise PolySyntaxError(f"unexpected {val!r}", pos)
    return result


def context(n: int, m: int = 0, time: bool = True) -> tuple[str, ...]:
    """Standard variable names ``t, x1..xn, u1..um``."""
    names = ["t"] if time else []
    names += [f"x{i + 1}" for i in range(n)]
    names += [f"u{j + 1}" for j in range(m)]
    return tuple(names)
