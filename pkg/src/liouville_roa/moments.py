"""
Truncated moment sequences and the matrices built from them.

Moments are stored densely, indexed by the graded-lex rank of their
exponent (see :func:`liouville_roa.poly.monomial_basis`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .poly import Polynomial, basis_size, monomial_basis


class DegreeTooLow(ValueError):
    pass


class DegenerateBox(ValueError):
    pass


@lru_cache(maxsize=64)
def _binomial_table(size: int) -> np.ndarray:
    C = np.zeros((size + 1, size + 1), dtype=np.int64)
    for i in range(size + 1):
        C[i, 0] = 1
        for j in range(1, i + 1):
            C[i, j] = C[i - 1, j - 1] + C[i - 1, j]
    return C


def grlex_ranks(E: np.ndarray) -> np.ndarray:
    """Vectorised graded-lex rank of each row of the exponent array ``E``."""
    E = np.asarray(E, dtype=np.int64)
    if E.ndim == 1:
        E = E[None, :]
    N, n = E.shape
    d = E.sum(axis=1)
    C = _binomial_table(int(d.max(initial=0)) + n + 1)
    rank = np.where(d > 0, C[d + n - 1, n], 0)
    remaining = d.copy()
    for i in range(n - 1):
        s = n - i - 1
        a = E[:, i]
        # hockey-stick sum of C(remaining - v + s - 1, s - 1) over v < a
        rank += C[remaining + s, s] - C[remaining - a + s, s]
        remaining = remaining - a
    return rank


@dataclass
class MomentVector:
    """Moments of one measure up to total degree ``degree``.

    ``values`` may be ``None`` when the vector only describes a layout
    (e.g. decision variables inside a relaxation).
    """

    variables: tuple[str, ...]
    degree: int
    values: np.ndarray | None = None

    def __post_init__(self):
        self.variables = tuple(self.variables)
        if self.values is not None:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != (len(self),):
                raise ValueError(f"expected {len(self)} moments, got {self.values.shape}")

    def __len__(self) -> int:
        return basis_size(len(self.variables), self.degree)

    @property
    def dim(self) -> int:
        return len(self.variables)

    @property
    def mass(self) -> float:
        return float(self.values[0])

    def basis(self):
        return monomial_basis(self.dim, self.degree)

    def __getitem__(self, alpha) -> float:
        return float(self.values[int(grlex_ranks(np.asarray(alpha))[0])])

    def truncate(self, degree: int) -> "MomentVector":
        if degree > self.degree:
            raise DegreeTooLow(f"cannot truncate degree {self.degree} moments to {degree}")
        vals = None if self.values is None else self.values[:basis_size(self.dim, degree)].copy()
        return MomentVector(self.variables, degree, vals)


class SymmetricMatrixExpr:
    """Symmetric matrix whose entries are linear forms in a moment vector.

    ``operator`` is a sparse ``(size*size, len(y))`` matrix mapping the
    moment coordinates to the row-major vectorised matrix.
    """

    def __init__(self, size: int, operator: sp.csr_matrix, moments: MomentVector):
        self.size = size
        self.operator = operator.tocsr()
        self.moments = moments

    def evaluate(self, values=None) -> np.ndarray:
        vals = self.moments.values if values is None else np.asarray(values, dtype=float)
        if vals is None:
            raise ValueError("moment vector has no values")
        return (self.operator @ vals).reshape(self.size, self.size)

    def entry(self, i: int, j: int) -> dict[int, float]:
        row = self.operator.getrow(i * self.size + j)
        return dict(zip(row.indices.tolist(), row.data.tolist()))

    def is_symmetric(self) -> bool:
        s = self.size
        perm = np.arange(s * s).reshape(s, s).T.ravel()
        return (self.operator[perm] != self.operator).nnz == 0


def _localizing_operator(g: Polynomial | None, dim: int, ydeg: int, order: int):
    basis = np.array(monomial_basis(dim, order), dtype=np.int64).reshape(-1, dim)
    s = basis.shape[0]
    pair = (basis[:, None, :] + basis[None, :, :]).reshape(s * s, dim)
    if g is None:
        terms = [((0,) * dim, 1.0)]
    else:
        terms = g.sorted_terms()
    rows, cols, vals = [], [], []
    ridx = np.arange(s * s)
    for gamma, c in terms:
        idx = grlex_ranks(pair + np.asarray(gamma, dtype=np.int64))
        rows.append(ridx)
        cols.append(idx)
        vals.append(np.full(s * s, c))
    ncol = basis_size(dim, ydeg)
    op = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(s * s, ncol))
    op.sum_duplicates()
    return s, op


def moment_matrix(y: MomentVector, k: int) -> SymmetricMatrixExpr:
    """Order-``k`` moment matrix: entry ``(a, b)`` is the moment of ``a + b``."""
    if k < 0:
        raise DegreeTooLow("negative order")
    if y.degree < 2 * k:
        raise DegreeTooLow(f"moment matrix of order {k} needs degree {2 * k}, have {y.degree}")
    s, op = _localizing_operator(None, y.dim, y.degree, k)
    return SymmetricMatrixExpr(s, op, y)


def localizing_matrix(g: Polynomial, y: MomentVector, order: int) -> SymmetricMatrixExpr:
    """Order-``order`` localizing matrix of ``g``: entry ``(a, b)`` is ``sum_c g_c y_{a+b+c}``."""
    if g.variables != y.variables:
        g = g.embed(y.variables)
    if order < 0:
        raise DegreeTooLow(f"localizing order {order} is negative")
    if y.degree < 2 * order + g.degree():
        raise DegreeTooLow(
            f"localizing matrix of order {order} for a degree-{g.degree()} polynomial "
            f"needs degree {2 * order + g.degree()}, have {y.degree}")
    s, op = _localizing_operator(g, y.dim, y.degree, order)
    return SymmetricMatrixExpr(s, op, y)


def riesz_functional(y: MomentVector, p: Polynomial) -> float:
    """``L_y(p) = sum_a p_a y_a``."""
    if p.variables != y.variables:
        p = p.embed(y.variables)
    if p.degree() > y.degree:
        raise DegreeTooLow(f"polynomial degree {p.degree()} exceeds moment degree {y.degree}")
    if p.is_zero():
        return 0.0
    E, c = p.exponent_matrix()
    return float(c @ y.values[grlex_ranks(E)])


def lebesgue_moments_box(box: Sequence[tuple[float, float]], degree: int,
                         variables: Sequence[str] | None = None) -> MomentVector:
    """Moments of the Lebesgue measure on a box, in closed form."""
    box = [(float(a), float(b)) for a, b in box]
    for a, b in box:
        if not a < b:
            raise DegenerateBox(f"interval [{a}, {b}] is degenerate")
    n = len(box)
    if variables is None:
        variables = tuple(f"x{i + 1}" for i in range(n))
    one_d = []
    for a, b in box:
        p = np.arange(degree + 1)
        one_d.append((b ** (p + 1) - a ** (p + 1)) / (p + 1))
    E = np.array(monomial_basis(n, degree), dtype=np.int64).reshape(-1, n)
    vals = np.ones(E.shape[0])
    for i in range(n):
        vals *= one_d[i][E[:, i]]
    return MomentVector(variables, degree, vals)


def dirac_moments(point, degree: int, variables: Sequence[str] | None = None,
                  mass: float = 1.0) -> MomentVector:
    """Moments ``mass * point^b`` of a (scaled) Dirac measure."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    n = point.shape[0]
    if variables is None:
        variables = tuple(f"x{i + 1}" for i in range(n))
    E = np.array(monomial_basis(n, degree), dtype=np.int64).reshape(-1, n)
    return MomentVector(variables, degree, mass * monomial_values(point[None, :], E)[0])


def monomial_values(points: np.ndarray, E: np.ndarray) -> np.ndarray:
    """``points[i]^E[j]`` as an ``(N, len(E))`` array."""
    points = np.atleast_2d(points)
    N, n = points.shape
    out = np.ones((N, E.shape[0]))
    for i in range(n):
        maxp = int(E[:, i].max(initial=0))
        if maxp == 0:
            continue
        pw = np.ones((maxp + 1, N))
        for p in range(1, maxp + 1):
            pw[p] = pw[p - 1] * points[:, i]
        out *= pw[E[:, i]].T
    return out


def ceil_half(d: int) -> int:
    return int(math.ceil(d / 2))
