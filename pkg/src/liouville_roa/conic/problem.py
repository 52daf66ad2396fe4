"""Standard-form SDP data: maximize ``c'y`` s.t. ``A y = b`` and ``E_j + D_j y`` PSD."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

OPTIMAL = "Optimal"
MAX_ITER = "MaxIter"
NUMERICAL_FAILURE = "NumericalFailure"
INFEASIBLE = "Infeasible"


class InvalidProblem(ValueError):
    pass


@dataclass
class PSDBlock:
    """``offset + operator @ y`` reshaped row-major to ``size x size`` must be PSD."""

    size: int
    operator: sp.csr_matrix
    offset: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        self.operator = sp.csr_matrix(self.operator)
        self.operator.sum_duplicates()
        self.operator.eliminate_zeros()
        if self.offset is not None:
            self.offset = np.asarray(self.offset, dtype=float).ravel()
            if not np.any(self.offset):
                self.offset = None

    def value(self, y) -> np.ndarray:
        v = self.operator @ np.asarray(y, dtype=float)
        if self.offset is not None:
            v = v + self.offset
        return v.reshape(self.size, self.size)

    def offset_matrix(self) -> np.ndarray:
        if self.offset is None:
            return np.zeros((self.size, self.size))
        return self.offset.reshape(self.size, self.size)


class ConicProblem:
    """maximize ``c'y`` subject to ``A y = b`` and every block PSD."""

    def __init__(self, c, A, b, blocks: list[PSDBlock], check: bool = True):
        self.c = np.asarray(c, dtype=float).ravel()
        N = self.c.shape[0]
        if A is None:
            A = sp.csr_matrix((0, N))
        self.A = sp.csr_matrix(A, dtype=float)
        self.A.sum_duplicates()
        self.A.eliminate_zeros()
        self.b = np.asarray(b, dtype=float).ravel()
        self.blocks = list(blocks)
        if check:
            self._check()

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    @property
    def num_eq(self) -> int:
        return self.A.shape[0]

    def _check(self):
        N = self.num_vars
        if self.A.shape[1] != N:
            raise InvalidProblem(f"A has {self.A.shape[1]} columns for {N} variables")
        if self.b.shape[0] != self.A.shape[0]:
            raise InvalidProblem("b and A have different row counts")
        if self.A.shape[0]:
            empty = np.flatnonzero(np.diff(self.A.indptr) == 0)
            if empty.size:
                raise InvalidProblem(f"equality row {int(empty[0])} is identically zero")
        if not self.blocks:
            raise InvalidProblem("problem has no PSD blocks")
        used = np.zeros(N, dtype=bool)
        used[self.A.indices] = True
        for j, blk in enumerate(self.blocks):
            if blk.size < 1:
                raise InvalidProblem(f"block {j} is empty")
            if blk.operator.shape != (blk.size * blk.size, N):
                raise InvalidProblem(f"block {j} operator has shape {blk.operator.shape}")
            s = blk.size
            perm = np.arange(s * s).reshape(s, s).T.ravel()
            if abs(blk.operator[perm] - blk.operator).max() > 0:
                raise InvalidProblem(f"block {j} is not symmetric")
            if blk.offset is not None:
                off = blk.offset.reshape(s, s)
                if not np.array_equal(off, off.T):
                    raise InvalidProblem(f"block {j} offset is not symmetric")
            used[blk.operator.indices] = True
        if not used.all():
            raise InvalidProblem(f"variable {int(np.flatnonzero(~used)[0])} appears in no constraint")

    def block_sizes(self) -> list[int]:
        return [blk.size for blk in self.blocks]

    def block_values(self, y) -> list[np.ndarray]:
        return [blk.value(y) for blk in self.blocks]

    def structurally_equal(self, other: "ConicProblem", tol: float = 0.0) -> bool:
        if self.num_vars != other.num_vars or self.block_sizes() != other.block_sizes():
            return False
        if self.num_eq != other.num_eq:
            return False
        if np.max(np.abs(self.c - other.c), initial=0) > tol:
            return False
        if np.max(np.abs(self.b - other.b), initial=0) > tol:
            return False
        if abs(self.A - other.A).max() > tol if self.num_eq else False:
            return False
        for p, q in zip(self.blocks, other.blocks):
            if abs(p.operator - q.operator).max() > tol if p.operator.nnz or q.operator.nnz else False:
                return False
            if np.max(np.abs(p.offset_matrix() - q.offset_matrix()), initial=0) > tol:
                return False
        return True


@dataclass
class ConicSolution:
    y: np.ndarray
    x: np.ndarray
    Z: list[np.ndarray]
    status: str
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    info: str = ""
    history: list = field(default_factory=list)
    # largest of the scaled primal residual, dual residual and relative gap
    accuracy: float = float("inf")

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def complementarity(self, problem: ConicProblem) -> list[float]:
        return [float(np.sum(S * Z)) for S, Z in zip(problem.block_values(self.y), self.Z)]
