"""Semidefinite programming: data model, interior-point solver and SDPA files."""

from .problem import (INFEASIBLE, MAX_ITER, NUMERICAL_FAILURE, OPTIMAL, ConicProblem,
                      ConicSolution, InvalidProblem, PSDBlock)
from .sdpa import ParseError, dumps_sdpa, export_sdpa, import_sdpa, loads_sdpa
from .solver import LimitExceeded, NumericalFailure, SolverOptions, solve

__all__ = [
    "ConicProblem", "ConicSolution", "PSDBlock", "InvalidProblem", "SolverOptions", "solve",
    "LimitExceeded", "NumericalFailure", "export_sdpa", "import_sdpa", "dumps_sdpa",
    "loads_sdpa", "ParseError", "OPTIMAL", "MAX_ITER", "NUMERICAL_FAILURE", "INFEASIBLE",
]
