from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from liouville_roa.conic import (INFEASIBLE, OPTIMAL, ConicProblem, InvalidProblem, LimitExceeded,
                                 ParseError, PSDBlock, SolverOptions, dumps_sdpa, export_sdpa,
                                 import_sdpa, loads_sdpa, solve)
from liouville_roa.relaxation import assemble

from conftest import scaled

GOLDEN = Path(__file__).parent / "golden"


def block(offset, *mats):
    """``offset + sum_i y_i mats[i]`` as a PSD block."""
    offset = np.asarray(offset, dtype=float)
    s = offset.shape[0]
    op = np.column_stack([np.asarray(M, dtype=float).ravel() for M in mats])
    return PSDBlock(s, sp.csr_matrix(op), offset.ravel())


def arrow_problem():
    # maximize y subject to [[1, y], [y, 1]] PSD
    return ConicProblem([1.0], None, [], [block(np.eye(2), [[0, 1], [1, 0]])])


def domination_toy():
    """Largest mass of a measure on [-1, 1] dominated by the Lebesgue measure."""
    # variables: moments (m0, m1, m2) of the measure, then of the complement measure
    hankel = [np.array(M) for M in ([[1, 0], [0, 0]], [[0, 1], [1, 0]], [[0, 0], [0, 1]])]
    zero = np.zeros((2, 2))
    blocks = []
    for first in (True, False):
        mats = hankel + [zero] * 3 if first else [zero] * 3 + hankel
        blocks.append(block(zero, *mats))
        loc = [[[1.0]], [[0.0]], [[-1.0]]]
        z1 = [[[0.0]]] * 3
        blocks.append(block([[0.0]], *(loc + z1 if first else z1 + loc)))
    A = np.hstack([np.eye(3), np.eye(3)])
    return ConicProblem([1, 0, 0, 0, 0, 0], A, [2.0, 0.0, 2 / 3], blocks)


def toy_golden_problem():
    # maximize -y1 + 2 y2 subject to y1 + y2 = 1 and [[y1, 0.25], [0.25, y2]] PSD
    return ConicProblem([-1.0, 2.0], [[1.0, 1.0]], [1.0],
                        [block([[0, 0.25], [0.25, 0]], [[1, 0], [0, 0]], [[0, 0], [0, 1]])])


def test_arrow():
    sol = solve(arrow_problem())
    assert sol.status == OPTIMAL
    assert sol.y[0] == pytest.approx(1.0, abs=1e-7)
    assert sol.primal_objective == pytest.approx(sol.dual_objective, abs=1e-7)


def test_domination_toy():
    sol = solve(domination_toy())
    assert sol.status == OPTIMAL
    assert sol.primal_objective == pytest.approx(2.0, abs=1e-7)


def test_infeasible_toy():
    # y >= 1 and y <= 0
    prob = ConicProblem([1.0], None, [], [block([[-1.0]], [[1.0]]), block([[0.0]], [[-1.0]])])
    assert solve(prob).status == INFEASIBLE


def test_inconsistent_equalities_are_infeasible():
    prob = ConicProblem([1.0, 0.0], [[1.0, 1.0], [2.0, 2.0]], [1.0, 3.0],
                        [block(np.zeros((1, 1)), [[1.0]], [[0.0]]),
                         block(np.zeros((1, 1)), [[0.0]], [[1.0]])])
    assert solve(prob).status == INFEASIBLE


def test_complementarity_and_residuals():
    prob = domination_toy()
    sol = solve(prob)
    comp = sol.complementarity(prob)
    assert max(abs(c) for c in comp) <= 1e-6 * (1 + abs(sol.primal_objective))
    assert sol.primal_residual <= 1e-8 and sol.dual_residual <= 1e-8


def test_solver_is_deterministic():
    a, b = solve(domination_toy()), solve(domination_toy())
    assert a.iterations == b.iterations
    assert a.primal_objective == b.primal_objective
    assert np.array_equal(a.y, b.y)


def test_problem_invariants():
    with pytest.raises(InvalidProblem):
        ConicProblem([1.0], None, [], [])
    with pytest.raises(InvalidProblem):
        ConicProblem([1.0], [[0.0]], [0.0], [block(np.eye(1), [[1.0]])])
    with pytest.raises(InvalidProblem):
        ConicProblem([1.0, 1.0], None, [], [block(np.eye(1), [[1.0]], [[0.0]])])
    with pytest.raises(InvalidProblem):
        ConicProblem([1.0], None, [], [block(np.eye(2), [[0, 1], [0, 0]])])


def test_size_limit():
    with pytest.raises(LimitExceeded, match="SDPA"):
        solve(arrow_problem(), SolverOptions(max_block=1))


def test_toy_optimum():
    # y2 is the larger root of y2 (1 - y2) = 1/16
    y2 = (1 + np.sqrt(0.75)) / 2
    sol = solve(toy_golden_problem())
    assert sol.status == OPTIMAL
    assert sol.primal_objective == pytest.approx(3 * y2 - 1, abs=1e-7)


def test_toy_export_matches_golden(tmp_path):
    path = tmp_path / "toy.dat-s"
    export_sdpa(toy_golden_problem(), path)
    assert path.read_text() == (GOLDEN / "toy.dat-s").read_text()


def test_toy_round_trip_is_exact():
    prob = toy_golden_problem()
    again = loads_sdpa(dumps_sdpa(prob))
    assert again.structurally_equal(prob)
    assert dumps_sdpa(again) == dumps_sdpa(prob)


def test_cubic_relaxation_round_trip(tmp_path):
    prob, _ = assemble(scaled("cubic")[0], 2)
    path = tmp_path / "cubic.dat-s"
    export_sdpa(prob, path)
    once = import_sdpa(path)
    assert once.structurally_equal(prob)
    export_sdpa(once, tmp_path / "again.dat-s")
    assert import_sdpa(tmp_path / "again.dat-s").structurally_equal(once)
    assert (tmp_path / "again.dat-s").read_text() == path.read_text()


def test_round_trip_preserves_solution():
    prob = domination_toy()
    again = loads_sdpa(dumps_sdpa(prob))
    assert solve(again).primal_objective == pytest.approx(2.0, abs=1e-7)


@pytest.mark.parametrize("text, line", [
    ("1\n1\n2\n1.0\n0 1 1 1\n", 5),
    ("1\n1\n2\n1.0\n0 1 3 1 1.0\n", 5),
    ("1\n1\n2 3\n1.0\n", 3),
    ("1\n1\n2\n1.0 2.0\n", 4),
    ("x\n", 1),
    ("1\n1\n-2\n1.0\n1 1 1 2 1.0\n", 5),
])
def test_malformed_sdpa(text, line):
    with pytest.raises(ParseError) as err:
        loads_sdpa(text)
    assert err.value.line == line


@pytest.mark.parametrize("seed", range(5))
def test_random_sdp_agrees_with_cvxopt(seed):
    cvxopt = pytest.importorskip("cvxopt")
    from cvxopt import matrix, solvers

    rng = np.random.default_rng(seed)
    n, s = 4, 5
    mats = []
    for _ in range(n):
        M = rng.normal(size=(s, s))
        mats.append((M + M.T) / 2)
    c = rng.normal(size=n)
    box = [block([[1.0]], *[[[1.0 if j == i else 0.0]] for j in range(n)]) for i in range(n)]
    box += [block([[1.0]], *[[[-1.0 if j == i else 0.0]] for j in range(n)]) for i in range(n)]
    prob = ConicProblem(c, None, [], [block(np.eye(s), *mats)] + box)
    ours = solve(prob)
    assert ours.status == OPTIMAL

    solvers.options["show_progress"] = False
    G = np.vstack([np.eye(n), -np.eye(n)])
    Gs = [matrix(np.column_stack([-M.ravel() for M in mats]))]
    res = solvers.sdp(matrix(-c), Gl=matrix(G), hl=matrix(np.ones(2 * n)), Gs=Gs,
                      hs=[matrix(np.eye(s))])
    assert res["status"] == "optimal"
    assert ours.primal_objective == pytest.approx(-res["primal objective"], abs=1e-6)
