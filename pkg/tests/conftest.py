import time
from functools import lru_cache

from liouville_roa.cli import load_problem
from liouville_roa.relaxation import solve_relaxation
from liouville_roa.semialg import preprocess

# wall time of each cached solve, keyed like ``solved``
SOLVE_SECONDS: dict = {}
# one line per acceptance criterion, printed at the end of the run
CRITERIA: dict = {}


@lru_cache(maxsize=None)
def builtin(name: str, mode: str | None = None):
    spec, _ = load_problem(name)
    return spec.with_mode(mode) if mode else spec


@lru_cache(maxsize=None)
def scaled(name: str, mode: str | None = None):
    return preprocess(builtin(name, mode))


@lru_cache(maxsize=None)
def solved(name: str, k: int, mode: str | None = None):
    """Relaxation result for a built-in problem, shared across test modules."""
    spec, _ = scaled(name, mode)
    start = time.perf_counter()
    res = solve_relaxation(spec, k)
    SOLVE_SECONDS[(name, k, mode)] = time.perf_counter() - start
    return res


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
