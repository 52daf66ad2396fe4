"""
Outer approximations of the region of attraction and the oracles used to check them.

Certificates live in scaled coordinates; everything here takes and returns
states in original units and converts through the :class:`ScalingMap`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .moments import monomial_values
from .poly import lie_derivative, monomial_basis
from .relaxation import Certificate, RelaxationLayout
from .semialg import FIXED, FREE, ProblemSpec, ScalingMap

SINGLE = "single-k"
RUNNING_MIN = "running-min"
GRID = "grid"
MONTE_CARLO = "monte-carlo"


class OracleUndefined(ValueError):
    pass


# ---------------------------------------------------------------------------
# outer approximations

@dataclass(frozen=True)
class OuterApprox:
    """Sets ``{x in X : v(0, x) >= 0}`` for a list of certificates (ascending order)."""

    certificates: tuple[Certificate, ...]
    scaling: ScalingMap
    mode: str = SINGLE

    def __post_init__(self):
        certs = tuple(sorted(self.certificates, key=lambda c: c.k))
        object.__setattr__(self, "certificates", certs)
        if self.mode not in (SINGLE, RUNNING_MIN):
            raise ValueError(f"unknown evaluation mode {self.mode!r}")

    @property
    def orders(self) -> list[int]:
        return [c.k for c in self.certificates]

    def values(self, x) -> np.ndarray:
        """``v_k(0, x)`` for every certificate; shape ``(len(x), len(certificates))``."""
        xs = self.scaling.to_scaled(np.atleast_2d(np.asarray(x, dtype=float)))
        return np.column_stack([c.value_at_start(xs) for c in self.certificates])

    def in_box(self, x) -> np.ndarray:
        xs = self.scaling.to_scaled(np.atleast_2d(np.asarray(x, dtype=float)))
        return np.all(np.abs(xs) <= 1.0 + 1e-12, axis=1)

    def contains(self, x, k: int | None = None, slack: float = 0.0) -> np.ndarray:
        """Membership of the rows of ``x`` in the order-``k`` set (largest order by default).

        In running-min mode every certificate of order at most ``k`` must be
        nonnegative.  ``slack`` is subtracted from zero in the test.
        """
        orders = self.orders
        k = orders[-1] if k is None else k
        if k not in orders:
            raise KeyError(f"no certificate of order {k}")
        vals = self.values(x)
        if self.mode == SINGLE:
            ok = vals[:, orders.index(k)] >= -slack
        else:
            cols = [i for i, o in enumerate(orders) if o <= k]
            ok = np.all(vals[:, cols] >= -slack, axis=1)
        return ok & self.in_box(x)

    def with_mode(self, mode: str) -> "OuterApprox":
        return OuterApprox(self.certificates, self.scaling, mode)


def contains(approx: OuterApprox, x, t0: float = 0.0) -> bool:
    """Whether the single state ``x`` lies in the outer approximation.

    The start-time argument is accepted for interface symmetry; the sets are
    always read at ``t = 0``.
    """
    del t0
    return bool(approx.contains(np.atleast_2d(np.asarray(x, dtype=float)))[0])


# ---------------------------------------------------------------------------
# analytic regions of attraction

def analytic_roa_cubic(x) -> np.ndarray:
    """``x' = x (x - 0.5)(x + 0.5)`` on ``[-1, 1]``: the basin is ``[-0.5, 0.5]``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return np.abs(x) <= 0.5


def double_integrator_value(x) -> np.ndarray:
    """Minimum time to the origin for ``x1' = x2, x2' = u, |u| <= 1``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x1, x2 = x[:, 0], x[:, 1]
    switch = x1 + 0.5 * x2 * np.abs(x2)
    upper = x2 + 2.0 * np.sqrt(np.maximum(x1 + 0.5 * x2 ** 2, 0.0))
    lower = -x2 + 2.0 * np.sqrt(np.maximum(-x1 + 0.5 * x2 ** 2, 0.0))
    return np.where(switch > 0, upper, lower)


def analytic_roa_double_integrator(x, horizon: float = 1.0) -> np.ndarray:
    return double_integrator_value(x) <= horizon


def _brockett_ratio(theta):
    s = np.sin(theta)
    return (theta - s * np.cos(theta)) / (s * s)


def brockett_angle(x, tol: float = 1e-12) -> np.ndarray:
    """Angle in ``[0, pi]`` solving ``ratio(theta) (x1^2 + x2^2) = 2 |x3|`` by bisection.

    The ratio increases from 0 at ``theta = 0`` to infinity at ``pi``, so the
    root is unique; ``x3 = 0`` gives 0 and ``x1 = x2 = 0`` (with ``x3 != 0``) gives pi.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r2 = x[:, 0] ** 2 + x[:, 1] ** 2
    rhs = 2.0 * np.abs(x[:, 2])
    theta = np.zeros(x.shape[0])
    on_axis = (r2 == 0) & (rhs > 0)
    theta[on_axis] = np.pi
    todo = (rhs > 0) & (r2 > 0)
    if np.any(todo):
        lo = np.zeros(todo.sum())
        hi = np.full(todo.sum(), np.pi)
        target = rhs[todo] / r2[todo]
        iters = int(math.ceil(math.log2(np.pi / tol))) + 1
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = _brockett_ratio(mid)
            below = val < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        theta[todo] = 0.5 * (lo + hi)
    return theta


def brockett_time(x) -> np.ndarray:
    """Minimum time to the origin for the Brockett integrator with ``|u| <= 1``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    r2 = x[:, 0] ** 2 + x[:, 1] ** 2
    x3 = np.abs(x[:, 2])
    theta = brockett_angle(x)
    out = np.sqrt(r2)  # theta -> 0 limit
    s = np.sin(theta)
    denom = theta + s * s - s * np.cos(theta)
    pos = theta > 1e-6
    out[pos] = theta[pos] * np.sqrt(r2[pos] + 2 * x3[pos]) / np.sqrt(denom[pos])
    small = (~pos) & (x3 > 0)
    if np.any(small):
        # series: ratio ~ 2 theta / 3, denominator ~ theta^2 (1 + 2 theta / 3)
        th = theta[small]
        out[small] = np.sqrt(r2[small] + 2 * x3[small]) / np.sqrt(1.0 + 2.0 * th / 3.0)
    return out


def analytic_roa_brockett(x, horizon: float = 1.0) -> np.ndarray:
    return brockett_time(x) <= horizon


# ---------------------------------------------------------------------------
# trajectory simulation

def _box(spec: ProblemSpec):
    return np.array(spec.X.bounding_box(), dtype=float)


def simulate_basin(spec: ProblemSpec, points, steps: int = 1000, margin: float = 1e-9,
                   chunk: int = 20000) -> np.ndarray:
    """Simulation oracle for uncontrolled systems.

    A point belongs to the basin when its RK4 trajectory (step ``T/steps``)
    stays in ``X`` and ends in ``XT`` (fixed mode) or enters ``XT`` at some
    step (free mode).
    """
    if spec.m:
        raise OracleUndefined("the simulation oracle needs an uncontrolled system")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(pts.shape[0], dtype=bool)
    for i0 in range(0, pts.shape[0], chunk):
        out[i0:i0 + chunk] = _simulate_chunk(spec, pts[i0:i0 + chunk], steps, margin)
    return out


def _target_hit(spec: ProblemSpec, x, tol):
    if spec.XT.is_singleton:
        return np.linalg.norm(x - np.asarray(spec.XT.point), axis=1) <= tol
    return spec.XT.contains(x, tol=tol)


def _simulate_chunk(spec, x, steps, margin):
    h = spec.T / steps
    x = x.copy()
    alive = spec.X.contains(x, tol=margin)
    hit = np.zeros(x.shape[0], dtype=bool)
    t = 0.0

    def rhs(tt, z):
        return spec.vector_field(tt, z)

    for _ in range(steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        z = x[idx]
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = rhs(t, z)
            k2 = rhs(t + h / 2, z + h / 2 * k1)
            k3 = rhs(t + h / 2, z + h / 2 * k2)
            k4 = rhs(t + h, z + h * k3)
            z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
        finite = np.all(np.isfinite(z), axis=1)
        inside = np.zeros(idx.size, dtype=bool)
        inside[finite] = spec.X.contains(z[finite], tol=margin)
        x[idx] = np.where(inside[:, None], z, 0.0)
        alive[idx[~inside]] = False
        if spec.mode == FREE:
            hit[idx[inside]] |= _target_hit(spec, z[inside], margin)
    if spec.mode == FREE:
        return hit | (alive & _target_hit(spec, x, margin))
    return alive & _target_hit(spec, x, margin)


@dataclass
class Trajectories:
    """Sampled admissible trajectories on the RK4 grid (original units).

    ``states`` has shape ``(N, steps + 1, n)``; ``controls`` has shape
    ``(N, steps, m)`` with the input held constant on each step; ``hit_step``
    is the grid index at which the target was reached.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    hit_step: np.ndarray
    seed: int | None = None
    attempts: int = 0

    @property
    def initial_points(self) -> np.ndarray:
        return self.states[:, 0, :]

    def __len__(self) -> int:
        return self.states.shape[0]


def control_grid(spec: ProblemSpec, per_dim: int = 3) -> np.ndarray:
    """Grid values of the input box that lie in ``U``."""
    if not spec.m:
        return np.zeros((1, 0))
    if spec.U.is_singleton:
        return np.asarray(spec.U.point, dtype=float)[None, :]
    box = spec.U.bounding_box()
    axes = [np.linspace(a, b, per_dim) for a, b in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.m)
    keep = spec.U.contains(grid, tol=1e-12)
    return grid[keep]


def _rollout(spec, x0, controls, steps, sign=1.0, t_start=None, h=None):
    """Integrate ``x' = sign * f`` with per-step inputs; returns all states and a validity mask."""
    N = x0.shape[0]
    h = spec.T / steps if h is None else h
    xs = np.empty((N, steps + 1, spec.n))
    xs[:, 0] = x0
    ok = spec.X.contains(x0, tol=1e-9)
    x = x0.copy()
    if t_start is None:
        t_start = 0.0 if sign > 0 else spec.T
    hh = sign * h
    for i in range(steps):
        u = controls[:, i] if spec.m else None
        t = t_start + i * hh

        def rhs(tt, z):
            return sign * spec.vector_field(tt, z, u)

        with np.errstate(over="ignore", invalid="ignore"):
            k1 = rhs(t, x)
            k2 = rhs(t + hh / 2, x + h / 2 * k1)
            k3 = rhs(t + hh / 2, x + h / 2 * k2)
            k4 = rhs(t + hh, x + h * k3)
            x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            bad = ~np.all(np.isfinite(x), axis=1)
            x[bad] = 0.0
            ok &= ~bad
            ok &= spec.X.contains(x, tol=1e-9)
        xs[:, i + 1] = x
    return xs, ok


def _random_controls(rng, grid, N, steps, switches):
    if grid.shape[1] == 0:
        return np.zeros((N, steps, 0))
    per = max(1, steps // switches)
    picks = rng.integers(0, grid.shape[0], size=(N, switches))
    seg = np.minimum(np.arange(steps) // per, switches - 1)
    return grid[picks[:, seg]]


_ROLLOUT_ROWS = 4096


def sample_admissible_points(spec: ProblemSpec, N: int, seed: int = 0, control_values: int = 3,
                             switches: int = 20, restarts: int = 200, steps: int = 1000,
                             candidates=None, max_candidates: int | None = None,
                             target_tol: float = 1e-9) -> Trajectories:
    """Initial states with a sampled admissible trajectory (an inner sampler of the basin).

    Candidates (uniform in the bounding box of ``X`` unless given) are
    integrated forward with RK4 under piecewise-constant inputs drawn from a
    grid on ``U``.  A singleton target cannot be hit by forward search, so in
    that case trajectories are instead integrated backward from the target
    point and the reached states are returned.  Every returned trajectory
    stays in ``X`` and reaches ``XT`` at ``T`` (fixed mode) or at some step
    (free mode).
    """
    rng = np.random.default_rng(seed)
    grid = control_grid(spec, control_values)
    if spec.XT.is_singleton and candidates is None:
        return _sample_backward(spec, N, rng, grid, switches, steps, seed)
    box = _box(spec)
    budget = max_candidates if max_candidates is not None else 50 * N
    tries = restarts if spec.m else 1
    found_x, found_u, found_hit = [], [], []
    count = 0
    attempts = 0
    fixed_pool = None if candidates is None else np.atleast_2d(np.asarray(candidates, dtype=float))
    while count < N and attempts < (budget if fixed_pool is None else len(fixed_pool)):
        if fixed_pool is None:
            batch = min(max(2 * (N - count), 64), budget - attempts)
            x0 = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((batch, spec.n))
        else:
            x0 = fixed_pool
            batch = len(x0)
        attempts += batch
        pending = np.arange(batch)
        left = tries
        while left > 0 and pending.size:
            # several restarts of each pending point share one vectorised rollout
            reps = max(1, min(left, _ROLLOUT_ROWS // pending.size))
            left -= reps
            rows = np.tile(pending, reps)
            u = _random_controls(rng, grid, rows.size, steps, switches)
            xs, ok = _rollout(spec, x0[rows], u, steps)
            hit_step = _first_hit(spec, xs, ok, target_tol)
            done = set()
            for j in np.flatnonzero(hit_step >= 0):
                if rows[j] in done:
                    continue
                done.add(rows[j])
                found_x.append(xs[j])
                found_u.append(u[j])
                found_hit.append(hit_step[j])
            count += len(done)
            pending = np.array([p for p in pending if p not in done], dtype=int)
        if fixed_pool is not None:
            break
    if fixed_pool is None:
        found_x, found_u, found_hit = found_x[:N], found_u[:N], found_hit[:N]
    return _pack(spec, found_x, found_u, found_hit, steps, seed, attempts)


def _first_hit(spec, xs, ok, tol):
    """Grid index where the target is reached (-1 when not admissible)."""
    N, S1, n = xs.shape
    if spec.mode == FIXED:
        hit = ok & _target_hit(spec, xs[:, -1], tol)
        return np.where(hit, S1 - 1, -1)
    inside = _target_hit(spec, xs.reshape(-1, n), tol).reshape(N, S1)
    first = np.where(inside.any(axis=1), inside.argmax(axis=1), -1)
    # free mode: the constraint only matters up to the hitting time
    valid = np.zeros(N, dtype=bool)
    for i in np.flatnonzero(first >= 0):
        valid[i] = bool(np.all(spec.X.contains(xs[i, :first[i] + 1], tol=1e-9)))
    return np.where(valid, first, -1)


def _sample_backward(spec, N, rng, grid, switches, steps, seed):
    p = np.asarray(spec.XT.point, dtype=float)
    h = spec.T / steps
    # free mode: hitting times on a coarse set of grid steps, one batch per step count
    if spec.mode == FREE:
        choices = np.unique(np.linspace(steps / 10, steps, 10).round().astype(int))
    else:
        choices = np.array([steps])
    found_x, found_u, found_hit = [], [], []
    attempts = 0
    while len(found_x) < N and attempts < 50 * N:
        batch = max(2 * (N - len(found_x)), 64)
        attempts += batch
        hs = int(rng.choice(choices))
        u = _random_controls(rng, grid, batch, hs, max(1, switches * hs // steps))
        xs_b, ok = _rollout(spec, np.tile(p, (batch, 1)), u, hs, sign=-1.0, t_start=hs * h, h=h)
        for j in np.flatnonzero(ok):
            fwd = np.empty((steps + 1, spec.n))
            fwd[:hs + 1] = xs_b[j][::-1]
            fwd[hs + 1:] = p
            uf = np.zeros((steps, spec.m))
            if spec.m:
                uf[:hs] = u[j][::-1]
            found_x.append(fwd)
            found_u.append(uf)
            found_hit.append(hs)
            if len(found_x) == N:
                break
    return _pack(spec, found_x, found_u, found_hit, steps, seed, attempts)


def _pack(spec, xs, us, hits, steps, seed, attempts):
    times = np.linspace(0.0, spec.T, steps + 1)
    if xs:
        states = np.stack(xs)
        controls = np.stack(us)
    else:
        states = np.zeros((0, steps + 1, spec.n))
        controls = np.zeros((0, steps, spec.m))
    return Trajectories(times, states, controls, np.asarray(hits, dtype=int), seed, attempts)


# ---------------------------------------------------------------------------
# empirical moments

def _gauss_nodes(count: int):
    z, w = np.polynomial.legendre.leggauss(count)
    return 0.5 * (z + 1.0), 0.5 * w


def empirical_moments(scaled: ProblemSpec, smap: ScalingMap, traj: Trajectories,
                      layout: RelaxationLayout, nodes: int = 12) -> dict[str, np.ndarray]:
    """Moment vectors of the empirical measures of sampled trajectories.

    Returns a decision vector for ``layout`` (the slack measure is zero) plus
    the individual moment arrays.  Time integrals use cubic Hermite
    interpolation on each RK4 step and Gauss-Legendre quadrature.
    """
    n, m = scaled.n, scaled.m
    K = len(traj)
    if K == 0:
        raise ValueError("no trajectories")
    y_slot = layout.slots["y"]
    yT_slot = layout.slots["yT"]
    Ey = np.array(monomial_basis(1 + n + m, y_slot.degree), dtype=np.int64)
    E0 = np.array(monomial_basis(n, layout.slots["y0"].degree), dtype=np.int64)

    # scaled trajectory data: s = t / T, z = (x - c) / r, v = (u - cu) / ru
    xs = smap.to_scaled(traj.states)
    us = smap.input_to_scaled(traj.controls) if m else np.zeros(traj.controls.shape)
    steps = traj.states.shape[1] - 1
    h = 1.0 / steps
    s_nodes, w_nodes = _gauss_nodes(nodes)

    # hit step defines where the occupation measure stops (free mode)
    y = np.zeros(Ey.shape[0])
    for i in range(steps):
        active = traj.hit_step > i
        if not np.any(active):
            continue
        z0 = xs[active, i]
        z1 = xs[active, i + 1]
        v = us[active, i] if m else np.zeros((z0.shape[0], 0))
        f0 = scaled.vector_field(i * h, z0, v if m else None)
        f1 = scaled.vector_field((i + 1) * h, z1, v if m else None)
        for s, w in zip(s_nodes, w_nodes):
            h00 = 2 * s ** 3 - 3 * s ** 2 + 1
            h10 = s ** 3 - 2 * s ** 2 + s
            h01 = -2 * s ** 3 + 3 * s ** 2
            h11 = s ** 3 - s ** 2
            z = h00 * z0 + h10 * h * f0 + h01 * z1 + h11 * h * f1
            t = np.full((z.shape[0], 1), (i + s) * h)
            pts = np.hstack([t, z, v])
            y += w * h * monomial_values(pts, Ey).sum(axis=0)
    y /= K

    y0 = monomial_values(xs[:, 0], E0).mean(axis=0)
    end = xs[np.arange(K), traj.hit_step]
    tend = traj.hit_step * h
    if layout.mode == FREE:
        ET = np.array(monomial_basis(1 + n, layout.slots["yT"].degree), dtype=np.int64)
        pts = np.hstack([tend[:, None], end])
    else:
        ET = E0
        pts = end
    yT_full = monomial_values(pts, ET).mean(axis=0)

    vec = np.zeros(layout.num_vars)
    vec[y_slot.offset:y_slot.offset + y_slot.length] = y
    y0s = layout.slots["y0"]
    vec[y0s.offset:y0s.offset + y0s.length] = y0
    if yT_slot.kind == "moments":
        vec[yT_slot.offset:yT_slot.offset + yT_slot.length] = yT_full
    elif yT_slot.kind == "point-mass":
        vec[yT_slot.offset] = yT_full[0]
    else:
        # point-time: keep only the pure time moments
        pure_t = np.flatnonzero(np.all(ET[:, 1:] == 0, axis=1))
        vec[yT_slot.offset:yT_slot.offset + yT_slot.length] = yT_full[pure_t]
    return {"vector": vec, "y": y, "y0": y0, "yT": yT_full}


def liouville_residual(problem, layout: RelaxationLayout, vector: np.ndarray) -> float:
    """Largest Liouville-row residual in original (unscaled) row units."""
    nL = layout.num_liouville
    r = problem.A[:nL] @ vector / layout.row_scale[:nL]
    return float(np.max(np.abs(r), initial=0.0))


# ---------------------------------------------------------------------------
# volume errors

@dataclass
class VolumeReport:
    k: int | None
    estimator: str
    samples: int
    seed: int | None
    excess_volume: float
    relative_error: float
    roa_volume: float
    missed_fraction: float
    ci_halfwidth: float | None = None
    dual_objective: float | None = None
    primal_objective: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def sample_box(box, N: int, seed: int | None, estimator: str) -> np.ndarray:
    """Evaluation points: cell midpoints of an ``N``-per-axis grid, or ``N`` uniform samples."""
    box = np.asarray(box, dtype=float)
    d = box.shape[0]
    if estimator == GRID:
        axes = [a + (b - a) * (np.arange(N) + 0.5) / N for a, b in box]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    if estimator == MONTE_CARLO:
        rng = np.random.default_rng(seed)
        return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((N, d))
    raise ValueError(f"unknown estimator {estimator!r}")


def volume_error(member: Callable[[np.ndarray], np.ndarray] | OuterApprox,
                 oracle: Callable[[np.ndarray], np.ndarray], box: Sequence[tuple[float, float]],
                 N: int, seed: int | None = 0, estimator: str | None = None,
                 k: int | None = None, points: np.ndarray | None = None,
                 truth: np.ndarray | None = None) -> VolumeReport:
    """``lambda(approx minus X0) / lambda(X0)`` on a grid (dimension <= 2) or by Monte Carlo.

    ``member`` is an :class:`OuterApprox` (order ``k``) or any membership
    function.  Precomputed ``points`` and oracle values ``truth`` may be
    passed to share samples between orders.
    """
    box = np.asarray(box, dtype=float)
    d = box.shape[0]
    if estimator is None:
        estimator = GRID if d <= 2 else MONTE_CARLO
    if points is None:
        points = sample_box(box, N, seed, estimator)
    if truth is None:
        truth = np.asarray(oracle(points), dtype=bool)
    if isinstance(member, OuterApprox):
        inside = member.contains(points, k)
    else:
        inside = np.asarray(member(points), dtype=bool)
    total = points.shape[0]
    n_roa = int(truth.sum())
    if n_roa == 0:
        raise OracleUndefined("no evaluation point lies in the region of attraction")
    excess = int(np.sum(inside & ~truth))
    missed = int(np.sum(~inside & truth))
    box_vol = float(np.prod(box[:, 1] - box[:, 0]))
    err = excess / n_roa
    ci = None
    if estimator == MONTE_CARLO:
        # delta-method 95% half-width for a ratio of multinomial counts
        # (rule of three when no excess point was drawn)
        ci = 1.96 * err * math.sqrt(1.0 / excess + 1.0 / n_roa) if excess else 3.0 / n_roa
    dual = primal = None
    if isinstance(member, OuterApprox):
        kk = member.orders[-1] if k is None else k
        cert = member.certificates[member.orders.index(kk)]
        dual, primal = cert.dual_objective, cert.primal_objective
        k = kk
    return VolumeReport(k, estimator, N, seed if estimator == MONTE_CARLO else None,
                        excess / total * box_vol, err, n_roa / total * box_vol, missed / n_roa,
                        ci, dual, primal)


def roa_volume(oracle, box, N: int, seed: int | None = 0, estimator: str | None = None) -> float:
    """Oracle estimate of ``lambda(X0)`` in original units."""
    box = np.asarray(box, dtype=float)
    if estimator is None:
        estimator = GRID if box.shape[0] <= 2 else MONTE_CARLO
    pts = sample_box(box, N, seed, estimator)
    frac = float(np.mean(oracle(pts)))
    return frac * float(np.prod(box[:, 1] - box[:, 0]))


# ---------------------------------------------------------------------------
# level sets

def levelset_grid(box, points_per_axis: int) -> np.ndarray:
    """Row-major grid including the box corners."""
    axes = [np.linspace(a, b, points_per_axis) for a, b in box]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(box))


def levelset_table(cert: Certificate, smap: ScalingMap, points) -> np.ndarray:
    """Columns ``x1..xn, v(0, x), w(x)`` for original-unit ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    xs = smap.to_scaled(pts)
    v0 = cert.value_at_start(xs)
    w = cert.w.evaluate(xs)
    return np.column_stack([pts, v0, w])


# ---------------------------------------------------------------------------
# dual feasibility on samples

def _sample_set(S, N, rng):
    if S.is_singleton:
        return np.asarray(S.point, dtype=float)[None, :]
    box = np.array(S.bounding_box(), dtype=float)
    pts = box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((4 * N, S.dim))
    pts = pts[S.contains(pts)]
    return pts[:N]


def certificate_violations(cert: Certificate, scaled: ProblemSpec, N: int = 20000,
                           seed: int = 0, tol: float | None = None) -> dict:
    """Worst violation of each dual constraint on random samples (scaled coordinates).

    Constraints: ``Lv <= 0`` on ``[0,1] x X x U``; ``w >= 1 + v(0,.)`` and
    ``w >= 0`` on ``X``; ``v(1,.) >= 0`` on ``XT`` (``v >= 0`` on
    ``[0,1] x XT`` in free mode).  A violation is reported as a positive number.
    """
    rng = np.random.default_rng(seed)
    if tol is None:
        tol = 1e-5 * max(1.0, cert.coefficient_norm())
    n, m = scaled.n, scaled.m
    xs = scaled.state_variables
    X = _sample_set(scaled.X, N, rng)
    out = {}
    tx = ("t",) + xs
    v = cert.v.embed(tx) if cert.v.variables != tx else cert.v
    Lv = lie_derivative(v, list(scaled.dynamics), "t", xs)
    t = rng.random((X.shape[0], 1))
    cols = [t, X]
    if m:
        U = _sample_set(scaled.U, X.shape[0], rng)
        U = U[rng.integers(0, U.shape[0], size=X.shape[0])]
        cols.append(U)
    out["decrease"] = float(np.max(Lv.evaluate(np.hstack(cols)), initial=-np.inf))
    v0 = cert.value_at_start(X)
    w = cert.w.evaluate(X)
    out["domination"] = float(np.max(1.0 + v0 - w, initial=-np.inf))
    out["nonnegativity"] = float(np.max(-w, initial=-np.inf))
    XT = _sample_set(scaled.XT, N, rng)
    if cert.mode == FREE:
        tt = rng.random((XT.shape[0], 1)) if not scaled.XT.is_singleton else \
            np.linspace(0, 1, 1001)[:, None]
        XT = np.broadcast_to(XT, (tt.shape[0], n)) if scaled.XT.is_singleton else XT
        vals = v.evaluate(np.hstack([tt, XT]))
    else:
        vals = v.evaluate(np.hstack([np.ones((XT.shape[0], 1)), XT]))
    out["terminal"] = float(np.max(-vals, initial=-np.inf))
    return {"tolerance": tol, "violations": out,
            "passed": {key: bool(val <= tol) for key, val in out.items()}}


# ---------------------------------------------------------------------------
# registry of known problems

def oracle_for(name: str | None, spec: ProblemSpec | None = None):
    """Membership oracle by problem name (simulation for uncontrolled problems otherwise)."""
    if name == "cubic":
        return analytic_roa_cubic
    if name == "double-integrator":
        return lambda x: analytic_roa_double_integrator(x, spec.T if spec else 1.0)
    if name == "brockett":
        return lambda x: analytic_roa_brockett(x, spec.T if spec else 1.0)
    if spec is not None and spec.m == 0:
        return lambda x: simulate_basin(spec, x)
    raise OracleUndefined(f"no oracle known for problem {name!r}")


__all__ = [
    "OuterApprox", "contains", "SINGLE", "RUNNING_MIN", "GRID", "MONTE_CARLO",
    "OracleUndefined", "analytic_roa_cubic", "analytic_roa_double_integrator",
    "double_integrator_value", "analytic_roa_brockett", "brockett_time", "brockett_angle",
    "simulate_basin", "Trajectories", "control_grid", "sample_admissible_points",
    "empirical_moments", "liouville_residual", "VolumeReport", "volume_error", "sample_box",
    "roa_volume", "levelset_grid", "levelset_table", "oracle_for", "certificate_violations",
]
