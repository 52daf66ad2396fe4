"""
Problem specifications, validation and the scaling pipeline.

A problem is a polynomial vector field ``f(t, x, u)`` on a horizon ``[0, T]``
together with basic semialgebraic constraint sets ``X`` (states), ``U``
(inputs) and ``XT`` (target).  Solver-facing computations work on a scaled
copy in which the horizon is ``[0, 1]`` and each variable box is ``[-1, 1]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .poly import Polynomial, format_poly, parse_poly

FIXED = "fixed"
FREE = "free"


class InvalidSpec(ValueError):
    pass


def state_names(n: int) -> tuple[str, ...]:
    return tuple(f"x{i + 1}" for i in range(n))


def input_names(m: int) -> tuple[str, ...]:
    return tuple(f"u{j + 1}" for j in range(m))


@dataclass(frozen=True)
class SemialgebraicSet:
    """``{z : g(z) >= 0 for every g}``, or a single point when ``point`` is set.

    ``ball_radius`` records the ``R`` of an appended redundant constraint
    ``R - |z|^2`` (``None`` when no such constraint was added).
    """

    variables: tuple[str, ...]
    inequalities: tuple[Polynomial, ...] = ()
    point: tuple[float, ...] | None = None
    ball_radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "inequalities", tuple(self.inequalities))
        if self.point is not None:
            object.__setattr__(self, "point", tuple(float(p) for p in self.point))
            if len(self.point) != len(self.variables):
                raise InvalidSpec("singleton point has the wrong dimension")
        for g in self.inequalities:
            if g.variables != self.variables:
                raise InvalidSpec(f"constraint {g} is not over {self.variables}")

    @property
    def is_singleton(self) -> bool:
        return self.point is not None

    @property
    def dim(self) -> int:
        return len(self.variables)

    def max_half_degree(self) -> int:
        return max((math.ceil(g.degree() / 2) for g in self.inequalities), default=0)

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        """Vectorised membership for rows of ``points``."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.point is not None:
            return np.all(np.abs(pts - np.asarray(self.point)) <= tol, axis=1)
        ok = np.ones(pts.shape[0], dtype=bool)
        # far-away points may overflow; they fail the test either way
        with np.errstate(over="ignore", invalid="ignore"):
            for g in self.inequalities:
                ok &= g.evaluate(pts) >= -tol
        return ok

    def bounding_box(self) -> list[tuple[float, float] | None]:
        """Per-variable bounds implied by the constraints (``None`` if unbounded)."""
        if self.point is not None:
            return [(p, p) for p in self.point]
        lo = [-math.inf] * self.dim
        hi = [math.inf] * self.dim
        for g in self.inequalities:
            for i, (a, b) in _implied_bounds(g).items():
                lo[i] = max(lo[i], a)
                hi[i] = min(hi[i], b)
        return [(lo[i], hi[i]) if math.isfinite(lo[i]) and math.isfinite(hi[i]) else None
                for i in range(self.dim)]


def _implied_bounds(g: Polynomial) -> dict[int, tuple[float, float]]:
    """Intervals implied by a single constraint of degree at most 2.

    Handles univariate linear and quadratic constraints and separable
    concave quadratics (axis-aligned ellipsoids).
    """
    out: dict[int, tuple[float, float]] = {}
    if g.degree() > 2 or g.is_zero():
        return out
    n = g.nvars
    const = g.coefficient((0,) * n)
    lin = np.zeros(n)
    quad = np.zeros(n)
    for alpha, c in g.items():
        d = sum(alpha)
        if d == 1:
            lin[alpha.index(1)] = c
        elif d == 2:
            if 2 not in alpha:
                return out  # cross term
            quad[alpha.index(2)] = c
    involved = [i for i in range(n) if lin[i] or quad[i]]
    if len(involved) == 1 and quad[involved[0]] == 0.0:
        i = involved[0]
        root = -const / lin[i]
        out[i] = (root, math.inf) if lin[i] > 0 else (-math.inf, root)
        return out
    if not involved or any(quad[i] >= 0 for i in involved):
        return out
    a = -quad[involved]
    b = lin[involved]
    rho = const + float(np.sum(b ** 2 / (4 * a)))
    if rho < 0:
        return out
    for j, i in enumerate(involved):
        center = b[j] / (2 * a[j])
        half = math.sqrt(rho / a[j])
        out[i] = (center - half, center + half)
    return out


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    m: int
    T: float
    dynamics: tuple[Polynomial, ...]
    X: SemialgebraicSet
    U: SemialgebraicSet | None
    XT: SemialgebraicSet
    mode: str = FIXED
    name: str | None = None

    @property
    def variables(self) -> tuple[str, ...]:
        return ("t",) + state_names(self.n) + input_names(self.m)

    @property
    def state_variables(self) -> tuple[str, ...]:
        return state_names(self.n)

    @property
    def input_variables(self) -> tuple[str, ...]:
        return input_names(self.m)

    def dynamics_degree(self) -> int:
        return max((f.degree() for f in self.dynamics), default=0)

    def vector_field(self, t, x, u=None) -> np.ndarray:
        """Evaluate ``f`` at rows of ``x`` (and ``u``); ``t`` scalar or per-row."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        N = x.shape[0]
        cols = [np.broadcast_to(np.asarray(t, dtype=float), (N,))[:, None], x]
        if self.m:
            uu = np.zeros((N, self.m)) if u is None else np.atleast_2d(np.asarray(u, dtype=float))
            cols.append(np.broadcast_to(uu, (N, self.m)))
        pts = np.hstack(cols)
        return np.column_stack([f.evaluate(pts) for f in self.dynamics])

    def with_mode(self, mode: str) -> "ProblemSpec":
        if mode not in (FIXED, FREE):
            raise InvalidSpec(f"unknown mode {mode!r}")
        return replace(self, mode=mode)


# ---------------------------------------------------------------------------
# problem files

def _parse_set(entries, variables, what: str) -> SemialgebraicSet:
    if entries == "origin":
        return SemialgebraicSet(variables, (), point=(0.0,) * len(variables))
    if isinstance(entries, dict) and "point" in entries:
        return SemialgebraicSet(variables, (), point=tuple(entries["point"]))
    if not isinstance(entries, list):
        raise InvalidSpec(f"{what} must be a list of polynomial strings")
    return SemialgebraicSet(variables, tuple(parse_poly(s, variables) for s in entries))


def spec_from_dict(data: dict) -> ProblemSpec:
    try:
        n = int(data["n"])
        m = int(data.get("m", 0))
        T = float(data["T"])
        mode = data.get("mode", FIXED)
        dyn = data["dynamics"]
    except KeyError as exc:
        raise InvalidSpec(f"missing field {exc.args[0]!r}") from None
    if mode not in (FIXED, FREE):
        raise InvalidSpec(f"unknown mode {mode!r}")
    if len(dyn) != n:
        raise InvalidSpec(f"{len(dyn)} dynamics entries for n = {n}")
    ctx = ("t",) + state_names(n) + input_names(m)
    dynamics = tuple(parse_poly(s, ctx) for s in dyn)
    X = _parse_set(data.get("X", []), state_names(n), "X")
    U = _parse_set(data.get("U", []), input_names(m), "U") if m else None
    XT = _parse_set(data.get("XT", []), state_names(n), "XT")
    return ProblemSpec(n, m, T, dynamics, X, U, XT, mode, data.get("name"))


def _set_to_json(S: SemialgebraicSet | None):
    if S is None:
        return []
    if S.point is not None:
        if all(p == 0.0 for p in S.point):
            return "origin"
        return {"point": list(S.point)}
    return [format_poly(g) for g in S.inequalities]


def spec_to_dict(spec: ProblemSpec) -> dict:
    out = {}
    if spec.name is not None:
        out["name"] = spec.name
    out.update({
        "n": spec.n,
        "m": spec.m,
        "T": spec.T,
        "mode": spec.mode,
        "dynamics": [format_poly(f) for f in spec.dynamics],
        "X": _set_to_json(spec.X),
        "U": _set_to_json(spec.U),
        "XT": _set_to_json(spec.XT),
    })
    return out


def dumps_spec(spec: ProblemSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


def loads_spec(text: str) -> ProblemSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"problem file is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidSpec("problem file must contain a JSON object")
    return spec_from_dict(data)


def load_spec(path) -> ProblemSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_spec(fh.read())


def save_spec(spec: ProblemSpec, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_spec(spec))


# ---------------------------------------------------------------------------
# validation

def _box_matches(S: SemialgebraicSet, box, samples_per_dim: int = 5) -> bool:
    """Grid check that the set fills its bounding box (vertices included)."""
    if S.dim > 6:
        samples_per_dim = 2
    axes = [np.linspace(a, b, samples_per_dim) for a, b in box]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, S.dim)
    return bool(np.all(S.contains(grid, tol=1e-9)))


def validate(spec: ProblemSpec) -> list[str]:
    """Return human-readable problems with ``spec`` (empty when well formed)."""
    diags: list[str] = []
    if not (spec.T > 0 and math.isfinite(spec.T)):
        diags.append("horizon must be positive")
    if spec.n < 1:
        diags.append("state dimension must be at least 1")
    if spec.m < 0:
        diags.append("input dimension must be nonnegative")
    if len(spec.dynamics) != spec.n:
        diags.append(f"expected {spec.n} dynamics entries, got {len(spec.dynamics)}")
    ctx = spec.variables
    for i, f in enumerate(spec.dynamics):
        if f.variables != ctx:
            diags.append(f"dynamics entry {i + 1} is not over {ctx}")
    if spec.mode not in (FIXED, FREE):
        diags.append(f"unknown mode {spec.mode!r}")
    if spec.X.variables != state_names(spec.n):
        diags.append("state set uses the wrong variables")
    elif spec.X.is_singleton:
        diags.append("state set must have nonempty interior")
    else:
        box = spec.X.bounding_box()
        if any(b is None for b in box):
            diags.append("state set unbounded")
        elif any(b[1] <= b[0] for b in box):
            diags.append("state set has empty interior")
        elif not _box_matches(spec.X, box):
            diags.append("state set must equal its bounding box")
    if spec.m:
        if spec.U is None or spec.U.variables != input_names(spec.m):
            diags.append("input set unbounded")
        else:
            box = spec.U.bounding_box()
            if not spec.U.inequalities and not spec.U.is_singleton or any(b is None for b in box):
                diags.append("input set unbounded")
    if spec.XT.variables != state_names(spec.n):
        diags.append("target set uses the wrong variables")
    elif not spec.XT.is_singleton:
        box = spec.XT.bounding_box()
        if not spec.XT.inequalities or any(b is None for b in box):
            diags.append("target set unbounded")
    return diags


# ---------------------------------------------------------------------------
# scaling

@dataclass(frozen=True)
class ScalingMap:
    """``x = state_center + state_radius * x_scaled`` (same for inputs), ``t = T * s``."""

    state_center: tuple[float, ...]
    state_radius: tuple[float, ...]
    input_center: tuple[float, ...] = ()
    input_radius: tuple[float, ...] = ()
    T: float = 1.0
    ball_radii: dict = field(default_factory=dict)

    def to_scaled(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x - np.asarray(self.state_center)) / np.asarray(self.state_radius)

    def from_scaled(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return np.asarray(self.state_center) + np.asarray(self.state_radius) * xs

    def input_to_scaled(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (u - np.asarray(self.input_center)) / np.asarray(self.input_radius)

    def input_from_scaled(self, us) -> np.ndarray:
        us = np.asarray(us, dtype=float)
        return np.asarray(self.input_center) + np.asarray(self.input_radius) * us

    def state_volume_factor(self) -> float:
        """Lebesgue volume of one scaled unit in original units."""
        return float(np.prod(self.state_radius))

    def is_identity(self, tol: float = 1e-12) -> bool:
        return (self.T == 1.0
                and all(abs(c) <= tol for c in self.state_center + self.input_center)
                and all(abs(r - 1.0) <= tol for r in self.state_radius + self.input_radius))

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "state_center": list(self.state_center),
            "state_radius": list(self.state_radius),
            "input_center": list(self.input_center),
            "input_radius": list(self.input_radius),
            "ball_radii": dict(self.ball_radii),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingMap":
        return cls(tuple(d["state_center"]), tuple(d["state_radius"]),
                   tuple(d.get("input_center", ())), tuple(d.get("input_radius", ())),
                   float(d.get("T", 1.0)), dict(d.get("ball_radii", {})))


def _center_radius(box):
    c = tuple((a + b) / 2 for a, b in box)
    r = tuple((b - a) / 2 for a, b in box)
    return c, r


def _affine_images(names, center, radius):
    from .poly import affine
    return {v: affine(names, v, c, r) for v, c, r in zip(names, center, radius)}


def _normalize(g: Polynomial) -> Polynomial:
    s = g.coefficient_norm()
    return g.scale(1.0 / s) if s > 0 else g


def _ball(variables, R: float) -> Polynomial:
    from .poly import Polynomial as P
    n = len(variables)
    terms = {(0,) * n: float(R)}
    for i in range(n):
        e = [0] * n
        e[i] = 2
        terms[tuple(e)] = -1.0
    return P(variables, terms)


def _with_ball(S: SemialgebraicSet, R: float) -> SemialgebraicSet:
    ball = _normalize(_ball(S.variables, R))
    if any(g == ball for g in S.inequalities):
        return replace(S, ball_radius=float(R))
    return replace(S, inequalities=S.inequalities + (ball,), ball_radius=float(R))


def _scale_set(S: SemialgebraicSet, names, center, radius) -> SemialgebraicSet:
    if S.point is not None:
        p = tuple((pi - c) / r for pi, c, r in zip(S.point, center, radius))
        return SemialgebraicSet(S.variables, (), point=p)
    images = _affine_images(names, center, radius)
    gs = tuple(_normalize(g.substitute(images, names)) for g in S.inequalities)
    return SemialgebraicSet(S.variables, gs)


def target_ball(spec: ProblemSpec, radius: float) -> SemialgebraicSet:
    """Replace a singleton target by the ball of the given radius around it."""
    p = spec.XT.point
    names = state_names(spec.n)
    g = Polynomial.constant(names, radius ** 2)
    for i, v in enumerate(names):
        g = g - (Polynomial.variable(names, v) - p[i]) ** 2
    return SemialgebraicSet(names, (g,))


def preprocess(spec: ProblemSpec, target_radius: float | None = None) -> tuple[ProblemSpec, ScalingMap]:
    """Scale time to ``[0, 1]`` and variable boxes to ``[-1, 1]``; add redundant balls.

    A singleton target is kept exact unless ``target_radius`` is given, in
    which case it is replaced by a ball of that radius (original units).
    """
    diags = validate(spec)
    if diags:
        raise InvalidSpec("; ".join(diags))
    if target_radius is not None and spec.XT.is_singleton:
        spec = replace(spec, XT=target_ball(spec, target_radius))
    xs = state_names(spec.n)
    us = input_names(spec.m)
    cx, rx = _center_radius(spec.X.bounding_box())
    if spec.m:
        cu, ru = _center_radius(spec.U.bounding_box())
        # degenerate input directions (fixed inputs) keep unit radius
        ru = tuple(r if r > 0 else 1.0 for r in ru)
    else:
        cu, ru = (), ()
    T = float(spec.T)
    ctx = spec.variables
    images = {"t": Polynomial.variable(ctx, "t").scale(T)}
    for v, c, r in zip(xs, cx, rx):
        images[v] = Polynomial.variable(ctx, v).scale(r) + c
    for v, c, r in zip(us, cu, ru):
        images[v] = Polynomial.variable(ctx, v).scale(r) + c
    dyn = tuple(f.substitute(images, ctx).scale(T / r) for f, r in zip(spec.dynamics, rx))

    X = _with_ball(_scale_set(spec.X, xs, cx, rx), spec.n)
    balls = {"X": float(spec.n)}
    U = None
    if spec.m:
        U = _scale_set(spec.U, us, cu, ru)
        if not U.is_singleton:
            U = _with_ball(U, spec.m)
            balls["U"] = float(spec.m)
    XT = _scale_set(spec.XT, xs, cx, rx)
    if not XT.is_singleton:
        XT = _with_ball(XT, spec.n)
        balls["XT"] = float(spec.n)
    scaled = ProblemSpec(spec.n, spec.m, 1.0, dyn, X, U, XT, spec.mode, spec.name)
    smap = ScalingMap(cx, rx, cu, ru, T, balls)
    return scaled, smap


def unscale_certificate(cert, smap: ScalingMap):
    """Express a scaled-coordinate certificate in original coordinates.

    ``v_orig(t, x) = v_scaled(t / T, (x - c) / r)`` and ``w_orig(x) = w_scaled((x - c) / r)``.
    """
    vctx = cert.v.variables
    wctx = cert.w.variables
    xs = wctx
    images = {"t": Polynomial.variable(vctx, "t").scale(1.0 / smap.T)}
    for v, c, r in zip(xs, smap.state_center, smap.state_radius):
        images[v] = (Polynomial.variable(vctx, v) - c).scale(1.0 / r)
    v_new = cert.v.substitute(images, vctx)
    wimages = {v: (Polynomial.variable(wctx, v) - c).scale(1.0 / r)
               for v, c, r in zip(xs, smap.state_center, smap.state_radius)}
    w_new = cert.w.substitute(wimages, wctx)
    return replace(cert, v=v_new, w=w_new, coordinates="original")


def rk4(rhs, x0, t0: float, T: float, steps: int) -> np.ndarray:
    """Fixed-step RK4 for ``x' = rhs(t, x)`` with ``x`` of shape ``(N, n)``; returns x(T)."""
    x = np.array(x0, dtype=float)
    h = (T - t0) / steps
    t = t0
    for _ in range(steps):
        k1 = rhs(t, x)
        k2 = rhs(t + h / 2, x + h / 2 * k1)
        k3 = rhs(t + h / 2, x + h / 2 * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return x
