"""
Moment relaxations of the region-of-attraction problem.

Four measures enter the relaxation: the occupation measure on
``[0,1] x X x U`` (moments ``y``), the initial measure on ``X`` (``y0``),
the terminal measure on ``XT`` or ``[0,1] x XT`` (``yT``) and the slack
measure complementing the initial one up to Lebesgue measure (``yhat0``).
Equality rows tie them together through test monomials ``t^a x^b``; the
multipliers of those rows are the coefficients of the certificate ``(v, w)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .conic import INFEASIBLE, MAX_ITER, NUMERICAL_FAILURE, OPTIMAL, ConicProblem, ConicSolution, PSDBlock, SolverOptions, solve
from .moments import (grlex_ranks, lebesgue_moments_box, localizing_matrix, monomial_values,
                      MomentVector)
from .poly import Polynomial, basis_size, lie_derivative, monomial_basis
from .semialg import FIXED, FREE, ProblemSpec, input_names, state_names


class OrderTooLow(ValueError):
    pass


class NotOptimal(RuntimeError):
    pass


class SOSInfeasible(RuntimeError):
    def __init__(self, identity: str, report: dict):
        super().__init__(f"sum-of-squares identity {identity!r} failed verification")
        self.identity = identity
        self.report = report


@dataclass(frozen=True)
class Certificate:
    """Polynomials ``v(t, x)`` and ``w(x)`` from one relaxation order."""

    v: Polynomial
    w: Polynomial
    k: int
    mode: str = FIXED
    coordinates: str = "scaled"
    primal_objective: float = float("nan")
    dual_objective: float = float("nan")
    solver_status: str = OPTIMAL
    accuracy: float = 0.0

    def value_at_start(self, x) -> np.ndarray:
        """``v(0, x)`` for rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pts = np.hstack([np.zeros((x.shape[0], 1)), x])
        return self.v.evaluate(pts)

    def coefficient_norm(self) -> float:
        return max(self.v.coefficient_norm(), self.w.coefficient_norm())

    def to_dict(self) -> dict:
        def terms(p):
            return [[list(a), c] for a, c in p.sorted_terms()]
        return {
            "k": self.k,
            "mode": self.mode,
            "coordinates": self.coordinates,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "solver_status": self.solver_status,
            "accuracy": self.accuracy,
            "v": {"variables": list(self.v.variables), "terms": terms(self.v)},
            "w": {"variables": list(self.w.variables), "terms": terms(self.w)},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Certificate":
        def poly(e):
            return Polynomial(e["variables"], {tuple(a): c for a, c in e["terms"]})
        return cls(poly(d["v"]), poly(d["w"]), int(d["k"]), d.get("mode", FIXED),
                   d.get("coordinates", "scaled"), float(d.get("primal_objective", "nan")),
                   float(d.get("dual_objective", "nan")), d.get("solver_status", OPTIMAL),
                   float(d.get("accuracy", 0.0)))


@dataclass(frozen=True)
class MeasureSlot:
    """Where one measure's moments live in the decision vector.

    ``kind`` is ``"moments"`` (one variable per moment), ``"point-mass"``
    (a single mass at ``point``) or ``"point-time"`` (time moments times a
    Dirac mass at ``point``).
    """

    name: str
    variables: tuple[str, ...]
    degree: int
    offset: int
    length: int
    kind: str = "moments"
    point: tuple[float, ...] | None = None

    def columns(self, E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Decision indices and weights giving the moments for exponents ``E``."""
        E = np.atleast_2d(np.asarray(E, dtype=np.int64))
        if self.kind == "moments":
            return self.offset + grlex_ranks(E), np.ones(E.shape[0])
        p = np.asarray(self.point, dtype=float)
        if self.kind == "point-mass":
            return np.full(E.shape[0], self.offset), monomial_values(p[None, :], E)[0]
        # point-time: exponent columns are (t, x...)
        w = monomial_values(p[None, :], E[:, 1:])[0]
        return self.offset + grlex_ranks(E[:, :1]), w


@dataclass
class RelaxationLayout:
    k: int
    k_occupation: int
    mode: str
    n: int
    m: int
    slots: dict
    liouville_monomials: np.ndarray
    domination_monomials: np.ndarray
    row_scale: np.ndarray
    lebesgue: MomentVector
    blocks: list = field(default_factory=list)
    num_vars: int = 0

    @property
    def num_liouville(self) -> int:
        return self.liouville_monomials.shape[0]

    @property
    def num_domination(self) -> int:
        return self.domination_monomials.shape[0]


def minimal_order(spec: ProblemSpec) -> int:
    """Smallest relaxation order for which every block order is nonnegative."""
    k = max(1, math.ceil((spec.dynamics_degree() + 1) / 2))
    for S in (spec.X, spec.U, spec.XT):
        if S is not None and not S.is_singleton:
            k = max(k, S.max_half_degree())
    return k


def occupation_order(spec: ProblemSpec, k: int) -> int:
    """Order of the occupation-measure moment matrix (moments up to ``max(2k, 2k-1+deg f)``)."""
    return max(k, math.ceil((2 * k - 1 + spec.dynamics_degree()) / 2))


def _block_from_operator(op: sp.csr_matrix, size: int, slot: MeasureSlot, N: int, label: str):
    """Re-index a localizing operator over one measure's moments into the decision vector."""
    coo = op.tocoo()
    if slot.kind == "moments":
        cols = coo.col + slot.offset
        data = coo.data
    else:
        E = np.array(monomial_basis(len(slot.variables), slot.degree), dtype=np.int64)
        idx, wts = slot.columns(E)
        cols = idx[coo.col]
        data = coo.data * wts[coo.col]
    D = sp.csr_matrix((data, (coo.row, cols)), shape=(size * size, N))
    return PSDBlock(size, D, None, label)


def _measure_blocks(slot: MeasureSlot, order: int, constraints, N: int, time_localizer: bool):
    """Moment matrix plus localizing matrices of one measure."""
    mv = MomentVector(slot.variables, slot.degree)
    out = []
    catalog = []
    one = Polynomial.constant(slot.variables, 1.0)
    items = [("1", one, order)]
    if time_localizer:
        t = Polynomial.variable(slot.variables, "t")
        items.append(("t(1-t)", t - t * t, order - 1))
    for g in constraints:
        gg = g.embed(slot.variables)
        items.append((str(g), gg, order - math.ceil(g.degree() / 2)))
    for label, g, o in items:
        if o < 0:
            raise OrderTooLow(f"block order {o} for {label} on {slot.name}")
        lm = localizing_matrix(g, mv, o)
        out.append(_block_from_operator(lm.operator, lm.size, slot, N, f"{slot.name}:{label}"))
        catalog.append((slot.name, label, o))
    return out, catalog


def _assemble(spec: ProblemSpec, k: int, free: bool):
    if spec.T != 1.0:
        raise ValueError("assemble expects a preprocessed problem (horizon 1)")
    kmin = minimal_order(spec)
    if k < kmin:
        raise OrderTooLow(f"relaxation order {k} is too low; the minimal admissible order is {kmin}")
    n, m = spec.n, spec.m
    xs = state_names(n)
    us = input_names(m)
    tx = ("t",) + xs
    txu = ("t",) + xs + us
    ky = occupation_order(spec, k)
    d2 = 2 * k

    slots = {}
    offset = 0

    def add(name, variables, degree, kind="moments", point=None):
        nonlocal offset
        if kind == "moments":
            length = basis_size(len(variables), degree)
        elif kind == "point-mass":
            length = 1
        else:
            length = degree + 1
        slots[name] = MeasureSlot(name, tuple(variables), degree, offset, length, kind, point)
        offset += length

    add("y", txu, 2 * ky)
    add("y0", xs, d2)
    if spec.XT.is_singleton:
        if free:
            add("yT", tx, d2, "point-time", spec.XT.point)
        else:
            add("yT", xs, d2, "point-mass", spec.XT.point)
    else:
        add("yT", tx if free else xs, d2)
    add("yhat0", xs, d2)
    N = offset

    # equality rows
    test = np.array(monomial_basis(1 + n, d2), dtype=np.int64)
    rows, cols, vals = [], [], []
    f = list(spec.dynamics)
    y_slot, y0_slot, yT_slot, yh_slot = slots["y"], slots["y0"], slots["yT"], slots["yhat0"]
    for r, alpha in enumerate(test):
        a = int(alpha[0])
        beta = alpha[1:]
        # terminal measure
        if free:
            idx, wts = yT_slot.columns(alpha[None, :])
        else:
            idx, wts = yT_slot.columns(beta[None, :])
        rows.extend([r] * len(idx))
        cols.extend(idx.tolist())
        vals.extend(wts.tolist())
        # initial measure
        if a == 0:
            idx, wts = y0_slot.columns(beta[None, :])
            rows.extend([r] * len(idx))
            cols.extend(idx.tolist())
            vals.extend((-wts).tolist())
        # occupation measure: - <mu, L phi>
        phi = Polynomial(tx, {tuple(int(e) for e in alpha): 1.0})
        Lphi = lie_derivative(phi, f, "t", xs)
        if not Lphi.is_zero():
            E, c = Lphi.exponent_matrix()
            idx, wts = y_slot.columns(E)
            rows.extend([r] * len(idx))
            cols.extend(idx.tolist())
            vals.extend((-c * wts).tolist())
    nL = test.shape[0]
    dom = np.array(monomial_basis(n, d2), dtype=np.int64)
    box = spec.X.bounding_box()
    leb = lebesgue_moments_box(box, d2, xs)
    for r, beta in enumerate(dom):
        for slot in (y0_slot, yh_slot):
            idx, wts = slot.columns(beta[None, :])
            rows.extend([nL + r] * len(idx))
            cols.extend(idx.tolist())
            vals.extend(wts.tolist())
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nL + dom.shape[0], N))
    A.sum_duplicates()
    A.eliminate_zeros()
    b = np.concatenate([np.zeros(nL), leb.values])
    rnorm = np.asarray(abs(A).max(axis=1).todense()).ravel()
    scale = 1.0 / rnorm
    A = sp.diags(scale) @ A
    b = b * scale

    c = np.zeros(N)
    c[y0_slot.offset] = 1.0

    # PSD blocks
    blocks, catalog = [], []
    gX = list(spec.X.inequalities)
    gU = list(spec.U.inequalities) if (m and spec.U is not None and not spec.U.is_singleton) else []
    bl, ca = _measure_blocks(y_slot, ky, [g.embed(txu) for g in gX]
                             + [g.embed(txu) for g in gU], N, True)
    blocks += bl
    catalog += ca
    bl, ca = _measure_blocks(y0_slot, k, gX, N, False)
    blocks += bl
    catalog += ca
    if yT_slot.kind == "point-mass":
        D = sp.csr_matrix(([1.0], ([0], [yT_slot.offset])), shape=(1, N))
        blocks.append(PSDBlock(1, D, None, "yT:mass"))
        catalog.append(("yT", "mass", 0))
    elif yT_slot.kind == "point-time":
        tslot = MeasureSlot("yT", ("t",), d2, yT_slot.offset, d2 + 1)
        bl, ca = _measure_blocks(tslot, k, [], N, True)
        blocks += bl
        catalog += ca
    else:
        gT = [g.embed(yT_slot.variables) for g in spec.XT.inequalities]
        bl, ca = _measure_blocks(yT_slot, k, gT, N, free)
        blocks += bl
        catalog += ca
    bl, ca = _measure_blocks(yh_slot, k, gX, N, False)
    blocks += bl
    catalog += ca

    problem = ConicProblem(c, A, b, blocks)
    layout = RelaxationLayout(k, ky, FREE if free else FIXED, n, m, slots, test, dom, scale, leb,
                              catalog, N)
    return problem, layout


def assemble(spec: ProblemSpec, k: int) -> tuple[ConicProblem, RelaxationLayout]:
    """Fixed-final-time relaxation of order ``k`` for a preprocessed problem."""
    return _assemble(spec, k, free=False)


def assemble_free_time(spec: ProblemSpec, k: int) -> tuple[ConicProblem, RelaxationLayout]:
    """Free-final-time relaxation: the terminal measure also carries time."""
    return _assemble(spec, k, free=True)


def assemble_for_mode(spec: ProblemSpec, k: int):
    return assemble_free_time(spec, k) if spec.mode == FREE else assemble(spec, k)


def recover_certificate(layout: RelaxationLayout, solution: ConicSolution,
                        accept_accuracy: float | None = None) -> Certificate:
    """Read ``v`` and ``w`` off the equality multipliers of an optimal solution.

    With ``accept_accuracy`` set, a solve that stopped early (iteration limit
    or numerical breakdown) is also accepted when its returned iterate has
    residuals and relative gap at most that value.
    """
    ok = solution.status == OPTIMAL or (
        accept_accuracy is not None and solution.status in (MAX_ITER, NUMERICAL_FAILURE)
        and solution.accuracy <= accept_accuracy)
    if not ok:
        raise NotOptimal(f"solver status is {solution.status} ({solution.info})")
    mult = solution.x * layout.row_scale
    n = layout.n
    xs = state_names(n)
    tx = ("t",) + xs
    nL = layout.num_liouville
    v = Polynomial(tx, {tuple(int(e) for e in a): c
                        for a, c in zip(layout.liouville_monomials, mult[:nL])})
    w = Polynomial(xs, {tuple(int(e) for e in a): c
                        for a, c in zip(layout.domination_monomials, mult[nL:])})
    return Certificate(v, w, layout.k, layout.mode, "scaled", solution.primal_objective,
                       solution.dual_objective, solution.status, solution.accuracy)


@dataclass
class RelaxationResult:
    k: int
    problem: ConicProblem
    layout: RelaxationLayout
    solution: ConicSolution
    certificate: Certificate | None

    @property
    def primal_objective(self) -> float:
        return self.solution.primal_objective

    @property
    def dual_objective(self) -> float:
        return self.solution.dual_objective


DEFAULT_ACCEPT = 1e-2


def solve_relaxation(spec: ProblemSpec, k: int, options: SolverOptions | None = None,
                     mode: str | None = None,
                     accept_accuracy: float | None = DEFAULT_ACCEPT) -> RelaxationResult:
    """Assemble, solve and recover the certificate for one order.

    The certificate is ``None`` when the solve neither converged nor reached
    ``accept_accuracy`` (see :func:`recover_certificate`).
    """
    mode = mode or spec.mode
    problem, layout = assemble_free_time(spec, k) if mode == FREE else assemble(spec, k)
    sol = solve(problem, options)
    try:
        cert = recover_certificate(layout, sol, accept_accuracy)
    except NotOptimal:
        cert = None
    return RelaxationResult(k, problem, layout, sol, cert)


# ---------------------------------------------------------------------------
# a-posteriori sum-of-squares verification

def _gram_problem(target: Polynomial, multipliers: list[tuple[str, Polynomial, int]]):
    """Gram-matrix SDP for ``target = sum_j g_j * sigma_j`` with ``sigma_j`` SOS.

    Decision variables are the upper-triangular Gram entries plus a scalar
    ``t``; every Gram matrix minus ``t I`` must be PSD and ``t`` is maximised.
    """
    ctx = target.variables
    nv = len(ctx)
    maxdeg = max([target.degree()] + [g.degree() + 2 * o for _, g, o in multipliers])
    mono = monomial_basis(nv, maxdeg)
    nrow = len(mono)
    offsets = []
    N = 0
    for _, g, o in multipliers:
        s = basis_size(nv, o)
        offsets.append(N)
        N += s * (s + 1) // 2
    t_idx = N
    N += 1
    A_r, A_c, A_v = [], [], []
    blocks = []
    for (label, g, o), off in zip(multipliers, offsets):
        B = np.array(monomial_basis(nv, o), dtype=np.int64).reshape(-1, nv)
        s = B.shape[0]
        iu, ju = np.triu_indices(s)
        var = off + np.arange(len(iu))
        # coefficient matching rows
        for gamma, cg in g.sorted_terms():
            E = B[iu] + B[ju] + np.asarray(gamma, dtype=np.int64)
            rws = grlex_ranks(E)
            weight = np.where(iu == ju, 1.0, 2.0) * cg
            A_r.extend(rws.tolist())
            A_c.extend(var.tolist())
            A_v.extend(weight.tolist())
        # block: Q - t I
        rr = np.concatenate([iu * s + ju, ju * s + iu])
        cc = np.concatenate([var, var])
        keep = np.ones(len(rr), dtype=bool)
        keep[len(iu):] = iu != ju
        rr, cc = rr[keep], cc[keep]
        vv = np.ones(len(rr))
        diag = np.arange(s) * (s + 1)
        rr = np.concatenate([rr, diag])
        cc = np.concatenate([cc, np.full(s, t_idx)])
        vv = np.concatenate([vv, -np.ones(s)])
        blocks.append(PSDBlock(s, sp.csr_matrix((vv, (rr, cc)), shape=(s * s, N)), None, label))
    A = sp.csr_matrix((A_v, (A_r, A_c)), shape=(nrow, N))
    A.sum_duplicates()
    b = np.zeros(nrow)
    if not target.is_zero():
        E, cv = target.exponent_matrix()
        b[grlex_ranks(E)] = cv
    # rows with no Gram contribution must have zero target
    present = np.diff(A.indptr) > 0
    orphan = np.abs(b[~present]).max(initial=0.0)
    A = A[present]
    b = b[present]
    c = np.zeros(N)
    c[t_idx] = 1.0
    return ConicProblem(c, A, b, blocks), offsets, t_idx, orphan, mono, present


def _check_identity(name, target, multipliers, options):
    prob, offsets, t_idx, orphan, mono, present = _gram_problem(target, multipliers)
    sol = solve(prob, options)
    report = {"identity": name, "status": sol.status, "min_eigenvalue": float("nan"),
              "residual": float("inf"), "orphan": float(orphan)}
    if sol.status == INFEASIBLE or not np.all(np.isfinite(sol.y)):
        return report
    # project Gram matrices onto the PSD cone and measure the coefficient mismatch
    ctx = target.variables
    recon = Polynomial.zero(ctx)
    min_eigs = []
    for (label, g, o), blk in zip(multipliers, prob.blocks):
        Q = blk.value(sol.y) + sol.y[t_idx] * np.eye(blk.size)
        ev, V = np.linalg.eigh(0.5 * (Q + Q.T))
        min_eigs.append(float(ev[0]))
        Qp = (V * np.maximum(ev, 0.0)) @ V.T
        B = monomial_basis(len(ctx), o)
        terms = {}
        for i, a in enumerate(B):
            for j, bb in enumerate(B):
                e = tuple(x + y for x, y in zip(a, bb))
                terms[e] = terms.get(e, 0.0) + Qp[i, j]
        recon = recon + Polynomial(ctx, terms) * g
    diff = recon - target
    report["min_eigenvalue"] = min(min_eigs)
    report["margin"] = float(sol.y[t_idx])
    report["residual"] = max(diff.coefficient_norm(), orphan)
    return report


def verify_sos(cert: Certificate, spec: ProblemSpec, k: int | None = None,
               options: SolverOptions | None = None, tol: float | None = None,
               raise_on_failure: bool = True) -> dict:
    """Check the four Putinar identities behind a certificate with ``(v, w)`` fixed.

    Returns a report per identity with the coefficient residual obtained after
    projecting the Gram matrices onto the PSD cone.  Raises :class:`SOSInfeasible`
    naming the first failing identity unless ``raise_on_failure`` is false.
    """
    k = cert.k if k is None else k
    n, m = spec.n, spec.m
    xs = state_names(n)
    us = input_names(m)
    tx = ("t",) + xs
    txu = tx + us
    ky = occupation_order(spec, k)
    if tol is None:
        tol = 1e-5 * max(1.0, cert.coefficient_norm())
    gX = list(spec.X.inequalities)
    gU = list(spec.U.inequalities) if (m and spec.U is not None and not spec.U.is_singleton) else []

    def mults(ctx, order, gs, time=False):
        out = [("sigma0", Polynomial.constant(ctx, 1.0), order)]
        if time:
            tt = Polynomial.variable(ctx, "t")
            out.append(("t(1-t)", tt - tt * tt, order - 1))
        for g in gs:
            out.append((str(g), g.embed(ctx), order - math.ceil(g.degree() / 2)))
        return out

    v = cert.v.embed(tx)
    reports = {}
    # 1. -Lv on [0,1] x X x U
    Lv = lie_derivative(v, list(spec.dynamics), "t", xs)
    reports["decrease"] = _check_identity(
        "decrease", -Lv, mults(txu, ky, [g.embed(txu) for g in gX + gU], True), options)
    # 2. w - v(0,.) - 1 on X
    v0 = v.substitute({"t": 0.0}, tx).embed(xs)
    reports["domination"] = _check_identity(
        "domination", cert.w - v0 - 1.0, mults(xs, k, gX), options)
    # 3. terminal condition
    if spec.XT.is_singleton:
        p = np.asarray(spec.XT.point)
        if cert.mode == FREE:
            vt = v.substitute({x: float(pi) for x, pi in zip(xs, p)}, tx).embed(("t",))
            reports["terminal"] = _check_identity(
                "terminal", vt, mults(("t",), k, [], True), options)
        else:
            val = float(v(np.concatenate([[1.0], p])))
            reports["terminal"] = {"identity": "terminal", "status": OPTIMAL,
                                   "min_eigenvalue": val, "residual": max(0.0, -val),
                                   "orphan": 0.0}
    elif cert.mode == FREE:
        reports["terminal"] = _check_identity(
            "terminal", v, mults(tx, k, [g.embed(tx) for g in spec.XT.inequalities], True), options)
    else:
        v1 = v.substitute({"t": 1.0}, tx).embed(xs)
        reports["terminal"] = _check_identity(
            "terminal", v1, mults(xs, k, list(spec.XT.inequalities)), options)
    # 4. w on X
    reports["nonnegativity"] = _check_identity("nonnegativity", cert.w, mults(xs, k, gX), options)
    for name, rep in reports.items():
        # the projected residual is the actual test; an early solver stop is tolerated
        rep["passed"] = bool(rep["residual"] <= tol)
    if raise_on_failure:
        for name, rep in reports.items():
            if not rep["passed"]:
                raise SOSInfeasible(name, reports)
    return reports
