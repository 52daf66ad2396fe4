"""
Primal-dual interior-point method for :class:`ConicProblem`.

The problem is embedded in a homogeneous self-dual model and solved with
Nesterov-Todd scaling and a Mehrotra predictor-corrector.  Internally it is
written as the minimisation

    minimize q'x  s.t.  A x = b,  s = h - G x  PSD

with ``x = y``, ``q = -c``, ``G = -D`` and ``h = E``.  Equality multipliers
``yeq`` and block duals ``Z`` satisfy ``A'yeq = c + D'Z`` at optimality.
The Newton systems are reduced to a dense Schur complement on ``x`` and
factored with Cholesky.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .problem import (INFEASIBLE, MAX_ITER, NUMERICAL_FAILURE, OPTIMAL, ConicProblem,
                      ConicSolution)


RHO_SCALE = 1


class LimitExceeded(RuntimeError):
    pass


class NumericalFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol_feas: float = 1e-8
    tol_gap: float = 1e-8
    max_iter: int = 200
    step: float = 0.99
    max_block: int = 400
    max_vars: int = 20000
    refinement: int = 2
    chunk_bytes: int = 64 * 2 ** 20
    verbose: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class _Block:
    """Per-block workspace: local column set and the sparse layouts used by the Schur product."""

    def __init__(self, blk, N: int):
        self.s = s = blk.size
        D = blk.operator.tocsc()
        self.cols = np.flatnonzero(np.diff(D.indptr))
        Dl = D[:, self.cols].tocoo()
        self.nc = len(self.cols)
        self.D = blk.operator.tocsr()
        self.DT = self.D.T.tocsr()
        self.Dl_T = Dl.T.tocsr()  # (nc, s*s)
        # rows (j, a), cols b : entry D_j[a, b]
        a, bcol = np.divmod(Dl.row, s)
        self.X = sp.csr_matrix((Dl.data, (Dl.col * s + a, bcol)), shape=(self.nc * s, s))
        self.E = blk.offset_matrix()

    def apply(self, x):
        return (self.D @ x).reshape(self.s, self.s)


def _sym(M):
    return 0.5 * (M + M.T)


def _chol_lower(M):
    return np.linalg.cholesky(_sym(M))


def _nt_scaling(S, Z):
    """Return ``(r, lam)`` with ``r^{-1} S r^{-T} = r' Z r = diag(lam)``."""
    L1 = _chol_lower(S)
    L2 = _chol_lower(Z)
    U, lam, Vt = np.linalg.svd(L2.T @ L1)
    r = L1 @ Vt.T / np.sqrt(lam)
    return r, lam


class _KKT:
    """Factorisation of ``[0 A' G'; A 0 0; G 0 -W'W]`` for one scaling."""

    def __init__(self, solver: "_IPM", P: list[np.ndarray]):
        self.sv = solver
        self.P = P
        N = solver.N
        H = np.zeros((N, N))
        for blk, Pj in zip(solver.blocks, P):
            if blk.nc == 0:
                continue
            Hl = self._block_schur(blk, Pj)
            ix = np.ix_(blk.cols, blk.cols)
            H[ix] += Hl
        H = _sym(H)
        self.H = H
        A = solver.Ad
        self.shift_A = False
        L = None
        try:
            L = la.cholesky(H, lower=True, check_finite=False)
        except la.LinAlgError:
            pass
        self.rho = 1.0
        if L is None and A.shape[0]:
            # augmented form H + rho A'A leaves the solution unchanged on Ax = b
            self.rho = RHO_SCALE * max(np.max(np.abs(np.diag(H))), 1.0)
            try:
                L = la.cholesky(H + self.rho * (A.T @ A), lower=True, check_finite=False)
                self.shift_A = True
            except la.LinAlgError:
                pass
        if L is None:
            d = np.max(np.abs(np.diag(H)), initial=1.0)
            reg = 1e-14 * d
            base = H + (self.rho * (A.T @ A) if A.shape[0] else 0.0)
            self.shift_A = bool(A.shape[0])
            for _ in range(8):
                try:
                    L = la.cholesky(base + reg * np.eye(N), lower=True, check_finite=False)
                    break
                except la.LinAlgError:
                    reg *= 100
            if L is None:
                raise NumericalFailure("Schur complement is not positive definite")
        self.L = L
        if A.shape[0]:
            V = la.solve_triangular(L, A.T, lower=True, check_finite=False)
            S = V.T @ V
            try:
                self.LS = la.cholesky(_sym(S), lower=True, check_finite=False)
            except la.LinAlgError:
                d = np.max(np.abs(np.diag(S)), initial=1.0)
                reg = 1e-14 * d
                self.LS = None
                for _ in range(8):
                    try:
                        self.LS = la.cholesky(_sym(S) + reg * np.eye(S.shape[0]), lower=True,
                                              check_finite=False)
                        break
                    except la.LinAlgError:
                        reg *= 100
                if self.LS is None:
                    raise NumericalFailure("equality Schur complement is singular")
        else:
            self.LS = None

    def _block_schur(self, blk: _Block, Pj: np.ndarray) -> np.ndarray:
        s, nc = blk.s, blk.nc
        out = np.empty((nc, nc))
        per_col = 3 * s * s * 8
        step = max(1, int(self.sv.opts.chunk_bytes // per_col))
        for j0 in range(0, nc, step):
            j1 = min(nc, j0 + step)
            Y = (blk.X[j0 * s:j1 * s] @ Pj).reshape(j1 - j0, s, s)  # D_j P
            M = np.matmul(Y.transpose(0, 2, 1), Pj)  # P D_j P
            out[:, j0:j1] = blk.Dl_T @ M.reshape(j1 - j0, s * s).T
        return out

    def _hsolve(self, r):
        return la.cho_solve((self.L, True), r, check_finite=False)

    def _solve_once(self, bx, by, bz):
        sv = self.sv
        # r1 = bx - D' vec(P bz P)  (G' = -D')
        r1 = bx.copy()
        for blk, Pj, B in zip(sv.blocks, self.P, bz):
            r1 -= blk.DT @ (Pj @ B @ Pj).ravel()
        A = sv.Ad
        if A.shape[0]:
            if self.shift_A:
                r1 = r1 + self.rho * (A.T @ by)
            u = self._hsolve(r1)
            rhs = A @ u - by
            dy = la.cho_solve((self.LS, True), rhs, check_finite=False)
            dx = self._hsolve(r1 - A.T @ dy)
        else:
            dy = np.zeros(0)
            dx = self._hsolve(r1)
        dz = [-(Pj @ (blk.apply(dx) + B) @ Pj) for blk, Pj, B in zip(sv.blocks, self.P, bz)]
        dz = [_sym(M) for M in dz]
        return dx, dy, dz

    def apply(self, dx, dy, dz):
        """Multiply by the KKT matrix (used for iterative refinement)."""
        sv = self.sv
        ox = sv.Ad.T @ dy if sv.Ad.shape[0] else np.zeros(sv.N)
        for blk, Z in zip(sv.blocks, dz):
            ox = ox - blk.DT @ Z.ravel()
        oy = sv.Ad @ dx
        oz = []
        for blk, Pinv, Z in zip(sv.blocks, self.Pinv, dz):
            oz.append(-blk.apply(dx) - Pinv @ Z @ Pinv)
        return ox, oy, oz

    def solve(self, bx, by, bz):
        dx, dy, dz = self._solve_once(bx, by, bz)
        for _ in range(self.sv.opts.refinement):
            ox, oy, oz = self.apply(dx, dy, dz)
            ex, ey = bx - ox, by - oy
            ez = [B - O for B, O in zip(bz, oz)]
            cx, cy, cz = self._solve_once(ex, ey, ez)
            dx = dx + cx
            dy = dy + cy
            dz = [a + c for a, c in zip(dz, cz)]
        return dx, dy, dz


def _inner(U, V):
    return float(sum(np.sum(a * b) for a, b in zip(U, V)))


def _norm(U):
    return float(np.sqrt(sum(np.sum(a * a) for a in U)))


def _max_step(lam_list, D_list):
    """Largest ``a`` with ``diag(lam) + a D`` PSD for every block (inf if unbounded)."""
    t = 0.0
    for lam, D in zip(lam_list, D_list):
        isq = 1.0 / np.sqrt(lam)
        M = D * isq[:, None] * isq[None, :]
        ev = np.linalg.eigvalsh(_sym(M))[0]
        t = max(t, -ev)
    return np.inf if t <= 0 else 1.0 / t


class _IPM:
    def __init__(self, problem: ConicProblem, opts: SolverOptions):
        self.problem = problem
        self.opts = opts
        self.N = problem.num_vars
        self.blocks = [_Block(blk, self.N) for blk in problem.blocks]
        self.q = -problem.c
        self.h = [blk.E for blk in self.blocks]
        A = problem.A.toarray()
        b = problem.b.copy()
        self.keep = np.arange(A.shape[0])
        self.inconsistent = False
        if A.shape[0]:
            self._drop_dependent_rows(A, b)
        else:
            self.Ad = A
            self.b = b

    def _drop_dependent_rows(self, A, b):
        Q, R, piv = la.qr(A.T, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        tol = max(A.shape) * np.finfo(float).eps * (d[0] if d.size else 0.0) * 10
        rank = int(np.sum(d > tol))
        keep = np.sort(piv[:rank])
        drop = np.setdiff1d(np.arange(A.shape[0]), keep)
        if drop.size:
            coef, *_ = np.linalg.lstsq(A[keep].T, A[drop].T, rcond=None)
            mismatch = np.abs(coef.T @ b[keep] - b[drop])
            scale = 1.0 + np.abs(b[drop])
            if np.any(mismatch > 1e-9 * scale * max(1.0, np.abs(b).max())):
                self.inconsistent = True
        self.keep = keep
        self.Ad = A[keep]
        self.b = b[keep]

    # linear maps with G = -D
    def G(self, x):
        return [-blk.apply(x) for blk in self.blocks]

    def GT(self, Z):
        out = np.zeros(self.N)
        for blk, M in zip(self.blocks, Z):
            out -= blk.DT @ M.ravel()
        return out

    def run(self) -> ConicSolution:
        opts = self.opts
        if self.inconsistent:
            return self._result(np.zeros(self.N), np.zeros(len(self.b)),
                                [np.zeros((b.s, b.s)) for b in self.blocks], 1.0,
                                INFEASIBLE, 0, "inconsistent equality constraints", [])
        q, b, h = self.q, self.b, self.h
        A = self.Ad
        nblk = len(self.blocks)
        eye = [np.eye(blk.s) for blk in self.blocks]
        degree = sum(blk.s for blk in self.blocks) + 1

        # starting point from the identity scaling
        kkt = _KKT(self, [np.eye(blk.s) for blk in self.blocks])
        kkt.Pinv = eye
        x, _, zz = kkt.solve(np.zeros(self.N), b.copy(), [M.copy() for M in h])
        s = [-M for M in zz]
        _, y, z = kkt.solve(-q, np.zeros(len(b)), [np.zeros_like(M) for M in h])
        s = [_sym(M) for M in s]
        z = [_sym(M) for M in z]

        def shift(U):
            ts = max(-np.linalg.eigvalsh(M)[0] for M in U)
            nrm = _norm(U)
            if ts >= -1e-8 * max(nrm, 1.0):
                a = 1.0 + ts
                U = [M + a * I for M, I in zip(U, eye)]
            return U

        s = shift(s)
        z = shift(z)
        tau, kappa = 1.0, 1.0

        resx0 = max(1.0, np.linalg.norm(q))
        resy0 = max(1.0, np.linalg.norm(b))
        resz0 = max(1.0, _norm(h))

        try:
            scal = [_nt_scaling(S, Z) for S, Z in zip(s, z)]
        except np.linalg.LinAlgError:
            return self._result(x, y, z, tau, NUMERICAL_FAILURE, 0, "bad starting point", [])
        r = [sc[0] for sc in scal]
        lam = [sc[1] for sc in scal]

        history = []
        status, info = MAX_ITER, "iteration limit reached"
        it = 0
        best = None
        for it in range(opts.max_iter + 1):
            # residuals
            hrx = -(A.T @ y if A.shape[0] else 0.0) - self.GT(z)
            rx = -hrx + q * tau  # A'y + G'z + q tau
            hry = A @ x
            ry = b * tau - hry
            Gx = self.G(x)
            hrz = [S + g for S, g in zip(s, Gx)]
            rz = [H - hh * tau for H, hh in zip(hrz, h)]
            cx = float(q @ x)
            by = float(b @ y)
            hz = _inner(h, z)
            rt = kappa + cx + by + hz
            sz = _inner(s, z)
            mu = (sz + tau * kappa) / degree
            pcost = cx / tau
            dcost = -(by + hz) / tau
            gap = sz / tau ** 2
            pres = max(np.linalg.norm(ry) / tau / resy0, _norm(rz) / tau / resz0)
            dres = np.linalg.norm(rx) / tau / resx0
            relgap = gap / max(1.0, abs(pcost))
            hresx = np.linalg.norm(hrx)
            pinf = hresx / resx0 / (-(by + hz)) if by + hz < 0 else np.inf
            dinf = (max(np.linalg.norm(hry) / resy0, _norm(hrz) / resz0) / (-cx)
                    if cx < 0 else np.inf)
            history.append(dict(iter=it, pcost=float(-pcost), dcost=float(-dcost), gap=float(gap),
                                relgap=float(relgap), pres=float(pres), dres=float(dres),
                                tau=float(tau), kappa=float(kappa)))
            if opts.verbose:
                print(f"{it:3d} {-pcost: .8e} {-dcost: .8e} gap {gap:.1e} pres {pres:.1e} "
                      f"dres {dres:.1e} k/t {kappa / tau:.1e}")
            merit = max(pres / opts.tol_feas, dres / opts.tol_feas, relgap / opts.tol_gap)
            if best is None or merit < best[0]:
                best = (merit, it, x, y, z, tau)
            if pres <= opts.tol_feas and dres <= opts.tol_feas and relgap <= opts.tol_gap:
                status, info = OPTIMAL, "optimal"
                break
            if pinf <= opts.tol_feas:
                status, info = INFEASIBLE, "primal infeasible"
                break
            if dinf <= opts.tol_feas:
                status, info = INFEASIBLE, "dual infeasible"
                break
            if it == opts.max_iter:
                break

            # factor the scaled KKT system
            rinv = [np.linalg.inv(R) for R in r]
            P = [Ri.T @ Ri for Ri in rinv]
            try:
                kkt = _KKT(self, P)
            except NumericalFailure as exc:
                status, info = NUMERICAL_FAILURE, str(exc)
                break
            kkt.Pinv = [R @ R.T for R in r]
            # direction used to eliminate dtau
            x1, y1, z1 = kkt.solve(-q, b.copy(), [M.copy() for M in h])
            wz1 = sum(np.sum((R.T @ Z @ R) ** 2) for R, Z in zip(r, z1))
            g1 = float(q @ x1 + b @ y1 + _inner(h, z1))

            lamM = [np.diag(l) for l in lam]
            lam_sum = [(l[:, None] + l[None, :]) / 2 for l in lam]
            dsa = dza = None
            dta = dka = 0.0
            sigma = 0.0
            for phase in (0, 1):
                if phase == 0:
                    eta = 0.0
                    bs = [-(L * L) for L in lamM]
                    bk = -tau * kappa
                else:
                    sigma = (1.0 - min(1.0, alpha_a)) ** 3
                    eta = sigma
                    bs = []
                    for L, da, za in zip(lamM, dsa, dza):
                        J = 0.5 * (da @ za + za @ da)
                        bs.append(-(L * L) - J + sigma * mu * np.eye(L.shape[0]))
                    bk = -tau * kappa - dta * dka + sigma * mu
                # u solves lam o u = bs
                u = [B / ls for B, ls in zip(bs, lam_sum)]
                bx = -(1 - eta) * rx
                byv = (1 - eta) * ry
                bz = []
                for R, U, RZ in zip(r, u, rz):
                    # W'u = r u r'
                    bz.append(-(1 - eta) * RZ - R @ U @ R.T)
                x0, y0, z0 = kkt.solve(bx, byv, bz)
                g0 = float(q @ x0 + b @ y0 + _inner(h, z0))
                dtau = (-(1 - eta) * rt - bk / tau - g0) / (g1 - kappa / tau)
                dx = x0 + dtau * x1
                dy = y0 + dtau * y1
                dz = [Z0 + dtau * Z1 for Z0, Z1 in zip(z0, z1)]
                dkappa = (bk - kappa * dtau) / tau
                dzt = [R.T @ Z @ R for R, Z in zip(r, dz)]
                dst = [U - Z for U, Z in zip(u, dzt)]
                amax = min(_max_step(lam, dst), _max_step(lam, dzt))
                if dtau < 0:
                    amax = min(amax, -tau / dtau)
                if dkappa < 0:
                    amax = min(amax, -kappa / dkappa)
                if phase == 0:
                    alpha_a = min(1.0, amax)
                    dsa, dza, dta, dka = dst, dzt, dtau, dkappa
                else:
                    alpha = min(1.0, opts.step * amax)

            if not np.isfinite(alpha) or alpha < 1e-12:
                status, info = NUMERICAL_FAILURE, "step length collapsed"
                break
            # update iterates and scaling
            x = x + alpha * dx
            y = y + alpha * dy
            tau = tau + alpha * dtau
            kappa = kappa + alpha * dkappa
            new_r, new_lam = [], []
            try:
                for j in range(nblk):
                    st = np.diag(lam[j]) + alpha * dst[j]
                    zt = np.diag(lam[j]) + alpha * dzt[j]
                    L1 = _chol_lower(st)
                    L2 = _chol_lower(zt)
                    U, l, Vt = np.linalg.svd(L2.T @ L1)
                    new_r.append(r[j] @ L1 @ Vt.T / np.sqrt(l))
                    new_lam.append(l)
            except np.linalg.LinAlgError:
                status, info = NUMERICAL_FAILURE, "lost positive definiteness"
                break
            s = [_sym(S + alpha * (R @ D @ R.T)) for S, R, D in zip(s, r, dst)]
            z = [_sym(Z + alpha * D) for Z, D in zip(z, dz)]
            r, lam = new_r, new_lam
        if status in (MAX_ITER, NUMERICAL_FAILURE) and best is not None:
            # hand back the most accurate iterate seen rather than the last one
            _, bit, x, y, z, tau = best
            h = history[bit]
            info = (f"{info}; returning iterate {bit} (pres {h['pres']:.1e}, dres {h['dres']:.1e}, "
                    f"relgap {h['relgap']:.1e})")
        else:
            h = history[-1] if history else None
        accuracy = max(h["pres"], h["dres"], h["relgap"]) if h and status != INFEASIBLE else np.inf
        return self._result(x, y, z, tau, status, it, info, history, accuracy)

    def _result(self, x, y, z, tau, status, it, info, history, accuracy=np.inf):
        prob = self.problem
        if status == INFEASIBLE and info == "primal infeasible":
            scale = -(float(self.b @ y) + _inner(self.h, z))
            yy = y / scale
            Z = [M / scale for M in z]
            xx = np.full(self.N, np.nan)
        elif status == INFEASIBLE and info == "dual infeasible":
            scale = -float(self.q @ x)
            xx = x / scale
            yy = np.full(len(self.b), np.nan)
            Z = [np.full_like(M, np.nan) for M in z]
        else:
            xx = x / tau
            yy = y / tau
            Z = [M / tau for M in z]
        mult = np.zeros(prob.num_eq)
        mult[self.keep] = yy
        if status in (INFEASIBLE,) and info == "dual infeasible":
            mult[:] = np.nan
        pobj = float(prob.c @ xx)
        dobj = float(prob.b @ mult + sum(np.sum(blk.offset_matrix() * M)
                                         for blk, M in zip(prob.blocks, Z)))
        if np.all(np.isfinite(xx)):
            vals = prob.block_values(xx)
            pres = max(np.linalg.norm(prob.A @ xx - prob.b) if prob.num_eq else 0.0,
                       max((max(0.0, -np.linalg.eigvalsh(_sym(V))[0]) for V in vals), default=0.0))
        else:
            pres = np.nan
        if np.all(np.isfinite(mult)):
            resid = prob.A.T @ mult - prob.c
            for blk, M in zip(prob.blocks, Z):
                resid -= blk.operator.T @ M.ravel()
            dres = float(np.linalg.norm(resid))
        else:
            dres = np.nan
        gap = float(abs(pobj - dobj)) if np.isfinite(pobj) and np.isfinite(dobj) else np.nan
        return ConicSolution(xx, mult, Z, status, pobj, dobj, float(pres), dres, gap, it, info,
                             history, float(accuracy))


def solve(problem: ConicProblem, options: SolverOptions | None = None, **kw) -> ConicSolution:
    """Solve ``problem`` with the reference interior-point method.

    Keyword arguments override fields of ``options``.
    """
    opts = options or SolverOptions()
    if kw:
        opts = SolverOptions(**{**opts.to_dict(), **kw})
    largest = max(problem.block_sizes())
    if largest > opts.max_block or problem.num_vars > opts.max_vars:
        raise LimitExceeded(
            f"problem has largest block {largest} and {problem.num_vars} variables; limits are "
            f"{opts.max_block} and {opts.max_vars}. Export it in SDPA format and use an "
            f"external solver instead")
    return _IPM(problem, opts).run()
