"""Semidefinite feasibility backends and the parameter searches built on them.

Every problem is solved in margin form: maximise ``t`` subject to
``C_i(x) + t s_i I <= 0`` for each constraint written as ``C_i < 0``, with
``s_i = 1 + ||const(C_i)||``, ``t <= 1`` and the normalising trace budget
``sum_i tr(-C_i(x)) / s_i <= box * sum_i dim(C_i)`` that keeps homogeneous
problems bounded. For homogeneous problems the budget can be enlarged on a
retry, and margins are then divided by the enlargement so that the required
strictness ``delta`` is always measured at the base budget.

A point is declared feasible only if an independent eigenvalue check of the
returned point, divided by its budget usage, shows every constraint below
``-delta / 2`` and the reported margin reaches ``delta``. A problem is
declared infeasible only when the solver reports an optimal margin below
``delta`` or primal infeasibility. Everything else is a numerical failure.

Backends: Clarabel, a dense primal-dual interior-point solver (the default for
moderate sizes) and a dense log-barrier reference for small problems.
"""
from __future__ import annotations

import functools
import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .affine import LmiProblem

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
NUMERICAL = "numerical-failure"
RETRY_SCALES = (1.0, 2.0, 5.0)
NONHOMOGENEOUS_BOX = 1e3
_SOLVED = {"Solved", "AlmostSolved"}


@dataclass
class SolveOutcome:
    status: str
    assignments: dict
    margin_achieved: float
    backend: str = ""
    recheck: list = field(default_factory=list)
    attempts: int = 0
    seconds: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    def __bool__(self):
        return self.feasible


@dataclass
class _Compiled:
    consts: list
    maps: list
    sizes: list
    scales: list
    nvars: int

    @property
    def homogeneous(self) -> bool:
        return all(not np.any(c) for c in self.consts)


def compile_problem(prob: LmiProblem) -> _Compiled:
    consts, maps, sizes, scales = [], [], [], []
    for c in prob.constraints:
        neg = c.as_negative()
        cv, A = neg.coefficients(prob.nvars)
        consts.append(cv)
        maps.append(A)
        sizes.append(c.size)
        scales.append(c.scale())
    return _Compiled(consts, maps, sizes, scales, prob.nvars)


@functools.lru_cache(maxsize=64)
def svec_operator(p: int) -> sp.csr_matrix:
    """Map column-major ``vec`` to the scaled upper-triangle ``svec`` used by the conic backend."""
    rows, cols, vals = [], [], []
    k = 0
    r2 = 1.0 / np.sqrt(2.0)
    for j in range(p):
        for i in range(j + 1):
            if i == j:
                rows.append(k), cols.append(i + j * p), vals.append(1.0)
            else:
                rows += [k, k]
                cols += [i + j * p, j + i * p]
                vals += [r2, r2]
            k += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(p * (p + 1) // 2, p * p))


def recheck(prob: LmiProblem, values: dict) -> list:
    """Largest eigenvalue of each constraint (negative form) divided by its scale."""
    return prob.max_violation(values)


def _trace_row(cp: _Compiled):
    """Coefficients ``(a, b)`` of the normalisation ``sum_i tr(-C_i(x)) / s_i <= b + a.x`` budget."""
    a = np.zeros(cp.nvars)
    b = 0.0
    for c, A, p, s in zip(cp.consts, cp.maps, cp.sizes, cp.scales):
        eye = np.eye(p).reshape(-1)
        a -= (A.T @ eye) / s
        b -= float(eye @ c) / s
    return a, b, float(sum(cp.sizes))


def budget_usage(cp: _Compiled, x, box: float) -> float:
    """Fraction of the trace budget used by ``x`` (values above 1 violate it)."""
    a, b, dim = _trace_row(cp)
    return float(a @ np.asarray(x, dtype=float) + b) / (box * dim)


class ClarabelBackend:
    """Interior-point conic backend (native interface, PSD cones in triangle form)."""

    name = "clarabel"
    margin_only = False

    def __init__(self, max_iter: int = 200, tol: float = 1e-8, method: str = "faer"):
        self.max_iter = max_iter
        self.tol = tol
        self.method = method

    def _settings(self):
        import clarabel

        s = clarabel.DefaultSettings()
        s.verbose = False
        s.max_iter = self.max_iter
        s.tol_gap_abs = s.tol_gap_rel = self.tol
        s.tol_feas = self.tol
        s.direct_solve_method = self.method
        return s

    def run(self, cp: _Compiled, box: float, margin=None):
        """Return ``(solver_status, x, t)``; ``margin=None`` maximises ``t``.

        ``box`` scales the trace budget ``sum_i tr(-C_i) / s_i <= box * sum_i p_i``.
        """
        import clarabel

        nv = cp.nvars
        blocks, rhs, cones = [], [], []
        for c, A, p, s in zip(cp.consts, cp.maps, cp.sizes, cp.scales):
            Sv = svec_operator(p)
            eye = np.eye(p).T.reshape(-1)
            if margin is None:
                tcol = sp.csc_matrix((Sv @ (s * eye)).reshape(-1, 1))
                blocks.append(sp.hstack([Sv @ A, tcol]))
                rhs.append(-(Sv @ c))
            else:
                blocks.append(sp.hstack([Sv @ A, sp.csc_matrix((Sv.shape[0], 1))]))
                rhs.append(-(Sv @ (c + margin * s * eye)))
            cones.append(clarabel.PSDTriangleConeT(p))
        a, b0, dim = _trace_row(cp)
        lin = np.zeros((2, nv + 1))
        lin[0, -1] = 1.0
        lin[1, :nv] = a
        blocks.append(sp.csc_matrix(lin))
        rhs.append(np.array([1.0, box * dim - b0]))
        cones.append(clarabel.NonnegativeConeT(2))
        q = np.zeros(nv + 1)
        if margin is None:
            q[-1] = -1.0
        else:
            pin = np.zeros((1, nv + 1))
            pin[0, -1] = 1.0
            blocks.append(sp.csc_matrix(pin))
            rhs.append(np.array([0.0]))
            cones.append(clarabel.ZeroConeT(1))
        Amat = sp.vstack(blocks).tocsc()
        b = np.concatenate(rhs)
        P = sp.csc_matrix((nv + 1, nv + 1))
        sol = clarabel.DefaultSolver(P, q, Amat, b, cones, self._settings()).solve()
        x = np.asarray(sol.x, dtype=float)
        return str(sol.status), x[:nv], (float(x[-1]) if margin is None else margin)


class BarrierBackend:
    """Dense log-barrier path-following reference solver for small problems."""

    name = "barrier"
    margin_only = True

    def __init__(self, max_size: int = 100, max_vars: int = 600, mu_final: float = 1e-10):
        self.max_size = max_size
        self.max_vars = max_vars
        self.mu_final = mu_final

    def run(self, cp: _Compiled, box: float, margin=None):
        """Always maximises the margin; ``margin`` is accepted for interface symmetry."""
        if max(cp.sizes) > self.max_size or cp.nvars > self.max_vars:
            raise ValueError("problem too large for the dense reference backend")
        nv = cp.nvars
        mats = []  # (B0, Bk) with B(z) = B0 + sum_k z_k Bk > 0, z = [x, t]
        for c, A, p, s in zip(cp.consts, cp.maps, cp.sizes, cp.scales):
            Ad = A.toarray().T.reshape(nv, p, p).transpose(0, 2, 1)
            C0 = c.reshape(p, p).T
            mats.append((-C0, np.concatenate([-Ad, -s * np.eye(p)[None]], axis=0)))
        a, b0, dim = _trace_row(cp)
        lins = [(1.0, np.r_[np.zeros(nv), -1.0]),  # 1 - t > 0
                (box * dim - b0, np.r_[-a, 0.0])]  # trace budget
        t0 = min(np.linalg.eigvalsh(B0).min() / s for (B0, _), s in zip(mats, cp.scales)) - 1.0
        z = np.zeros(nv + 1)
        z[-1] = min(t0, 0.0)
        z, ok = self._path(mats, lins, z)
        return ("Solved" if ok else "NumericalError"), z[:nv], float(z[-1])

    @staticmethod
    def _barrier(mats, lins, z):
        tot = 0.0
        for b, a in lins:
            v = b + a @ z
            if v <= 0:
                return np.inf
            tot -= np.log(v)
        for B0, Bk in mats:
            B = B0 + np.tensordot(z, Bk, axes=1)
            try:
                Lc = np.linalg.cholesky(0.5 * (B + B.T))
            except np.linalg.LinAlgError:
                return np.inf
            tot -= 2.0 * np.log(np.diag(Lc)).sum()
        return tot

    def _path(self, mats, lins, z):
        nz = z.size
        cvec = np.zeros(nz)
        cvec[-1] = -1.0
        total_dim = sum(B0.shape[0] for B0, _ in mats) + len(lins)
        ok = True
        mu = 1.0
        while mu * total_dim > self.mu_final:
            for _ in range(80):
                g = cvec / mu
                H = np.zeros((nz, nz))
                for b, a in lins:
                    v = b + a @ z
                    g = g - a / v
                    H += np.outer(a, a) / v ** 2
                for B0, Bk in mats:
                    B = B0 + np.tensordot(z, Bk, axes=1)
                    Lc = np.linalg.cholesky(0.5 * (B + B.T))
                    Li = sla.solve_triangular(Lc, np.eye(B.shape[0]), lower=True)
                    M = Li @ Bk @ Li.T
                    Mf = M.reshape(nz, -1)
                    g -= np.einsum("kii->k", M)
                    H += Mf @ Mf.T
                H += 1e-12 * (1.0 + np.abs(np.diag(H)).max()) * np.eye(nz)
                try:
                    dz = -np.linalg.solve(H, g)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                dec = float(-g @ dz)
                if dec < 1e-12:
                    break
                f0 = cvec @ z / mu + self._barrier(mats, lins, z)
                step = 1.0
                while step > 1e-12:
                    zn = z + step * dz
                    fn = cvec @ zn / mu + self._barrier(mats, lins, zn)
                    if np.isfinite(fn) and fn <= f0 - 0.25 * step * dec:
                        break
                    step *= 0.5
                else:
                    break
                z = zn
            mu *= 0.2
        return z, ok


class IpmBackend:
    """Primal-dual interior-point method with Nesterov-Todd scaling and a dense Schur complement.

    Solves ``min -t`` s.t. ``h - G z`` in a product of PSD cones (the two
    linear rows are treated as 1x1 blocks), ``z = [x, t]``, using a
    Mehrotra predictor-corrector. With ``stop_at`` it returns as soon as the
    current iterate certifies a margin of at least ``stop_at``; this is the
    fast path for pure feasibility questions.
    """

    name = "ipm"
    margin_only = False
    early_stop = True

    def __init__(self, max_iter: int = 80, tol: float = 1e-9, step: float = 0.98):
        self.max_iter = max_iter
        self.tol = tol
        self.step = step

    @staticmethod
    def _blocks(cp: _Compiled):
        nv = cp.nvars
        Gs, hs = [], []
        for c, A, p, s in zip(cp.consts, cp.maps, cp.sizes, cp.scales):
            G = np.empty((nv + 1, p, p))
            G[:nv] = A.toarray().T.reshape(nv, p, p).transpose(0, 2, 1)
            G[:nv] = 0.5 * (G[:nv] + G[:nv].transpose(0, 2, 1))
            G[nv] = s * np.eye(p)
            C0 = c.reshape(p, p).T
            Gs.append(G)
            hs.append(-0.5 * (C0 + C0.T))
        return Gs, hs

    def run(self, cp: _Compiled, box: float, margin=None, stop_at=None):
        nv = cp.nvars
        nz = nv + 1
        Gs, hs = self._blocks(cp)
        n_psd = len(Gs)
        a, b0, dim = _trace_row(cp)
        g_t = np.zeros((nz, 1, 1))
        g_t[nv] = 1.0
        g_tr = np.zeros((nz, 1, 1))
        g_tr[:nv, 0, 0] = a
        Gs = Gs + [g_t, g_tr]
        hs = hs + [np.ones((1, 1)), np.full((1, 1), box * dim - b0)]
        if margin is not None:
            g_pin = np.zeros((nz, 1, 1))
            g_pin[nv] = -1.0
            Gs.append(g_pin)
            hs.append(np.full((1, 1), -margin))
        sizes = [G.shape[1] for G in Gs]
        nu = float(sum(sizes))
        tri = [np.triu_indices(p) for p in sizes]
        wts = [np.where(i == j, 1.0, np.sqrt(2.0)) for i, j in tri]
        cvec = np.zeros(nz)
        cvec[-1] = -1.0
        hnorm = max(1.0, np.sqrt(sum(np.sum(h * h) for h in hs)))

        def G_of(z):
            return [np.tensordot(z, G, axes=1) for G in Gs]

        def GT_of(ys):
            return sum(G.reshape(nz, -1) @ y.reshape(-1) for G, y in zip(Gs, ys))

        z = np.zeros(nz)
        t0 = min(np.linalg.eigvalsh(h).min() / (s if k < n_psd else 1.0)
                 for k, (h, s) in enumerate(zip(hs, list(cp.scales) + [1.0] * 3)))
        z[-1] = min(t0 - 1.0, 0.0) if margin is None else 0.0
        ss = [h - Gz for h, Gz in zip(hs, G_of(z))]
        ss = [S if np.linalg.eigvalsh(S).min() > 1e-8 else S + (1.0 - np.linalg.eigvalsh(S).min()) * np.eye(S.shape[0])
              for S in ss]
        ys = [np.eye(p) for p in sizes]
        status = "MaxIterations"
        best = (-np.inf, z.copy())
        for it in range(self.max_iter):
            Gz = G_of(z)
            rp = [Gzi + S - h for Gzi, S, h in zip(Gz, ss, hs)]
            rd = GT_of(ys) + cvec
            gap = sum(float(np.sum(S * Y)) for S, Y in zip(ss, ys))
            mu = gap / nu
            pres = np.sqrt(sum(np.sum(r * r) for r in rp)) / hnorm
            dres = np.linalg.norm(rd)
            if stop_at is not None:
                usage = float(a @ z[:nv] + b0) / (box * dim)
                tc = self._certified(Gs[:n_psd], hs[:n_psd], cp.scales, z) / max(1.0, usage)
                if tc > best[0]:
                    best = (tc, z.copy())
                if tc >= stop_at:
                    return "Solved", z[:nv], float(tc)
            log.debug("ipm it=%d t=%.6e pres=%.1e dres=%.1e gap=%.1e", it, z[-1], pres, dres, gap)
            if pres < self.tol and dres < self.tol and gap < self.tol * (1.0 + abs(z[-1])):
                status = "Solved"
                break
            if pres < 1e-7 and dres < 1e-6 and gap < 1e-10 * (1.0 + abs(z[-1])):
                status = "AlmostSolved"
                break
            try:
                R, Rinv, lam = zip(*(self._nt(S, Y) for S, Y in zip(ss, ys)))
            except np.linalg.LinAlgError:
                status = "NumericalError"
                break
            M = np.zeros((nz, nz))
            for G, Ri, (iu, ju), w in zip(Gs, Rinv, tri, wts):
                Gh = np.matmul(np.matmul(Ri, G), Ri.T)
                F = Gh[:, iu, ju] * w
                M += F @ F.T
            dsc = 1.0 / np.sqrt(np.maximum(np.diag(M), 1e-300))
            Ms = dsc[:, None] * M * dsc[None, :]
            Ms[np.diag_indices(nz)] += 1e-14
            try:
                cfac = sla.cho_factor(Ms, lower=True, check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                status = "NumericalError"
                break

            def msolve(r, cfac=cfac, dsc=dsc):
                return dsc * sla.cho_solve(cfac, dsc * r, check_finite=False)

            def hinv(X, Ri):
                return Ri.T @ (Ri @ X @ Ri.T) @ Ri

            def newton(rc):
                tmp = [hinv(c_ + r_, Ri) for c_, r_, Ri in zip(rc, rp, Rinv)]
                dz = msolve(-rd - GT_of(tmp))
                Gdz = G_of(dz)
                dy = [t_ + hinv(g_, Ri) for t_, g_, Ri in zip(tmp, Gdz, Rinv)]
                # one refinement step on the dual equation G^T dy = -rd
                corr = msolve(-rd - GT_of(dy))
                Gc = G_of(corr)
                dz = dz + corr
                Gdz = [a_ + b_ for a_, b_ in zip(Gdz, Gc)]
                dy = [d_ + hinv(g_, Ri) for d_, g_, Ri in zip(dy, Gc, Rinv)]
                ds = [-r_ - g_ for r_, g_ in zip(rp, Gdz)]
                return dz, ds, dy

            def scaled(ds, dy):
                return ([Ri @ d @ Ri.T for Ri, d in zip(Rinv, ds)],
                        [Rk.T @ d @ Rk for Rk, d in zip(R, dy)])

            def max_step(dsh, dyh):
                amax = np.inf
                for l, d1, d2 in zip(lam, dsh, dyh):
                    isq = 1.0 / np.sqrt(l)
                    for d in (d1, d2):
                        e = np.linalg.eigvalsh(isq[:, None] * d * isq[None, :]).min()
                        if e < 0:
                            amax = min(amax, -1.0 / e)
                return amax

            dz, ds, dy = newton([-S for S in ss])
            dsh, dyh = scaled(ds, dy)
            aa = min(1.0, max_step(dsh, dyh))
            gap_a = sum(float(np.sum((S + aa * d1) * (Y + aa * d2))) for S, Y, d1, d2 in zip(ss, ys, ds, dy))
            sigma = min(1.0, max(0.0, gap_a / gap)) ** 3
            rc = []
            for Rk, l, d1, d2 in zip(R, lam, dsh, dyh):
                X = sigma * mu * np.eye(l.size) - np.diag(l * l) - 0.5 * (d1 @ d2 + d2 @ d1)
                U = X / (0.5 * (l[:, None] + l[None, :]))
                rc.append(Rk @ U @ Rk.T)
            dz, ds, dy = newton(rc)
            dsh, dyh = scaled(ds, dy)
            alpha = min(1.0, self.step * max_step(dsh, dyh))
            z = z + alpha * dz
            ss = [S + alpha * d for S, d in zip(ss, ds)]
            ys = [Y + alpha * d for Y, d in zip(ys, dy)]
            ss = [0.5 * (S + S.T) for S in ss]
            ys = [0.5 * (Y + Y.T) for Y in ys]
            if not np.all(np.isfinite(z)):
                status = "NumericalError"
                break
        else:
            if pres < 1e-6 and dres < 1e-6 and gap < 1e-6 * (1.0 + abs(z[-1])):
                status = "AlmostSolved"
        if stop_at is not None and status not in _SOLVED and np.isfinite(best[0]) and best[0] >= stop_at:
            return "Solved", best[1][:nv], float(best[0])
        return status, z[:nv], float(z[-1])

    @staticmethod
    def _nt(S, Y):
        """Scaling ``R`` with ``R^-1 S R^-T = R^T Y R = diag(lam)``."""
        Ls = np.linalg.cholesky(S)
        Ly = np.linalg.cholesky(Y)
        U, lam, Vt = np.linalg.svd(Ly.T @ Ls)
        if lam.min() <= 0:
            raise np.linalg.LinAlgError("scaling point left the cone")
        isq = 1.0 / np.sqrt(lam)
        R = (Ls @ Vt.T) * isq[None, :]
        Rinv = isq[:, None] * (U.T @ Ly.T)
        return R, Rinv, lam

    @staticmethod
    def _certified(Gs, hs, scales, z):
        x = z[:-1]
        worst = np.inf
        for G, h, s in zip(Gs, hs, scales):
            C = np.tensordot(x, G[:-1], axes=1) - h
            worst = min(worst, -np.linalg.eigvalsh(C).max() / s)
        return worst


_BACKENDS = {"ipm": IpmBackend, "clarabel": ClarabelBackend, "barrier": BarrierBackend}


IPM_MAX_WORK = 4e7  # nvars * sum(p^2) above which the dense Schur backend is skipped


def get_backend(backend=None):
    if backend is None or backend == "auto":
        return None
    if isinstance(backend, str):
        if backend not in _BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; choose from {sorted(_BACKENDS)} or 'auto'")
        return _BACKENDS[backend]()
    return backend


def _auto_chain(cp: _Compiled):
    work = cp.nvars * sum(p * p for p in cp.sizes)
    if work <= IPM_MAX_WORK:
        return [IpmBackend(), ClarabelBackend()]
    return [ClarabelBackend()]


def solve(prob: LmiProblem, objective: str = "margin", backend=None, box=None) -> SolveOutcome:
    """Decide strict feasibility of ``prob``; see the module docstring for the verdict rules.

    ``objective="margin"`` maximises the normalised margin; ``"none"`` asks
    only for a point meeting the required margin ``prob.margin``. With the
    default ``backend=None`` the dense interior-point backend is used for
    moderate sizes and the sparse conic backend for large problems (and as a
    second opinion when the first reports a numerical failure).
    """
    t_start = time.perf_counter()
    be = get_backend(backend)
    if not prob.constraints:
        return SolveOutcome(FEASIBLE, prob.unpack(np.zeros(prob.nvars)), np.inf,
                            be.name if be else "auto")
    cp = compile_problem(prob)
    chain = [be] if be is not None else _auto_chain(cp)
    out = None
    for b in chain:
        out = _solve_with(b, prob, cp, objective, box)
        if out.status != NUMERICAL:
            break
        log.info("backend %s reported numerical failure on %s", b.name, prob.name)
    out.seconds = time.perf_counter() - t_start
    return out


def _solve_with(be, prob: LmiProblem, cp: _Compiled, objective: str, box) -> SolveOutcome:
    if getattr(be, "margin_only", False):
        objective = "margin"
    early = getattr(be, "early_stop", False)
    delta = prob.margin
    base_box = box if box is not None else (1.0 if cp.homogeneous else NONHOMOGENEOUS_BOX)
    last = None
    for attempt, scale in enumerate(RETRY_SCALES, start=1):
        info = {"solver_status": None, "box": base_box * scale}
        # homogeneous problems scale with the box, so margins are read at the base box
        norm = scale if cp.homogeneous else 1.0
        if early:
            stop = 2.0 * delta * norm if objective != "margin" else None
            status, x, t = be.run(cp, base_box * scale, None, stop_at=stop)
        else:
            status, x, t = be.run(cp, base_box * scale, None if objective == "margin" else delta * norm)
        info["solver_status"] = status
        if not np.all(np.isfinite(x)):
            last = (status, x, t, [])
            continue
        t = t / norm
        values = prob.unpack(x)
        viol = recheck(prob, values)
        # the independent check is applied after rescaling the point into the base budget
        usage = max(1.0, budget_usage(cp, x, base_box))
        ok = bool(viol) and max(viol) / usage <= -0.5 * delta
        if ok and t >= delta * (1.0 - 1e-9):
            return SolveOutcome(FEASIBLE, values, float(-max(viol) / usage), be.name, viol, attempt, 0.0, info)
        if (objective == "margin" or early) and status in _SOLVED and t < delta:
            return SolveOutcome(INFEASIBLE, values, float(t), be.name, viol, attempt, 0.0, info)
        if objective != "margin" and status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return SolveOutcome(INFEASIBLE, values, float("nan"), be.name, viol, attempt, 0.0, info)
        last = (status, x, t, viol)
    status, x, t, viol = last
    vals = prob.unpack(np.nan_to_num(x))
    return SolveOutcome(NUMERICAL, vals, float(t), be.name, viol, len(RETRY_SCALES), 0.0,
                        {"solver_status": status})


# -- searches ----------------------------------------------------------------

class NoFeasibleBracket(RuntimeError):
    pass


@dataclass
class MsiResult:
    h_bar: float
    tol: float
    evaluations: dict
    non_monotone: list
    indeterminate: list
    capped: bool = False

    def __float__(self):
        return float(self.h_bar)


def msi_bisect(feasible_at: Callable, bracket, tol: float = 0.01, h_lo: float = None,
               max_expand: int = 12, h_cap: float = 1e3, guess: float = None) -> MsiResult:
    """Largest verified-feasible ``h`` found by bisection, with ``h + tol`` infeasible.

    ``feasible_at(h)`` may return a bool or a ``SolveOutcome``. Calls are
    memoised. Without ``guess`` the start ``a`` is checked first and ``b`` is
    doubled while feasible (up to ``h_cap``). With ``guess`` the search starts
    there and walks up or down in steps ``4 tol, 8 tol, ...`` until the
    boundary is bracketed, so a good guess needs only a handful of probes;
    reaching an infeasible ``a`` still raises ``NoFeasibleBracket``.
    Feasibility is not assumed monotone: after the bisection the candidate is
    advanced in steps of ``tol`` while feasible and each such step is logged.
    """
    a, b = float(bracket[0]), float(bracket[1])
    if not b > a:
        raise ValueError("bracket must satisfy b > a")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if h_lo is not None and a < h_lo:
        raise ValueError("bracket start must not be below h_lo")
    evals, indeterminate = {}, []

    def ok(h):
        key = round(h, 10)
        if key not in evals:
            r = feasible_at(h)
            if isinstance(r, SolveOutcome):
                if r.status == NUMERICAL:
                    indeterminate.append(h)
                r = r.feasible
            evals[key] = bool(r)
            log.debug("msi probe h=%.6g -> %s", h, evals[key])
        return evals[key]

    def no_bracket():
        raise NoFeasibleBracket(f"no feasible bracket: infeasible at h={a:g}")

    capped = False
    if guess is None:
        if not ok(a):
            no_bracket()
        expand = 0
        while ok(b):
            a = b
            if b >= h_cap or expand >= max_expand:
                capped = True
                break
            b = min(2.0 * b, h_cap)
            expand += 1
        lo, hi = a, b
    else:
        g = min(max(float(guess), a), h_cap)
        step = 4.0 * tol
        if ok(g):
            lo, hi = g, min(g + step, h_cap)
            expand = 0
            while ok(hi):
                lo = hi
                if hi >= h_cap or expand >= max_expand:
                    capped = True
                    break
                step *= 2.0
                hi = min(lo + step, h_cap)
                expand += 1
        else:
            hi, lo = g, g - step
            while lo > a and not ok(lo):
                hi = lo
                step *= 2.0
                lo = hi - step
            if lo <= a:
                lo = a
                if not ok(a):
                    no_bracket()
    if not capped:
        while hi - lo > tol * (1.0 + 1e-9):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
    non_monotone = []
    while not capped and lo + tol <= h_cap and ok(lo + tol):
        non_monotone.append(lo + tol)
        log.warning("non-monotone feasibility: h=%.6g feasible above bisection point", lo + tol)
        lo = lo + tol
    return MsiResult(lo, tol, evals, non_monotone, indeterminate, capped)


def vertex_solve(builder: Callable, bounds, objective: str = "margin", backend=None, **kwargs) -> SolveOutcome:
    """Solve one joint problem over every corner of the delay/sampling box."""
    prob = builder(vertices=bounds.vertices(), **kwargs)
    return solve(prob, objective=objective, backend=backend)


def vertex_feasible(builder: Callable, bounds, **kwargs) -> bool:
    return vertex_solve(builder, bounds, **kwargs).feasible


def interior_check(prob_builder: Callable, values: dict, bounds, samples: int = 10, rng=None) -> float:
    """Evaluate the conditions at random interior ``(h, d)`` with fixed variables; return worst scaled eigenvalue."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = -np.inf
    for _ in range(samples):
        h = rng.uniform(bounds.h_lo, bounds.h_hi)
        d = rng.uniform(bounds.d_lo, bounds.d_hi)
        prob = prob_builder(vertices=[(h, d)])
        vals = {k: values[k] for k in prob.variables}
        worst = max(worst, max(prob.max_violation(vals)))
    return worst
