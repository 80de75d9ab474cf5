"""Brute-force numerical validators for the block algebra behind the LMI conditions.

Three independent checks are provided:

* ``decomposition_identity``: every data-based LMI, Schur-complemented and
  pressed against the stacked factor built from a concrete plant, must
  reproduce the model-based quadratic form plus the S-procedure multiplier
  term evaluated at that plant.
* ``functional_derivative_check``: the time derivative of the Lyapunov and
  looped functionals along a polynomial trajectory, by finite differences
  and quadrature, against the quadratic form in ``xi(t)`` built from the
  assembled blocks.
* ``integral_inequality_check``: the Wirtinger-type integral bound on random
  cubic trajectories.

Each check accepts the rejected block readings as negative controls, which
must produce large errors.
"""
from __future__ import annotations

import numpy as np

from .lmi import (PD_NAMES, Variant, assemble_blocks, e_matrix, theorem1_lmis, theorem2_lmis,
                  theorem3_lmis, theorem4_lmis, theorem5_lmis, theorem6_lmis, var_shapes)
from .datarep import Qmi
from .sysmodel import make_selector_basis

RAW = Variant(congruence=False)
GL_NODES = 8
IDENTITY_TOL = 1e-9
DERIVATIVE_TOL = 1e-6
INEQUALITY_TOL = 1e-10
CONTROL_MIN = 1e-3
DECOMPOSITION_CONTROLS = ("psi_without_gain", "psi_hat_without_gain", "d2_transposed_f")
DERIVATIVE_CONTROLS = ("pi2_uses_l4", "t_unscaled")


# -- helpers -----------------------------------------------------------------

def _rand_pd(rng, n, lo=0.5):
    X = rng.standard_normal((n, n))
    return X @ X.T / n + lo * np.eye(n)


def _rand_sym(rng, n):
    X = rng.standard_normal((n, n))
    return 0.5 * (X + X.T)


def random_variables(rng, n: int) -> dict:
    """Random values for the functional and slack matrices (positive definite where required)."""
    out = {}
    for name, (r, c, s) in var_shapes(n).items():
        if name in PD_NAMES:
            out[name] = _rand_pd(rng, r)
        elif s:
            out[name] = _rand_sym(rng, r)
        else:
            out[name] = rng.standard_normal((r, c))
    return out


def schur_head(M: np.ndarray, k: int) -> np.ndarray:
    """``M11 - M12 M22^{-1} M21`` for the leading ``k x k`` block."""
    if k == M.shape[0]:
        return M
    M11, M12, M22 = M[:k, :k], M[:k, k:], M[k:, k:]
    return M11 - M12 @ np.linalg.solve(M22, M12.T)


def _rel(a, b) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / max(scale, 1.0)) if scale >= 1.0 else float(np.linalg.norm(a - b))


def _lmi_pair(prob, values):
    mats = prob.evaluate(values)
    names = [c.name for c in prob.constraints]
    return [M for c, M in zip(names, mats) if c.startswith("LMI")]


# -- decomposition identities ------------------------------------------------

def decomposition_identity(theorem: int, rng: np.random.Generator, n: int = 2, m: int = 1,
                           h: float = 0.3, d: float = 0.1, sigma1: float = 0.3, sigma2: float = 0.2,
                           zero_plant: bool = False, control: str = None) -> float:
    """Largest relative error of the factorisation identity over both vertex LMIs.

    A plant ``(A, B)``, gain, multiplier and data matrix are drawn at random.
    The data-based LMI of ``theorem`` (2..6) is evaluated, Schur-complemented
    onto its leading blocks and multiplied by the stacked factor of the
    plant. The result must equal the model-based form of the same vertex
    plus ``eps`` times the data quadratic form at the plant. ``theorem=1``
    checks the model-based LMI against an explicit rebuild of its blocks.
    ``control`` names a rejected reading to substitute (negative control);
    readings that cannot be assembled return ``inf``.
    """
    if control is not None and control not in DECOMPOSITION_CONTROLS:
        raise ValueError(f"unknown control {control!r}")
    basis = make_selector_basis(n)
    L = basis.L
    A = np.zeros((n, n)) if zero_plant else rng.standard_normal((n, n))
    B = np.zeros((n, m)) if zero_plant else rng.standard_normal((n, m))
    K = np.zeros((m, n)) if zero_plant else rng.standard_normal((m, n))
    vals = random_variables(rng, n)
    eps = float(rng.uniform(0.5, 2.0))
    vx = [(h, d)]
    AB = np.hstack([A, B])

    def model(Am, Bm, Km, F):
        pr = theorem1_lmis(basis, Am, Bm, Km, sigma1, sigma2, vx, variant=RAW)
        return [schur_head(M, 10 * n) for M in _lmi_pair(pr, dict(vals, F=F))]

    if theorem == 1:
        pr = theorem1_lmis(basis, A, B, K, sigma1, sigma2, vx, variant=RAW)
        got = [schur_head(M, 10 * n) for M in _lmi_pair(pr, vals)]
        blk = assemble_blocks(basis, vals, h, d, sigma1, sigma2, A=A, B=B, K=K, variant=RAW)
        core = _ev(blk["Xi0"]) + _ev(blk["Psi"]) + _ev(blk["O"])
        NTN = d * _ev(blk["N"]) @ np.linalg.solve(_ev(blk["Tcal"]), _ev(blk["N"]).T) if d > 0 else 0.0
        MRM = h * _ev(blk["Mcal"]) @ np.linalg.solve(_ev(blk["Rcal"]), _ev(blk["Mcal"]).T)
        want = [core + h * _ev(blk["Xia"]) - NTN, core + h * _ev(blk["Xib"]) - NTN - MRM]
        return max(_rel(g, w) for g, w in zip(got, want))

    if theorem == 2:
        Th = _rand_sym(rng, 2 * n + m)
        pr = theorem2_lmis(basis, Qmi(Th, n, n + m, "dual"), K, sigma1, sigma2, vx, variant=RAW)
        Thd = pr.parameters["Theta_dual"]
        F = vals["F"]
        W = np.vstack([A @ L(1) + B @ K @ L(10), np.eye(10 * n)])
        Lam = np.vstack([AB, np.eye(n + m)]) @ np.vstack([L(1), K @ L(10)])
        extra = eps * Lam.T @ Thd @ Lam
        head, lhs = n, model(A, B, K, F)
        values = dict(vals, eps=eps)
        fix = None
        if control == "psi_without_gain":
            fix = ("core", _sym(F @ B @ (K - _pad(m, n)) @ L(10)))
    elif theorem == 3:
        Th = _rand_sym(rng, 2 * n)
        pr = theorem3_lmis(basis, Qmi(Th, n, n, "dual"), B, K, sigma1, sigma2, vx, variant=RAW)
        Thd = pr.parameters["Theta_dual"]
        F = vals["F"]
        W = np.vstack([A @ L(1), np.eye(10 * n)])
        Lam = np.vstack([A, np.eye(n)]) @ L(1)
        extra = eps * Lam.T @ Thd @ Lam
        head, lhs = n, model(A, B, K, F)
        values = dict(vals, eps=eps)
        fix = None
        if control == "psi_hat_without_gain":
            fix = ("core", _sym(F @ B @ (_pad(m, n) - K) @ L(10)))
    elif theorem == 4:
        if control == "d2_transposed_f":
            return _transposed_d2(vals["F"], n, m)
        Th = _rand_sym(rng, 2 * n + m)
        F = vals["F"]
        pr = theorem4_lmis(basis, Qmi(Th, n + m, n), F, sigma1, sigma2, vx, m=m, variant=RAW)
        Ths = pr.parameters["Theta"]
        W = np.vstack([AB.T @ F.T, np.eye(10 * n)])
        Phi = np.vstack([AB.T, np.eye(n)]) @ F.T
        extra = eps * Phi.T @ Ths @ Phi
        head, lhs = n + m, model(A, B, K, F)
        values = dict({k: v for k, v in vals.items() if k != "F"}, eps=eps, K=K)
        fix = None
    elif theorem in (5, 6):
        slack = float(rng.uniform(0.3, 3.0))
        E = e_matrix(basis, slack)
        G = rng.standard_normal((n, n)) + 2.0 * np.eye(n)
        Kc = K @ G
        Gi = np.linalg.inv(G)
        base = {k: v for k, v in vals.items() if k != "F"}
        if theorem == 5:
            if control == "d2_transposed_f":
                return _transposed_d2(E, n, m)
            Th = _rand_sym(rng, 2 * n + m)
            pr = theorem5_lmis(basis, Qmi(Th, n + m, n), slack, sigma1, sigma2, vx, m=m, variant=RAW)
            W = np.vstack([AB.T @ E.T, np.eye(10 * n)])
            Phi = np.vstack([AB.T, np.eye(n)]) @ E.T
            head = n + m
        else:
            Th = _rand_sym(rng, 2 * n)
            pr = theorem6_lmis(basis, Qmi(Th, n, n), B, slack, sigma1, sigma2, vx, variant=RAW)
            W = np.vstack([A.T @ E.T, np.eye(10 * n)])
            Phi = np.vstack([A.T, np.eye(n)]) @ E.T
            head = n
        Ths = pr.parameters["Theta"]
        extra = eps * Phi.T @ Ths @ Phi
        lhs = model(Gi @ A @ G, Gi @ B, Kc, E @ G)
        values = dict(base, eps=eps, G=G, Kc=Kc)
        fix = None
    else:
        raise ValueError(f"theorem must be 1..6, got {theorem}")

    rhs = [W.T @ schur_head(M, head + 10 * n) @ W for M in _lmi_pair(pr, values)]
    if fix is not None and fix[0] == "core":
        rhs = [r + fix[1] for r in rhs]
    return max(_rel(r, l + extra) for r, l in zip(rhs, lhs))


def _pad(m, n):
    """The gain-free reading replaces ``K`` by the identity-like selector."""
    P = np.zeros((m, n))
    P[:, :min(m, n)] = np.eye(m, min(m, n))
    return P


def _sym(X):
    return X + X.T


def _ev(x):
    return x.evaluate({}) if hasattr(x, "evaluate") else np.asarray(x)


def _transposed_d2(F, n, m) -> float:
    """Try to assemble ``D2 = [0, 0, F^T]``; return ``inf`` when the shapes cannot match."""
    D2 = np.hstack([np.zeros((F.shape[1], n + m)), F.T])
    if D2.shape != (F.shape[0], 2 * n + m):
        return float("inf")
    raise AssertionError("the transposed reading unexpectedly has consistent shapes")


# -- functional derivative ---------------------------------------------------

class PolyTrajectory:
    """``x(t) = sum_k c_k t^k`` with vector coefficients ``c_k`` (rows of ``coef``)."""

    def __init__(self, coef):
        self.coef = np.atleast_2d(np.asarray(coef, dtype=float))

    def __call__(self, t):
        return sum(c * t ** k for k, c in enumerate(self.coef))

    def dot(self, t):
        return sum(k * c * t ** (k - 1) for k, c in enumerate(self.coef) if k > 0) \
            if len(self.coef) > 1 else 0.0 * self.coef[0]


def gauss_legendre(f, a: float, b: float, panels: int = 1, nodes: int = GL_NODES):
    """Composite Gauss-Legendre rule for a vector- or matrix-valued ``f`` on ``[a, b]``."""
    if b == a:
        return 0.0 * np.asarray(f(a))
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        half, mid = 0.5 * (hi - lo), 0.5 * (hi + lo)
        for x, w in zip(xg, wg):
            total = total + w * half * np.asarray(f(mid + half * x))
    return total


def _xi(traj, t, d, tau, anchor):
    x = traj
    mean_d = gauss_legendre(x, t - d, t) / d if d > 0 else x(t)
    mean1 = gauss_legendre(x, tau, t) / (t - tau)
    mean2 = gauss_legendre(x, tau - d, t - d) / (t - tau)
    return np.concatenate([x(t), x(t - d), x.dot(t), x.dot(t - d), mean_d, x(tau), x(tau - d),
                           mean1, mean2, anchor])


def _functional(traj, v, t, d, tau, h):
    x, xd = traj, traj.dot
    P, Z, T, R1, R2, S = (v[k] for k in ("P", "Z", "T", "R1", "R2", "S"))
    chi = np.concatenate([x(t), x(t - d), gauss_legendre(x, t - d, t)])
    Va = chi @ P @ chi
    phi_q = lambda s: np.concatenate([x(s), xd(s)]) @ Z @ np.concatenate([x(s), xd(s)])
    Va += gauss_legendre(phi_q, t - d, t)
    q_T = lambda u: xd(u) @ T @ xd(u)
    Va += gauss_legendre(lambda s: gauss_legendre(q_T, s, t), t - d, t)
    chi_j = np.concatenate([x(tau), x(tau - d)])
    Vl = (tau + h - t) * (t - tau) * chi_j @ S @ chi_j
    Vl += (tau + h - t) * gauss_legendre(lambda s: xd(s) @ R1 @ xd(s), tau, t)
    Vl += (tau + h - t) * gauss_legendre(lambda s: xd(s) @ R2 @ xd(s), tau - d, t - d)
    return float(Va + Vl)


def functional_derivative_check(rng: np.random.Generator, n: int = 2, h: float = 0.4, d: float = 0.15,
                                degree: int = 4, values: dict = None, coef=None,
                                variant: Variant = None, samples: int = 3) -> float:
    """Relative mismatch between the derivative of the functional and its quadratic-form expression.

    The derivative is taken by a five-point centred difference at a few
    points inside ``(tau_j, tau_j + h)``. The expression is
    ``xi^T [Xi0 + (tau_{j+1} - t) Xia + (t - tau_j) Xib] xi`` minus the three
    integral remainders, with ``Xi0``, ``Xia``, ``Xib`` taken from the block
    assembly (slack matrices set to zero).
    """
    variant = variant or Variant()
    basis = make_selector_basis(n)
    v = dict(values) if values is not None else random_variables(rng, n)
    for k in ("N", "M1", "M2"):
        v[k] = np.zeros_like(v[k]) if k in v else np.zeros((10 * n, 2 * n))
    v["Omega"] = np.zeros((n, n))
    coef = rng.standard_normal((degree + 1, n)) if coef is None else coef
    traj = PolyTrajectory(coef)
    tau = float(rng.uniform(0.2, 0.6))
    anchor = rng.standard_normal(n)
    blk = assemble_blocks(basis, v, h, d, 0.0, 0.0, variant=variant)
    Xi0, Xia, Xib = (_ev(blk[k]) for k in ("Xi0", "Xia", "Xib"))
    T, R1, R2 = v["T"], v["R1"], v["R2"]
    worst = 0.0
    step = 1e-3 * h
    for t in tau + h * np.linspace(0.2, 0.8, samples):
        xi = _xi(traj, t, d, tau, anchor)
        form = xi @ (Xi0 + (tau + h - t) * Xia + (t - tau) * Xib) @ xi
        form -= gauss_legendre(lambda s: traj.dot(s) @ T @ traj.dot(s), t - d, t)
        form -= gauss_legendre(lambda s: traj.dot(s) @ R1 @ traj.dot(s), tau, t)
        form -= gauss_legendre(lambda s: traj.dot(s) @ R2 @ traj.dot(s), tau - d, t - d)
        Vs = [_functional(traj, v, t + k * step, d, tau, h) for k in (-2, -1, 1, 2)]
        fd = (Vs[0] - 8 * Vs[1] + 8 * Vs[2] - Vs[3]) / (12 * step)
        scale = 1.0 + abs(form) + abs(fd)
        worst = max(worst, abs(fd - form) / scale)
    return float(worst)


def derivative_control(name: str) -> Variant:
    """Block variant corresponding to a rejected reading of the functional derivative."""
    if name == "pi2_uses_l4":
        return Variant(pi2_block=4)
    if name == "t_unscaled":
        return Variant(t_scaled=False)
    raise ValueError(f"unknown control {name!r}")


# -- integral inequality -----------------------------------------------------

def integral_inequality_check(rng: np.random.Generator, n: int = 2, m: int = 6, alpha: float = None,
                              beta: float = None, R=None, N=None, coef=None, vartheta=None) -> float:
    """Return ``RHS - LHS`` of the integral bound (non-negative when it holds).

    LHS is ``-int_alpha^beta xdot^T R xdot``; RHS is
    ``(beta - alpha) theta^T N diag(R, 3R)^{-1} N^T theta + 2 theta^T N Pi``.
    """
    alpha = float(rng.uniform(-1.0, 1.0)) if alpha is None else float(alpha)
    beta = alpha + float(rng.uniform(0.05, 2.0)) if beta is None else float(beta)
    if not beta > alpha:
        raise ValueError("need beta > alpha")
    R = _rand_pd(rng, n, lo=0.1) if R is None else np.asarray(R, dtype=float)
    N = rng.standard_normal((m, 2 * n)) if N is None else np.asarray(N, dtype=float)
    coef = rng.standard_normal((4, n)) if coef is None else coef
    th = rng.standard_normal(N.shape[0]) if vartheta is None else np.asarray(vartheta, dtype=float)
    traj = PolyTrajectory(coef)
    lhs = -gauss_legendre(lambda s: traj.dot(s) @ R @ traj.dot(s), alpha, beta)
    Pi = wirtinger_vector(traj, alpha, beta)
    Rcal = np.block([[R, np.zeros_like(R)], [np.zeros_like(R), 3.0 * R]])
    rhs = (beta - alpha) * th @ N @ np.linalg.solve(Rcal, N.T @ th) + 2.0 * th @ N @ Pi
    return float(rhs - lhs)


def wirtinger_vector(traj, alpha, beta):
    xa, xb = traj(alpha), traj(beta)
    mean = gauss_legendre(traj, alpha, beta) / (beta - alpha)
    return np.concatenate([xb - xa, xb + xa - 2.0 * mean])


def tight_multiplier(traj, R, alpha, beta, vartheta):
    """``N`` minimising the right-hand side for the given ``vartheta``."""
    Pi = wirtinger_vector(traj, alpha, beta)
    n = R.shape[0]
    Rcal = np.block([[R, np.zeros((n, n))], [np.zeros((n, n)), 3.0 * R]])
    th = np.asarray(vartheta, dtype=float)
    return -np.outer(th, Rcal @ Pi) / ((beta - alpha) * (th @ th))


# -- suites ------------------------------------------------------------------

def run_suite(seed: int = 0, draws: int = 100, inequality_draws: int = 500) -> dict:
    """Run every oracle and negative control; return a summary dictionary."""
    rng = np.random.default_rng(seed)
    out = {"decomposition": {}, "controls": {}}
    for thm in range(1, 7):
        out["decomposition"][thm] = max(decomposition_identity(thm, rng) for _ in range(draws))
    out["controls"]["psi_without_gain"] = max(
        decomposition_identity(2, rng, control="psi_without_gain") for _ in range(5))
    out["controls"]["psi_hat_without_gain"] = max(
        decomposition_identity(3, rng, control="psi_hat_without_gain") for _ in range(5))
    out["controls"]["d2_transposed_f"] = decomposition_identity(4, rng, control="d2_transposed_f")
    out["derivative"] = max(functional_derivative_check(rng) for _ in range(10))
    for name in DERIVATIVE_CONTROLS:
        out["controls"][name] = max(functional_derivative_check(rng, d=0.3, degree=3,
                                                                variant=derivative_control(name))
                                    for _ in range(5))
    out["inequality_min_margin"] = min(integral_inequality_check(rng) for _ in range(inequality_draws))
    out["checks"] = suite_checks(out)
    out["passed"] = all(out["checks"].values())
    return out


def suite_checks(out: dict) -> dict:
    """Pass/fail of every oracle and control in a ``run_suite`` summary."""
    checks = {f"decomposition_{t}": err <= IDENTITY_TOL for t, err in out["decomposition"].items()}
    checks["derivative"] = out["derivative"] <= DERIVATIVE_TOL
    checks["inequality"] = out["inequality_min_margin"] >= -INEQUALITY_TOL
    for name, err in out["controls"].items():
        checks[f"control_{name}"] = err > CONTROL_MIN
    return checks
