"""Experiment data, noise bounds and the quadratic-matrix-inequality descriptions of
all plants consistent with noisy data."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .sysmodel import LtiSystem

MEMBERSHIP_TOL = 1e-8
DUAL_COND_MAX = 1e12


@dataclass(frozen=True)
class NoiseBound:
    """Noise set ``{W : [W^T; I]^T [[Qd, Sd], [Sd^T, Rd]] [W^T; I] >= 0}``."""

    Qd: np.ndarray
    Sd: np.ndarray
    Rd: np.ndarray

    def __post_init__(self):
        if np.linalg.eigvalsh(0.5 * (self.Qd + self.Qd.T)).max() >= 0:
            raise ValueError("Qd must be negative definite")

    @property
    def rho(self) -> int:
        return self.Qd.shape[0]

    @property
    def n_w(self) -> int:
        return self.Rd.shape[0]

    def quad(self, W) -> np.ndarray:
        W = np.atleast_2d(W)
        return W @ self.Qd @ W.T + W @ self.Sd + self.Sd.T @ W.T + self.Rd

    def contains(self, W, tol: float = MEMBERSHIP_TOL) -> bool:
        val = self.quad(W)
        scale = 1.0 + max(np.abs(self.Rd).max(), 1.0)
        return float(np.linalg.eigvalsh(0.5 * (val + val.T)).min()) >= -tol * scale


def interval_noise_bound(wbar: float, rho: int, n_w: int) -> NoiseBound:
    """Bound for noise samples with entries in ``[-wbar, wbar]``: ``W W^T <= wbar^2 rho I``."""
    if wbar < 0 or rho < 1:
        raise ValueError("need wbar >= 0 and rho >= 1")
    return NoiseBound(-np.eye(rho), np.zeros((rho, n_w)), wbar ** 2 * rho * np.eye(n_w))


@dataclass(frozen=True)
class ExperimentData:
    Xdot: np.ndarray
    X: np.ndarray
    U: np.ndarray
    sample_times: np.ndarray
    Wtrue: Optional[np.ndarray] = None

    def __post_init__(self):
        rho = self.X.shape[1]
        if self.Xdot.shape != self.X.shape or self.U.shape[1] != rho or len(self.sample_times) != rho:
            raise ValueError("data matrices must have one column per sample")
        if self.Wtrue is not None and self.Wtrue.shape[1] != rho:
            raise ValueError("Wtrue must have one column per sample")

    @property
    def rho(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U.shape[0]

    def residual(self, sys: LtiSystem) -> float:
        """Relative mismatch against the generating plant (requires ``Wtrue``)."""
        if self.Wtrue is None:
            raise ValueError("residual needs the true noise sequence")
        res = self.Xdot - sys.A @ self.X - sys.B @ self.U - sys.Bw @ self.Wtrue
        return float(np.linalg.norm(res) / max(np.linalg.norm(self.Xdot), 1e-300))

    def without_noise(self) -> "ExperimentData":
        return ExperimentData(self.Xdot, self.X, self.U, self.sample_times)


@dataclass(frozen=True)
class Qmi:
    """Set ``{M : [Mt; I]^T Theta [Mt; I] >= 0}``, ``Mt`` of size ``p x q``.

    ``form="primal"`` means ``Mt`` is the transpose of the plant matrix
    (``[A B]^T`` or ``A^T``); ``form="dual"`` means ``Mt`` is the plant matrix itself.
    """

    Theta: np.ndarray
    p: int
    q: int
    form: str = "primal"

    def __post_init__(self):
        th = np.asarray(self.Theta, dtype=float)
        if th.shape != (self.p + self.q, self.p + self.q):
            raise ValueError(f"Theta shape {th.shape} does not match p={self.p}, q={self.q}")
        if not np.allclose(th, th.T, atol=1e-12 * max(1.0, np.abs(th).max())):
            raise ValueError("Theta must be symmetric")
        th = 0.5 * (th + th.T)
        th.setflags(write=False)
        object.__setattr__(self, "Theta", th)
        if self.form not in ("primal", "dual"):
            raise ValueError(f"unknown QMI form {self.form!r}")

    @property
    def Qc(self):
        return self.Theta[:self.p, :self.p]

    @property
    def Sc(self):
        return self.Theta[:self.p, self.p:]

    @property
    def Rc(self):
        return self.Theta[self.p:, self.p:]

    def quad(self, Mt) -> np.ndarray:
        Mt = np.atleast_2d(Mt)
        if Mt.shape != (self.p, self.q):
            raise ValueError(f"expected a {self.p}x{self.q} argument, got {Mt.shape}")
        stacked = np.vstack([Mt, np.eye(self.q)])
        val = stacked.T @ self.Theta @ stacked
        return 0.5 * (val + val.T)

    def min_eig(self, M) -> float:
        """Smallest eigenvalue of the quadratic form at plant matrix ``M``."""
        Mt = M.T if self.form == "primal" else M
        return float(np.linalg.eigvalsh(self.quad(Mt)).min())

    def contains(self, M, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.min_eig(M) >= -tol * (1.0 + np.linalg.norm(self.Theta, 2))

    def normalized(self) -> "Qmi":
        """Same set, with ``Theta`` scaled to unit spectral norm."""
        return Qmi(self.Theta / np.linalg.norm(self.Theta, 2), self.p, self.q, self.form)


def _theta(left, nb: NoiseBound, Bw, rhs):
    n = rhs.shape[0]
    outer = np.block([[-left, np.zeros((left.shape[0], Bw.shape[1]))], [rhs, Bw]])
    if outer.shape[1] != nb.rho + nb.n_w:
        raise ValueError("noise bound dimensions do not match the data")
    mid = np.block([[nb.Qd, nb.Sd], [nb.Sd.T, nb.Rd]])
    th = outer @ mid @ outer.T
    return Qmi(0.5 * (th + th.T), left.shape[0], n)


def build_theta_s(data: ExperimentData, nb: NoiseBound, Bw) -> Qmi:
    """QMI on ``[A B]`` for unknown ``A`` and ``B``."""
    Bw = np.atleast_2d(Bw)
    if Bw.shape[0] != data.n or Bw.shape[1] != nb.n_w or data.rho != nb.rho:
        raise ValueError("dimension mismatch between data, noise bound and Bw")
    Zc = np.vstack([data.X, data.U])
    return _theta(Zc, nb, Bw, data.Xdot)


def build_theta_bar_s(data: ExperimentData, nb: NoiseBound, B, Bw) -> Qmi:
    """QMI on ``A`` when ``B`` is known."""
    Bw = np.atleast_2d(Bw)
    B = np.asarray(B, dtype=float).reshape(data.n, -1)
    if Bw.shape[0] != data.n or Bw.shape[1] != nb.n_w or data.rho != nb.rho or B.shape[1] != data.m:
        raise ValueError("dimension mismatch between data, noise bound, B and Bw")
    return _theta(data.X, nb, Bw, data.Xdot - B @ data.U)


@dataclass(frozen=True)
class AssumptionReport:
    invertible: bool
    pos_eigs: int
    neg_eigs: int
    n_w: int

    @property
    def ok(self) -> bool:
        return self.invertible and self.pos_eigs == self.n_w

    def __str__(self):
        if not self.invertible:
            return "not invertible"
        status = "pass" if self.ok else "fail"
        return f"{status}: {self.pos_eigs} positive / {self.neg_eigs} negative eigenvalues (need {self.n_w} positive)"


def check_assumption(qmi: Qmi, n_w: int) -> AssumptionReport:
    eigs = np.linalg.eigvalsh(qmi.Theta)
    tol = 1e-9 * np.abs(eigs).max()
    zero = np.abs(eigs) <= tol
    return AssumptionReport(not zero.any(), int((eigs > tol).sum()), int((eigs < -tol).sum()), n_w)


def dualize(qmi: Qmi) -> Qmi:
    """Equivalent QMI in the opposite stacking, built from the partitioned inverse of Theta."""
    cond = np.linalg.cond(qmi.Theta)
    if not np.isfinite(cond) or cond > DUAL_COND_MAX:
        raise np.linalg.LinAlgError(f"Theta is too ill-conditioned to dualize (cond={cond:.2e})")
    inv = np.linalg.inv(qmi.Theta)
    inv = 0.5 * (inv + inv.T)
    p, q = qmi.p, qmi.q
    Qt, St, Rt = inv[:p, :p], inv[:p, p:], inv[p:, p:]
    dual = np.block([[-Rt, St.T], [St, -Qt]])
    return Qmi(dual, q, p, "dual" if qmi.form == "primal" else "primal")


def estimate_derivatives(X, U, T, abar: float, bbar: float):
    """Forward-difference state derivatives with their a-priori error bounds.

    Column ``i`` uses samples ``i`` and ``i+1``, so ``rho - 1`` estimates are returned.
    The input is assumed constant on each sampling interval.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    T = np.asarray(T, dtype=float)
    if X.shape[1] < 2:
        raise ValueError("need at least two samples")
    dt = np.diff(T)
    if np.any(dt <= 0):
        raise ValueError("sample times must be strictly increasing")
    est = np.diff(X, axis=1) / dt
    xn = np.linalg.norm(X[:, :-1], axis=0)
    un = np.linalg.norm(U[:, :-1], axis=0)
    bound = abar * dt / 2.0 * (abar * xn + (1.0 + abar * dt / 3.0) * bbar * un)
    return est, bound


# -- data generation -------------------------------------------------------

def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def uniform_policy(amplitude: float, dim: int, rng: np.random.Generator) -> Callable:
    """Piecewise-constant i.i.d. uniform signal on ``[-amplitude, amplitude]``."""
    def policy(i, t):
        return rng.uniform(-amplitude, amplitude, size=dim)
    return policy


def collect_data(sys: LtiSystem, input_policy: Callable, noise_policy: Callable,
                 schedule, x0=None, keep_noise: bool = True) -> ExperimentData:
    """Sample ``(xdot, x, u)`` at the instants in ``schedule``.

    ``input_policy(i, t)`` and ``noise_policy(i, t)`` give the values held on
    ``[T_i, T_{i+1})``. Between samples the state is propagated with classical
    RK4 at a step of one hundredth of the shortest interval.
    """
    T = np.asarray(schedule, dtype=float)
    if T.size == 0:
        raise ValueError("empty sampling schedule")
    if np.any(np.diff(T) <= 0):
        raise ValueError("schedule must be strictly increasing")
    n, m, nw = sys.n, sys.m, sys.n_w
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    base = np.diff(T).min() / 100.0 if T.size > 1 else 1.0
    X, Xd, U, W = (np.zeros((n, T.size)), np.zeros((n, T.size)),
                   np.zeros((m, T.size)), np.zeros((nw, T.size)))
    for i, t in enumerate(T):
        u = np.asarray(input_policy(i, t), dtype=float).reshape(m)
        w = np.asarray(noise_policy(i, t), dtype=float).reshape(nw)
        X[:, i], U[:, i], W[:, i] = x, u, w
        drift = sys.B @ u + sys.Bw @ w
        Xd[:, i] = sys.A @ x + drift
        if i + 1 < T.size:
            span = T[i + 1] - t
            steps = max(1, int(np.ceil(span / base - 1e-9)))
            dt = span / steps
            for _ in range(steps):
                x = rk4_step(lambda z: sys.A @ z + drift, x, dt)
                if not np.all(np.isfinite(x)):
                    raise FloatingPointError("state propagation diverged while collecting data")
    return ExperimentData(Xd, X, U, T, W if keep_noise else None)


def example1_schedule():
    """100 instants: unit spacing for the first 49 gaps, then spacing 2."""
    gaps = np.concatenate([np.ones(49), 2.0 * np.ones(50)])
    return np.concatenate([[0.0], np.cumsum(gaps)])


def pendulum_schedule(rho=50, dt=0.1):
    return dt * np.arange(rho)


def generate_data(sys: LtiSystem, schedule, wbar: float, rng: np.random.Generator,
                  x0=None, u_amp: float = 1.0) -> ExperimentData:
    """Uniform excitation on ``[-u_amp, u_amp]`` and uniform noise on ``[-wbar, wbar]``."""
    return collect_data(sys, uniform_policy(u_amp, sys.m, rng), uniform_policy(wbar, sys.n_w, rng),
                        schedule, x0=x0)


# -- CSV -------------------------------------------------------------------

def write_data_csv(data: ExperimentData, path) -> Path:
    path = Path(path)
    n, m = data.n, data.m
    header = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"xdot{i + 1}" for i in range(n)]
              + [f"u{i + 1}" for i in range(m)])
    cols = [data.sample_times[None, :], data.X, data.Xdot, data.U]
    if data.Wtrue is not None:
        header += [f"w{i + 1}" for i in range(data.Wtrue.shape[0])]
        cols.append(data.Wtrue)
    table = np.vstack(cols).T
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in table:
            wr.writerow([repr(float(v)) for v in row])
    return path


def read_data_csv(path) -> ExperimentData:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: missing header row")
    header, body = rows[0], np.array(rows[1:], dtype=float)

    def pick(prefix):
        idx = [i for i, h in enumerate(header) if h.startswith(prefix) and h[len(prefix):].isdigit()]
        return body[:, idx].T

    W = pick("w")
    return ExperimentData(pick("xdot"), pick("x"), pick("u"), body[:, 0], W if W.size else None)
