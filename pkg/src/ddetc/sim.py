"""Closed-loop simulation under the sampled dynamic event-trigger with a constant delay."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sysmodel import LtiSystem, TriggerConfig, validate_trigger_config

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e9


@dataclass(frozen=True)
class SimTrace:
    """Dense state record plus per-sample trigger bookkeeping.

    Per-sample arrays are indexed by the sampling grid ``s_j = j h`` (the
    instants ``tau_j - d``). ``eta[j]`` is the dynamic variable at ``s_j``,
    ``rho[j]`` the increment driving ``eta[j+1] = (1 - lam) eta[j] + rho[j]``.
    At a transmission the error is reset before ``rho`` is formed, so
    ``rho[j]`` is the value with ``e = 0``. ``f_c`` and ``f_t`` are the error
    and the threshold evaluated against the previous anchor, i.e. the
    quantities the trigger compares.
    """

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    sample_times: np.ndarray
    sample_index: np.ndarray
    transmit: np.ndarray
    eta: np.ndarray
    rho: np.ndarray
    f_c: np.ndarray
    f_t: np.ndarray
    arrivals: np.ndarray
    cfg: TriggerConfig
    diverged: bool = False
    d_used: float = 0.0
    dt: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def samples(self) -> int:
        return int(self.sample_times.size)

    @property
    def transmissions(self) -> int:
        return int(self.transmit.sum())

    @property
    def transmission_ratio(self) -> float:
        return self.transmissions / max(self.samples, 1)

    def eta_residual(self) -> float:
        """Largest ``|eta[j+1] - eta[j] + lam eta[j] - rho[j]|`` over the run."""
        if self.eta.size < 2:
            return 0.0
        lam = self.cfg.lam
        r = self.eta[1:] - self.eta[:-1] + lam * self.eta[:-1] - self.rho[:-1]
        return float(np.abs(r).max())


def _rk4(A, B, x, u, dt):
    bu = B @ u

    def f(z):
        return A @ z + bu

    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def snap_delay(d: float, dt: float) -> float:
    k = round(d / dt)
    snapped = k * dt
    if abs(snapped - d) > 1e-12 * max(1.0, d):
        log.warning("delay %.6g is not a multiple of the step %.6g; using %.6g", d, dt, snapped)
    return snapped


def simulate(sys: LtiSystem, K, cfg: TriggerConfig, x0, t_end: float, substeps: int = 20) -> SimTrace:
    """Integrate the event-triggered closed loop on ``[0, t_end]`` with step ``h / substeps``.

    The plant runs open loop until the first arrival ``t_0 = d``; the
    sample at time 0 is the first transmitted measurement. Afterwards each
    sample ``x(s_j)`` is tested with ``eta + theta rho < 0`` and, if
    transmitted, the gain is applied to it from ``s_j + d`` on.
    """
    validate_trigger_config(cfg)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    x = np.asarray(x0, dtype=float).reshape(-1).copy()
    n, m = sys.n, sys.m
    if K.shape != (m, n):
        raise ValueError(f"K must be {m}x{n}, got {K.shape}")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h = float(cfg.h)
    dt = h / substeps
    d = snap_delay(cfg.d, dt)
    if d >= h:
        raise ValueError("delay must be smaller than the sampling interval")
    shift = int(round(d / dt))
    nsteps = int(round(t_end / dt))
    Om = cfg.Omega
    s1, s2, th, lam = cfg.sigma1, cfg.sigma2, cfg.theta, cfg.lam

    ts = np.arange(nsteps + 1) * dt
    xs = np.zeros((nsteps + 1, n))
    us = np.zeros((nsteps + 1, m))
    xs[0] = x
    u = np.zeros(m)
    pending = None  # (arrival step, new input)
    anchor = None  # x(t_k - d)
    s_idx, s_t, flags, etas, rhos, fcs, fts, arrivals = [], [], [], [], [], [], [], []
    eta = float(cfg.eta0)
    diverged = False

    for k in range(nsteps + 1):
        if k % substeps == 0 and ts[k] < t_end - 1e-12 * max(1.0, t_end):
            xk = xs[k]
            if anchor is None:
                e = np.zeros(n)
                f_c = 0.0
                fire = True
                anchor_prev = xk
            else:
                e = anchor - xk
                f_c = float(e @ Om @ e)
                rho_pre = s1 * float(xk @ Om @ xk) - f_c + s2 * float(anchor @ Om @ anchor)
                fire = eta + th * rho_pre < 0
                anchor_prev = anchor
            f_t = (eta / th if th > 0 else np.inf) + s1 * float(xk @ Om @ xk) \
                + s2 * float(anchor_prev @ Om @ anchor_prev)
            if fire:
                anchor = xk.copy()
                pending = (k + shift, K @ anchor)
                arrivals.append(ts[k] + d)
            rho = s1 * float(xk @ Om @ xk) - float((anchor - xk) @ Om @ (anchor - xk)) \
                + s2 * float(anchor @ Om @ anchor)
            s_idx.append(k)
            s_t.append(ts[k])
            flags.append(bool(fire))
            etas.append(eta)
            rhos.append(rho)
            fcs.append(f_c)
            fts.append(f_t)
            eta = (1.0 - lam) * eta + rho
        if pending is not None and pending[0] == k:
            u = pending[1]
            pending = None
        us[k] = u
        if k == nsteps:
            break
        xs[k + 1] = _rk4(sys.A, sys.B, xs[k], u, dt)
        if not np.all(np.isfinite(xs[k + 1])) or np.linalg.norm(xs[k + 1]) > DIVERGENCE_NORM:
            diverged = True
            xs = xs[:k + 2]
            us = us[:k + 2]
            ts = ts[:k + 2]
            break

    return SimTrace(
        t=ts, x=xs, u=us,
        sample_times=np.asarray(s_t), sample_index=np.asarray(s_idx, dtype=int),
        transmit=np.asarray(flags, dtype=bool), eta=np.asarray(etas), rho=np.asarray(rhos),
        f_c=np.asarray(fcs), f_t=np.asarray(fts), arrivals=np.asarray(arrivals),
        cfg=cfg, diverged=diverged, d_used=d, dt=dt,
        meta={"substeps": substeps, "t_end": t_end, "x0": np.asarray(x0, dtype=float).tolist()},
    )


def trigger_functionals(trace: SimTrace):
    """Return ``(f_c, f_t, iota f_c, iota f_t)`` per sample with ``iota = s_j^3``."""
    if not trace.cfg.theta > 0:
        raise ValueError("f_t needs theta > 0")
    iota = trace.sample_times ** 3
    return trace.f_c, trace.f_t, iota * trace.f_c, iota * trace.f_t


def write_trace_csv(trace: SimTrace, path, events_path=None):
    """Write the dense trace and the arrival-time list as CSV files."""
    path = Path(path)
    n, m = trace.x.shape[1], trace.u.shape[1]
    per_sample = {int(k): j for j, k in enumerate(trace.sample_index)}
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
                   + ["sample_flag", "transmit_flag", "eta", "f_c", "f_t"])
        for k in range(trace.t.size):
            row = [repr(float(trace.t[k]))] + [repr(float(v)) for v in trace.x[k]] \
                + [repr(float(v)) for v in trace.u[k]]
            j = per_sample.get(k)
            if j is None:
                row += ["0", "0", "", "", ""]
            else:
                row += ["1", "1" if trace.transmit[j] else "0", repr(float(trace.eta[j])),
                        repr(float(trace.f_c[j])), repr(float(trace.f_t[j]))]
            w.writerow(row)
    if events_path is not None:
        with Path(events_path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_k"])
            for tk in trace.arrivals:
                w.writerow([repr(float(tk))])
    return path
