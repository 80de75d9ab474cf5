"""Plant, trigger and sampling/delay types plus the selector basis used by every LMI."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PSD_TOL = 1e-10
HYPOTHESIS_TOL = 1e-12  # rounding slack on 1 - lambda - 1/theta >= 0
NUM_BLOCKS = 10


class ConfigError(ValueError):
    """Raised when a configuration violates a hypothesis; carries every violation."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _as_matrix(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be a matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class LtiSystem:
    """Continuous-time plant ``xdot = A x + B u + Bw w``."""

    A: np.ndarray
    B: np.ndarray
    Bw: np.ndarray = None

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        Bw = np.eye(n) if self.Bw is None else _as_matrix(self.Bw, "Bw")
        if Bw.shape[0] != n:
            raise ValueError(f"Bw must have {n} rows, got {Bw.shape}")
        if np.linalg.matrix_rank(Bw) != Bw.shape[1]:
            raise ValueError("Bw must have full column rank")
        for name, val in (("A", A), ("B", B), ("Bw", Bw)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.Bw.shape[1]


@dataclass(frozen=True)
class DelaySamplingBounds:
    """Box ``[d_lo, d_hi] x [h_lo, h_hi]`` of delays and sampling intervals."""

    d_lo: float
    d_hi: float
    h_lo: float
    h_hi: float

    def __post_init__(self):
        if not 0 <= self.d_lo <= self.d_hi:
            raise ValueError(f"need 0 <= d_lo <= d_hi, got {self.d_lo}, {self.d_hi}")
        if not 0 < self.h_lo <= self.h_hi:
            raise ValueError(f"need 0 < h_lo <= h_hi, got {self.h_lo}, {self.h_hi}")

    def vertices(self):
        """Distinct corners ``(h, d)`` of the box."""
        hs = sorted({self.h_lo, self.h_hi})
        ds = sorted({self.d_lo, self.d_hi})
        return [(h, d) for h in hs for d in ds]

    def with_h_hi(self, h_hi: float) -> "DelaySamplingBounds":
        return DelaySamplingBounds(self.d_lo, self.d_hi, self.h_lo, h_hi)

    def check_trigger_compatible(self):
        """The delay must stay below the smallest sampling interval."""
        if self.d_hi >= self.h_lo:
            raise ValueError(f"d_hi={self.d_hi} must be smaller than h_lo={self.h_lo}")


@dataclass(frozen=True)
class TriggerConfig:
    """Parameters of the dynamic event-trigger and the loop timing."""

    sigma1: float
    sigma2: float
    theta: float
    lam: float
    Omega: np.ndarray = None
    h: float = 0.2
    d: float = 0.0
    eta0: float = 0.0

    def __post_init__(self):
        if self.Omega is not None:
            om = _as_matrix(self.Omega, "Omega")
            om = 0.5 * (om + om.T)
            om.setflags(write=False)
            object.__setattr__(self, "Omega", om)

    def with_omega(self, Omega) -> "TriggerConfig":
        return TriggerConfig(self.sigma1, self.sigma2, self.theta, self.lam,
                             Omega, self.h, self.d, self.eta0)


def validate_trigger_config(cfg: TriggerConfig, require_omega: bool = True) -> TriggerConfig:
    """Check the non-negativity hypotheses on the trigger; raise ConfigError listing all failures."""
    problems = []
    if not cfg.eta0 >= 0:
        problems.append(f"eta0 must be >= 0 (got {cfg.eta0})")
    if not cfg.lam > 0:
        problems.append(f"lambda must be > 0 (got {cfg.lam})")
    if cfg.sigma1 < 0 or cfg.sigma2 < 0:
        problems.append(f"sigma1, sigma2 must be >= 0 (got {cfg.sigma1}, {cfg.sigma2})")
    if cfg.theta < 0:
        problems.append(f"theta must be >= 0 (got {cfg.theta})")
    elif cfg.theta > 0 and cfg.lam > 0 and 1.0 - cfg.lam - 1.0 / cfg.theta < -HYPOTHESIS_TOL:
        problems.append(
            f"need 1 - lambda - 1/theta >= 0 or theta = 0 "
            f"(got 1 - {cfg.lam} - 1/{cfg.theta} = {1.0 - cfg.lam - 1.0 / cfg.theta:.6g})")
    if cfg.Omega is None:
        if require_omega:
            problems.append("Omega is missing")
    else:
        om = cfg.Omega
        if om.shape[0] != om.shape[1]:
            problems.append(f"Omega must be square (got {om.shape})")
        else:
            lmin = float(np.linalg.eigvalsh(om).min())
            if lmin < -PSD_TOL:
                problems.append(f"Omega must be PSD (min eigenvalue {lmin:.3e})")
    if cfg.h <= 0:
        problems.append(f"h must be > 0 (got {cfg.h})")
    if cfg.d < 0:
        problems.append(f"d must be >= 0 (got {cfg.d})")
    elif cfg.d >= cfg.h > 0:
        problems.append(f"d={cfg.d} must be smaller than h={cfg.h}")
    if problems:
        raise ConfigError(problems)
    return cfg


@dataclass(frozen=True)
class SelectorBasis:
    """Block selectors ``L(i)`` picking block ``i`` (1-based) out of a 10-block vector.

    Block order: x(t), x(t-d), xdot(t), xdot(t-d), delay-window mean of x,
    x(tau_j), x(tau_j - d), running mean over [tau_j, t], running mean over
    [tau_j - d, t - d], x(t_k - d).
    """

    n: int
    _mats: tuple = field(repr=False, default=())

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("selector block size must be >= 1")
        eye = np.eye(NUM_BLOCKS * self.n)
        mats = [np.zeros((self.n, NUM_BLOCKS * self.n))]
        for i in range(NUM_BLOCKS):
            mats.append(eye[i * self.n:(i + 1) * self.n].copy())
        for m in mats:
            m.setflags(write=False)
        object.__setattr__(self, "_mats", tuple(mats))

    @property
    def count(self) -> int:
        return NUM_BLOCKS

    @property
    def dim(self) -> int:
        return NUM_BLOCKS * self.n

    @property
    def L0(self) -> np.ndarray:
        return self._mats[0]

    def L(self, i: int) -> np.ndarray:
        if not 0 <= i <= NUM_BLOCKS:
            raise IndexError(f"selector index {i} outside 0..{NUM_BLOCKS}")
        return self._mats[i]

    def stack(self, *blocks) -> np.ndarray:
        """Assemble a 10n vector from its ten blocks (inverse of applying the selectors)."""
        if len(blocks) != NUM_BLOCKS:
            raise ValueError(f"need {NUM_BLOCKS} blocks, got {len(blocks)}")
        return np.concatenate([np.asarray(b, dtype=float).reshape(self.n) for b in blocks])


def make_selector_basis(n: int) -> SelectorBasis:
    return SelectorBasis(int(n))


def example1_plant() -> LtiSystem:
    """Second-order benchmark plant with a double integrator-like structure."""
    return LtiSystem(np.array([[0.0, 1.0], [0.0, -0.1]]), np.array([[0.0], [0.1]]))


def pendulum_plant(m1=1.0, m2=10.0, length=3.0, g=10.0, bw_scale=0.01) -> LtiSystem:
    """Linearised cart-pendulum; states are cart position/velocity, angle/rate."""
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, -m1 * g / m2, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, g / length, 0.0],
    ])
    B = np.array([[0.0], [1.0 / m2], [0.0], [-1.0 / (m2 * length)]])
    return LtiSystem(A, B, bw_scale * np.eye(4))
