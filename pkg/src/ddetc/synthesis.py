"""Controller and trigger-matrix co-design from data.

Two drivers are provided. ``codesign_convex`` solves the convex conditions in
the transformed coordinates ``x = G z`` and recovers ``K = Kc G^{-1}``.
``codesign_iterative`` alternates between a fixed-gain analysis (free
multiplier ``F``) and a fixed-multiplier synthesis (free ``K``), accepting a
new gain only when the certified sampling bound does not decrease.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .datarep import Qmi
from .lmi import DEFAULT_MARGIN, theorem2_lmis, theorem3_lmis, theorem4_lmis, theorem5_lmis, theorem6_lmis
from .sdp import FEASIBLE, NoFeasibleBracket, msi_bisect, solve
from .sysmodel import DelaySamplingBounds, make_selector_basis

log = logging.getLogger(__name__)

SLACK_GRID = (0.5, 1.0, 2.0, 5.0)
G_COND_MAX = 1e10


class CodesignError(RuntimeError):
    """The co-design problem is infeasible or its solution cannot be used."""


def _vertices(d_lo, d_hi, h_lo, h):
    return DelaySamplingBounds(d_lo, d_hi, h_lo, h).vertices()


def _json_ready(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {str(k): _json_ready(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_ready(v) for v in x]
    return x


def analysis_problem(K, qmi: Qmi, sigma1, sigma2, vertices, B=None, n_w=None, fixed=None):
    """Fixed-gain data-based analysis with free ``F``; known ``B`` selects the known-input form."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    basis = make_selector_basis(K.shape[1])
    if B is None:
        return theorem2_lmis(basis, qmi, K, sigma1, sigma2, vertices, fixed=fixed, n_w=n_w)
    return theorem3_lmis(basis, qmi, B, K, sigma1, sigma2, vertices, fixed=fixed, n_w=n_w)


def analysis_feasible(K, qmi, sigma1, sigma2, vertices, B=None, n_w=None, backend=None, objective="none"):
    return solve(analysis_problem(K, qmi, sigma1, sigma2, vertices, B=B, n_w=n_w),
                 objective=objective, backend=backend)


# -- convex co-design ----------------------------------------------------------

@dataclass
class ConvexCodesign:
    K: np.ndarray
    Kc: np.ndarray
    G: np.ndarray
    Omega: np.ndarray
    Omega_z: np.ndarray
    slack: float
    margin: float
    theorem: int
    cond_G: float
    valid: bool = None
    vertices: list = field(default_factory=list)

    def report(self) -> dict:
        return _json_ready(asdict(self))


def convex_problem(qmi: Qmi, slack, sigma1, sigma2, vertices, B=None, m=None, margin=DEFAULT_MARGIN):
    n = qmi.q if B is None else qmi.p
    basis = make_selector_basis(n)
    if B is None:
        m = qmi.p - n if m is None else m
        return theorem5_lmis(basis, qmi, slack, sigma1, sigma2, vertices, m=m, margin=margin)
    return theorem6_lmis(basis, qmi, B, slack, sigma1, sigma2, vertices, margin=margin)


def codesign_convex(qmi: Qmi, bounds: DelaySamplingBounds, sigma1: float, sigma2: float, slack=2.0,
                    B=None, backend=None, cond_max: float = G_COND_MAX, validate: bool = True,
                    analysis_qmi: Qmi = None, n_w=None, margin: float = DEFAULT_MARGIN) -> ConvexCodesign:
    """Co-design ``(K, Omega)`` from the convex conditions at the corners of ``bounds``.

    ``qmi`` is the primal data QMI on ``[A B]`` (``B=None``) or on ``A``
    (known ``B``). ``slack=None`` tries the default grid and keeps the
    feasible point with the largest margin. The returned ``Omega`` is the
    trigger matrix in the original coordinates, ``G^{-T} Omega_z G^{-1}``.
    With ``validate`` the recovered gain is re-checked with the fixed-gain
    analysis (same data, free ``F``); ``analysis_qmi`` defaults to ``qmi``.
    ``margin`` is the strictness required of every LMI. Poorly excited data
    can make the optimal margin tiny, in which case a smaller value may be
    needed. Validation is skipped (``valid=None``) when the analysis QMI
    cannot be dualized.
    """
    slacks = SLACK_GRID if slack is None else (float(slack),)
    vx = bounds.vertices()
    best = None
    for eps in slacks:
        out = solve(convex_problem(qmi, eps, sigma1, sigma2, vx, B=B, margin=margin), objective="margin", backend=backend)
        log.info("convex co-design slack=%g -> %s (margin %.3g)", eps, out.status, out.margin_achieved)
        if out.status == FEASIBLE and (best is None or out.margin_achieved > best[1].margin_achieved):
            best = (eps, out)
    if best is None:
        raise CodesignError("convex co-design is infeasible for every slack tried")
    eps, out = best
    G, Kc = out.assignments["G"], np.atleast_2d(out.assignments["Kc"])
    condG = float(np.linalg.cond(G))
    if not np.isfinite(condG) or condG > cond_max:
        raise CodesignError(f"G is ill-conditioned (cond={condG:.3e})")
    Gi = np.linalg.inv(G)
    K = Kc @ Gi
    Om_z = out.assignments["Omega"]
    Om = Gi.T @ Om_z @ Gi
    res = ConvexCodesign(K=K, Kc=Kc, G=G, Omega=0.5 * (Om + Om.T), Omega_z=Om_z, slack=eps,
                         margin=out.margin_achieved, theorem=5 if B is None else 6, cond_G=condG,
                         vertices=vx)
    if validate:
        aq = qmi if analysis_qmi is None else analysis_qmi
        try:
            res.valid = analysis_feasible(K, aq, sigma1, sigma2, vx, B=B, n_w=n_w, backend=backend).feasible
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("fixed-gain validation skipped: %s", exc)
            return res
        if not res.valid:
            log.warning("recovered gain fails the fixed-gain analysis at the design vertices")
    return res


def msi_convex(qmi: Qmi, d_lo, d_hi, h_lo, sigma1, sigma2, bracket, slack=2.0, B=None, tol=0.05,
               guess=None, backend=None, margin=DEFAULT_MARGIN):
    """Largest ``h`` for which the convex co-design is feasible over ``[h_lo, h] x [d_lo, d_hi]``."""
    def feasible_at(h):
        return solve(convex_problem(qmi, slack, sigma1, sigma2, _vertices(d_lo, d_hi, h_lo, h), B=B,
                                    margin=margin), objective="none", backend=backend)
    return msi_bisect(feasible_at, bracket, tol=tol, guess=guess)


# -- iterative co-design -------------------------------------------------------

@dataclass
class IterativeCodesign:
    K: np.ndarray
    F: np.ndarray
    Omega: np.ndarray
    h_bar: float
    trace: list
    iterations: int
    converged: bool
    mode: str

    def report(self) -> dict:
        return _json_ready(asdict(self))


def _alternate_synthesis(F, qmi, sigma1, sigma2, vertices, B, m):
    n = F.shape[1]
    basis = make_selector_basis(n)
    if B is None:
        return theorem4_lmis(basis, qmi, F, sigma1, sigma2, vertices, m=m)
    return theorem3_lmis(basis, qmi, B, None, sigma1, sigma2, vertices, fixed={"F": F})


def codesign_iterative(qmi: Qmi, K_init, d_lo: float, d_hi: float, h_lo: float, sigma1: float, sigma2: float,
                       B=None, dual_qmi: Qmi = None, max_iters: int = 20, improve_tol: float = 0.05,
                       tol: float = 0.05, h_start: float = None, h_cap: float = 200.0, backend=None,
                       n_w=None) -> IterativeCodesign:
    """Alternate a fixed-gain bisection (free ``F``) with a fixed-``F`` bisection (free ``K``).

    Without ``B`` the fixed-``F`` step uses the primal data QMI ``qmi`` on
    ``[A B]`` and the analysis step uses its dualization. With ``B`` both
    steps use the known-input conditions built from ``qmi`` on ``A``. A
    candidate gain replaces the incumbent only if its re-verified bound is
    not smaller, so the recorded ``h_bar`` sequence never decreases. The
    loop stops once the gain in ``h_bar`` falls below ``improve_tol``.
    """
    K = np.atleast_2d(np.asarray(K_init, dtype=float))
    m = K.shape[0]
    aq = qmi if dual_qmi is None else dual_qmi
    a0 = h_lo if h_start is None else h_start
    mode = "AB" if B is None else "knownB"

    def analysis_msi(Kx, guess):
        def feas(h):
            return analysis_feasible(Kx, aq, sigma1, sigma2, _vertices(d_lo, d_hi, h_lo, h), B=B,
                                     n_w=n_w, backend=backend)
        return msi_bisect(feas, (a0, max(2.0 * a0, a0 + tol)), tol=tol, guess=guess, h_cap=h_cap)

    def retained_f(Kx, h):
        out = analysis_feasible(Kx, aq, sigma1, sigma2, _vertices(d_lo, d_hi, h_lo, h), B=B, n_w=n_w,
                                backend=backend, objective="margin")
        if not out.feasible:
            raise CodesignError(f"analysis not re-verified at h={h:g}")
        return out.assignments["F"], out.assignments["Omega"]

    def synthesis_msi(F, guess):
        def feas(h):
            return solve(_alternate_synthesis(F, qmi, sigma1, sigma2, _vertices(d_lo, d_hi, h_lo, h), B, m),
                         objective="none", backend=backend)
        return msi_bisect(feas, (a0, max(2.0 * a0, a0 + tol)), tol=tol, guess=guess, h_cap=h_cap)

    try:
        r0 = analysis_msi(K, None)
    except NoFeasibleBracket as exc:
        raise CodesignError(f"initial gain is not certified at h={a0:g}: {exc}") from exc
    h_bar = r0.h_bar
    F, Om = retained_f(K, h_bar)
    trace = [{"iteration": 0, "h_bar": h_bar, "K": K.tolist(), "step": "analysis"}]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        try:
            rs = synthesis_msi(F, h_bar)
        except NoFeasibleBracket:
            log.info("fixed-F synthesis infeasible at the bracket start; stopping")
            converged = True
            break
        out = solve(_alternate_synthesis(F, qmi, sigma1, sigma2, _vertices(d_lo, d_hi, h_lo, rs.h_bar), B, m),
                    objective="margin", backend=backend)
        if not out.feasible:
            log.info("fixed-F synthesis not re-verified at %.4g; stopping", rs.h_bar)
            converged = True
            break
        K_new = np.atleast_2d(out.assignments["K"])
        try:
            ra = analysis_msi(K_new, max(rs.h_bar, h_bar))
        except NoFeasibleBracket:
            ra = None
        h_new = ra.h_bar if ra is not None else -np.inf
        trace.append({"iteration": it, "h_bar": max(h_new, h_bar), "candidate_h_bar": h_new,
                      "synthesis_h_bar": rs.h_bar, "K": K_new.tolist(), "accepted": bool(h_new >= h_bar),
                      "step": "alternation"})
        log.info("iteration %d: synthesis %.4g, analysis %.4g (incumbent %.4g)", it, rs.h_bar, h_new, h_bar)
        if h_new < h_bar:
            converged = True
            break
        gain = h_new - h_bar
        K, h_bar = K_new, h_new
        F, Om = retained_f(K, h_bar)
        if gain < improve_tol:
            converged = True
            break
    return IterativeCodesign(K=K, F=F, Omega=Om, h_bar=h_bar, trace=trace, iterations=it,
                             converged=converged, mode=mode)


def write_report(path, payload: dict):
    """Write a JSON report (numpy arrays converted to lists)."""
    with open(path, "w") as fh:
        json.dump(_json_ready(payload), fh, indent=2, sort_keys=True)
    return path
