"""Block assembly and LMI problems for model-based and data-based stability and co-design conditions.

All conditions share the looped-functional core built in ``assemble_blocks``;
the theorem builders differ in how the plant enters (known model, dualized
data QMI, primal data QMI) and in which matrices are decision variables.
Every builder accepts a list of ``(h, d)`` vertices and emits one joint
problem whose decision variables are shared by all vertices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .affine import Affine, LmiProblem, as_affine, bmat, sym
from .datarep import Qmi, check_assumption, dualize
from .sysmodel import SelectorBasis

DEFAULT_MARGIN = 1e-7
PD_NAMES = ("P", "Z", "T", "R1", "R2", "Omega")


@dataclass(frozen=True)
class Variant:
    """Alternative readings of the core blocks, kept only for negative controls.

    ``pi2_block`` is the selector index of the last block of ``Pi2`` (5 is the
    consistent reading); ``t_scaled`` multiplies the ``T`` term by the delay.
    ``congruence`` rescales the Schur-complement rows of each vertex by
    ``d^{-1/2}`` and ``h^{-1/2}``; this is an equivalent LMI at every vertex with
    far better conditioning when ``h`` or ``d`` is tiny. With it off, the
    blocks are emitted exactly as ``d N``, ``d T``, ``h M``, ``h R``.
    """

    pi2_block: int = 5
    t_scaled: bool = True
    congruence: bool = True


CANONICAL = Variant()


def var_shapes(n: int) -> dict:
    """Name -> (rows, cols, symmetric) for the functional and slack matrices."""
    return {
        "P": (3 * n, 3 * n, True), "Z": (2 * n, 2 * n, True), "T": (n, n, True),
        "R1": (n, n, True), "R2": (n, n, True), "Omega": (n, n, True), "S": (2 * n, 2 * n, True),
        "N": (10 * n, 2 * n, False), "M1": (10 * n, 2 * n, False), "M2": (10 * n, 2 * n, False),
        "F": (10 * n, n, False),
    }


def _declare(prob: LmiProblem, name, rows, cols, symmetric, fixed, pd=False):
    if name in fixed:
        val = np.atleast_2d(np.asarray(fixed[name], dtype=float))
        if val.shape != (rows, cols):
            raise ValueError(f"fixed {name} has shape {val.shape}, expected {(rows, cols)}")
        prob.parameters[name] = val
        return as_affine(val)
    v = prob.sym(name, rows) if symmetric else prob.full(name, rows, cols)
    if pd:
        prob.require_pos(v, f"{name}>0")
    return v


def declare_core_vars(prob: LmiProblem, n: int, fixed=None, with_f: bool = True) -> dict:
    fixed = fixed or {}
    out = {}
    for name, (r, c, s) in var_shapes(n).items():
        if name == "F" and not with_f:
            continue
        out[name] = _declare(prob, name, r, c, s, fixed, pd=name in PD_NAMES)
    return out


def pi_blocks(basis: SelectorBasis, variant: Variant = CANONICAL) -> dict:
    L = basis.L
    st = np.vstack
    return {
        "Pi1": st([L(1), L(2), basis.L0]),
        "Pi2": st([basis.L0, basis.L0, L(variant.pi2_block)]),
        "Pi3": st([L(3), L(4), L(1) - L(2)]),
        "Pi4": st([L(1), L(3)]),
        "Pi5": st([L(2), L(4)]),
        "Pi6": st([L(1) - L(2), L(1) + L(2) - 2 * L(5)]),
        "Pi7": st([L(6), L(7)]),
        "Pi8": st([L(1) - L(6), L(1) + L(6) - 2 * L(8)]),
        "Pi9": st([L(2) - L(7), L(2) + L(7) - 2 * L(9)]),
    }


def assemble_blocks(basis: SelectorBasis, v: dict, h: float, d: float, sigma1: float, sigma2: float,
                    A=None, B=None, K=None, variant: Variant = CANONICAL) -> dict:
    """Named blocks of the looped-functional conditions at one ``(h, d)`` pair.

    ``v`` maps variable names to numeric arrays or affine expressions. When
    ``A``, ``B``, ``K`` and ``v["F"]`` are all given the model-based ``Psi``
    block is included as well.
    """
    if h < 0 or d < 0:
        raise ValueError("h and d must be non-negative")
    L = basis.L
    pb = pi_blocks(basis, variant)
    P, Z, T, R1, R2, Om, S = (as_affine(v[k]) for k in ("P", "Z", "T", "R1", "R2", "Omega", "S"))
    N, M1, M2 = (as_affine(v[k]) for k in ("N", "M1", "M2"))
    Pi1, Pi2, Pi3 = pb["Pi1"], pb["Pi2"], pb["Pi3"]
    t_weight = d if variant.t_scaled else 1.0
    Xi0 = (sym(Pi1.T @ P @ Pi3 + d * (Pi2.T @ P @ Pi3) + N @ pb["Pi6"] + M1 @ pb["Pi8"] + M2 @ pb["Pi9"])
           + t_weight * (L(3).T @ T @ L(3))
           + pb["Pi4"].T @ Z @ pb["Pi4"] - pb["Pi5"].T @ Z @ pb["Pi5"])
    Pi7 = pb["Pi7"]
    Xia = Pi7.T @ S @ Pi7 + L(3).T @ R1 @ L(3) + L(4).T @ R2 @ L(4)
    Xib = -(Pi7.T @ S @ Pi7)
    D = L(7) - L(10)
    O = sigma1 * (L(7).T @ Om @ L(7)) + sigma2 * (L(10).T @ Om @ L(10)) - D.T @ Om @ D
    n = basis.n
    Tcal = bmat([[-T, None], [None, -3.0 * T]])
    Rcal = bmat([[-R1, None, None, None], [None, -3.0 * R1, None, None],
                 [None, None, -R2, None], [None, None, None, -3.0 * R2]])
    Mcal = bmat([[M1, M2]])
    out = dict(pb)
    out.update(Xi0=Xi0, Xia=Xia, Xib=Xib, O=O, Tcal=Tcal, Rcal=Rcal, Mcal=Mcal, N=N)
    if A is not None and B is not None and K is not None and "F" in v:
        F = as_affine(v["F"])
        K = np.atleast_2d(K)
        out["Psi"] = sym(F @ (np.asarray(A) @ L(1) + np.asarray(B) @ K @ L(10) - L(3)))
    assert Tcal.shape == (2 * n, 2 * n)
    return out


def _lmi(top, core, extras):
    """``[[top11, top12, 0], [*, core, couplings], [*, *, diag(extras)]]``, dropping absent parts."""
    k = len(extras)
    rows = []
    if top is not None:
        rows.append([top[0], top[1]] + [None] * k)
    rows.append(([top[1].T] if top is not None else []) + [core] + [c for c, _ in extras])
    for i, (c, dg) in enumerate(extras):
        rows.append(([None] if top is not None else []) + [c.T] + [dg if j == i else None for j in range(k)])
    return bmat(rows)


def _vertex_pair(prob, blk, h, d, psi, top=None, core_extra=None, tag="", variant: Variant = CANONICAL):
    core_common = blk["Xi0"] + psi + blk["O"]
    if core_extra is not None:
        core_common = core_common + core_extra
    if variant.congruence:
        ext1 = [(np.sqrt(d) * blk["N"], blk["Tcal"])] if d > 0 else []
        ext2 = ext1 + ([(np.sqrt(h) * blk["Mcal"], blk["Rcal"])] if h > 0 else [])
    else:
        ext1 = [(d * blk["N"], d * blk["Tcal"])] if d > 0 else []
        ext2 = ext1 + ([(h * blk["Mcal"], h * blk["Rcal"])] if h > 0 else [])
    prob.require_neg(_lmi(top, core_common + h * blk["Xia"], ext1), f"LMI1{tag}")
    prob.require_neg(_lmi(top, core_common + h * blk["Xib"], ext2), f"LMI2{tag}")


def _vertices(vertices):
    if isinstance(vertices, tuple) and len(vertices) == 2 and np.isscalar(vertices[0]):
        vertices = [vertices]
    out = []
    for h, d in vertices:
        if (float(h), float(d)) not in out:
            out.append((float(h), float(d)))
    if not out:
        raise ValueError("need at least one (h, d) vertex")
    return out


def _new_problem(name, margin, **params):
    prob = LmiProblem(name=name, margin=margin)
    prob.parameters.update({k: np.asarray(v, dtype=float) for k, v in params.items() if v is not None})
    return prob


def _tag(h, d):
    return f"@h={h:g},d={d:g}"


def _eps(prob, fixed, name="eps"):
    if name in fixed:
        prob.parameters[name] = np.asarray(float(fixed[name]))
        return as_affine(float(fixed[name]))
    e = prob.scalar(name)
    prob.require_pos(e, f"{name}>0")
    return e


def _as_dual(qmi: Qmi, n_w) -> Qmi:
    if qmi.form == "dual":
        return qmi.normalized()
    rep = check_assumption(qmi, qmi.q if n_w is None else n_w)
    if not rep.ok:
        raise ValueError(f"data QMI fails the signature assumption: {rep}")
    return dualize(qmi.normalized()).normalized()


def _gain_expr(prob, K, fixed, name, rows, cols):
    if K is None:
        return _declare(prob, name, rows, cols, False, fixed)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (rows, cols):
        raise ValueError(f"{name} has shape {K.shape}, expected {(rows, cols)}")
    prob.parameters[name] = K
    return as_affine(K)


def theorem1_lmis(basis: SelectorBasis, A, B, K, sigma1, sigma2, vertices, fixed=None,
                  margin=DEFAULT_MARGIN, variant: Variant = CANONICAL) -> LmiProblem:
    """Model-based condition for a known plant and fixed gain."""
    fixed = fixed or {}
    A, B, K = (np.atleast_2d(np.asarray(x, dtype=float)) for x in (A, B, K))
    n = basis.n
    if A.shape != (n, n) or B.shape[0] != n or K.shape != (B.shape[1], n):
        raise ValueError("A, B, K dimensions are inconsistent with the selector basis")
    prob = _new_problem("theorem1", margin, A=A, B=B, K=K, sigma1=sigma1, sigma2=sigma2)
    v = declare_core_vars(prob, n, fixed)
    for h, d in _vertices(vertices):
        blk = assemble_blocks(basis, v, h, d, sigma1, sigma2, A=A, B=B, K=K, variant=variant)
        _vertex_pair(prob, blk, h, d, blk["Psi"], tag=_tag(h, d), variant=variant)
    return prob


def theorem2_lmis(basis: SelectorBasis, qmi: Qmi, K, sigma1, sigma2, vertices, fixed=None,
                  margin=DEFAULT_MARGIN, n_w=None, variant: Variant = CANONICAL) -> LmiProblem:
    """Data-based condition with unknown ``(A, B)``, fixed gain, free ``F``.

    ``qmi`` is either the primal data QMI (checked and dualized here) or its dual.
    """
    fixed = fixed or {}
    n = basis.n
    dq = _as_dual(qmi, n_w)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    m = K.shape[0]
    if dq.p != n or dq.q != n + m or K.shape[1] != n:
        raise ValueError(f"dual QMI blocks ({dq.p}, {dq.q}) do not match n={n}, m={m}")
    prob = _new_problem("theorem2", margin, K=K, sigma1=sigma1, sigma2=sigma2, Theta_dual=dq.Theta)
    v = declare_core_vars(prob, n, fixed)
    eps = _eps(prob, fixed)
    L = basis.L
    Y1 = np.vstack([np.zeros((n, 10 * n)), L(1), K @ L(10)])
    Y2 = np.vstack([np.eye(n), np.zeros((n + m, n))])
    Th = dq.Theta
    G1, G2, G3 = (eps * (Y1.T @ Th @ Y1), eps * (Y2.T @ Th @ Y1), eps * (Y2.T @ Th @ Y2))
    psi = sym(-(v["F"] @ L(3)))
    top = (G3, G2 + v["F"].T)
    for h, d in _vertices(vertices):
        blk = assemble_blocks(basis, v, h, d, sigma1, sigma2, variant=variant)
        _vertex_pair(prob, blk, h, d, psi, top=top, core_extra=G1, tag=_tag(h, d), variant=variant)
    return prob


def theorem3_lmis(basis: SelectorBasis, qmi_bar: Qmi, B, K, sigma1, sigma2, vertices, fixed=None,
                  margin=DEFAULT_MARGIN, n_w=None, variant: Variant = CANONICAL) -> LmiProblem:
    """Data-based condition with unknown ``A`` and known ``B``.

    With ``K`` given, ``F`` is free. With ``K=None`` the gain becomes the
    decision variable and ``F`` must be supplied in ``fixed``.
    """
    fixed = fixed or {}
    n = basis.n
    dq = _as_dual(qmi_bar, n_w)
    B = np.atleast_2d(np.asarray(B, dtype=float)).reshape(n, -1)
    m = B.shape[1]
    if dq.p != n or dq.q != n:
        raise ValueError(f"dual QMI blocks ({dq.p}, {dq.q}) do not match n={n}")
    if K is None and "F" not in fixed:
        raise ValueError("K and F cannot both be free (the condition would be bilinear)")
    prob = _new_problem("theorem3", margin, B=B, sigma1=sigma1, sigma2=sigma2, Theta_dual=dq.Theta)
    Kx = _gain_expr(prob, K, fixed, "K", m, n)
    v = declare_core_vars(prob, n, fixed)
    eps = _eps(prob, fixed)
    L = basis.L
    Y1 = np.vstack([np.zeros((n, 10 * n)), L(1)])
    Y2 = np.vstack([np.eye(n), np.zeros((n, n))])
    Th = dq.Theta
    G1, G2, G3 = (eps * (Y1.T @ Th @ Y1), eps * (Y2.T @ Th @ Y1), eps * (Y2.T @ Th @ Y2))
    F = v["F"]
    psi = sym(F @ (B @ Kx @ L(10) - L(3)))
    top = (G3, G2 + F.T)
    for h, d in _vertices(vertices):
        blk = assemble_blocks(basis, v, h, d, sigma1, sigma2, variant=variant)
        _vertex_pair(prob, blk, h, d, psi, top=top, core_extra=G1, tag=_tag(h, d), variant=variant)
    return prob


def _primal(qmi: Qmi, p, q) -> Qmi:
    if qmi.form != "primal":
        raise ValueError("this condition uses the primal data QMI")
    if qmi.p != p or qmi.q != q:
        raise ValueError(f"primal QMI blocks ({qmi.p}, {qmi.q}) do not match ({p}, {q})")
    return qmi.normalized()


def _s_procedure_primal(eps, Th, D1, D2):
    return eps * (D1 @ Th @ D1.T), eps * (D1 @ Th @ D2.T), eps * (D2 @ Th @ D2.T)


def theorem4_lmis(basis: SelectorBasis, qmi: Qmi, F, sigma1, sigma2, vertices, m: int = 1, fixed=None,
                  margin=DEFAULT_MARGIN, variant: Variant = CANONICAL) -> LmiProblem:
    """Data-based condition with fixed ``F`` and free gain ``K`` (primal data QMI)."""
    fixed = dict(fixed or {})
    n = basis.n
    pq = _primal(qmi, n + m, n)
    if F is None:
        raise ValueError("F must be fixed when K is free (the condition would be bilinear)")
    F = np.atleast_2d(np.asarray(F, dtype=float))
    if F.shape != (10 * n, n):
        raise ValueError(f"F must be {10 * n}x{n}")
    fixed["F"] = F
    prob = _new_problem("theorem4", margin, sigma1=sigma1, sigma2=sigma2, Theta=pq.Theta)
    Kx = _declare(prob, "K", m, n, False, fixed)
    v = declare_core_vars(prob, n, fixed)
    eps = _eps(prob, fixed)
    L = basis.L
    D1 = np.hstack([np.eye(n + m), np.zeros((n + m, n))])
    D2 = np.hstack([np.zeros((10 * n, n + m)), F])
    S1, S2, S3 = _s_procedure_primal(eps, pq.Theta, D1, D2)
    Ycpl = bmat([[as_affine(L(1))], [Kx @ L(10)]])
    psi = sym(-(F @ L(3)))
    top = (S1, S2 + Ycpl)
    for h, d in _vertices(vertices):
        blk = assemble_blocks(basis, v, h, d, sigma1, sigma2, variant=variant)
        _vertex_pair(prob, blk, h, d, psi, top=top, core_extra=S3, tag=_tag(h, d), variant=variant)
    return prob


def e_matrix(basis: SelectorBasis, slack: float) -> np.ndarray:
    """Structured multiplier ``L1^T + slack * L3^T`` (10n x n)."""
    return basis.L(1).T + slack * basis.L(3).T


def theorem5_lmis(basis: SelectorBasis, qmi: Qmi, slack, sigma1, sigma2, vertices, m: int = 1,
                  fixed=None, margin=DEFAULT_MARGIN, variant: Variant = CANONICAL) -> LmiProblem:
    """Convex co-design with unknown ``(A, B)`` in the coordinates ``x = G z``.

    ``slack`` is the fixed scalar weighting the derivative in the multiplier.
    Decision variables include ``G`` and ``Kc``; the gain is ``Kc G^{-1}``.
    """
    fixed = fixed or {}
    if not np.isscalar(slack) or not slack > 0:
        raise ValueError("the multiplier slack must be a given positive scalar")
    n = basis.n
    pq = _primal(qmi, n + m, n)
    prob = _new_problem("theorem5", margin, slack=slack, sigma1=sigma1, sigma2=sigma2, Theta=pq.Theta)
    v = declare_core_vars(prob, n, fixed, with_f=False)
    G = _declare(prob, "G", n, n, False, fixed)
    Kc = _declare(prob, "Kc", m, n, False, fixed)
    eps = _eps(prob, fixed)
    L = basis.L
    E = e_matrix(basis, slack)
    D1 = np.hstack([np.eye(n + m), np.zeros((n + m, n))])
    D2 = np.hstack([np.zeros((10 * n, n + m)), E])
    S1, S2, S3 = _s_procedure_primal(eps, pq.Theta, D1, D2)
    Ycpl = bmat([[G @ L(1)], [Kc @ L(10)]])
    psi = sym(-(E @ G @ L(3)))
    top = (S1, S2 + Ycpl)
    for h, d in _vertices(vertices):
        blk = assemble_blocks(basis, v, h, d, sigma1, sigma2, variant=variant)
        _vertex_pair(prob, blk, h, d, psi, top=top, core_extra=S3, tag=_tag(h, d), variant=variant)
    return prob


def theorem6_lmis(basis: SelectorBasis, qmi_bar: Qmi, B, slack, sigma1, sigma2, vertices, fixed=None,
                  margin=DEFAULT_MARGIN, variant: Variant = CANONICAL) -> LmiProblem:
    """Convex co-design with unknown ``A`` and known ``B`` (primal known-B data QMI)."""
    fixed = fixed or {}
    if not np.isscalar(slack) or not slack > 0:
        raise ValueError("the multiplier slack must be a given positive scalar")
    n = basis.n
    pq = _primal(qmi_bar, n, n)
    B = np.atleast_2d(np.asarray(B, dtype=float)).reshape(n, -1)
    m = B.shape[1]
    prob = _new_problem("theorem6", margin, B=B, slack=slack, sigma1=sigma1, sigma2=sigma2, Theta=pq.Theta)
    v = declare_core_vars(prob, n, fixed, with_f=False)
    G = _declare(prob, "G", n, n, False, fixed)
    Kc = _declare(prob, "Kc", m, n, False, fixed)
    eps = _eps(prob, fixed)
    L = basis.L
    E = e_matrix(basis, slack)
    V1 = np.hstack([np.eye(n), np.zeros((n, n))])
    V2 = np.hstack([np.zeros((10 * n, n)), E])
    S1, S2, S3 = _s_procedure_primal(eps, pq.Theta, V1, V2)
    psi = sym(E @ (B @ Kc @ L(10) - G @ L(3)))
    top = (S1, S2 + G @ L(1))
    for h, d in _vertices(vertices):
        blk = assemble_blocks(basis, v, h, d, sigma1, sigma2, variant=variant)
        _vertex_pair(prob, blk, h, d, psi, top=top, core_extra=S3, tag=_tag(h, d), variant=variant)
    return prob


BUILDERS = {1: theorem1_lmis, 2: theorem2_lmis, 3: theorem3_lmis,
            4: theorem4_lmis, 5: theorem5_lmis, 6: theorem6_lmis}
