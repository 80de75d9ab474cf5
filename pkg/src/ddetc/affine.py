"""Matrix-valued affine expressions over named decision variables, and LMI problems built from them.

An expression is ``const + sum_k L_k op(V_k) R_k + sum_j v_j C_j`` where the
``V_k`` are matrix variables, ``v_j`` scalar variables and everything else is
constant. Products of two non-constant expressions raise ``NonAffineError``,
so every problem assembled with this module is affine by construction.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class NonAffineError(TypeError):
    pass


@dataclass(frozen=True, eq=False)
class Var:
    name: str
    rows: int
    cols: int
    symmetric: bool = False
    offset: int = 0

    @property
    def size(self) -> int:
        if self.symmetric:
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    @property
    def is_scalar(self) -> bool:
        return self.rows == 1 and self.cols == 1

    def vec_map(self) -> sp.csc_matrix:
        """Sparse map from the free parameters to the column-major ``vec`` of the value."""
        r, c = self.rows, self.cols
        if not self.symmetric:
            return sp.identity(r * c, format="csc")
        rows, cols = [], []
        k = 0
        for j in range(r):
            for i in range(j, r):
                rows.append(i + j * r)
                cols.append(k)
                if i != j:
                    rows.append(j + i * r)
                    cols.append(k)
                k += 1
        return sp.csc_matrix((np.ones(len(rows)), (rows, cols)), shape=(r * r, self.size))

    def unpack(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if not self.symmetric:
            return theta.reshape(self.cols, self.rows).T.copy()
        out = np.zeros((self.rows, self.rows))
        k = 0
        for j in range(self.rows):
            for i in range(j, self.rows):
                out[i, j] = out[j, i] = theta[k]
                k += 1
        return out

    def pack(self, value) -> np.ndarray:
        value = np.asarray(value, dtype=float).reshape(self.rows, self.cols)
        if not self.symmetric:
            return value.T.reshape(-1).copy()
        value = 0.5 * (value + value.T)
        return np.array([value[i, j] for j in range(self.rows) for i in range(j, self.rows)])


@dataclass(frozen=True, eq=False)
class _Term:
    var: Var
    L: np.ndarray  # for scalar variables this holds the full coefficient matrix
    R: np.ndarray = None
    trans: bool = False

    def value(self, V):
        if self.var.is_scalar:
            return float(np.asarray(V).reshape(())) * self.L
        return self.L @ (V.T if self.trans else V) @ self.R


class Affine:
    """Affine matrix expression; support ``+ - @ .T``, scalar ``*`` and embedding in ``bmat``."""

    __array_priority__ = 1000

    def __init__(self, const, terms=()):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = tuple(terms)

    @property
    def shape(self):
        return self.const.shape

    @property
    def is_constant(self) -> bool:
        return not self.terms

    @classmethod
    def of_var(cls, var: Var) -> "Affine":
        zero = np.zeros((var.rows, var.cols))
        if var.is_scalar:
            return cls(zero, [_Term(var, np.ones((1, 1)))])
        return cls(zero, [_Term(var, np.eye(var.rows), np.eye(var.cols))])

    def variables(self):
        seen = {}
        for t in self.terms:
            seen.setdefault(t.var.name, t.var)
        return list(seen.values())

    # -- algebra -----------------------------------------------------------
    def __add__(self, other):
        other = as_affine(other)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch in +: {self.shape} vs {other.shape}")
        return Affine(self.const + other.const, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_affine(other))

    def __rsub__(self, other):
        return as_affine(other) - self

    def __mul__(self, other):
        if isinstance(other, Affine):
            if self.is_constant:
                return other * self.const
            if other.is_constant:
                return self * other.const
            raise NonAffineError("product of two decision-variable expressions is not affine")
        if np.isscalar(other):
            a = float(other)
            return Affine(self.const * a, [_Term(t.var, t.L * a, t.R, t.trans) for t in self.terms])
        other = np.asarray(other, dtype=float)
        if self.shape == (1, 1):
            return self.scale_matrix(other)
        if other.size == 1:
            return self * float(other.reshape(()))
        raise ValueError("elementwise products are not supported; use @")

    __rmul__ = __mul__

    def scale_matrix(self, C) -> "Affine":
        """Multiply a 1x1 expression by a constant matrix."""
        if self.shape != (1, 1):
            raise ValueError("scale_matrix needs a 1x1 expression")
        C = np.atleast_2d(np.asarray(C, dtype=float))
        terms = []
        for t in self.terms:
            if t.var.is_scalar:
                terms.append(_Term(t.var, float(t.L.reshape(())) * C))
            else:
                raise NonAffineError("cannot scale a matrix-variable term by a matrix")
        return Affine(float(self.const.reshape(())) * C, terms)

    def __matmul__(self, other):
        if isinstance(other, Affine):
            if other.is_constant:
                return self @ other.const
            if self.is_constant:
                return _lmul(self.const, other)
            raise NonAffineError("product of two decision-variable expressions is not affine")
        B = np.atleast_2d(np.asarray(other, dtype=float))
        terms = []
        for t in self.terms:
            if t.var.is_scalar:
                terms.append(_Term(t.var, t.L @ B))
            else:
                terms.append(_Term(t.var, t.L, t.R @ B, t.trans))
        return Affine(self.const @ B, terms)

    def __rmatmul__(self, other):
        return _lmul(np.atleast_2d(np.asarray(other, dtype=float)), self)

    @property
    def T(self):
        terms = []
        for t in self.terms:
            if t.var.is_scalar:
                terms.append(_Term(t.var, t.L.T))
            else:
                terms.append(_Term(t.var, t.R.T, t.L.T, not t.trans))
        return Affine(self.const.T, terms)

    def embed(self, shape, r0, c0):
        P, Q = shape
        p, q = self.shape
        const = np.zeros(shape)
        const[r0:r0 + p, c0:c0 + q] = self.const
        terms = []
        for t in self.terms:
            if t.var.is_scalar:
                C = np.zeros(shape)
                C[r0:r0 + p, c0:c0 + q] = t.L
                terms.append(_Term(t.var, C))
            else:
                L = np.zeros((P, t.L.shape[1]))
                L[r0:r0 + p] = t.L
                R = np.zeros((t.R.shape[0], Q))
                R[:, c0:c0 + q] = t.R
                terms.append(_Term(t.var, L, R, t.trans))
        return Affine(const, terms)

    # -- evaluation --------------------------------------------------------
    def evaluate(self, values: dict) -> np.ndarray:
        out = self.const.copy()
        for t in self.terms:
            out = out + t.value(values[t.var.name])
        return out

    def coefficients(self, nvars: int):
        """Column-major ``vec`` of the expression as ``c + A x`` with sparse ``A``."""
        p, q = self.shape
        c = self.const.T.reshape(-1)
        rows, cols, data = [], [], []
        for t in self.terms:
            v = t.var
            if v.is_scalar:
                blk = sp.coo_matrix(t.L.T.reshape(-1, 1))
            else:
                K = sp.kron(sp.csc_matrix(t.R.T), sp.csc_matrix(t.L), format="csc")
                vm = _vec_map(v.rows, v.cols, v.symmetric)
                if t.trans and not v.symmetric:
                    vm = _commutation(v.rows, v.cols) @ vm
                blk = (K @ vm).tocoo()
            rows.append(blk.row)
            cols.append(blk.col + v.offset)
            data.append(blk.data)
        if not rows:
            return c, sp.csc_matrix((p * q, nvars))
        A = sp.csc_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(p * q, nvars))
        A.eliminate_zeros()
        return c, A


@functools.lru_cache(maxsize=256)
def _vec_map(rows, cols, symmetric):
    return Var("_", rows, cols, symmetric).vec_map()


def _lmul(Amat, expr: Affine) -> Affine:
    terms = []
    for t in expr.terms:
        if t.var.is_scalar:
            terms.append(_Term(t.var, Amat @ t.L))
        else:
            terms.append(_Term(t.var, Amat @ t.L, t.R, t.trans))
    return Affine(Amat @ expr.const, terms)


def _commutation(r, c):
    """Sparse ``K`` with ``vec(V^T) = K vec(V)`` for ``V`` of size ``r x c``."""
    rows = np.arange(r * c)
    # vec(V^T)[j + c*i] = V[i, j] = vec(V)[i + r*j]
    i, j = np.divmod(rows, c)  # rows enumerate (i, j) with index j + c*i
    cols = i + r * j
    return sp.csc_matrix((np.ones(r * c), (rows, cols)), shape=(r * c, r * c))


def as_affine(x) -> Affine:
    if isinstance(x, Affine):
        return x
    return Affine(np.atleast_2d(np.asarray(x, dtype=float)))


def sym(x) -> Affine:
    """``x + x^T``."""
    x = as_affine(x)
    return x + x.T


def bmat(blocks) -> Affine:
    """Block matrix from a nested list; ``None`` entries are zero blocks of inferred size."""
    nr, nc = len(blocks), len(blocks[0])
    heights, widths = [None] * nr, [None] * nc
    for i, row in enumerate(blocks):
        if len(row) != nc:
            raise ValueError("ragged block rows")
        for j, b in enumerate(row):
            if b is None:
                continue
            shp = as_affine(b).shape
            if heights[i] not in (None, shp[0]) or widths[j] not in (None, shp[1]):
                raise ValueError(f"inconsistent block shape {shp} at ({i},{j})")
            heights[i], widths[j] = shp[0], shp[1]
    if None in heights or None in widths:
        raise ValueError("cannot infer the size of an all-zero block row/column")
    shape = (sum(heights), sum(widths))
    out = Affine(np.zeros(shape))
    r0 = 0
    for i, row in enumerate(blocks):
        c0 = 0
        for j, b in enumerate(row):
            if b is not None:
                out = out + as_affine(b).embed(shape, r0, c0)
            c0 += widths[j]
        r0 += heights[i]
    return out


def blockdiag(*blocks) -> Affine:
    k = len(blocks)
    return bmat([[blocks[i] if i == j else None for j in range(k)] for i in range(k)])


@dataclass
class Constraint:
    """``expr < 0`` (sense ``"neg"``) or ``expr > 0`` (sense ``"pos"``), strict up to the margin."""

    name: str
    expr: Affine
    sense: str = "neg"

    def as_negative(self) -> Affine:
        return self.expr if self.sense == "neg" else -self.expr

    @property
    def size(self) -> int:
        return self.expr.shape[0]

    def scale(self) -> float:
        return 1.0 + float(np.linalg.norm(self.expr.const, 2))


@dataclass
class LmiProblem:
    name: str = ""
    margin: float = 1e-7
    parameters: dict = field(default_factory=dict)
    variables: dict = field(default_factory=dict)
    constraints: list = field(default_factory=list)
    _nvars: int = 0

    # -- variables ---------------------------------------------------------
    def _add(self, var: Var) -> Affine:
        if var.name in self.variables:
            raise ValueError(f"duplicate variable {var.name!r}")
        var = Var(var.name, var.rows, var.cols, var.symmetric, self._nvars)
        self.variables[var.name] = var
        self._nvars += var.size
        return Affine.of_var(var)

    def sym(self, name: str, n: int) -> Affine:
        return self._add(Var(name, n, n, True))

    def full(self, name: str, rows: int, cols: int) -> Affine:
        return self._add(Var(name, rows, cols, False))

    def scalar(self, name: str) -> Affine:
        return self._add(Var(name, 1, 1, False))

    def var(self, name: str) -> Affine:
        return Affine.of_var(self.variables[name])

    @property
    def nvars(self) -> int:
        return self._nvars

    # -- constraints -------------------------------------------------------
    def _check_sym(self, expr: Affine, name: str):
        p, q = expr.shape
        if p != q:
            raise ValueError(f"constraint {name!r} is not square: {expr.shape}")
        for v in expr.variables():
            if v.name not in self.variables or self.variables[v.name] is not v:
                raise ValueError(f"constraint {name!r} uses a foreign variable {v.name!r}")

    def require_neg(self, expr, name: str):
        expr = as_affine(expr)
        self._check_sym(expr, name)
        self.constraints.append(Constraint(name, expr, "neg"))

    def require_pos(self, expr, name: str):
        expr = as_affine(expr)
        self._check_sym(expr, name)
        self.constraints.append(Constraint(name, expr, "pos"))

    # -- values ------------------------------------------------------------
    def unpack(self, x) -> dict:
        x = np.asarray(x, dtype=float)
        return {n: v.unpack(x[v.offset:v.offset + v.size]) for n, v in self.variables.items()}

    def pack(self, values: dict) -> np.ndarray:
        x = np.zeros(self._nvars)
        for n, v in self.variables.items():
            if n in values:
                x[v.offset:v.offset + v.size] = v.pack(values[n])
        return x

    def evaluate(self, values: dict):
        """Every constraint matrix (as written, symmetrised) at the given variable values."""
        out = []
        for c in self.constraints:
            M = c.expr.evaluate(values)
            out.append(0.5 * (M + M.T))
        return out

    def max_violation(self, values: dict):
        """Per constraint: largest eigenvalue of the negative-form matrix divided by its scale."""
        res = []
        for c, M in zip(self.constraints, self.evaluate(values)):
            neg = M if c.sense == "neg" else -M
            res.append(float(np.linalg.eigvalsh(neg).max()) / c.scale())
        return res

    def dump(self) -> str:
        """Human-readable listing of variables and dense constraint coefficients."""
        lines = [f"# LMI problem {self.name!r}  margin={self.margin:g}"]
        for k, v in self.parameters.items():
            lines.append(f"param {k} = {np.array2string(np.asarray(v), precision=6, separator=',')}")
        for v in self.variables.values():
            kind = "sym" if v.symmetric else "full"
            lines.append(f"var {v.name} {kind} {v.rows}x{v.cols} offset={v.offset} size={v.size}")
        for c in self.constraints:
            cvec, A = c.expr.coefficients(self._nvars)
            p = c.size
            lines.append(f"constraint {c.name} {c.sense} size={p}")
            lines.append("  const " + np.array2string(cvec.reshape(p, p).T, precision=6, separator=",",
                                                       max_line_width=10 ** 6, threshold=10 ** 9)
                         .replace("\n", " "))
            A = A.tocsc()
            for j in np.unique(A.nonzero()[1]):
                col = A[:, j].toarray().reshape(p, p).T
                lines.append(f"  x[{j}] " + np.array2string(col, precision=6, separator=",",
                                                            max_line_width=10 ** 6, threshold=10 ** 9)
                             .replace("\n", " "))
        return "\n".join(lines)
