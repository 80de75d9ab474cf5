import numpy as np
import pytest

from ddetc.affine import LmiProblem, NonAffineError, as_affine, blockdiag, bmat, sym


def _problem():
    p = LmiProblem("t")
    return p, p.sym("X", 2), p.full("Y", 2, 3), p.scalar("e")


def test_evaluate_matches_numpy(rng):
    p, X, Y, e = _problem()
    A, B = rng.normal(size=(3, 2)), rng.normal(size=(3, 3))
    expr = A @ X @ A.T + sym(Y.T @ A.T) + e * B + 2.0 * np.eye(3)
    vals = {"X": np.array([[1.0, 0.3], [0.3, 2.0]]), "Y": rng.normal(size=(2, 3)), "e": 0.7}
    expect = A @ vals["X"] @ A.T + vals["Y"].T @ A.T + A @ vals["Y"] + 0.7 * B + 2.0 * np.eye(3)
    assert np.allclose(expr.evaluate(vals), expect, atol=1e-13)


def test_pack_unpack_round_trip(rng):
    p, X, Y, e = _problem()
    vals = {"X": np.array([[1.0, -0.5], [-0.5, 3.0]]), "Y": rng.normal(size=(2, 3)), "e": np.array([[2.5]])}
    back = p.unpack(p.pack(vals))
    for k in vals:
        assert np.allclose(back[k], vals[k])
    assert p.nvars == 3 + 6 + 1


def test_products_of_variables_rejected():
    p, X, Y, e = _problem()
    with pytest.raises(NonAffineError):
        X @ Y
    with pytest.raises(NonAffineError):
        e * X


def test_coefficients_reproduce_evaluation(rng):
    p, X, Y, e = _problem()
    A = rng.normal(size=(3, 2))
    expr = sym(A @ Y) + A @ X @ A.T - e * np.eye(3)
    x = rng.normal(size=p.nvars)
    c, M = expr.coefficients(p.nvars)
    val = (c + M @ x).reshape(3, 3).T
    assert np.allclose(val, expr.evaluate(p.unpack(x)), atol=1e-12)


def test_midpoint_linearity(rng):
    p, X, Y, e = _problem()
    A = rng.normal(size=(3, 2))
    expr = bmat([[X, A.T @ A], [A.T @ A, -e * np.eye(2) + X]])
    x1, x2 = rng.normal(size=p.nvars), rng.normal(size=p.nvars)
    f = lambda x: expr.evaluate(p.unpack(x))
    mid = f(0.5 * (x1 + x2))
    assert np.allclose(mid, 0.5 * (f(x1) + f(x2)), rtol=1e-12, atol=1e-12)


def test_bmat_and_blockdiag_shapes():
    p, X, Y, e = _problem()
    M = bmat([[X, Y], [Y.T, None]])
    assert M.shape == (5, 5)
    assert blockdiag(X, -e * np.eye(1)).shape == (3, 3)
    with pytest.raises(ValueError):
        bmat([[X, Y], [Y]])
    with pytest.raises(ValueError):
        X + Y


def test_constraints_must_be_square_and_local():
    p, X, Y, e = _problem()
    with pytest.raises(ValueError):
        p.require_neg(Y, "rect")
    q = LmiProblem("other")
    Z = q.sym("Z", 2)
    with pytest.raises(ValueError):
        p.require_neg(Z, "foreign")
    with pytest.raises(ValueError):
        p.sym("X", 2)


def test_max_violation_and_dump():
    p, X, Y, e = _problem()
    p.require_neg(X - np.eye(2), "X<I")
    p.require_pos(e, "e>0")
    viol = p.max_violation({"X": np.diag([0.5, 0.25]), "Y": np.zeros((2, 3)), "e": 1.0})
    assert viol[0] == pytest.approx(-0.5 / 2.0)
    assert viol[1] == pytest.approx(-1.0)
    text = p.dump()
    assert "var X sym 2x2" in text and "constraint X<I neg size=2" in text


def test_as_affine_constant():
    c = as_affine(3.0)
    assert c.is_constant and c.shape == (1, 1)
