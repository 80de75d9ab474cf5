import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddetc.affine import LmiProblem
from ddetc.lmi import (CANONICAL, Variant, assemble_blocks, declare_core_vars, theorem1_lmis, theorem2_lmis,
                       theorem3_lmis, theorem4_lmis, theorem5_lmis, theorem6_lmis)
from ddetc.oracles import random_variables
from ddetc.sdp import FEASIBLE, INFEASIBLE, solve
from ddetc.sysmodel import DelaySamplingBounds, example1_plant, make_selector_basis

from conftest import K_EX1, example1_data

SIG = 1e-4
BOX = DelaySamplingBounds(0.0, 0.1, 1e-5, 0.2).vertices()


def _numeric_blocks(n, rng, h=0.3, d=0.1, **kw):
    return assemble_blocks(make_selector_basis(n), random_variables(rng, n), h, d, 0.4, 0.1, **kw)


def test_block_shapes(rng):
    blk = _numeric_blocks(2, rng, A=np.eye(2), B=np.ones((2, 1)), K=np.ones((1, 2)))
    for name in ("Xi0", "Xia", "Xib", "O", "Psi"):
        assert blk[name].shape == (20, 20)
    assert blk["Tcal"].shape == (4, 4) and blk["Rcal"].shape == (8, 8)
    assert blk["N"].shape == (20, 4) and blk["Mcal"].shape == (20, 8)


def test_trigger_block_zero_omega(rng):
    v = random_variables(rng, 2)
    v["Omega"] = np.zeros((2, 2))
    blk = assemble_blocks(make_selector_basis(2), v, 0.3, 0.1, 0.4, 0.1)
    assert not blk["O"].evaluate({}).any()


def test_trigger_block_pattern(rng):
    v = random_variables(rng, 1)
    v["Omega"] = np.ones((1, 1))
    O = assemble_blocks(make_selector_basis(1), v, 0.3, 0.1, 1.0, 1.0)["O"].evaluate({})
    e = np.eye(10)
    dd = e[6] - e[9]
    expect = np.outer(e[6], e[6]) + np.outer(e[9], e[9]) - np.outer(dd, dd)
    assert np.array_equal(O, expect)
    assert O[6, 9] == 1.0 and O[6, 6] == 0.0


def test_blocks_affine_in_h_and_d(rng):
    v = random_variables(rng, 2)
    b = make_selector_basis(2)
    get = lambda h, d, k: assemble_blocks(b, v, h, d, 0.4, 0.1)[k].evaluate({})
    for k in ("Xia", "Xib", "O"):
        assert np.array_equal(get(0.1, 0.0, k), get(0.7, 0.3, k))
    x0, x1, x2 = get(0.2, 0.0, "Xi0"), get(0.2, 0.1, "Xi0"), get(0.2, 0.2, "Xi0")
    assert np.allclose(x1, 0.5 * (x0 + x2), atol=1e-12)


def test_negative_h_rejected(rng):
    with pytest.raises(ValueError):
        _numeric_blocks(2, rng, h=-0.1)


def test_variant_changes_pi2(rng):
    b = make_selector_basis(2)
    from ddetc.lmi import pi_blocks
    assert not np.array_equal(pi_blocks(b)["Pi2"], pi_blocks(b, Variant(pi2_block=4))["Pi2"])
    assert CANONICAL.pi2_block == 5


# -- constraint structure ---------------------------------------------------------------

def test_theorem1_sizes():
    s, b = example1_plant(), make_selector_basis(2)
    sizes = [c.size for c in theorem1_lmis(b, s.A, s.B, K_EX1, SIG, SIG, [(0.2, 0.1)]).constraints
             if c.name.startswith("LMI")]
    assert sizes == [24, 32]
    sizes = [c.size for c in theorem1_lmis(b, s.A, s.B, K_EX1, SIG, SIG, [(0.0, 0.0)]).constraints
             if c.name.startswith("LMI")]
    assert sizes == [20, 20]


def test_theorem2_sizes(ex1_w01):
    q = ex1_w01[3]
    prob = theorem2_lmis(make_selector_basis(2), q, K_EX1, SIG, SIG, [(0.2, 0.1)])
    assert [c.size for c in prob.constraints if c.name.startswith("LMI")] == [26, 34]
    assert "eps" in prob.variables and "F" in prob.variables


def test_joint_vertices_share_variables(ex1_w01):
    q = ex1_w01[3]
    prob = theorem2_lmis(make_selector_basis(2), q, K_EX1, SIG, SIG, BOX)
    assert len([c for c in prob.constraints if c.name.startswith("LMI")]) == 8
    single = theorem2_lmis(make_selector_basis(2), q, K_EX1, SIG, SIG, [(0.2, 0.1)])
    assert prob.nvars == single.nvars
    degenerate = theorem2_lmis(make_selector_basis(2), q, K_EX1, SIG, SIG,
                               DelaySamplingBounds(0.1, 0.1, 0.3, 0.3).vertices())
    assert len([c for c in degenerate.constraints if c.name.startswith("LMI")]) == 2


def _all_problems(ex1):
    s, d, nb, th, tb = ex1
    b = make_selector_basis(2)
    F = np.random.default_rng(0).normal(size=(20, 2))
    return [theorem1_lmis(b, s.A, s.B, K_EX1, SIG, SIG, BOX),
            theorem2_lmis(b, th, K_EX1, SIG, SIG, BOX),
            theorem3_lmis(b, tb, s.B, K_EX1, SIG, SIG, BOX),
            theorem4_lmis(b, th, F, SIG, SIG, BOX),
            theorem5_lmis(b, th, 2.0, 0.4, 0.1, BOX),
            theorem6_lmis(b, tb, s.B, 2.0, 0.4, 0.1, BOX)]


@pytest.fixture(scope="module")
def problems(ex1_w01):
    return _all_problems(ex1_w01)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_midpoint_affinity(problems, seed):
    rng = np.random.default_rng(seed)
    for prob in problems:
        x1, x2 = rng.normal(size=prob.nvars), rng.normal(size=prob.nvars)
        e1, e2 = prob.evaluate(prob.unpack(x1)), prob.evaluate(prob.unpack(x2))
        em = prob.evaluate(prob.unpack(0.5 * (x1 + x2)))
        for a, b, m in zip(e1, e2, em):
            scale = max(1.0, np.abs(a).max(), np.abs(b).max())
            assert np.abs(m - 0.5 * (a + b)).max() <= 1e-12 * scale


def test_constraints_symmetric(problems, rng):
    for prob in problems:
        vals = prob.unpack(rng.normal(size=prob.nvars))
        for c in prob.constraints:
            M = c.expr.evaluate(vals)
            assert np.abs(M - M.T).max() <= 1e-13 * max(1.0, np.abs(M).max())


def test_bilinear_declarations_rejected(ex1_w01):
    s, d, nb, th, tb = ex1_w01
    b = make_selector_basis(2)
    with pytest.raises(ValueError):
        theorem3_lmis(b, tb, s.B, None, SIG, SIG, BOX)
    with pytest.raises(ValueError):
        theorem4_lmis(b, th, None, SIG, SIG, BOX)
    with pytest.raises(ValueError):
        theorem5_lmis(b, th, None, SIG, SIG, BOX)
    with pytest.raises(ValueError):
        theorem6_lmis(b, tb, s.B, np.array([1.0, 2.0]), SIG, SIG, BOX)


def test_shape_errors(ex1_w01):
    s, d, nb, th, tb = ex1_w01
    b = make_selector_basis(2)
    with pytest.raises(ValueError):
        theorem1_lmis(b, s.A, s.B, np.ones((1, 3)), SIG, SIG, BOX)
    with pytest.raises(ValueError):
        theorem2_lmis(b, tb, K_EX1, SIG, SIG, BOX)
    with pytest.raises(ValueError):
        theorem1_lmis(b, s.A, s.B, K_EX1, SIG, SIG, [])


def test_unverified_signature_rejected():
    from ddetc.datarep import Qmi
    q = Qmi(np.diag([1.0, 1.0, 1.0, -1.0, -1.0]), 3, 2)
    with pytest.raises(ValueError, match="signature"):
        theorem2_lmis(make_selector_basis(2), q, K_EX1, SIG, SIG, BOX)


def test_fixed_value_shape_checked():
    prob = LmiProblem()
    with pytest.raises(ValueError):
        declare_core_vars(prob, 2, fixed={"P": np.eye(4)})


# -- feasibility verdicts ---------------------------------------------------------------

def test_theorem1_feasible_example():
    s = example1_plant()
    r = solve(theorem1_lmis(make_selector_basis(2), s.A, s.B, K_EX1, SIG, SIG, BOX))
    assert r.status == FEASIBLE and max(r.recheck) < 0


def test_theorem1_unstable_gain_infeasible():
    s = example1_plant()
    V = DelaySamplingBounds(0.0, 0.1, 1e-5, 1.0).vertices()
    assert solve(theorem1_lmis(make_selector_basis(2), s.A, s.B, -K_EX1, SIG, SIG, V)).status == INFEASIBLE
    assert np.linalg.eigvals(s.A - s.B @ K_EX1).real.max() > 0


def test_zero_multiplier_infeasible(ex1_w01):
    q = ex1_w01[3]
    r = solve(theorem2_lmis(make_selector_basis(2), q, K_EX1, SIG, SIG, BOX, fixed={"eps": 0.0}))
    assert r.status == INFEASIBLE


def test_zero_f_infeasible(ex1_w01):
    q = ex1_w01[3]
    r = solve(theorem4_lmis(make_selector_basis(2), q, np.zeros((20, 2)), SIG, SIG, BOX))
    assert r.status == INFEASIBLE


@pytest.mark.parametrize("h,expect", [(1.0, FEASIBLE), (1.3, INFEASIBLE)])
def test_tight_data_matches_model(h, expect):
    s, d, nb, th, tb = example1_data(1e-3)
    b = make_selector_basis(2)
    V = DelaySamplingBounds(0.0, 0.0, 1e-5, h).vertices()
    r1 = solve(theorem1_lmis(b, s.A, s.B, K_EX1, SIG, SIG, V), objective="none")
    r2 = solve(theorem2_lmis(b, th, K_EX1, SIG, SIG, V), objective="none")
    assert r1.status == r2.status == expect


def test_theorem2_implies_theorem3(ex1_w01):
    s, d, nb, th, tb = ex1_w01
    b = make_selector_basis(2)
    for h in (0.3, 0.6, 0.9):
        V = DelaySamplingBounds(0.0, 0.1, 1e-5, h).vertices()
        r2 = solve(theorem2_lmis(b, th, K_EX1, SIG, SIG, V), objective="none")
        if r2.feasible:
            assert solve(theorem3_lmis(b, tb, s.B, K_EX1, SIG, SIG, V), objective="none").feasible


def test_known_b_wrong_input_matrix_collapses(ex1_w01):
    s, d, nb, th, tb = ex1_w01
    from ddetc.datarep import build_theta_bar_s, check_assumption
    wrong = build_theta_bar_s(d, nb, 10 * s.B, s.Bw)
    if not check_assumption(wrong, 2).ok:
        # no A explains the data with this B: the set is empty and the condition is rejected
        with pytest.raises(ValueError, match="signature"):
            theorem3_lmis(make_selector_basis(2), wrong, 10 * s.B, K_EX1, SIG, SIG, BOX)
        return
    r = solve(theorem3_lmis(make_selector_basis(2), wrong, 10 * s.B, K_EX1, SIG, SIG, BOX), objective="none")
    assert r.status == INFEASIBLE
