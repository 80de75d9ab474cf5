import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddetc.affine import LmiProblem
from ddetc.lmi import theorem1_lmis, theorem2_lmis
from ddetc.sdp import (FEASIBLE, INFEASIBLE, NUMERICAL, NoFeasibleBracket, SolveOutcome, get_backend,
                       interior_check, msi_bisect, solve, vertex_feasible, vertex_solve)
from ddetc.sysmodel import DelaySamplingBounds, example1_plant, make_selector_basis

from conftest import K_EX1

SIG = 1e-4


def _scalar_problem():
    p = LmiProblem("scalar")
    x = p.scalar("x")
    p.require_neg(x * np.eye(2) - np.eye(2), "xI-I<0")
    return p


@pytest.mark.parametrize("backend", ["ipm", "clarabel", "barrier", None])
def test_scalar_feasible(backend):
    r = solve(_scalar_problem(), backend=backend)
    assert r.status == FEASIBLE
    assert r.assignments["x"].item() < 1 - 1e-7


@pytest.mark.parametrize("backend", ["ipm", "clarabel", "barrier", None])
def test_contradictory_scalars_infeasible(backend):
    p = LmiProblem("contra")
    x = p.scalar("x")
    p.require_pos(x - 1.0, "x>=1")
    p.require_neg(x, "x<=0")
    assert solve(p, backend=backend).status == INFEASIBLE


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        get_backend("nope")


def test_empty_problem_feasible():
    assert solve(LmiProblem()).feasible


def test_theorem1_verified_by_recheck():
    s = example1_plant()
    prob = theorem1_lmis(make_selector_basis(2), s.A, s.B, K_EX1, SIG, SIG, [(0.2, 0.1)])
    r = solve(prob)
    assert r.status == FEASIBLE
    # the independent eigenvalue check, recomputed here from the returned values
    assert max(prob.max_violation(r.assignments)) <= -0.5 * prob.margin


def test_backends_agree_on_theorem1():
    s = example1_plant()
    prob = theorem1_lmis(make_selector_basis(2), s.A, s.B, K_EX1, SIG, SIG, [(0.2, 0.0)])
    assert solve(prob, backend="ipm").status == solve(prob, backend="clarabel").status == FEASIBLE


def test_deterministic():
    s = example1_plant()
    prob = theorem1_lmis(make_selector_basis(2), s.A, s.B, K_EX1, SIG, SIG, [(0.2, 0.1)])
    a, b = solve(prob), solve(prob)
    assert a.margin_achieved == b.margin_achieved


# -- bisection ---------------------------------------------------------------------------

def test_bisect_synthetic_threshold():
    r = msi_bisect(lambda h: h <= 0.5, [0.25, 1.0], tol=0.01)
    assert 0.49 <= r.h_bar <= 0.5 and not r.capped
    assert r.evaluations[round(r.h_bar, 10)] and not (r.h_bar + 0.01 <= 0.5)


def test_bisect_no_bracket():
    with pytest.raises(NoFeasibleBracket):
        msi_bisect(lambda h: False, [0.25, 1.0])
    with pytest.raises(NoFeasibleBracket):
        msi_bisect(lambda h: h < 0.1, [0.25, 1.0], guess=0.6)


def test_bisect_argument_errors():
    with pytest.raises(ValueError):
        msi_bisect(lambda h: True, [1.0, 0.5])
    with pytest.raises(ValueError):
        msi_bisect(lambda h: True, [0.1, 0.5], tol=0.0)


def test_bisect_expands_and_caps():
    r = msi_bisect(lambda h: h <= 3.3, [0.25, 1.0], tol=0.01)
    assert 3.29 <= r.h_bar <= 3.3
    r = msi_bisect(lambda h: True, [0.25, 1.0], tol=0.01, h_cap=8.0)
    assert r.capped and r.h_bar == 8.0


def test_bisect_logs_non_monotone():
    # a feasible gap above an infeasible island
    r = msi_bisect(lambda h: h <= 0.5 or 0.505 < h <= 0.52, [0.25, 1.0], tol=0.01)
    assert r.h_bar >= 0.5
    assert r.evaluations[round(r.h_bar, 10)]


def test_bisect_counts_indeterminate():
    def oracle(h):
        status = FEASIBLE if h <= 0.4 else (NUMERICAL if h < 0.45 else INFEASIBLE)
        return SolveOutcome(status, {}, 0.0)
    r = msi_bisect(oracle, [0.25, 1.0], tol=0.01)
    assert r.indeterminate and r.h_bar <= 0.4


@settings(max_examples=60)
@given(st.floats(0.26, 40.0), st.floats(0.002, 0.05), st.one_of(st.none(), st.floats(0.25, 50.0)))
def test_bisect_contract(threshold, tol, guess):
    r = msi_bisect(lambda h: h <= threshold, [0.25, 1.0], tol=tol, guess=guess)
    assert r.h_bar <= threshold and r.h_bar + tol > threshold


@settings(max_examples=40)
@given(st.floats(0.26, 5.0))
def test_bisect_finer_tol_moves_less_than_old_tol(threshold):
    coarse = msi_bisect(lambda h: h <= threshold, [0.25, 1.0], tol=0.01)
    fine = msi_bisect(lambda h: h <= threshold, [0.25, 1.0], tol=0.001)
    assert abs(fine.h_bar - coarse.h_bar) <= 0.01


def test_bisect_guess_uses_few_probes():
    calls = []
    msi_bisect(lambda h: calls.append(h) or h <= 0.73, [0.25, 1.0], tol=0.01, guess=0.72)
    assert len(calls) <= 6


# -- vertex handling ------------------------------------------------------------------------

def test_vertex_feasible_and_interior(ex1_w01):
    th = ex1_w01[3]
    b = make_selector_basis(2)
    bounds = DelaySamplingBounds(0.0, 0.1, 1e-5, 0.7)

    def build(vertices):
        return theorem2_lmis(b, th, K_EX1, SIG, SIG, vertices)
    r = vertex_solve(build, bounds)
    assert r.status == FEASIBLE
    assert interior_check(build, r.assignments, bounds, samples=10) < 0
    assert vertex_feasible(build, DelaySamplingBounds(0.0, 0.0, 0.5, 0.5))
