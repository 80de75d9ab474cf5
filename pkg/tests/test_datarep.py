import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddetc.config import rng_for
from ddetc.datarep import (ExperimentData, NoiseBound, Qmi, build_theta_bar_s, build_theta_s, check_assumption,
                           collect_data, dualize, estimate_derivatives, example1_schedule, generate_data,
                           interval_noise_bound, read_data_csv, write_data_csv)
from ddetc.sysmodel import LtiSystem, example1_plant

from conftest import example1_data


def _zero(dim):
    return lambda i, t: np.zeros(dim)


# -- noise bound ---------------------------------------------------------------------

def test_interval_bound_example():
    nb = interval_noise_bound(0.01, 100, 2)
    assert np.allclose(nb.Rd, 0.01 * np.eye(2))
    assert np.array_equal(nb.Qd, -np.eye(100)) and not nb.Sd.any()


def test_interval_bound_noiseless():
    nb = interval_noise_bound(0.0, 5, 1)
    assert not nb.Rd.any()
    assert nb.contains(np.zeros((1, 5)))
    assert not nb.contains(1e-3 * np.ones((1, 5)))


def test_interval_bound_rejects_bad_args():
    with pytest.raises(ValueError):
        interval_noise_bound(-1.0, 5, 1)
    with pytest.raises(ValueError):
        interval_noise_bound(0.1, 0, 1)
    with pytest.raises(ValueError):
        NoiseBound(np.zeros((2, 2)), np.zeros((2, 1)), np.eye(1))


def test_uniform_noise_samples_admissible():
    rng = np.random.default_rng(7)
    nb = interval_noise_bound(0.01, 100, 2)
    assert all(nb.contains(rng.uniform(-0.01, 0.01, size=(2, 100))) for _ in range(1000))


# -- data collection -----------------------------------------------------------------

def test_collect_zero_equilibrium():
    s = example1_plant()
    d = collect_data(s, _zero(1), _zero(2), example1_schedule())
    assert not d.X.any() and not d.Xdot.any()


def test_collect_single_sample_derivative():
    s = example1_plant()
    d = collect_data(s, lambda i, t: np.ones(1), _zero(2), [0.0], x0=[1.0, 0.0])
    assert np.array_equal(d.Xdot[:, 0], s.A @ [1.0, 0.0] + s.B[:, 0])
    assert np.allclose(d.Xdot[:, 0], [0.0, 0.1])


def test_collect_noise_within_bound(ex1_w01):
    s, d, *_ = ex1_w01
    assert d.X.shape == (2, 100) and np.abs(d.Wtrue).max() <= 0.01
    assert d.residual(s) <= 1e-9


def test_collect_matches_matrix_exponential():
    from scipy.linalg import expm
    s = example1_plant()
    d = collect_data(s, _zero(1), _zero(2), [0.0, 1.0, 3.0], x0=[1.0, -1.0])
    assert np.allclose(d.X[:, 2], expm(3.0 * s.A) @ [1.0, -1.0], atol=1e-10)


def test_collect_errors():
    s = example1_plant()
    with pytest.raises(ValueError):
        collect_data(s, _zero(1), _zero(2), [])
    with pytest.raises(ValueError):
        collect_data(s, _zero(1), _zero(2), [0.0, 2.0, 1.0])


def test_experiment_data_shapes():
    with pytest.raises(ValueError):
        ExperimentData(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((1, 2)), np.arange(3.0))


def test_csv_round_trip(tmp_path, ex1_w01):
    _, d, *_ = ex1_w01
    back = read_data_csv(write_data_csv(d, tmp_path / "data.csv"))
    for a, b in ((d.X, back.X), (d.Xdot, back.Xdot), (d.U, back.U), (d.Wtrue, back.Wtrue)):
        assert np.array_equal(a, b)
    header = (tmp_path / "data.csv").read_text().splitlines()[0]
    assert header == "t,x1,x2,xdot1,xdot2,u1,w1,w2"
    back = read_data_csv(write_data_csv(d.without_noise(), tmp_path / "blind.csv"))
    assert back.Wtrue is None


# -- QMI construction ----------------------------------------------------------------

def test_theta_single_sample_expansion():
    x, u, xd, r = np.array([[0.3], [-1.2]]), np.array([[0.7]]), np.array([[0.5], [2.0]]), 0.04
    d = ExperimentData(xd, x, u, np.array([0.0]))
    q = build_theta_s(d, NoiseBound(-np.eye(1), np.zeros((1, 2)), r * np.eye(2)), np.eye(2))
    v = np.vstack([-x, -u, xd])
    expect = -v @ v.T
    expect[3:, 3:] += r * np.eye(2)
    assert (q.p, q.q) == (3, 2)
    assert np.allclose(q.Theta, expect, atol=1e-15)


def test_theta_dimension_errors(ex1_w01):
    _, d, nb, *_ = ex1_w01
    with pytest.raises(ValueError):
        build_theta_s(d, nb, np.eye(3))
    with pytest.raises(ValueError):
        build_theta_s(d, interval_noise_bound(0.01, 99, 2), np.eye(2))
    with pytest.raises(ValueError):
        Qmi(np.eye(4), 2, 1)
    with pytest.raises(ValueError):
        Qmi(np.array([[1.0, 1.0], [0.0, 1.0]]), 1, 1)


def test_true_plant_member(ex1_w01):
    s, d, nb, th, tb = ex1_w01
    assert th.contains(np.hstack([s.A, s.B]))
    assert tb.contains(s.A)
    assert not th.contains(np.hstack([s.A + 0.5, s.B]))


def test_known_b_exact_boundary():
    s = example1_plant()
    rng = np.random.default_rng(3)
    d = collect_data(s, lambda i, t: rng.uniform(-1, 1, 1), _zero(2), example1_schedule()[:20])
    nb = NoiseBound(-np.eye(20), np.zeros((20, 2)), np.zeros((2, 2)))
    tb = build_theta_bar_s(d, nb, s.B, s.Bw)
    assert abs(tb.min_eig(s.A)) < 1e-9 * np.linalg.norm(tb.Theta, 2)
    assert tb.contains(s.A)


def test_assumptions_example1(ex1_w005, ex1_w05):
    rep = check_assumption(ex1_w005[3], 2)
    assert rep.ok and rep.pos_eigs == 2
    assert check_assumption(ex1_w05[4], 2).ok


def test_assumption_reports():
    assert check_assumption(Qmi(np.diag([1.0, -1.0, -1.0]), 1, 2), 1).ok
    rep = check_assumption(Qmi(np.diag([1.0, 0.0, -1.0]), 1, 2), 1)
    assert not rep.ok and str(rep) == "not invertible"
    assert not check_assumption(Qmi(np.diag([1.0, 1.0, -1.0]), 1, 2), 1).ok


# -- dualization ---------------------------------------------------------------------

def test_dualize_diagonal():
    dq = dualize(Qmi(np.array([[-1.0, 0.0], [0.0, 2.0]]), 1, 1))
    assert np.allclose(dq.Theta, [[-0.5, 0.0], [0.0, 1.0]])
    assert dq.form == "dual"


def test_dualize_round_trip(ex1_w005):
    th = ex1_w005[3].normalized()
    back = dualize(dualize(th))
    assert (back.p, back.q, back.form) == (th.p, th.q, th.form)
    assert np.allclose(back.Theta, th.Theta, atol=1e-8)


def test_dualize_rejects_singular():
    with pytest.raises(np.linalg.LinAlgError):
        dualize(Qmi(np.diag([1.0, 1e-14, -1.0]), 1, 2))


def _agreement(fixture, rng, box=None):
    s, d, nb, th, tb = fixture
    q = th.normalized()
    dq = dualize(q)
    M0 = np.hstack([s.A, s.B])
    agree = total = 0
    for _ in range(200):
        M = M0 + rng.normal(size=M0.shape) * 10 ** rng.uniform(-4, -1)
        a, b = q.min_eig(M), dq.min_eig(M)
        if abs(a) < 1e-7:
            continue
        total += 1
        agree += (a >= 0) == (b >= 0)
    return agree, total


@pytest.mark.parametrize("name", ["ex1_w005", "ex1_w05"])
def test_dual_membership_equivalence(name, request, rng):
    agree, total = _agreement(request.getfixturevalue(name), rng)
    assert total >= 150 and agree == total


# -- soundness and tightening --------------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([0.001, 0.01, 0.05]))
def test_soundness_true_plant(seed, wbar):
    s = example1_plant()
    d = generate_data(s, example1_schedule()[:40], wbar, rng_for(seed))
    nb = interval_noise_bound(wbar, 40, 2)
    assert nb.contains(d.Wtrue)
    assert build_theta_s(d, nb, s.Bw).contains(np.hstack([s.A, s.B]))
    assert build_theta_bar_s(d, nb, s.B, s.Bw).contains(s.A)


def test_known_b_set_inclusion(ex1_w01, rng):
    s, d, nb, th, tb = ex1_w01
    members = 0
    for _ in range(300):
        A = s.A + rng.normal(size=(2, 2)) * 10 ** rng.uniform(-4, -2)
        if th.contains(np.hstack([A, s.B])):
            members += 1
            assert tb.contains(A)
    assert members > 20


def test_known_b_members_explain_data(ex1_w01, rng):
    s, d, nb, th, tb = ex1_w01
    checked = 0
    for _ in range(300):
        A = s.A + rng.normal(size=(2, 2)) * 10 ** rng.uniform(-4, -2)
        if tb.contains(A):
            checked += 1
            W = np.linalg.solve(s.Bw, d.Xdot - A @ d.X - s.B @ d.U)
            assert np.linalg.eigvalsh(nb.quad(W)).min() >= -1e-8 * (1 + np.abs(nb.Rd).max())
    assert checked > 20


# -- derivative estimation -----------------------------------------------------------

def test_derivative_constant_state():
    X = np.tile([[1.0], [2.0]], (1, 5))
    est, bound = estimate_derivatives(X, np.zeros((1, 5)), np.arange(5.0), 1.0, 0.5)
    assert not est.any()
    assert np.allclose(bound, 0.5 * np.sqrt(5.0))


def test_derivative_linear_state():
    T = np.array([0.0, 0.5, 1.7, 2.0])
    v = np.array([0.3, -2.0])
    est, _ = estimate_derivatives(np.outer(v, T), np.zeros((1, 4)), T, 1.0, 1.0)
    assert np.allclose(est, v[:, None], atol=1e-14)


def test_derivative_bound_holds():
    s = example1_plant()
    abar, bbar = np.linalg.norm(s.A, 2), np.linalg.norm(s.B, 2)
    rng = np.random.default_rng(5)
    T = 1e-3 * np.arange(400)
    d = collect_data(s, lambda i, t: np.full(1, np.sin(0.0)), _zero(2), T, x0=rng.normal(size=2))
    est, bound = estimate_derivatives(d.X, d.U, T, abar, bbar)
    err = np.linalg.norm(est - d.Xdot[:, :-1], axis=0)
    assert np.all(err <= bound + 1e-15)
    assert err.max() > 0.01 * bound.max()


def test_derivative_errors():
    with pytest.raises(ValueError):
        estimate_derivatives(np.zeros((2, 1)), np.zeros((1, 1)), [0.0], 1, 1)
    with pytest.raises(ValueError):
        estimate_derivatives(np.zeros((2, 2)), np.zeros((1, 2)), [1.0, 1.0], 1, 1)


def test_example_noise_bound_helper(ex1_w01):
    _, d, nb, *_ = ex1_w01
    assert nb.rho == d.rho == 100 and nb.contains(d.Wtrue)
    assert isinstance(example1_plant(), LtiSystem)
