import itertools

import numpy as np
import pytest
from _gen import m1, m2, random_model, random_policy
from hypothesis import given, settings
from hypothesis import strategies as st

from advrl import (
    VictimPolicy,
    backward_induction,
    evaluate_policy,
    make_pomdp,
    validate_policy,
    validate_pomdp,
    value_iteration,
)
from advrl.errors import (
    DimensionMismatch,
    ModeAmbiguous,
    NegativeProbability,
    NotFiniteHorizon,
    NotFullyObservable,
    RowNotStochastic,
)
from advrl.mdp import bellman_residual, first_argmax

seeds = st.integers(0, 2**32 - 1)


def test_m1_is_accepted():
    M = m1()
    assert (M.n_states, M.n_actions, M.n_obs) == (1, 2, 1)
    assert M.gamma == 0.5 and not M.finite
    assert M.fully_observable


def test_row_not_stochastic():
    raw = m2().to_dict()
    raw["transition"][0][0] = [0.5, 0.6]
    with pytest.raises(RowNotStochastic):
        validate_pomdp(raw)


def test_negative_probability():
    raw = m2().to_dict()
    raw["transition"][0][0] = [1.5, -0.5]
    with pytest.raises(NegativeProbability):
        validate_pomdp(raw)


def test_m2_is_accepted():
    M = m2()
    assert (M.n_states, M.n_actions) == (2, 2)


def test_mode_must_be_unambiguous():
    raw = m1().to_dict()
    raw["horizon"] = 3
    with pytest.raises(ModeAmbiguous):
        validate_pomdp(raw)
    del raw["horizon"], raw["gamma"]
    with pytest.raises(ModeAmbiguous):
        validate_pomdp(raw)


def test_dimension_mismatch():
    raw = m2().to_dict()
    raw["mu"] = [1.0]
    with pytest.raises(DimensionMismatch):
        validate_pomdp(raw)


def test_small_rounding_is_renormalized():
    raw = m2().to_dict()
    raw["transition"][0][0] = [0.5 + 4e-10, 0.5]
    M = validate_pomdp(raw)
    assert np.all(np.abs(M.transition.sum(-1) - 1) <= 1e-12)


def test_environment_file_round_trip():
    M = m2(horizon=3)
    again = validate_pomdp(M.to_dict())
    assert np.array_equal(again.transition, M.transition)
    assert again.horizon == 3


@pytest.mark.parametrize("action, value", [(0, 0.0), (1, 2.0)])
def test_evaluate_m1(action, value):
    vt = evaluate_policy(m1(), VictimPolicy.from_actions([action], 2))
    assert vt.at(0)[0] == pytest.approx(value, abs=1e-12)


def test_evaluate_m2_stay():
    vt = evaluate_policy(m2(), VictimPolicy.from_actions([0, 0], 2))
    assert vt.values == pytest.approx([0.0, 2.0], abs=1e-12)


def test_value_iteration_examples():
    vt, pi = value_iteration(m1(), 1e-8)
    assert vt.values[0] == pytest.approx(2.0, abs=1e-7)
    assert pi.action(0, 0) == 1
    vt, _ = value_iteration(m2(), 1e-8)
    assert vt.values[1] == pytest.approx(2.0, abs=1e-7)
    single = make_pomdp([[[1.0]]], rewards=[[1.0]], gamma=0.9)
    vt, _ = value_iteration(single, 1e-8)
    assert vt.values[0] == pytest.approx(10.0, abs=1e-7)


def test_backward_induction_examples():
    vt, pi = backward_induction(m1(horizon=2))
    assert vt.at(0)[0] == 2.0
    assert [pi.action(h, 0) for h in range(2)] == [1, 1]
    vt, _ = backward_induction(m1(horizon=1))
    assert vt.at(0)[0] == 1.0


def test_solver_preconditions():
    rng = np.random.default_rng(0)
    po = random_model(rng, 2, 2, 2, 2)
    with pytest.raises(NotFullyObservable):
        value_iteration(po)
    with pytest.raises(NotFiniteHorizon):
        backward_induction(m1())


def test_policy_file_checks():
    M = m2(horizon=2)
    pi = validate_policy({"kind": "time_indexed", "table": np.eye(2)[[[0, 1], [1, 1]]].tolist()}, M)
    assert pi.kind == "time_indexed"
    with pytest.raises(DimensionMismatch):
        validate_policy({"kind": "stationary", "table": [[1.0, 0.0, 0.0]]}, M)


def test_first_argmax_breaks_ties_low():
    assert first_argmax(np.array([1.0, 3.0, 3.0 - 1e-14, 3.0])) == 1
    assert first_argmax(np.array([-np.inf, 0.0])) == 1


@settings(max_examples=40, deadline=None)
@given(seeds, st.booleans())
def test_rows_stochastic_and_fixed_point(seed, finite):
    rng = np.random.default_rng(seed)
    S, O, A, R = (int(v) for v in rng.integers(1, 5, size=4))
    M = random_model(rng, S, O, A, R, horizon=3 if finite else None, gamma=0.9)
    for arr in (M.transition, M.reward_dist, M.obs_dist):
        assert np.all(np.abs(arr.sum(-1) - 1) <= 1e-12)
    pi = random_policy(rng, M.n_obs, M.n_actions)
    assert bellman_residual(M, pi, evaluate_policy(M, pi)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_value_iteration_beats_every_deterministic_policy(seed):
    rng = np.random.default_rng(seed)
    S = int(rng.integers(1, 4))
    A = int(rng.integers(1, min(4, 12 // S) + 1))
    M = random_model(rng, S, S, A, 2, gamma=0.8, fo=True)
    vt, _ = value_iteration(M, 1e-10)
    best = np.full(S, -np.inf)
    for acts in itertools.product(range(A), repeat=S):
        v = evaluate_policy(M, VictimPolicy.from_actions(list(acts), A)).values
        assert np.all(vt.values >= v - 1e-8)
        best = np.maximum(best, v)
    assert np.allclose(vt.values, best, atol=1e-8)


def test_finite_horizon_limit_of_discounted_values():
    rng = np.random.default_rng(3)
    gamma = 0.8
    M = random_model(rng, 3, 3, 2, 1, gamma=gamma, fo=True)
    r = np.abs(rng.normal(size=(3, 2)))
    Md = make_pomdp(M.transition, rewards=r, gamma=gamma)
    v_star = value_iteration(Md, 1e-13)[0].values
    r_max = r.max()
    prev = None
    for H in (1, 2, 4, 8, 16, 32):
        scaled = np.stack([gamma**h * r for h in range(H)])
        MH = make_pomdp(M.transition, rewards=scaled, horizon=H)
        v1 = backward_induction(MH)[0].at(0)
        gap = v_star - v1
        assert np.all(gap >= -1e-9)
        assert np.all(gap <= gamma**H * r_max / (1 - gamma) + 1e-9)
        if prev is not None:
            assert np.all(v1 >= prev - 1e-12)
        prev = v1
