import dataclasses

import numpy as np
import pytest
from _gen import ALL_SURFACES, random_constraints, random_model, random_policy
from hypothesis import given, settings
from hypothesis import strategies as st

from advrl import (
    AttackerObjective,
    LinearComponents,
    MetaState,
    Tag,
    build_constraints,
    build_meta_features,
    build_meta_mdp,
    verify_linear_consistency,
)
from advrl.errors import DimensionMismatch, MismatchedInstances, ModelError, RowNotStochastic

seeds = st.integers(0, 2**32 - 1)
NEG = AttackerObjective.negate_reward()


def _meta(lc, g, horizon=2, rules=None, prune=False):
    M = lc.induced_model(horizon=horizon)
    B = build_constraints(dict.fromkeys(ALL_SURFACES, "all") if rules is None else rules, M)
    return build_meta_mdp(M, lc.induced_policy(), B, g, prune=prune)


def test_dimension_of_the_lift():
    lc = LinearComponents.random(np.random.default_rng(0), 2, 2, 2, 2, d_M=3, d_pi=2)
    mf = build_meta_features(lc, NEG)
    assert (mf.d, mf.d_bar) == (3, 4)
    assert mf.theta.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_reward_coordinate_by_stratum():
    rng = np.random.default_rng(1)
    lc = LinearComponents.random(rng, 2, 3, 2, 3, d_M=2, d_pi=4)
    g = AttackerObjective.custom(rng.normal(size=(2, 2, 3)))
    mf = build_meta_features(lc, g)
    assert mf.feat(MetaState(Tag.REWARD, 1, 2, 0, 1), 2)[0] == g.table[1, 0, 2]
    for ms, x in ((MetaState(Tag.STATE, 0), 1), (MetaState(Tag.OBS, 1, 0), 2), (MetaState(Tag.ACTION, 0, 1, 1), 0)):
        assert mf.feat(ms, x)[0] == 0.0
    # padded with trailing zeros
    assert np.all(mf.feat(MetaState(Tag.STATE, 0), 1)[1 + lc.d_M :] == 0.0)


@settings(max_examples=25, deadline=None)
@given(seeds, st.booleans())
def test_valid_components_are_consistent(seed, finite):
    rng = np.random.default_rng(seed)
    S, O, A, R = (int(v) for v in rng.integers(1, 4, size=4))
    d_M, d_pi = (int(v) for v in rng.integers(1, 5, size=2))
    lc = LinearComponents.random(rng, S, O, A, R, d_M, d_pi, sparsity=0.3)
    g = AttackerObjective.custom(rng.normal(size=(S, A, R)))
    M = lc.induced_model(horizon=2 if finite else None, gamma=None if finite else 0.9)
    B = random_constraints(rng, M, ALL_SURFACES, 0.5)
    meta = build_meta_mdp(M, lc.induced_policy(), B, g)
    errs = verify_linear_consistency(build_meta_features(lc, g), meta)
    assert errs["max_abs_transition_error"] <= 1e-12
    assert errs["max_abs_reward_error"] <= 1e-12


@pytest.mark.parametrize("name", ["obs_weight", "act_weight", "rew_weight", "next_weight"])
def test_perturbed_weight_is_flagged(name):
    rng = np.random.default_rng(2)
    lc = LinearComponents.random(rng, 3, 2, 2, 2, d_M=3, d_pi=2)
    meta = _meta(lc, NEG)
    bad = dataclasses.replace(lc, **{name: getattr(lc, name).copy()})
    getattr(bad, name)[0, 1] += 0.1
    feats = lc.obs_feat if name == "act_weight" else np.concatenate([lc.state_feat, lc.sa_feat.reshape(-1, lc.d_M)])
    floor = 0.1 * np.min(np.abs(feats[:, 1][feats[:, 1] != 0]))
    errs = verify_linear_consistency(build_meta_features(bad, NEG, validate=False), meta)
    assert errs["max_abs_transition_error"] >= floor - 1e-15
    assert errs["max_abs_transition_error"] > 1e-12
    with pytest.raises(RowNotStochastic):
        bad.validate()


def test_indicator_embedding_is_exact():
    rng = np.random.default_rng(3)
    M = random_model(rng, 3, 2, 2, 3, horizon=2)
    pi = random_policy(rng, 2, 2)
    lc = LinearComponents.from_tabular(M, pi)
    assert (lc.d_M, lc.d_pi) == (6, 2)
    g = AttackerObjective.policy_teaching([1, 0, 1])
    B = build_constraints(dict.fromkeys(ALL_SURFACES, "all"), M)
    errs = verify_linear_consistency(build_meta_features(lc, g), build_meta_mdp(M, pi, B, g, prune=False))
    assert errs == {"max_abs_transition_error": 0.0, "max_abs_reward_error": 0.0}


def test_mismatched_instances():
    rng = np.random.default_rng(4)
    lc = LinearComponents.random(rng, 2, 2, 2, 2, d_M=2, d_pi=2)
    other = LinearComponents.random(rng, 3, 2, 2, 2, d_M=2, d_pi=2)
    with pytest.raises(MismatchedInstances):
        verify_linear_consistency(build_meta_features(lc, NEG), _meta(other, NEG))


def test_shape_and_objective_errors():
    rng = np.random.default_rng(5)
    lc = LinearComponents.random(rng, 2, 2, 2, 2, d_M=2, d_pi=2)
    broken = dataclasses.replace(lc, next_weight=lc.next_weight[:, :1])
    with pytest.raises(DimensionMismatch):
        build_meta_features(broken, NEG)
    with pytest.raises(ModelError):
        build_meta_features(lc, AttackerObjective.custom(np.zeros((2, 2, 2, 2))))


def test_components_round_trip():
    lc = LinearComponents.random(np.random.default_rng(6), 2, 3, 2, 2, d_M=3, d_pi=2)
    again = LinearComponents.from_dict(lc.to_dict())
    for name in LinearComponents.__dataclass_fields__:
        assert np.array_equal(getattr(lc, name), getattr(again, name))
    with pytest.raises(ModelError):
        LinearComponents.from_dict({"state_feat": [[1.0]]})
