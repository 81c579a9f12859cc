import numpy as np
import pytest
from _gen import ALL_SURFACES, m1, m2, random_constraints, random_model, random_policy
from hypothesis import given, settings
from hypothesis import strategies as st

from advrl import (
    AttackerObjective,
    AttackPolicy,
    MetaState,
    Tag,
    VictimPolicy,
    backward_induction,
    build_constraints,
    build_meta_game,
    build_meta_mdp,
    build_meta_mdp_compact,
    exact_values,
    plan_attack,
)
from advrl.constraints import load_objective
from advrl.errors import EmptyFeasibleSet, ModelError, PreconditionViolated
from advrl.meta import GAME_CYCLE, META_CYCLE, game_is_zero_sum, meta_discount, roundtrip_environment
from advrl.sparse import evaluate_fixed

seeds = st.integers(0, 2**32 - 1)
NEG = AttackerObjective.negate_reward()


# ---------------------------------------------------------------- constraints


def test_disabled_surfaces_are_identity_singletons():
    M = m2()
    B = build_constraints({}, M)
    for mask in B.masks:
        assert np.all(mask.sum(-1) == 1)
    assert B.active_surfaces == []
    assert B.feasible(0, 1).tolist() == [1]
    assert B.feasible(3, 0, 1, 0, 1).tolist() == [1]


def test_action_all_on_m1():
    B = build_constraints({"action": "all"}, m1())
    for a in range(2):
        assert B.feasible(2, 0, 0, a).tolist() == [0, 1]
    assert B.active_surfaces == ["action"]


def test_observation_all_on_m2():
    B = build_constraints({"observation": "all"}, m2())
    assert np.all(B.obs_sets)
    for name in ("state", "action", "reward"):
        assert not B.active(name)


def test_explicit_rule_and_empty_set_warning():
    M = m2()
    B = build_constraints({"state": {"explicit": {"0": [1]}}}, M)
    assert B.feasible(0, 0).tolist() == [0, 1]
    assert B.feasible(0, 1).tolist() == [1]
    with pytest.warns(EmptyFeasibleSet):
        B = build_constraints({"state": np.zeros((2, 2), dtype=bool)}, M)
    assert np.array_equal(B.state_sets, np.eye(2, dtype=bool))


def test_constraint_rule_errors():
    with pytest.raises(ModelError):
        build_constraints({"telepathy": "all"}, m1())
    with pytest.raises(ModelError):
        build_constraints({"action": "most"}, m1())


def test_constraints_file_round_trip():
    rng = np.random.default_rng(0)
    M = random_model(rng, 3, 2, 2, 2)
    B = random_constraints(rng, M, ALL_SURFACES, 0.4)
    again = build_constraints(B.to_dict(), M)
    for x, y in zip(B.masks, again.masks):
        assert np.array_equal(x, y)


def test_objective_tables():
    M = m2(horizon=2)
    g = AttackerObjective.policy_teaching([1, 0]).values(M)
    assert g.shape == (2, 2, 2, 2)
    assert g[0, 0, 1, 0] == 1.0 and g[0, 0, 0, 0] == 0.0
    assert NEG.is_zero_sum(M)
    assert load_objective({"kind": "policy_teaching", "target": [1, 0]}).kind == "policy_teaching"
    with pytest.raises(ModelError):
        load_objective({"kind": "mystery"})


# ---------------------------------------------------------------- meta-MDP


def test_meta_state_count_before_pruning():
    rng = np.random.default_rng(1)
    M = random_model(rng, 2, 2, 2, 2)
    B = build_constraints(dict.fromkeys(ALL_SURFACES, "all"), M)
    meta = build_meta_mdp(M, random_policy(rng, 2, 2), B, NEG, prune=False)
    assert meta.n_states == 2 + 4 + 8 + 16


def test_discount_propagation():
    meta = build_meta_mdp(m1(gamma=0.9), VictimPolicy.from_actions([1], 2), build_constraints({}, m1()), NEG)
    assert meta.gamma_bar == meta_discount(0.9, 4)
    assert abs(meta.gamma_bar**4 - 0.9) <= 1e-15
    assert meta.value_scale == pytest.approx(0.9**0.75, rel=1e-15)


def _check_structure(meta, cycle):
    proc = meta.proc
    tags = meta.tags()
    pos = {t: i for i, t in enumerate(cycle)}
    for c in range(proc.n_choices):
        nxt, prob = proc.edges(c)
        if nxt.size:
            assert abs(prob.sum() - 1) <= 1e-12
            i = proc.choice_state()[c]
            for j in nxt:
                assert pos[tags[j]] == (pos[tags[i]] + 1) % len(cycle)
                if proc.finite:
                    step = 1 if tags[i] == cycle[-1] else 0
                    assert proc.keys[j][0] == proc.keys[i][0] + step
        else:
            i = proc.choice_state()[c]
            assert proc.finite and tags[i] == cycle[-1] and proc.keys[i][0] == meta.horizon - 1


@settings(max_examples=40, deadline=None)
@given(seeds, st.booleans(), st.booleans())
def test_subtime_cycle_and_stochastic_rows(seed, finite, prune):
    rng = np.random.default_rng(seed)
    S, O, A, R = (int(v) for v in rng.integers(1, 4, size=4))
    M = random_model(rng, S, O, A, R, horizon=2 if finite else None)
    B = random_constraints(rng, M, ALL_SURFACES, 0.4)
    meta = build_meta_mdp(M, random_policy(rng, M.n_obs, M.n_actions), B, NEG, prune=prune)
    _check_structure(meta, META_CYCLE)
    assert abs(meta.proc.init.sum() - 1) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds, st.booleans())
def test_identity_policy_matches_clean_objective(seed, finite):
    rng = np.random.default_rng(seed)
    S, O, A, R = (int(v) for v in rng.integers(1, 4, size=4))
    M = random_model(rng, S, O, A, R, horizon=3 if finite else None, gamma=0.85)
    pi = random_policy(rng, M.n_obs, M.n_actions)
    g = AttackerObjective.custom(rng.normal(size=(S, A, M.n_rewards)))
    B = random_constraints(rng, M, ALL_SURFACES, 0.5)
    meta = build_meta_mdp(M, pi, B, g)
    V = evaluate_fixed(meta.proc, meta.identity_choices())
    via_meta = float(meta.proc.init @ V) / meta.value_scale
    direct = exact_values(M, pi, AttackPolicy.identity(B, g)).attacker
    assert via_meta == pytest.approx(direct, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seeds, st.sampled_from(ALL_SURFACES))
def test_disabling_a_surface_never_helps_the_attacker(seed, surface):
    rng = np.random.default_rng(seed)
    S, O, A, R = (int(v) for v in rng.integers(1, 4, size=4))
    M = random_model(rng, S, O, A, R, horizon=2)
    pi = random_policy(rng, M.n_obs, M.n_actions)
    B = random_constraints(rng, M, ALL_SURFACES, 0.5)
    rules = {name: mask for name, mask in zip(ALL_SURFACES, B.masks) if name != surface}
    smaller = build_constraints(rules, M)
    with_it = plan_attack(build_meta_mdp(M, pi, B, NEG)).objective_value
    without = plan_attack(build_meta_mdp(M, pi, smaller, NEG)).objective_value
    assert without <= with_it + 1e-10


def test_meta_environment_round_trip():
    rng = np.random.default_rng(4)
    M = random_model(rng, 2, 2, 2, 2, horizon=2)
    pi = random_policy(rng, 2, 2)
    B = random_constraints(rng, M, ALL_SURFACES, 0.5)
    meta = build_meta_mdp(M, pi, B, NEG)
    env = roundtrip_environment(meta)
    assert env.n_states == meta.n_states + 1
    assert env.horizon == 4 * M.horizon
    # optimal value of the exported process equals the planned value
    vt, _ = backward_induction(env)
    assert vt.start_value(env.mu) == pytest.approx(plan_attack(meta).meta_value, abs=1e-10)


# ---------------------------------------------------------------- compact


def test_compact_m1_action_choices():
    M = m1(horizon=2)
    meta = build_meta_mdp_compact(M, VictimPolicy.from_actions([1], 2), build_constraints({"action": "all"}, M), NEG)
    assert meta.feasible((0, 0)).tolist() == [0, 1]
    assert set(meta.proc.choice_label) == {"action"}


def test_compact_without_surfaces_follows_the_policy():
    rng = np.random.default_rng(5)
    M = random_model(rng, 3, 3, 2, 2, horizon=3, fo=True, det_rewards=True)
    pi = random_policy(rng, 3, 2, deterministic=True)
    g = AttackerObjective.custom(rng.normal(size=(3, 2, 2)))
    B = build_constraints({}, M)
    meta = build_meta_mdp_compact(M, pi, B, g)
    assert plan_attack(meta).objective_value == pytest.approx(
        exact_values(M, pi, AttackPolicy.identity(B, g)).attacker, abs=1e-12
    )


def test_compact_preconditions():
    rng = np.random.default_rng(6)
    M = random_model(rng, 2, 2, 2, 2, horizon=2, fo=True, det_rewards=True)
    pi = random_policy(rng, 2, 2, deterministic=True)
    two = build_constraints({"state": "all", "action": "all"}, M)
    with pytest.raises(PreconditionViolated):
        build_meta_mdp_compact(M, pi, two, NEG)
    with pytest.raises(PreconditionViolated):
        build_meta_mdp_compact(M, VictimPolicy(np.full((2, 2), 0.5)), build_constraints({}, M), NEG)
    stochastic = random_model(rng, 2, 2, 2, 2, horizon=2, fo=True, sparsity=0.0)
    with pytest.raises(PreconditionViolated):
        build_meta_mdp_compact(stochastic, pi, build_constraints({}, stochastic), NEG)
    with pytest.raises(PreconditionViolated):
        build_meta_mdp_compact(m1(), VictimPolicy.from_actions([1], 2), build_constraints({}, m1()), NEG)


@settings(max_examples=40, deadline=None)
@given(seeds, st.sampled_from(ALL_SURFACES))
def test_compact_equals_full(seed, surface):
    rng = np.random.default_rng(seed)
    S, A, R = (int(v) for v in rng.integers(1, 4, size=3))
    M = random_model(rng, S, S, A, R, horizon=int(rng.integers(1, 4)), fo=True, det_rewards=True)
    pi = random_policy(rng, S, A, deterministic=True)
    B = random_constraints(rng, M, [surface], 0.5)
    g = AttackerObjective.custom(rng.normal(size=(S, A, R)))
    compact = plan_attack(build_meta_mdp_compact(M, pi, B, g))
    full = plan_attack(build_meta_mdp(M, pi, B, g))
    assert compact.objective_value == pytest.approx(full.objective_value, abs=1e-10)
    # the expanded compact policy achieves the same value in the real interaction
    assert exact_values(M, pi, compact.policy).attacker == pytest.approx(full.objective_value, abs=1e-10)


# ---------------------------------------------------------------- game


def test_game_on_m1_has_five_strata():
    M = m1()
    G = build_meta_game(M, build_constraints({"action": "all"}, M), NEG)
    assert set(G.tags().tolist()) == set(GAME_CYCLE)
    assert game_is_zero_sum(G)
    assert abs(G.gamma_bar**5 - 0.5) <= 1e-15
    _check_structure(G, GAME_CYCLE)


def test_game_state_counts():
    rng = np.random.default_rng(7)
    M = random_model(rng, 2, 2, 2, 2)
    G = build_meta_game(M, build_constraints(dict.fromkeys(ALL_SURFACES, "all"), M), NEG, prune=False)
    owners = G.proc.owner
    assert int(np.sum(owners == 1.0)) == 4
    assert int(np.sum(owners == -1.0)) == 30
    assert abs(meta_discount(0.9, 5) ** 5 - 0.9) <= 1e-15


def test_game_victim_turn_keys():
    M = m2(horizon=2)
    G = build_meta_game(M, build_constraints({"observation": "all"}, M), NEG, prune=False)
    victim = [k for k in G.keys if k[1].tag == Tag.VICTIM]
    assert (0, MetaState(Tag.VICTIM, 0, 1)) in victim
    _check_structure(G, GAME_CYCLE)
