"""Random instance generators shared by the test modules."""

import numpy as np

from advrl import AttackPolicy, MetaState, Tag, VictimPolicy, build_constraints, validate_pomdp
from advrl.constraints import SURFACES


def sparse_dirichlet(rng, n, size, sparsity=0.0):
    p = rng.dirichlet(np.ones(n), size=size)
    if sparsity > 0 and n > 1:
        drop = rng.random(p.shape) < sparsity
        keep = np.argmax(p, axis=-1)
        np.put_along_axis(drop, keep[..., None], False, axis=-1)
        p = np.where(drop, 0.0, p)
        p /= p.sum(axis=-1, keepdims=True)
    return p


def random_model(rng, S, O, A, R, *, horizon=None, gamma=None, fo=False, det_rewards=False, sparsity=0.3):
    if fo:
        O = S
    if det_rewards:
        Rd = np.eye(R)[rng.integers(R, size=(S, A))]
    else:
        Rd = sparse_dirichlet(rng, R, (S, A), sparsity)
    support = np.sort(rng.choice(np.arange(-4, 5), size=R, replace=False)).astype(float)
    raw = {
        "transition": sparse_dirichlet(rng, S, (S, A), sparsity),
        "reward_dist": Rd,
        "obs_dist": np.eye(S) if fo else sparse_dirichlet(rng, O, S, sparsity),
        "reward_support": support,
        "mu": sparse_dirichlet(rng, S, (), sparsity),
    }
    if horizon is not None:
        raw["horizon"] = horizon
    else:
        raw["gamma"] = 0.9 if gamma is None else gamma
    return validate_pomdp(raw)


def random_policy(rng, O, A, *, deterministic=False, horizon=None):
    shape = (O,) if horizon is None else (horizon, O)
    if deterministic:
        return VictimPolicy(np.eye(A)[rng.integers(A, size=shape)])
    return VictimPolicy(sparse_dirichlet(rng, A, shape, 0.3))


def random_mask(rng, M, surface, density):
    S, O, A, R = M.n_states, M.n_obs, M.n_actions, M.n_rewards
    shape = {"state": (S, S), "observation": (S, O, O), "action": (S, O, A, A), "reward": (S, O, A, R, R)}[surface]
    ident = build_constraints({surface: "identity"}, M).masks[SURFACES.index(surface)]
    return (rng.random(shape) < density) | ident


def random_constraints(rng, M, surfaces, density=0.5):
    return build_constraints({name: random_mask(rng, M, name, density) for name in surfaces}, M)


def random_attack_policy(rng, M, B, g=None):
    """Uniformly random deterministic feasible attack for every step tuple."""
    H = M.n_steps
    S, O, A, R = M.n_states, M.n_obs, M.n_actions, M.n_rewards
    table = {}

    def pick(row):
        return int(rng.choice(np.flatnonzero(row)))

    for h in range(H):
        for s in range(S):
            table[(h, MetaState(Tag.STATE, s))] = pick(B.state_sets[s])
            for o in range(O):
                table[(h, MetaState(Tag.OBS, s, o))] = pick(B.obs_sets[s, o])
                for a in range(A):
                    table[(h, MetaState(Tag.ACTION, s, o, a))] = pick(B.action_sets[s, o, a])
                    for r in range(R):
                        table[(h, MetaState(Tag.REWARD, s, o, a, r))] = pick(B.reward_sets[s, o, a, r])
    return AttackPolicy(table, "random", B, g)


def m1(gamma=0.5, horizon=None):
    from advrl import make_pomdp

    if horizon is not None:
        return make_pomdp([[[1.0], [1.0]]], rewards=[[0.0, 1.0]], horizon=horizon)
    return make_pomdp([[[1.0], [1.0]]], rewards=[[0.0, 1.0]], gamma=gamma)


def m2(gamma=0.5, horizon=None, mu=(0.0, 1.0)):
    """a0 stays, a1 swaps, reward 1 iff in s1."""
    from advrl import make_pomdp

    P = [[[1, 0], [0, 1]], [[0, 1], [1, 0]]]
    rew = [[0.0, 0.0], [1.0, 1.0]]
    if horizon is not None:
        return make_pomdp(P, rewards=rew, horizon=horizon, mu=list(mu))
    return make_pomdp(P, rewards=rew, gamma=gamma, mu=list(mu))


ALL_SURFACES = SURFACES
