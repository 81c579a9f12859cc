"""Optimal attacks: exact planning on the meta-MDP, brute force, and Q-learning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import sparse
from .constraints import AttackConstraints, AttackerObjective
from .errors import ModelError, NotFiniteHorizon, TooLarge
from .mdp import TabularPOMDP, VictimPolicy, first_argmax
from .meta import MetaMDP, MetaState, Tag
from .policy import AttackPolicy
from .sim import episode_uniforms, exact_values


@dataclass
class AttackSolution:
    policy: AttackPolicy
    meta_value: float
    objective_value: float
    mode: str
    epsilon: float | None = None
    values: np.ndarray | None = field(default=None, repr=False)
    choices: np.ndarray | None = field(default=None, repr=False)
    q_table: dict | None = field(default=None, repr=False)

    def metadata(self) -> dict:
        return {
            "meta_value": self.meta_value,
            "objective_value": self.objective_value,
            "mode": self.mode,
            "epsilon": self.epsilon,
        }

    def to_dict(self) -> dict:
        return self.policy.to_dict(self.metadata())


def policy_from_choices(meta: MetaMDP, best: np.ndarray, provenance: str = "planned") -> AttackPolicy:
    """Attack policy over full meta-state keys from one choice per meta-state."""
    proc = meta.proc
    if meta.kind == "compact":
        return _expand_compact(meta, best, provenance)
    table = {}
    for i, key in enumerate(proc.keys):
        if key[1].tag == Tag.VICTIM:
            continue
        table[key] = int(proc.choice_action[best[i]])
    return AttackPolicy(table, provenance, meta.constraints, meta.objective)


def _expand_compact(meta: MetaMDP, best, provenance):
    """Translate compact choices into the equivalent full meta-state policy."""
    M, proc = meta.model, meta.proc
    acts = np.argmax(meta.policy.layered(M.horizon), axis=-1)
    table = {}
    for i, (h, s) in enumerate(proc.keys):
        c = best[i]
        e = int(proc.choice_action[c])
        surface = proc.choice_label[c]
        a0 = int(acts[h, s])
        if surface == "state":
            table[(h, MetaState(Tag.STATE, s))] = e
        elif surface == "observation":
            table[(h, MetaState(Tag.OBS, s, s))] = e
        elif surface == "action":
            table[(h, MetaState(Tag.ACTION, s, s, a0))] = e
        elif surface == "reward":
            r0 = M.reward_index(h, s, a0)
            table[(h, MetaState(Tag.REWARD, s, s, a0, r0))] = e
    return AttackPolicy(table, provenance, meta.constraints, meta.objective)


def plan_attack(meta: MetaMDP, eps: float = 1e-8, *, polish: bool = True) -> AttackSolution:
    """Optimal deterministic attack.

    Finite horizon: exact backward induction over the time-expanded
    meta-process. Discounted: value iteration to the eps(1-g)/(2g) gap,
    followed by exact policy-improvement rounds, so the reported value is
    the exact value of the returned policy. Ties go to the lowest element.
    """
    if eps <= 0:
        raise ModelError("eps must be positive")
    if meta.kind == "game":
        raise ModelError("plan_attack takes a meta-MDP, not a game")
    proc = meta.proc
    if proc.finite:
        V, best = sparse.solve_finite(proc, sign=np.ones(proc.n_states))
    else:
        V, best = sparse.solve_discounted(proc, eps, sign=np.ones(proc.n_states), polish=polish)
    meta_value = float(proc.init @ V)
    return AttackSolution(
        policy=policy_from_choices(meta, best),
        meta_value=meta_value,
        objective_value=meta_value / meta.value_scale,
        mode="finite" if proc.finite else "discounted",
        epsilon=eps,
        values=V,
        choices=best,
    )


def solution_for(M, pi, B, g, eps=1e-8) -> AttackSolution:
    from .meta import build_meta_mdp

    return plan_attack(build_meta_mdp(M, pi, B, g), eps)


# ---------------------------------------------------------------- oracle


def policy_count(meta: MetaMDP) -> int:
    return math.prod(int(c) for c in np.diff(meta.proc.state_ptr))


def enumerate_attack_oracle(meta: MetaMDP, limit: int = 10**6, batch: int = 8192) -> float:
    """Max objective over every deterministic meta-policy (finite horizon).

    Each policy is evaluated by pushing the initial distribution forward
    through the time-expanded process. Test oracle only.
    """
    proc = meta.proc
    if not proc.finite:
        raise NotFiniteHorizon("the enumeration oracle needs a finite-horizon meta-MDP")
    counts = np.diff(proc.state_ptr)
    total = policy_count(meta)
    if total > limit:
        raise TooLarge(total, limit)
    n = proc.n_states
    radix = np.ones(n, dtype=np.int64)
    for i in range(1, n):
        radix[i] = radix[i - 1] * counts[i - 1]
    best = -np.inf
    for start in range(0, total, batch):
        p = np.arange(start, min(total, start + batch), dtype=np.int64)
        d = np.tile(proc.init, (p.shape[0], 1))
        value = np.zeros(p.shape[0])
        for i in range(n):
            di = d[:, i]
            if not di.any():
                continue
            loc = (p // radix[i]) % counts[i]
            c0 = proc.state_ptr[i]
            value += di * proc.reward[c0 + loc]
            for j in range(counts[i]):
                c = c0 + j
                lo, hi = proc.out_ptr[c], proc.out_ptr[c + 1]
                if lo == hi:
                    continue
                sel = np.where(loc == j, di, 0.0)
                for e in range(lo, hi):
                    d[:, proc.out_next[e]] += sel * proc.out_prob[e]
        best = max(best, float(value.max()))
    return best / meta.value_scale


# ---------------------------------------------------------------- learning


class AttackEnvironment:
    """Online interaction handle for a learning attacker.

    The learner sees only the current within-step tuple (the meta-state
    key) and its feasible manipulations; the victim, the environment and
    the randomness stay inside the handle.
    """

    def __init__(self, M: TabularPOMDP, pi: VictimPolicy, B: AttackConstraints, g: AttackerObjective):
        if not M.finite:
            raise NotFiniteHorizon("the learning attacker runs on episodic (finite-horizon) models")
        self.model, self.policy, self.constraints, self.objective = M, pi, B, g
        H = M.horizon
        self.horizon = H
        self._g = g.values(M)
        self._obs = np.stack([np.cumsum(M.O(h), -1) for h in range(H)])
        self._pi = np.cumsum(pi.layered(H), -1)
        self._rew = np.stack([np.cumsum(M.R(h), -1) for h in range(H)])
        self._trans = np.stack([np.cumsum(M.P(h), -1) for h in range(H)])
        self._mu = np.cumsum(M.mu)
        self._u = None

    @staticmethod
    def _draw(cdf, u):
        n = cdf.shape[0]
        return int(np.sum(cdf[: n - 1] / cdf[-1] <= u))

    def feasible(self, key) -> np.ndarray:
        _, ms = key
        tag = {Tag.STATE: 0, Tag.OBS: 1, Tag.ACTION: 2, Tag.REWARD: 3}[Tag(ms.tag)]
        return self.constraints.feasible(tag, ms.s, ms.o, ms.a, ms.r)

    def reset(self, uniforms: np.ndarray):
        self._u = uniforms
        return (0, MetaState(Tag.STATE, self._draw(self._mu, uniforms[0, 0])))

    def step(self, key, x: int):
        """Apply manipulation ``x``; returns (next_key, attacker_reward, done)."""
        h, ms = key
        u = self._u[h + 1]
        tag = Tag(ms.tag)
        if tag == Tag.STATE:
            o = self._draw(self._obs[h, x], u[0])
            return (h, MetaState(Tag.OBS, x, o)), 0.0, False
        if tag == Tag.OBS:
            a = self._draw(self._pi[h, x], u[1])
            return (h, MetaState(Tag.ACTION, ms.s, x, a)), 0.0, False
        if tag == Tag.ACTION:
            r = self._draw(self._rew[h, ms.s, x], u[2])
            return (h, MetaState(Tag.REWARD, ms.s, ms.o, x, r)), 0.0, False
        reward = float(self._g[h, ms.s, ms.a, x])
        s_next = self._draw(self._trans[h, ms.s, ms.a], u[3])
        done = h + 1 >= self.horizon
        return (h + 1, MetaState(Tag.STATE, s_next)), reward, done


DEFAULT_HYPER = {"epsilon": 0.1, "eval_fraction": 0.1}


def learn_attack_qlearning(
    env: AttackEnvironment, episodes: int, seed: int = 0, hyper: dict | None = None
) -> AttackSolution:
    """Tabular Q-learning on the simulated meta-MDP.

    Learning rate 1/(1 + visits), epsilon-greedy exploration, zero initial
    values, no discounting (episodic). The last ``eval_fraction`` of the
    episodes act greedily and their mean attacker return is the reported
    estimate. Deterministic given ``seed``.
    """
    hp = dict(DEFAULT_HYPER, **(hyper or {}))
    episodes = int(episodes)
    H = env.horizon
    if episodes <= 0:
        ident = AttackPolicy.identity(env.constraints, env.objective)
        clean = exact_values(env.model, env.policy, ident).attacker
        return AttackSolution(ident, clean, clean, "finite", None, q_table={})
    n_eval = max(1, math.ceil(hp["eval_fraction"] * episodes))
    explore = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 1])))
    U = episode_uniforms(seed, 0, episodes, H)
    Q, N, feas = {}, {}, {}
    returns = np.zeros(episodes)

    def lookup(key):
        if key not in Q:
            f = env.feasible(key)
            feas[key] = f
            Q[key] = np.zeros(f.shape[0])
            N[key] = np.zeros(f.shape[0], dtype=np.int64)
        return Q[key]

    for ep in range(episodes):
        greedy = ep >= episodes - n_eval
        key = env.reset(U[ep])
        total = 0.0
        done = False
        while not done:
            q = lookup(key)
            if not greedy and explore.random() < hp["epsilon"]:
                j = int(explore.integers(q.shape[0]))
            else:
                j = int(first_argmax(q))
            nxt, rew, done = env.step(key, int(feas[key][j]))
            total += rew
            target = rew if done else rew + float(np.max(lookup(nxt)))
            alpha = 1.0 / (1.0 + N[key][j])
            q[j] += alpha * (target - q[j])
            N[key][j] += 1
            key = nxt
        returns[ep] = total
    table = {}
    for key, q in Q.items():
        table[key] = int(feas[key][first_argmax(q)])
    est = float(returns[-n_eval:].mean())
    pol = AttackPolicy(table, "learned", env.constraints, env.objective)
    return AttackSolution(pol, est, est, "finite", None, q_table={k: v.copy() for k, v in Q.items()})
