"""Attacked victim-environment interaction: sampling and exact evaluation.

Randomness comes from one counter-based generator (Philox). Episode ``e`` of
seed ``k`` owns the block of uniforms starting ``e * (T + 1)`` counter steps
into the stream keyed by ``k``, so any subset of episodes can be regenerated
independently and results do not depend on batching or execution order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .constraints import AttackerObjective
from .errors import EmptySample, ModelError
from .mdp import TabularPOMDP, VictimPolicy
from .policy import AttackPolicy

STEP_FIELDS = ("s", "s_dag", "o", "o_dag", "a", "a_dag", "r", "r_dag")


def episode_uniforms(seed: int, start: int, count: int, T: int) -> np.ndarray:
    """Uniforms ``[count, T+1, 4]`` for episodes ``start .. start+count-1``."""
    bitgen = np.random.Philox(key=int(seed))
    bitgen.advance(int(start) * (T + 1))
    return np.random.Generator(bitgen).random((int(count), T + 1, 4))


def truncation_length(gamma: float, r_max: float, tail_eps: float = 1e-6) -> int:
    """Smallest T with gamma^T r_max / (1 - gamma) <= tail_eps (at least 1)."""
    if gamma == 0 or r_max == 0:
        return 1
    return max(1, math.ceil(math.log(tail_eps * (1 - gamma) / r_max) / math.log(gamma)))


def _cdf(p):
    c = np.cumsum(p, axis=-1)
    return np.ascontiguousarray(c / c[..., -1:])


def _resolve(M, nu, objective, constraints):
    g = objective or nu.objective or AttackerObjective.negate_reward()
    if constraints is not None and nu.constraints is None:
        nu = AttackPolicy(nu.table, nu.provenance, constraints, nu.objective)
    return g, nu


def _rollout_args(M, pi, nu, g, T):
    L = M.n_steps
    dense = nu.to_dense(M)
    gv = g.values(M)
    pi_l = pi.layered(L)
    layers = [M.O(h) for h in range(L)], [M.R(h) for h in range(L)], [M.P(h) for h in range(L)]
    return (
        T,
        M.finite,
        M.discount,
        _cdf(M.mu),
        _cdf(np.stack(layers[0])),
        _cdf(np.asarray(pi_l)),
        _cdf(np.stack(layers[1])),
        _cdf(np.stack(layers[2])),
        *[np.ascontiguousarray(a, dtype=np.int64) for a in dense],
        gv,
        np.ascontiguousarray(M.reward_support, dtype=float),
    )


@dataclass
class Trajectory:
    steps: np.ndarray  # [T, 8] indices in STEP_FIELDS order (rewards as support indices)
    victim_rewards: np.ndarray
    attacker_rewards: np.ndarray
    victim_return: float
    attacker_return: float
    final_state: int
    seed: int

    def __len__(self):
        return self.steps.shape[0]

    def states(self) -> list:
        """True states visited, including the state after the last step."""
        return [int(s) for s in self.steps[:, 0]] + [self.final_state]

    def to_jsonl(self, support) -> str:
        lines = []
        for t, row in enumerate(self.steps):
            rec = {"t": t}
            for name, v in zip(STEP_FIELDS, row):
                rec[name] = int(v)
            rec["r_value"] = float(support[row[6]])
            rec["r_dag_value"] = float(support[row[7]])
            rec["victim_reward"] = float(self.victim_rewards[t]) + 0.0
            rec["attacker_reward"] = float(self.attacker_rewards[t]) + 0.0
            lines.append(json.dumps(rec))
        return "\n".join(lines) + ("\n" if lines else "")


def run_episode(
    M: TabularPOMDP,
    pi: VictimPolicy,
    nu: AttackPolicy,
    seed: int = 0,
    max_steps: int | None = None,
    *,
    objective: AttackerObjective | None = None,
    constraints=None,
) -> Trajectory:
    """Sample one attacked episode.

    Per step: state attack, observation, observation attack, victim action,
    action attack, environment reward and transition, reward attack. The
    attacker's choices depend only on the current step's tuple.
    """
    g, nu = _resolve(M, nu, objective, constraints)
    if M.finite:
        T = M.horizon if max_steps is None else min(int(max_steps), M.horizon)
    else:
        T = int(max_steps) if max_steps is not None else truncation_length(M.gamma, M.r_max)
    U = episode_uniforms(seed, 0, 1, T)
    ret1, ret2, steps, final = kernels.rollout(U, *_rollout_args(M, pi, nu, g, T), True)
    steps = steps[0]
    gv = g.values(M)
    h = np.arange(T) if M.finite else np.zeros(T, dtype=int)
    vic = M.reward_support[steps[:, 7]]
    att = gv[h, steps[:, 1], steps[:, 5], steps[:, 7]]
    return Trajectory(steps, vic, att, float(ret1[0]), float(ret2[0]), int(final[0]), int(seed))


class MCEstimate(NamedTuple):
    victim_mean: float
    victim_stderr: float
    attacker_mean: float
    attacker_stderr: float
    n_episodes: int
    steps: int
    tail_bound: float


def _stderr(x):
    if x.size < 2 or np.ptp(x) == 0:
        return 0.0
    return float(np.std(x, ddof=1) / math.sqrt(x.size))


def monte_carlo_values(
    M: TabularPOMDP,
    pi: VictimPolicy,
    nu: AttackPolicy,
    n_episodes: int,
    seed: int = 0,
    *,
    objective: AttackerObjective | None = None,
    constraints=None,
    tail_eps: float = 1e-6,
    chunk: int = 20000,
) -> MCEstimate:
    """Sample means and standard errors of both players' returns.

    Discounted models are truncated at :func:`truncation_length`; the
    reported ``tail_bound`` is gamma^T r_max / (1 - gamma) for the truncated
    tail of either return (0 in finite-horizon mode).
    """
    n = int(n_episodes)
    if n <= 0:
        raise EmptySample("need at least one episode")
    g, nu = _resolve(M, nu, objective, constraints)
    if M.finite:
        T, tail = M.horizon, 0.0
    else:
        T = truncation_length(M.gamma, M.r_max, tail_eps)
        r_max = max(M.r_max, float(np.max(np.abs(g.values(M)))))
        tail = M.gamma**T * r_max / (1 - M.gamma)
    args = _rollout_args(M, pi, nu, g, T)
    r1, r2 = [], []
    for start in range(0, n, chunk):
        cnt = min(chunk, n - start)
        U = episode_uniforms(seed, start, cnt, T)
        a, b, _, _ = kernels.rollout(U, *args, False)
        r1.append(a)
        r2.append(b)
    r1 = np.concatenate(r1)
    r2 = np.concatenate(r2)
    return MCEstimate(float(r1.mean()), _stderr(r1), float(r2.mean()), _stderr(r2), n, T, tail)


class ExactValues(NamedTuple):
    victim: float
    attacker: float
    victim_by_state: np.ndarray
    attacker_by_state: np.ndarray


def step_chain(M, pi, dense, gv, h):
    """Per-state expected rewards and state kernel of one attacked step."""
    nu_s, nu_o, nu_a, nu_r = dense
    hs = h if M.finite else 0
    S = M.n_states
    O_h, R_h, P_h = M.O(hs), M.R(hs), M.P(hs)
    pi_h = pi.probs(hs)
    sd = nu_s[hs]
    s_i, o_i = np.nonzero(O_h[sd] > 0)
    p_o = O_h[sd[s_i], o_i]
    od = nu_o[hs][sd[s_i], o_i]
    k, a_i = np.nonzero(pi_h[od] > 0)
    p_a = p_o[k] * pi_h[od[k], a_i]
    s_k, sd_k, od_k = s_i[k], sd[s_i[k]], od[k]
    ad = nu_a[hs][sd_k, od_k, a_i]
    j, r_i = np.nonzero(R_h[sd_k, ad] > 0)
    w = p_a[j] * R_h[sd_k[j], ad[j], r_i]
    rd = nu_r[hs][sd_k[j], od_k[j], ad[j], r_i]
    r1 = np.bincount(s_k[j], weights=w * M.reward_support[rd], minlength=S)
    r2 = np.bincount(s_k[j], weights=w * gv[hs][sd_k[j], ad[j], rd], minlength=S)
    K = np.zeros((S, S))
    np.add.at(K, s_k, p_a[:, None] * P_h[sd_k, ad])
    return r1, r2, K


def exact_values(
    M: TabularPOMDP,
    pi: VictimPolicy,
    nu: AttackPolicy,
    *,
    objective: AttackerObjective | None = None,
    constraints=None,
) -> ExactValues:
    """Exact expected returns of both players under a deterministic attack.

    Each time step's attacked interaction is collapsed into per-state
    expected rewards and a state-to-state kernel, then the chain is solved
    by a backward sweep (finite horizon) or a linear solve (discounted).
    Values are in per-step units, so no subtime rescaling is needed.
    """
    g, nu = _resolve(M, nu, objective, constraints)
    if pi.table.shape[-2:] != (M.n_obs, M.n_actions):
        raise ModelError("policy observation/action sets differ from the model's")
    dense = nu.to_dense(M)
    gv = g.values(M)
    S = M.n_states
    if M.finite:
        V1 = np.zeros(S)
        V2 = np.zeros(S)
        for h in range(M.horizon - 1, -1, -1):
            r1, r2, K = step_chain(M, pi, dense, gv, h)
            V1 = r1 + K @ V1
            V2 = r2 + K @ V2
    else:
        r1, r2, K = step_chain(M, pi, dense, gv, 0)
        A = np.eye(S) - M.gamma * K
        V1 = np.linalg.solve(A, r1)
        V2 = np.linalg.solve(A, r2)
    return ExactValues(float(M.mu @ V1), float(M.mu @ V2), V1, V2)
