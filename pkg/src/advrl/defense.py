"""Robust victim policies against a worst-case online attacker.

Two solvers:

* :func:`solve_zero_sum_tbsg` runs minimax value iteration (or an exact
  backward sweep) on the turn-based game built by
  :func:`advrl.meta.build_meta_game`.
* :func:`defense_backward_induction` runs the per-step best-response
  recursion for finite-horizon, fully observable models without
  observation attacks, in general-sum or zero-sum form.

:func:`enumerate_defense_oracle` is the brute-force reference: max over
deterministic Markovian victim policies of the worst victim value among the
attacker's best responses.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import sparse
from .constraints import AttackConstraints, AttackerObjective
from .errors import (
    DimensionMismatch,
    NotFiniteHorizon,
    NotZeroSum,
    ObservationSurfaceEnabled,
    PartiallyObservable,
    TooLarge,
)
from .mdp import TabularPOMDP, VictimPolicy, first_argmax
from .meta import MetaMDP, MetaState, Tag, build_meta_mdp, game_fully_observable, game_is_zero_sum
from .planner import policy_from_choices
from .policy import AttackPolicy

BR_TOL = 1e-9
TIE_RTOL = 1e-12


@dataclass
class DefenseSolution:
    victim_policy: VictimPolicy
    attacker_response: AttackPolicy
    victim_value: float
    attacker_value: float
    mode: str
    zero_sum: bool
    tolerance: float = BR_TOL
    victim_values: np.ndarray | None = field(default=None, repr=False)
    attacker_values: np.ndarray | None = field(default=None, repr=False)

    def metadata(self) -> dict:
        return {
            "victim_value": self.victim_value,
            "attacker_value": self.attacker_value,
            "mode": self.mode,
            "zero_sum": self.zero_sum,
            "tolerance": self.tolerance,
        }

    def to_dict(self) -> dict:
        return {
            "victim_policy": self.victim_policy.to_dict(),
            "attacker_response": self.attacker_response.to_dict(),
            "metadata": self.metadata(),
        }


def _with_reward(proc, reward):
    return dataclasses.replace(proc, reward=np.asarray(reward, dtype=float))


def _first_argmin(values, mask):
    """Lowest index attaining the minimum (relative 1e-12) among ``mask``."""
    v = np.where(mask, values, np.inf)
    return first_argmax(-v, axis=-1, rel_tol=TIE_RTOL)


def _victim_table(G: MetaMDP, best):
    M, proc = G.model, G.proc
    L = M.n_steps
    table = np.zeros((L, M.n_obs, M.n_actions))
    seen = np.zeros((L, M.n_obs), dtype=bool)
    for i, (h, ms) in enumerate(proc.keys):
        if ms.tag != Tag.VICTIM:
            continue
        table[h, ms.o] = 0.0
        table[h, ms.o, proc.choice_action[best[i]]] = 1.0
        seen[h, ms.o] = True
    # observations that never reach a victim turn get the first available action
    for h, o in zip(*np.nonzero(~seen)):
        table[h, o, 0] = 1.0
    return VictimPolicy(table if M.finite else table[0])


def solve_zero_sum_tbsg(G: MetaMDP, eps: float = 1e-8) -> DefenseSolution:
    """Minimax solution of a fully observable zero-sum game.

    The victim maximizes and the attacker minimizes the victim's reward.
    Discounted games use value iteration to the eps(1-g)/(2g) gap; the
    reported victim value is then the exact value of the returned victim
    policy against an exact attacker best response to it.
    """
    if G.kind != "game":
        raise DimensionMismatch("solve_zero_sum_tbsg needs a game from build_meta_game")
    if not game_fully_observable(G):
        raise PartiallyObservable(
            "observation attacks make the defense game partially observable; solving it is NP-hard"
        )
    if not game_is_zero_sum(G):
        raise NotZeroSum("attacker reward is not the negated victim reward")
    proc = _with_reward(G.proc, G.proc.victim_reward)
    sign = proc.owner.astype(float)
    if proc.finite:
        _, best = sparse.solve_finite(proc, sign)
    else:
        _, best = sparse.value_iteration(proc, eps, sign)
    # freeze the victim, then best-respond exactly
    keep = np.ones(proc.n_choices, dtype=bool)
    cs = proc.choice_state()
    victim_choice = proc.owner[cs] == 1.0
    keep[victim_choice] = False
    vic_states = np.flatnonzero(proc.owner == 1.0)
    keep[best[vic_states]] = True
    sub = proc.restrict(keep)
    down = -np.ones(proc.n_states)
    if proc.finite:
        V1, resp = sparse.solve_finite(sub, down)
    else:
        V1, resp = sparse.solve_discounted(sub, eps, down)
    # map restricted choice indices back to the full process
    full_idx = np.flatnonzero(keep)
    resp_full = full_idx[resp]
    V2 = sparse.evaluate_fixed(G.proc, resp_full)
    victim_value = float(proc.init @ V1) / G.value_scale
    attacker_value = float(proc.init @ V2) / G.value_scale
    return DefenseSolution(
        victim_policy=_victim_table(G, best),
        attacker_response=policy_from_choices(G, resp_full),
        victim_value=victim_value,
        attacker_value=attacker_value,
        mode="finite" if proc.finite else "discounted",
        zero_sum=True,
        tolerance=eps,
        victim_values=V1,
        attacker_values=V2,
    )


def _defense_checks(M, B):
    if not B.shape_matches(M):
        raise DimensionMismatch("constraints were built for a different model")
    if not M.finite:
        raise NotFiniteHorizon("backward-induction defense needs a finite horizon")
    if B.enabled("observation"):
        raise ObservationSurfaceEnabled(
            "perceived-state/observation attacks make the defense problem NP-hard; refusing"
        )
    if not M.fully_observable:
        raise PartiallyObservable("backward-induction defense needs a fully observable model")


def defense_backward_induction(
    M: TabularPOMDP,
    B: AttackConstraints,
    g: AttackerObjective,
    zero_sum: bool = False,
    tol: float = BR_TOL,
) -> DefenseSolution:
    """Per-step weak-Stackelberg recursion.

    Working backwards, at each state the attacker's best-response sets for
    the state, action and reward attacks are those elements whose attacker
    value is within ``tol`` of the best; inside a set the attacker is
    assumed to pick the victim-worst element (lowest index on ties), and
    the victim picks the action maximizing the resulting value (lowest
    index on ties). With ``zero_sum`` the raw feasibility sets replace the
    best-response sets.
    """
    _defense_checks(M, B)
    H, S, A, R = M.horizon, M.n_states, M.n_actions, M.n_rewards
    gv = g.values(M)
    sup = M.reward_support
    diag = np.arange(S)
    act_sets = B.action_sets[diag, diag]  # [s, a, a†]
    rew_sets = B.reward_sets[diag, diag]  # [s, a†, r, r†]
    st_sets = B.state_sets
    W1 = np.zeros(S)
    W2 = np.zeros(S)
    pi_tab = np.zeros((H, S, A))
    nu_s = np.zeros((H, S), dtype=int)
    nu_a = np.zeros((H, S, A), dtype=int)
    nu_r = np.zeros((H, S, A, R), dtype=int)
    W1_all = np.zeros((H + 1, S))
    W2_all = np.zeros((H + 1, S))

    def choose(q2, v1, feas):
        """Attacker choice inside its best-response set; returns (index, attacker value)."""
        q2m = np.where(feas, q2, -np.inf)
        top = q2m.max(axis=-1, keepdims=True)
        members = feas if zero_sum else feas & (q2m >= top - tol)
        pick = _first_argmin(v1, members)
        v2 = np.take_along_axis(q2, pick[..., None], -1)[..., 0] if zero_sum else top[..., 0]
        return pick, v2

    for h in range(H - 1, -1, -1):
        R_h, P_h = M.R(h), M.P(h)
        EW1 = P_h @ W1  # [s, a†]
        EW2 = P_h @ W2
        # reward attack at (s, a†, r)
        q2 = gv[h][:, :, None, :] + EW2[:, :, None, None]  # [s, a†, r, r†]
        v1 = sup[None, None, None, :] + EW1[:, :, None, None]
        q2 = np.broadcast_to(q2, (S, A, R, R))
        v1 = np.broadcast_to(v1, (S, A, R, R))
        r_pick, node2 = choose(q2, v1, rew_sets)
        node1 = sup[r_pick] + EW1[:, :, None]
        # action attack at (s, a) choosing a†
        q2a = np.einsum("sbr,sbr->sb", R_h, node2)  # [s, a†]
        v1a = np.einsum("sbr,sbr->sb", R_h, node1)
        a_pick, U2 = choose(
            np.broadcast_to(q2a[:, None, :], (S, A, A)), np.broadcast_to(v1a[:, None, :], (S, A, A)), act_sets
        )
        U1 = v1a[diag[:, None], a_pick]  # [s, a]
        # victim
        a_star = first_argmax(np.where(M.available, U1, -np.inf), axis=1, rel_tol=TIE_RTOL)
        X1 = U1[diag, a_star]
        X2 = U2[diag, a_star]
        # state attack at s choosing s†
        s_pick, W2 = choose(
            np.broadcast_to(X2, (S, S)), np.broadcast_to(X1, (S, S)), st_sets
        )
        W1 = X1[s_pick]
        pi_tab[h, diag, a_star] = 1.0
        nu_s[h], nu_a[h], nu_r[h] = s_pick, a_pick, r_pick
        W1_all[h], W2_all[h] = W1, W2

    table = {}
    for h in range(H):
        for s in range(S):
            table[(h, MetaState(Tag.STATE, s))] = int(nu_s[h, s])
            for a in range(A):
                table[(h, MetaState(Tag.ACTION, s, s, a))] = int(nu_a[h, s, a])
                for r in range(R):
                    table[(h, MetaState(Tag.REWARD, s, s, a, r))] = int(nu_r[h, s, a, r])
    return DefenseSolution(
        victim_policy=VictimPolicy(pi_tab),
        attacker_response=AttackPolicy(table, "planned", B, g),
        victim_value=float(M.mu @ W1_all[0]),
        attacker_value=float(M.mu @ W2_all[0]),
        mode="finite",
        zero_sum=zero_sum,
        tolerance=tol,
        victim_values=W1_all,
        attacker_values=W2_all,
    )


# ---------------------------------------------------------------- oracle


def victim_policy_count(M: TabularPOMDP) -> int:
    per_obs = M.available.sum(axis=1) if M.fully_observable else np.full(M.n_obs, M.n_actions)
    return math.prod(int(c) for c in per_obs) ** M.n_steps


def worst_best_response(meta: MetaMDP, tol: float = BR_TOL):
    """(attacker optimum, worst victim value over attacker-optimal policies).

    A deterministic meta-policy is attacker-optimal iff it picks a
    Q-maximizing element at every meta-state it reaches, so the minimum of
    the victim's value over that set is a backward sweep over the
    Q-maximizing choices.
    """
    proc = meta.proc
    V2, _ = sparse.solve_finite(proc, np.ones(proc.n_states))
    Q2 = sparse.q_values(proc, V2)
    keep = Q2 >= V2[proc.choice_state()] - tol
    sub = _with_reward(proc.restrict(keep), proc.victim_reward[keep])
    V1, _ = sparse.solve_finite(sub, -np.ones(proc.n_states))
    return float(proc.init @ V2), float(proc.init @ V1)


def enumerate_defense_oracle(
    M: TabularPOMDP,
    B: AttackConstraints,
    g: AttackerObjective,
    limit: int = 10**5,
    tol: float = BR_TOL,
) -> float:
    """Max over deterministic Markovian victim policies of the worst victim
    value among the attacker's best responses. Test oracle only."""
    if not M.finite:
        raise NotFiniteHorizon("the defense oracle needs a finite horizon")
    total = victim_policy_count(M)
    if total > limit:
        raise TooLarge(total, limit)
    H, O, A = M.horizon, M.n_obs, M.n_actions
    if M.fully_observable:
        choices = [np.flatnonzero(M.available[o]) for o in range(O)]
    else:
        choices = [np.arange(A)] * O
    eye = np.eye(A)
    best = -np.inf
    for combo in itertools.product(*(choices * H)):
        pi = VictimPolicy(eye[np.asarray(combo).reshape(H, O)])
        _, v1 = worst_best_response(build_meta_mdp(M, pi, B, g), tol)
        best = max(best, v1)
    return best
