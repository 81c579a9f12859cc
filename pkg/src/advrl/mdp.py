"""Tabular POMDP model, victim policies and the single-agent solvers.

Kernels are stored as dense numpy arrays. A model is either discounted
(``gamma < 1``, stationary kernels) or finite-horizon (``horizon`` set,
undiscounted, kernels optionally carrying a leading time axis).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .errors import (
    DimensionMismatch,
    ModeAmbiguous,
    ModelError,
    NegativeProbability,
    NotFiniteHorizon,
    NotFullyObservable,
    RowNotStochastic,
)

ROW_TOL = 1e-9
NEG_TOL = 1e-12


def first_argmax(q, axis=-1, rel_tol=1e-12):
    """Lowest index whose value is within ``rel_tol`` of the maximum.

    ``-inf`` entries (masked actions) are never selected unless a whole row
    is masked.
    """
    q = np.asarray(q, dtype=float)
    best = np.max(q, axis=axis, keepdims=True)
    tol = rel_tol * np.maximum(1.0, np.abs(np.where(np.isfinite(best), best, 0.0)))
    return np.argmax(q >= best - tol, axis=axis)


@dataclass
class TabularPOMDP:
    transition: np.ndarray  # [s, a, s'] or [h, s, a, s']
    reward_dist: np.ndarray  # [s, a, r] or [h, s, a, r]
    obs_dist: np.ndarray  # [s, o] or [h, s, o]
    reward_support: np.ndarray
    mu: np.ndarray
    gamma: float | None = None
    horizon: int | None = None
    available: np.ndarray | None = None  # bool [s, a]
    state_names: list | None = None
    obs_names: list | None = None
    action_names: list | None = None

    @property
    def n_states(self) -> int:
        return self.transition.shape[-1]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[-2]

    @property
    def n_obs(self) -> int:
        return self.obs_dist.shape[-1]

    @property
    def n_rewards(self) -> int:
        return self.reward_support.shape[0]

    @property
    def finite(self) -> bool:
        return self.horizon is not None

    @property
    def discount(self) -> float:
        return 1.0 if self.finite else float(self.gamma)

    @property
    def n_steps(self) -> int:
        """Number of distinct time layers (``horizon`` or 1)."""
        return self.horizon if self.finite else 1

    def P(self, h: int = 0) -> np.ndarray:
        return self.transition[h] if self.transition.ndim == 4 else self.transition

    def R(self, h: int = 0) -> np.ndarray:
        return self.reward_dist[h] if self.reward_dist.ndim == 4 else self.reward_dist

    def O(self, h: int = 0) -> np.ndarray:
        return self.obs_dist[h] if self.obs_dist.ndim == 3 else self.obs_dist

    def expected_reward(self, h: int = 0) -> np.ndarray:
        return self.R(h) @ self.reward_support

    @property
    def time_varying(self) -> bool:
        return self.transition.ndim == 4 or self.reward_dist.ndim == 4 or self.obs_dist.ndim == 3

    @property
    def fully_observable(self) -> bool:
        if self.n_obs != self.n_states:
            return False
        eye = np.eye(self.n_states)
        return all(np.array_equal(self.O(h), eye) for h in range(self.n_steps))

    @property
    def deterministic_rewards(self) -> bool:
        return bool(np.all(np.isclose(self.reward_dist.max(axis=-1), 1.0, rtol=0, atol=1e-12)))

    @property
    def r_max(self) -> float:
        return float(np.max(np.abs(self.reward_support)))

    def actions_at(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.available[s])

    def reward_index(self, h: int, s: int, a: int) -> int:
        """Support index of a deterministic reward."""
        return int(np.argmax(self.R(h)[s, a]))

    def to_dict(self) -> dict:
        out = {
            "states": self.state_names if self.state_names is not None else self.n_states,
            "observations": self.obs_names if self.obs_names is not None else self.n_obs,
            "actions": self.action_names if self.action_names is not None else self.n_actions,
            "reward_support": self.reward_support.tolist(),
            "transition": self.transition.tolist(),
            "reward_dist": self.reward_dist.tolist(),
            "obs_dist": self.obs_dist.tolist(),
        }
        if self.finite:
            out["horizon"] = int(self.horizon)
        else:
            out["gamma"] = float(self.gamma)
        out["mu"] = self.mu.tolist()
        if not self.available.all():
            out["available"] = self.available.astype(int).tolist()
        return out


def _names(value, n=None):
    if value is None or isinstance(value, (int, np.integer)):
        return None
    return list(value)


def _check_rows(name, arr):
    neg = arr < -NEG_TOL
    if neg.any():
        loc = tuple(int(i) for i in np.argwhere(neg)[0])
        raise NegativeProbability((name, loc), float(arr[loc]))
    arr = np.clip(arr, 0.0, None)
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > ROW_TOL
    if bad.any():
        loc = tuple(int(i) for i in np.argwhere(bad)[0])
        raise RowNotStochastic((name, loc), sums[loc])
    return arr / sums[..., None]


def validate_pomdp(raw: Mapping[str, Any] | TabularPOMDP) -> TabularPOMDP:
    """Check every model invariant and return a canonical copy.

    Accepts either a parsed environment file (dict) or a model instance.
    Rows within 1e-9 of stochastic are renormalized to sum to one; the
    reward support is sorted (duplicate values merged).
    """
    if isinstance(raw, TabularPOMDP):
        raw = {
            "transition": raw.transition,
            "reward_dist": raw.reward_dist,
            "obs_dist": raw.obs_dist,
            "reward_support": raw.reward_support,
            "mu": raw.mu,
            "gamma": raw.gamma,
            "horizon": raw.horizon,
            "available": raw.available,
            "states": raw.state_names,
            "observations": raw.obs_names,
            "actions": raw.action_names,
        }
    try:
        P = np.array(raw["transition"], dtype=float)
        Rd = np.array(raw["reward_dist"], dtype=float)
        Od = np.array(raw["obs_dist"], dtype=float)
        support = np.array(raw["reward_support"], dtype=float).reshape(-1)
        mu = np.array(raw.get("mu", raw.get("initial_dist")), dtype=float).reshape(-1)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"malformed environment description: {exc}") from exc

    gamma = raw.get("gamma")
    horizon = raw.get("horizon")
    if horizon is not None:
        horizon = int(horizon)
        if horizon < 1:
            raise ModelError(f"horizon must be positive, got {horizon}")
        if gamma is not None and float(gamma) < 1.0:
            raise ModeAmbiguous("both a discount < 1 and a horizon were given")
        gamma = None
    else:
        if gamma is None or not (0.0 <= float(gamma) < 1.0):
            raise ModeAmbiguous("need either a discount in [0, 1) or a finite horizon")
        gamma = float(gamma)

    if P.ndim not in (3, 4) or Rd.ndim not in (3, 4) or Od.ndim not in (2, 3):
        raise DimensionMismatch("kernels have the wrong number of axes")
    for name, arr, nd in (("transition", P, 4), ("reward_dist", Rd, 4), ("obs_dist", Od, 3)):
        if arr.ndim == nd:
            if horizon is None:
                raise DimensionMismatch(f"time-indexed {name} requires a finite horizon")
            if arr.shape[0] != horizon:
                raise DimensionMismatch(f"{name} has {arr.shape[0]} layers, horizon is {horizon}")
    S, A = P.shape[-3], P.shape[-2]
    if P.shape[-1] != S:
        raise DimensionMismatch("transition must be [s][a][s']")
    if Rd.shape[-3:-1] != (S, A):
        raise DimensionMismatch("reward_dist must be [s][a][r]")
    if Rd.shape[-1] != support.shape[0]:
        raise DimensionMismatch("reward_dist last axis must match reward_support")
    if Od.shape[-2] != S:
        raise DimensionMismatch("obs_dist must be [s][o]")
    if mu.shape[0] != S:
        raise DimensionMismatch("mu must be a distribution over states")
    if not np.all(np.isfinite(support)):
        raise ModelError("reward support values must be finite reals")

    P = _check_rows("transition", P)
    Rd = _check_rows("reward_dist", Rd)
    Od = _check_rows("obs_dist", Od)
    mu = _check_rows("mu", mu)

    # canonical reward ordering: strictly increasing, duplicates merged
    uniq, inverse = np.unique(support, return_inverse=True)
    if uniq.shape[0] != support.shape[0] or not np.array_equal(uniq, support):
        merged = np.zeros(Rd.shape[:-1] + (uniq.shape[0],))
        for j, k in enumerate(inverse.reshape(-1)):
            merged[..., k] += Rd[..., j]
        Rd, support = merged, uniq

    avail = raw.get("available")
    if avail is None:
        avail = np.ones((S, A), dtype=bool)
    else:
        avail = np.array(avail, dtype=bool)
        if avail.shape != (S, A):
            raise DimensionMismatch("available must be [s][a]")
        if not avail.any(axis=1).all():
            raise ModelError("every state needs at least one available action")

    return TabularPOMDP(
        transition=P,
        reward_dist=Rd,
        obs_dist=Od,
        reward_support=support,
        mu=mu,
        gamma=gamma,
        horizon=horizon,
        available=avail,
        state_names=_names(raw.get("states")),
        obs_names=_names(raw.get("observations")),
        action_names=_names(raw.get("actions")),
    )


@dataclass
class VictimPolicy:
    """Observation-to-action-distribution map, optionally time indexed."""

    table: np.ndarray  # [o, a] or [h, o, a]

    @property
    def kind(self) -> str:
        return "time_indexed" if self.table.ndim == 3 else "stationary"

    @property
    def n_obs(self) -> int:
        return self.table.shape[-2]

    @property
    def n_actions(self) -> int:
        return self.table.shape[-1]

    @property
    def deterministic(self) -> bool:
        return bool(np.all(np.isclose(self.table.max(axis=-1), 1.0, rtol=0, atol=1e-12)))

    def probs(self, h: int = 0) -> np.ndarray:
        return self.table[h] if self.table.ndim == 3 else self.table

    def action(self, h: int, o: int) -> int:
        return int(np.argmax(self.probs(h)[o]))

    def layered(self, n_steps: int) -> np.ndarray:
        """Table broadcast to ``[n_steps, o, a]``."""
        if self.table.ndim == 3:
            if self.table.shape[0] < n_steps:
                raise DimensionMismatch("time-indexed policy is shorter than the horizon")
            return self.table[:n_steps]
        return np.broadcast_to(self.table, (n_steps,) + self.table.shape)

    @classmethod
    def from_actions(cls, actions, n_actions: int) -> "VictimPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_actions)[actions])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "table": self.table.tolist()}


def validate_policy(raw, M: TabularPOMDP | None = None) -> VictimPolicy:
    if isinstance(raw, VictimPolicy):
        table = raw.table
        kind = raw.kind
    else:
        table = np.array(raw["table"], dtype=float)
        kind = raw.get("kind", "time_indexed" if table.ndim == 3 else "stationary")
    table = np.array(table, dtype=float)
    expected_nd = 3 if kind == "time_indexed" else 2
    if kind not in ("stationary", "time_indexed") or table.ndim != expected_nd:
        raise DimensionMismatch(f"policy of kind {kind!r} has {table.ndim} axes")
    table = _check_rows("policy", table)
    if M is not None:
        if table.shape[-2:] != (M.n_obs, M.n_actions):
            raise DimensionMismatch(
                f"policy is over {table.shape[-2:]} (obs, actions), model has {(M.n_obs, M.n_actions)}"
            )
        if table.ndim == 3:
            if not M.finite:
                raise DimensionMismatch("time-indexed policy needs a finite-horizon model")
            if table.shape[0] != M.horizon:
                raise DimensionMismatch("time-indexed policy length differs from the horizon")
    return VictimPolicy(table)


@dataclass
class ValueTable:
    """Values per state; finite-horizon tables carry H+1 layers, the last zero."""

    values: np.ndarray

    @property
    def layered(self) -> bool:
        return self.values.ndim == 2

    def at(self, h: int = 0) -> np.ndarray:
        return self.values[h] if self.layered else self.values

    def start_value(self, mu) -> float:
        return float(self.at(0) @ np.asarray(mu))


def _policy_chain(M, pi, h):
    """Per-state expected reward and state-to-state kernel under pi at step h."""
    act = M.O(h) @ pi.probs(h)  # [s, a]: prob of playing a in state s
    r = np.einsum("sa,sa->s", act, M.expected_reward(h))
    K = np.einsum("sa,sat->st", act, M.P(h))
    return r, K


def _check_pair(M, pi):
    if pi.table.shape[-2:] != (M.n_obs, M.n_actions):
        raise DimensionMismatch("policy observation/action sets differ from the model's")
    if pi.kind == "time_indexed" and not M.finite:
        raise DimensionMismatch("time-indexed policy needs a finite-horizon model")


def evaluate_policy(M: TabularPOMDP, pi: VictimPolicy) -> ValueTable:
    _check_pair(M, pi)
    if M.finite:
        V = np.zeros((M.horizon + 1, M.n_states))
        for h in range(M.horizon - 1, -1, -1):
            r, K = _policy_chain(M, pi, h)
            V[h] = r + K @ V[h + 1]
        return ValueTable(V)
    r, K = _policy_chain(M, pi, 0)
    V = np.linalg.solve(np.eye(M.n_states) - M.gamma * K, r)
    return ValueTable(V)


def bellman_residual(M: TabularPOMDP, pi: VictimPolicy, vt: ValueTable) -> float:
    """Max violation of the policy's fixed-point equations."""
    if M.finite:
        worst = 0.0
        for h in range(M.horizon):
            r, K = _policy_chain(M, pi, h)
            worst = max(worst, float(np.max(np.abs(vt.at(h) - r - K @ vt.at(h + 1)))))
        return worst
    r, K = _policy_chain(M, pi, 0)
    return float(np.max(np.abs(vt.values - r - M.gamma * K @ vt.values)))


def _require_fo(M):
    if not M.fully_observable:
        raise NotFullyObservable("solver needs identity observations (O = S)")


def _masked_q(M, h, V_next, gamma):
    Q = M.expected_reward(h) + gamma * (M.P(h) @ V_next)
    return np.where(M.available, Q, -np.inf)


def value_iteration(M: TabularPOMDP, eps: float = 1e-8) -> tuple[ValueTable, VictimPolicy]:
    """Value iteration for a fully observable discounted model.

    Stops once successive iterates are within eps(1-gamma)/(2 gamma) in
    sup norm, so the greedy policy is eps-optimal.
    """
    _require_fo(M)
    if M.finite:
        raise ModelError("value_iteration is for discounted models; use backward_induction")
    if eps <= 0:
        raise ModelError("eps must be positive")
    gamma = M.gamma
    thresh = np.inf if gamma == 0 else eps * (1 - gamma) / (2 * gamma)
    V = np.zeros(M.n_states)
    while True:
        V_new = _masked_q(M, 0, V, gamma).max(axis=1)
        gap = np.max(np.abs(V_new - V))
        V = V_new
        if gap <= thresh:
            break
    actions = first_argmax(_masked_q(M, 0, V, gamma), axis=1)
    return ValueTable(V), VictimPolicy.from_actions(actions, M.n_actions)


def backward_induction(M: TabularPOMDP) -> tuple[ValueTable, VictimPolicy]:
    _require_fo(M)
    if not M.finite:
        raise NotFiniteHorizon("backward_induction needs a finite-horizon model")
    H = M.horizon
    V = np.zeros((H + 1, M.n_states))
    actions = np.zeros((H, M.n_states), dtype=int)
    for h in range(H - 1, -1, -1):
        Q = _masked_q(M, h, V[h + 1], 1.0)
        actions[h] = first_argmax(Q, axis=1)
        V[h] = Q[np.arange(M.n_states), actions[h]]
    return ValueTable(V), VictimPolicy.from_actions(actions, M.n_actions)


def make_pomdp(
    transition,
    rewards=None,
    *,
    reward_dist=None,
    reward_support=None,
    obs_dist=None,
    mu=None,
    gamma=None,
    horizon=None,
    available=None,
) -> TabularPOMDP:
    """Convenience constructor.

    ``rewards`` gives a deterministic reward table ``[s, a]`` (or
    ``[h, s, a]``); the support and one-hot reward distribution are derived
    from it. Observations default to the identity.
    """
    P = np.asarray(transition, dtype=float)
    S = P.shape[-1]
    if rewards is not None:
        rewards = np.asarray(rewards, dtype=float)
        support, idx = np.unique(rewards, return_inverse=True)
        reward_dist = np.eye(len(support))[idx.reshape(rewards.shape)]
        reward_support = support
    if obs_dist is None:
        obs_dist = np.eye(S)
    if mu is None:
        mu = np.eye(S)[0]
    return validate_pomdp(
        {
            "transition": P,
            "reward_dist": reward_dist,
            "reward_support": reward_support,
            "obs_dist": obs_dist,
            "mu": mu,
            "gamma": gamma,
            "horizon": horizon,
            "available": available,
        }
    )
