"""Linear meta-MDP features from linear environment and policy components.

If the model and the victim policy factor as

    O(o|s) = <phi(s), obs_w(o)>        pi(a|o) = <psi(o), act_w(a)>
    R(r|s,a) = <phi(s,a), rew_w(r)>    P(s'|s,a) = <phi(s,a), next_w(s')>

then every meta-transition is one of these inner products, so the
meta-MDP is linear with one extra coordinate carrying the attacker reward.
Vectors shorter than ``d = max(d_M, d_pi)`` are padded with trailing zeros,
then a leading reward coordinate is added (``d_bar = d + 1``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import AttackerObjective
from .errors import DimensionMismatch, MismatchedInstances, ModelError, NegativeProbability, RowNotStochastic
from .mdp import TabularPOMDP, VictimPolicy, validate_pomdp
from .meta import MetaMDP, Tag

NEG_TOL = 1e-12
SUM_TOL = 1e-9


@dataclass
class LinearComponents:
    state_feat: np.ndarray  # [S, d_M]
    obs_weight: np.ndarray  # [O, d_M]
    obs_feat: np.ndarray  # [O, d_pi]
    act_weight: np.ndarray  # [A, d_pi]
    sa_feat: np.ndarray  # [S, A, d_M]
    rew_weight: np.ndarray  # [R, d_M]
    next_weight: np.ndarray  # [S, d_M]
    reward_support: np.ndarray  # [R], strictly increasing

    @property
    def d_M(self) -> int:
        return self.state_feat.shape[1]

    @property
    def d_pi(self) -> int:
        return self.obs_feat.shape[1]

    @property
    def sizes(self) -> tuple:
        return (self.state_feat.shape[0], self.obs_weight.shape[0], self.act_weight.shape[0],
                self.rew_weight.shape[0])

    def kernels(self):
        O = self.state_feat @ self.obs_weight.T
        pi = self.obs_feat @ self.act_weight.T
        R = self.sa_feat @ self.rew_weight.T
        P = self.sa_feat @ self.next_weight.T
        return O, pi, R, P

    def validate(self) -> "LinearComponents":
        S, O, A, R = self.sizes
        dM, dp = self.d_M, self.d_pi
        shapes = {
            "obs_weight": (self.obs_weight, (O, dM)),
            "sa_feat": (self.sa_feat, (S, A, dM)),
            "rew_weight": (self.rew_weight, (R, dM)),
            "next_weight": (self.next_weight, (S, dM)),
            "act_weight": (self.act_weight, (A, dp)),
            "obs_feat": (self.obs_feat, (O, dp)),
            "reward_support": (self.reward_support, (R,)),
        }
        for name, (arr, shape) in shapes.items():
            if arr.shape != shape:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {shape}")
        if np.any(np.diff(self.reward_support) <= 0):
            raise ModelError("reward support must be strictly increasing")
        for name, k in zip(("observation", "policy", "reward", "transition"), self.kernels()):
            if np.any(k < -NEG_TOL):
                loc = tuple(int(i) for i in np.argwhere(k < -NEG_TOL)[0])
                raise NegativeProbability((name, loc), float(k[loc]))
            sums = k.sum(axis=-1)
            bad = np.abs(sums - 1) > SUM_TOL
            if bad.any():
                loc = tuple(int(i) for i in np.argwhere(bad)[0])
                raise RowNotStochastic((name, loc), sums[loc])
        return self

    def induced_model(self, gamma=None, horizon=None, mu=None) -> TabularPOMDP:
        O, _, R, P = self.kernels()
        S = P.shape[0]
        if gamma is None and horizon is None:
            gamma = 0.9
        return validate_pomdp({
            "transition": P, "reward_dist": R, "obs_dist": O,
            "reward_support": self.reward_support,
            "mu": np.full(S, 1.0 / S) if mu is None else mu,
            "gamma": gamma, "horizon": horizon,
        })

    def induced_policy(self) -> VictimPolicy:
        _, pi, _, _ = self.kernels()
        pi = np.clip(pi, 0.0, None)
        return VictimPolicy(pi / pi.sum(axis=-1, keepdims=True))

    @classmethod
    def random(cls, rng, S, O, A, R, d_M, d_pi, sparsity: float = 0.0) -> "LinearComponents":
        """Simplex features with distribution-valued weight columns."""

        def simplex_rows(n, d):
            return rng.dirichlet(np.ones(d), size=n)

        def dist_columns(n, d):
            w = rng.dirichlet(np.ones(n), size=d).T  # [n, d], columns sum to 1
            if sparsity > 0:
                drop = rng.random(w.shape) < sparsity
                drop[np.argmax(w, axis=0), np.arange(d)] = False
                w = np.where(drop, 0.0, w)
                w /= w.sum(axis=0, keepdims=True)
            return w

        return cls(
            state_feat=simplex_rows(S, d_M),
            obs_weight=dist_columns(O, d_M),
            obs_feat=simplex_rows(O, d_pi),
            act_weight=dist_columns(A, d_pi),
            sa_feat=simplex_rows(S * A, d_M).reshape(S, A, d_M),
            rew_weight=dist_columns(R, d_M),
            next_weight=dist_columns(S, d_M),
            reward_support=np.sort(rng.choice(np.arange(-5, 6), size=R, replace=False)).astype(float),
        )

    @classmethod
    def from_tabular(cls, M: TabularPOMDP, pi: VictimPolicy) -> "LinearComponents":
        """Indicator embedding: d_M = |S||A|, d_pi = |O|."""
        if M.time_varying or pi.kind != "stationary":
            raise ModelError("the indicator embedding needs stationary kernels")
        S, O, A, R = M.n_states, M.n_obs, M.n_actions, M.n_rewards
        d = S * A
        state_feat = np.zeros((S, d))
        state_feat[np.arange(S), np.arange(S) * A] = 1.0
        obs_weight = np.zeros((O, d))
        obs_weight[:, np.arange(S) * A] = M.O().T
        sa_feat = np.eye(d).reshape(S, A, d)
        return cls(
            state_feat=state_feat,
            obs_weight=obs_weight,
            obs_feat=np.eye(O),
            act_weight=pi.table.T.copy(),
            sa_feat=sa_feat,
            rew_weight=M.R().reshape(d, R).T.copy(),
            next_weight=M.P().reshape(d, S).T.copy(),
            reward_support=M.reward_support.copy(),
        )

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, raw: dict) -> "LinearComponents":
        try:
            return cls(**{k: np.asarray(raw[k], dtype=float) for k in cls.__dataclass_fields__})
        except KeyError as exc:
            raise ModelError(f"linear components file lacks {exc}") from exc


@dataclass
class MetaFeatures:
    """Feature maps of the meta-MDP: ``feat(key, x)`` and ``next_vec(key)``."""

    lc: LinearComponents
    g: np.ndarray  # stationary attacker reward [s, a, r]
    d: int
    d_bar: int

    @property
    def theta(self) -> np.ndarray:
        e = np.zeros(self.d_bar)
        e[0] = 1.0
        return e

    def _lift(self, v, first=0.0):
        v = np.asarray(v, dtype=float)
        out = np.zeros(v.shape[:-1] + (self.d_bar,))
        out[..., 0] = first
        out[..., 1 : 1 + v.shape[-1]] = v
        return out

    def feat(self, ms, x):
        lc = self.lc
        tag = Tag(ms.tag)
        if tag == Tag.STATE:
            return self._lift(lc.state_feat[x])
        if tag == Tag.OBS:
            return self._lift(lc.obs_feat[x])
        if tag == Tag.ACTION:
            return self._lift(lc.sa_feat[ms.s, x])
        return self._lift(lc.sa_feat[ms.s, ms.a], self.g[ms.s, ms.a, x])

    def next_vec(self, ms):
        lc = self.lc
        tag = Tag(ms.tag)
        if tag == Tag.OBS:
            return self._lift(lc.obs_weight[ms.o])
        if tag == Tag.ACTION:
            return self._lift(lc.act_weight[ms.a])
        if tag == Tag.REWARD:
            return self._lift(lc.rew_weight[ms.r])
        return self._lift(lc.next_weight[ms.s])


def build_meta_features(lc: LinearComponents, g: AttackerObjective, validate: bool = True) -> MetaFeatures:
    if validate:
        lc.validate()
    if not g.stationary:
        raise ModelError("time-dependent attacker rewards are not lifted to features")
    S, O, A, R = lc.sizes
    if g.kind == "negate_reward":
        gt = np.broadcast_to(-lc.reward_support, (S, A, R)).copy()
    elif g.kind == "policy_teaching":
        gt = np.broadcast_to((np.arange(A)[None, :] == g.target[:, None])[..., None], (S, A, R)).astype(float)
    else:
        gt = np.asarray(g.table, dtype=float)
        if gt.shape != (S, A, R):
            raise DimensionMismatch("custom objective does not match the components")
    d = max(lc.d_M, lc.d_pi)
    mf = MetaFeatures(lc, gt, d, d + 1)
    assert mf.d_bar == max(lc.d_M, lc.d_pi) + 1
    return mf


def verify_linear_consistency(mf: MetaFeatures, meta: MetaMDP) -> dict:
    """Compare feature inner products with the tabular meta-MDP.

    For every materialized (meta-state, meta-action) pair and every
    successor tuple consistent with it (same carried components and time),
    ``|<feat, next_vec> - P_bar|`` is measured; the reward check compares
    ``<feat, theta>`` with the meta reward. Edges to structurally
    inconsistent tuples count in full as transition error.
    """
    if meta.kind != "full":
        raise MismatchedInstances("verification needs a full meta-MDP")
    M = meta.model
    if (M.n_states, M.n_obs, M.n_actions, M.n_rewards) != mf.lc.sizes:
        raise MismatchedInstances(
            f"meta-MDP sizes {(M.n_states, M.n_obs, M.n_actions, M.n_rewards)} "
            f"differ from the components' {mf.lc.sizes}"
        )
    if not np.allclose(M.reward_support, mf.lc.reward_support, rtol=0, atol=0):
        raise MismatchedInstances("reward supports differ")
    from .meta import MetaState

    proc = meta.proc
    H = M.horizon if M.finite else None
    S, O, A, R = mf.lc.sizes
    theta = mf.theta
    t_err = 0.0
    r_err = 0.0
    for i, (h, ms) in enumerate(proc.keys):
        tag = Tag(ms.tag)
        for c in proc.choices(i):
            x = int(proc.choice_action[c])
            f = mf.feat(ms, x)
            r_err = max(r_err, abs(float(f @ theta) - float(proc.reward[c])))
            if tag == Tag.STATE:
                cands = [(h, MetaState(Tag.OBS, x, o)) for o in range(O)]
            elif tag == Tag.OBS:
                cands = [(h, MetaState(Tag.ACTION, ms.s, x, a)) for a in range(A)]
            elif tag == Tag.ACTION:
                cands = [(h, MetaState(Tag.REWARD, ms.s, ms.o, x, r)) for r in range(R)]
            elif H is not None and h + 1 >= H:
                cands = []
            else:
                nh = h + 1 if H is not None else 0
                cands = [(nh, MetaState(Tag.STATE, sp)) for sp in range(S)]
            nxt, prob = proc.edges(c)
            actual = {proc.keys[j]: p for j, p in zip(nxt, prob)}
            for key in cands:
                pred = float(f @ mf.next_vec(key[1]))
                t_err = max(t_err, abs(pred - actual.pop(key, 0.0)))
            for p in actual.values():
                t_err = max(t_err, abs(p))
    return {"max_abs_transition_error": t_err, "max_abs_reward_error": r_err}
