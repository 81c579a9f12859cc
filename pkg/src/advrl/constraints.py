"""Attacker capabilities: per-subtime feasibility sets and the attacker's reward.

Feasibility sets are dense boolean masks keyed by the within-step tuple seen
so far (post-attack components):

* ``state_sets[s, s']``            state attack at s
* ``obs_sets[s, o, o']``           observation attack at (s, o)
* ``action_sets[s, o, a, a']``     action attack at (s, o, a)
* ``reward_sets[s, o, a, r, r']``  reward attack at (s, o, a, r), r as support indices
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

from .errors import DimensionMismatch, EmptyFeasibleSet, ModelError
from .mdp import TabularPOMDP, VictimPolicy

SURFACES = ("state", "observation", "action", "reward")


@dataclass
class AttackConstraints:
    state_sets: np.ndarray
    obs_sets: np.ndarray
    action_sets: np.ndarray
    reward_sets: np.ndarray
    toggles: tuple = (False, False, False, False)

    @property
    def masks(self) -> tuple:
        return (self.state_sets, self.obs_sets, self.action_sets, self.reward_sets)

    def active(self, surface: str) -> bool:
        """True when the surface offers at least one non-identity choice."""
        mask = self.masks[SURFACES.index(surface)]
        return bool(np.any(mask.sum(axis=-1) > 1))

    def enabled(self, surface: str) -> bool:
        """True when a rule other than "disabled" was given for the surface."""
        return bool(self.toggles[SURFACES.index(surface)]) or self.active(surface)

    @property
    def active_surfaces(self) -> list:
        return [name for name in SURFACES if self.active(name)]

    def feasible(self, tag: int, s: int, o: int = -1, a: int = -1, r: int = -1) -> np.ndarray:
        """Sorted feasible elements at a meta-state with subtime ``tag`` (0..3)."""
        if tag == 0:
            row = self.state_sets[s]
        elif tag == 1:
            row = self.obs_sets[s, o]
        elif tag == 2:
            row = self.action_sets[s, o, a]
        else:
            row = self.reward_sets[s, o, a, r]
        return np.flatnonzero(row)

    def shape_matches(self, M: TabularPOMDP) -> bool:
        S, O, A, R = M.n_states, M.n_obs, M.n_actions, M.n_rewards
        return (
            self.state_sets.shape == (S, S)
            and self.obs_sets.shape == (S, O, O)
            and self.action_sets.shape == (S, O, A, A)
            and self.reward_sets.shape == (S, O, A, R, R)
        )

    def contains(self, other: "AttackConstraints") -> bool:
        """Pointwise superset check."""
        return all(np.all(mine >= theirs) for mine, theirs in zip(self.masks, other.masks))

    def to_dict(self) -> dict:
        out = {}
        for name, on, mask in zip(SURFACES, self.toggles, self.masks):
            if not on:
                out[name] = "disabled"
                continue
            explicit = {}
            for idx in np.ndindex(mask.shape[:-1]):
                row = np.flatnonzero(mask[idx])
                if row.size > 1:
                    explicit[",".join(str(i) for i in idx)] = row.tolist()
            out[name] = {"explicit": explicit}
        return out


def _identity(n_lead: tuple, n: int, axis_of_identity: int) -> np.ndarray:
    """Mask with ``mask[..., x] = (x == lead[axis_of_identity])``."""
    shape = [1] * len(n_lead)
    shape[axis_of_identity] = n_lead[axis_of_identity]
    lead_idx = np.arange(n_lead[axis_of_identity]).reshape(shape + [1])
    return np.broadcast_to(lead_idx == np.arange(n), n_lead + (n,)).copy()


def identity_constraints(M: TabularPOMDP) -> AttackConstraints:
    return build_constraints({}, M)


def _surface_shape(M, surface):
    S, O, A, R = M.n_states, M.n_obs, M.n_actions, M.n_rewards
    return {
        "state": ((S,), S, 0),
        "observation": ((S, O), O, 1),
        "action": ((S, O, A), A, 2),
        "reward": ((S, O, A, R), R, 3),
    }[surface]


def _parse_key(key, n_lead):
    if isinstance(key, str):
        parts = [p for p in key.replace("(", "").replace(")", "").split(",") if p.strip()]
        idx = tuple(int(p) for p in parts)
    else:
        idx = tuple(int(k) for k in np.atleast_1d(key))
    if len(idx) != n_lead:
        raise DimensionMismatch(f"constraint key {key!r} should have {n_lead} components")
    return idx


def build_constraints(rules: Mapping[str, Any] | None, M: TabularPOMDP) -> AttackConstraints:
    """Materialize feasibility masks from per-surface rules.

    Each rule is ``"disabled"`` (default), ``"identity"``, ``"all"``, an
    explicit mapping ``{"explicit": {key: [elements]}}`` keyed by the
    pre-attack tuple (unlisted tuples get the identity), or a boolean mask of
    the full shape. The identity element is always added; a rule that yields
    an empty set triggers an :class:`EmptyFeasibleSet` warning first.
    ``"all"`` on the action surface means the actions available at s.
    """
    rules = dict(rules or {})
    unknown = set(rules) - set(SURFACES)
    if unknown:
        raise ModelError(f"unknown attack surface(s): {sorted(unknown)}")
    masks, toggles = [], []
    for surface in SURFACES:
        lead, n, id_axis = _surface_shape(M, surface)
        ident = _identity(lead, n, id_axis)
        rule = rules.get(surface, "disabled")
        if rule is None or rule is False or (isinstance(rule, str) and rule == "disabled"):
            masks.append(ident)
            toggles.append(False)
            continue
        if isinstance(rule, str) and rule == "identity":
            mask = ident.copy()
        elif (isinstance(rule, str) and rule == "all") or rule is True:
            mask = np.ones(lead + (n,), dtype=bool)
            if surface == "action":
                mask &= M.available[:, None, None, :]
        elif isinstance(rule, str):
            raise ModelError(f"unknown constraint rule {rule!r} for the {surface} surface")
        elif isinstance(rule, Mapping) and "explicit" in rule:
            mask = ident.copy()
            for key, elems in rule["explicit"].items():
                idx = _parse_key(key, len(lead))
                if any(not 0 <= i < m for i, m in zip(idx, lead)):
                    raise DimensionMismatch(f"constraint key {key!r} out of range")
                row = np.zeros(n, dtype=bool)
                elems = np.asarray(elems, dtype=int).reshape(-1)
                if elems.size and (elems.min() < 0 or elems.max() >= n):
                    raise DimensionMismatch(f"constraint set for {key!r} out of range")
                row[elems] = True
                mask[idx] = row
        else:
            mask = np.array(rule, dtype=bool)
            if mask.shape != lead + (n,):
                raise DimensionMismatch(f"{surface} mask must have shape {lead + (n,)}")
        empty = ~mask.any(axis=-1)
        if empty.any():
            where = tuple(int(i) for i in np.argwhere(empty)[0])
            warnings.warn(
                f"{surface} rule gives an empty set at {where}; adding the identity",
                EmptyFeasibleSet,
                stacklevel=2,
            )
        masks.append(mask | ident)
        toggles.append(True)
    return AttackConstraints(*masks, toggles=tuple(toggles))


# ---------------------------------------------------------------- objective


@dataclass
class AttackerObjective:
    """Attacker reward g(s, a, r) with r a reward support index."""

    kind: str
    target: np.ndarray | None = None  # policy teaching: action per state, [s] or [h, s]
    table: np.ndarray | None = None  # custom: [s, a, r] or [h, s, a, r]

    @classmethod
    def negate_reward(cls) -> "AttackerObjective":
        return cls("negate_reward")

    @classmethod
    def policy_teaching(cls, target) -> "AttackerObjective":
        if isinstance(target, VictimPolicy):
            if not target.deterministic:
                raise ModelError("policy-teaching target must be deterministic")
            target = np.argmax(target.table, axis=-1)
        return cls("policy_teaching", target=np.asarray(target, dtype=int))

    @classmethod
    def custom(cls, table) -> "AttackerObjective":
        return cls("custom_table", table=np.asarray(table, dtype=float))

    def values(self, M: TabularPOMDP) -> np.ndarray:
        """Dense ``g[h, s, a, r]`` with ``M.n_steps`` layers."""
        H, S, A, R = M.n_steps, M.n_states, M.n_actions, M.n_rewards
        if self.kind == "negate_reward":
            g = np.broadcast_to(-M.reward_support, (H, S, A, R))
        elif self.kind == "policy_teaching":
            tgt = self.target
            if tgt.ndim == 1:
                tgt = np.broadcast_to(tgt, (H, S))
            if tgt.shape != (H, S):
                raise DimensionMismatch("policy-teaching target does not match the model")
            g = (np.arange(A)[None, None, :] == tgt[:, :, None]).astype(float)
            g = np.broadcast_to(g[..., None], (H, S, A, R))
        elif self.kind == "custom_table":
            tab = self.table
            if tab.ndim == 3:
                tab = np.broadcast_to(tab, (H,) + tab.shape)
            if tab.shape != (H, S, A, R):
                raise DimensionMismatch(f"custom objective must be [s][a][r] = {(S, A, R)}")
            if not np.all(np.isfinite(tab)):
                raise ModelError("custom objective must be finite")
            g = tab
        else:
            raise ModelError(f"unknown objective kind {self.kind!r}")
        return np.ascontiguousarray(g, dtype=float)

    @property
    def stationary(self) -> bool:
        if self.kind == "policy_teaching":
            return self.target.ndim == 1
        if self.kind == "custom_table":
            return self.table.ndim == 3
        return True

    def is_zero_sum(self, M: TabularPOMDP) -> bool:
        g = self.values(M)
        return bool(np.array_equal(g, np.broadcast_to(-M.reward_support, g.shape)))

    def to_dict(self) -> dict:
        if self.kind == "negate_reward":
            return {"kind": self.kind}
        if self.kind == "policy_teaching":
            return {"kind": self.kind, "target": self.target.tolist()}
        return {"kind": self.kind, "table": self.table.tolist()}


def load_objective(raw) -> AttackerObjective:
    if raw is None or raw == "negate_reward":
        return AttackerObjective.negate_reward()
    if isinstance(raw, AttackerObjective):
        return raw
    kind = raw.get("kind")
    if kind == "negate_reward":
        return AttackerObjective.negate_reward()
    if kind == "policy_teaching":
        return AttackerObjective.policy_teaching(raw["target"])
    if kind == "custom_table":
        return AttackerObjective.custom(raw["table"])
    raise ModelError(f"unknown objective kind {kind!r}")
