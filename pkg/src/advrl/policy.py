"""Deterministic attack policies keyed by meta-state."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import AttackConstraints, AttackerObjective
from .errors import DimensionMismatch, InfeasibleAttack, ModelError
from .mdp import TabularPOMDP
from .meta import MetaState, Tag


@dataclass
class AttackPolicy:
    """Map ``(h, MetaState) -> element`` (s†, o†, a† or reward index r†).

    Meta-states missing from the table take the identity element. ``h`` is
    always 0 for discounted models.
    """

    table: dict = field(default_factory=dict)
    provenance: str = "identity"
    constraints: AttackConstraints | None = None
    objective: AttackerObjective | None = None

    @classmethod
    def identity(cls, constraints=None, objective=None) -> "AttackPolicy":
        return cls({}, "identity", constraints, objective)

    def choose(self, h: int, ms: MetaState) -> int:
        hit = self.table.get((h, ms))
        if hit is not None:
            return hit
        return {Tag.STATE: ms.s, Tag.OBS: ms.o, Tag.ACTION: ms.a, Tag.REWARD: ms.r}[Tag(ms.tag)]

    def to_dense(self, M: TabularPOMDP, check: bool = True):
        """Arrays ``nu_s[h,s], nu_o[h,s,o], nu_a[h,s,o,a], nu_r[h,s,o,a,r]``.

        Raises :class:`InfeasibleAttack` when an entry lies outside the
        attached constraints.
        """
        H = M.n_steps
        S, O, A, R = M.n_states, M.n_obs, M.n_actions, M.n_rewards
        nu_s = np.broadcast_to(np.arange(S), (H, S)).copy()
        nu_o = np.broadcast_to(np.arange(O), (H, S, O)).copy()
        nu_a = np.broadcast_to(np.arange(A), (H, S, O, A)).copy()
        nu_r = np.broadcast_to(np.arange(R), (H, S, O, A, R)).copy()
        for (h, ms), x in self.table.items():
            if not 0 <= h < H:
                raise DimensionMismatch(f"attack policy entry at time {h} outside the model")
            tag = Tag(ms.tag)
            try:
                if tag == Tag.STATE:
                    nu_s[h, ms.s] = x
                elif tag == Tag.OBS:
                    nu_o[h, ms.s, ms.o] = x
                elif tag == Tag.ACTION:
                    nu_a[h, ms.s, ms.o, ms.a] = x
                elif tag == Tag.REWARD:
                    nu_r[h, ms.s, ms.o, ms.a, ms.r] = x
            except IndexError as exc:
                raise DimensionMismatch(f"attack policy entry {ms} outside the model") from exc
        for arr, n in ((nu_s, S), (nu_o, O), (nu_a, A), (nu_r, R)):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise InfeasibleAttack("attack policy chooses an element outside the model")
        if check and self.constraints is not None:
            B = self.constraints
            ok = (
                np.take_along_axis(B.state_sets[None], nu_s[..., None], -1).all()
                and np.take_along_axis(B.obs_sets[None], nu_o[..., None], -1).all()
                and np.take_along_axis(B.action_sets[None], nu_a[..., None], -1).all()
                and np.take_along_axis(B.reward_sets[None], nu_r[..., None], -1).all()
            )
            if not ok:
                raise InfeasibleAttack("attack policy leaves its feasibility sets")
        return nu_s, nu_o, nu_a, nu_r

    def to_dict(self, metadata: dict | None = None) -> dict:
        entries = [
            {"key": [int(h), int(ms.tag), int(ms.s), int(ms.o), int(ms.a), int(ms.r)], "action": int(x)}
            for (h, ms), x in sorted(self.table.items())
        ]
        out = {"provenance": self.provenance, "policy": entries}
        if metadata is not None:
            out["metadata"] = metadata
        return out

    @classmethod
    def from_dict(cls, raw: dict, constraints=None, objective=None) -> "AttackPolicy":
        try:
            table = {}
            for item in raw["policy"]:
                h, tag, s, o, a, r = (int(v) for v in item["key"])
                table[(h, MetaState(tag, s, o, a, r))] = int(item["action"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelError(f"malformed attack policy file: {exc}") from exc
        return cls(table, raw.get("provenance", "planned"), constraints, objective)
