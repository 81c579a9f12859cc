"""Lava grid world with edge-region attacks.

Cells are numbered ``s = row * n + col`` with row 0 at the top. Actions are
L, R, U, D, S. Moves that would leave the grid are unavailable to the victim;
if an attack makes the victim attempt one anyway, it stays put.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .constraints import AttackConstraints, AttackerObjective, build_constraints
from .defense import DefenseSolution, defense_backward_induction
from .errors import InvalidLayout, ModelError, OutOfBounds
from .mdp import TabularPOMDP, VictimPolicy, backward_induction, validate_pomdp
from .meta import build_meta_mdp
from .planner import AttackSolution, plan_attack
from .policy import AttackPolicy
from .sim import Trajectory, exact_values, run_episode

ACTIONS = ("L", "R", "U", "D", "S")
MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0), (0, 0))

SURFACE_OF = {
    "perceived_state": "observation",
    "true_state": "state",
    "action": "action",
    "reward": "reward",
}


@dataclass(frozen=True)
class Region:
    """Inclusive rectangle of cells."""

    r0: int
    c0: int
    r1: int
    c1: int

    def contains(self, r: int, c: int) -> bool:
        return self.r0 <= r <= self.r1 and self.c0 <= c <= self.c1


@dataclass
class GridLayout:
    n: int
    lava: frozenset = frozenset()
    start: tuple = (0, 0)
    goal: tuple | None = None
    unsafe_regions: tuple = ()
    horizon: int = 20

    def __post_init__(self):
        self.lava = frozenset(tuple(int(v) for v in cell) for cell in self.lava)
        self.start = tuple(int(v) for v in self.start)
        self.goal = (self.n - 1, self.n - 1) if self.goal is None else tuple(int(v) for v in self.goal)
        self.unsafe_regions = tuple(
            reg if isinstance(reg, Region) else Region(**reg) if isinstance(reg, dict) else Region(*reg)
            for reg in self.unsafe_regions
        )

    def validate(self) -> "GridLayout":
        n = self.n
        if n < 1:
            raise InvalidLayout("grid side must be positive")
        if self.horizon < 1:
            raise InvalidLayout("horizon must be positive")

        def inside(cell):
            return 0 <= cell[0] < n and 0 <= cell[1] < n

        for name, cell in (("start", self.start), ("goal", self.goal)):
            if not inside(cell):
                raise InvalidLayout(f"{name} {cell} is outside the {n}x{n} grid")
        if self.start == self.goal:
            raise InvalidLayout("start and goal coincide")
        for cell in self.lava:
            if not inside(cell):
                raise InvalidLayout(f"lava cell {cell} is outside the grid")
        if self.start in self.lava:
            raise InvalidLayout("start is a lava cell")
        if self.goal in self.lava:
            raise InvalidLayout("goal is a lava cell")
        for reg in self.unsafe_regions:
            if not (inside((reg.r0, reg.c0)) and inside((reg.r1, reg.c1))) or reg.r0 > reg.r1 or reg.c0 > reg.c1:
                raise InvalidLayout(f"unsafe region {reg} is not a valid rectangle in the grid")
        return self

    def cell(self, s: int) -> tuple:
        return divmod(int(s), self.n)

    def index(self, r: int, c: int) -> int:
        return r * self.n + c

    def unsafe(self, s: int) -> bool:
        r, c = self.cell(s)
        return any(reg.contains(r, c) for reg in self.unsafe_regions)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lava": sorted([list(c) for c in self.lava]),
            "start": list(self.start),
            "goal": list(self.goal),
            "unsafe_regions": [
                {"r0": g.r0, "c0": g.c0, "r1": g.r1, "c1": g.c1} for g in self.unsafe_regions
            ],
            "horizon": self.horizon,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "GridLayout":
        try:
            return cls(
                n=int(raw["n"]),
                lava=frozenset(tuple(c) for c in raw.get("lava", [])),
                start=tuple(raw.get("start", (0, 0))),
                goal=tuple(raw["goal"]) if raw.get("goal") is not None else None,
                unsafe_regions=tuple(Region(**reg) for reg in raw.get("unsafe_regions", [])),
                horizon=int(raw.get("horizon", 20)),
            ).validate()
        except (KeyError, TypeError) as exc:
            raise InvalidLayout(f"malformed layout: {exc}") from exc

    @classmethod
    def load(cls, path) -> "GridLayout":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def reference_layout() -> GridLayout:
    """10x10, H=20, lava flanking the diagonal, attackable 4x4 corners."""
    return GridLayout(
        n=10,
        lava=frozenset({(1, 4), (4, 1), (2, 7), (7, 2), (5, 8), (8, 5)}),
        start=(0, 0),
        goal=(9, 9),
        unsafe_regions=(Region(0, 6, 3, 9), Region(6, 0, 9, 3)),
        horizon=20,
    )


def small_layout() -> GridLayout:
    return GridLayout(n=3, lava=frozenset({(1, 1)}), horizon=6)


def build_gridworld(layout: GridLayout) -> TabularPOMDP:
    layout.validate()
    n, H = layout.n, layout.horizon
    S, A = n * n, len(ACTIONS)
    support = np.array([-float(H), 0.0, 1.0])
    P = np.zeros((S, A, S))
    Rd = np.zeros((S, A, 3))
    avail = np.zeros((S, A), dtype=bool)
    goal = layout.index(*layout.goal)
    for s in range(S):
        r, c = layout.cell(s)
        for a, (dr, dc) in enumerate(MOVES):
            rr, cc = r + dr, c + dc
            if 0 <= rr < n and 0 <= cc < n:
                avail[s, a] = True
            else:
                rr, cc = r, c
            nxt = layout.index(rr, cc)
            P[s, a, nxt] = 1.0
            if nxt == goal:
                Rd[s, a, 2] = 1.0
            elif (rr, cc) in layout.lava:
                Rd[s, a, 0] = 1.0
            else:
                Rd[s, a, 1] = 1.0
    names = [f"({r},{c})" for r in range(n) for c in range(n)]
    return validate_pomdp({
        "states": names,
        "observations": names,
        "actions": list(ACTIONS),
        "transition": P,
        "reward_dist": Rd,
        "obs_dist": np.eye(S),
        "reward_support": support,
        "mu": np.eye(S)[layout.index(*layout.start)],
        "horizon": H,
        "available": avail,
    })


def build_region_constraints(layout: GridLayout, surface: str, M: TabularPOMDP | None = None) -> AttackConstraints:
    """Feasibility "all" for tuples whose true cell is unsafe, identity elsewhere."""
    if surface not in SURFACE_OF:
        raise ModelError(f"unknown grid attack surface {surface!r}; choose from {sorted(SURFACE_OF)}")
    M = build_gridworld(layout) if M is None else M
    S = M.n_states
    unsafe = np.array([layout.unsafe(s) for s in range(S)])
    name = SURFACE_OF[surface]
    full = build_constraints({name: "all"}, M)
    ident = build_constraints({name: "identity"}, M)
    mask_full = full.masks[("state", "observation", "action", "reward").index(name)]
    mask_id = ident.masks[("state", "observation", "action", "reward").index(name)]
    sel = unsafe.reshape((S,) + (1,) * (mask_full.ndim - 1))
    mask = np.where(sel, mask_full, mask_id)
    return build_constraints({name: mask}, M)


@dataclass
class GridScenario:
    layout: GridLayout
    surface: str
    objective: AttackerObjective = field(default_factory=AttackerObjective.negate_reward)


@dataclass
class ScenarioResult:
    clean_value: float
    attacked_value: float
    defense_value: float | None
    trajectories: dict
    clean_policy: VictimPolicy
    attack: AttackSolution
    defense: DefenseSolution | None
    notice: str | None = None


def run_scenario(scenario: GridScenario, eps: float = 1e-8) -> ScenarioResult:
    layout = scenario.layout.validate()
    M = build_gridworld(layout)
    B = build_region_constraints(layout, scenario.surface, M)
    g = scenario.objective
    vt, pi = backward_induction(M)
    clean = vt.start_value(M.mu)
    attack = plan_attack(build_meta_mdp(M, pi, B, g), eps)
    attacked = exact_values(M, pi, attack.policy).victim
    trajs = {
        "clean": run_episode(M, pi, AttackPolicy.identity(B, g), seed=0),
        "attacked": run_episode(M, pi, attack.policy, seed=0),
    }
    defense = None
    defense_value = None
    notice = None
    if scenario.surface == "perceived_state":
        notice = "defense skipped: perceived-state attacks make the defense problem NP-hard"
    else:
        defense = defense_backward_induction(M, B, g, zero_sum=g.is_zero_sum(M))
        defense_value = defense.victim_value
        trajs["defense"] = run_episode(M, defense.victim_policy, defense.attacker_response, seed=0)
    return ScenarioResult(clean, attacked, defense_value, trajs, pi, attack, defense, notice)


def render_trajectory(layout: GridLayout, traj: Trajectory | list | None) -> str:
    """ASCII grid: # visited, ~ lava, ! visited lava, S start, G goal, . other."""
    n = layout.n
    if traj is None:
        states = []
    elif isinstance(traj, Trajectory):
        states = traj.states()
    else:
        states = [int(s) for s in traj]
    for s in states:
        if not 0 <= s < n * n:
            raise OutOfBounds(f"state {s} is outside the {n}x{n} grid")
    visited = {layout.cell(s) for s in states}
    rows = []
    for r in range(n):
        line = []
        for c in range(n):
            cell = (r, c)
            if cell == layout.start:
                ch = "S"
            elif cell == layout.goal:
                ch = "G"
            elif cell in layout.lava:
                ch = "!" if cell in visited else "~"
            elif cell in visited:
                ch = "#"
            else:
                ch = "."
            line.append(ch)
        rows.append("".join(line))
    return "\n".join(rows)
