import numpy as np
import pytest

from advrl import (
    GridLayout,
    GridScenario,
    backward_induction,
    build_gridworld,
    build_region_constraints,
    reference_layout,
    render_trajectory,
    run_scenario,
)
from advrl.errors import InvalidLayout, OutOfBounds
from advrl.gridworld import ACTIONS, Region, small_layout


def clean_value(layout):
    M = build_gridworld(layout)
    return backward_induction(M)[0].start_value(M.mu)


def test_reference_clean_value():
    assert clean_value(reference_layout()) == 3.0


def test_small_layouts():
    assert clean_value(small_layout()) == 3.0
    assert clean_value(GridLayout(n=2, horizon=2)) == 1.0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_empty_grid_formula(n):
    for H in (2 * (n - 1), 2 * (n - 1) + 3):
        assert clean_value(GridLayout(n=n, horizon=H)) == H - 2 * (n - 1) + 1


def test_model_structure():
    M = build_gridworld(GridLayout(n=3, lava={(0, 1)}, horizon=4))
    assert M.finite and M.fully_observable
    assert M.reward_support.tolist() == [-4.0, 0.0, 1.0]
    # corner (0,0): L and U leave the grid
    assert M.available[0].tolist() == [False, True, False, True, True]
    # entering lava costs H, staying at the goal pays 1
    P, R = M.P(), M.R()
    assert R[0, ACTIONS.index("R")].tolist() == [1.0, 0.0, 0.0]
    assert P[8, ACTIONS.index("S"), 8] == 1.0 and R[8, ACTIONS.index("S"), 2] == 1.0


def test_region_constraints_without_regions_are_identity():
    layout = GridLayout(n=3, horizon=4)
    for surface in ("perceived_state", "true_state", "action", "reward"):
        B = build_region_constraints(layout, surface)
        assert B.active_surfaces == []


def test_perceived_state_over_whole_grid():
    layout = GridLayout(n=3, horizon=4, unsafe_regions=[Region(0, 0, 2, 2)])
    B = build_region_constraints(layout, "perceived_state")
    assert np.all(B.obs_sets)
    assert B.active_surfaces == ["observation"]


def test_action_region_top_right():
    layout = GridLayout(n=10, horizon=20, unsafe_regions=[Region(0, 7, 2, 9)])
    B = build_region_constraints(layout, "action")
    widened = B.action_sets.sum(-1).max(axis=(1, 2)) > 1
    assert int(widened.sum()) == 9
    assert all(layout.unsafe(s) for s in np.flatnonzero(widened))
    M = build_gridworld(layout)
    # attacks only substitute available moves
    swaps = B.action_sets & ~np.eye(len(ACTIONS), dtype=bool)
    assert not np.any(swaps & ~M.available[:, None, None, :])


def test_scenario_without_regions_changes_nothing():
    res = run_scenario(GridScenario(GridLayout(n=3, lava={(1, 1)}, horizon=6), "action"))
    assert res.clean_value == res.attacked_value == res.defense_value == 3.0


@pytest.mark.parametrize("surface", ["action", "true_state", "reward"])
def test_reference_scenarios(surface):
    res = run_scenario(GridScenario(reference_layout(), surface))
    assert res.clean_value == 3.0
    assert res.attacked_value <= res.clean_value
    assert res.defense_value >= res.attacked_value
    if surface == "action":
        assert res.attacked_value < 3.0
        assert res.defense_value == 3.0


def test_perceived_state_skips_defense():
    layout = GridLayout(n=3, horizon=5, unsafe_regions=[Region(0, 1, 0, 2)])
    res = run_scenario(GridScenario(layout, "perceived_state"))
    assert res.defense_value is None and res.defense is None
    assert "NP-hard" in res.notice
    assert res.attacked_value <= res.clean_value


def test_render_marks():
    layout = GridLayout(n=2, horizon=2)
    assert render_trajectory(layout, [0, 1, 3]) == "S#\n.G"
    assert render_trajectory(layout, None) == "S.\n.G"
    assert render_trajectory(layout, []) == "S.\n.G"
    lava = GridLayout(n=2, lava={(1, 0)}, horizon=2)
    assert render_trajectory(lava, [0, 2]) == "S.\n!G"
    assert render_trajectory(lava, [0]) == "S.\n~G"
    with pytest.raises(OutOfBounds):
        render_trajectory(layout, [0, 4])


def test_render_clean_small_path():
    layout = small_layout()
    res = run_scenario(GridScenario(layout, "action"))
    text = render_trajectory(layout, res.trajectories["clean"])
    lines = text.splitlines()
    assert len(lines) == 3 and all(len(x) == 3 for x in lines)
    assert "!" not in text and text.count("#") == 3


@pytest.mark.parametrize(
    "kwargs",
    [
        {"n": 3, "start": (2, 2)},
        {"n": 3, "lava": {(0, 0)}},
        {"n": 3, "lava": {(2, 2)}},
        {"n": 3, "lava": {(3, 0)}},
        {"n": 3, "goal": (0, 5)},
        {"n": 3, "horizon": 0},
        {"n": 3, "unsafe_regions": [Region(0, 2, 1, 1)]},
        {"n": 3, "unsafe_regions": [Region(0, 0, 3, 3)]},
    ],
)
def test_invalid_layouts(kwargs):
    with pytest.raises(InvalidLayout):
        GridLayout(**kwargs).validate()


def test_layout_round_trip(tmp_path):
    layout = reference_layout()
    again = GridLayout.from_dict(layout.to_dict())
    assert again == layout
    path = tmp_path / "layout.json"
    path.write_text('{"n": 2, "horizon": 2}')
    assert GridLayout.load(path).goal == (1, 1)
    with pytest.raises(InvalidLayout):
        GridLayout.from_dict({"lava": []})
