import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgplan.model import (ACTION_NAMES, FLOOR, STILL, GridSpec, MapFormatError, MdpModel,
                          build_grid_model, dump_map, load_map, neighbourhood_kernel,
                          random_model, validate_model)

SMALL = """grid 6 6
class G 0
class # -10
class . -1
goal-class G
......
.##.#.
...#..
...#..
#.#...
.....G
"""


def test_canonical_actions():
    assert ACTION_NAMES == ("up-left", "up", "up-right", "left", "still", "right",
                            "down-left", "down", "down-right")
    assert ACTION_NAMES[STILL] == "still"


def test_interior_right_half_intent():
    grid = load_map(SMALL)
    m = build_grid_model(grid, intent_prob=0.5)
    s = m.state(2, 2)
    row = m.transition[s, ACTION_NAMES.index("right")]
    assert row[m.state(2, 3)] == pytest.approx(0.5, abs=1e-15)
    others = [m.state(2 + dr, 2 + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
              if (dr, dc) != (0, 1)]
    np.testing.assert_allclose(row[others], 0.0625, atol=1e-15)
    assert np.count_nonzero(row) == 9


def test_deterministic_interior():
    m = build_grid_model(load_map(SMALL), intent_prob=1.0)
    s = m.state(2, 2)
    for a in range(9):
        row = m.transition[s, a]
        assert np.count_nonzero(row) == 1
        assert row.max() == 1.0


def test_corner_still_redistribution():
    # 4 in-grid landings; 5 * 0.0625 off-grid spread over them
    m = build_grid_model(load_map(SMALL), intent_prob=0.5)
    row = m.transition[m.state(0, 0), STILL]
    want = {m.state(0, 0): 0.578125, m.state(0, 1): 0.140625,
            m.state(1, 0): 0.140625, m.state(1, 1): 0.140625}
    for s, p in want.items():
        assert row[s] == pytest.approx(p, abs=1e-15)
    assert np.count_nonzero(row) == 4
    assert row.sum() == pytest.approx(1.0, abs=1e-12)


def test_grid_model_conventions():
    grid = load_map(SMALL)
    m = build_grid_model(grid)
    assert validate_model(m) == []
    assert m.n_states == 36 and m.n_actions == 9
    np.testing.assert_allclose(m.action_log_prior, -np.log(9))
    assert m.goals == frozenset({m.state(5, 5)})
    # reward depends on the cell only
    assert np.all(m.reward == m.reward[:, :1])
    assert m.reward[m.state(1, 1), 0] == -10
    assert m.reward[m.state(0, 0), 0] == -1


def test_validate_flags_scaled_row():
    m = build_grid_model(load_map(SMALL))
    P = m.transition.copy()
    P[3, 2] *= 2
    bad = MdpModel(P, m.reward, m.action_log_prior)
    v = validate_model(bad)
    assert len(v) == 1 and "transition[3,2,:]" in v[0] and "row-sum" in v[0]


def test_validate_flags_positive_reward():
    m = build_grid_model(load_map(SMALL))
    R = m.reward.copy()
    R[7, 1] = 1.0
    v = validate_model(MdpModel(m.transition, R, m.action_log_prior))
    assert len(v) == 1 and "sign" in v[0]


def test_floor_instead_of_minus_inf():
    text = "grid 2 1\nclass G 0\nclass # -inf\ngoal-class G\nG#\n"
    m = build_grid_model(load_map(text))
    assert np.all(np.isfinite(m.reward))
    assert m.reward[1, 0] == FLOOR


def test_load_small_map():
    grid = load_map(SMALL)
    assert (grid.width, grid.height) == (6, 6)
    assert grid.goals == frozenset({(5, 5)})
    assert grid.class_rewards == {"G": 0.0, "#": -10.0, ".": -1.0}


def test_single_cell_map():
    grid = load_map("grid 1 1\nclass G 0\ngoal-class G\nG\n")
    assert grid.goals == frozenset({(0, 0)})
    m = build_grid_model(grid)
    np.testing.assert_allclose(m.transition, 1.0)


def test_unknown_character_names_position():
    bad = SMALL.replace("...#..\n#.#", "...#?.\n#.#")
    with pytest.raises(MapFormatError, match=r"row 3.*col(umn)? 4"):
        load_map(bad)


@pytest.mark.parametrize("text", [
    "grid 3 1\nclass . -1\ngoal-class .\n..\n",          # ragged
    "grid 2 1\nclass . -1\ngoal-class .\n.x\n",          # class without reward
    "grid 0 0\nclass . -1\ngoal-class .\n",               # empty
])
def test_malformed_maps(text):
    with pytest.raises(MapFormatError):
        load_map(text)


def test_json_and_text_agree():
    grid = load_map(SMALL)
    doc = json.dumps({"width": 6, "height": 6, "classes": {"G": 0, "#": -10, ".": -1},
                      "goal_class": "G", "rows": list(grid.cells)})
    assert load_map(doc) == grid
    assert load_map(dump_map(grid)) == grid


def test_bundled_maps_parse():
    from importlib import resources
    for name, shape in (("grid6x6", (6, 6)), ("semantic17x23", (17, 23))):
        text = (resources.files("fgplan") / "maps" / f"{name}.map").read_text()
        grid = load_map(text)
        assert (grid.height, grid.width) == shape
        assert validate_model(build_grid_model(grid)) == []
    sem = load_map((resources.files("fgplan") / "maps" / "semantic17x23.map").read_text())
    assert sem.class_rewards == {"G": 0, ".": -1, "s": -10, "g": -20, "#": -30}


@st.composite
def grids(draw):
    w = draw(st.integers(1, 6))
    h = draw(st.integers(1, 6))
    rows = ["".join(draw(st.sampled_from(".#G")) for _ in range(w)) for _ in range(h)]
    return GridSpec(w, h, tuple(rows), {".": -1.0, "#": -10.0, "G": 0.0})


@settings(max_examples=60, deadline=None)
@given(grids(), st.floats(0.01, 1.0))
def test_rows_stochastic(grid, p):
    m = build_grid_model(grid, intent_prob=p)
    np.testing.assert_allclose(m.transition.sum(axis=2), 1.0, atol=1e-12)
    assert (m.transition >= 0).all()
    assert validate_model(m) == []


@settings(max_examples=60, deadline=None)
@given(grids(), st.floats(0.01, 1.0, exclude_max=True), st.data())
def test_boundary_mass_conserved(grid, p, data):
    r = data.draw(st.integers(0, grid.height - 1))
    c = data.draw(st.integers(0, grid.width - 1))
    a = data.draw(st.integers(0, 8))
    cells = neighbourhood_kernel(grid, r, c, a, p)
    base = np.full(9, (1 - p) / 8)
    base[a] = p
    offsets = [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1)]
    inside = {(r + dr, c + dc): base[k] for k, (dr, dc) in enumerate(offsets)
              if 0 <= r + dr < grid.height and 0 <= c + dc < grid.width}
    assert set(cells) == set(inside)
    shares = np.array([cells[rc] - inside[rc] for rc in inside])
    removed = 1 - sum(inside.values())
    np.testing.assert_allclose(shares, removed / len(inside), atol=1e-15)
    assert shares.sum() == pytest.approx(removed, abs=1e-12)


def test_deterministic_off_grid_move_stays_put():
    grid = load_map("grid 3 3\nclass . -1\nclass G 0\ngoal-class G\n...\n...\n..G\n")
    up_left = ACTION_NAMES.index("up-left")
    assert neighbourhood_kernel(grid, 0, 0, up_left, 1.0) == {(0, 0): 1.0}
    assert neighbourhood_kernel(grid, 0, 1, up_left, 1.0) == {(0, 1): 1.0}
    m = build_grid_model(grid, intent_prob=1.0)
    assert ((m.transition > 0).sum(axis=2) == 1).all()


def test_random_model_valid():
    rng = np.random.default_rng(3)
    for _ in range(20):
        assert validate_model(random_model(rng, 4, 3, discount=0.9)) == []
