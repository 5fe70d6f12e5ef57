"""Finite state-action models and grid-world construction.

Rewards live in log-prior units: ``R(s, a) = log c(s, a)`` with the
additive constant fixed at zero, so every reward is ``<= 0``.  Pairs that
should be impossible carry a large negative floor instead of ``-inf``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

FLOOR = -1e6
"""Stand-in for ``log 0``.  ``exp(FLOOR)`` underflows to exactly 0.0."""

ROW_SUM_TOL = 1e-12

ACTION_NAMES = (
    "up-left", "up", "up-right",
    "left", "still", "right",
    "down-left", "down", "down-right",
)
# (row, col) offsets, row-major scan of the 3x3 neighbourhood.
ACTION_OFFSETS = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1))
STILL = 4

CLASS_NAMES = {
    "G": "goal",
    ".": "walkway",
    "s": "street",
    "g": "grass",
    "#": "obstacle",
}


class MapFormatError(ValueError):
    """Raised when a map document cannot be parsed."""


@dataclass(frozen=True, eq=False)
class MdpModel:
    """Tabular MDP with transition tensor ``transition[s, a, s']``.

    ``reward`` and ``action_log_prior`` are in log units.  ``goals`` and
    ``shape`` are optional annotations used by grid tooling.
    """

    transition: np.ndarray
    reward: np.ndarray
    action_log_prior: np.ndarray
    discount: float = 1.0
    floor: float = FLOOR
    goals: frozenset = frozenset()
    shape: tuple | None = None

    def __post_init__(self):
        for name in ("transition", "reward", "action_log_prior"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "goals", frozenset(int(g) for g in self.goals))
        if self.transition.ndim != 3:
            raise ValueError("transition must be indexed (s, a, s')")
        S, A, S2 = self.transition.shape
        if S != S2:
            raise ValueError(f"transition shape {self.transition.shape} is not (S, A, S)")
        if self.reward.shape != (S, A):
            raise ValueError(f"reward shape {self.reward.shape} != {(S, A)}")
        if self.action_log_prior.shape != (A,):
            raise ValueError(f"action_log_prior shape {self.action_log_prior.shape} != {(A,)}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @cached_property
    def log_transition(self) -> np.ndarray:
        """``log p(s'|s,a)`` with zeros mapped to the floor."""
        with np.errstate(divide="ignore"):
            out = np.log(self.transition)
        out[self.transition <= 0] = self.floor
        out.setflags(write=False)
        return out

    @cached_property
    def reward_prime(self) -> np.ndarray:
        """``R'(s,a) = log p(a) + R(s,a)``."""
        out = self.reward + self.action_log_prior[None, :]
        out.setflags(write=False)
        return out

    def with_discount(self, discount: float) -> "MdpModel":
        return MdpModel(self.transition, self.reward, self.action_log_prior,
                        discount, self.floor, self.goals, self.shape)

    def cell(self, s: int) -> tuple[int, int]:
        if self.shape is None:
            raise ValueError("model has no grid shape")
        return divmod(int(s), self.shape[1])

    def state(self, row: int, col: int) -> int:
        if self.shape is None:
            raise ValueError("model has no grid shape")
        h, w = self.shape
        if not (0 <= row < h and 0 <= col < w):
            raise ValueError(f"cell ({row}, {col}) outside {h}x{w} grid")
        return row * w + col


def uniform_log_prior(n_actions: int) -> np.ndarray:
    return np.full(n_actions, -math.log(n_actions))


def validate_model(model: MdpModel) -> list[str]:
    """Return a list of invariant violations; empty means the model is valid."""
    problems = []
    P = model.transition
    if not np.all(np.isfinite(P)):
        problems.append("transition: non-finite entries")
    for s, a, s2 in zip(*np.nonzero(P < 0)):
        problems.append(f"transition[{s},{a},{s2}] = {P[s, a, s2]:.6g} is negative")
    sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)):
        problems.append(f"row-sum: transition[{s},{a},:] sums to {sums[s, a]:.15g}")
    R = model.reward
    for s, a in zip(*np.nonzero(~np.isfinite(R))):
        problems.append(f"reward[{s},{a}] = {R[s, a]:.6g} is not finite (use the floor)")
    for s, a in zip(*np.nonzero(R > 0)):
        problems.append(f"sign-convention: reward[{s},{a}] = {R[s, a]:.6g} > 0")
    for s, a in zip(*np.nonzero(np.isfinite(R) & (R < model.floor))):
        problems.append(f"reward[{s},{a}] = {R[s, a]:.6g} below floor {model.floor:g}")
    lp = model.action_log_prior
    if np.any(~np.isfinite(lp)) or np.any(lp > 0):
        problems.append("action_log_prior: entries must be finite and <= 0")
    elif abs(np.exp(lp).sum() - 1.0) > ROW_SUM_TOL:
        problems.append(f"action_log_prior: exp sums to {np.exp(lp).sum():.15g}")
    if not (0.0 < model.discount <= 1.0):
        problems.append(f"discount {model.discount:g} outside (0, 1]")
    return problems


@dataclass(frozen=True)
class GridSpec:
    """A 2-D semantic map.  ``cells`` holds one string per row."""

    width: int
    height: int
    cells: tuple[str, ...]
    class_rewards: Mapping[str, float]
    goal_class: str = "G"
    goals: frozenset = field(default=frozenset())
    actions: tuple[str, ...] = ACTION_NAMES

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise MapFormatError("empty grid")
        if len(self.cells) != self.height:
            raise MapFormatError(f"expected {self.height} rows, got {len(self.cells)}")
        for r, row in enumerate(self.cells):
            if len(row) != self.width:
                raise MapFormatError(f"row {r} has {len(row)} cells, expected {self.width}")
            for c, ch in enumerate(row):
                if ch not in self.class_rewards:
                    raise MapFormatError(f"unknown class {ch!r} at row {r}, column {c}")
        if self.goal_class not in self.class_rewards:
            raise MapFormatError(f"goal class {self.goal_class!r} has no reward entry")
        goals = frozenset((r, c) for r, row in enumerate(self.cells)
                          for c, ch in enumerate(row) if ch == self.goal_class)
        object.__setattr__(self, "goals", goals)
        object.__setattr__(self, "class_rewards", dict(self.class_rewards))
        if tuple(self.actions) != ACTION_NAMES:
            raise ValueError("actions must be the 9 canonical moves in canonical order")

    def __getitem__(self, rc):
        r, c = rc
        return self.cells[r][c]

    def free_cells(self, blocked=("#",)):
        return [(r, c) for r in range(self.height) for c in range(self.width)
                if self.cells[r][c] not in blocked and (r, c) not in self.goals]


def _parse_reward(token, where):
    try:
        value = float(token)
    except ValueError:
        raise MapFormatError(f"{where}: bad reward {token!r}") from None
    if math.isnan(value) or value > 0:
        raise MapFormatError(f"{where}: reward must be <= 0, got {token!r}")
    return value


def _parse_text(text):
    lines = [ln.rstrip("\r") for ln in text.split("\n")]
    lines = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith(";")]
    if not lines:
        raise MapFormatError("empty document")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "grid":
        raise MapFormatError(f"line 1: expected 'grid <width> <height>', got {lines[0]!r}")
    try:
        width, height = int(head[1]), int(head[2])
    except ValueError:
        raise MapFormatError(f"line 1: bad dimensions in {lines[0]!r}") from None
    classes, goal_class = {}, None
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        if parts and parts[0] == "class":
            if len(parts) != 3 or len(parts[1]) != 1:
                raise MapFormatError(f"bad class line {lines[i]!r}")
            classes[parts[1]] = _parse_reward(parts[2], f"class {parts[1]!r}")
        elif parts and parts[0] == "goal-class":
            if len(parts) != 2 or len(parts[1]) != 1:
                raise MapFormatError(f"bad goal-class line {lines[i]!r}")
            goal_class = parts[1]
        else:
            break
        i += 1
    if goal_class is None:
        raise MapFormatError("missing 'goal-class' line")
    return width, height, classes, goal_class, lines[i:]


def load_map(text: str) -> GridSpec:
    """Parse a map document (text header format or its JSON equivalent)."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            doc = json.loads(text)
            width, height = int(doc["width"]), int(doc["height"])
            classes = {k: _parse_reward(str(v), f"class {k!r}")
                       for k, v in doc["classes"].items()}
            goal_class, rows = doc["goal_class"], list(doc["rows"])
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise MapFormatError(f"bad JSON map: {exc}") from None
    else:
        width, height, classes, goal_class, rows = _parse_text(text)
    if width <= 0 or height <= 0 or not rows:
        raise MapFormatError("empty grid")
    for r, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"ragged row {r}: {len(row)} cells, expected {width}")
        for c, ch in enumerate(row):
            if ch not in classes:
                raise MapFormatError(f"unknown class {ch!r} at row {r}, column {c}")
    if len(rows) != height:
        raise MapFormatError(f"expected {height} rows, got {len(rows)}")
    return GridSpec(width, height, tuple(rows), classes, goal_class)


def read_map(path) -> GridSpec:
    with open(path, encoding="utf-8") as fh:
        return load_map(fh.read())


def dump_map(grid: GridSpec) -> str:
    out = [f"grid {grid.width} {grid.height}"]
    for ch, rew in grid.class_rewards.items():
        out.append(f"class {ch} {rew:g}")
    out.append(f"goal-class {grid.goal_class}")
    out.extend(grid.cells)
    return "\n".join(out) + "\n"


def neighbourhood_kernel(grid: GridSpec, row: int, col: int, action: int,
                         intent_prob: float) -> dict:
    """Landing distribution ``{(r, c): p}`` for one cell and action."""
    other = (1.0 - intent_prob) / 8.0
    inside, removed = {}, 0.0
    for k, (dr, dc) in enumerate(ACTION_OFFSETS):
        mass = intent_prob if k == action else other
        r, c = row + dr, col + dc
        if 0 <= r < grid.height and 0 <= c < grid.width:
            inside[(r, c)] = mass
        else:
            removed += mass
    # `still` always lands in-grid
    assert inside
    # removed mass goes to the in-grid cells that carry base mass; with
    # intent_prob = 1 and an off-grid move there are none, so it bounces
    # back to the current cell and the kernel stays deterministic
    targets = [rc for rc, m in inside.items() if m > 0] or [(row, col)]
    share = removed / len(targets)
    out = dict(inside)
    for rc in targets:
        out[rc] += share
    return {rc: m for rc, m in out.items() if m > 0}


def build_grid_model(grid: GridSpec, intent_prob: float = 0.5,
                     discount: float = 1.0, floor: float = FLOOR) -> MdpModel:
    """Grid-world MDP with the 9-move stochastic kernel.

    The intended landing cell gets ``intent_prob`` and each other cell of
    the 3x3 neighbourhood gets ``(1 - intent_prob) / 8``.  Mass landing
    off-grid is spread equally over the in-grid landing cells.  With
    ``intent_prob = 1`` an off-grid move keeps the agent where it is.
    """
    if not (0.0 < intent_prob <= 1.0):
        raise ValueError(f"intent_prob must be in (0, 1], got {intent_prob}")
    if not (0.0 < discount <= 1.0):
        raise ValueError(f"discount must be in (0, 1], got {discount}")
    h, w = grid.height, grid.width
    S, A = h * w, len(ACTION_OFFSETS)
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    for r in range(h):
        for c in range(w):
            s = r * w + c
            rew = grid.class_rewards[grid.cells[r][c]]
            R[s, :] = floor if rew == -math.inf else rew
            for a in range(A):
                for (r2, c2), p in neighbourhood_kernel(grid, r, c, a, intent_prob).items():
                    P[s, a, r2 * w + c2] += p
    goals = frozenset(r * w + c for r, c in grid.goals)
    return MdpModel(P, R, uniform_log_prior(A), discount, floor, goals, (h, w))


def random_model(rng: np.random.Generator, n_states: int, n_actions: int,
                 discount: float = 1.0, sparsity: float = 0.0,
                 reward_scale: float = 3.0) -> MdpModel:
    """Random dense (or partly sparse) model for tests and the oracle CLI."""
    P = rng.random((n_states, n_actions, n_states)) + 0.05
    if sparsity > 0:
        mask = rng.random(P.shape) < sparsity
        keep = rng.integers(n_states, size=(n_states, n_actions))
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], keep] = False
        P[mask] = 0.0
    P /= P.sum(axis=2, keepdims=True)
    R = -reward_scale * rng.random((n_states, n_actions))
    prior = rng.random(n_actions) + 0.2
    prior = np.log(prior / prior.sum())
    return MdpModel(P, R, prior, discount)
