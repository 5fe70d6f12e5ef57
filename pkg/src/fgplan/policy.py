"""Policy extraction and sequence decoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backups import BackupRule, Family
from .engine import HorizonSolution, InfeasibleError
from .model import FLOOR, MdpModel

TIE_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class PolicyTable:
    """Rows ``probs[s]`` are ``pi(.|s)``.  ``mode`` is ``"soft"`` or ``"hard"``."""

    probs: np.ndarray
    mode: str = "soft"

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    def best(self, s: int) -> int:
        """Lowest-index action at the row maximum."""
        return int(np.argmax(self.probs[s]))

    def tied(self, s: int, rtol: float = TIE_RTOL) -> list[int]:
        row = self.probs[s]
        return [int(a) for a in np.nonzero(row >= row.max() * (1 - rtol))[0]]

    def tie_counts(self, rtol: float = TIE_RTOL) -> np.ndarray:
        m = self.probs.max(axis=1, keepdims=True)
        return (self.probs >= m * (1 - rtol)).sum(axis=1)

    def entropy(self) -> np.ndarray:
        p = self.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        return terms.sum(axis=1)

    def mean_entropy(self) -> float:
        return float(self.entropy().mean())


def extract_policy(q, v=None, hard: bool = False, floor: float = FLOOR,
                   scale: float = 1.0) -> PolicyTable:
    """``pi(a|s)`` proportional to ``exp(scale * (Q(s,a) - V(s)))``.

    ``V`` only rescales each row, so it may be omitted.  ``hard=True``
    returns the one-hot lowest-index argmax instead.  ``scale`` sharpens
    or flattens every row without moving its argmax; see ``rule_policy``.
    """
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    q = np.asarray(q, dtype=float)
    if v is not None and np.shape(v) != q.shape[:1]:
        raise ValueError(f"V shape {np.shape(v)} does not match Q shape {q.shape}")
    top = q.max(axis=1)
    bad = np.nonzero(top <= 0.5 * floor)[0]
    if bad.size:
        raise InfeasibleError(f"state {int(bad[0])}: every action is at the floor")
    if hard:
        probs = np.zeros_like(q)
        probs[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
        return PolicyTable(probs, "hard")
    w = np.exp(scale * (q - top[:, None]))
    return PolicyTable(w / w.sum(axis=1, keepdims=True), "soft")


def policy_scale(rule: BackupRule) -> float:
    """Sharpness of the action distribution a rule's V-backup averages under.

    Reward/entropy optimises an expectation under ``pi_alpha``, which is
    ``softmax(alpha Q)``; the SoftDP weighted mean uses ``softmax(beta Q)``;
    sum/max messages are ``1/alpha`` logs of the powered joint.  Everything
    else is 1.
    """
    if rule.family is Family.SOFT_DP:
        return rule.beta
    if rule.family in (Family.MAX_REW_ENT, Family.SUM_MAX_PRODUCT):
        return rule.alpha
    return 1.0


def rule_policy(rule: BackupRule, q, v=None, floor: float = FLOOR) -> PolicyTable:
    """``extract_policy`` at the rule's own sharpness (same argmax)."""
    return extract_policy(q, v, floor=floor, scale=policy_scale(rule))


@dataclass(frozen=True)
class DecodedPath:
    states: tuple
    actions: tuple | None
    mode: str
    connected: bool | None = None
    goal_reached: bool | None = None

    @property
    def steps(self) -> int:
        return len(self.states) - 1


def _connected(model, states):
    return all(model.transition[s, :, s2].max() > 0 for s, s2 in zip(states, states[1:]))


def parallel_decode(post, model: MdpModel | None = None) -> DecodedPath:
    """Independent per-step argmax of state posteriors.

    The result may jump between unconnected states; ``connected`` reports
    whether every consecutive pair is reachable under some action.
    """
    post = np.asarray(post, dtype=float)
    if post.ndim != 2 or post.shape[0] == 0:
        raise ValueError("posteriors must be a non-empty (T, S) table")
    states = tuple(int(s) for s in np.argmax(post, axis=1))
    conn = _connected(model, states) if model is not None else None
    return DecodedPath(states, None, "parallel", conn)


def progressive_decode(model: MdpModel, sol: HorizonSolution,
                       initial=None) -> DecodedPath:
    """Forward SASA decode driven by the backward messages.

    ``s*_1 = argmax f_1 + V_1``; then ``a*_t = argmax_a Q_t(s*_t, .)`` and
    ``s*_{t+1} = argmax_s log p(s|s*_t,a*_t) + V_{t+1}(s)``.
    """
    T = sol.horizon
    if initial is None:
        initial = sol.forward[0] if sol.forward is not None else np.zeros(model.n_states)
    score = np.asarray(initial, dtype=float) + sol.v[0]
    if np.all(score <= 0.5 * model.floor):
        raise InfeasibleError("no feasible start state")
    s = int(np.argmax(score))
    states, actions = [s], []
    for t in range(T):
        a = int(np.argmax(sol.q[t, s]))
        actions.append(a)
        if t == T - 1:
            break
        p = model.transition[s, a]
        if not np.any(p > 0):
            raise InfeasibleError(f"step {t + 1}: state {s}, action {a} has no successor")
        cand = model.log_transition[s, a] + sol.v[t + 1]
        s = int(np.argmax(cand))
        if p[s] <= 0:
            raise InfeasibleError(f"step {t + 2}: every successor is at the floor")
        states.append(s)
    return DecodedPath(tuple(states), tuple(actions), "progressive", True)


def greedy_rollout(model: MdpModel, policy: PolicyTable, start: int,
                   max_steps: int, goals=None, rng: np.random.Generator | None = None
                   ) -> DecodedPath:
    """Walk the max policy from ``start`` until a goal or ``max_steps`` moves.

    Without ``rng`` both the action and the landing cell are argmaxes
    (lowest index on ties).  With ``rng`` both are sampled.
    """
    if not 0 <= start < model.n_states:
        raise ValueError(f"start state {start} out of range")
    goals = model.goals if goals is None else frozenset(goals)
    s = int(start)
    states, actions = [s], []
    while s not in goals and len(actions) < max_steps:
        if rng is None:
            a = policy.best(s)
            s = int(np.argmax(model.transition[s, a]))
        else:
            a = int(rng.choice(model.n_actions, p=policy.probs[s]))
            s = int(rng.choice(model.n_states, p=model.transition[s, a]))
        actions.append(a)
        states.append(s)
    return DecodedPath(tuple(states), tuple(actions),
                       "rollout" if rng is None else "sampled", True, s in goals)
