"""Exhaustive evaluators for tiny instances.

Nothing here calls into the backup or engine code.  The joint over
``(s_1, a_1, ..., s_T, a_T)`` is materialised as a dense log tensor and
reduced directly, so each result is a ground truth for the recursions.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .model import MdpModel


class BudgetExceeded(ValueError):
    pass


@dataclass(frozen=True)
class TinyInstanceGuard:
    budget: int = 10**6

    def sequences(self, model: MdpModel, T: int) -> None:
        n = (model.n_states * model.n_actions) ** T
        if n > self.budget:
            raise BudgetExceeded(f"{n} sequences exceed the budget of {self.budget}")

    def policies(self, model: MdpModel, T: int) -> None:
        n = model.n_actions ** (model.n_states * T)
        if n > self.budget:
            raise BudgetExceeded(f"{n} deterministic policies exceed the budget of {self.budget}")


GUARD = TinyInstanceGuard()


def _boundary(model, initial, terminal):
    S, A = model.n_states, model.n_actions
    init = np.zeros(S) if initial is None else np.asarray(initial, dtype=float)
    term = np.zeros((S, A)) if terminal is None else np.asarray(terminal, dtype=float)
    return init, term


def log_joint(model: MdpModel, T: int, initial=None, terminal=None) -> np.ndarray:
    """Log of the unnormalised joint as a tensor with axes ``(s1, a1, ..., sT, aT)``.

    ``initial`` is ``log p(s_1)`` and ``terminal`` a log message on
    ``(s_T, a_T)``; both default to uniform (zeros).
    """
    GUARD.sequences(model, T)
    init, term = _boundary(model, initial, terminal)
    S, A = model.n_states, model.n_actions
    with np.errstate(divide="ignore"):
        logP = np.log(model.transition)
    rp = model.reward + model.action_log_prior[None, :]
    ndim = 2 * T

    def place(arr, axes):
        shape = [1] * ndim
        for ax, n in zip(axes, arr.shape):
            shape[ax] = n
        return arr.reshape(shape)

    total = place(init, [0])
    for t in range(T):
        total = total + place(rp, [2 * t, 2 * t + 1])
        if t < T - 1:
            total = total + place(logP, [2 * t, 2 * t + 1, 2 * t + 2])
    total = total + place(term, [2 * T - 2, 2 * T - 1])
    return np.broadcast_to(total, (S, A) * T).copy()


def brute_marginals(model: MdpModel, T: int, initial=None, terminal=None,
                    power: float = 1.0) -> np.ndarray:
    """Exact state marginals ``(T, S)`` of the joint raised to ``power``."""
    if power < 1:
        raise ValueError("power must be >= 1")
    lj = power * log_joint(model, T, initial, terminal)
    out = np.empty((T, model.n_states))
    for t in range(T):
        axes = tuple(ax for ax in range(2 * T) if ax != 2 * t)
        m = logsumexp(lj, axis=axes)
        out[t] = np.exp(m - logsumexp(m))
    return out


def eliminate_marginals(model: MdpModel, T: int, initial=None, terminal=None) -> np.ndarray:
    """Same marginals as ``brute_marginals(power=1)`` by variable elimination.

    Plain probability-domain loops; kept deliberately unlike the engine.
    """
    init, term = _boundary(model, initial, terminal)
    S, A = model.n_states, model.n_actions
    P = model.transition
    w = np.exp(model.reward) * np.exp(model.action_log_prior)[None, :]
    p1 = np.exp(init - init.max())
    tw = np.exp(term - term.max())
    fwd = [p1]
    for t in range(T - 1):
        nxt = np.zeros(S)
        for s in range(S):
            for a in range(A):
                nxt += fwd[-1][s] * w[s, a] * P[s, a]
        fwd.append(nxt / nxt.sum())
    bwd = [None] * T
    bwd[T - 1] = (w * tw).sum(axis=1)
    for t in range(T - 2, -1, -1):
        b = np.zeros(S)
        for s in range(S):
            for a in range(A):
                b[s] += w[s, a] * np.dot(P[s, a], bwd[t + 1])
        bwd[t] = b / b.sum()
    out = np.array([f * b for f, b in zip(fwd, bwd)])
    return out / out.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class MapResult:
    states: tuple
    actions: tuple
    score: float
    multiplicity: int


def brute_map(model: MdpModel, T: int, initial=None, terminal=None,
              tie_atol: float = 1e-12) -> MapResult:
    """Globally most probable ``(s, a)`` sequence; ties go to the lexicographic minimum."""
    lj = log_joint(model, T, initial, terminal)
    flat = lj.ravel()
    k = int(np.argmax(flat))
    idx = np.unravel_index(k, lj.shape)
    best = float(flat[k])
    mult = int(np.sum(flat >= best - tie_atol))
    return MapResult(tuple(int(i) for i in idx[0::2]), tuple(int(i) for i in idx[1::2]),
                     best, mult)


def sequence_score(model: MdpModel, states, actions, initial=None, terminal=None) -> float:
    init, term = _boundary(model, initial, terminal)
    score = init[states[0]]
    for t, (s, a) in enumerate(zip(states, actions)):
        score += model.reward[s, a] + model.action_log_prior[a]
        if t + 1 < len(states):
            p = model.transition[s, a, states[t + 1]]
            score += math.log(p) if p > 0 else -math.inf
    return float(score + term[states[-1], actions[-1]])


def policy_value(model: MdpModel, T: int, mu) -> np.ndarray:
    """Exact ``E[sum_t gamma^(t-1) R'(s_t, mu_t(s_t))]`` per start state."""
    S = model.n_states
    rp = model.reward + model.action_log_prior[None, :]
    values = np.empty(S)
    for start in range(S):
        d = np.zeros(S)
        d[start] = 1.0
        total = 0.0
        for t in range(T):
            acts = mu[t]
            total += model.discount ** t * float(d @ rp[np.arange(S), acts])
            d = d @ model.transition[np.arange(S), acts]
        values[start] = total
    return values


def brute_dp_value(model: MdpModel, T: int) -> np.ndarray:
    """Best expected discounted sum of ``R'`` per start, over deterministic policies."""
    GUARD.policies(model, T)
    S, A = model.n_states, model.n_actions
    best = np.full(S, -np.inf)
    for flat in itertools.product(range(A), repeat=S * T):
        mu = np.array(flat).reshape(T, S)
        best = np.maximum(best, policy_value(model, T, mu))
    return best


# -- reward plus entropy ------------------------------------------------------

def rew_ent_objective(model: MdpModel, initial, alpha: float, pia) -> np.ndarray:
    """Expected ``sum_t R' - (1/alpha) log pi_alpha`` under ``pi_alpha``.

    ``pia`` has shape ``(..., T, S, A)``: the action distributions
    ``pi_alpha(.|s)`` per step, with optional leading batch axes.
    Evaluated by enumerating every state-action sequence.
    """
    pia = np.asarray(pia, dtype=float)
    T, S, A = pia.shape[-3:]
    rp = model.reward + model.action_log_prior[None, :]
    total = np.zeros(pia.shape[:-3])
    with np.errstate(divide="ignore", invalid="ignore"):
        logpia = np.log(pia)
        for seq in itertools.product(range(S), range(A), repeat=T):
            states, actions = seq[0::2], seq[1::2]
            prob = initial[states[0]]
            gain = 0.0
            for t, (s, a) in enumerate(zip(states, actions)):
                prob = prob * pia[..., t, s, a]
                if t + 1 < T:
                    prob = prob * model.transition[s, a, states[t + 1]]
                gain = gain + rp[s, a] - logpia[..., t, s, a] / alpha
            total = total + np.where(prob > 0, prob * gain, 0.0)
    return total


def _refine(f, q0, step):
    lo, hi = max(0.0, q0 - step), min(1.0, q0 + step)
    res = minimize_scalar(lambda q: -f(q), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return (res.x, -res.fun) if -res.fun > f(q0) else (q0, f(q0))


@dataclass(frozen=True)
class RewEntResult:
    value: float
    pi_alpha: np.ndarray   # (T, S, A)
    pi: np.ndarray         # (T, S, A), pi proportional to pi_alpha ** (1/alpha)
    plateau: int           # grid points within 1e-6 of the optimum, summed over (t, s)


def brute_rew_ent(model: MdpModel, T: int, alpha: float, initial=None,
                  step: float = 1e-3, sweeps: int = 3) -> RewEntResult:
    """Maximise the reward-plus-entropy functional by grid search.

    Only two-state, two-action models with ``T <= 2``.  Each
    ``pi_alpha(.|s)`` at each step is a point on a 1-D simplex.  A grid of
    resolution ``step`` is scanned for every ``(t, s)`` in turn (latest step
    first), each scan refined with a bounded scalar search, and the whole
    coordinate pass repeated ``sweeps`` times.  The returned value is the
    full enumerated objective at the final policies.
    """
    if model.n_states != 2 or model.n_actions != 2 or not 1 <= T <= 2:
        raise BudgetExceeded("brute_rew_ent handles only |S| = |A| = 2, T <= 2")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    init = np.full(2, 0.5) if initial is None else np.asarray(initial, dtype=float)
    init = init / init.sum()
    grid = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    qs = np.full((T, 2), 0.5)

    def build(qs):
        return np.stack([qs, 1.0 - qs], axis=-1)

    plateau = 0
    for sweep in range(sweeps):
        plateau = 0
        for t in range(T - 1, -1, -1):
            for s in range(2):
                def f(q, t=t, s=s):
                    trial = np.broadcast_to(qs, np.shape(q) + qs.shape).copy()
                    trial[..., t, s] = q
                    return rew_ent_objective(model, init, alpha, build(trial))
                vals = f(grid)
                k = int(np.argmax(vals))
                plateau += int(np.sum(vals >= vals[k] - 1e-6))
                qs[t, s], _ = _refine(lambda q: float(f(q)), grid[k], step)
    pia = build(qs)
    with np.errstate(divide="ignore"):
        logpi = np.where(pia > 0, np.log(np.where(pia > 0, pia, 1.0)) / alpha, -np.inf)
    pi = np.exp(logpi - logpi.max(axis=2, keepdims=True))
    pi /= pi.sum(axis=2, keepdims=True)
    return RewEntResult(float(rew_ent_objective(model, init, alpha, pia)), pia, pi, plateau)
