"""Finite-horizon sweeps, posteriors and steady-state iteration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backups import EXPECTATION, BackupRule, Family, backup_q, backup_v, shift_to_zero_max
from .model import MdpModel
from .softmax import g_alpha, lse


class InfeasibleError(RuntimeError):
    """Constraints leave no sequence with non-floor probability."""


class DivergenceError(RuntimeError):
    """Steady-state increments are growing instead of shrinking."""


def _is_floor(x, floor):
    return np.asarray(x) <= 0.5 * floor


@dataclass(frozen=True, eq=False)
class Boundary:
    """Log-domain boundary messages: ``initial[s]`` and ``terminal[s, a]``."""

    initial: np.ndarray
    terminal: np.ndarray

    @classmethod
    def uninformative(cls, model: MdpModel) -> "Boundary":
        return cls(np.zeros(model.n_states), np.zeros((model.n_states, model.n_actions)))

    @classmethod
    def from_states(cls, model: MdpModel, start=None, final=None,
                    initial=None, terminal=None) -> "Boundary":
        """Deltas on a start and/or final state; everything else uniform."""
        S, A, fl = model.n_states, model.n_actions, model.floor
        init = np.zeros(S) if initial is None else np.array(initial, dtype=float)
        term = np.zeros((S, A)) if terminal is None else np.array(terminal, dtype=float)
        if start is not None:
            init = np.full(S, fl)
            init[start] = 0.0
        if final is not None:
            term = np.full((S, A), fl)
            term[final, :] = 0.0
        return cls(init, term)

    def check(self, model: MdpModel) -> None:
        if self.initial.shape != (model.n_states,):
            raise ValueError(f"initial message shape {self.initial.shape}")
        if self.terminal.shape != (model.n_states, model.n_actions):
            raise ValueError(f"terminal message shape {self.terminal.shape}")
        for name, msg in (("initial", self.initial), ("terminal", self.terminal)):
            if not np.all(np.isfinite(msg)):
                raise ValueError(f"{name} message has non-finite entries; use the floor")
            if np.all(_is_floor(msg, model.floor)):
                raise InfeasibleError(f"{name} message is at the floor everywhere")


@dataclass(eq=False)
class HorizonSolution:
    """Per-step tables, index ``t - 1`` for step ``t``."""

    rule: BackupRule
    q: np.ndarray                  # (T, S, A)
    v: np.ndarray                  # (T, S)
    forward: np.ndarray | None = None   # (T, S)

    @property
    def horizon(self) -> int:
        return self.v.shape[0]


@dataclass
class ConvergenceReport:
    increments: list = field(default_factory=list)
    iterations: int = 0
    terminated_by: str = "max_iter"

    @property
    def final_increment(self) -> float:
        return self.increments[-1] if self.increments else float("nan")

    @property
    def converged(self) -> bool:
        return self.terminated_by == "tolerance"


def _clamp(x, floor):
    return np.maximum(x, floor)


def backward_sweep(model: MdpModel, rule: BackupRule, T: int,
                   boundary: Boundary | None = None) -> HorizonSolution:
    """Backward recursions from the terminal message down to step 1.

    Tables are not renormalised, so for the probabilistic families
    ``V_1(s) + log p(s)`` keeps its meaning as a sequence log-score.
    """
    if T < 1:
        raise ValueError(f"horizon must be >= 1, got {T}")
    boundary = boundary or Boundary.uninformative(model)
    boundary.check(model)
    S, A = model.n_states, model.n_actions
    q = np.empty((T, S, A))
    v = np.empty((T, S))
    clamp = rule.family not in EXPECTATION
    q[T - 1] = model.reward_prime + boundary.terminal
    if clamp:
        q[T - 1] = _clamp(q[T - 1], model.floor)
    v[T - 1] = backup_v(rule, q[T - 1])
    for t in range(T - 2, -1, -1):
        q[t] = backup_q(rule, model, v[t + 1])
        if clamp:
            q[t] = _clamp(q[t], model.floor)
        v[t] = backup_v(rule, q[t])
    return HorizonSolution(rule, q, v)


def forward_step(rule: BackupRule, model: MdpModel, f) -> np.ndarray:
    """One forward propagation ``f_t -> f_{t+1}``, log-normalised."""
    joint = f[:, None] + model.reward_prime            # f_(SA)^4 up to a constant
    fam = rule.family
    if fam in EXPECTATION:
        # exp(sum_{s,a} p(s'|s,a) log f(s,a)) in log form
        nxt = np.einsum("sat,sa->t", model.transition, joint)
    else:
        x = model.log_transition + joint[:, :, None]
        x = x.reshape(-1, model.n_states)
        if fam is Family.SUM_PRODUCT:
            nxt = lse(x, axis=0)
        elif fam is Family.MAX_PRODUCT:
            nxt = x.max(axis=0)
        else:
            nxt = g_alpha(x, rule.alpha, axis=0)
    nxt = _clamp(nxt, model.floor)
    return _clamp(nxt - nxt.max(), model.floor)


def forward_sweep(model: MdpModel, rule: BackupRule, T: int,
                  boundary: Boundary | None = None) -> np.ndarray:
    """Forward state messages ``f_1 .. f_T`` (log domain, max entry 0)."""
    if T < 1:
        raise ValueError(f"horizon must be >= 1, got {T}")
    boundary = boundary or Boundary.uninformative(model)
    boundary.check(model)
    f = np.empty((T, model.n_states))
    f0 = _clamp(boundary.initial, model.floor)
    f[0] = f0 - f0.max()
    for t in range(1, T):
        f[t] = forward_step(rule, model, f[t - 1])
    return f


def solve_horizon(model: MdpModel, rule: BackupRule, T: int,
                  boundary: Boundary | None = None) -> HorizonSolution:
    sol = backward_sweep(model, rule, T, boundary)
    sol.forward = forward_sweep(model, rule, T, boundary)
    return sol


def posterior_scale(rule: BackupRule) -> float:
    """Messages of sum/max carry ``(1/alpha) log`` of the powered joint."""
    return rule.alpha if rule.family is Family.SUM_MAX_PRODUCT else 1.0


def posteriors(sol: HorizonSolution, floor: float = -1e6) -> np.ndarray:
    """State posteriors ``(T, S)`` from forward x backward messages."""
    if sol.forward is None:
        raise ValueError("solution has no forward messages; use solve_horizon")
    logp = sol.forward + sol.v
    if np.any(np.all(_is_floor(logp, floor), axis=1)):
        t = int(np.nonzero(np.all(_is_floor(logp, floor), axis=1))[0][0]) + 1
        raise InfeasibleError(f"contradictory constraints: posterior at step {t} is all floor")
    logp = posterior_scale(sol.rule) * logp
    logp = logp - lse(logp, axis=1)[:, None]
    return np.exp(logp)


def _normalised(rule, model, v):
    if rule.family in EXPECTATION and model.discount < 1:
        return v
    return shift_to_zero_max(v)


def steady_state(model: MdpModel, rule: BackupRule, tol: float = 1e-5,
                 max_iter: int = 10_000, divergence_window: int = 50):
    """Iterate the backups from ``V = 0`` until the sup-norm change is below ``tol``.

    Probabilistic families are shifted to a zero maximum each iteration.
    Expectation families keep absolute values when ``discount < 1``; at
    ``discount == 1`` they have no finite fixed point (every step pays
    ``R' < 0``), so they are shifted too and converge in relative value.

    Returns ``(Q, V, ConvergenceReport)``.
    """
    if not tol > 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    clamp = rule.family not in EXPECTATION
    v = np.zeros(model.n_states)
    report = ConvergenceReport()
    q = None
    for k in range(1, max_iter + 1):
        q = backup_q(rule, model, v)
        if clamp:
            q = _clamp(q, model.floor)
        v_raw = backup_v(rule, q)
        v_new = _normalised(rule, model, v_raw)
        q = q - (v_raw - v_new)[:, None] if v_new is not v_raw else q
        inc = float(np.max(np.abs(v_new - v)))
        report.increments.append(inc)
        report.iterations = k
        v = v_new
        if inc < tol:
            report.terminated_by = "tolerance"
            break
        if k > divergence_window:
            past = report.increments[k - 1 - divergence_window]
            if inc > 10 * past:
                raise DivergenceError(
                    f"{rule.label}: increment {inc:.3g} at iteration {k} is over 10x "
                    f"the value {divergence_window} iterations earlier")
    return q, v, report
