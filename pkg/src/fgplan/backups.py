"""Q- and V-backups for the six rule families.

Log space is the compute path.  The probability-space versions apply the
same rules literally to ``b = exp(Q)`` tables and exist to cross-check it.

Every Q-backup has the shape ``Q = R' + discount * T[V]`` where
``R'(s,a) = log p(a) + R(s,a)`` and ``T`` reduces over successors:

    sum-product      log sum_s' p(s'|s,a) e^V(s')
    max-product      max_s' (log p(s'|s,a) + V(s'))
    sum/max          g_alpha over s' of (log p(s'|s,a) + V(s'))
    dp, softdp,
    max-rew/ent      sum_s' p(s'|s,a) V(s')

The V-backup reduces Q over actions with lse, max, g_alpha or r_beta.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import FLOOR, MdpModel
from .softmax import g_alpha, h_alpha, lse, r_beta


class Family(str, enum.Enum):
    SUM_PRODUCT = "sum-product"
    MAX_PRODUCT = "max-product"
    SUM_MAX_PRODUCT = "sum-max"
    DP = "dp"
    SOFT_DP = "softdp"
    MAX_REW_ENT = "max-rew-ent"


PROBABILISTIC = frozenset({Family.SUM_PRODUCT, Family.MAX_PRODUCT, Family.SUM_MAX_PRODUCT})
EXPECTATION = frozenset({Family.DP, Family.SOFT_DP, Family.MAX_REW_ENT})

_ALIASES = {
    "sum": Family.SUM_PRODUCT, "sumproduct": Family.SUM_PRODUCT,
    "max": Family.MAX_PRODUCT, "maxproduct": Family.MAX_PRODUCT,
    "summax": Family.SUM_MAX_PRODUCT, "sum-max-product": Family.SUM_MAX_PRODUCT,
    "summaxproduct": Family.SUM_MAX_PRODUCT,
    "soft-dp": Family.SOFT_DP, "maxrewent": Family.MAX_REW_ENT,
    "max-rew/ent": Family.MAX_REW_ENT,
}


@dataclass(frozen=True)
class BackupRule:
    family: Family
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        if fam is Family.SUM_MAX_PRODUCT:
            if self.alpha is None or not self.alpha >= 1:
                raise ValueError(f"sum-max requires alpha >= 1, got {self.alpha}")
        elif fam is Family.MAX_REW_ENT:
            if self.alpha is None or not self.alpha > 0:
                raise ValueError(f"max-rew-ent requires alpha > 0, got {self.alpha}")
        else:
            object.__setattr__(self, "alpha", None)
        if fam is Family.SOFT_DP:
            if self.beta is None or not self.beta > 0:
                raise ValueError(f"softdp requires beta > 0, got {self.beta}")
        else:
            object.__setattr__(self, "beta", None)
        for p in (self.alpha, self.beta):
            if p is not None and not np.isfinite(p):
                raise ValueError("rule parameters must be finite")

    @classmethod
    def parse(cls, text: str, alpha=None, beta=None) -> "BackupRule":
        """Build a rule from ``name`` or ``name:param`` (e.g. ``softdp:0.2``)."""
        name, _, param = text.strip().partition(":")
        key = name.lower()
        fam = _ALIASES.get(key) or Family(key)
        if param:
            value = float(param)
            if fam is Family.SOFT_DP:
                beta = value
            else:
                alpha = value
        return cls(fam, alpha, beta)

    @property
    def is_probabilistic(self) -> bool:
        return self.family in PROBABILISTIC

    @property
    def label(self) -> str:
        if self.alpha is not None:
            return f"{self.family.value}(alpha={self.alpha:g})"
        if self.beta is not None:
            return f"{self.family.value}(beta={self.beta:g})"
        return self.family.value

    @property
    def spec(self) -> str:
        if self.alpha is not None:
            return f"{self.family.value}:{self.alpha:g}"
        if self.beta is not None:
            return f"{self.family.value}:{self.beta:g}"
        return self.family.value


def _check_v(model, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (model.n_states,):
        raise ValueError(f"V shape {v.shape} != ({model.n_states},)")
    if not np.all(np.isfinite(v)):
        raise ValueError("V contains non-finite entries")
    return v


def successor_term(rule: BackupRule, model: MdpModel, v_next) -> np.ndarray:
    """The successor reduction ``T[V](s,a)`` before discounting."""
    v = _check_v(model, v_next)
    fam = rule.family
    if fam in EXPECTATION:
        # zero-probability successors contribute exactly 0
        return model.transition @ v
    x = model.log_transition + v[None, None, :]
    if fam is Family.SUM_PRODUCT:
        return lse(x, axis=2)
    if fam is Family.MAX_PRODUCT:
        return x.max(axis=2)
    return g_alpha(x, rule.alpha, axis=2)


def backup_q(rule: BackupRule, model: MdpModel, v_next) -> np.ndarray:
    return model.reward_prime + model.discount * successor_term(rule, model, v_next)


def backup_v(rule: BackupRule, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 2:
        raise ValueError(f"Q must be indexed (s, a), got shape {q.shape}")
    fam = rule.family
    if fam is Family.SUM_PRODUCT:
        return lse(q, axis=1)
    if fam in (Family.MAX_PRODUCT, Family.DP):
        return q.max(axis=1)
    if fam is Family.SOFT_DP:
        return r_beta(q, rule.beta, axis=1)
    return g_alpha(q, rule.alpha, axis=1)


def shift_to_zero_max(table):
    table = np.asarray(table, dtype=float)
    return table - table.max()


# -- probability space ------------------------------------------------------

def _check_prob(name, b):
    b = np.asarray(b, dtype=float)
    if (b < 0).any() or not np.all(np.isfinite(b)):
        raise ValueError(f"{name} must be finite and non-negative")
    return b


def _safe_log(b, floor):
    with np.errstate(divide="ignore"):
        return np.where(b > 0, np.log(np.where(b > 0, b, 1.0)), floor)


def _max_one(b):
    m = b.max()
    return b / m if m > 0 else b


def backup_q_prob(rule: BackupRule, model: MdpModel, b_next) -> np.ndarray:
    """Probability-space Q-backup, ``b(s,a)``, scaled to a max entry of 1."""
    b = _check_prob("b_next", b_next)
    if b.shape != (model.n_states,):
        raise ValueError(f"b_next shape {b.shape} != ({model.n_states},)")
    P, gamma, fam = model.transition, model.discount, rule.family
    c_prime = np.exp(model.reward_prime)
    if fam is Family.SUM_PRODUCT:
        inner = P @ b
    elif fam is Family.MAX_PRODUCT:
        inner = (P * b[None, None, :]).max(axis=2)
    elif fam is Family.SUM_MAX_PRODUCT:
        inner = h_alpha(P * b[None, None, :], rule.alpha, axis=2)
    else:
        inner = np.exp(P @ _safe_log(b, model.floor))
    return _max_one(c_prime * inner ** gamma)


def backup_v_prob(rule: BackupRule, b) -> np.ndarray:
    """Probability-space V-backup, ``b(s)``, scaled to a max entry of 1."""
    b = _check_prob("b", b)
    fam = rule.family
    if fam is Family.SUM_PRODUCT:
        out = b.sum(axis=1)
    elif fam in (Family.MAX_PRODUCT, Family.DP):
        out = b.max(axis=1)
    elif fam is Family.SOFT_DP:
        logb = _safe_log(b, FLOOR)
        w = np.where(b > 0, b / b.max(axis=1, keepdims=True), 0.0) ** rule.beta
        out = np.exp((w * logb).sum(axis=1) / w.sum(axis=1))
    else:
        # alpha < 1 is legitimate for max-rew-ent, so skip h_alpha's warning
        out = np.exp(g_alpha(_safe_log(b, FLOOR), rule.alpha, axis=1))
    return _max_one(out)
