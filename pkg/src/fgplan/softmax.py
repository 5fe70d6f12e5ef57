"""Soft-max reductions used by the backup rules.

All four evaluate through a shift by the maximum so that entries near the
reward floor neither overflow nor collapse to ``-inf``.  Each accepts an
``axis`` argument and reduces over it like the matching numpy reduction.
"""

from __future__ import annotations

import warnings

import numpy as np

from .model import FLOOR


def _as_array(x, axis):
    x = np.asarray(x, dtype=float)
    if x.size == 0 or (axis is not None and x.shape[axis] == 0):
        raise ValueError("soft-max of an empty vector")
    if np.isnan(x).any():
        raise ValueError("soft-max input contains NaN")
    return x


def lse(x, axis=None):
    """``log sum exp(x)`` along ``axis``; result is ``>= max(x)``."""
    x = _as_array(x, axis)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return out.item() if axis is None else np.squeeze(out, axis=axis)


def g_alpha(x, alpha, axis=None):
    """Parametrised soft-max ``(1/alpha) log sum exp(alpha x)``.

    Lies in ``[max x, max x + log(N)/alpha]`` and tends to the max as
    ``alpha`` grows.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    x = _as_array(x, axis)
    return lse(alpha * x, axis=axis) / alpha


def h_alpha(x, alpha, axis=None):
    """``(sum x**alpha) ** (1/alpha)`` for non-negative ``x``.

    Evaluated as ``exp(g_alpha(log x, alpha))`` with zeros sent to the
    probability floor.  ``0 < alpha < 1`` is allowed but warns.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if alpha < 1:
        warnings.warn(f"h_alpha with alpha={alpha} < 1 is outside the soft-max regime",
                      RuntimeWarning, stacklevel=2)
    x = _as_array(x, axis)
    if (x < 0).any():
        raise ValueError("h_alpha requires non-negative entries")
    with np.errstate(divide="ignore"):
        logx = np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), FLOOR)
    return np.exp(g_alpha(logx, alpha, axis=axis))


def r_beta(x, beta, axis=None):
    """Mean of ``x`` weighted by ``exp(beta x)``; ``beta = 0`` is the plain mean."""
    if not beta >= 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    x = _as_array(x, axis)
    m = np.max(x, axis=axis, keepdims=True)
    w = np.exp(beta * (x - m))
    out = np.sum(w * x, axis=axis, keepdims=True) / np.sum(w, axis=axis, keepdims=True)
    # rounding can push the weighted mean a hair outside the data range
    out = np.clip(out, np.min(x, axis=axis, keepdims=True), m)
    return out.item() if axis is None else np.squeeze(out, axis=axis)
