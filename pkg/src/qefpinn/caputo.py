"""Caputo derivative of ``t**gamma * phi(x, t)`` by Gauss-Jacobi quadrature.

With ``s = t * tau`` the Caputo integral becomes

    1/Gamma(1-gamma) * int_0^1 (1-tau)^(-gamma) tau^(gamma-1) S(x, t, tau) dtau,
    S(x, t, tau) = gamma * phi(x, t tau) + t tau * d_t phi(x, t tau),

whose weight is handled exactly by the (-gamma, gamma-1) Jacobi rule.
"""

from __future__ import annotations

import math
from typing import Protocol

import numpy as np

from .quadrature import jacobi_rule_on


class TimeField(Protocol):
    def evaluate(self, x, t): ...

    def time_derivative(self, x, t): ...


class FunctionTimeField:
    """TimeField from a pair of plain callables."""

    def __init__(self, value, derivative):
        self._value = value
        self._derivative = derivative

    def evaluate(self, x, t):
        return self._value(x, t)

    def time_derivative(self, x, t):
        return self._derivative(x, t)


def caputo_rule(gamma: float, n_tau: int):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return jacobi_rule_on(n_tau, -gamma, gamma - 1.0, 0.0, 1.0)


def caputo_tgamma(phi: TimeField, x, t, gamma: float, n_tau: int = 8):
    """Approximate the Caputo derivative of order ``gamma`` of ``t^gamma phi``.

    ``t`` is a scalar or one time per row of ``x``; the field may return
    extra trailing axes (e.g. one column per network head).
    """
    rule = caputo_rule(gamma, n_tau)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0.0):
        raise ValueError("Caputo derivative requested at negative time")
    acc = None
    for tau, w in zip(rule.nodes, rule.weights):
        s = t * tau
        value, dphi = _value_and_derivative(phi, x, s)
        term = gamma * value + _expand(s, dphi) * dphi
        acc = w * term if acc is None else acc + w * term
    acc = acc / math.gamma(1.0 - gamma)
    # empty integral at t = 0
    return _mask_zero_time(acc, t)


def _value_and_derivative(phi, x, s):
    # fields that get both from one pass (forward-mode networks) may say so
    both = getattr(phi, "value_and_time_derivative", None)
    if both is not None:
        return both(x, s)
    return phi.evaluate(x, s), phi.time_derivative(x, s)


def _expand(s, like):
    s = np.asarray(s)
    if s.ndim == 0:
        return float(s)
    extra = getattr(like, "ndim", 0) - s.ndim
    if extra > 0:
        s = s.reshape(s.shape + (1,) * extra)
    if type(like).__module__.startswith("torch"):
        import torch

        return torch.as_tensor(s, dtype=like.dtype)
    return s


def _mask_zero_time(acc, t):
    if not np.any(t == 0.0):
        return acc
    mask = _expand((t != 0.0).astype(np.float64), acc)
    return acc * mask
