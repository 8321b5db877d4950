"""Gauss-Jacobi rules by the Golub-Welsch eigenvalue method.

A rule with exponents ``(beta1, beta2)`` on ``[a, b]`` integrates

    int_a^b (b - x)**beta1 * (x - a)**beta2 * f(x) dx

exactly for polynomials ``f`` of degree ``<= 2n - 1``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import betaln

MAX_NODES = 256


class QuadratureError(ValueError):
    """Invalid rule parameters."""


class ConvergenceError(RuntimeError):
    """The tridiagonal eigensolver failed or produced a degenerate rule."""


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    n: int
    beta1: float
    beta2: float
    interval: tuple[float, float]
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def integrate(self, f) -> float:
        """Apply the rule to a vectorised callable."""
        return float(np.dot(self.weights, f(self.nodes)))


def weight_moment(beta1: float, beta2: float, a: float = -1.0, b: float = 1.0) -> float:
    """Closed form of ``int_a^b (b-x)^beta1 (x-a)^beta2 dx``."""
    return float(np.exp((beta1 + beta2 + 1.0) * np.log(b - a) + betaln(beta1 + 1.0, beta2 + 1.0)))


def _jacobi_recurrence(n: int, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    # Monic three-term recurrence for weight (1-x)^a (1+x)^b; returns the
    # diagonal and squared off-diagonal of the Jacobi matrix.
    k = np.arange(n, dtype=np.float64)
    diag = np.empty(n)
    diag[0] = (b - a) / (a + b + 2.0)
    if n > 1:
        s = 2.0 * k[1:] + a + b
        diag[1:] = (b * b - a * a) / (s * (s + 2.0))

    off2 = np.empty(max(n - 1, 0))
    if n > 1:
        off2[0] = 4.0 * (a + 1.0) * (b + 1.0) / ((a + b + 2.0) ** 2 * (a + b + 3.0))
    if n > 2:
        i = k[2:]
        s = 2.0 * i + a + b
        off2[1:] = 4.0 * i * (i + a) * (i + b) * (i + a + b) / (s * s * (s + 1.0) * (s - 1.0))
    return diag, off2


@functools.lru_cache(maxsize=None)
def _reference_rule(n: int, beta1: float, beta2: float) -> QuadratureRule:
    diag, off2 = _jacobi_recurrence(n, beta1, beta2)
    mu0 = weight_moment(beta1, beta2)
    if n == 1:
        nodes, weights = diag.copy(), np.array([mu0])
    else:
        try:
            nodes, vecs = eigh_tridiagonal(diag, np.sqrt(off2))
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError(f"eigensolver failed for n={n}, beta=({beta1}, {beta2})") from exc
        weights = mu0 * vecs[0, :] ** 2
    if not (np.all(np.isfinite(nodes)) and np.all(np.diff(nodes) > 0) and np.all(weights > 0)):
        raise ConvergenceError(f"degenerate rule for n={n}, beta=({beta1}, {beta2})")
    return QuadratureRule(n, beta1, beta2, (-1.0, 1.0), nodes, weights)


def _check(n: int, beta1: float, beta2: float) -> None:
    if int(n) != n or n < 1:
        raise QuadratureError(f"node count must be a positive integer, got {n!r}")
    if n > MAX_NODES:
        raise QuadratureError(f"node count {n} exceeds the supported maximum {MAX_NODES}")
    if not (beta1 > -1.0 and beta2 > -1.0):
        raise QuadratureError(f"weight exponents must exceed -1, got ({beta1}, {beta2})")


def gauss_jacobi_rule(n: int, beta1: float, beta2: float) -> QuadratureRule:
    """n-point rule for the weight ``(1-x)^beta1 (1+x)^beta2`` on [-1, 1]."""
    _check(n, beta1, beta2)
    return _reference_rule(int(n), float(beta1), float(beta2))


def gauss_legendre_rule(n: int) -> QuadratureRule:
    return gauss_jacobi_rule(n, 0.0, 0.0)


@functools.lru_cache(maxsize=None)
def _mapped(ref: QuadratureRule, a: float, b: float) -> QuadratureRule:
    half = 0.5 * (b - a)
    nodes = half * ref.nodes + 0.5 * (a + b)
    weights = half ** (ref.beta1 + ref.beta2 + 1.0) * ref.weights
    return QuadratureRule(ref.n, ref.beta1, ref.beta2, (a, b), nodes, weights)


def map_to_interval(rule: QuadratureRule, a: float, b: float) -> QuadratureRule:
    """Affine image of a reference rule on [-1, 1] onto [a, b]."""
    if rule.interval != (-1.0, 1.0):
        raise QuadratureError("only reference rules on [-1, 1] can be mapped")
    if not a < b:
        raise QuadratureError(f"invalid interval [{a}, {b}]")
    return _mapped(rule, float(a), float(b))


def jacobi_rule_on(n: int, beta1: float, beta2: float, a: float, b: float) -> QuadratureRule:
    """Shorthand for ``map_to_interval(gauss_jacobi_rule(n, beta1, beta2), a, b)``."""
    return map_to_interval(gauss_jacobi_rule(n, beta1, beta2), a, b)
