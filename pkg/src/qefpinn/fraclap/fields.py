"""Scalar fields the operator schemes can be applied to.

Any callable ``u(points, t=None)`` with ``points`` of shape ``(N, d)`` and
``t`` either ``None`` or shape ``(N,)`` is a field. It may return numpy
arrays or torch tensors. Schemes assume fields vanish outside the domain.

``BallProfileField`` is the closed-form family used by every benchmark:

    u(y, t) = t**time_power * sum_j (1 - |y|^2)_+**beta_j * (a_j + c_j . y)

Along a ray ``y = x + r xi`` it only needs the dot products ``x . xi`` and
``c_j . xi``, which is what the accelerated kernel exploits.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np


class ScalarField(Protocol):
    def __call__(self, points, t=None): ...


@dataclass(frozen=True)
class ProfileTerm:
    beta: float
    offset: float
    coef: np.ndarray | None = None  # None means no linear part


@dataclass(frozen=True)
class BallProfileField:
    dim: int
    terms: tuple[ProfileTerm, ...]
    time_power: float | None = None
    _packed: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        betas = np.array([t.beta for t in self.terms], dtype=np.float64)
        offsets = np.array([t.offset for t in self.terms], dtype=np.float64)
        coefs = np.zeros((len(self.terms), self.dim))
        for j, t in enumerate(self.terms):
            if t.coef is not None:
                coefs[j] = t.coef
        object.__setattr__(self, "_packed", (betas, offsets, coefs))

    @property
    def betas(self) -> np.ndarray:
        return self._packed[0]

    @property
    def offsets(self) -> np.ndarray:
        return self._packed[1]

    @property
    def coefs(self) -> np.ndarray:
        return self._packed[2]

    def time_factor(self, t):
        if self.time_power is None:
            return 1.0
        if t is None:
            raise ValueError("time-dependent field evaluated without t")
        return np.asarray(t, dtype=np.float64) ** self.time_power

    def spatial(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        q = np.maximum(1.0 - np.sum(points * points, axis=-1), 0.0)
        lin = points @ self.coefs.T + self.offsets
        return np.sum(q[..., None] ** self.betas * lin, axis=-1)

    def __call__(self, points, t=None):
        return self.time_factor(t) * self.spatial(points)

    def scaled(self, factor: float) -> "BallProfileField":
        terms = tuple(
            ProfileTerm(tm.beta, factor * tm.offset, None if tm.coef is None else factor * np.asarray(tm.coef))
            for tm in self.terms
        )
        return BallProfileField(self.dim, terms, self.time_power)


def zero_field(points, t=None):
    return np.zeros(np.shape(points)[:-1])
