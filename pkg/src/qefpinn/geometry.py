"""Domain geometry and direction sampling."""

from __future__ import annotations

import abc
import math

import numpy as np


class GeometryError(ValueError):
    pass


class Domain(abc.ABC):
    """Bounded domain with the distance queries the operator schemes need.

    Point arguments have shape ``(..., d)``. ``boundary_feature`` must accept
    numpy arrays and torch tensors alike.
    """

    dim: int

    @abc.abstractmethod
    def contains(self, x: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def r0(self, x: np.ndarray) -> np.ndarray:
        """Distance from ``x`` to the boundary."""

    @abc.abstractmethod
    def dir_dist(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Distance from ``x`` to the boundary along the unit vector ``xi``."""

    @abc.abstractmethod
    def boundary_feature(self, x): ...

    @abc.abstractmethod
    def boundary_feature_grad(self, x):
        """Gradient of ``boundary_feature``; only meaningful strictly inside."""

    def dir_dist_matrix(self, xs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """All-pairs directional distances, shape ``(len(xs), len(dirs))``."""
        return self.dir_dist(xs[:, None, :], dirs[None, :, :])

    @abc.abstractmethod
    def sample_interior(self, n: int, rng: np.random.Generator, margin: float = 0.0) -> np.ndarray: ...


class UnitBall(Domain):
    def __init__(self, dim: int):
        if dim < 1:
            raise GeometryError(f"dimension must be positive, got {dim}")
        self.dim = int(dim)

    def __repr__(self):
        return f"UnitBall({self.dim})"

    def contains(self, x):
        return np.sum(np.square(x), axis=-1) < 1.0

    def r0(self, x):
        return 1.0 - np.linalg.norm(x, axis=-1)

    def dir_dist(self, x, xi):
        x = np.asarray(x, dtype=np.float64)
        xi = np.asarray(xi, dtype=np.float64)
        sq = np.sum(x * x, axis=-1)
        if np.any(sq >= 1.0):
            raise GeometryError("directional distance requested for a point outside the open unit ball")
        s = np.sum(x * xi, axis=-1)
        return -s + np.sqrt(s * s + 1.0 - sq)

    def dir_dist_matrix(self, xs, dirs):
        sq = np.sum(xs * xs, axis=-1)
        if np.any(sq >= 1.0):
            raise GeometryError("directional distance requested for a point outside the open unit ball")
        s = xs @ dirs.T
        return -s + np.sqrt(s * s + (1.0 - sq)[:, None])

    def boundary_feature(self, x):
        return (1.0 - (x * x).sum(-1)).clip(min=0.0)

    def boundary_feature_grad(self, x):
        return -2.0 * x

    def sample_interior(self, n, rng, margin=0.0):
        """Uniform points in the ball of radius ``1 - margin``."""
        dirs = sample_sphere(self.dim, n, rng)
        radius = (1.0 - margin) * rng.random(n) ** (1.0 / self.dim)
        return dirs * radius[:, None]


def unit_ball_dir_dist(x, xi) -> np.ndarray:
    """Distance from ``x`` to the unit sphere along ``xi``."""
    x = np.asarray(x, dtype=np.float64)
    return UnitBall(x.shape[-1]).dir_dist(x, xi)


def sample_sphere(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """``m`` uniform unit vectors in R^d, shape ``(m, d)``."""
    if d < 1 or m < 1:
        raise ValueError(f"need d >= 1 and m >= 1, got d={d}, m={m}")
    g = rng.standard_normal((m, d))
    norm = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; redraw anyway for safety
    while np.any(norm == 0.0):
        bad = norm[:, 0] == 0.0
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norm = np.linalg.norm(g, axis=1, keepdims=True)
    return g / norm


def canonicalize_hemisphere(xi: np.ndarray) -> np.ndarray:
    """Flip vectors whose last coordinate is negative."""
    sign = np.where(xi[..., -1:] < 0.0, -1.0, 1.0)
    return xi * sign


def sample_hemisphere(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    return canonicalize_hemisphere(sample_sphere(d, m, rng))


def log_sphere_surface_area(d: int) -> float:
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    return math.log(2.0) + 0.5 * d * math.log(math.pi) - math.lgamma(0.5 * d)


def sphere_surface_area(d: int) -> float:
    """Area of the unit sphere in R^d; underflows to 0.0 beyond d ~ 1400."""
    return math.exp(log_sphere_surface_area(d))
