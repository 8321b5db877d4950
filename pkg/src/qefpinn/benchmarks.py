"""Manufactured solutions on the unit ball and their right-hand sides.

Every exact solution is a ``BallProfileField`` built from the four closed-form
pairs below (the ``x_i``-weighted pairs hold for any coordinate ``i`` by
rotational symmetry, so they extend linearly to ``c . x``):

    (1-|x|^2)^{a/2}            ->  K1
    (1-|x|^2)^{1+a/2}          ->  K2 (1 - (1 + a/d)|x|^2)
    (1-|x|^2)^{a/2} x_i        ->  K3 x_i
    (1-|x|^2)^{1+a/2} x_i      ->  K4 (1 - (1 + a/(d+2))|x|^2) x_i

with K1 = 2^a G(a/2+1) G((a+d)/2) / G(d/2), K2 = 2^a G(a/2+2) G((a+d)/2) / G(d/2),
K3 = 2^a G(a/2+1) G((a+d)/2+1) / G(d/2+1), K4 = 2^a G(a/2+2) G((a+d)/2+1) / G(d/2+1).
All four constants are positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fraclap.fields import BallProfileField, ProfileTerm
from .geometry import UnitBall
from .rng import stream

BETA_TOL = 1e-12


class BenchmarkError(ValueError):
    pass


def ball_constants(d: int, alpha: float) -> tuple[float, float, float, float]:
    a = alpha
    base = a * math.log(2.0)
    lg = math.lgamma
    k1 = base + lg(a / 2 + 1) + lg((a + d) / 2) - lg(d / 2)
    k2 = base + lg(a / 2 + 2) + lg((a + d) / 2) - lg(d / 2)
    k3 = base + lg(a / 2 + 1) + lg((a + d) / 2 + 1) - lg(d / 2 + 1)
    k4 = base + lg(a / 2 + 2) + lg((a + d) / 2 + 1) - lg(d / 2 + 1)
    return math.exp(k1), math.exp(k2), math.exp(k3), math.exp(k4)


def profile_frac_laplacian(u: BallProfileField, alpha: float) -> Callable:
    """Closed-form fractional Laplacian of a profile field with exponents a/2 or 1+a/2."""
    d = u.dim
    k1, k2, k3, k4 = ball_constants(d, alpha)
    pieces = []
    for term, coef in zip(u.terms, u.coefs):
        if abs(term.beta - alpha / 2) < BETA_TOL:
            pieces.append(("low", term.offset, coef))
        elif abs(term.beta - (1 + alpha / 2)) < BETA_TOL:
            pieces.append(("high", term.offset, coef))
        else:
            raise BenchmarkError(f"no closed form for exponent {term.beta} at alpha={alpha}")

    def lap(points, t=None):
        points = np.asarray(points, dtype=np.float64)
        sq = np.sum(points * points, axis=-1)
        out = np.zeros(points.shape[:-1])
        for kind, a0, c in pieces:
            cx = points @ c
            if kind == "low":
                out = out + k1 * a0 + k3 * cx
            else:
                out = out + k2 * a0 * (1 - (1 + alpha / d) * sq) + k4 * (1 - (1 + alpha / (d + 2)) * sq) * cx
        return u.time_factor(t) * out

    return lap


def profile_gradient(u: BallProfileField, points) -> np.ndarray:
    """Spatial gradient of the time-independent part, shape ``(N, d)``; interior points only."""
    points = np.asarray(points, dtype=np.float64)
    q = 1.0 - np.sum(points * points, axis=-1)
    grad = np.zeros_like(points)
    for term, a0, c in zip(u.terms, u.offsets, u.coefs):
        b = term.beta
        lin = a0 + points @ c
        grad += (-2.0 * b * q ** (b - 1.0) * lin)[:, None] * points + (q**b)[:, None] * c
    return grad


def ball_pair(row: int, d: int, alpha: float, coord: int | None = None):
    """(u, (-Delta)^{a/2} u) for a row of the closed-form table."""
    if row not in (1, 2, 3, 4):
        raise BenchmarkError(f"row must be 1..4, got {row}")
    if not 0.0 < alpha < 2.0:
        raise BenchmarkError(f"alpha must lie in (0, 2), got {alpha}")
    coord = d - 1 if coord is None else coord
    beta = alpha / 2 if row in (1, 3) else 1 + alpha / 2
    if row in (1, 2):
        term = ProfileTerm(beta, 1.0)
    else:
        e = np.zeros(d)
        e[coord] = 1.0
        term = ProfileTerm(beta, 0.0, e)
    u = BallProfileField(d, (term,))
    return u, profile_frac_laplacian(u, alpha)


@dataclass
class BenchmarkCase:
    name: str
    dim: int
    alpha: float
    solution: BallProfileField
    rhs: Callable
    frac_lap: Callable
    c1: np.ndarray | None = None
    c2: np.ndarray | None = None
    gamma: float | None = None
    velocity: np.ndarray | None = None
    diffusivity: float = 1.0
    horizon: float = 1.0
    u0: Callable | None = None
    params: dict = field(default_factory=dict)

    @property
    def time_dependent(self) -> bool:
        return self.gamma is not None

    @property
    def problem(self) -> str:
        return "tfde" if self.time_dependent else "fpe"

    @property
    def domain(self) -> UnitBall:
        return UnitBall(self.dim)

    def u(self, points, t=None):
        return self.solution(points, t)

    def f(self, points, t=None):
        return self.rhs(points, t)


def draw_coefficients(d: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = stream(seed, "coefficients")
    c1 = rng.standard_normal(d + 1)
    c2 = rng.standard_normal(d + 1)
    return c1, c2


def _composite_field(d, alpha, c1, c2, time_power=None) -> BallProfileField:
    terms = []
    if c1 is not None:
        terms.append(ProfileTerm(alpha / 2, float(c1[0]), np.asarray(c1[1:], dtype=np.float64)))
    if c2 is not None:
        terms.append(ProfileTerm(1 + alpha / 2, float(c2[0]), np.asarray(c2[1:], dtype=np.float64)))
    return BallProfileField(d, tuple(terms), time_power)


def _stationary_case(name, u, alpha, **kw) -> BenchmarkCase:
    lap = profile_frac_laplacian(u, alpha)
    return BenchmarkCase(name, u.dim, alpha, u, lap, lap, **kw)


def ball_case(row: int, d: int, alpha: float, seed: int = 0) -> BenchmarkCase:
    u, _ = ball_pair(row, d, alpha)
    return _stationary_case(f"fpe/ball-row{row}", u, alpha)


def composite_case(d: int, alpha: float, seed: int = 0, c1=None, c2=None) -> BenchmarkCase:
    if c1 is None or c2 is None:
        d1, d2 = draw_coefficients(d, seed)
        c1 = d1 if c1 is None else np.asarray(c1, dtype=np.float64)
        c2 = d2 if c2 is None else np.asarray(c2, dtype=np.float64)
    u = _composite_field(d, alpha, c1, c2)
    return _stationary_case("fpe/composite", u, alpha, c1=c1, c2=c2, params={"seed": seed})


def zero_case(d: int, alpha: float, seed: int = 0) -> BenchmarkCase:
    u = BallProfileField(d, (ProfileTerm(alpha / 2, 0.0),))
    return _stationary_case("fpe/zero", u, alpha)


TIME_POWER = 2.5


def tfde_case(
    kind: str,
    d: int,
    alpha: float = 1.5,
    gamma: float = 0.5,
    v: float | np.ndarray = 1.0,
    c: float = 1.0,
    seed: int = 0,
    horizon: float = 1.0,
) -> BenchmarkCase:
    """Time-dependent case ``u = t^2.5 S(x)`` with zero initial data.

    A scalar ``v`` means the velocity ``v * ones(d)``.
    """
    if kind not in ("smooth", "singular"):
        raise BenchmarkError(f"kind must be 'smooth' or 'singular', got {kind!r}")
    if not 0.0 < gamma < 1.0:
        raise BenchmarkError(f"gamma must lie in (0, 1), got {gamma}")
    c1, c2 = draw_coefficients(d, seed)
    spatial = _composite_field(d, alpha, c1 if kind == "singular" else None, c2)
    u = BallProfileField(d, spatial.terms, TIME_POWER)
    velocity = np.broadcast_to(np.asarray(v, dtype=np.float64), (d,)).copy()
    lap_spatial = profile_frac_laplacian(spatial, alpha)
    caputo_coef = math.exp(math.lgamma(TIME_POWER + 1) - math.lgamma(TIME_POWER + 1 - gamma))

    def frac_lap(points, t=None):
        return np.asarray(t, dtype=np.float64) ** TIME_POWER * lap_spatial(points)

    def rhs(points, t=None):
        points = np.asarray(points, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        s = spatial(points)
        adv = profile_gradient(spatial, points) @ velocity
        return caputo_coef * t ** (TIME_POWER - gamma) * s + t**TIME_POWER * (c * lap_spatial(points) + adv)

    def u0(points):
        return np.zeros(np.shape(points)[:-1])

    return BenchmarkCase(
        f"tfde/{kind}",
        d,
        alpha,
        u,
        rhs,
        frac_lap,
        c1=c1 if kind == "singular" else None,
        c2=c2,
        gamma=gamma,
        velocity=velocity,
        diffusivity=c,
        horizon=horizon,
        u0=u0,
        params={"seed": seed, "v": v},
    )


REGISTRY: dict[str, Callable[..., BenchmarkCase]] = {
    "fpe/ball-row1": lambda d, alpha, seed=0, **kw: ball_case(1, d, alpha, seed),
    "fpe/ball-row2": lambda d, alpha, seed=0, **kw: ball_case(2, d, alpha, seed),
    "fpe/ball-row3": lambda d, alpha, seed=0, **kw: ball_case(3, d, alpha, seed),
    "fpe/ball-row4": lambda d, alpha, seed=0, **kw: ball_case(4, d, alpha, seed),
    "fpe/composite": lambda d, alpha, seed=0, **kw: composite_case(d, alpha, seed),
    "fpe/zero": lambda d, alpha, seed=0, **kw: zero_case(d, alpha, seed),
    "tfde/smooth": lambda d, alpha, seed=0, **kw: tfde_case("smooth", d, alpha, seed=seed, **kw),
    "tfde/singular": lambda d, alpha, seed=0, **kw: tfde_case("singular", d, alpha, seed=seed, **kw),
}


def get_case(name: str, d: int, alpha: float, seed: int = 0, **kw) -> BenchmarkCase:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise BenchmarkError(f"unknown benchmark {name!r}; known: {', '.join(sorted(REGISTRY))}") from None
    return factory(d, alpha, seed, **kw)


def sample_test_points(case: BenchmarkCase, n: int, seed: int):
    """Uniform points in the ball and, for time problems, times in (0, T]."""
    rng = stream(seed, "test-points")
    xs = case.domain.sample_interior(n, rng)
    t = None
    if case.time_dependent:
        t = case.horizon * (1.0 - rng.random(n))
    return xs, t


def e_test(predicted, exact) -> float:
    """Relative l2 error ``|predicted - exact| / |exact|``."""
    predicted = np.asarray(predicted, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = np.linalg.norm(exact)
    if denom == 0.0:
        raise ZeroDivisionError("relative error undefined for an identically zero exact solution")
    return float(np.linalg.norm(predicted - exact) / denom)
