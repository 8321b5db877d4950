"""Discretisations of the fractional Laplacian on a bounded domain.

Three schemes share the ray-stencil machinery:

* ``qe``  -- distance-adaptive split at ``r0(x)``: Gauss-Jacobi near field over
  hemisphere directions, Gauss-Legendre interior far field, analytic exterior.
* ``mc``  -- fixed-radius split with Beta-distributed radial samples.
* ``imc`` -- fixed-radius Gauss-Jacobi near field plus analytic tail.

All angular directions for one call are drawn up front from the supplied
generator and shared by every evaluation point.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..geometry import (
    Domain,
    GeometryError,
    log_sphere_surface_area,
    sample_hemisphere,
    sample_sphere,
)
from ..quadrature import gauss_legendre_rule, jacobi_rule_on, map_to_interval
from .stencil import RayBlock, Stencil, Term, apply_stencil, apply_terms

METHODS = ("qe", "mc", "imc")
DEGENERATE_SPAN = 1e-14


@dataclass(frozen=True)
class FracLapConfig:
    alpha: float
    n_gj: int = 8
    n_gauss: int = 10
    m_near: int = 64
    m_far_in: int = 64
    m_far_out: int = 256
    chunk_size: int = 64
    mc_r0: float = 0.25
    mc_eps: float = 1e-6
    imc_r0: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError(f"alpha must lie in (0, 2), got {self.alpha}")
        for name in ("n_gj", "n_gauss", "m_near", "m_far_in", "m_far_out", "chunk_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.mc_eps <= 0.0 or self.mc_r0 <= 0.0 or self.imc_r0 <= 0.0:
            raise ValueError("mc_eps, mc_r0 and imc_r0 must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def log_c_d_alpha(d: int, alpha: float) -> float:
    if not 0.0 < alpha < 2.0:
        raise ValueError(f"alpha must lie in (0, 2), got {alpha}")
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    return (
        (alpha - 1.0) * math.log(2.0)
        + math.log(alpha)
        + math.lgamma(0.5 * alpha + 0.5 * d)
        - 0.5 * d * math.log(math.pi)
        - math.lgamma(1.0 - 0.5 * alpha)
    )


def c_d_alpha(d: int, alpha: float) -> float:
    """Normalising constant of the integral fractional Laplacian."""
    return math.exp(log_c_d_alpha(d, alpha))


def _prepare(xs, t):
    xs = np.asarray(xs, dtype=np.float64)
    single = xs.ndim == 1
    xs = np.atleast_2d(xs)
    if t is not None:
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), xs.shape[:1]).copy()
    return xs, t, single


def _r0(domain: Domain, xs) -> np.ndarray:
    r0 = domain.r0(xs)
    if np.any(r0 <= 0.0):
        raise GeometryError("operator requested at a point on or outside the boundary")
    return r0


# --- direction draws ------------------------------------------------------


def draw_qe_directions(d: int, cfg: FracLapConfig, rng: np.random.Generator) -> dict:
    return {
        "near": sample_hemisphere(d, cfg.m_near, rng),
        "far_in": sample_sphere(d, cfg.m_far_in, rng),
        "far_out": sample_sphere(d, cfg.m_far_out, rng),
    }


def draw_mc_samples(d: int, cfg: FracLapConfig, rng: np.random.Generator) -> dict:
    a = cfg.alpha
    near = sample_sphere(d, cfg.m_near, rng)
    r_in = cfg.mc_r0 * rng.beta(2.0 - a, 1.0, cfg.m_near)
    far = sample_sphere(d, cfg.m_far_in, rng)
    r_out = cfg.mc_r0 / rng.beta(a, 1.0, cfg.m_far_in)
    return {"near": near, "near_radii": r_in, "far": far, "far_radii": r_out}


def draw_imc_directions(d: int, cfg: FracLapConfig, rng: np.random.Generator) -> dict:
    # one direction per (replicate, Gauss-Jacobi node), replicate-major
    return {"near": sample_sphere(d, cfg.m_near * cfg.n_gj, rng)}


def exact_directions_1d() -> dict:
    """QE directions for d = 1, where the sphere is exactly {-1, +1}."""
    both = np.array([[1.0], [-1.0]])
    return {"near": np.array([[1.0]]), "far_in": both, "far_out": both.copy()}


def draw_directions(method: str, d: int, cfg: FracLapConfig, rng: np.random.Generator) -> dict:
    if method == "qe":
        return draw_qe_directions(d, cfg, rng)
    if method == "mc":
        return draw_mc_samples(d, cfg, rng)
    if method == "imc":
        return draw_imc_directions(d, cfg, rng)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


# --- QE terms ---------------------------------------------------------------


def _qe_near_term(xs, r0, dirs, cfg, log_pref) -> Term:
    a = cfg.alpha
    rule = jacobi_rule_on(cfg.n_gj, 0.0, 1.0 - a, 0.0, 1.0)
    tau, w = rule.nodes, rule.weights
    m = dirs.shape[0]
    shape = (xs.shape[0], m, tau.size)
    radii = np.broadcast_to(r0[:, None, None] * tau, shape).copy()
    weights = np.broadcast_to((r0 ** (-a))[:, None, None] * (w / tau**2) / m, shape).copy()
    block = RayBlock(dirs, radii, weights, symmetric=True)
    return Term("near", log_pref + log_sphere_surface_area(xs.shape[1]) - math.log(2.0), block=block)


def _qe_far_in_term(xs, r0, dirs, domain, cfg, log_pref) -> Term:
    a = cfg.alpha
    rule = map_to_interval(gauss_legendre_rule(cfg.n_gauss), 0.0, 1.0)
    s, w = rule.nodes, rule.weights
    m = dirs.shape[0]
    span = domain.dir_dist_matrix(xs, dirs) - r0[:, None]
    active = span > DEGENERATE_SPAN
    span = np.where(active, span, 0.0)
    radii = r0[:, None, None] + span[:, :, None] * s
    weights = np.where(active[:, :, None], span[:, :, None] * w / radii ** (1.0 + a), 0.0) / m
    block = RayBlock(dirs, radii, weights, symmetric=False)
    return Term("far_in", log_pref + log_sphere_surface_area(xs.shape[1]), block=block)


def _qe_far_out_term(xs, dirs, domain, cfg, log_pref) -> Term:
    a = cfg.alpha
    dist = domain.dir_dist_matrix(xs, dirs)
    center = np.sum(dist ** (-a), axis=1) / (a * dirs.shape[0])
    return Term("far_out", log_pref + log_sphere_surface_area(xs.shape[1]), center=center)


def qe_stencil(xs, t, domain: Domain, cfg: FracLapConfig, rng=None, dirs=None, include_constant=True) -> Stencil:
    xs, t, _ = _prepare(xs, t)
    d = xs.shape[1]
    if dirs is None:
        dirs = draw_qe_directions(d, cfg, rng)
    r0 = _r0(domain, xs)
    log_pref = log_c_d_alpha(d, cfg.alpha) if include_constant else 0.0
    terms = (
        _qe_near_term(xs, r0, dirs["near"], cfg, log_pref),
        _qe_far_in_term(xs, r0, dirs["far_in"], domain, cfg, log_pref),
        _qe_far_out_term(xs, dirs["far_out"], domain, cfg, log_pref),
    )
    return Stencil(xs, t, terms)


def _single_term(xs, t, term_fn, single, u, cfg):
    stencil = Stencil(xs, t, (term_fn,))
    value = apply_stencil(stencil, u, cfg.chunk_size)
    return value[0] if single else value


def qe_near_field(u, xs, t=None, domain=None, cfg=None, rng=None, dirs=None):
    """Near-field integral over the ball of radius ``r0(x)``, without C_{d,alpha}."""
    xs, t, single = _prepare(xs, t)
    if dirs is None:
        dirs = sample_hemisphere(xs.shape[1], cfg.m_near, rng)
    term = _qe_near_term(xs, _r0(domain, xs), dirs, cfg, 0.0)
    return _single_term(xs, t, term, single, u, cfg)


def qe_interior_far_field(u, xs, t=None, domain=None, cfg=None, rng=None, dirs=None):
    """Far-field integral between ``r0(x)`` and the boundary, without C_{d,alpha}."""
    xs, t, single = _prepare(xs, t)
    if dirs is None:
        dirs = sample_sphere(xs.shape[1], cfg.m_far_in, rng)
    term = _qe_far_in_term(xs, _r0(domain, xs), dirs, domain, cfg, 0.0)
    return _single_term(xs, t, term, single, u, cfg)


def qe_exterior_far_field(u, xs, t=None, domain=None, cfg=None, rng=None, dirs=None):
    """Analytic exterior contribution, without C_{d,alpha}."""
    xs, t, single = _prepare(xs, t)
    _r0(domain, xs)
    if dirs is None:
        dirs = sample_sphere(xs.shape[1], cfg.m_far_out, rng)
    term = _qe_far_out_term(xs, dirs, domain, cfg, 0.0)
    return _single_term(xs, t, term, single, u, cfg)


# --- baselines ---------------------------------------------------------------


def mc_stencil(xs, t, domain: Domain, cfg: FracLapConfig, rng=None, dirs=None) -> Stencil:
    xs, t, _ = _prepare(xs, t)
    d = xs.shape[1]
    if dirs is None:
        dirs = draw_mc_samples(d, cfg, rng)
    a, r0 = cfg.alpha, cfg.mc_r0
    log_pref = log_c_d_alpha(d, a) + log_sphere_surface_area(d)

    r_eps = np.maximum(cfg.mc_eps, dirs["near_radii"])
    m_in = r_eps.size
    near_w = (r0 ** (2.0 - a) / (2.0 * (2.0 - a))) / r_eps**2 / m_in
    near = RayBlock(dirs["near"], r_eps[None, :, None], near_w[None, :, None], symmetric=True)

    r_out = dirs["far_radii"]
    m_out = r_out.size
    far_w = np.full(m_out, r0 ** (-a) / (2.0 * a) / m_out)
    far = RayBlock(dirs["far"], r_out[None, :, None], far_w[None, :, None], symmetric=True)
    return Stencil(xs, t, (Term("near", log_pref, block=near), Term("far", log_pref, block=far)))


def imc_stencil(xs, t, domain: Domain, cfg: FracLapConfig, rng=None, dirs=None) -> Stencil:
    xs, t, _ = _prepare(xs, t)
    n, d = xs.shape
    if dirs is None:
        dirs = draw_imc_directions(d, cfg, rng)
    a, r0 = cfg.alpha, cfg.imc_r0
    log_c = log_c_d_alpha(d, a)
    log_s = log_sphere_surface_area(d)

    rule = jacobi_rule_on(cfg.n_gj, 0.0, 1.0 - a, 0.0, r0)
    near_dirs = dirs["near"]
    reps = near_dirs.shape[0] // rule.n
    if reps * rule.n != near_dirs.shape[0]:
        raise ValueError("near directions must come in whole replicates of the Gauss-Jacobi rule")
    radii = np.tile(rule.nodes, reps)
    weights = np.tile(rule.weights / rule.nodes**2, reps) / reps
    near = RayBlock(near_dirs, radii[None, :, None], weights[None, :, None], symmetric=True)
    tail = np.full(n, r0 ** (-a) / a)
    return Stencil(
        xs,
        t,
        (Term("near", log_c + log_s - math.log(2.0), block=near), Term("tail", log_c + log_s, center=tail)),
    )


def build_stencil(method: str, xs, t, domain: Domain, cfg: FracLapConfig, rng=None, dirs=None) -> Stencil:
    if method == "qe":
        return qe_stencil(xs, t, domain, cfg, rng, dirs)
    if method == "mc":
        return mc_stencil(xs, t, domain, cfg, rng, dirs)
    if method == "imc":
        return imc_stencil(xs, t, domain, cfg, rng, dirs)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def frac_laplacian(method: str, u, xs, t=None, domain=None, cfg=None, rng=None, dirs=None):
    """``(-Delta)^{alpha/2} u`` at ``xs`` with the chosen scheme."""
    single = np.ndim(xs) == 1
    stencil = build_stencil(method, xs, t, domain, cfg, rng, dirs)
    value = apply_stencil(stencil, u, cfg.chunk_size)
    return value[0] if single else value


def qe_frac_laplacian(u, xs, t=None, domain=None, cfg=None, rng=None, dirs=None):
    return frac_laplacian("qe", u, xs, t, domain, cfg, rng, dirs)


def mc_frac_laplacian(u, xs, t=None, domain=None, cfg=None, rng=None, dirs=None):
    return frac_laplacian("mc", u, xs, t, domain, cfg, rng, dirs)


def imc_frac_laplacian(u, xs, t=None, domain=None, cfg=None, rng=None, dirs=None):
    return frac_laplacian("imc", u, xs, t, domain, cfg, rng, dirs)


def frac_laplacian_parts(method: str, u, xs, t=None, domain=None, cfg=None, rng=None, dirs=None) -> dict:
    """Per-term values (each including C_{d,alpha}) keyed by term name."""
    stencil = build_stencil(method, xs, t, domain, cfg, rng, dirs)
    values = apply_terms(stencil, u, cfg.chunk_size)
    return {term.name: v for term, v in zip(stencil.terms, values)}
