"""Ray stencils: the common linear form of every operator scheme.

A scheme evaluated at centres ``x_i`` is a sum of terms

    exp(log_scale) * ( sum_{m,k} W[i,m,k] * (u(x_i) - u(x_i + R[i,m,k] xi_m))
                       + center[i] * u(x_i) )

For a symmetric block each ray contributes ``W * (2u(x) - u(x + R xi) - u(x - R xi))``.
Per-direction partial sums are formed chunk by chunk and reduced once over
the full direction axis, so the result does not depend on ``chunk_size``.
Chunks may be evaluated by a pool of worker threads (``set_workers``); they
are gathered in chunk order, so the worker count does not change the result
either. Chunks that may build an autograd graph always run serially.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import _accel
from .fields import BallProfileField


@dataclass(frozen=True)
class RayBlock:
    dirs: np.ndarray  # (M, d)
    radii: np.ndarray  # (n or 1, M, K)
    weights: np.ndarray  # (n or 1, M, K)
    symmetric: bool = False

    @property
    def n_dirs(self) -> int:
        return self.dirs.shape[0]


@dataclass(frozen=True)
class Term:
    name: str
    log_scale: float
    block: RayBlock | None = None
    center: np.ndarray | None = None  # (n,)


@dataclass(frozen=True)
class Stencil:
    xs: np.ndarray
    t: np.ndarray | None
    terms: tuple[Term, ...]

    @property
    def n_points(self) -> int:
        return self.xs.shape[0]

    def n_evaluations(self) -> int:
        """Field evaluations needed to apply the stencil once (centres included)."""
        n = self.n_points
        total = n
        for term in self.terms:
            if term.block is not None:
                b = term.block
                total += n * b.n_dirs * b.radii.shape[2] * (2 if b.symmetric else 1)
        return total


def _is_torch(x) -> bool:
    return type(x).__module__.startswith("torch")


def _chunks(m: int, size: int):
    for start in range(0, m, size):
        yield start, min(start + size, m)


_WORKERS = 1


def set_workers(n: int) -> None:
    """Number of threads used to evaluate direction chunks."""
    global _WORKERS
    if int(n) < 1:
        raise ValueError("worker count must be positive")
    _WORKERS = int(n)


def get_workers() -> int:
    return _WORKERS


def _map_chunks(fn, m: int, size: int, graph: bool = False) -> list:
    """Evaluate ``fn(lo, hi)`` on every chunk, results in chunk order.

    With ``graph`` set and torch grad mode on, chunks run serially: autograd
    accumulates parameter gradients in graph-creation order, which threads
    would make scheduling dependent.
    """
    spans = list(_chunks(m, size))
    run = fn
    if graph:
        import torch

        if torch.is_grad_enabled():
            return [fn(lo, hi) for lo, hi in spans]

        def run(lo, hi):
            # grad mode is thread local
            with torch.no_grad():
                return fn(lo, hi)

    if _WORKERS == 1 or len(spans) == 1:
        return [fn(lo, hi) for lo, hi in spans]
    with ThreadPoolExecutor(max_workers=min(_WORKERS, len(spans))) as pool:
        return list(pool.map(lambda span: run(*span), spans))


def _rows(a: np.ndarray, lo: int, hi: int) -> np.ndarray:
    return a[:, lo:hi]


def _ray_sum_torch(u0, vals, w):
    import torch

    w = torch.as_tensor(np.array(w), dtype=vals.dtype, device=vals.device)
    acc = w[:, :, 0] * (u0[:, None] - vals[:, :, 0])
    for k in range(1, vals.shape[2]):
        acc = acc + w[:, :, k] * (u0[:, None] - vals[:, :, k])
    return acc


def _apply_block_profile(u: BallProfileField, xs, t, u0, block: RayBlock, chunk_size: int):
    xx = np.sum(xs * xs, axis=1)
    cx = xs @ u.coefs.T
    tf = u.time_factor(t)
    # dot products are formed once: BLAS results can depend on operand shapes
    xd_all = xs @ block.dirs.T
    cd_all = block.dirs @ u.coefs.T

    def chunk(lo, hi):
        xd = np.ascontiguousarray(xd_all[:, lo:hi])
        cd = np.ascontiguousarray(cd_all[lo:hi])
        radii = _rows(block.radii, lo, hi)
        vals = _accel.ray_profile_values(xx, xd, cx, cd, radii, u.betas, u.offsets)
        w = _rows(block.weights, lo, hi)
        if block.symmetric:
            vals = 0.5 * (vals + _accel.ray_profile_values(xx, xd, cx, cd, -radii, u.betas, u.offsets))
            w = 2.0 * w
        if u.time_power is not None:
            vals = vals * np.asarray(tf)[:, None, None]
        return _accel.weighted_ray_sum(u0, vals, np.ascontiguousarray(w))

    return np.concatenate(_map_chunks(chunk, block.n_dirs, chunk_size), axis=1)


def _apply_block_generic(u, xs, t, u0, block: RayBlock, chunk_size: int):
    n, d = xs.shape

    def chunk(lo, hi):
        dirs = block.dirs[lo:hi]
        radii = _rows(block.radii, lo, hi)
        k = radii.shape[2]
        shape = (n, hi - lo, k)
        offs = radii[..., None] * dirs[None, :, None, :]
        tt = None if t is None else np.broadcast_to(t[:, None, None], shape).reshape(-1)
        vals = u((xs[:, None, None, :] + offs).reshape(-1, d), tt)
        vals = vals.reshape(shape)
        w = _rows(block.weights, lo, hi)
        if block.symmetric:
            minus = u((xs[:, None, None, :] - offs).reshape(-1, d), tt).reshape(shape)
            vals = 0.5 * (vals + minus)
            w = 2.0 * w
        w = np.broadcast_to(w, shape)
        if _is_torch(vals):
            return _ray_sum_torch(u0, vals, w)
        return _accel.weighted_ray_sum_numpy(np.asarray(u0), np.asarray(vals), w)

    parts = _map_chunks(chunk, block.n_dirs, chunk_size, graph=True)
    if _is_torch(parts[0]):
        import torch

        return torch.cat(parts, dim=1)
    return np.concatenate(parts, axis=1)


def apply_terms(stencil: Stencil, u, chunk_size: int = 64, u0=None) -> list:
    """Value of each term at every centre, in stencil order.

    ``u0`` may carry precomputed centre values of ``u``.
    """
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    xs, t = stencil.xs, stencil.t
    if u0 is None:
        u0 = u(xs, t)
    profile = isinstance(u, BallProfileField)
    out = []
    for term in stencil.terms:
        value = None
        if term.block is not None:
            if profile:
                per_dir = _apply_block_profile(u, xs, t, np.asarray(u0), term.block, chunk_size)
            else:
                per_dir = _apply_block_generic(u, xs, t, u0, term.block, chunk_size)
            value = per_dir.sum(1)
        if term.center is not None:
            c = term.center
            if _is_torch(u0):
                import torch

                c = torch.as_tensor(c, dtype=u0.dtype, device=u0.device)
            value = c * u0 if value is None else value + c * u0
        if value is None:
            value = 0.0 * u0
        out.append(float(np.exp(term.log_scale)) * value)
    return out


def apply_stencil(stencil: Stencil, u, chunk_size: int = 64, u0=None):
    terms = apply_terms(stencil, u, chunk_size, u0)
    total = terms[0]
    for v in terms[1:]:
        total = total + v
    return total
