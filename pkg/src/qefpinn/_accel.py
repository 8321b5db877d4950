"""Hot kernels: numba when available, numpy otherwise.

Set ``QEFPINN_DISABLE_NUMBA=1`` before import to force the numpy path. Both
paths implement the same arithmetic; they agree to rounding, not bitwise.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("QEFPINN_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("disabled by QEFPINN_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def backend() -> str:
    return "numba" if NUMBA_AVAILABLE else "numpy"


def ray_profile_values_numpy(xx, xd, cx, cd, radii, betas, offsets):
    """Evaluate ``sum_t (1 - |y|^2)_+^beta_t (a_t + c_t . y)`` at ``y = x + r xi``.

    xx: (n,) squared norms of the centres; xd: (n, M) centre-direction dots;
    cx: (n, T) and cd: (M, T) coefficient dots; radii: (n or 1, M, K).
    Returns (n, M, K).
    """
    r = radii
    q = 1.0 - (xx[:, None, None] + r * (2.0 * xd[:, :, None] + r))
    q = np.maximum(q, 0.0)
    out = np.zeros(np.broadcast_shapes(q.shape, (xx.shape[0],) + r.shape[1:]))
    for t in range(betas.shape[0]):
        lin = offsets[t] + cx[:, None, None, t] + r * cd[None, :, None, t]
        out += q ** betas[t] * lin
    return out


@njit(cache=True, fastmath=False)
def _ray_profile_values_jit(xx, xd, cx, cd, radii, betas, offsets):
    n = xx.shape[0]
    m = xd.shape[1]
    k = radii.shape[2]
    shared = radii.shape[0] == 1
    nt = betas.shape[0]
    out = np.zeros((n, m, k))
    for i in range(n):
        ri = 0 if shared else i
        for j in range(m):
            s = xd[i, j]
            for kk in range(k):
                r = radii[ri, j, kk]
                q = 1.0 - (xx[i] + r * (2.0 * s + r))
                if q <= 0.0:
                    continue
                acc = 0.0
                for t in range(nt):
                    acc += q ** betas[t] * (offsets[t] + cx[i, t] + r * cd[j, t])
                out[i, j, kk] = acc
    return out


def ray_profile_values(xx, xd, cx, cd, radii, betas, offsets):
    if NUMBA_AVAILABLE:
        return _ray_profile_values_jit(
            np.ascontiguousarray(xx),
            np.ascontiguousarray(xd),
            np.ascontiguousarray(cx),
            np.ascontiguousarray(cd),
            np.ascontiguousarray(radii),
            np.ascontiguousarray(betas, dtype=np.float64),
            np.ascontiguousarray(offsets, dtype=np.float64),
        )
    return ray_profile_values_numpy(xx, xd, cx, cd, radii, betas, offsets)


def weighted_ray_sum_numpy(u0, vals, weights):
    """Per-direction ``sum_k w (u0 - v)``; the k-loop order is fixed."""
    acc = np.zeros(np.broadcast_shapes(vals.shape, weights.shape)[:2])
    for k in range(vals.shape[2]):
        acc += weights[:, :, k] * (u0[:, None] - vals[:, :, k])
    return acc


@njit(cache=True, fastmath=False)
def _weighted_ray_sum_jit(u0, vals, weights):
    n, m, k = vals.shape
    shared = weights.shape[0] == 1
    acc = np.zeros((n, m))
    for i in range(n):
        wi = 0 if shared else i
        for j in range(m):
            s = 0.0
            for kk in range(k):
                s += weights[wi, j, kk] * (u0[i] - vals[i, j, kk])
            acc[i, j] = s
    return acc


def weighted_ray_sum(u0, vals, weights):
    if NUMBA_AVAILABLE:
        return _weighted_ray_sum_jit(
            np.ascontiguousarray(u0), np.ascontiguousarray(vals), np.ascontiguousarray(weights)
        )
    return weighted_ray_sum_numpy(u0, vals, weights)
