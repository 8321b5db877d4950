"""Feature-enhanced neural trial functions.

    Psi(x, t) = u0(x) + sum_j t^gamma b(x)^{mu_j} phi_j(x, t)     (time-dependent)
    Psi(x)    =         sum_j         b(x)^{mu_j} phi_j(x)         (stationary)

``phi`` is a tanh MLP with ``p`` outputs. Input derivatives are propagated in
forward mode through the network by hand, so every quantity the residual
needs (values, d/dt, v . grad_x) is an ordinary torch expression and reverse
mode gives exact parameter gradients of it.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn

from .geometry import Domain

DTYPE = torch.float64
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


def mu_schedule(alpha: float, p: int, mu_p: float) -> list[float]:
    """Linearly spaced boundary exponents from ``alpha/2`` up to ``mu_p``."""
    if p < 2:
        raise ValueError(f"need at least two heads, got p={p}")
    lo = alpha / 2
    if not mu_p > lo:
        raise ValueError(f"mu_p={mu_p} must exceed alpha/2={lo}")
    step = (mu_p - lo) / (p - 1)
    return [lo + j * step for j in range(p)]


@dataclass(frozen=True)
class TrialConfig:
    dim: int
    alpha: float
    p: int = 16
    width: int = 128
    depth: int = 4
    mu_p: float | None = None
    time_dependent: bool = False
    gamma: float | None = None

    def __post_init__(self):
        if self.time_dependent and (self.gamma is None or not 0.0 < self.gamma < 1.0):
            raise ValueError("time-dependent trial spaces need gamma in (0, 1)")

    @property
    def mu(self) -> list[float]:
        mu_p = self.alpha / 2 + 1.0 if self.mu_p is None else self.mu_p
        return mu_schedule(self.alpha, self.p, mu_p)

    @property
    def in_features(self) -> int:
        return self.dim + (1 if self.time_dependent else 0)

    def to_dict(self) -> dict:
        return asdict(self)


class MLP(nn.Module):
    def __init__(self, sizes: list[int]):
        super().__init__()
        self.layers = nn.ModuleList(nn.Linear(a, b, dtype=DTYPE) for a, b in zip(sizes[:-1], sizes[1:]))

    def reset(self, generator: torch.Generator) -> None:
        # uniform fan-in weights, zero biases
        with torch.no_grad():
            for layer in self.layers:
                bound = 1.0 / math.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=generator)
                layer.bias.zero_()

    def forward(self, z):
        for layer in self.layers[:-1]:
            z = torch.tanh(layer(z))
        return self.layers[-1](z)

    def forward_jvp(self, z, dz):
        """Outputs and their directional derivative along the input tangent ``dz``."""
        for layer in self.layers[:-1]:
            z = torch.tanh(layer(z))
            dz = (1.0 - z * z) * (dz @ layer.weight.T)
        last = self.layers[-1]
        return last(z), dz @ last.weight.T


class TrialFunction(nn.Module):
    """Trial function on a domain; points and times may be numpy or torch."""

    def __init__(self, cfg: TrialConfig, domain: Domain, u0: Callable | None = None, seed: int = 0):
        super().__init__()
        if domain.dim != cfg.dim:
            raise ValueError("trial and domain dimensions differ")
        self.cfg = cfg
        self.domain = domain
        self.u0 = u0
        sizes = [cfg.in_features] + [cfg.width] * cfg.depth + [cfg.p]
        self.net = MLP(sizes)
        self.register_buffer("mu", torch.tensor(cfg.mu, dtype=DTYPE))
        gen = torch.Generator().manual_seed(int(seed))
        self.net.reset(gen)

    # -- inputs -----------------------------------------------------------

    @staticmethod
    def _tensor(a):
        if a is None:
            return None
        if isinstance(a, torch.Tensor):
            return a.to(DTYPE)
        return torch.as_tensor(np.asarray(a, dtype=np.float64))

    def _inputs(self, x, t):
        if self.cfg.time_dependent:
            if t is None:
                raise ValueError("time-dependent trial evaluated without t")
            t = torch.broadcast_to(t, x.shape[:1])
            return torch.cat([x, t[:, None]], dim=1)
        return x

    def _u0(self, x):
        if self.u0 is None:
            return torch.zeros(x.shape[0], dtype=DTYPE)
        return self._tensor(self.u0(x.detach().numpy()))

    # -- evaluation ----------------------------------------------------------

    def heads(self, x, t=None):
        x, t = self._tensor(x), self._tensor(t)
        return self.net(self._inputs(x, t))

    def features(self, x, t=None):
        """Per-head multipliers ``t^gamma b(x)^mu_j``, shape ``(N, p)``."""
        x, t = self._tensor(x), self._tensor(t)
        feat = self.domain.boundary_feature(x)[:, None] ** self.mu
        if self.cfg.time_dependent:
            feat = feat * (torch.broadcast_to(t, x.shape[:1]) ** self.cfg.gamma)[:, None]
        return feat

    def forward(self, x, t=None):
        x, t = self._tensor(x), self._tensor(t)
        phi = self.net(self._inputs(x, t))
        out = (self.features(x, t) * phi).sum(1)
        if self.cfg.time_dependent:
            out = out + self._u0(x)
        return out

    def directional_x(self, x, t, v):
        """``(Psi, v . grad_x Psi)`` at strictly interior points."""
        x, t = self._tensor(x), self._tensor(t)
        v = self._tensor(v)
        dx = torch.broadcast_to(v, x.shape)
        if self.cfg.time_dependent:
            dz = torch.cat([dx, torch.zeros(x.shape[0], 1, dtype=DTYPE)], dim=1)
        else:
            dz = dx
        phi, dphi = self.net.forward_jvp(self._inputs(x, t), dz)
        b = self.domain.boundary_feature(x)
        db = (self.domain.boundary_feature_grad(x) * dx).sum(1)
        bmu = b[:, None] ** self.mu
        dbmu = self.mu * b[:, None] ** (self.mu - 1.0) * db[:, None]
        val = (bmu * phi).sum(1)
        dval = (dbmu * phi + bmu * dphi).sum(1)
        if self.cfg.time_dependent:
            tg = torch.broadcast_to(t, x.shape[:1]) ** self.cfg.gamma
            val, dval = tg * val, tg * dval
            if self.u0 is not None:
                # u0 is plain data, so central differences suffice
                val = val + self._u0(x)
                dval = dval + self._tensor(_u0_directional(self.u0, x.detach().numpy(), dx.detach().numpy()))
        return val, dval

    def heads_dt(self, x, t):
        """``(phi, d phi / dt)`` for every head, shapes ``(N, p)``."""
        if not self.cfg.time_dependent:
            raise ValueError("stationary trial has no time input")
        x, t = self._tensor(x), self._tensor(t)
        n = x.shape[0]
        dz = torch.zeros(n, self.cfg.in_features, dtype=DTYPE)
        dz[:, -1] = 1.0
        return self.net.forward_jvp(self._inputs(x, t), dz)

    def head_time_field(self, j: int | None = None) -> "HeadTimeField":
        return HeadTimeField(self, j)

    def grad_x(self, x, t=None, create_graph: bool = False):
        """Full spatial gradient by reverse mode, shape ``(N, d)``."""
        x = self._tensor(x).detach().clone().requires_grad_(True)
        t = self._tensor(t)
        val = self.forward(x, t)
        (g,) = torch.autograd.grad(val.sum(), x, create_graph=create_graph)
        if self.cfg.time_dependent and self.u0 is not None:
            # u0 enters as plain data, invisible to autograd
            xn = x.detach().numpy()
            eye = np.eye(xn.shape[1])
            g = g + self._tensor(np.stack([_u0_directional(self.u0, xn, e) for e in eye], axis=1))
        return g

    def dt(self, x, t):
        """``d Psi / dt`` at ``t > 0``."""
        x, t = self._tensor(x), self._tensor(t)
        t = torch.broadcast_to(t, x.shape[:1])
        phi, dphi = self.heads_dt(x, t)
        g = self.cfg.gamma
        b_mu = self.domain.boundary_feature(x)[:, None] ** self.mu
        coeff = (g * t ** (g - 1.0))[:, None] * phi + (t**g)[:, None] * dphi
        return (b_mu * coeff).sum(1)

    def as_field(self) -> "TrialField":
        return TrialField(self)

    # -- persistence -----------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().numpy().copy() for k, v in self.net.state_dict().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.net.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})


def _u0_directional(u0, x, dx, h=1e-6):
    return (u0(x + h * dx) - u0(x - h * dx)) / (2 * h)


class TrialField:
    """Adapter exposing a trial function through the ``u(points, t)`` field protocol."""

    def __init__(self, trial: TrialFunction):
        self.trial = trial

    def __call__(self, points, t=None):
        return self.trial(points, t)


class HeadTimeField:
    """``phi_j`` of a time-dependent trial as a TimeField (all heads if ``j`` is None)."""

    def __init__(self, trial: TrialFunction, j: int | None):
        self.trial = trial
        self.j = j

    def _pick(self, a):
        return a if self.j is None else a[:, self.j]

    def value_and_time_derivative(self, x, t):
        t = torch.broadcast_to(TrialFunction._tensor(t), (np.shape(x)[0],))
        phi, dphi = self.trial.heads_dt(x, t)
        return self._pick(phi), self._pick(dphi)

    def evaluate(self, x, t):
        return self.value_and_time_derivative(x, t)[0]

    def time_derivative(self, x, t):
        return self.value_and_time_derivative(x, t)[1]


# --- functional API --------------------------------------------------------


def trial_eval(trial: TrialFunction, x, t=None):
    return trial(x, t)


def trial_grad_x(trial: TrialFunction, x, t=None):
    return trial.grad_x(x, t)


def trial_dt(trial: TrialFunction, x, t):
    return trial.dt(x, t)


def check_finite(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        bad = (~torch.isfinite(value)).nonzero()
        raise NonFiniteError(f"non-finite {name} at indices {bad[:5].flatten().tolist()}")


def loss_gradient(trial: nn.Module, functional: Callable[[nn.Module], torch.Tensor]):
    """Scalar ``functional(trial)`` and its exact gradient w.r.t. every parameter."""
    params = [p for p in trial.parameters() if p.requires_grad]
    value = functional(trial)
    check_finite("functional value", value.detach().reshape(-1))
    if not value.requires_grad:
        return value.detach(), [torch.zeros_like(p) for p in params]
    grads = torch.autograd.grad(value, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]
    for p_name, g in zip((n for n, p in trial.named_parameters() if p.requires_grad), grads):
        check_finite(f"gradient of {p_name}", g)
    return value.detach(), grads


# --- optimiser -----------------------------------------------------------------


@dataclass
class AdamState:
    """Adam with a step-decay learning rate ``base_lr * decay ** (step // decay_every)``."""

    optimizer: torch.optim.Adam
    base_lr: float = 1e-3
    decay: float = 0.95
    decay_every: int = 500
    step: int = 0

    @classmethod
    def create(cls, params, base_lr=1e-3, decay=0.95, decay_every=500, betas=(0.9, 0.999), eps=1e-8):
        opt = torch.optim.Adam(list(params), lr=base_lr, betas=betas, eps=eps)
        return cls(opt, base_lr, decay, decay_every)

    def lr_at(self, step: int) -> float:
        return self.base_lr * self.decay ** (step // self.decay_every)


def adam_step(state: AdamState, params, grads) -> AdamState:
    """One Adam update of ``params`` in place; returns the advanced state."""
    lr = state.lr_at(state.step)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    for p, g in zip(params, grads):
        p.grad = g.detach().clone()
    state.optimizer.step()
    state.optimizer.zero_grad(set_to_none=True)
    state.step += 1
    return state


def adam_state_arrays(state: AdamState, params) -> dict[str, np.ndarray]:
    out = {"step": np.array(state.step)}
    for i, p in enumerate(params):
        st = state.optimizer.state.get(p)
        if st:
            out[f"m{i}"] = st["exp_avg"].numpy().copy()
            out[f"v{i}"] = st["exp_avg_sq"].numpy().copy()
            out[f"s{i}"] = np.array(float(st["step"]))
    return out


def load_adam_state_arrays(state: AdamState, params, arrays: dict[str, np.ndarray]) -> None:
    state.step = int(arrays["step"])
    for i, p in enumerate(params):
        if f"m{i}" in arrays:
            state.optimizer.state[p] = {
                "step": torch.tensor(float(arrays[f"s{i}"])),
                "exp_avg": torch.as_tensor(arrays[f"m{i}"]).clone(),
                "exp_avg_sq": torch.as_tensor(arrays[f"v{i}"]).clone(),
            }
