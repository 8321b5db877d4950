"""Residual loss assembly, the optimisation loop, and run records."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import torch

from .benchmarks import BenchmarkCase, e_test, get_case, sample_test_points
from .caputo import caputo_tgamma
from .fraclap import METHODS, FracLapConfig, apply_stencil, build_stencil, draw_directions, exact_directions_1d
from .rng import stream
from .trialspace import (
    CHECKPOINT_VERSION,
    DTYPE,
    AdamState,
    NonFiniteError,
    TrialConfig,
    TrialFunction,
    adam_state_arrays,
    adam_step,
    check_finite,
    load_adam_state_arrays,
    loss_gradient,
)

log = logging.getLogger(__name__)

MIN_FEATURE = 1e-12


class ConfigError(ValueError):
    pass


# --- configuration -------------------------------------------------------------


@dataclass
class BenchmarkSpec:
    name: str = "fpe/ball-row2"
    dim: int = 3
    alpha: float = 1.5
    seed: int = 0
    gamma: float = 0.5
    v: float = 1.0
    c: float = 1.0
    horizon: float = 1.0


@dataclass
class FracLapSpec:
    n_gj: int = 8
    n_gauss: int = 10
    m_near: int = 64
    m_far_in: int = 64
    m_far_out: int = 256
    chunk_size: int = 64
    mc_r0: float = 0.25
    mc_eps: float = 1e-6
    imc_r0: float = 2.0


@dataclass
class TrialSpec:
    p: int = 16
    width: int = 128
    depth: int = 4
    mu_p: float | None = None


@dataclass
class OptimSpec:
    lr: float = 1e-3
    decay: float = 0.95
    decay_every: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    method: str = "qe"
    epochs: int | None = None
    n_res: int = 100
    n_test: int = 20000
    eval_every: int = 100
    resample_each_epoch: bool = True
    seed: int = 0
    n_tau: int = 8
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    fraclap: FracLapSpec = field(default_factory=FracLapSpec)
    trial: TrialSpec = field(default_factory=TrialSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs is None:
            self.epochs = 100_000 if self.benchmark.name.startswith("tfde/") else 20_000
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.n_res < 1 or self.n_test < 1 or self.eval_every < 1:
            raise ConfigError("n_res, n_test and eval_every must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return config_from_dict(cls, data, "")

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def fraclap_config(self) -> FracLapConfig:
        return FracLapConfig(alpha=self.benchmark.alpha, **asdict(self.fraclap))

    def make_case(self) -> BenchmarkCase:
        b = self.benchmark
        kw = {}
        if b.name.startswith("tfde/"):
            kw = {"gamma": b.gamma, "v": b.v, "c": b.c, "horizon": b.horizon}
        return get_case(b.name, b.dim, b.alpha, b.seed, **kw)

    def trial_config(self, case: BenchmarkCase) -> TrialConfig:
        t = self.trial
        return TrialConfig(
            dim=case.dim,
            alpha=case.alpha,
            p=t.p,
            width=t.width,
            depth=t.depth,
            mu_p=t.mu_p,
            time_dependent=case.time_dependent,
            gamma=case.gamma,
        )


def config_from_dict(cls, data, prefix=""):
    """Build a config dataclass from nested mappings, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(f"unknown config key {name!r}")
        default = known[key].default_factory() if callable(known[key].default_factory) else None
        if is_dataclass(default):
            kwargs[key] = config_from_dict(type(default), value, name + ".")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --- residual -------------------------------------------------------------------


@dataclass
class Operator:
    """A fraction-Laplacian discretisation with its direction draws fixed."""

    method: str
    cfg: FracLapConfig
    dirs: dict

    @classmethod
    def draw(cls, method: str, d: int, cfg: FracLapConfig, rng: np.random.Generator) -> "Operator":
        if d == 1 and method == "qe":
            return cls(method, cfg, exact_directions_1d())
        return cls(method, cfg, draw_directions(method, d, cfg, rng))

    def apply(self, u, xs, t, domain, u0=None):
        stencil = build_stencil(self.method, xs, t, domain, self.cfg, dirs=self.dirs)
        return apply_stencil(stencil, u, self.cfg.chunk_size, u0)


def _as_tensor(a):
    if isinstance(a, torch.Tensor):
        return a
    return torch.as_tensor(np.asarray(a, dtype=np.float64))


def residual_terms(trial, op: Operator, case: BenchmarkCase, xs, t=None, n_tau: int = 8) -> dict:
    """Each term of the residual at the collocation points, plus the total."""
    domain = case.domain
    f = _as_tensor(case.f(xs, t))
    if not case.time_dependent:
        lap = _as_tensor(op.apply(trial, xs, None, domain))
        return {"frac_lap": lap, "rhs": f, "residual": lap - f}

    if not isinstance(trial, TrialFunction):
        raise TypeError("time-dependent residuals need a TrialFunction")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), xs.shape[:1]).copy()
    # the u0 part has no Caputo derivative, so only the heads enter
    heads = caputo_tgamma(trial.head_time_field(), xs, t, case.gamma, n_tau)
    bmu = trial.domain.boundary_feature(trial._tensor(xs))[:, None] ** trial.mu
    caputo = (bmu * heads).sum(1)
    value, adv = trial.directional_x(xs, t, case.velocity)
    lap = op.apply(trial, xs, t, domain, u0=value)
    total = caputo + case.diffusivity * lap + adv
    return {"caputo": caputo, "frac_lap": lap, "advection": adv, "rhs": f, "residual": total - f}


def residual_loss(trial, op: Operator, case: BenchmarkCase, xs, t=None, n_tau: int = 8):
    """Mean squared residual; raises NonFiniteError naming the bad term and point."""
    terms = residual_terms(trial, op, case, xs, t, n_tau)
    for name, value in terms.items():
        value = _as_tensor(value).detach()
        bad = ~torch.isfinite(value)
        if bad.any():
            idx = int(bad.nonzero()[0, 0])
            raise NonFiniteError(f"non-finite {name} term at collocation point {idx}: x={np.asarray(xs)[idx].tolist()}")
    r = _as_tensor(terms["residual"])
    return (r * r).mean()


# --- sampling -------------------------------------------------------------------


def sample_collocation(case: BenchmarkCase, n: int, seed: int, epoch: int):
    """Interior points with ``b(x) >= MIN_FEATURE`` and, for time problems, t in (0, T]."""
    rng = stream(seed, "collocation", epoch)
    domain = case.domain
    xs = domain.sample_interior(n, rng)
    bad = np.asarray(domain.boundary_feature(xs)) < MIN_FEATURE
    while bad.any():
        xs[bad] = domain.sample_interior(int(bad.sum()), rng)
        bad = np.asarray(domain.boundary_feature(xs)) < MIN_FEATURE
    t = None
    if case.time_dependent:
        t = case.horizon * (1.0 - rng.random(n))
    return xs, t


def draw_operator(cfg: TrainConfig, case: BenchmarkCase, epoch: int) -> Operator:
    rng = stream(cfg.seed, f"directions/{cfg.method}", epoch)
    return Operator.draw(cfg.method, case.dim, cfg.fraclap_config(), rng)


# --- run record -------------------------------------------------------------------


@dataclass
class RunRecord:
    config: dict
    epochs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)  # epoch -> e_test
    elapsed: dict = field(default_factory=dict)  # epoch -> seconds since start
    status: str = "ok"
    message: str = ""
    completed_epochs: int = 0
    wall_seconds: float = 0.0
    trial: TrialFunction | None = field(default=None, repr=False, compare=False)

    @property
    def final_error(self) -> float:
        if not self.errors:
            return math.nan
        return self.errors[max(self.errors)]

    @property
    def best_error(self) -> float:
        return min(self.errors.values()) if self.errors else math.nan

    def best_so_far(self) -> list[tuple[int, float]]:
        out, best = [], math.inf
        for ep in sorted(self.errors):
            best = min(best, self.errors[ep])
            out.append((ep, best))
        return out

    def history_rows(self) -> list[tuple]:
        rows = {}
        for ep, loss in zip(self.epochs, self.losses):
            rows[ep] = [ep, loss, None]
        for ep, err in self.errors.items():
            rows.setdefault(ep, [ep, None, None])[2] = err
        return [tuple(rows[k]) for k in sorted(rows)]

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss", "e_test"])
        for ep, loss, err in self.history_rows():
            w.writerow([ep, "" if loss is None else repr(float(loss)), "" if err is None else repr(float(err))])
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "elapsed_seconds"])
        for ep in sorted(self.elapsed):
            w.writerow([ep, f"{self.elapsed[ep]:.6f}"])
        return buf.getvalue()

    def summary(self) -> dict:
        cfg = TrainConfig.from_dict(self.config)
        return {
            "status": self.status,
            "message": self.message,
            "method": cfg.method,
            "benchmark": cfg.benchmark.name,
            "dim": cfg.benchmark.dim,
            "alpha": cfg.benchmark.alpha,
            "completed_epochs": self.completed_epochs,
            "final_e_test": _json_float(self.final_error),
            "best_e_test": _json_float(self.best_error),
            "final_loss": _json_float(self.losses[-1]) if self.losses else None,
            "seed": cfg.seed,
            "benchmark_seed": cfg.benchmark.seed,
            "config_hash": cfg.config_hash(),
        }

    def write(self, out: Path) -> None:
        """Deterministic files (summary, history, config, curves) plus a separate metadata file."""
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        (out / "history.csv").write_text(self.history_csv())
        (out / "config.json").write_text(json.dumps(self.config, indent=2, sort_keys=True) + "\n")
        (out / "curves.svg").write_text(curves_svg(self))
        (out / "timing.csv").write_text(self.timing_csv())
        meta = {
            "wall_seconds": self.wall_seconds,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "torch_threads": torch.get_num_threads(),
        }
        (out / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _json_float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def curves_svg(record: RunRecord, width: int = 640, height: int = 360) -> str:
    """Log-scale loss and e_test curves as a standalone SVG."""
    series = [
        ("loss", "#1f77b4", list(zip(record.epochs, record.losses))),
        ("e_test", "#d62728", sorted(record.errors.items())),
    ]
    pts = [(e, v) for _, _, s in series for e, v in s if v is not None and v > 0 and math.isfinite(v)]
    pad = 40
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
    body = [f'<rect width="{width}" height="{height}" fill="white"/>']
    if pts:
        x_max = max(max(e for e, _ in pts), 1)
        lo = math.log10(min(v for _, v in pts))
        hi = math.log10(max(v for _, v in pts))
        if hi - lo < 1e-12:
            lo, hi = lo - 1, hi + 1

        def sx(e):
            return pad + (width - 2 * pad) * e / x_max

        def sy(v):
            return height - pad - (height - 2 * pad) * (math.log10(v) - lo) / (hi - lo)

        for label, color, s in series:
            s = [(e, v) for e, v in s if v is not None and v > 0 and math.isfinite(v)]
            if not s:
                continue
            path = " ".join(f"{sx(e):.2f},{sy(v):.2f}" for e, v in s)
            body.append(f'<polyline fill="none" stroke="{color}" stroke-width="1" points="{path}"/>')
        body.append(f'<text x="{pad}" y="20" font-size="12">log10 range [{lo:.2f}, {hi:.2f}], epochs 0..{x_max}</text>')
        body.append(f'<text x="{width - 150}" y="20" font-size="12" fill="#1f77b4">loss</text>')
        body.append(f'<text x="{width - 100}" y="20" font-size="12" fill="#d62728">e_test</text>')
    body.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>')
    body.append(f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>')
    return head + "\n".join(body) + "\n</svg>\n"


# --- checkpoints -------------------------------------------------------------------


def save_checkpoint(path, trial: TrialFunction, adam: AdamState, record: RunRecord) -> None:
    params = list(trial.parameters())
    arrays = {f"net/{k}": v for k, v in trial.state_arrays().items()}
    arrays.update({f"adam/{k}": v for k, v in adam_state_arrays(adam, params).items()})
    arrays["record/epochs"] = np.asarray(record.epochs, dtype=np.int64)
    arrays["record/losses"] = np.asarray(record.losses, dtype=np.float64)
    arrays["record/err_epochs"] = np.asarray(sorted(record.errors), dtype=np.int64)
    arrays["record/errors"] = np.asarray([record.errors[k] for k in sorted(record.errors)], dtype=np.float64)
    arrays["meta"] = np.asarray(
        json.dumps({"version": CHECKPOINT_VERSION, "config": record.config, "completed": record.completed_epochs})
    )
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, trial: TrialFunction, adam: AdamState, record: RunRecord) -> None:
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"checkpoint version {meta.get('version')} is not supported")
        if TrainConfig.from_dict(meta["config"]).config_hash() != TrainConfig.from_dict(record.config).config_hash():
            # epochs may be extended on resume; everything else must match
            old = dict(meta["config"], epochs=None)
            new = dict(record.config, epochs=None)
            if old != new:
                raise ConfigError("checkpoint was written by a different configuration")
        trial.load_state_arrays({k[4:]: data[k] for k in data.files if k.startswith("net/")})
        load_adam_state_arrays(adam, list(trial.parameters()), {k[5:]: data[k] for k in data.files if k.startswith("adam/")})
        record.epochs = data["record/epochs"].tolist()
        record.losses = data["record/losses"].tolist()
        record.errors = dict(zip(data["record/err_epochs"].tolist(), data["record/errors"].tolist()))
        record.completed_epochs = int(meta["completed"])


# --- training loop -------------------------------------------------------------------


def build_trial(cfg: TrainConfig, case: BenchmarkCase) -> TrialFunction:
    return TrialFunction(cfg.trial_config(case), case.domain, u0=case.u0, seed=int(stream(cfg.seed, "init").integers(2**63)))


def evaluate(trial: TrialFunction, case: BenchmarkCase, xs, t) -> float:
    with torch.no_grad():
        pred = trial(xs, t).numpy()
    return e_test(pred, case.u(xs, t))


def train(
    cfg: TrainConfig,
    checkpoint: str | Path | None = None,
    resume: bool = False,
    progress=None,
) -> RunRecord:
    """Run the optimisation loop; never raises on numerical trouble, the record says so."""
    case = cfg.make_case()
    trial = build_trial(cfg, case)
    params = list(trial.parameters())
    o = cfg.optim
    adam = AdamState.create(params, o.lr, o.decay, o.decay_every, (o.beta1, o.beta2), o.eps)
    record = RunRecord(config=cfg.to_dict())
    if resume:
        if checkpoint is None or not Path(checkpoint).exists():
            raise FileNotFoundError(f"no checkpoint to resume from at {checkpoint}")
        load_checkpoint(checkpoint, trial, adam, record)
    test_x, test_t = sample_test_points(case, cfg.n_test, cfg.seed)

    start = time.perf_counter()
    epoch = record.completed_epochs
    try:
        if epoch not in record.errors:
            record.errors[epoch] = evaluate(trial, case, test_x, test_t)
            record.elapsed[epoch] = time.perf_counter() - start
        while epoch < cfg.epochs:
            draw = epoch if cfg.resample_each_epoch else 0
            xs, t = sample_collocation(case, cfg.n_res, cfg.seed, draw)
            op = draw_operator(cfg, case, draw)
            loss, grads = loss_gradient(trial, lambda tr: residual_loss(tr, op, case, xs, t, cfg.n_tau))
            adam_step(adam, params, grads)
            record.epochs.append(epoch)
            record.losses.append(float(loss))
            epoch += 1
            record.completed_epochs = epoch
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                record.errors[epoch] = evaluate(trial, case, test_x, test_t)
                record.elapsed[epoch] = time.perf_counter() - start
                check_finite("test prediction", torch.tensor([record.errors[epoch]], dtype=DTYPE))
                if progress is not None:
                    progress(epoch, float(loss), record.errors[epoch])
    except NonFiniteError as exc:
        record.status = "aborted"
        record.message = str(exc)
        log.error("run aborted at epoch %d: %s", epoch, exc)
    record.wall_seconds = time.perf_counter() - start
    if checkpoint is not None:
        save_checkpoint(checkpoint, trial, adam, record)
    record.trial = trial
    return record


def compare_methods(cfg: TrainConfig, methods, progress=None) -> list[dict]:
    """Train once per method with shared init and collocation seeds; one row per method."""
    rows = []
    for method in methods:
        run_cfg = TrainConfig.from_dict(dict(cfg.to_dict(), method=method))
        try:
            rec = train(run_cfg, progress=progress)
            rows.append({"method": method, "status": rec.status, "final_e_test": rec.final_error, "record": rec})
        except Exception as exc:  # a failed method leaves a marked row
            log.error("method %s failed: %s", method, exc)
            rows.append({"method": method, "status": f"failed: {exc}", "final_e_test": math.nan, "record": None})
    return rows


def comparison_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "status", "final_e_test"])
    for r in rows:
        w.writerow([r["method"], r["status"], repr(float(r["final_e_test"]))])
    return buf.getvalue()


def comparison_table(rows: list[dict], cfg: TrainConfig) -> str:
    """Aligned text, one column per method, like a results table."""
    b = cfg.benchmark
    header = ["case", "d", "alpha"] + [r["method"].upper() for r in rows]
    cells = [b.name, str(b.dim), f"{b.alpha:g}"] + [
        f"{r['final_e_test']:.2e}" if r["status"] == "ok" else "FAILED" for r in rows
    ]
    widths = [max(len(h), len(c)) for h, c in zip(header, cells)]
    line = lambda items: "  ".join(s.rjust(w) for s, w in zip(items, widths))  # noqa: E731
    return line(header) + "\n" + line(cells) + "\n"
