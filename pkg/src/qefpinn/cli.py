"""Command-line entry point.

    qefpinn operator-check --config check.yaml --out runs/check
    qefpinn train --config train.yaml --out runs/train [--resume]
    qefpinn compare --config compare.yaml --out runs/cmp
    qefpinn list-benchmarks

Exit codes: 0 success, 1 tolerance failure, 2 usage or config error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import yaml

from .benchmarks import REGISTRY, BenchmarkError, sample_test_points
from .fraclap import METHODS, FracLapConfig, frac_laplacian, set_workers
from .geometry import GeometryError
from .rng import stream
from .trainer import (
    BenchmarkSpec,
    ConfigError,
    FracLapSpec,
    TrainConfig,
    config_from_dict,
    compare_methods,
    comparison_csv,
    comparison_table,
    train,
)
from .trialspace import NonFiniteError

EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("qefpinn")


@dataclass
class OperatorCheckConfig:
    method: str = "qe"
    n_points: int = 100
    n_seeds: int = 64
    seed: int = 0
    tolerance: float = 0.02
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    fraclap: FracLapSpec = field(default_factory=FracLapSpec)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.n_points < 1 or self.n_seeds < 1:
            raise ConfigError("n_points and n_seeds must be positive")

    def as_train_config(self) -> TrainConfig:
        return TrainConfig(method=self.method, epochs=0, benchmark=self.benchmark, fraclap=self.fraclap)


def load_yaml(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping at top level")
    return data


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


def _dump_config(out: Path, cfg: dict) -> None:
    _write(out, "config.yaml", yaml.safe_dump(cfg, sort_keys=True))


# --- subcommands ---------------------------------------------------------------


def relative_errors(estimate: np.ndarray, exact: np.ndarray) -> np.ndarray:
    """Pointwise relative error; absolute error where the exact value is 0."""
    diff = np.abs(estimate - exact)
    scale = np.abs(exact)
    return np.where(scale > 0.0, diff / np.where(scale > 0.0, scale, 1.0), diff)


def run_operator_check(cfg: OperatorCheckConfig) -> dict:
    case = cfg.as_train_config().make_case()
    fcfg = FracLapConfig(alpha=case.alpha, **asdict(cfg.fraclap))
    xs, t = sample_test_points(case, cfg.n_points, cfg.seed)
    exact = case.frac_lap(xs, t)
    runs = np.stack(
        [
            frac_laplacian(cfg.method, case.u, xs, t, case.domain, fcfg, stream(cfg.seed, "operator-check", s))
            for s in range(cfg.n_seeds)
        ]
    )
    estimate = runs.mean(0)
    rel = relative_errors(estimate, exact)
    spread = runs.std(0, ddof=1) if cfg.n_seeds > 1 else np.zeros_like(estimate)
    denom = np.linalg.norm(exact)
    summary = {
        "benchmark": case.name,
        "method": cfg.method,
        "dim": case.dim,
        "alpha": case.alpha,
        "n_points": cfg.n_points,
        "n_seeds": cfg.n_seeds,
        "mean_relative_error": float(rel.mean()),
        "max_relative_error": float(rel.max()),
        "relative_l2_error": float(np.linalg.norm(estimate - exact) / denom) if denom > 0 else float(np.linalg.norm(estimate)),
        "seed_std_rms": float(np.sqrt(np.mean(spread**2))),
        "tolerance": cfg.tolerance,
    }
    summary["passed"] = bool(summary["mean_relative_error"] <= cfg.tolerance)
    return {"summary": summary, "xs": xs, "estimate": estimate, "exact": exact, "rel": rel}


def cmd_operator_check(args) -> int:
    data = load_yaml(args.config)
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = config_from_dict(OperatorCheckConfig, data, "")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_config(out, asdict(cfg))
    res = run_operator_check(cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point", "estimate", "exact", "relative_error"])
    for i, (e, x, r) in enumerate(zip(res["estimate"], res["exact"], res["rel"])):
        w.writerow([i, repr(float(e)), repr(float(x)), repr(float(r))])
    _write(out, "points.csv", buf.getvalue())
    summary = res["summary"]
    _write(out, "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    log.info(
        "%s %s: mean rel %.3e, max rel %.3e, %s",
        summary["method"],
        summary["benchmark"],
        summary["mean_relative_error"],
        summary["max_relative_error"],
        "pass" if summary["passed"] else "FAIL",
    )
    return EXIT_OK if summary["passed"] else EXIT_TOLERANCE


def _train_config(args, data: dict) -> TrainConfig:
    if args.seed is not None:
        data["seed"] = args.seed
    return TrainConfig.from_dict(data)


def _progress(epoch, loss, err):
    log.info("epoch %d  loss %.4e  e_test %.4e", epoch, loss, err)


def cmd_train(args) -> int:
    cfg = _train_config(args, load_yaml(args.config))
    out = Path(args.out)
    ckpt = out / "checkpoint.npz"
    if args.resume and not ckpt.exists():
        raise ConfigError(f"--resume given but no checkpoint at {ckpt}")
    out.mkdir(parents=True, exist_ok=True)
    _dump_config(out, cfg.to_dict())
    record = train(cfg, checkpoint=ckpt, resume=args.resume, progress=_progress)
    record.write(out)
    if record.status != "ok":
        log.error("numerical abort: %s", record.message)
        return EXIT_NUMERIC
    log.info("final e_test %.4e after %d epochs", record.final_error, record.completed_epochs)
    return EXIT_OK


def cmd_compare(args) -> int:
    data = load_yaml(args.config)
    methods = data.pop("methods", list(METHODS))
    if not isinstance(methods, list) or not methods or any(m not in METHODS for m in methods):
        raise ConfigError(f"methods must be a non-empty list drawn from {METHODS}")
    cfg = _train_config(args, data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump_config(out, dict(cfg.to_dict(), methods=methods))
    rows = compare_methods(cfg, methods, progress=_progress)
    for row in rows:
        if row["record"] is not None:
            row["record"].write(out / row["method"])
    _write(out, "comparison.csv", comparison_csv(rows))
    table = comparison_table(rows, cfg)
    _write(out, "comparison.txt", table)
    if not args.quiet:
        print(table, end="")
    if any(r["status"] != "ok" for r in rows):
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_list_benchmarks(args) -> int:
    for name in sorted(REGISTRY):
        print(name)
    return EXIT_OK


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out", default="runs/out", help="output directory")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--threads", type=int, help="worker threads for direction chunks")
    common.add_argument("--quiet", action="store_true", help="only warnings and errors")

    parser = argparse.ArgumentParser(prog="qefpinn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("operator-check", parents=[common], help="operator accuracy against closed forms")
    p = sub.add_parser("train", parents=[common], help="train one trial function")
    p.add_argument("--resume", action="store_true", help="continue from OUT/checkpoint.npz")
    sub.add_parser("compare", parents=[common], help="train with several discretisations")
    sub.add_parser("list-benchmarks", parents=[common], help="print registered benchmark names")
    return parser


COMMANDS = {
    "operator-check": cmd_operator_check,
    "train": cmd_train,
    "compare": cmd_compare,
    "list-benchmarks": cmd_list_benchmarks,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    if args.threads is not None:
        if args.threads < 1:
            log.error("--threads must be positive")
            return EXIT_USAGE
        set_workers(args.threads)
    # one BLAS thread keeps every reduction in a fixed order, whatever --threads is
    torch.set_num_threads(1)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, BenchmarkError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (NonFiniteError, GeometryError, FloatingPointError) as exc:
        log.error("numerical abort: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
