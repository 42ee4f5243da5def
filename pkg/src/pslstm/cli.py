"""Command-line front end.

Subcommands: train, eval, probe, sweep-patch, sweep-lookback, ablate,
gradcheck. Runs read a JSON config file ({"model": ..., "train": ...,
"data": ..., "probe": ...}; unknown keys are rejected), CLI flags override
file values, and every run writes a resolved-config snapshot into its own
timestamp-suffixed artifact directory.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical
divergence, 5 probe-invariant failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cells import GateMode, grad_check
from .datasets import (CsvSchema, DATASET_PRESETS, load_csv, make_synthetic,
                       split_and_standardize)
from .model import (Forecaster, ModelConfig, load_checkpoint,
                    save_checkpoint)
from .probe import (ChainConfig, chain_params, check_contraction,
                    memory_report, ratio_stability_report, simulate_chain,
                    two_trajectory_coupling, write_acf_csv, write_probe_report)
from .tensorops import Rng
from .training import (TrainConfig, evaluate, mse_loss, persistence_metrics,
                       train, write_history_csv)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_PROBE = 5


class ConfigError(ValueError):
    pass


def _build_dataclass(cls, payload: dict, name: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - fields
    if unknown:
        raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
    return cls(**payload)


def load_run_config(path: str | None, overrides: dict) -> dict:
    cfg: dict = {"model": {}, "train": {}, "data": {}, "probe": {}}
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for key in cfg:
            cfg[key].update(loaded.get(key, {}))
    for dotted, value in overrides.items():
        section, key = dotted.split(".", 1)
        cfg[section][key] = value
    return cfg


def make_model_config(payload: dict) -> ModelConfig:
    payload = dict(payload)
    gm = payload.get("gate_mode")
    if isinstance(gm, dict):
        payload["gate_mode"] = _build_dataclass(GateMode, gm, "gate_mode")
    try:
        return _build_dataclass(ModelConfig, payload, "model")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def make_train_config(payload: dict) -> TrainConfig:
    try:
        return _build_dataclass(TrainConfig, payload, "train")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_dataset(data_cfg: dict, model_cfg: ModelConfig):
    kind = data_cfg.get("source", "synthetic")
    stride = int(data_cfg.get("window_stride", 1))
    if kind == "csv":
        path = data_cfg.get("path")
        if not path or not os.path.exists(str(path)):
            raise FileNotFoundError(f"dataset file not found: {path}")
        schema = CsvSchema(
            has_date_column=bool(data_cfg.get("has_date_column", True)),
            delimiter=data_cfg.get("delimiter", ","),
            has_header=bool(data_cfg.get("has_header", True)))
        raw = load_csv(path, schema)
        limit = data_cfg.get("max_rows")
        if limit:
            raw.values = raw.values[:int(limit)]
        preset = data_cfg.get("preset")
        if preset is not None and preset not in DATASET_PRESETS:
            raise ConfigError(f"unknown dataset preset {preset!r}")
        return split_and_standardize(raw, model_cfg.lookback, model_cfg.horizon,
                                     preset=preset, stride=stride)
    if kind == "synthetic":
        raw = make_synthetic(data_cfg.get("kind", "sinusoid"),
                             data_cfg.get("params", {"length": 4000,
                                                     "period": 24,
                                                     "noise_std": 0.1}),
                             seed=int(data_cfg.get("seed", 0)))
        return split_and_standardize(raw, model_cfg.lookback, model_cfg.horizon,
                                     stride=stride)
    raise ConfigError(f"unknown data source {kind!r}")


def prepare_run_dir(output_dir: str, command: str, force: bool) -> Path:
    base = Path(os.environ.get("PSLSTM_OUTPUT_DIR", output_dir))
    if force:
        run = base / command
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run = base / f"{command}-{stamp}"
        k = 0
        while run.exists():
            k += 1
            run = base / f"{command}-{stamp}-{k}"
    run.mkdir(parents=True, exist_ok=True)
    return run


def write_run_info(run_dir: Path, cfg: dict, seed: int, seconds: float) -> None:
    info = {"version": __version__, "seed": seed,
            "wall_clock_seconds": round(seconds, 3)}
    with open(run_dir / "run_info.json", "w") as fh:
        json.dump(info, fh, sort_keys=True, indent=2)
    with open(run_dir / "resolved_config.json", "w") as fh:
        json.dump(cfg, fh, sort_keys=True, indent=2, default=str)


def _metrics_dict(metrics) -> dict:
    return {"mse": metrics.mse, "mae": metrics.mae,
            "n_samples": metrics.n_samples}


def _train_once(cfg: dict, seed: int):
    model_cfg = make_model_config(cfg["model"])
    train_cfg = make_train_config({**cfg["train"], "seed": seed})
    dataset = load_dataset(cfg["data"], model_cfg)
    model = Forecaster(model_cfg, seed=seed)
    model, history = train(model, dataset, train_cfg)
    return model, history, dataset


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    cfg = load_run_config(args.config, {})
    seed = args.seed if args.seed is not None else int(cfg["train"].get("seed", 0))
    cfg["train"]["seed"] = seed
    run_dir = prepare_run_dir(args.output_dir, "train", args.force)
    try:
        model, history, dataset = _train_once(cfg, seed)
    except FloatingPointError as exc:
        print(f"training stage failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    metrics = evaluate(model, dataset, "test")
    save_checkpoint(model, run_dir / "checkpoint.json")
    write_history_csv(history, run_dir / "history.csv")
    baseline = persistence_metrics(dataset, "test")
    with open(run_dir / "metrics.json", "w") as fh:
        json.dump({"test": _metrics_dict(metrics),
                   "persistence": _metrics_dict(baseline),
                   "seed": seed}, fh, sort_keys=True)
    write_run_info(run_dir, cfg, seed, time.perf_counter() - t0)
    print(f"train: test mse={metrics.mse:.6f} mae={metrics.mae:.6f} "
          f"-> {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    cfg = load_run_config(args.config, {})
    run_dir = prepare_run_dir(args.output_dir, "eval", args.force)
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(cfg["data"], model.config)
    metrics = evaluate(model, dataset, args.split)
    with open(run_dir / "metrics.json", "w") as fh:
        json.dump({args.split: _metrics_dict(metrics)}, fh, sort_keys=True)
    write_run_info(run_dir, cfg, 0, time.perf_counter() - t0)
    print(f"eval: {args.split} mse={metrics.mse:.6f} mae={metrics.mae:.6f}")
    return EXIT_OK


def cmd_probe(args) -> int:
    t0 = time.perf_counter()
    cfg = load_run_config(args.config, {})
    try:
        chain = _build_dataclass(ChainConfig, cfg["probe"], "probe")
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    run_dir = prepare_run_dir(args.output_dir, "probe", args.force)
    params, _, _ = chain_params(chain)
    sup, contractive = check_contraction(params, threshold=0.9, n_grid=256,
                                         seed=chain.seed)
    trace = simulate_chain(chain)
    ratio = ratio_stability_report(trace)
    report = coupling = None
    failed = False
    if contractive:
        report = memory_report(trace, max_lag=min(20, trace.y_seq.shape[0] // 10))
        coupling = two_trajectory_coupling(chain, horizon=min(500, chain.horizon))
        write_acf_csv(run_dir / "acf.csv", report)
        if not (report.rho_hat < 1.0 and coupling.step_below_tol is not None):
            failed = True
    else:
        # amplification regime: overflow is the expected, recorded outcome
        if chain.mode == "raw" and ratio.overflow_step is None \
                and np.nanmin(trace.f_norm) > 1.0:
            failed = True
    write_probe_report(run_dir / "probe.json", chain, sup, report, coupling, ratio)
    write_run_info(run_dir, cfg, chain.seed, time.perf_counter() - t0)
    print(f"probe: gate sup={sup:.4f} contractive={contractive} -> {run_dir}")
    return EXIT_PROBE if failed else EXIT_OK


def cmd_sweep_patch(args) -> int:
    t0 = time.perf_counter()
    cfg = load_run_config(args.config, {})
    sizes = []
    for s in args.sizes:
        if s in sizes:
            print(f"warning: duplicate patch size {s} ignored", file=sys.stderr)
        else:
            sizes.append(s)
    model_cfg = make_model_config(cfg["model"])
    bad = [s for s in sizes if s > model_cfg.lookback]
    if bad:
        raise ConfigError(f"patch sizes {bad} exceed lookback {model_cfg.lookback}")
    run_dir = prepare_run_dir(args.output_dir, "sweep-patch", args.force)
    rows = []
    for size in sorted(sizes):
        sub = json.loads(json.dumps(cfg))
        sub["model"]["patch_size"] = size
        sub["model"]["patch_stride"] = size
        model, _, dataset = _train_once(sub, args.seed or 0)
        m = evaluate(model, dataset, "test")
        rows.append((size, m.mse, m.mae))
        print(f"patch={size}: mse={m.mse:.6f} mae={m.mae:.6f}")
    _write_table(run_dir / "sweep_patch.csv", ["patch_size", "test_mse", "test_mae"], rows)
    write_run_info(run_dir, cfg, args.seed or 0, time.perf_counter() - t0)
    return EXIT_OK


def cmd_sweep_lookback(args) -> int:
    t0 = time.perf_counter()
    cfg = load_run_config(args.config, {})
    lookbacks = sorted(set(args.sizes))
    run_dir = prepare_run_dir(args.output_dir, "sweep-lookback", args.force)
    rows = []
    for L in lookbacks:
        sub = json.loads(json.dumps(cfg))
        sub["model"]["lookback"] = L
        model, _, dataset = _train_once(sub, args.seed or 0)
        m = evaluate(model, dataset, "test")
        rows.append((L, m.mse, m.mae))
        print(f"lookback={L}: mse={m.mse:.6f} mae={m.mae:.6f}")
    _write_table(run_dir / "sweep_lookback.csv",
                 ["lookback", "test_mse", "test_mae"], rows)
    write_run_info(run_dir, cfg, args.seed or 0, time.perf_counter() - t0)
    return EXIT_OK


ABLATION_AXES = {
    "memory_mixing": [True, False],
    "channel_strategy": ["independent", "mixed"],
    "stabilized": [True, False],
    "forget_activation": ["exponential", "sigmoid"],
}


def cmd_ablate(args) -> int:
    t0 = time.perf_counter()
    cfg = load_run_config(args.config, {})
    axes = args.axes
    if not axes:
        raise ConfigError("ablate needs at least one axis")
    for axis in axes:
        if axis not in ABLATION_AXES:
            raise ConfigError(f"unknown ablation axis {axis!r}")
    run_dir = prepare_run_dir(args.output_dir, "ablate", args.force)

    combos = [{}]
    for axis in axes:
        combos = [{**c, axis: v} for c in combos for v in ABLATION_AXES[axis]]
    rows = []
    for combo in combos:
        sub = json.loads(json.dumps(cfg))
        gm = dict(sub["model"].get("gate_mode", {}))
        for axis, value in combo.items():
            if axis == "channel_strategy":
                sub["model"]["channel_strategy"] = value
            else:
                gm[axis] = value
        sub["model"]["gate_mode"] = gm
        model, _, dataset = _train_once(sub, args.seed or 0)
        tr = evaluate(model, dataset, "train")
        va = evaluate(model, dataset, "val")
        te = evaluate(model, dataset, "test")
        label = ",".join(f"{k}={v}" for k, v in combo.items())
        rows.append((label, tr.mse, va.mse, te.mse))
        print(f"{label}: train={tr.mse:.6f} val={va.mse:.6f} test={te.mse:.6f}")
    _write_table(run_dir / "ablation.csv",
                 ["variant", "train_mse", "val_mse", "test_mse"], rows)
    write_run_info(run_dir, cfg, args.seed or 0, time.perf_counter() - t0)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = load_run_config(args.config, {})
    model_payload = cfg["model"] or {
        "lookback": 16, "horizon": 4, "n_channels": 2, "patch_size": 4,
        "embed_dim": 8, "n_blocks": 1, "n_heads": 2, "dropout_rate": 0.0}
    model_cfg = make_model_config(model_payload)
    model = Forecaster(model_cfg, seed=args.seed or 0)
    rng = Rng(args.seed or 0).spawn(5)
    x = rng.normal((2, model_cfg.lookback, model_cfg.n_channels))
    y = rng.normal((2, model_cfg.horizon, model_cfg.n_channels))

    def loss_and_grads(params):
        yhat, tape = model.forward(x)
        loss, grad = mse_loss(yhat, y)
        return loss, model.backward(tape, grad)

    err = grad_check(loss_and_grads, model.params, epsilon=1e-5,
                     masks=model.masks)
    print(f"gradcheck: max relative error {err:.3e}")
    return EXIT_OK if err < 1e-4 else 1


def _write_table(path, header, rows) -> None:
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[0]] + [repr(v) for v in row[1:]])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pslstm",
                                     description="patch-based sLSTM forecaster")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--output-dir", default="runs")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--force", action="store_true",
                       help="reuse a fixed run directory instead of timestamping")

    p = sub.add_parser("train", help="train a model and report test metrics")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("probe", help="run the memory-property probe")
    common(p)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("sweep-patch", help="train once per patch size")
    common(p)
    p.add_argument("--sizes", type=int, nargs="+", required=True)
    p.set_defaults(fn=cmd_sweep_patch)

    p = sub.add_parser("sweep-lookback", help="train once per look-back length")
    common(p)
    p.add_argument("--sizes", type=int, nargs="+", required=True)
    p.set_defaults(fn=cmd_sweep_lookback)

    p = sub.add_parser("ablate", help="toggle design axes and compare")
    common(p)
    p.add_argument("--axes", nargs="+", required=True,
                   choices=sorted(ABLATION_AXES))
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p)
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
