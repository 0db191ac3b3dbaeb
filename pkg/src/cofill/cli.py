"""Command-line entry points: train, impute, evaluate, ablate, sweep, synth.

Heavy imports happen inside the command handlers so that ``--threads`` can
pin the BLAS/OpenMP pool via environment variables before numpy loads.
Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run configuration file (key = value lines)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", help="output path")
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS/OpenMP thread count (1 = sequential mode)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cofill",
        description="Conditional diffusion imputation for spatiotemporal "
                    "sensor data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    _common_flags(p)
    p.add_argument("--log", help="training log CSV path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("impute", help="fill gaps in a values CSV")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="values CSV to impute")
    p.add_argument("--edges", help="edge-list CSV (defaults to the config's)")
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--samples-out", help="optional .npz archive of all samples")
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("evaluate", help="score a checkpoint against baselines")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="held-out test values CSV")
    p.add_argument("--edges")
    p.add_argument("--scenario", choices=["point", "block"], default="point")
    p.add_argument("--ratio", type=float, default=0.25,
                   help="point-scenario masking ratio")
    p.add_argument("--seeds", default="0,1,2,3,4",
                   help="comma-separated evaluation seeds")
    p.add_argument("--n-samples", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score pipeline variants")
    _common_flags(p)
    p.add_argument("--variants",
                   default="full,no_forward,no_temporal,no_frequency,no_cross")
    p.add_argument("--scenario", choices=["point", "block"], default="point")
    p.add_argument("--ratio", type=float, default=0.25)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="train and score over one hyperparameter")
    _common_flags(p)
    p.add_argument("--param", required=True,
                   help="sweepable parameter: beta_T or d")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--scenario", choices=["point", "block"], default="point")
    p.add_argument("--ratio", type=float, default=0.25)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common_flags(p)
    p.add_argument("--nodes", type=int, default=6)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--components", type=int, default=3)
    p.set_defaults(func=cmd_synth)
    return parser


def _set_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(max(1, n))


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _load_run(args):
    """Config + dataset shared by the training-style commands."""
    from .config import load_config
    from .data import load_series
    from .errors import ConfigError

    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if not cfg.values_path:
        raise ConfigError("config must set values_path")
    series = load_series(cfg.values_path, cfg.edges_path or None,
                         cfg.coords_path or None)
    return cfg, series


def _build_model(cfg, n_nodes, rng):
    from .conditioning import ablation_flags
    from .noise_model import CoFillModel, ModelDims

    dims = ModelDims(channels=cfg.channel_size, layers=cfg.noise_layers,
                     heads=cfg.heads, virtual_nodes=cfg.virtual_nodes,
                     emb_dim=cfg.emb_dim, tcn_kernel=cfg.tcn_kernel,
                     gcn_order=cfg.gcn_order, dropout=cfg.dropout)
    return CoFillModel.init(dims, n_nodes, cfg.diffusion_steps, rng,
                            flags=ablation_flags(cfg.ablation))


def _train_once(cfg, series):
    import numpy as np

    from .diffusion import build_schedule, train

    model = _build_model(cfg, series.n_nodes, np.random.default_rng(cfg.seed))
    schedule = build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max,
                              cfg.schedule)
    result = train(series, model, schedule, epochs=cfg.epochs,
                   batch_size=cfg.batch_size, window_length=cfg.time_length,
                   window_stride=cfg.stride, lr_max=cfg.learning_rate,
                   lr_min=cfg.lr_min, masking_strategy=cfg.masking_strategy,
                   seed=cfg.seed, val_samples=cfg.val_samples,
                   mean_coef=cfg.mean_coef)
    return result


def _log_text(log_rows) -> str:
    rows = []
    for r in log_rows:
        val = r["val_mae"]
        rows.append([str(r["epoch"]), str(r["step"]), repr(r["loss"]),
                     repr(r["lr"]), repr(val) if val != "" else ""])
    return _csv_text(["epoch", "step", "loss", "lr", "val_mae"], rows)


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .config import config_text
    from .fileio import atomic_write_text

    cfg, series = _load_run(args)
    result = _train_once(cfg, series)
    out = args.out or "model.ckpt"
    save_checkpoint(out, config_text(cfg), result.normalizer,
                    result.model.params(), step=len(result.log_rows))
    log_path = args.log or out + ".log.csv"
    atomic_write_text(log_path, _log_text(result.log_rows))
    print(f"checkpoint written to {out}; log to {log_path}")
    return 0


def _load_checkpoint_model(checkpoint_path):
    import numpy as np

    from .checkpoint import load_checkpoint
    from .config import parse_config_text
    from .diffusion import build_schedule

    ck = load_checkpoint(checkpoint_path)
    cfg = parse_config_text(ck.config_text)
    n_nodes = len(ck.normalizer.means)
    model = _build_model(cfg, n_nodes, np.random.default_rng(0))
    model.load_param_arrays(ck.params)
    schedule = build_schedule(cfg.diffusion_steps, cfg.beta_min, cfg.beta_max,
                              cfg.schedule)
    return cfg, model, schedule, ck.normalizer


def _load_for_checkpoint(data_path, edges, n_expected):
    """Load a values CSV, verify its node count, then attach the graph."""
    from dataclasses import replace

    from .data import load_series
    from .errors import ContractError
    from .graph import load_edge_list

    series = load_series(data_path)
    if series.n_nodes != n_expected:
        raise ContractError(
            f"data has {series.n_nodes} nodes but the checkpoint was trained "
            f"on {n_expected}"
        )
    if edges:
        series = replace(series, graph=load_edge_list(edges, series.n_nodes))
    return series


def cmd_impute(args) -> int:
    import numpy as np

    from .data import SpatioTemporalSeries, save_series
    from .diffusion import impute
    from .fileio import atomic_write_bytes

    cfg, model, schedule, normalizer = _load_checkpoint_model(args.checkpoint)
    edges = args.edges or (cfg.edges_path or None)
    series = _load_for_checkpoint(args.data, edges, len(normalizer.means))
    seed = args.seed if args.seed is not None else cfg.seed
    n_samples = args.n_samples or cfg.n_samples
    result = impute(series, model, schedule, normalizer, n_samples,
                    np.random.default_rng(seed),
                    window_length=min(cfg.time_length, series.n_steps),
                    mean_coef=cfg.mean_coef)
    out = args.out or "imputed.csv"
    filled = SpatioTemporalSeries(values=result.point_estimate,
                                  mask=np.ones_like(series.mask),
                                  graph=series.graph,
                                  timestamps=series.timestamps)
    save_series(filled, out)
    if args.samples_out:
        import io as _io
        buf = _io.BytesIO()
        np.savez(buf, samples=result.samples,
                 target_mask=result.target_mask)
        atomic_write_bytes(args.samples_out, buf.getvalue())
    print(f"imputed series written to {out}")
    return 0


def _parse_seeds(text: str) -> list[int]:
    from .errors import ConfigError

    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad seed list {text!r}") from exc


def _model_imputer(cfg, model, schedule, normalizer, n_samples):
    from .diffusion import impute

    def run(series, rng):
        result = impute(series, model, schedule, normalizer, n_samples, rng,
                        window_length=min(cfg.time_length, series.n_steps),
                        mean_coef=cfg.mean_coef)
        return result.samples

    return run


def _evaluate_reports(cfg, model, schedule, normalizer, test_series, scenario,
                      ratio, seeds, n_samples):
    from .metrics import evaluate, linear_imputer, mean_imputer

    reports = [
        evaluate(_model_imputer(cfg, model, schedule, normalizer, n_samples),
                 test_series, scenario, seeds, method="cofill",
                 point_ratio=ratio),
        evaluate(mean_imputer, test_series, scenario, seeds, method="mean",
                 point_ratio=ratio),
        evaluate(linear_imputer, test_series, scenario, seeds,
                 method="linear", point_ratio=ratio),
    ]
    return reports


def cmd_evaluate(args) -> int:
    from .fileio import atomic_write_text
    from .metrics import REPORT_HEADER

    cfg, model, schedule, normalizer = _load_checkpoint_model(args.checkpoint)
    edges = args.edges or (cfg.edges_path or None)
    series = _load_for_checkpoint(args.data, edges, len(normalizer.means))
    seeds = _parse_seeds(args.seeds)
    n_samples = args.n_samples or cfg.n_samples
    reports = _evaluate_reports(cfg, model, schedule, normalizer, series,
                                args.scenario, args.ratio, seeds, n_samples)
    rows = [row for rep in reports for row in rep.to_rows()]
    out = args.out or "report.csv"
    atomic_write_text(out, _csv_text(REPORT_HEADER, rows))
    print(f"evaluation report written to {out}")
    return 0


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from .conditioning import ABLATION_VARIANTS
    from .data import split_series
    from .errors import ConfigError
    from .fileio import atomic_write_text
    from .metrics import evaluate

    cfg, series = _load_run(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise ConfigError(
                f"unknown variant {v!r}; valid: {sorted(ABLATION_VARIANTS)}"
            )
    seeds = _parse_seeds(args.seeds)
    test_series = split_series(series)[2]
    rows = []
    for variant in variants:
        vcfg = replace(cfg, ablation=variant)
        result = _train_once(vcfg, series)
        rep = evaluate(
            _model_imputer(vcfg, result.model, result.schedule,
                           result.normalizer, vcfg.n_samples),
            test_series, args.scenario, seeds, method=variant,
            point_ratio=args.ratio)
        m_mae, _ = rep._agg("mae")
        m_mse, _ = rep._agg("mse")
        m_crps, _ = rep._agg("crps")
        rows.append([variant, str(vcfg.seed), repr(m_mae), repr(m_mse),
                     repr(m_crps)])
    out = args.out or "ablation.csv"
    atomic_write_text(out, _csv_text(
        ["variant", "seed", "mae", "mse", "crps"], rows))
    print(f"ablation table written to {out}")
    return 0


SWEEPABLE = {"beta_T": ("beta_max", float), "d": ("channel_size", int)}


def cmd_sweep(args) -> int:
    from dataclasses import replace

    from .config import validate_config
    from .data import split_series
    from .errors import ConfigError
    from .fileio import atomic_write_text
    from .metrics import evaluate

    if args.param not in SWEEPABLE:
        raise ConfigError(
            f"parameter {args.param!r} is not sweepable; valid: "
            f"{sorted(SWEEPABLE)}"
        )
    key, cast = SWEEPABLE[args.param]
    try:
        values = [cast(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {args.values!r}") from exc
    if not values:
        raise ConfigError("empty sweep value list")
    cfg, series = _load_run(args)
    seeds = _parse_seeds(args.seeds)
    test_series = split_series(series)[2]
    rows = []
    for value in values:
        vcfg = replace(cfg, **{key: value})
        validate_config(vcfg)
        result = _train_once(vcfg, series)
        rep = evaluate(
            _model_imputer(vcfg, result.model, result.schedule,
                           result.normalizer, vcfg.n_samples),
            test_series, args.scenario, seeds, method=f"{args.param}={value}",
            point_ratio=args.ratio)
        m_mae, _ = rep._agg("mae")
        m_mse, _ = rep._agg("mse")
        rows.append([args.param, str(value), repr(m_mae), repr(m_mse)])
    out = args.out or "sweep.csv"
    atomic_write_text(out, _csv_text(["param", "value", "mae", "mse"], rows))
    print(f"sweep table written to {out}")
    return 0


def cmd_synth(args) -> int:
    from pathlib import Path

    from .data import SynthSpec, save_series, synth_dataset
    from .graph import save_edge_list

    seed = args.seed if args.seed is not None else 0
    spec = SynthSpec(n_components=args.components, noise_std=args.noise_std)
    series = synth_dataset(args.nodes, args.length, seed, spec)
    out_dir = Path(args.out or "synth_data")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_series(series, out_dir / "values.csv")
    save_edge_list(series.graph, out_dir / "edges.csv")
    print(f"dataset written to {out_dir}/values.csv and {out_dir}/edges.csv")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _set_threads(args.threads)
    from .errors import CofillError, ConfigError, ParseError
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CofillError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
