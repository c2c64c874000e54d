"""Command-line entry point: generation, training, alignment, benchmarks.

Every subcommand resolves its configuration (defaults < BMI_SEED env <
config file < ``--set key=value`` < ``--seed``), writes a snapshot of
the resolved configuration into the output directory, and is
deterministic given the seed.

Exit codes: 0 success, 2 usage error, 3 missing input, 4 bad
configuration, 1 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import ntsr
from .config import (
    drift_schedule_from,
    generator_spec_from,
    snapshot,
    train_config_from,
    validate_config,
)
from .errors import BmistabError, ConfigError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_CONFIG = 4


def _common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="JSON config file")
    sub.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="override a config key")
    sub.add_argument("--seed", type=int, default=None, help="seed override")
    sub.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmi",
        description="Stabilize a fixed neural-to-EMG decoder against recording drift.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic session")
    p.add_argument("--day", type=int, default=0, help="day index (drift schedule)")
    _common_flags(p)

    p = subs.add_parser("train", help="train the day-0 interface")
    p.add_argument("--mode", choices=["joint", "sequential", "direct"], default="joint")
    p.add_argument("--data", required=True, help="session directory")
    _common_flags(p)

    p = subs.add_parser("align", help="fit a day-k to day-0 alignment")
    p.add_argument("method", choices=["cca", "kldm", "adan", "ts"])
    p.add_argument("--day0", required=True, help="day-0 session directory")
    p.add_argument("--dayk", required=True, help="day-k session directory")
    p.add_argument("--interface", required=True, help="trained interface directory")
    p.add_argument("--max-seconds", type=float, default=None,
                   help="limit day-k training data (adan only)")
    _common_flags(p)

    p = subs.add_parser("eval", help="evaluate EMG predictions on a session")
    p.add_argument("--session", required=True, help="session directory")
    p.add_argument("--interface", required=True, help="trained interface directory")
    p.add_argument("--transform", default=None, help="fitted alignment directory")
    _common_flags(p)

    p = subs.add_parser("benchmark", help="multi-day drift-recovery benchmark")
    _common_flags(p)

    p = subs.add_parser("sweep", help="alignment data-efficiency sweep")
    _common_flags(p)

    return parser


# ---------------------------------------------------------------------------
# subcommand bodies


def _session_rates(session, config):
    from .signal import preprocess

    return preprocess(session, sigma=config["signal.smooth_sigma"])


def _load_session(path: str):
    from .signal import load_session

    directory = Path(path)
    if not directory.exists():
        raise FileNotFoundError(f"session directory not found: {directory}")
    return load_session(directory)


def cmd_synth(args, config) -> int:
    from .signal import save_session
    from .synth import apply_drift, drift_for_day

    spec = generator_spec_from(config)
    drift = drift_for_day(
        args.day,
        turnover_per_two_weeks=config["drift.turnover_per_two_weeks"],
        gain_std_at_16=config["drift.gain_std_at_16"],
        rotation_at_16=config["drift.rotation_at_16"],
        baseline_std_at_16=config["drift.baseline_std_at_16"],
        dropout_at_16=config["drift.dropout_at_16"],
    )
    day = apply_drift(spec, drift)
    out = Path(args.out)
    save_session(day.session, out)
    ntsr.write_ntsr(out / "latents.ntsr", day.truth.latents)
    snapshot(config, out)
    print(f"wrote session (day {args.day}, {day.session.duration:.0f} s) to {out}")
    return EXIT_OK


def cmd_train(args, config) -> int:
    from .interface import (
        DirectEmgPredictor,
        NeuralEmgInterface,
        save_interface,
    )
    from . import ntsr as ntsr_mod

    session = _load_session(args.data)
    x, y = _session_rates(session, config)
    out = Path(args.out)
    cfg = train_config_from(config)
    if args.mode == "direct":
        model = DirectEmgPredictor(
            epochs=cfg.epochs,
            batch_len=cfg.batch_len,
            learning_rate=cfg.learning_rate,
            lstm_lr_scale=cfg.lstm_lr_scale,
            seed=cfg.seed,
        ).fit(x, y)
        p = model.params_
        out.mkdir(parents=True, exist_ok=True)
        names = sorted(p.weights) + ["rate_mean", "rate_std"]
        tensors = [p.weights[k] for k in sorted(p.weights)] + [p.rate_mean, p.rate_std]
        ntsr_mod.write_ntsr(out / "interface.ntsr", tensors)
        manifest = {
            "kind": "direct-predictor",
            "tensors": names,
            "n_channels": p.n_channels,
            "n_muscles": p.n_muscles,
            "seed": p.seed,
            "checksum": p.checksum(),
        }
        (out / "interface.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    else:
        model = NeuralEmgInterface(
            n_latents=cfg.n_latents,
            hidden=cfg.hidden,
            mode=args.mode,
            epochs=cfg.epochs,
            batch_len=cfg.batch_len,
            learning_rate=cfg.learning_rate,
            lstm_lr_scale=cfg.lstm_lr_scale,
            lambda_init=cfg.lambda_init,
            vae_weight=cfg.vae_weight,
            seed=cfg.seed,
        ).fit(x, y)
        save_interface(model.params_, out, extra={"mode": args.mode})
    history = {
        key: values
        for key, values in model.history_.items()
        if key.startswith(("epoch_", "ae_epoch")) or key in ("initial_kl", "final_kl")
    }
    (out / "history.json").write_text(json.dumps(history, indent=2, sort_keys=True))
    snapshot(config, out)
    print(f"trained {args.mode} interface on {args.data} -> {out}")
    return EXIT_OK


def _load_interface(path: str):
    from .interface import load_interface

    directory = Path(path)
    if not directory.exists():
        raise FileNotFoundError(f"interface directory not found: {directory}")
    return load_interface(directory)


def cmd_align(args, config) -> int:
    from . import adan as adan_mod
    from . import cca as cca_mod
    from . import kldm as kldm_mod
    from .interface import encode

    day0 = _load_session(args.day0)
    dayk = _load_session(args.dayk)
    frozen = _load_interface(args.interface)
    x0, _ = _session_rates(day0, config)
    xk, _ = _session_rates(dayk, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.method == "cca":
        z0 = encode(frozen, x0)
        zk = encode(frozen, xk)
        tau = cca_mod.common_trial_length(
            [day0.trial_markers, dayk.trial_markers], x0.bin_width, min(z0.T, zk.T)
        )
        t = cca_mod.cca_fit(
            cca_mod.trial_average(z0, day0.trial_markers, tau),
            cca_mod.trial_average(zk, dayk.trial_markers, tau),
        )
        ntsr.write_ntsr(out / "cca.ntsr", [t.m0, t.mk, t.correlations, t.mean0, t.meank])
        meta = {
            "kind": "cca",
            "tensors": ["m0", "mk", "correlations", "mean0", "meank"],
            "tau": tau,
            "correlations": [float(v) for v in t.correlations],
        }
        (out / "transform.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    elif args.method == "kldm":
        summary0 = kldm_mod.gaussian_fit(encode(frozen, x0))
        cfg = kldm_mod.KlTrainConfig(
            iterations=config["kldm.iterations"],
            batch_size=config["kldm.batch_size"],
            learning_rate=config["kldm.learning_rate"],
            seed=config["seed"],
        )
        enc, history = kldm_mod.kldm_train(xk, frozen, summary0, cfg)
        names = sorted(enc.weights) + ["rate_mean", "rate_std"]
        tensors = [enc.weights[k] for k in sorted(enc.weights)] + [enc.rate_mean, enc.rate_std]
        ntsr.write_ntsr(out / "kldm.ntsr", tensors)
        meta = {
            "kind": "kldm",
            "tensors": names,
            "n_channels": enc.n_channels,
            "n_latents": enc.n_latents,
            "hidden": list(enc.hidden),
            "initial_kl": history["initial_kl"],
            "final_kl": history["final_kl"],
        }
        (out / "transform.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    elif args.method == "adan":
        if args.max_seconds is not None:
            keep = int(round(args.max_seconds / xk.bin_width))
            from .signal import RateSeries

            xk = RateSeries(xk.bin_width, xk.rates[:keep])
        cfg = adan_mod.AdanConfig(
            iterations=config["adan.iterations"],
            batch_size=config["adan.batch_size"],
            lr_aligner=config["adan.lr_aligner"],
            lr_discriminator=config["adan.lr_discriminator"],
            patience=config["adan.patience"],
            seed=config["seed"],
        )
        aligner, log = adan_mod.adan_train(x0, xk, frozen, cfg)
        ntsr.write_ntsr(
            out / "adan.ntsr",
            [aligner["al0_W"], aligner["al0_b"], aligner["al1_W"], aligner["al1_b"]],
        )
        with (out / "training_log.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "mu0", "muk", "gap"])
            for i, (a, b, c) in enumerate(zip(log["mu0"], log["muk"], log["gap"])):
                writer.writerow([i, repr(a), repr(b), repr(c)])
        meta = {
            "kind": "adan",
            "tensors": ["al0_W", "al0_b", "al1_W", "al1_b"],
            "iterations_run": log["iterations_run"],
            "fixed_ae_muk_before": log["fixed_ae_muk_before"],
            "fixed_ae_muk_after": log["fixed_ae_muk_after"],
        }
        (out / "transform.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    else:  # ts
        z0 = encode(frozen, x0)
        zk = encode(frozen, xk)
        shift, scale = adan_mod.translate_scale_fit(z0, zk)
        meank = zk.z.mean(axis=0)
        ntsr.write_ntsr(out / "ts.ntsr", [shift, scale, meank])
        meta = {"kind": "ts", "tensors": ["shift", "scale", "meank"]}
        (out / "transform.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    snapshot(config, out)
    print(f"fitted {args.method} alignment -> {out}")
    return EXIT_OK


def _apply_transform(transform_dir: Path, frozen, xk):
    """Load a fitted alignment and return latents for the frozen predictor."""
    from . import adan as adan_mod
    from . import cca as cca_mod
    from .interface import InterfaceParams, encode
    from .kldm import kldm_apply

    meta = json.loads((transform_dir / "transform.json").read_text())
    kind = meta["kind"]
    if kind == "cca":
        m0, mk, correlations, mean0, meank = ntsr.read_ntsr(transform_dir / "cca.ntsr")
        t = cca_mod.CcaTransform(m0=m0, mk=mk, correlations=correlations,
                                 mean0=mean0, meank=meank)
        return cca_mod.cca_apply(t, encode(frozen, xk))
    if kind == "kldm":
        tensors = ntsr.read_ntsr(transform_dir / "kldm.ntsr")
        by_name = dict(zip(meta["tensors"], tensors))
        enc = InterfaceParams(
            n_channels=int(meta["n_channels"]),
            n_latents=int(meta["n_latents"]),
            n_muscles=frozen.n_muscles,
            hidden=tuple(meta["hidden"]),
            weights={k: v for k, v in by_name.items() if k not in ("rate_mean", "rate_std")},
            rate_mean=by_name["rate_mean"],
            rate_std=by_name["rate_std"],
        )
        return kldm_apply(enc, xk).z
    if kind == "adan":
        w = ntsr.read_ntsr(transform_dir / "adan.ntsr")
        aligner = {"al0_W": w[0], "al0_b": w[1], "al1_W": w[2], "al1_b": w[3]}
        aligned = adan_mod.adan_apply(aligner, xk)
        return encode(frozen, aligned).z
    if kind == "ts":
        shift, scale, meank = ntsr.read_ntsr(transform_dir / "ts.ntsr")
        z = encode(frozen, xk).z
        return (z - meank) * scale + (meank + shift)
    raise ConfigError(f"unknown transform kind '{kind}'")


def cmd_eval(args, config) -> int:
    from .bench import eval_folds
    from .interface import predict_emg

    session = _load_session(args.session)
    frozen = _load_interface(args.interface)
    x, y = _session_rates(session, config)
    if args.transform is not None:
        transform_dir = Path(args.transform)
        if not transform_dir.exists():
            raise FileNotFoundError(f"transform directory not found: {transform_dir}")
        z = _apply_transform(transform_dir, frozen, x)
    else:
        from .interface import encode

        z = encode(frozen, x).z
    pred = predict_emg(frozen, z)
    report = eval_folds(y, pred, session.trial_markers, x.bin_width,
                        k=config["bench.folds"], seed=config["seed"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "mean_vaf": report.mean_vaf,
        "sd_of_mean": report.sd_of_mean,
        "per_fold": report.per_fold,
        "per_muscle": [None if np.isnan(v) else float(v) for v in report.per_muscle],
    }
    (out / "eval.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    snapshot(config, out)
    print(f"mean VAF {report.mean_vaf:.2f} (sd of mean {report.sd_of_mean:.2f}) -> {out}")
    return EXIT_OK


def cmd_benchmark(args, config) -> int:
    from .bench import run_benchmark

    spec = generator_spec_from(config)
    table = run_benchmark(
        spec,
        days=tuple(config["bench.days"]),
        interface_cfg=train_config_from(config),
        align_cfg={
            "kldm": {
                "iterations": config["kldm.iterations"],
                "batch_size": config["kldm.batch_size"],
                "learning_rate": config["kldm.learning_rate"],
            },
            "adan": {
                "iterations": config["adan.iterations"],
                "batch_size": config["adan.batch_size"],
                "lr_aligner": config["adan.lr_aligner"],
                "lr_discriminator": config["adan.lr_discriminator"],
                "patience": config["adan.patience"],
            },
        },
        folds=config["bench.folds"],
        seed=config["seed"],
        out_dir=args.out,
        threads=config["bench.threads"],
        drift_schedule=drift_schedule_from(config),
    )
    export_pointclouds(args.out)
    snapshot(config, Path(args.out))
    for day in table.days:
        row = "  ".join(
            f"{cond}={table.mean(day, cond):5.1f}"
            for cond in ("retrained", "fixed", "cca", "kldm", "adan", "ts")
        )
        print(f"day {day:2d}: {row}")
    return EXIT_OK


def cmd_sweep(args, config) -> int:
    from .adan import AdanConfig, data_efficiency_sweep
    from .interface import NeuralEmgInterface
    from .signal import preprocess
    from .synth import apply_drift, generate_day0

    spec = generator_spec_from(config)
    schedule = drift_schedule_from(config)
    day0 = generate_day0(spec)
    x0, y0 = preprocess(day0.session, sigma=config["signal.smooth_sigma"])
    cfg = train_config_from(config)
    decoder = NeuralEmgInterface(
        n_latents=cfg.n_latents, hidden=cfg.hidden, mode="joint", epochs=cfg.epochs,
        batch_len=cfg.batch_len, learning_rate=cfg.learning_rate,
        lstm_lr_scale=cfg.lstm_lr_scale, lambda_init=cfg.lambda_init, seed=cfg.seed,
    ).fit(x0, y0)
    adan_cfg = AdanConfig(
        iterations=config["adan.iterations"],
        batch_size=config["adan.batch_size"],
        lr_aligner=config["adan.lr_aligner"],
        lr_discriminator=config["adan.lr_discriminator"],
        patience=config["adan.patience"],
        seed=config["seed"],
    )
    days = [d for d in config["bench.days"] if d != 0]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    curves = {}
    for day in days:
        dayk = apply_drift(spec, schedule[day])
        xk, yk = preprocess(dayk.session, sigma=config["signal.smooth_sigma"])
        curves[day] = data_efficiency_sweep(
            x0, xk, yk, decoder.params_, adan_cfg,
            increment=config["sweep.increment"],
            max_increments=config["sweep.max_increments"],
        )
    sizes = curves[days[0]]["sizes"]
    mean_curve = np.mean([curves[d]["improvement"] for d in days], axis=0)
    with (out / "sweep.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["samples", "seconds", "mean_improvement"]
                        + [f"day{d}" for d in days])
        for i, size in enumerate(sizes):
            writer.writerow(
                [size, repr(size * spec.bin_width), repr(float(mean_curve[i]))]
                + [repr(curves[d]["improvement"][i]) for d in days]
            )
    summary = {
        "days": days,
        "sizes": sizes,
        "mean_improvement": [float(v) for v in mean_curve],
        "per_day": {str(d): curves[d] for d in days},
        "one_minute_reference_samples": curves[days[0]]["one_minute_reference_samples"],
    }
    (out / "sweep.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    snapshot(config, out)
    print(f"sweep over days {days} -> {out}")
    return EXIT_OK


def export_pointclouds(run_dir) -> list[Path]:
    """Convert a benchmark run's point-cloud dumps to labeled CSVs.

    One CSV per cloud: latent clouds carry (day, condition, z0..),
    residual clouds (day, stage, r0..).
    """
    run_dir = Path(run_dir)
    cloud_dir = run_dir / "pointclouds"
    if not cloud_dir.exists():
        raise FileNotFoundError(f"no pointclouds under {run_dir}")
    written = []
    for path in sorted(cloud_dir.glob("*.ntsr")):
        arr = ntsr.read_single(path)
        name = path.stem  # e.g. day4_latents_cca / day4_residuals_before_adan
        day_part, _, rest = name.partition("_")
        day = int(day_part.removeprefix("day"))
        kind, _, label = rest.partition("_")
        csv_path = cloud_dir / f"{name}.csv"
        with csv_path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            prefix = "z" if kind == "latents" else "r"
            writer.writerow(["day", "label"] + [f"{prefix}{i}" for i in range(arr.shape[1])])
            for row in arr:
                writer.writerow([day, label] + [repr(float(v)) for v in row])
        written.append(csv_path)
    return written


# ---------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles --help and usage errors
        return int(exc.code or 0)
    try:
        config = validate_config(args.config, args.overrides, args.seed)
        handler = {
            "synth": cmd_synth,
            "train": cmd_train,
            "align": cmd_align,
            "eval": cmd_eval,
            "benchmark": cmd_benchmark,
            "sweep": cmd_sweep,
        }[args.command]
        return handler(args, config)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BmistabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
