"""Metrics, trial-blocked cross-validation, and the multi-day benchmark."""

from __future__ import annotations

import csv
import json
import warnings
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .numerics import RngStream

DEFAULT_DAYS = (0, 4, 8, 12, 16)
CONDITIONS = ("retrained", "fixed", "cca", "kldm", "adan", "ts")


@dataclass
class VafReport:
    """Percent variance accounted for, per muscle and cross-validated."""

    per_muscle: np.ndarray
    mean_vaf: float
    fold_count: int = 1
    per_fold: list[float] = field(default_factory=list)
    sd_of_mean: float = 0.0


def vaf(y_true, y_pred) -> VafReport:
    """Percent variance accounted for: 100 * (1 - SSE/SST) per muscle.

    Muscles with zero variance in ``y_true`` are excluded with a
    warning; the mean is over the remaining muscles.
    """
    yt = np.asarray(getattr(y_true, "envelopes", y_true), dtype=np.float64)
    yp = np.asarray(getattr(y_pred, "envelopes", y_pred), dtype=np.float64)
    if yt.shape != yp.shape:
        raise ShapeError(f"shape mismatch {yt.shape} vs {yp.shape}")
    sse = np.sum((yt - yp) ** 2, axis=0)
    sst = np.sum((yt - yt.mean(axis=0)) ** 2, axis=0)
    valid = sst > 0
    if not np.all(valid):
        warnings.warn(
            f"excluding {int(np.sum(~valid))} zero-variance muscle(s) from VAF",
            stacklevel=2,
        )
    per_muscle = np.full(yt.shape[1], np.nan)
    per_muscle[valid] = 100.0 * (1.0 - sse[valid] / sst[valid])
    return VafReport(per_muscle=per_muscle, mean_vaf=float(np.mean(per_muscle[valid])))


# ---------------------------------------------------------------------------
# cross-validation over whole trials


def trial_bins(markers: list[tuple[float, int]], bin_width: float, T: int) -> list[tuple[int, int, int]]:
    """(start_bin, end_bin, target) per trial; end clipped to T."""
    out = []
    starts = sorted(markers)
    for i, (t0, target) in enumerate(starts):
        b0 = int(round(t0 / bin_width))
        b1 = int(round(starts[i + 1][0] / bin_width)) if i + 1 < len(starts) else T
        b1 = min(b1, T)
        if b1 > b0:
            out.append((b0, b1, int(target)))
    return out


def make_folds(
    markers: list[tuple[float, int]],
    bin_width: float,
    T: int,
    k: int = 5,
    seed: int = 0,
) -> list[np.ndarray]:
    """k disjoint, exhaustive bin-index sets, whole trials per fold.

    Trials are assigned round-robin within each target (after a seeded
    shuffle), so every fold sees all targets.
    """
    trials = trial_bins(markers, bin_width, T)
    rng = RngStream(seed).child(7)
    fold_trials: list[list[int]] = [[] for _ in range(k)]
    by_target: dict[int, list[int]] = {}
    for idx, (_, _, target) in enumerate(trials):
        by_target.setdefault(target, []).append(idx)
    for target in sorted(by_target):
        idxs = np.array(by_target[target])
        idxs = idxs[rng.permutation(len(idxs))]
        for pos, idx in enumerate(idxs):
            fold_trials[pos % k].append(int(idx))
    folds = []
    for members in fold_trials:
        bins = np.concatenate(
            [np.arange(trials[i][0], trials[i][1]) for i in sorted(members)]
        ) if members else np.zeros(0, dtype=int)
        folds.append(np.sort(bins))
    covered = np.sort(np.concatenate(folds)) if folds else np.zeros(0, dtype=int)
    tail = np.setdiff1d(np.arange(T), covered)
    if tail.size:  # bins outside any trial go to the last fold
        folds[-1] = np.sort(np.concatenate([folds[-1], tail]))
    return folds


def crossval(
    x,
    y,
    markers: list[tuple[float, int]],
    trainer,
    k: int = 5,
    seed: int = 0,
) -> VafReport:
    """k-fold cross-validated VAF for a trainable predictor.

    ``trainer(x_train, y_train)`` must return an object with a
    ``predict(x)`` method. Folds are whole trials, stratified by target;
    the model trains on the train-fold bins only, then predicts over the
    full continuous session (as it would run online) and is scored on
    the held-out bins. Reports the mean across folds and the standard
    deviation of the mean.
    """
    x_arr = np.asarray(getattr(x, "rates", x), dtype=np.float64)
    y_arr = np.asarray(getattr(y, "envelopes", y), dtype=np.float64)
    bin_width = getattr(x, "bin_width", 0.05)
    folds = make_folds(markers, bin_width, x_arr.shape[0], k=k, seed=seed)
    per_fold = []
    per_muscle = []
    for test_bins in folds:
        train_bins = np.setdiff1d(np.arange(x_arr.shape[0]), test_bins)
        model = trainer(x_arr[train_bins], y_arr[train_bins])
        pred = np.asarray(model.predict(x_arr))
        report = vaf(y_arr[test_bins], pred[test_bins])
        per_fold.append(report.mean_vaf)
        per_muscle.append(report.per_muscle)
    per_fold_arr = np.array(per_fold)
    return VafReport(
        per_muscle=np.nanmean(np.stack(per_muscle), axis=0),
        mean_vaf=float(per_fold_arr.mean()),
        fold_count=k,
        per_fold=[float(v) for v in per_fold],
        sd_of_mean=float(per_fold_arr.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0,
    )


def eval_folds(y_true, y_pred, markers, bin_width: float, k: int = 5, seed: int = 0) -> VafReport:
    """Fold-wise VAF of fixed predictions (no training), same fold plan."""
    yt = np.asarray(getattr(y_true, "envelopes", y_true), dtype=np.float64)
    yp = np.asarray(getattr(y_pred, "envelopes", y_pred), dtype=np.float64)
    folds = make_folds(markers, bin_width, yt.shape[0], k=k, seed=seed)
    per_fold = []
    per_muscle = []
    for test_bins in folds:
        report = vaf(yt[test_bins], yp[test_bins])
        per_fold.append(report.mean_vaf)
        per_muscle.append(report.per_muscle)
    per_fold_arr = np.array(per_fold)
    return VafReport(
        per_muscle=np.nanmean(np.stack(per_muscle), axis=0),
        mean_vaf=float(per_fold_arr.mean()),
        fold_count=k,
        per_fold=[float(v) for v in per_fold],
        sd_of_mean=float(per_fold_arr.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0,
    )


# ---------------------------------------------------------------------------
# multi-day benchmark


@dataclass
class BenchmarkTable:
    """Per-day, per-condition cross-validated VAF."""

    days: list[int]
    cells: dict[tuple[int, str], VafReport]
    interface_checksums: dict[str, str] = field(default_factory=dict)

    def mean(self, day: int, condition: str) -> float:
        return self.cells[(day, condition)].mean_vaf

    def to_rows(self) -> list[dict]:
        rows = []
        for day in self.days:
            for condition in CONDITIONS:
                report = self.cells.get((day, condition))
                if report is None:
                    continue
                rows.append(
                    {
                        "day": day,
                        "condition": condition,
                        "mean_vaf": report.mean_vaf,
                        "sd_of_mean": report.sd_of_mean,
                        **{f"fold{i}": v for i, v in enumerate(report.per_fold)},
                    }
                )
        return rows

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rows = self.to_rows()
        fieldnames = list(rows[0].keys())
        with (directory / "benchmark.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        payload = {
            "days": self.days,
            "conditions": list(CONDITIONS),
            "cells": {
                f"{day}:{cond}": {
                    "mean_vaf": rep.mean_vaf,
                    "sd_of_mean": rep.sd_of_mean,
                    "per_fold": rep.per_fold,
                    "per_muscle": [None if np.isnan(v) else v for v in rep.per_muscle],
                }
                for (day, cond), rep in sorted(self.cells.items(), key=lambda kv: (kv[0][0], kv[0][1]))
            },
            "interface_checksums": self.interface_checksums,
        }
        (directory / "benchmark.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
        with (directory / "plotdata_vaf_by_day.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["day"] + list(CONDITIONS))
            for day in self.days:
                writer.writerow(
                    [day]
                    + [
                        repr(self.cells[(day, c)].mean_vaf) if (day, c) in self.cells else ""
                        for c in CONDITIONS
                    ]
                )


def run_benchmark(
    spec,
    days=DEFAULT_DAYS,
    interface_cfg=None,
    align_cfg: dict | None = None,
    folds: int = 5,
    seed: int = 0,
    out_dir=None,
    threads: int = 1,
    drift_schedule=None,
    pointcloud_samples: int = 1000,
) -> BenchmarkTable:
    """Train once on day-0, then evaluate all conditions on every day.

    Alignment transforms are fitted once per day from that day's firing
    rates (plus trial structure where the method needs it) and the fixed
    interface is evaluated fold-wise; the retrained ceiling retrains the
    interface per fold. Results merge deterministically by (day,
    condition); ``threads`` bounds optional per-day parallelism.
    """
    from . import adan as adan_mod
    from . import cca as cca_mod
    from . import kldm as kldm_mod
    from . import synth as synth_mod
    from .interface import NeuralEmgInterface, TrainConfig, encode, predict_emg
    from .signal import preprocess

    interface_cfg = interface_cfg or TrainConfig()
    align_cfg = align_cfg or {}
    if drift_schedule is None:
        drift_schedule = {day: synth_mod.drift_for_day(day) for day in days}

    day0 = synth_mod.generate_day0(spec)
    x0, y0 = preprocess(day0.session)
    markers0 = day0.session.trial_markers

    decoder = NeuralEmgInterface(
        n_latents=interface_cfg.n_latents,
        hidden=interface_cfg.hidden,
        mode="joint",
        epochs=interface_cfg.epochs,
        batch_len=interface_cfg.batch_len,
        learning_rate=interface_cfg.learning_rate,
        lambda_init=interface_cfg.lambda_init,
        vae_weight=interface_cfg.vae_weight,
        seed=interface_cfg.seed,
    ).fit(x0, y0)
    frozen = decoder.params_
    checksum0 = frozen.checksum()

    z0 = encode(frozen, x0)
    tau = cca_mod.common_trial_length([markers0], x0.bin_width, x0.T)
    z0_avg = cca_mod.trial_average(z0, markers0, tau)
    summary0 = kldm_mod.gaussian_fit(z0)

    clouds: dict[str, np.ndarray] = {}
    cloud_rng = RngStream(seed).child(900)

    def subsample(name: str, arr: np.ndarray) -> np.ndarray:
        # key by name, not insertion order, so threading cannot reorder draws
        if arr.shape[0] <= pointcloud_samples:
            return arr
        key = zlib.crc32(name.encode())
        idx = np.sort(cloud_rng.child(key).choice(arr.shape[0], pointcloud_samples))
        return arr[idx]

    def evaluate_day(day: int) -> dict[tuple[int, str], VafReport]:
        drift = drift_schedule[day]
        synth_day = synth_mod.apply_drift(spec, drift)
        xk, yk = preprocess(synth_day.session)
        markers = synth_day.session.trial_markers
        cells: dict[tuple[int, str], VafReport] = {}

        def key(name: str) -> str:
            return f"day{day}_{name}"

        def eval_fixed(y_pred) -> VafReport:
            return eval_folds(yk, y_pred, markers, xk.bin_width, k=folds, seed=seed)

        # fixed interface, no alignment
        zk = encode(frozen, xk)
        cells[(day, "fixed")] = eval_fixed(predict_emg(frozen, zk))
        clouds[key("latents_fixed")] = subsample(key("latents_fixed"), zk.z)

        # retrained ceiling: day 0 reuses the frozen interface verbatim
        if day == 0:
            cells[(day, "retrained")] = cells[(day, "fixed")]
        else:
            def trainer(x_train, y_train):
                return NeuralEmgInterface(
                    n_latents=interface_cfg.n_latents,
                    hidden=interface_cfg.hidden,
                    mode="joint",
                    epochs=interface_cfg.epochs,
                    batch_len=interface_cfg.batch_len,
                    learning_rate=interface_cfg.learning_rate,
                    lambda_init=interface_cfg.lambda_init,
                    seed=interface_cfg.seed,
                ).fit(x_train, y_train)

            cells[(day, "retrained")] = crossval(xk, yk, markers, trainer, k=folds, seed=seed)

        # supervised latent alignment from trial-averaged trajectories
        zk_avg = cca_mod.trial_average(zk, markers, tau)
        aligner = cca_mod.CcaAligner().fit(z0_avg, zk_avg)
        z_cca = aligner.transform(zk.z)
        cells[(day, "cca")] = eval_fixed(predict_emg(frozen, z_cca))
        clouds[key("latents_cca")] = subsample(key("latents_cca"), z_cca)

        # unsupervised Gaussian-matching of latent statistics
        kl_align = kldm_mod.GaussianKlAligner(
            interface=frozen,
            day0_summary=summary0,
            seed=seed,
            **align_cfg.get("kldm", {}),
        ).fit(xk)
        z_kl = kl_align.transform(xk)
        cells[(day, "kldm")] = eval_fixed(predict_emg(frozen, z_kl))
        clouds[key("latents_kldm")] = subsample(key("latents_kldm"), z_kl)

        # adversarial residual alignment in rate space
        ad_align = adan_mod.AdversarialResidualAligner(
            interface=frozen,
            seed=seed,
            **align_cfg.get("adan", {}),
        ).fit(x0, xk)
        x_ad = ad_align.transform(xk)
        z_ad = encode(frozen, x_ad)
        cells[(day, "adan")] = eval_fixed(predict_emg(frozen, z_ad))
        clouds[key("latents_adan")] = subsample(key("latents_adan"), z_ad.z)
        clouds[key("residuals_before_adan")] = subsample(
            key("residuals_before_adan"), adan_mod.residual_vectors(frozen, xk.rates)
        )
        clouds[key("residuals_after_adan")] = subsample(
            key("residuals_after_adan"), adan_mod.residual_vectors(frozen, x_ad)
        )

        # per-dimension translate-and-scale baseline in latent space
        ts_align = adan_mod.TranslateScaleAligner().fit(z0.z, zk.z)
        z_ts = ts_align.transform(zk.z)
        cells[(day, "ts")] = eval_fixed(predict_emg(frozen, z_ts))
        clouds[key("latents_ts")] = subsample(key("latents_ts"), z_ts)
        return cells

    all_cells: dict[tuple[int, str], VafReport] = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for cells in pool.map(evaluate_day, days):
                all_cells.update(cells)
    else:
        for day in days:
            all_cells.update(evaluate_day(day))

    if frozen.checksum() != checksum0:
        raise ShapeError("frozen interface changed during benchmarking")

    table = BenchmarkTable(
        days=list(days),
        cells=all_cells,
        interface_checksums={"day0": checksum0, "final": frozen.checksum()},
    )
    if out_dir is not None:
        out_dir = Path(out_dir)
        table.save(out_dir)
        from . import ntsr

        cloud_dir = out_dir / "pointclouds"
        cloud_dir.mkdir(parents=True, exist_ok=True)
        for name in sorted(clouds):
            ntsr.write_ntsr(cloud_dir / f"{name}.ntsr", clouds[name])
    return table
