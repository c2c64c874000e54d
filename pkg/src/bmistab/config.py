"""Run configuration: flat dotted keys, JSON files, layered overrides.

Precedence, lowest to highest: built-in defaults, the BMI_SEED
environment variable (seed only), the config file, command-line
``key=value`` overrides. Every run writes the resolved configuration
next to its outputs so the run can be regenerated exactly.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import ConfigError

# (default, type) per key; recording-setup constants are fixed here and
# only overridable for toy runs
DEFAULTS: dict[str, tuple] = {
    "seed": (0, int),
    "synth.n_channels": (96, int),
    "synth.n_latents": (10, int),
    "synth.n_muscles": (14, int),
    "synth.n_targets": (8, int),
    "synth.trials_per_target": (10, int),
    "synth.trial_len": (1.0, float),
    "synth.bin_width": (0.05, float),
    "synth.latent_noise": (0.15, float),
    "synth.emg_noise": (0.04, float),
    "signal.smooth_sigma": (0.125, float),
    "interface.n_latents": (10, int),
    "interface.hidden": ([64, 32], list),
    "interface.epochs": (150, int),
    "interface.batch_len": (200, int),
    "interface.learning_rate": (1e-3, float),
    "interface.lstm_lr_scale": (5.0, float),
    "interface.lambda_init": (1.0, float),
    "interface.vae_weight": (0.0, float),
    "kldm.iterations": (2000, int),
    "kldm.batch_size": (1000, int),
    "kldm.learning_rate": (1e-4, float),
    "adan.iterations": (3000, int),
    "adan.batch_size": (256, int),
    "adan.lr_aligner": (1e-4, float),
    "adan.lr_discriminator": (1e-4, float),
    "adan.patience": (300, int),
    "bench.days": ([0, 4, 8, 12, 16], list),
    "bench.folds": (5, int),
    "bench.threads": (1, int),
    "sweep.increment": (120, int),
    "sweep.max_increments": (10, int),
    "drift.turnover_per_two_weeks": (0.4, float),
    "drift.gain_std_at_16": (0.25, float),
    "drift.rotation_at_16": (0.5, float),
    "drift.baseline_std_at_16": (0.15, float),
    "drift.dropout_at_16": (0.05, float),
}


class RunConfig(dict):
    """Resolved flat configuration; behaves like a plain dict."""

    def seeded(self, value: int | None) -> "RunConfig":
        if value is not None:
            out = RunConfig(self)
            out["seed"] = int(value)
            return out
        return self


def _check_type(key: str, value, expected) -> object:
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{key}' expects a number, got {value!r}")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{key}' expects an integer, got {value!r}")
        return int(value)
    if expected is list:
        if not isinstance(value, list):
            raise ConfigError(f"key '{key}' expects a list, got {value!r}")
        return value
    return value


def validate_config(
    file: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
) -> RunConfig:
    """Build the resolved configuration.

    Unknown keys are rejected with the offending name; values are
    type-checked against the defaults table.
    """
    resolved = RunConfig({k: v for k, (v, _) in DEFAULTS.items()})

    env_seed = os.environ.get("BMI_SEED")
    if env_seed is not None:
        try:
            resolved["seed"] = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"BMI_SEED must be an integer, got {env_seed!r}") from exc

    if file is not None:
        path = Path(file)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        text = path.read_text().strip()
        data = json.loads(text) if text else {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in data.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key '{key}'")
            resolved[key] = _check_type(key, value, DEFAULTS[key][1])

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, _, raw = item.partition("=")
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        resolved[key] = _check_type(key, value, DEFAULTS[key][1])

    if seed is not None:
        resolved["seed"] = int(seed)
    return resolved


def snapshot(config: RunConfig, out_dir: str | Path) -> Path:
    """Write the resolved config next to a run's outputs.

    Output paths are deliberately excluded so two runs of the same
    configuration produce identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config.resolved.json"
    path.write_text(json.dumps(dict(config), indent=2, sort_keys=True))
    return path


def generator_spec_from(config: RunConfig):
    from .synth import GeneratorSpec

    return GeneratorSpec(
        n_channels=config["synth.n_channels"],
        n_latents=config["synth.n_latents"],
        n_muscles=config["synth.n_muscles"],
        n_targets=config["synth.n_targets"],
        trials_per_target=config["synth.trials_per_target"],
        trial_len=config["synth.trial_len"],
        bin_width=config["synth.bin_width"],
        seed=config["seed"],
        latent_noise=config["synth.latent_noise"],
        emg_noise=config["synth.emg_noise"],
    )


def train_config_from(config: RunConfig):
    from .interface import TrainConfig

    return TrainConfig(
        epochs=config["interface.epochs"],
        batch_len=config["interface.batch_len"],
        learning_rate=config["interface.learning_rate"],
        lstm_lr_scale=config["interface.lstm_lr_scale"],
        lambda_init=config["interface.lambda_init"],
        seed=config["seed"],
        vae_weight=config["interface.vae_weight"],
        n_latents=config["interface.n_latents"],
        hidden=tuple(config["interface.hidden"]),
    )


def drift_schedule_from(config: RunConfig) -> dict:
    from .synth import drift_for_day

    return {
        day: drift_for_day(
            day,
            turnover_per_two_weeks=config["drift.turnover_per_two_weeks"],
            gain_std_at_16=config["drift.gain_std_at_16"],
            rotation_at_16=config["drift.rotation_at_16"],
            baseline_std_at_16=config["drift.baseline_std_at_16"],
            dropout_at_16=config["drift.dropout_at_16"],
        )
        for day in config["bench.days"]
    }
