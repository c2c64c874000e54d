"""Synthetic center-out sessions with a ground-truth drift model.

A session is built from low-dimensional latent trajectories (smooth
per-target cosine mixtures plus seeded noise) embedded into channel
firing rates through an exponential link, with Poisson spiking at 1 ms
resolution. EMG envelope targets are a causal readout of the same
latents, so movement intent is identical across days by construction;
only the latent-to-rate embedding drifts between days (channel gain
changes, tuning rotation, baseline shifts, electrode turnover, and
dropout), with defaults sized so roughly 40% of channels turn over in
two weeks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateSessionError, ShapeError
from .numerics import RngStream
from .signal import SpikeSession, gaussian_kernel

# child-stream keys, fixed so sessions are reproducible from (spec, drift, seed)
_KEY_EMBED = 0
_KEY_TRAJ = 1
_KEY_EMGMAP = 2
_KEY_DRIFT = 3
_KEY_TRIAL = 4


@dataclass
class GeneratorSpec:
    """Parameters of the synthetic session generator."""

    n_channels: int = 96
    n_latents: int = 10
    n_muscles: int = 14
    n_targets: int = 8
    trials_per_target: int = 10
    trial_len: float = 1.0
    bin_width: float = 0.05
    seed: int = 0
    n_nuisance: int = 3
    nuisance_gain: float = 2.0
    latent_noise: float = 0.15
    emg_noise: float = 0.04
    rate_floor: float = 0.1
    rate_ceil: float = 100.0
    spike_dt: float = 0.001
    n_basis: int = 3
    emg_taps: int = 4

    def __post_init__(self):
        for name in ("n_channels", "n_latents", "n_muscles", "n_targets",
                     "trials_per_target", "n_basis", "emg_taps"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1")
        if self.n_nuisance < 0 or self.nuisance_gain < 0:
            raise ShapeError("nuisance settings must be nonnegative")
        if self.trial_len <= 0 or self.bin_width <= 0 or self.spike_dt <= 0:
            raise ShapeError("durations must be positive")
        if self.rate_floor <= 0 or self.rate_ceil <= self.rate_floor:
            raise ShapeError("need 0 < rate_floor < rate_ceil")

    @property
    def n_trials(self) -> int:
        return self.n_targets * self.trials_per_target

    @property
    def duration(self) -> float:
        return self.n_trials * self.trial_len

    @property
    def bins_per_trial(self) -> int:
        return int(round(self.trial_len / self.bin_width))


@dataclass
class DriftSpec:
    """Ground-truth perturbation of the latent-to-rate embedding.

    All fractions are in [0, 1]. ``day`` only labels the session; the
    magnitudes below fully determine the perturbation.
    """

    day: int = 0
    dropout: float = 0.0
    gain_std: float = 0.0
    rotation: float = 0.0
    baseline_std: float = 0.0
    turnover: float = 0.0

    def __post_init__(self):
        for name in ("dropout", "turnover"):
            frac = getattr(self, name)
            if not 0.0 <= frac <= 1.0:
                raise ShapeError(f"{name} must be in [0, 1], got {frac}")
        if self.gain_std < 0 or self.baseline_std < 0 or self.rotation < 0:
            raise ShapeError("drift magnitudes must be nonnegative")

    def is_identity(self) -> bool:
        return (
            self.dropout == 0.0
            and self.gain_std == 0.0
            and self.rotation == 0.0
            and self.baseline_std == 0.0
            and self.turnover == 0.0
        )


def drift_for_day(
    day: int,
    turnover_per_two_weeks: float = 0.4,
    gain_std_at_16: float = 0.25,
    rotation_at_16: float = 0.5,
    baseline_std_at_16: float = 0.15,
    dropout_at_16: float = 0.05,
) -> DriftSpec:
    """Default drift schedule, linear in the day index.

    Turnover is anchored at ``turnover_per_two_weeks`` of channels after
    14 days; the remaining magnitudes are calibration choices sized so a
    fixed day-0 decoder degrades materially by day 16.
    """
    if day < 0:
        raise ShapeError("day must be >= 0")
    scale = day / 16.0
    return DriftSpec(
        day=day,
        dropout=min(1.0, dropout_at_16 * scale),
        gain_std=gain_std_at_16 * scale,
        rotation=rotation_at_16 * scale,
        baseline_std=baseline_std_at_16 * scale,
        turnover=min(1.0, turnover_per_two_weeks * day / 14.0),
    )


@dataclass
class SynthTruth:
    """Generator-side ground truth for oracle checks."""

    day: int
    latents: np.ndarray        # (T, l) at bin centers
    embedding: np.ndarray      # (n, l) drifted latent-to-log-rate map
    log_baseline: np.ndarray   # (n,)


@dataclass
class SynthDay:
    session: SpikeSession
    truth: SynthTruth


# ---------------------------------------------------------------------------
# pieces


def _dim_gains(spec: GeneratorSpec) -> np.ndarray:
    """Per-dimension embedding strength: movement-intent dims taper off
    geometrically (a redundant, low-rank population code), nuisance
    (common-drive) dims sit near the top of the range."""
    intent = np.geomspace(1.5, 0.35, spec.n_latents)
    nuisance = np.full(spec.n_nuisance, spec.nuisance_gain)
    return np.concatenate([intent, nuisance])


def _draw_channel(spec: GeneratorSpec, rng: RngStream) -> tuple[np.ndarray, float]:
    gains = _dim_gains(spec)
    direction = rng.normal(0.0, 1.0, gains.size) * gains
    direction /= np.linalg.norm(direction)
    row = rng.uniform(1.0, 1.8) * direction
    return row, float(np.log(rng.uniform(10.0, 30.0)))


def _day0_embedding(spec: GeneratorSpec, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Channel embedding over intent plus nuisance latent dimensions."""
    rows = []
    log_baseline = np.empty(spec.n_channels)
    for c in range(spec.n_channels):
        row, base = _draw_channel(spec, rng)
        rows.append(row)
        log_baseline[c] = base
    return np.stack(rows), log_baseline


def _fresh_channel(spec: GeneratorSpec, rng: RngStream) -> tuple[np.ndarray, float]:
    return _draw_channel(spec, rng)


def _plane_rotation(l: int, angle: float, rng: RngStream) -> np.ndarray:
    """Rotation by ``angle`` in a random 2-plane of R^l."""
    u = rng.normal(0.0, 1.0, l)
    u /= np.linalg.norm(u)
    v = rng.normal(0.0, 1.0, l)
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    R = np.eye(l)
    R += np.sin(angle) * (np.outer(v, u) - np.outer(u, v))
    R += (np.cos(angle) - 1.0) * (np.outer(u, u) + np.outer(v, v))
    return R


def _drifted_embedding(
    spec: GeneratorSpec, drift: DriftSpec, C0: np.ndarray, b0: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    if drift.dropout >= 1.0:
        raise DegenerateSessionError("dropout of 1.0 leaves no usable channels")
    C = C0.copy()
    b = b0.copy()
    if drift.is_identity():
        return C, b
    rng = RngStream(spec.seed).child(_KEY_DRIFT).child(drift.day)
    n = spec.n_channels
    if drift.rotation > 0:
        C = C @ _plane_rotation(C.shape[1], drift.rotation, rng)
    if drift.gain_std > 0:
        gains = np.maximum(1.0 + rng.normal(0.0, drift.gain_std, n), 0.1)
        C *= gains[:, None]
    if drift.baseline_std > 0:
        b = b + rng.normal(0.0, drift.baseline_std, n)
    if drift.turnover > 0:
        n_new = int(round(drift.turnover * n))
        new_rows = rng.choice(n, size=n_new, replace=False)
        for c in np.sort(new_rows):
            C[c], b[c] = _fresh_channel(spec, rng)
    if drift.dropout > 0:
        n_drop = int(round(drift.dropout * n))
        dropped = rng.choice(n, size=n_drop, replace=False)
        C[dropped] = 0.0
        b[dropped] = np.log(spec.rate_floor)
    return C, b


def _target_trajectories(spec: GeneratorSpec, rng: RngStream) -> np.ndarray:
    """Smooth per-target latent means on the fine grid, unit std per dim.

    Returns (n_targets, fine_per_trial, l).
    """
    fine = int(round(spec.trial_len / spec.spike_dt))
    s = (np.arange(fine) + 0.5) / fine
    basis = np.stack(
        [np.cos(np.pi * h * s) for h in range(1, spec.n_basis + 1)]
        + [np.sin(np.pi * h * s) for h in range(1, spec.n_basis + 1)],
        axis=1,
    )  # (fine, 2*n_basis)
    weights = rng.normal(0.0, 1.0, (spec.n_targets, 2 * spec.n_basis, spec.n_latents))
    scale = 1.0 / np.sqrt(np.arange(1, spec.n_basis + 1))
    weights *= np.concatenate([scale, scale])[None, :, None]
    traj = np.einsum("fb,gbl->gfl", basis, weights)
    std = traj.std(axis=(0, 1))
    traj /= np.maximum(std, 1e-12)[None, None, :]
    return traj


def _smooth_trial_signal(
    rng: RngStream, fine: int, n_dims: int, std: float, spike_dt: float, bin_width: float,
    kernel_sigma: float = 1.5,
) -> np.ndarray:
    """Smooth random signal on the fine grid, (fine, n_dims), given std."""
    if std == 0.0 or n_dims == 0:
        return np.zeros((fine, n_dims))
    n_bins = max(int(round(fine * spike_dt / bin_width)), 2)
    coarse = rng.normal(0.0, 1.0, (n_bins, n_dims))
    kernel = gaussian_kernel(kernel_sigma)
    half = (kernel.size - 1) // 2
    padded = np.pad(coarse, ((half, half), (0, 0)), mode="wrap")
    smooth = np.empty_like(coarse)
    for j in range(n_dims):
        smooth[:, j] = np.convolve(padded[:, j], kernel, mode="valid")
    smooth *= std / max(smooth.std(), 1e-12)
    x_coarse = (np.arange(n_bins) + 0.5) * (fine / n_bins)
    x_fine = np.arange(fine) + 0.5
    out = np.empty((fine, n_dims))
    for j in range(n_dims):
        out[:, j] = np.interp(x_fine, x_coarse, smooth[:, j])
    return out


def _trial_noise(spec: GeneratorSpec, rng: RngStream, fine: int) -> np.ndarray:
    """Smooth within-trial intent-latent noise, std ~ latent_noise."""
    return _smooth_trial_signal(
        rng, fine, spec.n_latents, spec.latent_noise, spec.spike_dt, spec.bin_width
    )


def _trial_nuisance(spec: GeneratorSpec, rng: RngStream, fine: int) -> np.ndarray:
    """Common-drive latents: unit-std smooth fluctuations, not target locked,
    carrying no movement information."""
    return _smooth_trial_signal(
        rng, fine, spec.n_nuisance, 1.0, spec.spike_dt, spec.bin_width, kernel_sigma=2.5
    )


def _emg_readout(spec: GeneratorSpec, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Causal FIR taps (taps, m, l) and per-muscle offsets.

    Tap weights lean toward the strongly embedded intent dimensions, so
    muscle drive reflects the same low-rank structure the rates carry.
    """
    taps = rng.normal(0.0, 1.0, (spec.emg_taps, spec.n_muscles, spec.n_latents))
    lean = np.sqrt(np.geomspace(1.5, 0.35, spec.n_latents))
    taps *= lean[None, None, :] / np.sqrt(np.mean(lean**2))
    taps *= 0.5 / np.sqrt(spec.n_latents * spec.emg_taps)
    offsets = rng.uniform(0.6, 1.2, spec.n_muscles)
    return taps, offsets


def emg_from_latents(spec: GeneratorSpec, latents: np.ndarray) -> np.ndarray:
    """Regenerate the session's EMG signal from bin-grid latents.

    Deterministic given the spec seed: the readout map and the additive
    noise come from fixed child streams, so the result is bit-identical
    to the EMG produced during session generation.
    """
    latents = np.asarray(latents, dtype=np.float64)
    taps, offsets = _emg_readout(spec, RngStream(spec.seed).child(_KEY_EMGMAP))
    T = latents.shape[0]
    drive = np.tile(offsets, (T, 1))
    for d in range(spec.emg_taps):
        z_shift = latents[: T - d] if d else latents
        drive[d:] += z_shift @ taps[d].T
    bins_per_trial = spec.bins_per_trial
    noise = np.empty((T, spec.n_muscles))
    base = RngStream(spec.seed).child(_KEY_TRIAL)
    for trial in range(spec.n_trials):
        lo = trial * bins_per_trial
        if lo >= T:
            break
        hi = min(lo + bins_per_trial, T)
        trial_rng = base.child(trial).child(1)
        noise[lo:hi] = trial_rng.normal(0.0, 1.0, (hi - lo, spec.n_muscles))
    return np.maximum(drive + spec.emg_noise * noise, 0.0)


# ---------------------------------------------------------------------------
# session generation


def _generate(spec: GeneratorSpec, drift: DriftSpec) -> SynthDay:
    root = RngStream(spec.seed)
    C0, b0 = _day0_embedding(spec, root.child(_KEY_EMBED))
    C, b = _drifted_embedding(spec, drift, C0, b0)
    traj = _target_trajectories(spec, root.child(_KEY_TRAJ))

    fine = int(round(spec.trial_len / spec.spike_dt))
    per_bin = int(round(spec.bin_width / spec.spike_dt))
    bins_per_trial = spec.bins_per_trial
    T = spec.n_trials * bins_per_trial

    spike_times: list[list[np.ndarray]] = [[] for _ in range(spec.n_channels)]
    latents = np.empty((T, spec.n_latents))
    markers: list[tuple[float, int]] = []
    trial_base = root.child(_KEY_TRIAL)

    for trial in range(spec.n_trials):
        target = trial % spec.n_targets
        start = trial * spec.trial_len
        markers.append((start, target))
        trial_rng = trial_base.child(trial)
        z_fine = traj[target] + _trial_noise(spec, trial_rng.child(0), fine)
        centers = (np.arange(bins_per_trial) * per_bin) + per_bin // 2
        latents[trial * bins_per_trial : (trial + 1) * bins_per_trial] = z_fine[centers]

        nuisance = _trial_nuisance(spec, trial_rng.child(4), fine)
        z_full = np.concatenate([z_fine, nuisance], axis=1)
        rates = np.exp(z_full @ C.T + b)
        np.clip(rates, spec.rate_floor, spec.rate_ceil, out=rates)
        counts = trial_rng.child(2).poisson(rates * spec.spike_dt)
        jitter_rng = trial_rng.child(3)
        for c in range(spec.n_channels):
            idx = np.nonzero(counts[:, c])[0]
            if idx.size == 0:
                continue
            reps = counts[idx, c]
            sample_idx = np.repeat(idx, reps)
            jitter = jitter_rng.uniform(0.0, 1.0, sample_idx.size)
            times = start + (sample_idx + jitter) * spec.spike_dt
            spike_times[c].append(np.sort(times))

    emg = emg_from_latents(spec, latents)
    session = SpikeSession(
        n_channels=spec.n_channels,
        spike_times=[
            np.concatenate(parts) if parts else np.zeros(0) for parts in spike_times
        ],
        emg=emg,
        duration=spec.duration,
        bin_width=spec.bin_width,
        emg_dt=spec.bin_width,
        trial_markers=markers,
    )
    truth = SynthTruth(day=drift.day, latents=latents, embedding=C, log_baseline=b)
    return SynthDay(session=session, truth=truth)


def generate_day0(spec: GeneratorSpec) -> SynthDay:
    """Reference session: zero drift by definition."""
    return _generate(spec, DriftSpec(day=0))


def apply_drift(spec: GeneratorSpec, drift: DriftSpec) -> SynthDay:
    """Session for a later day: same behavior, perturbed embedding.

    Latent trajectories, trial noise, and EMG are bit-identical to
    day-0; only the latent-to-rate map (and therefore spiking) changes.
    """
    return _generate(spec, drift)
