"""Spike binning, rate smoothing, and EMG envelope extraction.

Converts raw recordings (spike event times plus a raw muscle signal)
into the fixed-rate series the decoding interface consumes: smoothed
firing rates in spikes/second and nonnegative EMG envelopes, both on a
common bin grid (50 ms by default).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ntsr
from .errors import ShapeError

DEFAULT_BIN_WIDTH = 0.050
DEFAULT_SMOOTH_SIGMA = 0.125
N_TARGETS = 8


@dataclass
class SpikeSession:
    """One recording day: per-channel spike times plus the raw EMG signal.

    ``emg`` is sampled every ``emg_dt`` seconds (bin rate or finer).
    Trial markers are (start time in seconds, target id 0-7) pairs.
    """

    n_channels: int
    spike_times: list[np.ndarray]
    emg: np.ndarray
    duration: float
    bin_width: float = DEFAULT_BIN_WIDTH
    emg_dt: float = DEFAULT_BIN_WIDTH
    trial_markers: list[tuple[float, int]] = field(default_factory=list)

    def __post_init__(self):
        if len(self.spike_times) != self.n_channels:
            raise ShapeError(
                f"expected {self.n_channels} spike channels, got {len(self.spike_times)}"
            )
        self.spike_times = [np.asarray(t, dtype=np.float64) for t in self.spike_times]
        for c, times in enumerate(self.spike_times):
            if times.size and (times.min() < 0 or times.max() >= self.duration):
                raise ShapeError(f"channel {c} has spike times outside [0, duration)")
        self.emg = np.asarray(self.emg, dtype=np.float64)
        if self.emg.ndim != 2:
            raise ShapeError("emg must be a (samples, muscles) array")
        for start, target in self.trial_markers:
            if not 0 <= int(target) < N_TARGETS:
                raise ShapeError(f"target id {target} outside 0..{N_TARGETS - 1}")
            if not 0 <= start < self.duration:
                raise ShapeError(f"trial start {start} outside [0, duration)")

    @property
    def n_muscles(self) -> int:
        return self.emg.shape[1]


@dataclass
class RateSeries:
    """Smoothed firing rates, time-major (T bins by n channels), spikes/s."""

    bin_width: float
    rates: np.ndarray

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=np.float64)
        if self.rates.ndim != 2:
            raise ShapeError("rates must be (T, n)")
        if self.rates.size and self.rates.min() < 0:
            raise ShapeError("rates must be nonnegative")

    @property
    def T(self) -> int:
        return self.rates.shape[0]

    @property
    def n_channels(self) -> int:
        return self.rates.shape[1]


@dataclass
class EmgSeries:
    """Nonnegative EMG envelopes, time-major (T bins by m muscles)."""

    bin_width: float
    envelopes: np.ndarray

    def __post_init__(self):
        self.envelopes = np.asarray(self.envelopes, dtype=np.float64)
        if self.envelopes.ndim != 2:
            raise ShapeError("envelopes must be (T, m)")
        if self.envelopes.size and self.envelopes.min() < 0:
            raise ShapeError("envelopes must be nonnegative")

    @property
    def T(self) -> int:
        return self.envelopes.shape[0]

    @property
    def n_muscles(self) -> int:
        return self.envelopes.shape[1]


# ---------------------------------------------------------------------------
# binning and smoothing


def bin_spikes(session: SpikeSession, bin_width: float | None = None) -> np.ndarray:
    """Count spikes per channel in half-open bins [t*w, (t+1)*w).

    The trailing partial bin is dropped so every channel shares the same
    length. Returns an integer (T, n) matrix.
    """
    w = session.bin_width if bin_width is None else float(bin_width)
    if w <= 0:
        raise ShapeError("bin_width must be positive")
    T = int(np.floor(session.duration / w + 1e-9))
    counts = np.zeros((T, session.n_channels), dtype=np.int64)
    for c, times in enumerate(session.spike_times):
        if times.size == 0:
            continue
        idx = np.floor(times / w).astype(np.int64)
        idx = idx[(idx >= 0) & (idx < T)]
        counts[:, c] = np.bincount(idx, minlength=T)
    return counts


def gaussian_kernel(sigma_bins: float) -> np.ndarray:
    """Discrete Gaussian kernel truncated at +/-4 sigma, unit sum.

    Half-width is ceil(4*sigma) bins; truncation is compensated by
    renormalizing so constants are preserved exactly.
    """
    if sigma_bins <= 0:
        raise ShapeError("sigma must be positive")
    half = int(np.ceil(4.0 * sigma_bins))
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (offsets / sigma_bins) ** 2)
    return kernel / kernel.sum()


def _smooth_columns(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    half = (kernel.size - 1) // 2
    if x.shape[0] < 2:
        return x * kernel.sum()
    pad = min(half, x.shape[0] - 1)
    padded = np.pad(x, ((pad, pad), (0, 0)), mode="reflect")
    if pad < half:
        extra = half - pad
        padded = np.pad(padded, ((extra, extra), (0, 0)), mode="edge")
    out = np.empty_like(x, dtype=np.float64)
    for c in range(x.shape[1]):
        out[:, c] = np.convolve(padded[:, c], kernel, mode="valid")
    return out


def smooth_rates(
    counts: np.ndarray,
    bin_width: float = DEFAULT_BIN_WIDTH,
    sigma: float = DEFAULT_SMOOTH_SIGMA,
) -> RateSeries:
    """Gaussian-smooth binned counts and scale to spikes/second.

    Each channel is convolved with the unit-sum kernel from
    :func:`gaussian_kernel` (sigma given in seconds, converted to bins)
    using reflective padding, then divided by the bin width.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2:
        raise ShapeError("counts must be (T, n)")
    kernel = gaussian_kernel(sigma / bin_width)
    smoothed = _smooth_columns(counts, kernel) / bin_width
    return RateSeries(bin_width=bin_width, rates=np.maximum(smoothed, 0.0))


def emg_envelope(
    raw: np.ndarray,
    bin_width: float = DEFAULT_BIN_WIDTH,
    raw_dt: float | None = None,
    sigma: float = DEFAULT_SMOOTH_SIGMA,
) -> EmgSeries:
    """Envelope of a raw muscle signal: rectify, smooth, downsample.

    Full-wave rectification followed by the same Gaussian smoothing used
    for firing rates (applied at the raw sampling rate), then decimated
    to the bin rate by sampling bin centers. A trailing partial bin is
    dropped.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2:
        raise ShapeError("raw emg must be (samples, muscles)")
    if not np.all(np.isfinite(raw)):
        raise ShapeError("raw emg contains non-finite values")
    dt = bin_width if raw_dt is None else float(raw_dt)
    stride = int(round(bin_width / dt))
    if stride < 1 or abs(stride * dt - bin_width) > 1e-9:
        raise ShapeError(f"bin_width {bin_width} is not a multiple of raw_dt {dt}")
    rectified = np.abs(raw)
    smoothed = _smooth_columns(rectified, gaussian_kernel(sigma / dt))
    T = raw.shape[0] // stride
    centered = smoothed[stride // 2 :: stride][:T]
    return EmgSeries(bin_width=bin_width, envelopes=np.maximum(centered, 0.0))


def preprocess(session: SpikeSession, sigma: float = DEFAULT_SMOOTH_SIGMA) -> tuple[RateSeries, EmgSeries]:
    """Session to paired (rates, envelopes) on the session's bin grid."""
    counts = bin_spikes(session)
    rates = smooth_rates(counts, session.bin_width, sigma)
    emg = emg_envelope(session.emg, session.bin_width, session.emg_dt, sigma)
    T = min(rates.T, emg.T)
    return (
        RateSeries(session.bin_width, rates.rates[:T]),
        EmgSeries(session.bin_width, emg.envelopes[:T]),
    )


# ---------------------------------------------------------------------------
# session directory format


def save_session(session: SpikeSession, directory) -> None:
    """Write a session directory: meta.json, spikes.csv, emg.ntsr."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "n_channels": session.n_channels,
        "n_muscles": session.n_muscles,
        "duration": session.duration,
        "bin_width": session.bin_width,
        "emg_dt": session.emg_dt,
        "trial_markers": [[float(t), int(g)] for t, g in session.trial_markers],
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    with (directory / "spikes.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "time"])
        for c, times in enumerate(session.spike_times):
            for t in times:
                writer.writerow([c, repr(float(t))])
    ntsr.write_ntsr(directory / "emg.ntsr", session.emg)


def load_session(directory) -> SpikeSession:
    """Read a session directory written by :func:`save_session`."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no session at {directory} (missing meta.json)")
    meta = json.loads(meta_path.read_text())
    spikes: list[list[float]] = [[] for _ in range(int(meta["n_channels"]))]
    with (directory / "spikes.csv").open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["channel", "time"]:
            raise ShapeError(f"{directory}/spikes.csv: unexpected header {header}")
        for row in reader:
            spikes[int(row[0])].append(float(row[1]))
    emg = ntsr.read_single(directory / "emg.ntsr")
    return SpikeSession(
        n_channels=int(meta["n_channels"]),
        spike_times=[np.asarray(s) for s in spikes],
        emg=emg,
        duration=float(meta["duration"]),
        bin_width=float(meta["bin_width"]),
        emg_dt=float(meta.get("emg_dt", meta["bin_width"])),
        trial_markers=[(float(t), int(g)) for t, g in meta["trial_markers"]],
    )
