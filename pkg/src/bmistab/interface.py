"""The fixed neural-to-EMG interface.

An autoencoder compresses smoothed firing rates into a low-dimensional
latent series, and a single-layer LSTM with a linear readout predicts
EMG envelopes from the latents. The two networks can be trained jointly
(one loss balancing reconstruction against prediction), sequentially
(autoencoder first, predictor on frozen latents), or skipped entirely
(LSTM directly on firing rates). After day-0 training the parameters are
frozen; day-k inputs reach the interface only through the alignment
modules.

Firing rates are standardized per channel with day-0 statistics baked
into the parameters, so the reconstruction loss lives in standardized
space; the loss-balancing factor absorbs the change of scale.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nets, ntsr
from .errors import ShapeError, TrainingDivergedError
from .numerics import AdamState, ParamDict, RngStream, adam_step, clip_grad_norm
from .signal import EmgSeries, RateSeries


@dataclass
class LatentSeries:
    """Latent trajectories, time-major (T bins by l dimensions)."""

    bin_width: float
    z: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 2:
            raise ShapeError("latents must be (T, l)")

    @property
    def T(self) -> int:
        return self.z.shape[0]

    @property
    def n_latents(self) -> int:
        return self.z.shape[1]


def series_array(x) -> np.ndarray:
    """Accept a series dataclass or a bare (T, d) array."""
    for attr in ("rates", "envelopes", "z"):
        if hasattr(x, attr):
            return getattr(x, attr)
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a (T, d) array, got shape {arr.shape}")
    return arr


@dataclass
class TrainConfig:
    """Hyperparameters for interface training."""

    epochs: int = 150
    batch_len: int = 200
    learning_rate: float = 1e-3
    lstm_lr_scale: float = 5.0
    grad_clip: float = 10.0
    lambda_init: float = 1.0
    seed: int = 0
    vae_weight: float = 0.0
    n_latents: int = 10
    hidden: tuple[int, int] = (64, 32)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_len < 2 or self.n_latents < 1:
            raise ShapeError("epochs, batch_len, n_latents must be positive")
        if self.learning_rate <= 0 or self.lambda_init <= 0:
            raise ShapeError("learning_rate and lambda_init must be positive")
        if self.vae_weight < 0 or self.lstm_lr_scale <= 0 or self.grad_clip <= 0:
            raise ShapeError("vae_weight, lstm_lr_scale, grad_clip must be positive")


@dataclass
class InterfaceParams:
    """All weights of the autoencoder and the EMG predictor.

    ``frozen`` marks day-0 training as finished; frozen parameters are
    backed by read-only arrays so later stages cannot modify them.
    """

    n_channels: int
    n_latents: int
    n_muscles: int
    hidden: tuple[int, int]
    weights: ParamDict
    rate_mean: np.ndarray
    rate_std: np.ndarray
    vae: bool = False
    seed: int = 0
    frozen: bool = False

    def freeze(self) -> "InterfaceParams":
        for arr in self.weights.values():
            arr.flags.writeable = False
        self.rate_mean.flags.writeable = False
        self.rate_std.flags.writeable = False
        self.frozen = True
        return self

    def trainable_copy(self) -> "InterfaceParams":
        return InterfaceParams(
            n_channels=self.n_channels,
            n_latents=self.n_latents,
            n_muscles=self.n_muscles,
            hidden=self.hidden,
            weights={k: v.copy() for k, v in self.weights.items()},
            rate_mean=self.rate_mean.copy(),
            rate_std=self.rate_std.copy(),
            vae=self.vae,
            seed=self.seed,
            frozen=False,
        )

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for key in sorted(self.weights):
            digest.update(key.encode())
            digest.update(np.ascontiguousarray(self.weights[key]).tobytes())
        digest.update(self.rate_mean.tobytes())
        digest.update(self.rate_std.tobytes())
        return digest.hexdigest()


# ---------------------------------------------------------------------------
# initialization


def init_params(n: int, m: int, cfg: TrainConfig) -> InterfaceParams:
    """Fresh untrained parameters (standardization stats start at 0/1)."""
    rng = RngStream(cfg.seed)
    l = cfg.n_latents
    h1, h2 = cfg.hidden
    weights: ParamDict = {}
    if cfg.vae_weight > 0:
        weights.update(nets.mlp_init(rng.child(0), [n, h1, h2], "enc"))
        weights.update(nets.mlp_init(rng.child(1), [h2, l], "encmu"))
        weights.update(nets.mlp_init(rng.child(2), [h2, l], "enclv"))
    else:
        weights.update(nets.mlp_init(rng.child(0), [n, h1, h2, l], "enc"))
    weights.update(nets.mlp_init(rng.child(3), [l, h2, h1, n], "dec"))
    weights.update(nets.lstm_init(rng.child(4), l, m, m, "lstm_"))
    return InterfaceParams(
        n_channels=n,
        n_latents=l,
        n_muscles=m,
        hidden=cfg.hidden,
        weights=weights,
        rate_mean=np.zeros(n),
        rate_std=np.ones(n),
        vae=cfg.vae_weight > 0,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# forward passes


STD_CLIP = 8.0  # bound on standardized rates; inert on day-0 data


def _standardize(p: InterfaceParams, x: np.ndarray) -> np.ndarray:
    if x.shape[1] != p.n_channels:
        raise ShapeError(f"expected {p.n_channels} channels, got {x.shape[1]}")
    return np.clip((x - p.rate_mean) / p.rate_std, -STD_CLIP, STD_CLIP)


def _encode_std(p: InterfaceParams, xs: np.ndarray) -> tuple[np.ndarray, dict]:
    if p.vae:
        trunk, trunk_cache = nets.mlp_forward(p.weights, "enc", xs)
        h = np.exp(np.minimum(trunk, nets.EXP_CLAMP))  # last trunk layer is hidden
        mu, mu_cache = nets.mlp_forward(p.weights, "encmu", h)
        lv, lv_cache = nets.mlp_forward(p.weights, "enclv", h)
        cache = {
            "trunk": trunk,
            "trunk_cache": trunk_cache,
            "h": h,
            "mu_cache": mu_cache,
            "lv_cache": lv_cache,
            "mu": mu,
            "lv": lv,
        }
        return mu, cache
    z, cache = nets.mlp_forward(p.weights, "enc", xs)
    return z, {"cache": cache}


def encode(p: InterfaceParams, x) -> LatentSeries:
    """Deterministic encoder pass (the mean head, for a variational AE)."""
    arr = series_array(x)
    xs = _standardize(p, arr)
    z, _ = _encode_std(p, xs)
    bin_width = getattr(x, "bin_width", 0.0)
    return LatentSeries(bin_width=bin_width, z=z)


def decode(p: InterfaceParams, z) -> RateSeries:
    """Reconstruct firing rates from latents, floored at zero."""
    arr = series_array(z)
    if arr.shape[1] != p.n_latents:
        raise ShapeError(f"expected {p.n_latents} latents, got {arr.shape[1]}")
    xs_hat, _ = nets.mlp_forward(p.weights, "dec", arr)
    x_hat = xs_hat * p.rate_std + p.rate_mean
    bin_width = getattr(z, "bin_width", 0.0)
    return RateSeries(bin_width=bin_width, rates=np.maximum(x_hat, 0.0))


def reconstruct(p: InterfaceParams, x) -> np.ndarray:
    """Autoencoder round trip in raw rate units, unclamped.

    Used for residual computations, where the signed error matters.
    """
    arr = series_array(x)
    xs = _standardize(p, arr)
    z, _ = _encode_std(p, xs)
    xs_hat, _ = nets.mlp_forward(p.weights, "dec", z)
    return xs_hat * p.rate_std + p.rate_mean


def predict_emg(p: InterfaceParams, z) -> EmgSeries:
    """Causal EMG prediction from latents; LSTM state starts at zero."""
    arr = series_array(z)
    y, _ = nets.lstm_forward(p.weights, "lstm_", arr)
    bin_width = getattr(z, "bin_width", 0.0)
    return EmgSeries(bin_width=bin_width, envelopes=np.maximum(y, 0.0))


def predict_emg_raw(p: InterfaceParams, z: np.ndarray) -> np.ndarray:
    """EMG prediction without the nonnegativity floor (loss-side view)."""
    y, _ = nets.lstm_forward(p.weights, "lstm_", series_array(z))
    return y


# ---------------------------------------------------------------------------
# losses


def vae_regularizer(mean, log_var) -> float:
    """Closed-form KL from a diagonal Gaussian to the standard normal.

    Averaged over rows when given a batch.
    """
    mean = np.atleast_2d(np.asarray(mean, dtype=np.float64))
    log_var = np.atleast_2d(np.asarray(log_var, dtype=np.float64))
    if mean.shape != log_var.shape:
        raise ShapeError("mean and log_var must have matching shapes")
    per_row = 0.5 * np.sum(mean**2 + np.exp(log_var) - 1.0 - log_var, axis=1)
    return float(per_row.mean())


def next_lambda(lam: float, lx: float, ly: float) -> float:
    """Loss-balance update at an iteration boundary.

    The factor weighting the reconstruction term becomes the ratio of
    the prediction loss to the reconstruction loss from the iteration
    that just ended; a degenerate zero reconstruction loss keeps the
    previous value.
    """
    if lx <= 0.0 or not np.isfinite(lx) or not np.isfinite(ly):
        return lam
    return ly / lx


def _forward_joint(
    p: InterfaceParams,
    x_raw: np.ndarray,
    y: np.ndarray,
    lam: float,
    vae_weight: float = 0.0,
    vae_noise: np.ndarray | None = None,
):
    """Forward pass of the joint loss; returns values and caches."""
    T = x_raw.shape[0]
    xs = _standardize(p, x_raw)
    z, enc_cache = _encode_std(p, xs)
    kl = 0.0
    eps = None
    if p.vae:
        mu, lv = enc_cache["mu"], enc_cache["lv"]
        eps = vae_noise if vae_noise is not None else np.zeros_like(mu)
        z = mu + np.exp(0.5 * lv) * eps
        kl = vae_regularizer(mu, lv)
    xs_hat, dec_cache = nets.mlp_forward(p.weights, "dec", z)
    y_hat, lstm_cache = nets.lstm_forward(p.weights, "lstm_", z)
    lx = float(np.sum((xs_hat - xs) ** 2) / T)
    ly = float(np.sum((y_hat - y) ** 2) / T)
    total = lam * lx + ly + vae_weight * kl
    caches = {
        "xs": xs,
        "z": z,
        "enc": enc_cache,
        "dec": dec_cache,
        "lstm": lstm_cache,
        "xs_hat": xs_hat,
        "y_hat": y_hat,
        "eps": eps,
        "kl": kl,
    }
    return total, lx, ly, caches


def _backward_encoder(p: InterfaceParams, enc_cache: dict, dz: np.ndarray,
                      dmu_extra: np.ndarray | None = None,
                      dlv_extra: np.ndarray | None = None,
                      eps: np.ndarray | None = None) -> ParamDict:
    if not p.vae:
        _, grads = nets.mlp_backward(p.weights, "enc", enc_cache["cache"], dz)
        return grads
    lv = enc_cache["lv"]
    dmu = dz.copy()
    dlv = dz * eps * 0.5 * np.exp(0.5 * lv)
    if dmu_extra is not None:
        dmu += dmu_extra
    if dlv_extra is not None:
        dlv += dlv_extra
    dh_mu, mu_grads = nets.mlp_backward(p.weights, "encmu", enc_cache["mu_cache"], dmu)
    dh_lv, lv_grads = nets.mlp_backward(p.weights, "enclv", enc_cache["lv_cache"], dlv)
    dh = dh_mu + dh_lv
    trunk = enc_cache["trunk"]
    dtrunk = dh * enc_cache["h"] * (trunk <= nets.EXP_CLAMP)
    _, trunk_grads = nets.mlp_backward(p.weights, "enc", enc_cache["trunk_cache"], dtrunk)
    return {**trunk_grads, **mu_grads, **lv_grads}


def joint_value_and_grads(
    p: InterfaceParams,
    x_raw: np.ndarray,
    y: np.ndarray,
    lam: float,
    vae_weight: float = 0.0,
    vae_noise: np.ndarray | None = None,
):
    """Joint loss and exact gradients for every trainable weight."""
    total, lx, ly, c = _forward_joint(p, x_raw, y, lam, vae_weight, vae_noise)
    T = x_raw.shape[0]
    dx_hat = (2.0 * lam / T) * (c["xs_hat"] - c["xs"])
    dy_hat = (2.0 / T) * (c["y_hat"] - y)
    dz_dec, dec_grads = nets.mlp_backward(p.weights, "dec", c["dec"], dx_hat)
    dz_lstm, lstm_grads = nets.lstm_backward(p.weights, "lstm_", c["lstm"], dy_hat)
    dz = dz_dec + dz_lstm
    dmu_extra = dlv_extra = None
    if p.vae:
        mu, lv = c["enc"]["mu"], c["enc"]["lv"]
        dmu_extra = vae_weight * mu / T
        dlv_extra = vae_weight * 0.5 * (np.exp(lv) - 1.0) / T
    enc_grads = _backward_encoder(p, c["enc"], dz, dmu_extra, dlv_extra, c["eps"])
    grads = {**enc_grads, **dec_grads, **lstm_grads}
    return total, lx, ly, grads


def joint_loss(p: InterfaceParams, x, y, lam: float = 1.0) -> tuple[float, float, float, float]:
    """Balanced training loss: lam * reconstruction + prediction.

    Both terms are per-sample mean squared errors (summed over channels
    or muscles). Returns (total, reconstruction, prediction, lam).
    """
    x_arr = series_array(x)
    y_arr = series_array(y)
    if x_arr.shape[0] != y_arr.shape[0]:
        raise ShapeError("rates and EMG must cover the same bins")
    total, lx, ly, _ = _forward_joint(p, x_arr, y_arr, lam)
    return total, lx, ly, lam


# ---------------------------------------------------------------------------
# training


def _cosine_lr(base: float, step: int, total: int) -> float:
    # decay to ~0 over the run; smooths the endpoint and reduces seed noise
    if total <= 1:
        return base
    return base * 0.5 * (1.0 + np.cos(np.pi * min(step, total) / total))


def _chunks(T: int, batch_len: int) -> list[slice]:
    if T <= batch_len:
        return [slice(0, T)]
    starts = list(range(0, T - batch_len + 1, batch_len))
    slices = [slice(s, s + batch_len) for s in starts]
    tail = starts[-1] + batch_len
    if T - tail >= 20:
        slices.append(slice(tail, T))
    return slices


def _fit_rate_stats(p: InterfaceParams, x: np.ndarray) -> None:
    p.rate_mean = x.mean(axis=0)
    p.rate_std = np.maximum(x.std(axis=0), 1e-3)


def _run_epochs(
    step_fn,
    chunk_slices: list[slice],
    epochs: int,
    rng: RngStream,
    history: dict,
    keys: tuple[str, ...],
) -> None:
    """Shared epoch loop: shuffled chunks, per-epoch means, NaN guard."""
    for epoch in range(epochs):
        order = rng.permutation(len(chunk_slices))
        sums = np.zeros(len(keys))
        for idx in order:
            values = step_fn(chunk_slices[idx])
            if not np.all(np.isfinite(values)):
                raise TrainingDivergedError(epoch)
            sums += values
        means = sums / len(chunk_slices)
        for key, value in zip(keys, means):
            history.setdefault(f"epoch_{key}", []).append(float(value))


def train_joint(x, y, cfg: TrainConfig) -> tuple[InterfaceParams, dict]:
    """Train autoencoder and predictor simultaneously on day-0 data.

    Returns frozen parameters plus a training history with per-iteration
    loss terms and the balance-factor trajectory.
    """
    x_arr = series_array(x)
    y_arr = series_array(y)
    if x_arr.shape[0] != y_arr.shape[0]:
        raise ShapeError("rates and EMG must cover the same bins")
    p = init_params(x_arr.shape[1], y_arr.shape[1], cfg)
    _fit_rate_stats(p, x_arr)
    p.weights["lstm_bout"] = y_arr.mean(axis=0)  # start at the target mean
    ae_params = {k: v for k, v in p.weights.items() if not k.startswith("lstm_")}
    lstm_params = {k: v for k, v in p.weights.items() if k.startswith("lstm_")}
    ae_state = AdamState.for_params(ae_params)
    lstm_state = AdamState.for_params(lstm_params)
    rng = RngStream(cfg.seed).child(100)
    noise_rng = RngStream(cfg.seed).child(101)
    slices = _chunks(x_arr.shape[0], cfg.batch_len)
    total_steps = cfg.epochs * len(slices)
    history: dict = {"lx": [], "ly": [], "lam": [], "total": []}
    lam = cfg.lambda_init

    def step(sl: slice):
        nonlocal lam
        vae_noise = None
        if p.vae:
            vae_noise = noise_rng.normal(0.0, 1.0, (sl.stop - sl.start, p.n_latents))
        total, lx, ly, grads = joint_value_and_grads(
            p, x_arr[sl], y_arr[sl], lam, cfg.vae_weight, vae_noise
        )
        ae_grads = {k: grads[k] for k in ae_params}
        lstm_grads = {k: grads[k] for k in lstm_params}
        clip_grad_norm(ae_grads, cfg.grad_clip)
        clip_grad_norm(lstm_grads, cfg.grad_clip)
        lr = _cosine_lr(cfg.learning_rate, ae_state.t, total_steps)
        adam_step(ae_params, ae_grads, ae_state, lr=lr)
        adam_step(lstm_params, lstm_grads, lstm_state, lr=lr * cfg.lstm_lr_scale)
        history["lx"].append(lx)
        history["ly"].append(ly)
        history["lam"].append(lam)
        history["total"].append(total)
        lam = next_lambda(lam, lx, ly)
        return np.array([total, lx, ly])

    _run_epochs(step, slices, cfg.epochs, rng, history, ("total", "lx", "ly"))
    return p.freeze(), history


def fit_autoencoder(x, cfg: TrainConfig) -> tuple[InterfaceParams, dict]:
    """Unsupervised stage of sequential training: reconstruction only.

    Takes firing rates and nothing else; EMG never enters this stage.
    """
    x_arr = series_array(x)
    p = init_params(x_arr.shape[1], 1, cfg)
    for key in [k for k in p.weights if k.startswith("lstm_")]:
        del p.weights[key]
    _fit_rate_stats(p, x_arr)
    state = AdamState.for_params(p.weights)
    rng = RngStream(cfg.seed).child(100)
    noise_rng = RngStream(cfg.seed).child(101)
    slices = _chunks(x_arr.shape[0], cfg.batch_len)
    total_steps = cfg.epochs * len(slices)
    history: dict = {"lx": []}

    def step(sl: slice):
        xs = _standardize(p, x_arr[sl])
        T = xs.shape[0]
        z, enc_cache = _encode_std(p, xs)
        eps = None
        kl = 0.0
        if p.vae:
            mu, lv = enc_cache["mu"], enc_cache["lv"]
            eps = noise_rng.normal(0.0, 1.0, mu.shape)
            z = mu + np.exp(0.5 * lv) * eps
            kl = vae_regularizer(mu, lv)
        xs_hat, dec_cache = nets.mlp_forward(p.weights, "dec", z)
        lx = float(np.sum((xs_hat - xs) ** 2) / T)
        dz, dec_grads = nets.mlp_backward(
            p.weights, "dec", dec_cache, (2.0 / T) * (xs_hat - xs)
        )
        dmu_extra = dlv_extra = None
        if p.vae:
            mu, lv = enc_cache["mu"], enc_cache["lv"]
            dmu_extra = cfg.vae_weight * mu / T
            dlv_extra = cfg.vae_weight * 0.5 * (np.exp(lv) - 1.0) / T
        enc_grads = _backward_encoder(p, enc_cache, dz, dmu_extra, dlv_extra, eps)
        grads = {**enc_grads, **dec_grads}
        clip_grad_norm(grads, cfg.grad_clip)
        adam_step(p.weights, grads, state,
                  lr=_cosine_lr(cfg.learning_rate, state.t, total_steps))
        history["lx"].append(lx)
        return np.array([lx + cfg.vae_weight * kl])

    _run_epochs(step, slices, cfg.epochs, rng, history, ("lx",))
    return p, history


def fit_predictor(
    p: InterfaceParams, z_arr: np.ndarray, y_arr: np.ndarray, cfg: TrainConfig
) -> dict:
    """Supervised stage: LSTM + readout on fixed latents."""
    rng = RngStream(cfg.seed).child(102)
    p.weights.update(nets.lstm_init(rng, z_arr.shape[1], y_arr.shape[1], y_arr.shape[1], "lstm_"))
    p.weights["lstm_bout"] = y_arr.mean(axis=0)
    lstm_params = {k: v for k, v in p.weights.items() if k.startswith("lstm_")}
    state = AdamState.for_params(lstm_params)
    slices = _chunks(z_arr.shape[0], cfg.batch_len)
    total_steps = cfg.epochs * len(slices)
    history: dict = {"ly": []}

    def step(sl: slice):
        T = sl.stop - sl.start
        y_hat, cache = nets.lstm_forward(p.weights, "lstm_", z_arr[sl])
        ly = float(np.sum((y_hat - y_arr[sl]) ** 2) / T)
        _, grads = nets.lstm_backward(p.weights, "lstm_", cache, (2.0 / T) * (y_hat - y_arr[sl]))
        clip_grad_norm(grads, cfg.grad_clip)
        adam_step(lstm_params, grads, state,
                  lr=_cosine_lr(cfg.learning_rate * cfg.lstm_lr_scale, state.t, total_steps))
        history["ly"].append(ly)
        return np.array([ly])

    _run_epochs(step, slices, cfg.epochs, rng.child(0), history, ("ly",))
    return history


def train_sequential(x, y, cfg: TrainConfig) -> tuple[InterfaceParams, dict]:
    """Autoencoder first (unsupervised), then the predictor on latents."""
    x_arr = series_array(x)
    y_arr = series_array(y)
    if x_arr.shape[0] != y_arr.shape[0]:
        raise ShapeError("rates and EMG must cover the same bins")
    p, ae_history = fit_autoencoder(x_arr, cfg)
    p.n_muscles = y_arr.shape[1]
    z, _ = _encode_std(p, _standardize(p, x_arr))
    pred_history = fit_predictor(p, z, y_arr, cfg)
    history = {**{f"ae_{k}": v for k, v in ae_history.items()}, **pred_history}
    return p.freeze(), history


@dataclass
class PredictorParams:
    """Direct predictor: LSTM on standardized firing rates, no autoencoder."""

    n_channels: int
    n_muscles: int
    weights: ParamDict
    rate_mean: np.ndarray
    rate_std: np.ndarray
    seed: int = 0
    frozen: bool = False

    def freeze(self) -> "PredictorParams":
        for arr in self.weights.values():
            arr.flags.writeable = False
        self.rate_mean.flags.writeable = False
        self.rate_std.flags.writeable = False
        self.frozen = True
        return self

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for key in sorted(self.weights):
            digest.update(key.encode())
            digest.update(np.ascontiguousarray(self.weights[key]).tobytes())
        digest.update(self.rate_mean.tobytes())
        digest.update(self.rate_std.tobytes())
        return digest.hexdigest()


def train_direct(x, y, cfg: TrainConfig) -> tuple[PredictorParams, dict]:
    """Baseline without dimensionality reduction: LSTM with n cells on rates."""
    x_arr = series_array(x)
    y_arr = series_array(y)
    n, m = x_arr.shape[1], y_arr.shape[1]
    rng = RngStream(cfg.seed)
    p = PredictorParams(
        n_channels=n,
        n_muscles=m,
        weights=nets.lstm_init(rng.child(5), n, n, m, "lstm_"),
        rate_mean=x_arr.mean(axis=0),
        rate_std=np.maximum(x_arr.std(axis=0), 1e-3),
        seed=cfg.seed,
    )
    p.weights["lstm_bout"] = y_arr.mean(axis=0)
    state = AdamState.for_params(p.weights)
    xs = (x_arr - p.rate_mean) / p.rate_std
    slices = _chunks(x_arr.shape[0], cfg.batch_len)
    total_steps = cfg.epochs * len(slices)
    history: dict = {"ly": []}

    def step(sl: slice):
        T = sl.stop - sl.start
        y_hat, cache = nets.lstm_forward(p.weights, "lstm_", xs[sl])
        ly = float(np.sum((y_hat - y_arr[sl]) ** 2) / T)
        _, grads = nets.lstm_backward(p.weights, "lstm_", cache, (2.0 / T) * (y_hat - y_arr[sl]))
        clip_grad_norm(grads, cfg.grad_clip)
        adam_step(p.weights, grads, state,
                  lr=_cosine_lr(cfg.learning_rate * cfg.lstm_lr_scale, state.t, total_steps))
        history["ly"].append(ly)
        return np.array([ly])

    _run_epochs(step, slices, cfg.epochs, rng.child(103), history, ("ly",))
    return p.freeze(), history


def predict_direct(p: PredictorParams, x) -> EmgSeries:
    arr = series_array(x)
    xs = (arr - p.rate_mean) / p.rate_std
    y, _ = nets.lstm_forward(p.weights, "lstm_", xs)
    bin_width = getattr(x, "bin_width", 0.0)
    return EmgSeries(bin_width=bin_width, envelopes=np.maximum(y, 0.0))


# ---------------------------------------------------------------------------
# diagnostics


def latent_normality_score(z) -> float:
    """Jarque-Bera-style non-normality score, averaged over dimensions.

    Zero for perfectly Gaussian marginals; larger means heavier
    skew/kurtosis. Used to report how Gaussian the latent distribution
    looks, e.g. when comparing a plain and a variational autoencoder.
    """
    arr = series_array(z)
    centered = arr - arr.mean(axis=0)
    std = np.maximum(centered.std(axis=0), 1e-12)
    s = (centered**3).mean(axis=0) / std**3
    k = (centered**4).mean(axis=0) / std**4 - 3.0
    return float(np.mean(s**2 + 0.25 * k**2))


# ---------------------------------------------------------------------------
# sklearn-style estimators


class NeuralEmgInterface(BaseEstimator):
    """Autoencoder + LSTM EMG decoder as a fit/predict estimator.

    ``mode`` selects joint or sequential training of the autoencoder and
    the predictor. After ``fit`` the parameters are frozen.
    """

    def __init__(
        self,
        n_latents: int = 10,
        hidden: tuple[int, int] = (64, 32),
        mode: str = "joint",
        epochs: int = 150,
        batch_len: int = 200,
        learning_rate: float = 1e-3,
        lstm_lr_scale: float = 5.0,
        lambda_init: float = 1.0,
        vae_weight: float = 0.0,
        seed: int = 0,
    ):
        self.n_latents = n_latents
        self.hidden = hidden
        self.mode = mode
        self.epochs = epochs
        self.batch_len = batch_len
        self.learning_rate = learning_rate
        self.lstm_lr_scale = lstm_lr_scale
        self.lambda_init = lambda_init
        self.vae_weight = vae_weight
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_len=self.batch_len,
            learning_rate=self.learning_rate,
            lstm_lr_scale=self.lstm_lr_scale,
            lambda_init=self.lambda_init,
            seed=self.seed,
            vae_weight=self.vae_weight,
            n_latents=self.n_latents,
            hidden=tuple(self.hidden),
        )

    def fit(self, X, y) -> "NeuralEmgInterface":
        cfg = self._config()
        if self.mode == "joint":
            self.params_, self.history_ = train_joint(X, y, cfg)
        elif self.mode == "sequential":
            self.params_, self.history_ = train_sequential(X, y, cfg)
        else:
            raise ShapeError(f"unknown mode '{self.mode}'")
        return self

    def _check_fitted(self) -> InterfaceParams:
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before using the interface")
        return self.params_

    def encode(self, X) -> LatentSeries:
        return encode(self._check_fitted(), X)

    def transform(self, X) -> np.ndarray:
        return self.encode(X).z

    def decode(self, Z) -> RateSeries:
        return decode(self._check_fitted(), Z)

    def reconstruct(self, X) -> np.ndarray:
        return reconstruct(self._check_fitted(), X)

    def predict(self, X) -> np.ndarray:
        p = self._check_fitted()
        return predict_emg(p, encode(p, X)).envelopes

    def predict_from_latents(self, Z) -> np.ndarray:
        return predict_emg(self._check_fitted(), Z).envelopes

    def score(self, X, y) -> float:
        """Mean percent variance accounted for across muscles."""
        from .bench import vaf

        report = vaf(series_array(y), self.predict(X))
        return report.mean_vaf


class DirectEmgPredictor(BaseEstimator):
    """LSTM decoder straight from firing rates (no latent bottleneck)."""

    def __init__(
        self,
        epochs: int = 150,
        batch_len: int = 200,
        learning_rate: float = 1e-3,
        lstm_lr_scale: float = 5.0,
        seed: int = 0,
    ):
        self.epochs = epochs
        self.batch_len = batch_len
        self.learning_rate = learning_rate
        self.lstm_lr_scale = lstm_lr_scale
        self.seed = seed

    def fit(self, X, y) -> "DirectEmgPredictor":
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_len=self.batch_len,
            learning_rate=self.learning_rate,
            lstm_lr_scale=self.lstm_lr_scale,
            seed=self.seed,
        )
        self.params_, self.history_ = train_direct(X, y, cfg)
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise NotFittedError("call fit before predict")
        return predict_direct(self.params_, X).envelopes

    def score(self, X, y) -> float:
        from .bench import vaf

        return vaf(series_array(y), self.predict(X)).mean_vaf


# ---------------------------------------------------------------------------
# serialization


def save_interface(p: InterfaceParams, directory, extra: dict | None = None) -> None:
    """Write an interface bundle: interface.ntsr + JSON manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = sorted(p.weights) + ["rate_mean", "rate_std"]
    tensors = [p.weights[k] for k in sorted(p.weights)] + [p.rate_mean, p.rate_std]
    ntsr.write_ntsr(directory / "interface.ntsr", tensors)
    manifest = {
        "kind": "interface",
        "tensors": names,
        "shapes": {k: list(np.shape(t)) for k, t in zip(names, tensors)},
        "n_channels": p.n_channels,
        "n_latents": p.n_latents,
        "n_muscles": p.n_muscles,
        "hidden": list(p.hidden),
        "vae": p.vae,
        "seed": p.seed,
        "frozen": p.frozen,
        "checksum": p.checksum(),
    }
    if extra:
        manifest.update(extra)
    (directory / "interface.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_interface(directory) -> InterfaceParams:
    directory = Path(directory)
    manifest_path = directory / "interface.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no interface at {directory} (missing interface.json)")
    manifest = json.loads(manifest_path.read_text())
    tensors = ntsr.read_ntsr(directory / "interface.ntsr")
    names = manifest["tensors"]
    if len(tensors) != len(names):
        raise ShapeError("interface bundle does not match its manifest")
    by_name = dict(zip(names, tensors))
    weights = {k: v for k, v in by_name.items() if k not in ("rate_mean", "rate_std")}
    p = InterfaceParams(
        n_channels=int(manifest["n_channels"]),
        n_latents=int(manifest["n_latents"]),
        n_muscles=int(manifest["n_muscles"]),
        hidden=tuple(manifest["hidden"]),
        weights=weights,
        rate_mean=by_name["rate_mean"],
        rate_std=by_name["rate_std"],
        vae=bool(manifest["vae"]),
        seed=int(manifest["seed"]),
    )
    if manifest.get("frozen"):
        p.freeze()
    if p.checksum() != manifest["checksum"]:
        raise ShapeError("interface bundle checksum mismatch")
    return p
