"""Unsupervised rate-space alignment via adversarial residual matching.

A discriminator autoencoder (initialized from the frozen day-0
interface) reconstructs firing rates; the per-sample L1 norm of its
residuals summarizes how familiar a sample looks. The gap between the
mean day-0 and day-k residual norms lower-bounds the Wasserstein
distance between the residual distributions. Training alternates: the
discriminator widens the gap (reconstruct day-0 better, aligned day-k
worse) while an identity-initialized aligner narrows it by making
aligned day-k rates reconstructable, which pulls them onto the day-0
manifold.

The aligner is two n-by-n maps around exponential hidden units, applied
in a log1p/shift sandwich so that identity weights give exactly the
identity map on nonnegative rates.

A per-dimension translate-and-scale baseline in latent space and the
training-data-efficiency sweep live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nets
from .errors import ShapeError, TrainingDivergedError
from .interface import (
    InterfaceParams,
    LatentSeries,
    _encode_std,
    _standardize,
    encode,
    predict_emg,
    series_array,
)
from .numerics import ParamDict, RngStream, clip_grad_norm
from .signal import RateSeries


# ---------------------------------------------------------------------------
# aligner network


def aligner_init(n_channels: int) -> ParamDict:
    """Identity-initialized aligner: identity weights, zero biases."""
    return {
        "al0_W": np.eye(n_channels),
        "al0_b": np.zeros(n_channels),
        "al1_W": np.eye(n_channels),
        "al1_b": np.zeros(n_channels),
    }


def aligner_forward(params: ParamDict, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """exp(log1p(x) W1 + b1) W2 + b2 - 1; exactly x at identity weights."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != params["al0_W"].shape[0]:
        raise ShapeError(
            f"aligner expects {params['al0_W'].shape[0]} channels, got {x.shape[1]}"
        )
    u = np.log1p(np.maximum(x, 0.0))
    p = u @ params["al0_W"] + params["al0_b"]
    h = np.exp(np.minimum(p, nets.EXP_CLAMP))
    out = h @ params["al1_W"] + params["al1_b"] - 1.0
    return out, {"x": x, "u": u, "p": p, "h": h}


def aligner_backward(
    params: ParamDict, cache: dict, dout: np.ndarray
) -> tuple[np.ndarray, ParamDict]:
    dh = dout @ params["al1_W"].T
    dp = dh * cache["h"] * (cache["p"] <= nets.EXP_CLAMP)
    grads = {
        "al1_W": cache["h"].T @ dout,
        "al1_b": dout.sum(axis=0),
        "al0_W": cache["u"].T @ dp,
        "al0_b": dp.sum(axis=0),
    }
    dx = (dp @ params["al0_W"].T) / (1.0 + np.maximum(cache["x"], 0.0))
    return dx, grads


def adan_apply(aligner: ParamDict, xk) -> RateSeries:
    """Aligned day-k rates, ready to feed the frozen interface."""
    arr = series_array(xk)
    out, _ = aligner_forward(aligner, arr)
    return RateSeries(
        bin_width=getattr(xk, "bin_width", 0.0), rates=np.maximum(out, 0.0)
    )


# ---------------------------------------------------------------------------
# residual statistics


@dataclass
class ResidualStats:
    """Per-sample L1 reconstruction-error norms and their mean."""

    r: np.ndarray
    mu: float


def residual_vectors(p: InterfaceParams, x) -> np.ndarray:
    """Signed reconstruction residuals (x - x_hat) in rate units."""
    arr = series_array(x)
    xs = _standardize(p, arr)
    z, _ = _encode_std(p, xs)
    xs_hat, _ = nets.mlp_forward(p.weights, "dec", z)
    return arr - (xs_hat * p.rate_std + p.rate_mean)


def residual_l1(p: InterfaceParams, x) -> ResidualStats:
    """L1 norm of each sample's reconstruction residual under ``p``."""
    res = residual_vectors(p, x)
    r = np.abs(res).sum(axis=1)
    return ResidualStats(r=r, mu=float(r.mean()))


def wasserstein_lb(s0: ResidualStats, sk: ResidualStats) -> float:
    """|mu_0 - mu_k|: a lower bound on the 1-D Wasserstein-1 distance."""
    return abs(s0.mu - sk.mu)


def _mu_and_grads(
    disc: InterfaceParams, x: np.ndarray, want_input_grad: bool = False
) -> tuple[float, ParamDict, np.ndarray | None]:
    """Mean residual L1 norm with gradients w.r.t. the discriminator
    weights and, optionally, the input."""
    B = x.shape[0]
    xs = _standardize(disc, x)
    z, enc_cache = _encode_std(disc, xs)
    xs_hat, dec_cache = nets.mlp_forward(disc.weights, "dec", z)
    x_hat = xs_hat * disc.rate_std + disc.rate_mean
    residual = x - x_hat
    mu = float(np.abs(residual).sum(axis=1).mean())
    s = np.sign(residual) / B
    dxs_hat = -s * disc.rate_std
    dz, dec_grads = nets.mlp_backward(disc.weights, "dec", dec_cache, dxs_hat)
    from .interface import _backward_encoder

    enc_grads = _backward_encoder(disc, enc_cache, dz)
    dx = None
    if want_input_grad:
        if disc.vae:
            raise ShapeError("input gradients require a plain autoencoder")
        from .interface import STD_CLIP

        dxs, _ = nets.mlp_backward(disc.weights, "enc", enc_cache["cache"], dz)
        inside = np.abs((x - disc.rate_mean) / disc.rate_std) < STD_CLIP
        dx = s + (dxs * inside) / disc.rate_std
    return mu, {**enc_grads, **dec_grads}, dx


def discriminator_loss_and_grads(
    disc: InterfaceParams, x0: np.ndarray, xk_aligned: np.ndarray
) -> tuple[float, float, float, ParamDict]:
    """L_D = mu_0(x0) - mu_k(aligned day-k) and its weight gradients."""
    mu0, g0, _ = _mu_and_grads(disc, x0)
    muk, gk, _ = _mu_and_grads(disc, xk_aligned)
    grads = {k: g0[k] - gk[k] for k in g0}
    return mu0 - muk, mu0, muk, grads


def aligner_loss_and_grads(
    disc: InterfaceParams, aligner: ParamDict, xk: np.ndarray
) -> tuple[float, ParamDict]:
    """L_A = mu_k(aligned day-k) and its gradients w.r.t. aligner weights."""
    aligned, cache = aligner_forward(aligner, xk)
    muk, _, dmu_da = _mu_and_grads(disc, aligned, want_input_grad=True)
    _, grads = aligner_backward(aligner, cache, dmu_da)
    return muk, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class AdanConfig:
    """Alternating-update schedule (1 discriminator step : 1 aligner step).

    Updates are plain gradient steps, not adaptive: the aligner starts
    at the identity and the discriminator as the day-0 autoencoder, and
    per-coordinate step normalization would walk every weight away from
    those structured starting points at the same speed regardless of
    how little the objective cares, destroying both.
    """

    iterations: int = 3000
    batch_size: int = 256
    lr_aligner: float = 1e-3
    lr_discriminator: float = 1e-3
    grad_clip: float = 10.0
    patience: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1 or self.patience < 1:
            raise ShapeError("invalid adversarial training configuration")
        if self.lr_aligner <= 0 or self.lr_discriminator <= 0:
            raise ShapeError("learning rates must be positive")


def _sgd_step(params: ParamDict, grads: ParamDict, lr: float) -> None:
    for key, p in params.items():
        p -= lr * grads[key]


def adan_train(
    x_day0,
    x_dayk,
    frozen: InterfaceParams,
    cfg: AdanConfig | None = None,
) -> tuple[ParamDict, dict]:
    """Alternating adversarial training of discriminator and aligner.

    The discriminator starts as a copy of the frozen day-0 autoencoder
    and is updated to widen the residual-mean gap; the aligner starts at
    identity and is updated to shrink the aligned day-k residual mean.
    Fresh day-0 and day-k mini-batches are drawn every iteration.
    Stops early when the gap has not improved for ``patience``
    iterations. The log records mu_0, mu_k, and the gap per iteration,
    plus day-k residual means under the frozen day-0 autoencoder before
    and after alignment.
    """
    cfg = cfg or AdanConfig()
    x0 = series_array(x_day0)
    xk = series_array(x_dayk)
    if x0.shape[1] != xk.shape[1]:
        raise ShapeError("day-0 and day-k must share the channel count")

    disc = frozen.trainable_copy()
    for key in [k for k in disc.weights if k.startswith("lstm_")]:
        del disc.weights[key]
    aligner = aligner_init(x0.shape[1])
    rng = RngStream(cfg.seed).child(300)

    log: dict = {"mu0": [], "muk": [], "gap": []}
    log["fixed_ae_muk_before"] = residual_l1(frozen, xk).mu
    best_gap = np.inf
    best_iteration = -1

    for it in range(cfg.iterations):
        idx0 = rng.choice(x0.shape[0], size=min(cfg.batch_size, x0.shape[0]))
        idxk = rng.choice(xk.shape[0], size=min(cfg.batch_size, xk.shape[0]))
        batch0 = x0[idx0]
        batchk = xk[idxk]

        aligned_k, _ = aligner_forward(aligner, batchk)
        loss_d, mu0, muk, d_grads = discriminator_loss_and_grads(disc, batch0, aligned_k)
        if not np.isfinite(loss_d):
            raise TrainingDivergedError(it)
        clip_grad_norm(d_grads, cfg.grad_clip)
        _sgd_step(disc.weights, d_grads, cfg.lr_discriminator)

        loss_a, a_grads = aligner_loss_and_grads(disc, aligner, batchk)
        if not np.isfinite(loss_a):
            raise TrainingDivergedError(it)
        clip_grad_norm(a_grads, cfg.grad_clip)
        _sgd_step(aligner, a_grads, cfg.lr_aligner)

        gap = abs(mu0 - muk)
        log["mu0"].append(mu0)
        log["muk"].append(muk)
        log["gap"].append(gap)
        if gap < best_gap - 1e-12:
            best_gap = gap
            best_iteration = it
        if it - best_iteration >= cfg.patience:
            break

    log["iterations_run"] = len(log["gap"])
    log["fixed_ae_muk_after"] = residual_l1(
        frozen, aligner_forward(aligner, xk)[0]
    ).mu
    return aligner, log


class AdversarialResidualAligner(BaseEstimator):
    """Estimator wrapper: fit on (day-0 rates, day-k rates), transform rates."""

    def __init__(
        self,
        interface: InterfaceParams | None = None,
        iterations: int = 3000,
        batch_size: int = 256,
        lr_aligner: float = 1e-4,
        lr_discriminator: float = 1e-4,
        patience: int = 300,
        seed: int = 0,
    ):
        self.interface = interface
        self.iterations = iterations
        self.batch_size = batch_size
        self.lr_aligner = lr_aligner
        self.lr_discriminator = lr_discriminator
        self.patience = patience
        self.seed = seed

    def fit(self, x_day0, x_dayk) -> "AdversarialResidualAligner":
        if self.interface is None:
            raise ShapeError("a frozen interface is required to fit")
        cfg = AdanConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            lr_aligner=self.lr_aligner,
            lr_discriminator=self.lr_discriminator,
            patience=self.patience,
            seed=self.seed,
        )
        self.aligner_, self.log_ = adan_train(x_day0, x_dayk, self.interface, cfg)
        return self

    def transform(self, xk) -> np.ndarray:
        if not hasattr(self, "aligner_"):
            raise NotFittedError("call fit before transform")
        return adan_apply(self.aligner_, xk).rates


# ---------------------------------------------------------------------------
# translate-and-scale baseline (latent space)


def translate_scale_fit(z0, zk) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension shift and scale matching day-k moments to day-0.

    Returns (shift, scale) with shift = mean0 - meank and
    scale = std0 / stdk (population standard deviations).
    """
    a0 = np.asarray(getattr(z0, "z", z0), dtype=np.float64)
    ak = np.asarray(getattr(zk, "z", zk), dtype=np.float64)
    if a0.size == 0 or ak.size == 0:
        raise ShapeError("latent sets must be nonempty")
    if a0.shape[1] != ak.shape[1]:
        raise ShapeError("latent dimensions must match")
    shift = a0.mean(axis=0) - ak.mean(axis=0)
    scale = a0.std(axis=0) / np.maximum(ak.std(axis=0), 1e-12)
    return shift, scale


class TranslateScaleAligner(BaseEstimator):
    """Match per-dimension latent means and variances to day-0."""

    def fit(self, z0, zk) -> "TranslateScaleAligner":
        self.shift_, self.scale_ = translate_scale_fit(z0, zk)
        self.meank_ = np.asarray(getattr(zk, "z", zk)).mean(axis=0)
        self.mean0_ = self.meank_ + self.shift_
        return self

    def transform(self, zk) -> np.ndarray:
        if not hasattr(self, "shift_"):
            raise NotFittedError("call fit before transform")
        arr = np.asarray(getattr(zk, "z", zk), dtype=np.float64)
        return (arr - self.meank_) * self.scale_ + self.mean0_


# ---------------------------------------------------------------------------
# data-efficiency sweep


def data_efficiency_sweep(
    x_day0,
    x_dayk,
    y_dayk,
    frozen: InterfaceParams,
    cfg: AdanConfig | None = None,
    increment: int = 120,
    max_increments: int = 10,
) -> dict:
    """Alignment benefit vs. amount of day-k training data.

    For each prefix of ``increment`` samples (6 s at 50 ms bins) the
    aligner is retrained from scratch with the same seed and the
    full-day VAF improvement over the unaligned baseline is recorded.
    The zero-data point is the identity aligner (improvement 0 by
    definition). Reports the saturation point: the smallest prefix
    reaching within 1 VAF point of the curve's maximum.
    """
    from .bench import vaf

    cfg = cfg or AdanConfig()
    xk = series_array(x_dayk)
    yk = series_array(y_dayk)
    bin_width = getattr(x_dayk, "bin_width", 0.05)
    base_vaf = vaf(yk, predict_emg(frozen, encode(frozen, xk)).envelopes).mean_vaf

    sizes = [0] + [
        increment * i for i in range(1, max_increments + 1) if increment * i <= xk.shape[0]
    ]
    improvements = []
    for size in sizes:
        if size == 0:
            improvements.append(0.0)
            continue
        aligner, _ = adan_train(x_day0, xk[:size], frozen, cfg)
        aligned = adan_apply(aligner, xk).rates
        aligned_vaf = vaf(yk, predict_emg(frozen, encode(frozen, aligned)).envelopes).mean_vaf
        improvements.append(aligned_vaf - base_vaf)

    improvements_arr = np.array(improvements)
    best = improvements_arr.max()
    saturated = [s for s, v in zip(sizes, improvements) if v >= best - 1.0]
    return {
        "sizes": sizes,
        "seconds": [s * bin_width for s in sizes],
        "improvement": [float(v) for v in improvements],
        "baseline_vaf": float(base_vaf),
        "saturation_samples": int(saturated[0]) if saturated else 0,
        "saturation_seconds": float(saturated[0] * bin_width) if saturated else 0.0,
        "one_minute_reference_samples": int(round(60.0 / bin_width)),
    }
