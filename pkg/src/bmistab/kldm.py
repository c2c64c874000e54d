"""Unsupervised latent alignment by Gaussian KL minimization.

A copy of the day-0 encoder is retrained so that the Gaussian summary
(mean and covariance) of its day-k latent outputs matches the day-0
latent distribution, by descending the closed-form KL divergence. No
EMG and no trial labels are involved; only day-k firing rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import nets
from .errors import (
    InsufficientDataError,
    NotPositiveDefiniteError,
    ShapeError,
    TrainingDivergedError,
)
from .interface import InterfaceParams, LatentSeries, _encode_std, _standardize, series_array
from .numerics import AdamState, ParamDict, RngStream, adam_step, clip_grad_norm

RIDGE_FACTOR = 1e-6


@dataclass
class GaussianSummary:
    """Mean vector and (ridge-conditioned) covariance of a latent cloud."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.sigma.shape != (self.mu.size, self.mu.size):
            raise ShapeError("sigma must be square and match mu")
        if not np.allclose(self.sigma, self.sigma.T, atol=1e-12):
            raise ShapeError("sigma must be symmetric")

    @property
    def dim(self) -> int:
        return self.mu.size


def gaussian_fit(z) -> GaussianSummary:
    """Sample mean and unbiased covariance with a small trace-scaled ridge.

    The ridge (1e-6 * trace / dim on the diagonal) keeps degenerate
    clouds positive definite. Requires more samples than dimensions.
    """
    arr = np.asarray(getattr(z, "z", z), dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError("latents must be (T, l)")
    T, l = arr.shape
    if T <= l:
        raise InsufficientDataError(f"need more than {l} samples, got {T}")
    mu = arr.mean(axis=0)
    centered = arr - mu
    sigma = centered.T @ centered / (T - 1)
    sigma = 0.5 * (sigma + sigma.T)
    ridge = RIDGE_FACTOR * max(np.trace(sigma), 1e-300) / l
    sigma[np.diag_indices(l)] += ridge
    return GaussianSummary(mu=mu, sigma=sigma)


def _chol(summary: GaussianSummary, which: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(summary.sigma)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(which) from exc


def kl_gaussian(pk: GaussianSummary, p0: GaussianSummary) -> float:
    """Closed-form KL divergence from the day-k to the day-0 Gaussian.

    0.5 * (tr(S0^-1 Sk) + (mu0-muk)^T S0^-1 (mu0-muk) - l
           + ln det S0 - ln det Sk).
    """
    if pk.dim != p0.dim:
        raise ShapeError(f"dimension mismatch {pk.dim} vs {p0.dim}")
    if np.array_equal(pk.mu, p0.mu) and np.array_equal(pk.sigma, p0.sigma):
        return 0.0
    l = pk.dim
    chol0 = _chol(p0, "day-0")
    cholk = _chol(pk, "day-k")
    solved = np.linalg.solve(chol0, np.linalg.solve(chol0, pk.sigma).T)
    trace_term = float(np.trace(solved))
    diff = p0.mu - pk.mu
    w = np.linalg.solve(chol0, diff)
    maha = float(w @ w)
    logdet0 = 2.0 * float(np.sum(np.log(np.diag(chol0))))
    logdetk = 2.0 * float(np.sum(np.log(np.diag(cholk))))
    return 0.5 * (trace_term + maha - l + logdet0 - logdetk)


def kl_objective_and_grads(
    enc: InterfaceParams,
    x_batch: np.ndarray,
    day0: GaussianSummary,
) -> tuple[float, ParamDict]:
    """KL of the batch latent Gaussian to day-0, with encoder gradients.

    The batch summary (including the trace-scaled ridge) is recomputed
    inside the objective, and the gradient accounts for the ridge's
    dependence on the batch covariance, so finite differences of this
    exact scalar match the analytic gradients.
    """
    xs = _standardize(enc, x_batch)
    z, enc_cache = _encode_std(enc, xs)
    B, l = z.shape
    if B <= l:
        raise InsufficientDataError(f"batch of {B} too small for {l} latents")
    summary = gaussian_fit(z)
    value = kl_gaussian(summary, day0)

    sigma0_inv = np.linalg.inv(day0.sigma)
    sigmak_inv = np.linalg.inv(summary.sigma)
    # dKL/dSigma_k (ridge path adds a trace term on the diagonal)
    P = 0.5 * (sigma0_inv - sigmak_inv)
    G = P + (RIDGE_FACTOR / l) * np.trace(P) * np.eye(l)
    g_mu = -sigma0_inv @ (day0.mu - summary.mu)
    centered = z - summary.mu
    dz = centered @ (2.0 / (B - 1) * G) + g_mu / B

    from .interface import _backward_encoder

    grads = _backward_encoder(enc, enc_cache, dz, eps=None)
    return value, grads


@dataclass
class KlTrainConfig:
    """Hyperparameters for encoder retraining."""

    iterations: int = 2000
    batch_size: int = 1000
    learning_rate: float = 1e-4
    grad_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 2 or self.learning_rate <= 0:
            raise ShapeError("invalid KL training configuration")


def kldm_train(
    x_dayk,
    frozen: InterfaceParams,
    day0_summary: GaussianSummary,
    cfg: KlTrainConfig | None = None,
) -> tuple[InterfaceParams, dict]:
    """Retrain an encoder copy to pull day-k latents onto day-0 statistics.

    Starts from the frozen day-0 encoder weights (the day-0 parameters
    themselves are never touched). Returns the retrained encoder and a
    history with per-iteration KL plus initial/final full-data KL.
    """
    cfg = cfg or KlTrainConfig()
    x_arr = series_array(x_dayk)
    enc = frozen.trainable_copy()
    for key in [k for k in enc.weights if k.startswith(("dec", "lstm_"))]:
        del enc.weights[key]
    enc_params = enc.weights
    state = AdamState.for_params(enc_params)
    rng = RngStream(cfg.seed).child(200)
    T = x_arr.shape[0]
    batch = min(cfg.batch_size, T)

    def full_kl() -> float:
        z, _ = _encode_std(enc, _standardize(enc, x_arr))
        return kl_gaussian(gaussian_fit(z), day0_summary)

    history: dict = {"kl": [], "initial_kl": full_kl()}
    for it in range(cfg.iterations):
        idx = rng.choice(T, size=batch) if batch < T else np.arange(T)
        value, grads = kl_objective_and_grads(enc, x_arr[idx], day0_summary)
        if not np.isfinite(value):
            raise TrainingDivergedError(it)
        clip_grad_norm(grads, cfg.grad_clip)
        adam_step(enc_params, grads, state, lr=cfg.learning_rate)
        history["kl"].append(float(value))
    history["final_kl"] = full_kl()
    return enc, history


def kldm_apply(enc: InterfaceParams, x_dayk) -> LatentSeries:
    """Day-k rates through the retrained encoder, for the frozen predictor."""
    arr = series_array(x_dayk)
    z, _ = _encode_std(enc, _standardize(enc, arr))
    return LatentSeries(bin_width=getattr(x_dayk, "bin_width", 0.0), z=z)


class GaussianKlAligner(BaseEstimator):
    """Estimator wrapper around encoder retraining.

    Fit consumes day-k firing rates only; the day-0 reference enters as
    a frozen Gaussian summary.
    """

    def __init__(
        self,
        interface: InterfaceParams | None = None,
        day0_summary: GaussianSummary | None = None,
        iterations: int = 2000,
        batch_size: int = 1000,
        learning_rate: float = 1e-4,
        seed: int = 0,
    ):
        self.interface = interface
        self.day0_summary = day0_summary
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, x_dayk) -> "GaussianKlAligner":
        if self.interface is None or self.day0_summary is None:
            raise ShapeError("interface and day0_summary are required to fit")
        cfg = KlTrainConfig(
            iterations=self.iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )
        self.encoder_, self.history_ = kldm_train(
            x_dayk, self.interface, self.day0_summary, cfg
        )
        return self

    def transform(self, x_dayk) -> np.ndarray:
        if not hasattr(self, "encoder_"):
            raise NotFittedError("call fit before transform")
        return kldm_apply(self.encoder_, x_dayk).z
