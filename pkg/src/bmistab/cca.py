"""Supervised latent alignment via canonical correlation analysis.

Point-to-point correspondence between days comes from the stereotyped
task structure: latent trajectories are averaged per target and
concatenated, giving an l-by-(targets * trial_length) matrix per day.
CCA then finds paired linear maps whose projections are maximally
correlated; day-k latents are mapped back into day-0 latent coordinates
so the frozen EMG predictor can consume them unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import MissingTargetError, ShapeError
from .numerics import qr_decompose, svd
from .signal import N_TARGETS


@dataclass
class TrialAveragedLatents:
    """Per-target mean latent trajectories, concatenated column-wise.

    ``data`` is l by (n_targets * tau); block g holds the average
    trajectory for target g over ``tau`` bins.
    """

    data: np.ndarray
    tau: int
    n_targets: int = N_TARGETS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != self.n_targets * self.tau:
            raise ShapeError(
                f"expected l x {self.n_targets}*{self.tau} matrix, got {self.data.shape}"
            )


def _marker_trials(markers, bin_width: float, T: int) -> list[tuple[int, int, int]]:
    trials = []
    ordered = sorted(markers)
    for i, (t0, target) in enumerate(ordered):
        b0 = int(round(t0 / bin_width))
        b1 = int(round(ordered[i + 1][0] / bin_width)) if i + 1 < len(ordered) else T
        b1 = min(b1, T)
        if b1 > b0:
            trials.append((b0, b1, int(target)))
    return trials


def common_trial_length(marker_sets, bin_width: float, T: int) -> int:
    """Shortest trial length (in bins) across one or more marker sets."""
    lengths = []
    for markers in marker_sets:
        for b0, b1, _ in _marker_trials(markers, bin_width, T):
            lengths.append(b1 - b0)
    if not lengths:
        raise ShapeError("no trials found in markers")
    return min(lengths)


def trial_average(z, markers, tau: int) -> TrialAveragedLatents:
    """Average latent trajectories per target, truncated to ``tau`` bins.

    Raises :class:`MissingTargetError` if any of the eight targets has no
    trials.
    """
    arr = np.asarray(getattr(z, "z", z), dtype=np.float64)
    bin_width = getattr(z, "bin_width", 0.05)
    trials = _marker_trials(markers, bin_width, arr.shape[0])
    l = arr.shape[1]
    blocks = []
    for target in range(N_TARGETS):
        segments = [
            arr[b0 : b0 + tau]
            for b0, b1, g in trials
            if g == target and b1 - b0 >= tau
        ]
        if not segments:
            raise MissingTargetError(target)
        blocks.append(np.mean(segments, axis=0).T)  # (l, tau)
    return TrialAveragedLatents(data=np.concatenate(blocks, axis=1), tau=tau)


@dataclass
class CcaTransform:
    """Fitted day-k to day-0 latent map.

    ``m0`` and ``mk`` hold the canonical directions for each day;
    ``correlations`` are the canonical correlations, descending.
    """

    m0: np.ndarray
    mk: np.ndarray
    correlations: np.ndarray
    mean0: np.ndarray
    meank: np.ndarray


def cca_fit(z0: TrialAveragedLatents | np.ndarray, zk: TrialAveragedLatents | np.ndarray) -> CcaTransform:
    """Canonical correlation analysis of two trial-averaged latent sets.

    Rows (latent dimensions) are mean-centered, the transposed matrices
    are QR-factorized, and the inner product of the orthogonal factors is
    decomposed by SVD; the singular values are the canonical
    correlations. Requires more columns than latent dimensions.
    """
    a0 = np.asarray(getattr(z0, "data", z0), dtype=np.float64)
    ak = np.asarray(getattr(zk, "data", zk), dtype=np.float64)
    if a0.shape != ak.shape:
        raise ShapeError(f"latent sets must match, got {a0.shape} vs {ak.shape}")
    l, n = a0.shape
    if n <= l:
        raise ShapeError(f"need more samples ({n}) than latent dims ({l})")
    mean0 = a0.mean(axis=1)
    meank = ak.mean(axis=1)
    c0 = a0 - mean0[:, None]
    ck = ak - meank[:, None]
    q0, r0 = qr_decompose(c0.T)
    qk, rk = qr_decompose(ck.T)
    u, s, v = svd(q0.T @ qk)
    m0 = np.linalg.solve(r0, u)
    mk = np.linalg.solve(rk, v)
    return CcaTransform(
        m0=m0,
        mk=mk,
        correlations=np.clip(s, 0.0, 1.0),
        mean0=mean0,
        meank=meank,
    )


def cca_apply(t: CcaTransform, zk) -> np.ndarray:
    """Map day-k latents into day-0 latent coordinates.

    Day-k data is centered, pushed through the day-k canonical
    directions, pulled back through the inverse of the day-0 directions,
    and re-centered at the day-0 mean.
    """
    arr = np.asarray(getattr(zk, "z", zk), dtype=np.float64)
    if arr.shape[1] != t.mk.shape[0]:
        raise ShapeError(f"expected {t.mk.shape[0]} latent dims, got {arr.shape[1]}")
    canonical = (arr - t.meank) @ t.mk
    back = np.linalg.solve(t.m0.T, canonical.T).T
    return back + t.mean0


class CcaAligner(BaseEstimator):
    """Estimator wrapper: fit on trial-averaged latents, transform series."""

    def fit(self, z0_avg, zk_avg) -> "CcaAligner":
        self.transform_ = cca_fit(z0_avg, zk_avg)
        self.correlations_ = self.transform_.correlations
        return self

    def transform(self, zk) -> np.ndarray:
        if not hasattr(self, "transform_"):
            raise NotFittedError("call fit before transform")
        return cca_apply(self.transform_, zk)
