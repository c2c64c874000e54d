"""Dense linear algebra, seeded randomness, and gradient infrastructure.

Everything operates on 64-bit floats. Matrices are plain 2-D
``numpy.ndarray`` objects in row-major order; the helpers here add the
error reporting and sign conventions the rest of the package relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, EvaluationError, RankDeficiencyError, ShapeError

ParamDict = dict[str, np.ndarray]


# ---------------------------------------------------------------------------
# seeded randomness


class RngStream:
    """Deterministic random stream: equal seeds give bit-identical draws.

    Wraps a PCG64 generator. Child streams derived with :meth:`child` are
    reproducible functions of (seed, key), independent of draw order, so
    per-trial or per-task streams stay stable under reordering.
    """

    def __init__(self, seed: int, _spawn_key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.spawn_key = _spawn_key
        seq = np.random.SeedSequence(self.seed, spawn_key=_spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, key: int) -> "RngStream":
        """Derive an independent stream identified by an integer key."""
        return RngStream(self.seed, self.spawn_key + (int(key),))

    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def poisson(self, lam, size=None) -> np.ndarray:
        return self._gen.poisson(lam, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.spawn_key})"


# ---------------------------------------------------------------------------
# decompositions


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite, 2-D float64 array."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite entries")
    return arr


def qr_decompose(a) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR factorization of a tall matrix with full column rank.

    Returns (q, r) with orthonormal columns in ``q`` and upper-triangular
    ``r`` such that ``q @ r`` reconstructs the input. Raises
    :class:`RankDeficiencyError` naming the first deficient column when
    the input does not have full column rank.
    """
    a = as_matrix(a, "qr input")
    rows, cols = a.shape
    if rows < cols:
        raise ShapeError(f"qr input must have rows >= cols, got {a.shape}")
    q, r = np.linalg.qr(a, mode="reduced")
    diag = np.abs(np.diag(r))
    scale = max(diag.max(), 1e-300)
    tol = scale * max(rows, cols) * np.finfo(np.float64).eps * 16
    deficient = np.nonzero(diag <= tol)[0]
    if deficient.size:
        raise RankDeficiencyError(int(deficient[0]))
    return q, r


def svd(a) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin singular value decomposition, ``a = u @ diag(s) @ v.T``.

    Singular values are nonnegative and sorted descending. Sign ambiguity
    is resolved by forcing the largest-magnitude entry of each left
    singular vector to be nonnegative.
    """
    a = as_matrix(a, "svd input")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(100, f"svd did not converge: {exc}") from exc
    v = vt.T
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return u, s, v


# ---------------------------------------------------------------------------
# Adam optimizer


@dataclass
class AdamState:
    """First/second moment accumulators for one parameter set."""

    m: ParamDict = field(default_factory=dict)
    v: ParamDict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ParamDict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: ParamDict,
    grads: ParamDict,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamDict:
    """One adaptive-moment update; mutates ``params`` and ``state`` in place.

    Deterministic given inputs. Raises :class:`ShapeError` when a gradient
    does not match its parameter's shape.
    """
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeError(
                f"gradient shape {g.shape} != parameter shape {p.shape} for '{key}'"
            )
    state.t += 1
    b1t = 1.0 - beta1 ** state.t
    b2t = 1.0 - beta2 ** state.t
    for key, p in params.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / b1t) / (np.sqrt(v / b2t) + eps)
    return params


def clip_grad_norm(grads: ParamDict, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm.

    Returns the pre-clip norm. Keeps exponential-unit training loops from
    blowing up on rare large-gradient batches.
    """
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# parameter flattening (shared by the gradient checker and serializers)


def flatten_params(params: ParamDict) -> tuple[np.ndarray, list[tuple[str, tuple[int, ...]]]]:
    """Pack a parameter dict into one vector plus a recoverable layout."""
    layout = [(k, params[k].shape) for k in sorted(params)]
    vec = np.concatenate([params[k].ravel() for k, _ in layout]) if layout else np.zeros(0)
    return vec, layout


def unflatten_params(vec: np.ndarray, layout: list[tuple[str, tuple[int, ...]]]) -> ParamDict:
    """Inverse of :func:`flatten_params`."""
    out: ParamDict = {}
    offset = 0
    for key, shape in layout:
        size = int(np.prod(shape)) if shape else 1
        out[key] = vec[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != vec.size:
        raise ShapeError(f"vector length {vec.size} does not match layout size {offset}")
    return out


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Worst-case comparison of analytic vs. central-difference gradients."""

    max_rel_error: float
    worst_index: int
    analytic: float
    numeric: float

    def __str__(self) -> str:
        return (
            f"max relative error {self.max_rel_error:.3e} at index {self.worst_index} "
            f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e})"
        )


def grad_check(
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    ``loss`` maps a parameter vector to ``(value, analytic_gradient)``;
    only the value is used for the numeric side. Raises
    :class:`EvaluationError` carrying the perturbed index if any
    evaluation is non-finite.
    """
    params = np.asarray(params, dtype=np.float64)
    value, analytic = loss(params)
    if not np.isfinite(value) or not np.all(np.isfinite(analytic)):
        raise EvaluationError(-1, "loss or gradient non-finite at the base point")
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != params.shape:
        raise ShapeError(
            f"gradient shape {analytic.shape} does not match params {params.shape}"
        )

    numeric = np.zeros_like(params)
    for i in range(params.size):
        p = params.copy()
        p[i] += step
        hi, _ = loss(p)
        p[i] -= 2.0 * step
        lo, _ = loss(p)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise EvaluationError(i)
        numeric[i] = (hi - lo) / (2.0 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = int(np.argmax(rel))
    return GradCheckReport(
        max_rel_error=float(rel[worst]),
        worst_index=worst,
        analytic=float(analytic[worst]),
        numeric=float(numeric[worst]),
    )
