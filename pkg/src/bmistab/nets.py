"""Hand-rolled network layers with exact reverse-mode gradients.

The layer set is deliberately closed and small: affine layers with a
clamped-exponential (or identity) activation, and a single LSTM layer
with a linear readout. Gradients are derived per layer rather than via a
general tape, which keeps every path checkable against finite
differences.

Parameters live in flat ``dict[str, ndarray]`` maps; each helper owns a
name prefix so several networks can share one dict.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .numerics import ParamDict, RngStream

EXP_CLAMP = 30.0  # pre-activation cap for exponential units


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow warnings for large negative inputs
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# multilayer perceptron: affine + exponential hidden units, linear output


def mlp_init(rng: RngStream, sizes: list[int], prefix: str) -> ParamDict:
    """Uniform +/-1/sqrt(fan_in) weights, zero biases, for each layer."""
    params: ParamDict = {}
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{prefix}{i}_W"] = rng.uniform(-bound, bound, (fan_in, fan_out))
        params[f"{prefix}{i}_b"] = np.zeros(fan_out)
    return params


def mlp_layer_count(params: ParamDict, prefix: str) -> int:
    n = 0
    while f"{prefix}{n}_W" in params:
        n += 1
    return n


def mlp_forward(
    params: ParamDict,
    prefix: str,
    x: np.ndarray,
    hidden_activation: str = "exp",
) -> tuple[np.ndarray, dict]:
    """Forward pass; the final layer is always linear.

    Returns (output, cache). The cache records inputs and pre-activations
    for :func:`mlp_backward`, plus the number of clamped exponential
    units (which should stay at zero away from initialization bugs).
    """
    n_layers = mlp_layer_count(params, prefix)
    if n_layers == 0:
        raise ShapeError(f"no layers found under prefix '{prefix}'")
    h = np.asarray(x, dtype=np.float64)
    inputs, preacts = [], []
    clamped = 0
    for i in range(n_layers):
        W = params[f"{prefix}{i}_W"]
        b = params[f"{prefix}{i}_b"]
        if h.shape[-1] != W.shape[0]:
            raise ShapeError(
                f"layer {prefix}{i}: input width {h.shape[-1]} != {W.shape[0]}"
            )
        inputs.append(h)
        u = h @ W + b
        preacts.append(u)
        if i < n_layers - 1:
            if hidden_activation == "exp":
                clamped += int(np.sum(u > EXP_CLAMP))
                h = np.exp(np.minimum(u, EXP_CLAMP))
            elif hidden_activation == "linear":
                h = u
            else:
                raise ShapeError(f"unknown activation '{hidden_activation}'")
        else:
            h = u
    cache = {
        "inputs": inputs,
        "preacts": preacts,
        "activation": hidden_activation,
        "n_layers": n_layers,
        "clamped": clamped,
    }
    return h, cache


def mlp_backward(
    params: ParamDict,
    prefix: str,
    cache: dict,
    dout: np.ndarray,
) -> tuple[np.ndarray, ParamDict]:
    """Backprop through :func:`mlp_forward`; returns (dx, grads)."""
    grads: ParamDict = {}
    dh = np.asarray(dout, dtype=np.float64)
    for i in reversed(range(cache["n_layers"])):
        u = cache["preacts"][i]
        if i < cache["n_layers"] - 1:
            if cache["activation"] == "exp":
                act = np.exp(np.minimum(u, EXP_CLAMP))
                du = dh * act * (u <= EXP_CLAMP)
            else:
                du = dh
        else:
            du = dh
        x_in = cache["inputs"][i]
        grads[f"{prefix}{i}_W"] = x_in.T @ du
        grads[f"{prefix}{i}_b"] = du.sum(axis=0)
        dh = du @ params[f"{prefix}{i}_W"].T
    return dh, grads


# ---------------------------------------------------------------------------
# LSTM with linear readout


def lstm_init(rng: RngStream, n_in: int, n_cells: int, n_out: int, prefix: str) -> ParamDict:
    """Standard gate stack [input, forget, candidate, output].

    Weights are uniform +/-1/sqrt(fan_in); the forget-gate bias starts at
    +1 so memory persists early in training.
    """
    wb = 1.0 / np.sqrt(n_in)
    ub = 1.0 / np.sqrt(n_cells)
    b = np.zeros(4 * n_cells)
    b[n_cells : 2 * n_cells] = 1.0
    return {
        f"{prefix}W": rng.uniform(-wb, wb, (n_in, 4 * n_cells)),
        f"{prefix}U": rng.uniform(-ub, ub, (n_cells, 4 * n_cells)),
        f"{prefix}b": b,
        f"{prefix}Wout": rng.uniform(-ub, ub, (n_cells, n_out)),
        f"{prefix}bout": np.zeros(n_out),
    }


def lstm_forward(params: ParamDict, prefix: str, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """Run the LSTM over a (T, n_in) sequence from a zero initial state.

    Causal by construction: output at time t depends only on x[:t+1].
    Returns (y, cache) with y of shape (T, n_out).
    """
    x = np.asarray(x, dtype=np.float64)
    W = params[f"{prefix}W"]
    U = params[f"{prefix}U"]
    b = params[f"{prefix}b"]
    Wout = params[f"{prefix}Wout"]
    H = U.shape[0]
    if x.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeError(f"lstm input must be (T, {W.shape[0]}), got {x.shape}")
    T = x.shape[0]
    xw = x @ W + b
    gates = np.zeros((T, 4 * H))
    cells = np.zeros((T, H))
    tanh_c = np.zeros((T, H))
    hidden = np.zeros((T, H))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        a = xw[t] + h @ U
        i = _sigmoid(a[:H])
        f = _sigmoid(a[H : 2 * H])
        g = np.tanh(a[2 * H : 3 * H])
        o = _sigmoid(a[3 * H :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[t, :H] = i
        gates[t, H : 2 * H] = f
        gates[t, 2 * H : 3 * H] = g
        gates[t, 3 * H :] = o
        cells[t] = c
        tanh_c[t] = tc
        hidden[t] = h
    y = hidden @ Wout + params[f"{prefix}bout"]
    cache = {"x": x, "gates": gates, "cells": cells, "tanh_c": tanh_c, "hidden": hidden}
    return y, cache


def lstm_backward(
    params: ParamDict,
    prefix: str,
    cache: dict,
    dy: np.ndarray,
) -> tuple[np.ndarray, ParamDict]:
    """Backprop through time for :func:`lstm_forward`; returns (dx, grads)."""
    x = cache["x"]
    gates = cache["gates"]
    cells = cache["cells"]
    tanh_c = cache["tanh_c"]
    hidden = cache["hidden"]
    W = params[f"{prefix}W"]
    U = params[f"{prefix}U"]
    Wout = params[f"{prefix}Wout"]
    T, H = hidden.shape

    dWout = hidden.T @ dy
    dbout = dy.sum(axis=0)
    dh_seq = dy @ Wout.T

    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * H)
    dx = np.zeros_like(x)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    for t in reversed(range(T)):
        i = gates[t, :H]
        f = gates[t, H : 2 * H]
        g = gates[t, 2 * H : 3 * H]
        o = gates[t, 3 * H :]
        c_prev = cells[t - 1] if t > 0 else np.zeros(H)
        h_prev = hidden[t - 1] if t > 0 else np.zeros(H)

        dh = dh_seq[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tanh_c[t] ** 2)
        da = np.empty(4 * H)
        da[:H] = dc * g * i * (1.0 - i)
        da[H : 2 * H] = dc * c_prev * f * (1.0 - f)
        da[2 * H : 3 * H] = dc * i * (1.0 - g**2)
        da[3 * H :] = dh * tanh_c[t] * o * (1.0 - o)

        dW += np.outer(x[t], da)
        dU += np.outer(h_prev, da)
        db += da
        dx[t] = da @ W.T
        dh_next = da @ U.T
        dc_next = dc * f

    grads = {
        f"{prefix}W": dW,
        f"{prefix}U": dU,
        f"{prefix}b": db,
        f"{prefix}Wout": dWout,
        f"{prefix}bout": dbout,
    }
    return dx, grads
