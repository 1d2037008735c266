"""The closed op set: forwards and hand-written backwards, batched over rows.

No tape.  Every forward returns whatever the matching backward needs as an
explicit cache; model classes wire the calls in reverse order themselves.
Gradient conventions: backward takes d(loss)/d(output) and returns
d(loss)/d(inputs) plus per-parameter gradients for the caller to accumulate.

GRU cell convention (fixed normatively for this project):
    r  = sigmoid(Wr x + Ur h + br)
    z  = sigmoid(Wz x + Uz h + bz)
    hh = tanh(Wh x + Uh (r*h) + bh)
    h' = (1 - z) * h + z * hh
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import ShapeError


def _check_2d(name: str, arr: np.ndarray, cols: int | None = None) -> None:
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2-d array, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"{name}: expected {cols} columns, got shape {arr.shape}")


# ---------------------------------------------------------------------------
# linear

def linear_forward(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """y = x W^T + b with W of shape (out, in)."""
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} vs weight shape {W.shape}")
    return x @ W.T + b, (x, W)


def linear_backward(dy: np.ndarray, cache):
    x, W = cache
    dx = dy @ W
    dW = dy.T @ x
    db = dy.sum(axis=0)
    return dx, dW, db


# ---------------------------------------------------------------------------
# embedding

def embedding_forward(ids: np.ndarray, E: np.ndarray):
    """Row lookup; ids may be any integer shape, output gains a trailing dim."""
    return E[ids], ids


def embedding_backward(dy: np.ndarray, ids: np.ndarray, dE: np.ndarray) -> None:
    """Scatter-add dy into dE (in place); repeated ids accumulate."""
    np.add.at(dE, ids.reshape(-1), dy.reshape(-1, dy.shape[-1]))


# ---------------------------------------------------------------------------
# activations

def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * y * (1.0 - y)


def tanh_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * (1.0 - y * y)


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), (x > 0)


def relu_backward(dy: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return dy * mask


# ---------------------------------------------------------------------------
# GRU cell

class GruWeights(NamedTuple):
    Wr: np.ndarray
    Ur: np.ndarray
    br: np.ndarray
    Wz: np.ndarray
    Uz: np.ndarray
    bz: np.ndarray
    Wh: np.ndarray
    Uh: np.ndarray
    bh: np.ndarray


class GruGrads(NamedTuple):
    Wr: np.ndarray
    Ur: np.ndarray
    br: np.ndarray
    Wz: np.ndarray
    Uz: np.ndarray
    bz: np.ndarray
    Wh: np.ndarray
    Uh: np.ndarray
    bh: np.ndarray


def gru_cell_forward(x: np.ndarray, h: np.ndarray, w: GruWeights):
    """One GRU step over a batch: x (B, in), h (B, hid) -> h' (B, hid)."""
    _check_2d("gru x", x, w.Wr.shape[1])
    _check_2d("gru h", h, w.Ur.shape[1])
    r = sigmoid(x @ w.Wr.T + h @ w.Ur.T + w.br)
    z = sigmoid(x @ w.Wz.T + h @ w.Uz.T + w.bz)
    rh = r * h
    hh = np.tanh(x @ w.Wh.T + rh @ w.Uh.T + w.bh)
    h_new = (1.0 - z) * h + z * hh
    cache = (x, h, r, z, rh, hh)
    return h_new, cache


def gru_cell_backward(dh_new: np.ndarray, cache, w: GruWeights):
    """Exact gradients for one GRU step; returns (dx, dh, GruGrads)."""
    x, h, r, z, rh, hh = cache

    dhh = dh_new * z
    dz = dh_new * (hh - h)
    dh = dh_new * (1.0 - z)

    da_h = tanh_backward(dhh, hh)
    dWh = da_h.T @ x
    dUh = da_h.T @ rh
    dbh = da_h.sum(axis=0)
    drh = da_h @ w.Uh
    dr = drh * h
    dh = dh + drh * r
    dx = da_h @ w.Wh

    da_z = sigmoid_backward(dz, z)
    dWz = da_z.T @ x
    dUz = da_z.T @ h
    dbz = da_z.sum(axis=0)
    dx += da_z @ w.Wz
    dh += da_z @ w.Uz

    da_r = sigmoid_backward(dr, r)
    dWr = da_r.T @ x
    dUr = da_r.T @ h
    dbr = da_r.sum(axis=0)
    dx += da_r @ w.Wr
    dh += da_r @ w.Ur

    return dx, dh, GruGrads(dWr, dUr, dbr, dWz, dUz, dbz, dWh, dUh, dbh)


# ---------------------------------------------------------------------------
# losses and misc

def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: np.ndarray, targets: np.ndarray, mask: np.ndarray):
    """Mean negative log-likelihood over masked positions.

    logits (N, V), targets (N,) int, mask (N,) in {0,1}.  Returns
    (loss, dlogits) with dlogits already scaled for upstream gradient 1.
    """
    _check_2d("softmax logits", logits)
    n_active = float(mask.sum())
    if n_active == 0:
        return logits.dtype.type(0.0), np.zeros_like(logits)
    logp = log_softmax(logits)
    nll = -logp[np.arange(len(targets)), targets] * mask
    loss = nll.sum() / n_active

    probs = np.exp(logp)
    dlogits = probs
    dlogits[np.arange(len(targets)), targets] -= 1.0
    dlogits *= (mask / n_active)[:, None]
    return loss, dlogits


def l2sq_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise squared L2 distance."""
    diff = a - b
    return (diff * diff).sum(axis=-1)


def concat_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat: row counts differ, {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=1)
