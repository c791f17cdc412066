"""Minimal neural machinery: dense layers, a gated recurrent encoder,
SmoothL1 / binary cross-entropy losses, Adam, and finite-difference checks.

Everything runs in float64 numpy with batch-first shapes. forward() returns a
tape that the matching backward() consumes, so evaluating a frozen model is
pure and thread-safe while training mutates its own copy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BCE_CLAMP = 1e-7
ACTIVATIONS = ("tanh", "relu", "sigmoid", "identity")


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _apply_act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    return z


def _act_grad_from_output(name, y):
    """d act(z) / d z expressed through the activation output."""
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (y > 0.0).astype(float)
    if name == "sigmoid":
        return y * (1.0 - y)
    return np.ones_like(y)


def glorot(rng, n_out, n_in, scale=1.0):
    limit = scale * math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_out, n_in))


class Dense:
    """Fully connected layer, y = act(x @ W.T + b), batched over axis 0."""

    def __init__(self, rng, n_in, n_out, activation="tanh", scale=1.0):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.W = glorot(rng, n_out, n_in, scale)
        self.b = np.zeros(n_out)
        self.activation = activation

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.W.shape[1]:
            raise ValueError(
                f"dense layer expects {self.W.shape[1]} inputs, got {x.shape[1]}")
        y = _apply_act(self.activation, x @ self.W.T + self.b)
        return y, (x, y)

    def backward(self, tape, dy):
        x, y = tape
        dz = np.asarray(dy, dtype=float) * _act_grad_from_output(self.activation, y)
        return dz @ self.W, {"W": dz.T @ x, "b": dz.sum(axis=0)}

    def params(self):
        return {"W": self.W, "b": self.b}


class MLP:
    """Stack of Dense layers; parameter names are 'l{i}.W' / 'l{i}.b'."""

    def __init__(self, rng, sizes, activation="tanh", out_activation=None, scale=1.0):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        acts = [activation] * (len(sizes) - 2) + [out_activation or activation]
        self.layers = [Dense(rng, sizes[i], sizes[i + 1], acts[i], scale)
                       for i in range(len(sizes) - 1)]

    def forward(self, x):
        tapes = []
        for layer in self.layers:
            x, tape = layer.forward(x)
            tapes.append(tape)
        return x, tapes

    def backward(self, tapes, dy):
        grads = {}
        for i in reversed(range(len(self.layers))):
            dy, g = self.layers[i].backward(tapes[i], dy)
            grads[f"l{i}.W"] = g["W"]
            grads[f"l{i}.b"] = g["b"]
        return dy, grads

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"l{i}.W"] = layer.W
            out[f"l{i}.b"] = layer.b
        return out


class GruEncoder:
    """Gated recurrent encoder over a sequence; emits the final hidden state.

    Gate equations (batch B, hidden H, input D):
        z = sig(xz + h Uz.T),  r = sig(xr + h Ur.T)
        c = tanh(xc + (r*h) Uc.T)
        h' = (1 - z) * h + z * c
    where (xz, xr, xc) = x Wx.T + b is precomputed for all timesteps at once.
    """

    def __init__(self, rng, n_in, hidden):
        self.n_in = n_in
        self.hidden = hidden
        self.Wx = glorot(rng, 3 * hidden, n_in)
        self.Uzr = glorot(rng, 2 * hidden, hidden)
        self.Uc = glorot(rng, hidden, hidden)
        self.b = np.zeros(3 * hidden)

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None, :, :]
        B, T, D = x.shape
        if D != self.n_in:
            raise ValueError(f"encoder expects {self.n_in} features, got {D}")
        H = self.hidden
        xp = (x.reshape(B * T, D) @ self.Wx.T + self.b).reshape(B, T, 3 * H)
        h = np.zeros((B, H))
        steps = []
        for t in range(T):
            zr = sigmoid(xp[:, t, :2 * H] + h @ self.Uzr.T)
            z, r = zr[:, :H], zr[:, H:]
            rh = r * h
            c = np.tanh(xp[:, t, 2 * H:] + rh @ self.Uc.T)
            h_new = (1.0 - z) * h + z * c
            steps.append((h, z, r, c, rh))
            h = h_new
        return h, (x, steps)

    def backward(self, tape, dh):
        x, steps = tape
        B, T, D = x.shape
        H = self.hidden
        dh = np.asarray(dh, dtype=float).reshape(B, H).copy()
        dxp = np.zeros((B, T, 3 * H))
        dUzr = np.zeros_like(self.Uzr)
        dUc = np.zeros_like(self.Uc)
        Uz, Ur = self.Uzr[:H], self.Uzr[H:]
        for t in reversed(range(T)):
            h_prev, z, r, c, rh = steps[t]
            dz = dh * (c - h_prev)
            dc = dh * z
            dh_prev = dh * (1.0 - z)

            dpc = dc * (1.0 - c * c)
            dxp[:, t, 2 * H:] = dpc
            dUc += dpc.T @ rh
            drh = dpc @ self.Uc
            dh_prev += drh * r

            dpr = (drh * h_prev) * r * (1.0 - r)
            dxp[:, t, H:2 * H] = dpr
            dUzr[H:] += dpr.T @ h_prev
            dh_prev += dpr @ Ur

            dpz = dz * z * (1.0 - z)
            dxp[:, t, :H] = dpz
            dUzr[:H] += dpz.T @ h_prev
            dh_prev += dpz @ Uz

            dh = dh_prev
        flat = dxp.reshape(B * T, 3 * H)
        grads = {
            "Wx": flat.T @ x.reshape(B * T, D),
            "Uzr": dUzr,
            "Uc": dUc,
            "b": flat.sum(axis=0),
        }
        dx = (flat @ self.Wx).reshape(B, T, D)
        return dx, grads

    def params(self):
        return {"Wx": self.Wx, "Uzr": self.Uzr, "Uc": self.Uc, "b": self.b}


def huber(err):
    """Elementwise SmoothL1 values and derivatives (no reduction)."""
    err = np.asarray(err, dtype=float)
    small = np.abs(err) < 1.0
    vals = np.where(small, 0.5 * err * err, np.abs(err) - 0.5)
    grads = np.where(small, err, np.sign(err))
    return vals, grads


def smooth_l1(pred, target):
    """Mean SmoothL1 loss and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    vals, grads = huber(pred - target)
    return float(vals.mean()), grads / pred.size


def bce(prob, label):
    """Binary cross-entropy on a clamped probability; returns (loss, dloss/dprob)."""
    p = float(np.clip(prob, BCE_CLAMP, 1.0 - BCE_CLAMP))
    label = float(label)
    loss = -(label * math.log(p) + (1.0 - label) * math.log(1.0 - p))
    grad = -label / p + (1.0 - label) / (1.0 - p)
    return loss, grad


def bce_batch(probs, labels):
    """Vectorized mean BCE over a batch; returns (loss, dloss/dprobs)."""
    p = np.clip(np.asarray(probs, dtype=float), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(labels, dtype=float)
    loss = float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))
    grad = (-y / p + (1.0 - y) / (1.0 - p)) / p.size
    return loss, grad


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied in place to params."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
        if name not in params:
            raise KeyError(f"gradient for unknown parameter block {name!r}")
    state.step_count += 1
    b1c = 1.0 - state.beta1 ** state.step_count
    b2c = 1.0 - state.beta2 ** state.step_count
    for name, g in grads.items():
        p = params[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
        if not np.all(np.isfinite(p)):
            raise FloatingPointError(f"non-finite value in parameter block {name!r}")
    return params, state


def finite_difference(f, arrays, h=1e-5, entries=None):
    """Central finite differences of scalar f() w.r.t. entries of arrays.

    arrays: dict name -> np.ndarray that f reads when called with no args.
    entries: optional dict name -> flat indices to probe (default: all).
    Returns dict name -> array of d f / d entry at the probed indices.
    """
    out = {}
    for name, arr in arrays.items():
        flat = arr.reshape(-1)
        idx = list(entries[name]) if entries else list(range(flat.size))
        grads = np.zeros(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = f()
            flat[i] = old - h
            down = f()
            flat[i] = old
            grads[k] = (up - down) / (2.0 * h)
        out[name] = grads
    return out


def relative_error(a, b, floor=1e-6):
    """max |a-b| / max(|a|, |b|, floor), elementwise then reduced."""
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def save_params(path, params: dict, meta: dict | None = None) -> None:
    """Checkpoint as structured text: shapes + row-major values, full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "meta": meta or {},
        "params": {
            name: {"shape": list(arr.shape),
                   "data": [repr(float(v)) for v in arr.reshape(-1)]}
            for name, arr in sorted(params.items())
        },
    }
    path.write_text(json.dumps(blob, sort_keys=True, indent=1) + "\n")


def load_params(path):
    blob = json.loads(Path(path).read_text())
    params = {}
    for name, rec in blob["params"].items():
        arr = np.array([float(v) for v in rec["data"]], dtype=float)
        params[name] = arr.reshape(rec["shape"])
    return params, blob.get("meta", {})


def set_params(model_params: dict, loaded: dict) -> None:
    """Copy loaded arrays into a live parameter dict (shapes must match)."""
    for name, arr in loaded.items():
        if name not in model_params:
            raise KeyError(f"checkpoint has unknown parameter block {name!r}")
        if model_params[name].shape != arr.shape:
            raise ValueError(f"shape mismatch for {name!r}: "
                             f"{model_params[name].shape} vs {arr.shape}")
        model_params[name][...] = arr
