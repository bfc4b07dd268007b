"""Dense, LSTM and 1-D convolution layers with hand-written backward passes.

Every layer holds its parameters in ``self.params`` (name -> float64 array).
``forward`` is pure; ``forward_cache`` additionally returns what ``backward``
needs, and ``backward`` returns ``(dx, grads)`` without touching the layer.
Inputs are batched: dense takes ``(B, in)``, the sequence layers take
``(B, T, in)``.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str = "relu", rng=None):
        if activation not in ("relu", "none"):
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "W": glorot(rng, (n_out, n_in), n_in, n_out),
            "b": np.zeros(n_out),
        }

    def spec(self) -> dict:
        return {"kind": "dense", "in": self.n_in, "out": self.n_out, "activation": self.activation}

    def forward_cache(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense expects (B, {self.n_in}), got {x.shape}")
        z = x @ self.params["W"].T + self.params["b"]
        y = np.maximum(z, 0.0) if self.activation == "relu" else z
        return y, (x, z)

    def forward(self, x):
        return self.forward_cache(x)[0]

    def backward(self, cache, dy):
        x, z = cache
        dz = dy * (z > 0) if self.activation == "relu" else dy
        grads = {"W": dz.T @ x, "b": dz.sum(axis=0)}
        return dz @ self.params["W"], grads


class LSTM:
    """Single-layer LSTM returning the last hidden state.

    Gate blocks in W, U and b are ordered input, forget, cell, output.
    """

    kind = "lstm"

    def __init__(self, n_in: int, hidden: int, rng=None):
        self.n_in, self.hidden = n_in, hidden
        rng = rng if rng is not None else np.random.default_rng(0)
        h4 = 4 * hidden
        b = np.zeros(h4)
        b[hidden : 2 * hidden] = 1.0
        self.params = {
            "W": glorot(rng, (h4, n_in), n_in, h4),
            "U": glorot(rng, (h4, hidden), hidden, h4),
            "b": b,
        }

    def spec(self) -> dict:
        return {"kind": "lstm", "in": self.n_in, "hidden": self.hidden}

    def forward_cache(self, xs):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 3 or xs.shape[2] != self.n_in:
            raise ShapeError(f"lstm expects (B, T, {self.n_in}), got {xs.shape}")
        B, T, _ = xs.shape
        if T == 0:
            raise ShapeError("lstm needs a non-empty sequence")
        H = self.hidden
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        xw = xs @ W.T + b
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        hs, cs, gates = [h], [c], []
        for t in range(T):
            a = xw[:, t] + h @ U.T
            i = sigmoid(a[:, :H])
            f = sigmoid(a[:, H : 2 * H])
            g = np.tanh(a[:, 2 * H : 3 * H])
            o = sigmoid(a[:, 3 * H :])
            c = f * c + i * g
            h = o * np.tanh(c)
            gates.append((i, f, g, o))
            hs.append(h)
            cs.append(c)
        return h, (xs, hs, cs, gates)

    def forward(self, xs):
        return self.forward_cache(xs)[0]

    def backward(self, cache, dh_last):
        xs, hs, cs, gates = cache
        W, U = self.params["W"], self.params["U"]
        B, T, _ = xs.shape
        H = self.hidden
        dW = np.zeros_like(W)
        dU = np.zeros_like(U)
        db = np.zeros(4 * H)
        dxs = np.empty_like(xs)
        dh = dh_last
        dc = np.zeros((B, H))
        da = np.empty((B, 4 * H))
        for t in range(T - 1, -1, -1):
            i, f, g, o = gates[t]
            tc = np.tanh(cs[t + 1])
            dc = dc + dh * o * (1.0 - tc * tc)
            da[:, :H] = dc * g * i * (1.0 - i)
            da[:, H : 2 * H] = dc * cs[t] * f * (1.0 - f)
            da[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
            da[:, 3 * H :] = dh * tc * o * (1.0 - o)
            dW += da.T @ xs[:, t]
            dU += da.T @ hs[t]
            db += da.sum(axis=0)
            dxs[:, t] = da @ W
            dh = da @ U
            dc = dc * f
        return dxs, {"W": dW, "U": dU, "b": db}


class Conv1d:
    """Same-padded temporal convolution, ReLU, then global average pooling."""

    kind = "conv1d"

    def __init__(self, n_in: int, n_out: int, kernel: int = 5, rng=None):
        if kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.n_in, self.n_out, self.kernel = n_in, n_out, kernel
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = {
            "filters": glorot(rng, (n_out, n_in, kernel), n_in * kernel, n_out * kernel),
            "b": np.zeros(n_out),
        }

    def spec(self) -> dict:
        return {"kind": "conv1d", "in": self.n_in, "out": self.n_out, "kernel": self.kernel}

    def _wmat(self):
        # column index j*C + c  <->  filters[:, c, j]
        return self.params["filters"].transpose(0, 2, 1).reshape(self.n_out, -1)

    def _im2col(self, xs):
        B, T, C = xs.shape
        p = self.kernel // 2
        padded = np.zeros((B, T + 2 * p, C))
        padded[:, p : p + T] = xs
        return np.concatenate([padded[:, j : j + T] for j in range(self.kernel)], axis=2)

    def forward_cache(self, xs):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 3 or xs.shape[2] != self.n_in:
            raise ShapeError(f"conv1d expects (B, T, {self.n_in}), got {xs.shape}")
        if xs.shape[1] < self.kernel:
            raise ShapeError(f"sequence length {xs.shape[1]} shorter than kernel {self.kernel}")
        cols = self._im2col(xs)
        z = cols @ self._wmat().T + self.params["b"]
        pooled = np.maximum(z, 0.0).mean(axis=1)
        return pooled, (xs.shape, cols, z)

    def forward(self, xs):
        return self.forward_cache(xs)[0]

    def backward(self, cache, dpooled):
        (B, T, C), cols, z = cache
        dz = (z > 0) * (dpooled[:, None, :] / T)
        dwmat = dz.reshape(-1, self.n_out).T @ cols.reshape(B * T, -1)
        dfilters = dwmat.reshape(self.n_out, self.kernel, C).transpose(0, 2, 1)
        dcols = dz @ self._wmat()
        p = self.kernel // 2
        dpad = np.zeros((B, T + 2 * p, C))
        for j in range(self.kernel):
            dpad[:, j : j + T] += dcols[:, :, j * C : (j + 1) * C]
        return dpad[:, p : p + T], {"filters": dfilters, "b": dz.sum(axis=(0, 1))}


def softmax(logits):
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, labels):
    """Softmax probabilities, mean cross-entropy and its gradient wrt logits.

    Accepts one logit vector with an int label, or a ``(B, K)`` batch with a
    label array; for a batch the loss and gradient are averaged over rows.
    """
    logits = np.asarray(logits, dtype=float)
    single = logits.ndim == 1
    z = logits[None] if single else logits
    y = np.atleast_1d(np.asarray(labels))
    B, K = z.shape
    if K < 2:
        raise ShapeError("need at least two logits")
    if y.shape != (B,) or np.any(y < 0) or np.any(y >= K):
        raise ValueError(f"labels out of range for {K} classes")
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    p = np.exp(logp)
    loss = -logp[np.arange(B), y].mean()
    grad = p.copy()
    grad[np.arange(B), y] -= 1.0
    grad /= B
    if single:
        return p[0], loss, grad[0]
    return p, loss, grad


def forward_dense(layer: Dense, x):
    return layer.forward(np.asarray(x, dtype=float)[None])[0]


def forward_lstm(layer: LSTM, seq):
    return layer.forward(np.asarray(seq, dtype=float)[None])[0]


def forward_conv1d(layer: Conv1d, seq):
    return layer.forward(np.asarray(seq, dtype=float)[None])[0]
