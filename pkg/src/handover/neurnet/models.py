"""Network topologies built from the layer primitives."""

from __future__ import annotations

import numpy as np

from .layers import LSTM, Conv1d, Dense, ShapeError


class MLP:
    """Stack of dense layers; the last one emits logits."""

    topology = "mlp"

    def __init__(self, layers: list[Dense]):
        self.layers = layers

    @property
    def n_classes(self) -> int:
        return self.layers[-1].n_out

    def named_params(self):
        for k, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield f"{k}.{name}", arr

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def forward_cache(self, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward_cache(x)
            caches.append(c)
        return x, caches

    def backward(self, caches, dlogits):
        grads = {}
        d = dlogits
        for k in range(len(self.layers) - 1, -1, -1):
            d, g = self.layers[k].backward(caches[k], d)
            for name, arr in g.items():
                grads[f"{k}.{name}"] = arr
        return grads


class LstmFcn:
    """LSTM and conv branches read the same window; their features are
    concatenated and mapped to logits by one dense layer."""

    topology = "lstm_fcn"

    def __init__(self, lstm: LSTM, conv: Conv1d, head: Dense):
        if head.n_in != lstm.hidden + conv.n_out:
            raise ShapeError("head input must equal lstm hidden + conv channels")
        self.lstm, self.conv, self.head = lstm, conv, head
        self.layers = [lstm, conv, head]

    @property
    def n_classes(self) -> int:
        return self.head.n_out

    def named_params(self):
        for k, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield f"{k}.{name}", arr

    def forward(self, xs):
        feats = np.concatenate([self.lstm.forward(xs), self.conv.forward(xs)], axis=1)
        return self.head.forward(feats)

    def forward_cache(self, xs):
        h, c_lstm = self.lstm.forward_cache(xs)
        p, c_conv = self.conv.forward_cache(xs)
        logits, c_head = self.head.forward_cache(np.concatenate([h, p], axis=1))
        return logits, (c_lstm, c_conv, c_head)

    def backward(self, caches, dlogits):
        c_lstm, c_conv, c_head = caches
        dfeat, g_head = self.head.backward(c_head, dlogits)
        H = self.lstm.hidden
        _, g_lstm = self.lstm.backward(c_lstm, dfeat[:, :H])
        _, g_conv = self.conv.backward(c_conv, dfeat[:, H:])
        grads = {}
        for k, g in enumerate((g_lstm, g_conv, g_head)):
            for name, arr in g.items():
                grads[f"{k}.{name}"] = arr
        return grads


def gesture_architecture(n_in: int = 63, n_classes: int = 3, hidden=(64, 32)) -> dict:
    layers = []
    prev = n_in
    for h in hidden:
        layers.append({"kind": "dense", "in": prev, "out": h, "activation": "relu"})
        prev = h
    layers.append({"kind": "dense", "in": prev, "out": n_classes, "activation": "none"})
    return {"topology": "mlp", "layers": layers}


def movement_architecture(n_in: int = 63, n_classes: int = 4, hidden: int = 64, channels: int = 64,
                          kernel: int = 5) -> dict:
    return {
        "topology": "lstm_fcn",
        "layers": [
            {"kind": "lstm", "in": n_in, "hidden": hidden},
            {"kind": "conv1d", "in": n_in, "out": channels, "kernel": kernel},
            {"kind": "dense", "in": hidden + channels, "out": n_classes, "activation": "none"},
        ],
    }


def _layer_from_spec(spec: dict, rng):
    kind = spec.get("kind")
    if kind == "dense":
        return Dense(spec["in"], spec["out"], spec.get("activation", "relu"), rng=rng)
    if kind == "lstm":
        return LSTM(spec["in"], spec["hidden"], rng=rng)
    if kind == "conv1d":
        return Conv1d(spec["in"], spec["out"], spec["kernel"], rng=rng)
    raise ValueError(f"unknown layer kind {kind!r}")


def build_model(architecture: dict, rng=None):
    """Instantiate a freshly initialized network from its descriptor."""
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = [_layer_from_spec(s, rng) for s in architecture["layers"]]
    topology = architecture.get("topology")
    if topology == "mlp":
        if not all(isinstance(layer, Dense) for layer in layers):
            raise ValueError("mlp topology takes dense layers only")
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer widths do not chain: {a.n_out} -> {b.n_in}")
        return MLP(layers)
    if topology == "lstm_fcn":
        if [type(layer) for layer in layers] != [LSTM, Conv1d, Dense]:
            raise ValueError("lstm_fcn topology is [lstm, conv1d, dense]")
        return LstmFcn(*layers)
    raise ValueError(f"unknown topology {topology!r}")


def param_count(architecture: dict) -> int:
    return sum(arr.size for _, arr in build_model(architecture).named_params())


def get_flat(model) -> np.ndarray:
    return np.concatenate([arr.ravel() for _, arr in model.named_params()])


def set_flat(model, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=float)
    pos = 0
    for _, arr in model.named_params():
        n = arr.size
        if pos + n > flat.size:
            raise ValueError("parameter vector too short")
        arr[...] = flat[pos : pos + n].reshape(arr.shape)
        pos += n
    if pos != flat.size:
        raise ValueError(f"parameter vector has {flat.size} entries, model needs {pos}")
