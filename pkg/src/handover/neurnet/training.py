"""Minibatch SGD trainer and the on-disk model bundle.

Bundle file layout (JSON, one object)::

    {
      "format_version": 1,
      "architecture": {"topology": "mlp" | "lstm_fcn", "layers": [...]},
      "labels": ["open", "closed", "occupied"],
      "param_count": 6371,
      "params_b64": "<base64 of little-endian float64 values>",
      "seed": 0, "epochs": 60, "lr": 0.05, "batch": 32,
      "losses": [1.08, 0.61, ...]
    }

Parameters are concatenated layer by layer in descriptor order, each array
row-major. Base64 keeps the float64 values bit-exact across a round trip.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import softmax, softmax_xent
from .models import build_model, get_flat, param_count, set_flat

log = logging.getLogger(__name__)

FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite in epoch {epoch}")
        self.epoch = epoch


class BundleError(ValueError):
    pass


class UnsupportedVersionError(BundleError):
    pass


@dataclass(eq=False)
class ModelBundle:
    architecture: dict
    params: np.ndarray
    labels: list[str]
    seed: int = 0
    epochs: int = 0
    lr: float = 0.0
    batch: int = 0
    losses: list[float] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        expected = param_count(self.architecture)
        if self.params.size != expected:
            raise BundleError(f"bundle carries {self.params.size} parameters, architecture needs {expected}")
        self._model = None

    def model(self):
        if self._model is None:
            m = build_model(self.architecture)
            set_flat(m, self.params)
            self._model = m
        return self._model

    def logits(self, x) -> np.ndarray:
        return self.model().forward(x)

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.logits(x))

    def predict(self, x) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def to_dict(self) -> dict:
        blob = self.params.astype("<f8").tobytes()
        return {
            "format_version": self.format_version,
            "architecture": self.architecture,
            "labels": list(self.labels),
            "param_count": int(self.params.size),
            "params_b64": base64.b64encode(blob).decode("ascii"),
            "seed": self.seed,
            "epochs": self.epochs,
            "lr": self.lr,
            "batch": self.batch,
            "losses": list(self.losses),
        }


def save(bundle: ModelBundle, sink) -> None:
    """Write ``bundle`` to a path or an open text file."""
    text = json.dumps(bundle.to_dict(), sort_keys=True, indent=1) + "\n"
    if hasattr(sink, "write"):
        sink.write(text)
    else:
        Path(sink).write_text(text)


def loads(text: str) -> ModelBundle:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BundleError(f"bundle is not valid JSON: {exc.msg}") from None
    if not isinstance(d, dict):
        raise BundleError("bundle must be a JSON object")
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported bundle format_version {version!r} (expected {FORMAT_VERSION})")
    try:
        raw = base64.b64decode(d["params_b64"], validate=True)
        arch = d["architecture"]
        labels = d["labels"]
    except (KeyError, binascii.Error) as exc:
        raise BundleError(f"malformed bundle: {exc}") from None
    if len(raw) % 8:
        raise BundleError("parameter blob length is not a multiple of 8 bytes")
    params = np.frombuffer(raw, dtype="<f8").astype(float)
    if params.size != d.get("param_count"):
        raise BundleError(f"parameter blob holds {params.size} values, header says {d.get('param_count')}")
    try:
        expected = param_count(arch)
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"bad architecture: {exc}") from None
    if params.size != expected:
        raise BundleError(f"parameter count {params.size} does not match architecture ({expected})")
    if len(labels) != build_model(arch).n_classes:
        raise BundleError("label count does not match the output layer")
    return ModelBundle(
        architecture=arch,
        params=params,
        labels=list(labels),
        seed=d.get("seed", 0),
        epochs=d.get("epochs", 0),
        lr=d.get("lr", 0.0),
        batch=d.get("batch", 0),
        losses=list(d.get("losses", [])),
    )


def load(source) -> ModelBundle:
    if hasattr(source, "read"):
        return loads(source.read())
    return loads(Path(source).read_text())


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def train(
    architecture: dict,
    x: np.ndarray,
    y: np.ndarray,
    labels: list[str],
    *,
    lr: float = 0.05,
    epochs: int = 50,
    batch: int = 32,
    seed: int = 0,
    clip: float = 5.0,
) -> ModelBundle:
    """Fit a freshly initialized network with plain minibatch SGD.

    The same seed drives initialization and shuffling, so two calls with the
    same arguments return bit-identical bundles.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(x) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(x) != len(y):
        raise ValueError("inputs and labels differ in length")
    rng = np.random.default_rng(seed)
    model = build_model(architecture, rng)
    if model.n_classes != len(labels):
        raise ValueError(f"head has {model.n_classes} outputs but {len(labels)} labels were given")
    if y.min() < 0 or y.max() >= len(labels):
        raise ValueError("label index out of range")
    if epochs == 0:
        log.warning("epochs=0: bundle keeps the initial weights")

    params = dict(model.named_params())
    n = len(x)
    losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            logits, caches = model.forward_cache(x[idx])
            _, loss, dlogits = softmax_xent(logits, y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            grads = model.backward(caches, dlogits)
            clip_by_global_norm(grads, clip)
            for name, g in grads.items():
                params[name] -= lr * g
            total += loss * len(idx)
        epoch_loss = total / n
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        losses.append(float(epoch_loss))
        log.debug("epoch %d loss %.5f", epoch, epoch_loss)

    return ModelBundle(
        architecture=architecture,
        params=get_flat(model),
        labels=list(labels),
        seed=seed,
        epochs=epochs,
        lr=lr,
        batch=batch,
        losses=losses,
    )
