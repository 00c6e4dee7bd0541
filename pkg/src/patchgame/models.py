"""Built-in differentiable toy classifiers and their on-disk fixture format.

Desk-scale stand-ins for real networks: a linear-softmax model and a
one-hidden-layer tanh MLP, both with analytic input gradients of the
untargeted cross-entropy loss.  Weights are generated float32-representable
so exporting them to the raw float32 tensor format is lossless and an
external process can reproduce the model bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .imaging import read_raw_array, write_raw_array

META_FILE = "meta.json"
FLATTEN_ORDER = "chw"  # inputs flatten channel-major, the in-memory layout


@runtime_checkable
class ProbabilityModel(Protocol):
    """Classifier contract used by oracles and attacks.

    ``predict_proba`` takes a (B, C, H, W) float64 batch and returns
    (B, num_classes) probabilities.  ``input_shape`` is (H, W, C), the order
    used on the wire and in fixture metadata.
    """

    num_classes: int
    input_shape: tuple[int, int, int]

    def predict_proba(self, batch: np.ndarray) -> np.ndarray: ...


class GradientModel(ProbabilityModel, Protocol):
    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        """d(cross-entropy loss on ``label``)/d(input), shaped like x."""
        ...


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _flatten_batch(batch: np.ndarray, input_shape: tuple[int, int, int]) -> np.ndarray:
    h, w, c = input_shape
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[1:] != (c, h, w):
        raise ValueError(
            f"expected batch shaped (B, {c}, {h}, {w}), got {batch.shape}"
        )
    return batch.reshape(batch.shape[0], -1)


def _check_label(label: int, num_classes: int) -> None:
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range [0, {num_classes})")


@dataclass(frozen=True)
class LinearSoftmaxModel:
    """softmax(W v + b) over the flattened image v."""

    weight: np.ndarray  # (K, D)
    bias: np.ndarray  # (K,)
    input_shape: tuple[int, int, int]

    kind = "linear"

    def __post_init__(self) -> None:
        h, w, c = self.input_shape
        if self.weight.shape != (self.bias.shape[0], h * w * c):
            raise ValueError(
                f"weight shape {self.weight.shape} does not match "
                f"{self.bias.shape[0]} classes x {h * w * c} inputs"
            )
        self.weight.setflags(write=False)
        self.bias.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return self.bias.shape[0]

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        v = _flatten_batch(batch, self.input_shape)
        return softmax(v @ self.weight.T + self.bias)

    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        _check_label(label, self.num_classes)
        probs = self.predict_proba(x[None])[0]
        probs[label] -= 1.0
        return (self.weight.T @ probs).reshape(x.shape)

    def tensors(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


@dataclass(frozen=True)
class TanhMlpModel:
    """softmax(W2 tanh(W1 v + b1) + b2); smooth, so gradients are benign."""

    w1: np.ndarray  # (m, D)
    b1: np.ndarray  # (m,)
    w2: np.ndarray  # (K, m)
    b2: np.ndarray  # (K,)
    input_shape: tuple[int, int, int]

    kind = "mlp"

    def __post_init__(self) -> None:
        h, w, c = self.input_shape
        m = self.b1.shape[0]
        if self.w1.shape != (m, h * w * c) or self.w2.shape != (self.b2.shape[0], m):
            raise ValueError("MLP tensor shapes are inconsistent")
        for t in (self.w1, self.b1, self.w2, self.b2):
            t.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return self.b2.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.b1.shape[0]

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        v = _flatten_batch(batch, self.input_shape)
        hidden = np.tanh(v @ self.w1.T + self.b1)
        return softmax(hidden @ self.w2.T + self.b2)

    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        _check_label(label, self.num_classes)
        v = _flatten_batch(x[None], self.input_shape)[0]
        hidden = np.tanh(self.w1 @ v + self.b1)
        probs = softmax(self.w2 @ hidden + self.b2)
        probs[label] -= 1.0
        d_hidden = (self.w2.T @ probs) * (1.0 - hidden**2)
        return (self.w1.T @ d_hidden).reshape(x.shape)

    def tensors(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass(frozen=True)
class ConstantModel:
    """Always returns the same probability vector; gradient is zero."""

    probs: tuple[float, ...]
    input_shape: tuple[int, int, int]

    kind = "constant"

    @property
    def num_classes(self) -> int:
        return len(self.probs)

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        _flatten_batch(batch, self.input_shape)
        return np.tile(np.asarray(self.probs, np.float64), (batch.shape[0], 1))

    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        _check_label(label, self.num_classes)
        return np.zeros_like(x)


def _uniform_fan_in(
    rng: np.random.Generator, rows: int, cols: int
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded uniform [-a, a] weight matrix and bias, a = 1/sqrt(fan-in),
    rounded to float32 so the fixture export loses nothing."""
    a = 1.0 / np.sqrt(cols)
    w = rng.uniform(-a, a, size=(rows, cols))
    b = rng.uniform(-a, a, size=rows)
    quant = lambda t: t.astype(np.float32).astype(np.float64)
    return quant(w), quant(b)


def builtin_linear_model(
    num_classes: int, input_shape: tuple[int, int, int], seed: int
) -> LinearSoftmaxModel:
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    h, w, c = input_shape
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    weight, bias = _uniform_fan_in(rng, num_classes, h * w * c)
    return LinearSoftmaxModel(weight, bias, (h, w, c))


def builtin_mlp_model(
    num_classes: int,
    input_shape: tuple[int, int, int],
    hidden_width: int,
    seed: int,
) -> TanhMlpModel:
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if hidden_width < 1:
        raise ValueError("hidden_width must be >= 1")
    h, w, c = input_shape
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    w1, b1 = _uniform_fan_in(rng, hidden_width, h * w * c)
    w2, b2 = _uniform_fan_in(rng, num_classes, hidden_width)
    return TanhMlpModel(w1, b1, w2, b2, (h, w, c))


def predict_labels(model: ProbabilityModel, batch: np.ndarray) -> np.ndarray:
    """Top-1 class indices for a (B, C, H, W) batch."""
    return np.argmax(model.predict_proba(batch), axis=1)


# ------------------------------------------------------- fixture directory


def export_weights(model: LinearSoftmaxModel | TanhMlpModel, out_dir: str | Path) -> Path:
    """Write a model as meta.json plus one raw float32 tensor file each.

    The written directory is the parity fixture consumed by external oracle
    implementations; loading it back reproduces the model bitwise.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h, w, c = model.input_shape
    meta: dict = {
        "kind": model.kind,
        "num_classes": model.num_classes,
        "input_shape": [h, w, c],
        "flatten_order": FLATTEN_ORDER,
        "tensors": {},
    }
    if isinstance(model, TanhMlpModel):
        meta["hidden_width"] = model.hidden_width
    for name, tensor in model.tensors().items():
        filename = f"{name}.ilns"
        write_raw_array(_as_3d(tensor), out / filename)
        meta["tensors"][name] = {"file": filename, "shape": list(tensor.shape)}
    with open(out / META_FILE, "w", encoding="utf-8") as handle:
        json.dump(meta, handle, indent=2, sort_keys=True)
        handle.write("\n")
    return out


def load_weights(fixture_dir: str | Path) -> LinearSoftmaxModel | TanhMlpModel:
    """Load a fixture directory written by :func:`export_weights`."""
    root = Path(fixture_dir)
    meta_path = root / META_FILE
    if not meta_path.is_file():
        raise FileNotFoundError(f"model fixture metadata missing: {meta_path}")
    with open(meta_path, encoding="utf-8") as handle:
        meta = json.load(handle)
    tensors = {
        name: _from_3d(read_raw_array(root / entry["file"]), entry["shape"], name)
        for name, entry in meta["tensors"].items()
    }
    shape = tuple(meta["input_shape"])
    kind = meta.get("kind")
    if kind == "linear":
        return LinearSoftmaxModel(tensors["weight"], tensors["bias"], shape)
    if kind == "mlp":
        return TanhMlpModel(
            tensors["w1"], tensors["b1"], tensors["w2"], tensors["b2"], shape
        )
    raise ValueError(f"unknown model kind {kind!r} in {meta_path}")


def _as_3d(tensor: np.ndarray) -> np.ndarray:
    if tensor.ndim == 1:
        return tensor[:, None, None]
    if tensor.ndim == 2:
        return tensor[:, :, None]
    raise ValueError(f"cannot store a {tensor.ndim}-D tensor")


def _from_3d(stored: np.ndarray, shape: list[int], name: str) -> np.ndarray:
    expected = int(np.prod(shape))
    if stored.size != expected:
        raise ValueError(
            f"tensor {name!r}: file holds {stored.size} values, metadata "
            f"says {shape}"
        )
    return np.ascontiguousarray(stored.reshape(shape))
