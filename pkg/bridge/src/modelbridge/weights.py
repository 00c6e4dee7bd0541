"""Loader for the shared toy-weights fixture directory.

A fixture is meta.json plus one raw tensor file per parameter.  Raw tensor
files carry a 16-byte header (magic ``ILNS``, then height, width, channels
as little-endian uint32) followed by the values as little-endian float32 in
C-order.  The loader is intentionally self-contained: it shares a wire
format with the toolkit that writes these fixtures, not code, so format
drift on either side shows up as a test failure instead of silently
propagating.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RAW_MAGIC = b"ILNS"
_HEADER = struct.Struct("<4sIII")
META_FILE = "meta.json"


class WeightsError(ValueError):
    """The fixture directory is malformed or inconsistent."""


def read_tensor_file(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise WeightsError(f"{path}: truncated tensor file")
    magic, h, w, c = _HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise WeightsError(f"{path}: bad magic {magic!r}")
    if len(blob) != _HEADER.size + 4 * h * w * c:
        raise WeightsError(
            f"{path}: header promises {h}x{w}x{c}, payload size disagrees"
        )
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return values.astype(np.float64).reshape(h, w, c)


def _load_tensor(root: Path, name: str, entry: dict) -> np.ndarray:
    stored = read_tensor_file(root / entry["file"])
    shape = tuple(int(v) for v in entry["shape"])
    if stored.size != math.prod(shape):
        raise WeightsError(
            f"tensor {name!r}: file holds {stored.size} values, "
            f"metadata says {shape}"
        )
    return stored.reshape(shape)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ToyModel:
    """Linear or one-hidden-layer tanh classifier over flattened pixels.

    Inputs arrive in wire order, (B, H, W, C); ``flatten_order`` from the
    fixture says how to serialize pixels before the first matrix.  Only
    channel-major ("chw") fixtures exist today.
    """

    kind: str
    tensors: dict[str, np.ndarray]
    input_shape: tuple[int, int, int]
    flatten_order: str

    @property
    def num_classes(self) -> int:
        if self.kind == "linear":
            return self.tensors["bias"].shape[0]
        return self.tensors["b2"].shape[0]

    def _flatten(self, batch: np.ndarray) -> np.ndarray:
        h, w, c = self.input_shape
        if batch.ndim != 4 or batch.shape[1:] != (h, w, c):
            raise ValueError(
                f"expected batch shaped (B, {h}, {w}, {c}), got {batch.shape}"
            )
        # chw: channel varies slowest, exactly how the toolkit lays out memory
        return batch.transpose(0, 3, 1, 2).reshape(batch.shape[0], -1)

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        v = self._flatten(np.asarray(batch, dtype=np.float64))
        if self.kind == "linear":
            return _softmax(v @ self.tensors["weight"].T + self.tensors["bias"])
        hidden = np.tanh(v @ self.tensors["w1"].T + self.tensors["b1"])
        return _softmax(hidden @ self.tensors["w2"].T + self.tensors["b2"])

    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        """d(cross-entropy at ``label``)/dx for one (H, W, C) image."""
        h, w, c = self.input_shape
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (h, w, c):
            raise ValueError(f"expected image shaped ({h}, {w}, {c}), got {x.shape}")
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} out of range [0, {self.num_classes})")
        v = self._flatten(x[None])[0]
        if self.kind == "linear":
            probs = _softmax(self.tensors["weight"] @ v + self.tensors["bias"])
            probs[label] -= 1.0
            flat = self.tensors["weight"].T @ probs
        else:
            hidden = np.tanh(self.tensors["w1"] @ v + self.tensors["b1"])
            probs = _softmax(self.tensors["w2"] @ hidden + self.tensors["b2"])
            probs[label] -= 1.0
            d_hidden = (self.tensors["w2"].T @ probs) * (1.0 - hidden**2)
            flat = self.tensors["w1"].T @ d_hidden
        return flat.reshape(c, h, w).transpose(1, 2, 0)


_REQUIRED = {"linear": ("weight", "bias"), "mlp": ("w1", "b1", "w2", "b2")}


def load_builtin_weights(fixture_dir: str | Path) -> ToyModel:
    root = Path(fixture_dir)
    meta_path = root / META_FILE
    if not meta_path.is_file():
        raise WeightsError(f"fixture metadata missing: {meta_path}")
    with open(meta_path, encoding="utf-8") as handle:
        try:
            meta = json.load(handle)
        except json.JSONDecodeError as err:
            raise WeightsError(f"{meta_path}: {err}") from None
    kind = meta.get("kind")
    if kind not in _REQUIRED:
        raise WeightsError(f"unsupported model kind {kind!r}")
    flatten_order = meta.get("flatten_order", "chw")
    if flatten_order != "chw":
        raise WeightsError(f"unsupported flatten order {flatten_order!r}")
    shape = meta.get("input_shape")
    if not (
        isinstance(shape, list)
        and len(shape) == 3
        and all(isinstance(v, int) and v > 0 for v in shape)
    ):
        raise WeightsError(f"bad input_shape in metadata: {shape!r}")
    entries = meta.get("tensors", {})
    missing = [name for name in _REQUIRED[kind] if name not in entries]
    if missing:
        raise WeightsError(f"fixture lacks tensors {missing}")
    tensors = {
        name: _load_tensor(root, name, entries[name]) for name in _REQUIRED[kind]
    }
    h, w, c = shape
    dims = {
        "linear": ("weight", h * w * c),
        "mlp": ("w1", h * w * c),
    }[kind]
    if tensors[dims[0]].shape[-1] != dims[1]:
        raise WeightsError(
            f"tensor {dims[0]!r} has {tensors[dims[0]].shape[-1]} columns, "
            f"input shape {shape} needs {dims[1]}"
        )
    return ToyModel(kind, tensors, (h, w, c), flatten_order)
