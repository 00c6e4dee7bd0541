"""Pluggable model adapters.

An adapter is any object with ``predict_proba`` over (B, H, W, C) float
batches, ``loss_gradient`` for one (H, W, C) image and an integer label,
plus ``num_classes`` and ``input_shape``.  Framework models slot in by
wrapping preprocess/forward/postprocess behind those two calls; the bridge
itself stays framework-free.
"""

from __future__ import annotations

import importlib
from typing import Protocol, runtime_checkable

import numpy as np

from .weights import load_builtin_weights


@runtime_checkable
class ModelAdapter(Protocol):
    num_classes: int
    input_shape: tuple[int, int, int]

    def predict_proba(self, batch: np.ndarray) -> np.ndarray: ...

    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray: ...


def load_adapter(spec: str) -> ModelAdapter:
    """Resolve ``package.module:callable`` and call it with no arguments.

    The callable builds and returns the adapter; anything the model needs
    (checkpoint paths, devices) is the callable's own business, usually
    closed over via a tiny user-written module.
    """
    module_name, sep, attr = spec.partition(":")
    if not sep or not module_name or not attr:
        raise ValueError(
            f"adapter spec must look like package.module:callable, got {spec!r}"
        )
    try:
        module = importlib.import_module(module_name)
    except ImportError as err:
        raise ValueError(f"cannot import adapter module {module_name!r}: {err}")
    factory = getattr(module, attr, None)
    if factory is None:
        raise ValueError(f"module {module_name!r} has no attribute {attr!r}")
    adapter = factory()
    if not isinstance(adapter, ModelAdapter):
        raise TypeError(
            f"{spec} returned {type(adapter).__name__}, which does not "
            "provide the adapter interface"
        )
    return adapter


def adapter_from_weights(fixture_dir: str) -> ModelAdapter:
    """Adapter for an exported toy-weights fixture (the parity path)."""
    return load_builtin_weights(fixture_dir)
