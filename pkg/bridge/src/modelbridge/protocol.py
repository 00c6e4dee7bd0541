"""Wire protocol primitives: newline-delimited JSON with float32 payloads.

One request per line, one reply per line, replies in request order.  Image
and gradient payloads are base64-encoded little-endian float32, flattened
from (H, W, C) in C-order; everything else is plain JSON.  Float32 on the
wire is deliberate: the contract stays auditable no matter what precision
the wrapped model uses internally.
"""

from __future__ import annotations

import base64
import json
from typing import IO

import numpy as np

PROTOCOL_VERSION = 1


class ProtocolError(ValueError):
    """A message violates the wire contract."""


def encode_floats(array: np.ndarray) -> str:
    return base64.b64encode(
        np.ascontiguousarray(array, dtype="<f4").tobytes()
    ).decode("ascii")


def decode_floats(data: str, count: int) -> np.ndarray:
    try:
        raw = base64.b64decode(data.encode("ascii"), validate=True)
    except (ValueError, UnicodeEncodeError) as err:
        raise ProtocolError(f"payload is not base64: {err}") from None
    if len(raw) != 4 * count:
        raise ProtocolError(
            f"payload holds {len(raw) // 4} floats, expected {count}"
        )
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def decode_image(data: str, shape_hwc: tuple[int, int, int]) -> np.ndarray:
    """Wire payload -> (H, W, C) float64 array."""
    h, w, c = shape_hwc
    if not isinstance(data, str):
        raise ProtocolError("image payload must be a base64 string")
    return decode_floats(data, h * w * c).reshape(h, w, c)


def encode_image(array: np.ndarray) -> str:
    """(H, W, C) array -> wire payload."""
    return encode_floats(array)


def parse_line(line: bytes) -> dict:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as err:
        raise ProtocolError(f"message is not JSON: {err}") from None
    if not isinstance(message, dict):
        raise ProtocolError("message must be a JSON object")
    return message


def write_message(stream: IO[bytes], message: dict) -> None:
    stream.write(json.dumps(message).encode("utf-8") + b"\n")
    stream.flush()
