"""Client for external classifier oracles speaking the bridge wire protocol.

The protocol is newline-delimited JSON over either the stdio of a spawned
bridge process or a TCP socket.  Handshake first, then eval/grad requests;
images and gradients travel as base64-encoded little-endian float32 in
(H, W, C) C-order.  One connection serves one request at a time; a
transport failure is retried once on a fresh connection, then surfaced.
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass
from typing import IO

import numpy as np

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 60.0


class BridgeError(RuntimeError):
    """Base class for everything the bridge client can raise."""


class BridgeTransportError(BridgeError):
    """Connection lost, process died, or a reply timed out."""


class BridgeProtocolError(BridgeError):
    """The bridge answered, but not in the shape the protocol promises."""


class BridgeVersionError(BridgeProtocolError):
    """Handshake version mismatch."""


class BridgeRemoteError(BridgeError):
    """The bridge reported an evaluation failure for this request."""


def encode_floats(array: np.ndarray) -> str:
    """Base64 of little-endian float32, flattened in C-order."""
    return base64.b64encode(
        np.ascontiguousarray(array, dtype="<f4").tobytes()
    ).decode("ascii")


def decode_floats(data: str, count: int) -> np.ndarray:
    raw = base64.b64decode(data.encode("ascii"), validate=True)
    if len(raw) != 4 * count:
        raise BridgeProtocolError(
            f"payload holds {len(raw) // 4} floats, expected {count}"
        )
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def image_to_wire(x: np.ndarray) -> str:
    """(C, H, W) float64 -> wire payload in (H, W, C) order."""
    return encode_floats(np.transpose(x, (1, 2, 0)))


def wire_to_image(data: str, shape_hwc: tuple[int, int, int]) -> np.ndarray:
    h, w, c = shape_hwc
    flat = decode_floats(data, h * w * c)
    return np.ascontiguousarray(flat.reshape(h, w, c).transpose(2, 0, 1))


@dataclass(frozen=True)
class BridgeEndpoint:
    """Where the bridge lives: a command to spawn, or a TCP address."""

    kind: str  # "stdio" | "tcp"
    command: tuple[str, ...] = ()
    host: str = ""
    port: int = 0
    timeout: float = DEFAULT_TIMEOUT

    def __post_init__(self) -> None:
        if self.kind == "stdio":
            if not self.command:
                raise ValueError("stdio endpoint needs a command to spawn")
        elif self.kind == "tcp":
            if not self.host or not 0 < self.port < 65536:
                raise ValueError("tcp endpoint needs host and port")
        else:
            raise ValueError(f"unknown endpoint kind {self.kind!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


def parse_endpoint(spec: str, timeout: float = DEFAULT_TIMEOUT) -> BridgeEndpoint:
    """Parse ``cmd=<shell words>`` or ``tcp=<host>:<port>``."""
    if spec.startswith("cmd="):
        return BridgeEndpoint("stdio", tuple(shlex.split(spec[4:])), timeout=timeout)
    if spec.startswith("tcp="):
        address = spec[4:]
        host, _, port = address.rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad tcp endpoint {address!r}, want host:port")
        return BridgeEndpoint("tcp", host=host, port=int(port), timeout=timeout)
    raise ValueError(f"endpoint must start with 'cmd=' or 'tcp=': {spec!r}")


class _Connection:
    """One live transport with a reader thread feeding a line queue."""

    def __init__(self, endpoint: BridgeEndpoint) -> None:
        self._endpoint = endpoint
        self._process: subprocess.Popen | None = None
        self._socket: socket.socket | None = None
        if endpoint.kind == "stdio":
            try:
                self._process = subprocess.Popen(
                    endpoint.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                )
            except OSError as err:
                raise BridgeTransportError(f"cannot spawn bridge: {err}") from err
            self._writer: IO[bytes] = self._process.stdin  # type: ignore[assignment]
            reader = self._process.stdout
        else:
            try:
                self._socket = socket.create_connection(
                    (endpoint.host, endpoint.port), timeout=endpoint.timeout
                )
            except OSError as err:
                raise BridgeTransportError(f"cannot connect: {err}") from err
            self._socket.settimeout(None)
            self._writer = self._socket.makefile("wb")
            reader = self._socket.makefile("rb")
        self._lines: queue.Queue[bytes | None] = queue.Queue()
        self._reader_thread = threading.Thread(
            target=self._pump, args=(reader,), daemon=True
        )
        self._reader_thread.start()

    def _pump(self, reader: IO[bytes]) -> None:
        try:
            for line in reader:
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        self._lines.put(None)

    def send(self, message: dict) -> None:
        try:
            self._writer.write(json.dumps(message).encode("utf-8") + b"\n")
            self._writer.flush()
        except (OSError, ValueError) as err:
            raise BridgeTransportError(f"bridge write failed: {err}") from err

    def receive(self) -> dict:
        try:
            line = self._lines.get(timeout=self._endpoint.timeout)
        except queue.Empty:
            raise BridgeTransportError(
                f"no reply within {self._endpoint.timeout}s"
            ) from None
        if line is None:
            raise BridgeTransportError("bridge closed the connection")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as err:
            raise BridgeProtocolError(f"reply is not JSON: {err}") from err
        if not isinstance(message, dict):
            raise BridgeProtocolError(f"reply is not an object: {message!r}")
        return message

    def close(self) -> None:
        try:
            self._writer.close()
        except OSError:
            pass
        if self._socket is not None:
            try:
                self._socket.close()
            except OSError:
                pass
        if self._process is not None:
            try:
                self._process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._process.kill()
                self._process.wait()


class BridgeClient:
    """External classifier speaking the oracle wire protocol.

    Satisfies the probability-model contract (``predict_proba``,
    ``loss_gradient``, ``num_classes``, ``input_shape``) so it slots into
    oracles and attacks exactly like a built-in model.
    """

    def __init__(self, endpoint: BridgeEndpoint) -> None:
        self._endpoint = endpoint
        self._lock = threading.Lock()
        self._next_id = 0
        self._connection: _Connection | None = None
        self.num_classes = 0
        self.input_shape = (0, 0, 0)
        self._connect()

    def _connect(self) -> None:
        self._connection = _Connection(self._endpoint)
        self._connection.send({"type": "hello", "version": PROTOCOL_VERSION})
        ack = self._connection.receive()
        if ack.get("type") != "hello_ack":
            raise BridgeProtocolError(f"expected hello_ack, got {ack.get('type')!r}")
        if ack.get("version") != PROTOCOL_VERSION:
            raise BridgeVersionError(
                f"bridge speaks version {ack.get('version')!r}, "
                f"client speaks {PROTOCOL_VERSION}"
            )
        shape = ack.get("input_shape")
        classes = ack.get("num_classes")
        if (
            not isinstance(shape, list)
            or len(shape) != 3
            or not all(isinstance(v, int) and v > 0 for v in shape)
            or not isinstance(classes, int)
            or classes < 2
        ):
            raise BridgeProtocolError(f"malformed hello_ack: {ack!r}")
        if self.num_classes and (
            classes != self.num_classes or tuple(shape) != self.input_shape
        ):
            raise BridgeProtocolError("bridge changed shape across reconnects")
        self.num_classes = classes
        self.input_shape = (shape[0], shape[1], shape[2])

    def _reconnect(self) -> None:
        if self._connection is not None:
            self._connection.close()
            self._connection = None
        self._connect()

    def _request(self, message: dict, reply_type: str) -> dict:
        """Send one request; retry once on a fresh connection, then give up."""
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            message = dict(message, id=request_id)
            attempts = 0
            while True:
                attempts += 1
                try:
                    if self._connection is None:
                        self._connect()
                    assert self._connection is not None
                    self._connection.send(message)
                    reply = self._connection.receive()
                    break
                except BridgeTransportError:
                    if self._connection is not None:
                        self._connection.close()
                        self._connection = None
                    if attempts >= 2:
                        raise
        if reply.get("id") != request_id:
            raise BridgeProtocolError(
                f"reply id {reply.get('id')!r} does not match request {request_id}"
            )
        if reply.get("type") == "error":
            raise BridgeRemoteError(str(reply.get("message", "unspecified failure")))
        if reply.get("type") != reply_type:
            raise BridgeProtocolError(
                f"expected {reply_type!r}, got {reply.get('type')!r}"
            )
        return reply

    def predict_proba(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        h, w, c = self.input_shape
        if batch.ndim != 4 or batch.shape[1:] != (c, h, w):
            raise ValueError(
                f"expected batch shaped (B, {c}, {h}, {w}), got {batch.shape}"
            )
        reply = self._request(
            {"type": "eval", "images": [image_to_wire(x) for x in batch]},
            "eval_ok",
        )
        probs = reply.get("probs")
        if (
            not isinstance(probs, list)
            or len(probs) != batch.shape[0]
            or any(
                not isinstance(row, list) or len(row) != self.num_classes
                for row in probs
            )
        ):
            raise BridgeProtocolError("eval_ok probs have the wrong shape")
        return np.asarray(probs, dtype=np.float64)

    def loss_gradient(self, x: np.ndarray, label: int) -> np.ndarray:
        h, w, c = self.input_shape
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (c, h, w):
            raise ValueError(f"expected image shaped ({c}, {h}, {w}), got {x.shape}")
        if not 0 <= label < self.num_classes:
            raise ValueError(f"label {label} out of range [0, {self.num_classes})")
        reply = self._request(
            {"type": "grad", "image": image_to_wire(x), "label": label},
            "grad_ok",
        )
        grad = reply.get("grad")
        if not isinstance(grad, str):
            raise BridgeProtocolError("grad_ok carries no gradient payload")
        return wire_to_image(grad, self.input_shape)

    def close(self) -> None:
        with self._lock:
            if self._connection is not None:
                self._connection.close()
                self._connection = None

    def __enter__(self) -> "BridgeClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def external_oracle_client(
    endpoint: BridgeEndpoint | str, timeout: float = DEFAULT_TIMEOUT
) -> BridgeClient:
    """Connect and handshake; accepts a parsed endpoint or its string form."""
    if isinstance(endpoint, str):
        endpoint = parse_endpoint(endpoint, timeout=timeout)
    return BridgeClient(endpoint)
