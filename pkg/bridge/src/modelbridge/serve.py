"""Request loop: answer hello/eval/grad messages until the peer hangs up.

One connection, one single-threaded loop, replies strictly in request
order; ids are echoed verbatim.  A malformed message or a model exception
produces an error reply and the loop keeps going, so one bad request never
takes the whole oracle down.  Run several processes for parallelism.
"""

from __future__ import annotations

import logging
import socket
import sys
from dataclasses import dataclass
from typing import IO

import numpy as np

from .adapters import ModelAdapter
from .protocol import (
    PROTOCOL_VERSION,
    ProtocolError,
    decode_image,
    encode_image,
    parse_line,
    write_message,
)

logger = logging.getLogger("modelbridge")

DEFAULT_BATCH_LIMIT = 256


@dataclass(frozen=True)
class BridgeConfig:
    adapter: ModelAdapter
    transport: str = "stdio"  # "stdio" | "tcp"
    host: str = "127.0.0.1"
    port: int = 0
    batch_limit: int = DEFAULT_BATCH_LIMIT

    def __post_init__(self) -> None:
        if self.transport not in ("stdio", "tcp"):
            raise ValueError(f"unknown transport {self.transport!r}")
        if self.batch_limit < 1:
            raise ValueError("batch_limit must be >= 1")
        if self.transport == "tcp" and not 0 <= self.port < 65536:
            raise ValueError(f"port out of range: {self.port}")


class _Session:
    """Protocol state for one connection: handshake, then queries."""

    def __init__(self, config: BridgeConfig) -> None:
        self._config = config
        self._greeted = False

    def reply_for(self, message: dict) -> dict:
        request_id = message.get("id")
        kind = message.get("type")
        try:
            if kind == "hello":
                return self._hello(message)
            if not self._greeted:
                raise ProtocolError("handshake required before queries")
            if kind == "eval":
                return self._eval(message, request_id)
            if kind == "grad":
                return self._grad(message, request_id)
            raise ProtocolError(f"unknown message type {kind!r}")
        except (ProtocolError, ValueError) as err:
            return {"type": "error", "id": request_id, "message": str(err)}
        except Exception as err:  # model blew up; stay alive
            logger.exception("adapter failure")
            return {
                "type": "error",
                "id": request_id,
                "message": f"model failure: {err}",
            }

    def _hello(self, message: dict) -> dict:
        version = message.get("version")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(
                f"unsupported protocol version {version!r}, "
                f"this bridge speaks {PROTOCOL_VERSION}"
            )
        self._greeted = True
        adapter = self._config.adapter
        h, w, c = adapter.input_shape
        return {
            "type": "hello_ack",
            "version": PROTOCOL_VERSION,
            "input_shape": [int(h), int(w), int(c)],
            "num_classes": int(adapter.num_classes),
        }

    def _eval(self, message: dict, request_id) -> dict:
        images = message.get("images")
        if not isinstance(images, list) or not images:
            raise ProtocolError("eval needs a non-empty 'images' list")
        if len(images) > self._config.batch_limit:
            raise ProtocolError(
                f"batch of {len(images)} exceeds limit "
                f"{self._config.batch_limit}"
            )
        adapter = self._config.adapter
        batch = np.stack(
            [decode_image(data, adapter.input_shape) for data in images]
        )
        probs = np.asarray(adapter.predict_proba(batch), dtype=np.float64)
        if probs.shape != (len(images), adapter.num_classes):
            raise ProtocolError(
                f"adapter returned probabilities shaped {probs.shape}"
            )
        return {
            "type": "eval_ok",
            "id": request_id,
            "probs": [[float(p) for p in row] for row in probs],
        }

    def _grad(self, message: dict, request_id) -> dict:
        adapter = self._config.adapter
        label = message.get("label")
        if not isinstance(label, int):
            raise ProtocolError("grad needs an integer 'label'")
        image = decode_image(message.get("image"), adapter.input_shape)
        grad = np.asarray(adapter.loss_gradient(image, label), dtype=np.float64)
        if grad.shape != image.shape:
            raise ProtocolError(f"adapter returned gradient shaped {grad.shape}")
        return {"type": "grad_ok", "id": request_id, "grad": encode_image(grad)}


def serve_streams(config: BridgeConfig, reader: IO[bytes], writer: IO[bytes]) -> None:
    """Answer messages from ``reader`` on ``writer`` until EOF."""
    session = _Session(config)
    for line in reader:
        if not line.strip():
            continue
        try:
            message = parse_line(line)
        except ProtocolError as err:
            write_message(writer, {"type": "error", "id": None, "message": str(err)})
            continue
        write_message(writer, session.reply_for(message))


def serve(config: BridgeConfig) -> None:
    """Run the bridge until the transport closes.

    stdio: serve the parent process.  tcp: accept connections one at a
    time, each with fresh handshake state, until interrupted.
    """
    if config.transport == "stdio":
        serve_streams(config, sys.stdin.buffer, sys.stdout.buffer)
        return
    with socket.create_server((config.host, config.port)) as server:
        bound = server.getsockname()
        logger.info("listening on %s:%d", bound[0], bound[1])
        # late port discovery for tests and supervisors using port 0
        print(f"listening {bound[0]}:{bound[1]}", file=sys.stderr, flush=True)
        while True:
            connection, peer = server.accept()
            logger.info("connection from %s:%d", peer[0], peer[1])
            with connection:
                reader = connection.makefile("rb")
                writer = connection.makefile("wb")
                try:
                    serve_streams(config, reader, writer)
                except (OSError, ValueError):
                    logger.info("connection to %s:%d dropped", peer[0], peer[1])
