"""Minimal oracle bridge used to exercise the client.

Deliberately shares no code with the package: the wire layer is written
from the protocol description so client bugs cannot cancel out.  Fault
flags simulate misbehaving bridges.
"""

import argparse
import base64
import json
import socket
import struct
import sys
from pathlib import Path

import numpy as np


def load_ilns(path):
    blob = Path(path).read_bytes()
    magic, h, w, c = struct.unpack_from("<4sIII", blob)
    if magic != b"ILNS":
        raise SystemExit(f"bad tensor file {path}")
    return np.frombuffer(blob, "<f4", offset=16).astype(np.float64).reshape(h, w, c)


def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


class Model:
    def __init__(self, args):
        if args.mode == "constant":
            self.kind = "constant"
            self.num_classes = args.classes
            self.shape = tuple(args.shape)
            return
        meta = json.loads((Path(args.fixture) / "meta.json").read_text())
        self.kind = meta["kind"]
        self.num_classes = meta["num_classes"]
        self.shape = tuple(meta["input_shape"])
        self.t = {
            name: np.ascontiguousarray(
                load_ilns(Path(args.fixture) / entry["file"]).reshape(entry["shape"])
            )
            for name, entry in meta["tensors"].items()
        }

    def flatten(self, hwc):
        # fixtures expect channel-major flattening
        return np.ascontiguousarray(hwc.transpose(2, 0, 1)).ravel()

    def probs(self, hwc):
        if self.kind == "constant":
            return np.full(self.num_classes, 1.0 / self.num_classes)
        v = self.flatten(hwc)
        if self.kind == "linear":
            return softmax(self.t["weight"] @ v + self.t["bias"])
        hidden = np.tanh(self.t["w1"] @ v + self.t["b1"])
        return softmax(self.t["w2"] @ hidden + self.t["b2"])

    def grad(self, hwc, label):
        h, w, c = self.shape
        if self.kind == "constant":
            return np.zeros((h, w, c))
        v = self.flatten(hwc)
        if self.kind == "linear":
            p = softmax(self.t["weight"] @ v + self.t["bias"])
            p[label] -= 1.0
            flat = self.t["weight"].T @ p
        else:
            hidden = np.tanh(self.t["w1"] @ v + self.t["b1"])
            p = softmax(self.t["w2"] @ hidden + self.t["b2"])
            p[label] -= 1.0
            flat = self.t["w1"].T @ ((self.t["w2"].T @ p) * (1.0 - hidden**2))
        return flat.reshape(c, h, w).transpose(1, 2, 0)


def decode_image(data, shape):
    h, w, c = shape
    flat = np.frombuffer(base64.b64decode(data), "<f4").astype(np.float64)
    return flat.reshape(h, w, c)


def encode(array):
    return base64.b64encode(np.ascontiguousarray(array, "<f4").tobytes()).decode()


def serve(model, args, rfile, wfile):
    replies = 0

    def reply(obj):
        nonlocal replies
        wfile.write((json.dumps(obj) + "\n").encode())
        wfile.flush()
        replies += 1
        if args.die_after and replies >= args.die_after:
            import os

            os._exit(1)

    sent_garbage = False
    for line in rfile:
        msg = json.loads(line)
        kind = msg.get("type")
        if kind == "hello":
            h, w, c = model.shape
            reply(
                {
                    "type": "hello_ack",
                    "version": args.version,
                    "num_classes": model.num_classes,
                    "input_shape": [h, w, c],
                }
            )
            continue
        rid = msg.get("id")
        if args.hang:
            import time

            time.sleep(3600)
        if args.garbage and not sent_garbage:
            sent_garbage = True
            wfile.write(b"this is not json\n")
            wfile.flush()
            continue
        if args.wrong_id:
            rid = (rid or 0) + 1000
        if kind == "eval":
            if args.fail_eval:
                reply({"type": "error", "id": rid, "message": "injected failure"})
                continue
            probs = [
                [float(p) for p in model.probs(decode_image(img, model.shape))]
                for img in msg["images"]
            ]
            reply({"type": "eval_ok", "id": rid, "probs": probs})
        elif kind == "grad":
            image = decode_image(msg["image"], model.shape)
            reply(
                {
                    "type": "grad_ok",
                    "id": rid,
                    "grad": encode(model.grad(image, msg["label"])),
                }
            )
        else:
            reply({"type": "error", "id": rid, "message": f"unknown type {kind!r}"})


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--mode", choices=["constant", "fixture"], default="constant")
    parser.add_argument("--fixture")
    parser.add_argument("--classes", type=int, default=2)
    parser.add_argument("--shape", type=int, nargs=3, default=[8, 8, 1])
    parser.add_argument("--version", type=int, default=1)
    parser.add_argument("--fail-eval", action="store_true")
    parser.add_argument("--die-after", type=int, default=0)
    parser.add_argument("--garbage", action="store_true")
    parser.add_argument("--wrong-id", action="store_true")
    parser.add_argument("--hang", action="store_true")
    parser.add_argument("--tcp", action="store_true")
    args = parser.parse_args()
    model = Model(args)
    if args.tcp:
        listener = socket.create_server(("127.0.0.1", 0))
        print(f"PORT {listener.getsockname()[1]}", flush=True)
        while True:
            conn, _ = listener.accept()
            with conn:
                serve(model, args, conn.makefile("rb"), conn.makefile("wb"))
    else:
        serve(model, args, sys.stdin.buffer, sys.stdout.buffer)


if __name__ == "__main__":
    main()
