"""Command-line entry: pick a model source and a transport, then serve."""

import argparse
import logging
import sys

from .adapters import adapter_from_weights, load_adapter
from .serve import DEFAULT_BATCH_LIMIT, BridgeConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modelbridge",
        description="Serve a classifier over the newline-JSON oracle protocol.",
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--weights", help="exported toy-weights fixture directory")
    source.add_argument(
        "--adapter", help="user model factory as package.module:callable"
    )
    parser.add_argument(
        "--tcp",
        metavar="HOST:PORT",
        help="listen on TCP instead of serving stdio (port 0 picks one)",
    )
    parser.add_argument(
        "--batch-limit",
        type=int,
        default=DEFAULT_BATCH_LIMIT,
        help=f"largest accepted eval batch (default {DEFAULT_BATCH_LIMIT})",
    )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING)
    args = build_parser().parse_args(argv)
    try:
        if args.weights:
            adapter = adapter_from_weights(args.weights)
        else:
            adapter = load_adapter(args.adapter)
        if args.tcp:
            host, _, port = args.tcp.rpartition(":")
            if not host or not port.isdigit():
                raise ValueError(f"bad tcp address {args.tcp!r}, want host:port")
            config = BridgeConfig(
                adapter,
                transport="tcp",
                host=host,
                port=int(port),
                batch_limit=args.batch_limit,
            )
        else:
            config = BridgeConfig(adapter, batch_limit=args.batch_limit)
    except (ValueError, TypeError, OSError) as err:
        print(f"modelbridge: {err}", file=sys.stderr)
        return 2
    try:
        serve(config)
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    sys.exit(main())
