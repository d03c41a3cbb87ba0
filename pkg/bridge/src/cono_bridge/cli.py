"""Command line entry point for the bridge server."""

from __future__ import annotations

import argparse
import logging
import socket
import sys

from . import __version__
from .adapter import AdapterConfig, EchoModel
from .errors import BridgeAdapterError


def _parse_shape(text: str) -> tuple[int, int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(f"shape must look like 16x2x16x16, got {text!r}")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like 16x2x16x16, got {text!r}")
    if any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"shape dimensions must be positive, got {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cono-bridge",
        description=(
            "Serve noise predictions over the length-prefixed JSON protocol. "
            "By default the process reads requests from stdin and writes "
            "responses to stdout; diagnostics go to stderr."
        ),
    )
    parser.add_argument("--version", action="version", version=f"cono-bridge {__version__}")
    parser.add_argument(
        "--shape", type=_parse_shape, required=True,
        help="latent geometry as FRAMESxCHANNELSxHEIGHTxWIDTH, e.g. 16x2x16x16",
    )
    parser.add_argument("--model", help="backing model identifier (echo mode when omitted)")
    parser.add_argument("--checkpoint", help="checkpoint path for --model")
    parser.add_argument("--device", default="cpu", help="device for --model (default cpu)")
    parser.add_argument(
        "--prompt-map",
        help="JSON file mapping prompt ids to replacement text or 8-number embeddings",
    )
    parser.add_argument("--sigma0", type=float, default=0.3, help="scene deviation (default 0.3)")
    parser.add_argument(
        "--sigma-uncond", type=float, default=2.0,
        help="unconditional scene deviation (default 2.0)",
    )
    parser.add_argument(
        "--schedule-steps", type=int, default=1000,
        help="training schedule length (default 1000)",
    )
    parser.add_argument("--beta-start", type=float, default=0.00085)
    parser.add_argument("--beta-end", type=float, default=0.012)
    parser.add_argument(
        "--schedule-kind", choices=("scaled_linear", "linear"), default="scaled_linear"
    )
    parser.add_argument(
        "--fail-prompt",
        help="testing hook: report a model failure for this prompt id",
    )
    parser.add_argument(
        "--tcp", type=int, metavar="PORT",
        help="listen on 127.0.0.1:PORT for one connection instead of using stdio "
             "(0 picks a free port, announced on stderr)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info logs on stderr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.ERROR,
        format="cono-bridge: %(levelname)s: %(message)s",
    )
    if args.model is not None:
        print(
            "error: real-model serving is not available in this build; "
            "omit --model to run the echo model",
            file=sys.stderr,
        )
        return 2
    try:
        config = AdapterConfig(
            shape=args.shape,
            model=args.model,
            checkpoint=args.checkpoint,
            device=args.device,
            prompt_map=args.prompt_map,
            sigma0=args.sigma0,
            sigma_uncond=args.sigma_uncond,
            schedule_steps=args.schedule_steps,
            beta_start=args.beta_start,
            beta_end=args.beta_end,
            schedule_kind=args.schedule_kind,
        )
        model = EchoModel(config, fail_prompt=args.fail_prompt)
    except BridgeAdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    from .server import serve

    if args.tcp is None:
        return serve(config, model, sys.stdin.buffer, sys.stdout.buffer)

    with socket.create_server(("127.0.0.1", args.tcp)) as listener:
        port = listener.getsockname()[1]
        print(f"cono-bridge listening on 127.0.0.1:{port}", file=sys.stderr, flush=True)
        conn, peer = listener.accept()
        logging.getLogger("cono_bridge").info("connection from %s:%d", *peer)
        with conn, conn.makefile("rb") as rin, conn.makefile("wb") as rout:
            return serve(config, model, rin, rout)


if __name__ == "__main__":
    raise SystemExit(main())
