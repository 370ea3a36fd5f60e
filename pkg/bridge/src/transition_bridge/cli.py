"""Command line: serve a checkpoint over the wire protocol, export weights."""

from __future__ import annotations

import argparse
import sys

from .export import epoch_from_revision, export_weights, write_manifest
from .server import create_app
from .session import BridgeError, BridgeSession


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="transition-bridge")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="serve a checkpoint over HTTP")
    p_serve.add_argument("--model", required=True, help="model id or local path")
    p_serve.add_argument("--revision", default="main")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8100)
    p_serve.add_argument("--device", default="cpu")
    p_serve.set_defaults(handler=cmd_serve)

    p_export = sub.add_parser(
        "export-weights", help="dump a layer's weights per revision plus a manifest"
    )
    p_export.add_argument("--model", required=True)
    p_export.add_argument(
        "--revision",
        action="append",
        required=True,
        help="repeatable; the epoch is the revision's trailing integer",
    )
    p_export.add_argument("--layer", required=True, help="parameter name or fnmatch pattern")
    p_export.add_argument("--out", required=True)
    p_export.set_defaults(handler=cmd_export)

    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def cmd_serve(args) -> int:
    import uvicorn

    session = BridgeSession(device=args.device)
    session.load(args.model, args.revision)
    app = create_app(session)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_export(args) -> int:
    entries = []
    for i, revision in enumerate(args.revision):
        entry = export_weights(
            args.model,
            revision,
            args.layer,
            args.out,
            epoch=epoch_from_revision(revision, fallback=i),
        )
        print(f"{revision}: {entry['count']} values -> {entry['file']}")
        entries.append(entry)
    manifest = write_manifest(args.out, args.layer, entries)
    print(f"manifest: {manifest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
