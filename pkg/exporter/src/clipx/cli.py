"""Command line: offline export and service launch."""

from __future__ import annotations

import argparse
import sys

from .encoders import make_encoder
from .export import ExportJob, run_export


def cmd_export(args) -> int:
    encoder = make_encoder(args.encoder, dimension=args.dimension) \
        if args.encoder == "color" else make_encoder(args.encoder)
    job = ExportJob(manifest=args.manifest, output=args.out, grid=args.grid,
                    resolution=args.resolution, batch_size=args.batch_size)
    outcome = run_export(job, encoder)
    print(f"wrote {len(outcome.records)} records to {args.out}"
          f" ({len(outcome.skipped)} items skipped)")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    encoder = make_encoder(args.encoder, dimension=args.dimension) \
        if args.encoder == "color" else make_encoder(args.encoder)
    uvicorn.run(create_app(encoder), host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="clipx")
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("export", help="export a manifest to a binary store")
    ex.add_argument("--manifest", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--grid", type=int, default=4)
    ex.add_argument("--resolution", type=int, default=224)
    ex.add_argument("--batch-size", type=int, default=48)
    ex.add_argument("--encoder", choices=["color", "clip"], default="color")
    ex.add_argument("--dimension", type=int, default=64)
    ex.set_defaults(func=cmd_export)

    sv = sub.add_parser("serve", help="serve the /embed protocol")
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--port", type=int, default=8008)
    sv.add_argument("--encoder", choices=["color", "clip"], default="color")
    sv.add_argument("--dimension", type=int, default=64)
    sv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
