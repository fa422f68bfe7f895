"""Adapter CLI: export engine-ready feature files from media via a chosen backend.

Exit codes: 0 success, 1 usage error, 2 export failure (including an
unavailable model).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import export
from .backends import ModelUnavailableError, resolve


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _backend(args):
    kwargs = {}
    if args.backend == "stub":
        kwargs["seed"] = args.seed
    return resolve(args.backend, **kwargs)


def cmd_episode(args) -> int:
    backend = _backend(args)
    manifest = export.export_episode(
        backend, args.media, Path(args.out), episode_id=args.episode_id,
        series_id=args.series_id,
    )
    print(manifest)
    return 0


def cmd_series(args) -> int:
    backend = _backend(args)
    series = export.scaffold_series(
        Path(args.out), backend, args.media, args.cast, series_id=args.series_id
    )
    print(series)
    return 0


def cmd_cast(args) -> int:
    backend = _backend(args)
    count = export.build_cast_prototypes(backend, args.names, Path(args.out))
    print(f"wrote {count} prototypes to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="castline-adapters", description=__doc__)
    parser.add_argument(
        "--backend", default="stub",
        choices=("stub", "whisperx", "laughter", "ecapa", "lwtnet", "clip-pad"),
    )
    parser.add_argument("--seed", type=int, default=0, help="stub backend determinism seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("episode", help="export one episode's feature files + manifest")
    p.add_argument("--media", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--episode-id", default="ep01")
    p.add_argument("--series-id", default="adapter-export")
    p.set_defaults(func=cmd_episode)

    p = sub.add_parser("series", help="export several episodes plus a series scaffold")
    p.add_argument("--media", nargs="+", required=True)
    p.add_argument("--cast", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--series-id", default="adapter-export")
    p.set_defaults(func=cmd_series)

    p = sub.add_parser("cast", help="build cast prototype embeddings")
    p.add_argument("--names", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cast)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ModelUnavailableError as exc:
        print(f"castline-adapters: model unavailable: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"castline-adapters: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
