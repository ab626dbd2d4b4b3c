"""Command-line entry point: matconvert --in archive.mat --out episodes.epbn"""

from __future__ import annotations

import argparse
import sys

from .archive import ArchiveError
from .convert import convert


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="matconvert",
        description="Convert the cuffless-BP MATLAB archive into an EPBN episode file",
    )
    parser.add_argument("--in", dest="in_path", required=True, help="source .mat archive")
    parser.add_argument("--out", required=True, help="EPBN file to write")
    parser.add_argument(
        "--episode-seconds", type=float, default=10.0, help="window length (default 10)"
    )
    args = parser.parse_args(argv)
    try:
        summary = convert(args.in_path, args.out, args.episode_seconds)
    except ArchiveError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    for line in summary.lines():
        print(line)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
