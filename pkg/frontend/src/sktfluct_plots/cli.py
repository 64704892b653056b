"""Batch figure generation from simulator output directories.

Exit codes: 0 all requested figures written, 1 usage error or unusable
inputs (missing files or columns, unknown schema version).
"""

import argparse
import sys

from .figures import FIGURE_KINDS, FORMATS, PlotJob, render_job
from .loading import LoadError

EXIT_OK = 0
EXIT_USAGE = 1

__all__ = ["main", "entrypoint"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sktfluct-plots",
        description="Render figures from sktfluct CSV/JSON output "
                    "directories; figures land beside their inputs.",
    )
    parser.add_argument("directories", nargs="+", help="run output directories")
    parser.add_argument(
        "--figures", default=None,
        help="comma-separated subset of " + ",".join(FIGURE_KINDS)
             + " (default: whatever each directory has inputs for)",
    )
    parser.add_argument("--format", default="png", choices=FORMATS,
                        help="figure file format")
    parser.add_argument("--dpi", default=150, type=int, help="raster resolution")
    parser.add_argument("--output", default=None,
                        help="write figures here instead of beside the inputs")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress the per-figure lines")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        return EXIT_OK if code == 0 else EXIT_USAGE
    figures = tuple(
        name.strip() for name in args.figures.split(",") if name.strip()
    ) if args.figures else ()
    try:
        job = PlotJob(
            directories=tuple(args.directories),
            figures=figures,
            fmt=args.format,
            dpi=args.dpi,
            output=args.output,
        )
        written = render_job(job)
    except (LoadError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not args.quiet:
        for path in written:
            print(f"wrote {path}")
    return EXIT_OK


def entrypoint():
    raise SystemExit(main())
