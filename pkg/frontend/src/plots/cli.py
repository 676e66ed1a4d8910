"""Command line interface: plots tendencies|history|vorticity --in ... --out ..."""

import argparse
import sys

from .figures import FigureSpec, render
from .io import SchemaError


def build_parser():
    p = argparse.ArgumentParser(prog="plots",
                                description="Render figures from euler2d CSV outputs")
    sub = p.add_subparsers(dest="kind", required=True)
    for kind in ("tendencies", "history", "vorticity"):
        sp = sub.add_parser(kind)
        sp.add_argument("--in", dest="inputs", action="append", required=True,
                        help="input CSV (repeatable for history overlays)")
        sp.add_argument("--out", required=True, help="output image path")
        sp.add_argument("--kt", default="",
                        help="comma-separated k_T panels (tendencies only)")
        sp.add_argument("--logx", action="store_true")
        sp.add_argument("--title", default="")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kts = [int(x) for x in args.kt.split(",") if x] if args.kt else []
    spec = FigureSpec(inputs=args.inputs, kind=args.kind, output=args.out,
                      k_T=kts, logx=args.logx, title=args.title)
    try:
        out = render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
