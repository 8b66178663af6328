"""advwm-plots: render panels and tables from training artifacts.

Example:
    advwm-plots --metrics prowl=runs/prowl/metrics.csv \
                --metrics frozen_ref=runs/frozen/metrics.csv \
                --modes runs/modes.csv \
                --eval phase1=runs/eval_p1.csv --eval prowl=runs/eval_prowl.csv \
                --out-dir panels/
"""

from __future__ import annotations

import argparse
import sys

from .render import SchemaError, render_all


def _pairs(items):
    out = []
    for spec in items:
        name, _, path = spec.partition("=")
        if not path:
            raise SystemExit(f"expected name=path, got {spec!r}")
        out.append((name, path))
    return out


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="advwm-plots", description=__doc__)
    p.add_argument("--metrics", action="append", default=[],
                   help="arm=metrics.csv (repeat per arm)")
    p.add_argument("--modes", default=None, help="mode report CSV")
    p.add_argument("--eval", action="append", default=[], dest="evals",
                   help="arm=eval.csv (repeat; first arm is the baseline)")
    p.add_argument("--out-dir", required=True)
    args = p.parse_args(argv)
    try:
        written = render_all(
            dict(_pairs(args.metrics)),
            args.out_dir,
            mode_report=args.modes,
            eval_by_arm=_pairs(args.evals),
        )
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 1
    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
