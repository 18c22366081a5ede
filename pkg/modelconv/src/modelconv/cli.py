"""Command line: ``modelconv IN.onnx OUT.json [--report report.json]``.

Exit codes: 0 converted, 1 unsupported or unreadable model, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .converter import ConversionError, convert
from .onnx_reader import OnnxDecodeError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="modelconv",
        description="Convert an ONNX model (fixed op subset) to model JSON.",
    )
    parser.add_argument("onnx", help="input .onnx file")
    parser.add_argument("out", help="output model .json file")
    parser.add_argument("--report", help="write the conversion report here")
    args = parser.parse_args(argv)
    try:
        report = convert(args.onnx, args.out)
    except (ConversionError, OnnxDecodeError) as exc:
        print(f"modelconv: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"modelconv: error: {exc}", file=sys.stderr)
        return 2
    if args.report:
        try:
            with open(args.report, "w", encoding="utf-8") as fh:
                json.dump(report.to_dict(), fh, indent=1)
                fh.write("\n")
        except OSError as exc:
            print(f"modelconv: error: {exc}", file=sys.stderr)
            return 2
    for warning in report.warnings:
        print(f"modelconv: warning: {warning}", file=sys.stderr)
    print(f"converted {len(report.mapped)} nodes -> {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
