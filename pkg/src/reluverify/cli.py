"""Command-line interface: verify, attack, and eval subcommands.

Exit codes: 0 property holds, 1 violated (counterexample found),
2 unknown, 64 usage error, 65 unreadable or invalid input data.
Reports are JSON and, apart from the timestamp and wall-clock fields,
byte-identical across runs with the same flags and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attack import AttackConfig, run_attack
from .bab import RunStats, SearchConfig, SplitConfig, VerdictReport, verify
from .geometry import Hyperrectangle
from .model import ModelError, forward_batch, load_model, strip_softmax
from .propagate import solver_by_name
from .specio import PropertyError, parse_property_json, parse_vnnlib, to_problem
from .trace import export_heatmaps, export_trace

EXIT_HOLDS = 0
EXIT_VIOLATED = 1
EXIT_UNKNOWN = 2
EXIT_USAGE = 64
EXIT_DATA = 65

_STATUS_CODE = {"holds": EXIT_HOLDS, "violated": EXIT_VIOLATED, "unknown": EXIT_UNKNOWN}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 64, not argparse's 2
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _seed(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be nonnegative")
    return value


def build_parser() -> _Parser:
    parser = _Parser(prog="reluverify", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("verify", parents=[], help="branch-and-bound verification")
    pv.add_argument("--model", required=True, help="model JSON file")
    pv.add_argument("--property", required=True, help=".vnnlib or .json property")
    pv.add_argument("--format", choices=["vnnlib", "json"], help="override property format")
    pv.add_argument("--solver", choices=["ibp", "zonotope", "crown"], default="ibp")
    pv.add_argument("--max-iter", type=int, default=200)
    pv.add_argument("--batch-size", type=int, default=1)
    pv.add_argument("--split-dims", type=int, default=1)
    pv.add_argument("--timeout", type=float, default=None, help="seconds")
    pv.add_argument("--result", help="write the run report here (default: stdout)")
    pv.add_argument("--trace", help="export the root reachable-set trace here")
    pv.add_argument("--heatmaps", help="render image-node heatmaps into this directory")
    pv.add_argument("--seed", type=_seed, default=0)
    pv.add_argument("--jobs", type=int, default=1, help="parallel branch workers")
    pv.add_argument("--attack-first", action="store_true", help="PGD pre-pass")
    pv.set_defaults(func=cmd_verify)

    pa = sub.add_parser("attack", help="gradient falsification only")
    pa.add_argument("--model", required=True)
    pa.add_argument("--property", required=True)
    pa.add_argument("--format", choices=["vnnlib", "json"])
    pa.add_argument("--method", choices=["fgsm", "pgd"], default="pgd")
    pa.add_argument("--steps", type=int, default=100)
    pa.add_argument("--step-size", type=float, default=None)
    pa.add_argument("--restarts", type=int, default=5)
    pa.add_argument("--seed", type=_seed, default=0)
    pa.add_argument("--result", help="write the run report here (default: stdout)")
    pa.set_defaults(func=cmd_attack)

    pe = sub.add_parser("eval", help="concrete forward evaluation")
    pe.add_argument("--model", required=True)
    pe.add_argument("--input", required=True, help="JSON vector (or list of vectors)")
    pe.set_defaults(func=cmd_eval)
    return parser


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_property(path: str, fmt: str | None):
    suffix = Path(path).suffix.lower()
    if fmt is None:
        if suffix == ".vnnlib":
            fmt = "vnnlib"
        elif suffix == ".json":
            fmt = "json"
        else:
            raise PropertyError(
                f"cannot infer property format from {path!r}; pass --format"
            )
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise PropertyError(f"cannot read property file: {exc}") from None
    return parse_vnnlib(text) if fmt == "vnnlib" else parse_property_json(text)


def _write_report(doc: dict, path: str | None):
    text = json.dumps(doc, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _finish_report(report: VerdictReport, args, extra_config: dict) -> dict:
    doc = report.to_dict()
    doc["config"] = {**doc.get("config", {}), **extra_config}
    doc["version"] = __version__
    doc["hashes"] = {
        "model": _sha256(args.model),
        "property": _sha256(args.property),
    }
    doc["timestamp"] = datetime.now(timezone.utc).isoformat()
    return doc


def cmd_verify(args) -> int:
    model = load_model(args.model)
    pf = _load_property(args.property, args.format)
    problem = to_problem(pf, model)
    solver = solver_by_name(args.solver)
    search = SearchConfig(
        max_iter=args.max_iter, batch_size=args.batch_size, timeout_s=args.timeout
    )
    split = SplitConfig(num_splits=args.split_dims)

    report = None
    if args.attack_first and isinstance(problem.input_set, Hyperrectangle):
        t0 = time.perf_counter()
        cex = run_attack(
            strip_softmax(model),
            problem.input_set,
            problem.spec,
            AttackConfig(method="pgd", seed=args.seed),
        )
        if cex is not None:
            stats = RunStats(wall_ms=(time.perf_counter() - t0) * 1000.0)
            report = VerdictReport("violated", cex, None, stats, {})
    if report is None:
        report = verify(search, split, solver, problem, seed=args.seed, jobs=args.jobs)

    extra = {
        "model": args.model,
        "property": args.property,
        "jobs": args.jobs,
        "attack_first": bool(args.attack_first),
    }
    _write_report(_finish_report(report, args, extra), args.result)

    if args.trace or args.heatmaps:
        stripped = strip_softmax(model)
        _, trace = solver.propagate(stripped, problem.input_set)
        desc = f"{type(problem.input_set).__name__} dim={problem.input_set.dim}"
        if args.trace:
            export_trace(trace, stripped, args.trace, solver=solver.name, input_desc=desc)
        if args.heatmaps:
            export_heatmaps(trace, stripped, args.heatmaps)
    return _STATUS_CODE[report.status]


def cmd_attack(args) -> int:
    model = strip_softmax(load_model(args.model))
    pf = _load_property(args.property, args.format)
    problem = to_problem(pf, model)
    if not isinstance(problem.input_set, Hyperrectangle):
        raise PropertyError("attack requires a box input set")
    config = AttackConfig(
        method=args.method,
        steps=args.steps,
        step_size=args.step_size,
        restarts=args.restarts,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    cex = run_attack(model, problem.input_set, problem.spec, config)
    stats = RunStats(wall_ms=(time.perf_counter() - t0) * 1000.0)
    status = "violated" if cex is not None else "unknown"
    report = VerdictReport(status, cex, None, stats, {})
    extra = {
        "model": args.model,
        "property": args.property,
        "method": args.method,
        "steps": args.steps,
        "step_size": config.effective_step,
        "restarts": args.restarts,
        "seed": args.seed,
    }
    _write_report(_finish_report(report, args, extra), args.result)
    return EXIT_VIOLATED if cex is not None else EXIT_UNKNOWN


def cmd_eval(args) -> int:
    model = load_model(args.model)
    try:
        with open(args.input, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ModelError(f"cannot read input file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ModelError(f"input file is not valid JSON: {exc}") from None
    try:
        arr = np.asarray(data, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"input file is not numeric: {exc}") from None
    if arr.ndim == 1:
        out = forward_batch(model, arr[None, :])[0].tolist()
    elif arr.ndim == 2:
        out = forward_batch(model, arr).tolist()
    else:
        raise ModelError("input must be a vector or a list of vectors")
    sys.stdout.write(json.dumps(out) + "\n")
    return EXIT_HOLDS


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, PropertyError, ValueError, OSError, RuntimeError) as exc:
        print(f"reluverify: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
