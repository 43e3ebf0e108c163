"""Command-line entry point.

Exit codes: 0 success, 1 solver degradation (time limits or fallbacks hit;
outputs are still written), 2 usage or input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from actbounds import __version__
from actbounds.bounder import BounderConfig, ro_gap, run_bounder, write_records_csv
from actbounds.branchbound import OPTIMAL, BnbConfig
from actbounds.formulate import VerifyConfig
from actbounds.model import (
    NetworkError,
    count_nonzero_weights,
    generate_random,
    load_network,
    prune,
    save_network,
)
from actbounds.propagate import load_bounds, save_bounds
from actbounds.simplex import ToleranceConfig
from actbounds.verify import verify

EXIT_OK, EXIT_DEGRADED, EXIT_USAGE = 0, 1, 2

METHOD_ALIASES = {
    "naive": "naive_norm",
    "naive_norm": "naive_norm",
    "interval": "naive_interval",
    "naive_interval": "naive_interval",
    "weak": "weak",
    "strong": "strong",
    "hybrid": "hybrid",
}


class UsageError(Exception):
    pass


class _Manifest:
    def __init__(self, command: str, args: argparse.Namespace):
        self.t0 = time.perf_counter()
        self.data = {
            "command": command,
            "config": {k: v for k, v in vars(args).items() if k != "func"},
            "inputs": {},
            "outputs": [],
            "tool_version": __version__,
        }

    def read(self, path) -> bytes:
        data = Path(path).read_bytes()
        self.data["inputs"][str(path)] = hashlib.sha256(data).hexdigest()
        return data

    def wrote(self, path) -> None:
        self.data["outputs"].append(str(path))

    def save(self, out_path) -> str:
        self.data["wall_time_s"] = time.perf_counter() - self.t0
        path = str(out_path) + ".manifest.json"
        with open(path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
        return path


def _arch(text: str) -> list[int]:
    try:
        widths = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed architecture {text!r}, expected e.g. 2x20x20x3")
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError(f"malformed architecture {text!r}, expected e.g. 2x20x20x3")
    return widths


def _tolerances(args) -> ToleranceConfig:
    return ToleranceConfig.from_env(feas_tol=args.feas_tol, opt_tol=args.opt_tol, max_iter=args.max_iter)


def _bnb(args, time_limit: float) -> BnbConfig:
    kwargs = {"time_limit": time_limit, "lp_tol": _tolerances(args)}
    if args.int_tol is not None:
        kwargs["int_tol"] = args.int_tol
    return BnbConfig.from_env(**kwargs)


def _load_net(manifest: _Manifest, path):
    if not os.path.exists(path):
        raise UsageError(f"network file not found: {path}")
    manifest.read(path)
    return load_network(path)


def cmd_gen(args) -> int:
    manifest = _Manifest("gen", args)
    net = generate_random(args.arch, args.seed, args.scale, name=args.name)
    save_network(net, args.out)
    manifest.wrote(args.out)
    manifest.save(args.out)
    print(f"wrote {args.out}: {'x'.join(map(str, net.widths))}, L={net.depth}")
    return EXIT_OK


def cmd_prune(args) -> int:
    if not args.epsilon >= 0:
        raise UsageError(f"epsilon must be nonnegative, got {args.epsilon}")
    manifest = _Manifest("prune", args)
    net = _load_net(manifest, args.network)
    pruned = prune(net, args.epsilon, prune_bias=not args.keep_bias)
    zeroed = count_nonzero_weights(net) - count_nonzero_weights(pruned)
    save_network(pruned, args.out)
    manifest.wrote(args.out)
    manifest.data["zeroed_weights"] = zeroed
    manifest.save(args.out)
    print(f"zeroed {zeroed} weights")
    return EXIT_OK


def cmd_bounds(args) -> int:
    method = METHOD_ALIASES[args.method]
    layer_methods = None
    if method == "hybrid":
        if not args.layer_methods:
            raise UsageError("--method hybrid needs --layer-methods, e.g. naive,weak,strong")
        layer_methods = tuple(METHOD_ALIASES.get(m.strip(), m.strip()) for m in args.layer_methods.split(","))
    manifest = _Manifest("bounds", args)
    net = _load_net(manifest, args.network)
    cfg = BounderConfig(
        method=method,
        time_limit=args.time_limit,
        workers=args.workers,
        lp_tol=_tolerances(args),
        bnb=_bnb(args, args.time_limit),
        layer_methods=layer_methods,
        export_dir=args.export_lp,
    )
    bounds = run_bounder(net, cfg)
    save_bounds(bounds, args.out, timings=not args.no_timing)
    manifest.wrote(args.out)
    if args.csv:
        write_records_csv(bounds, args.csv)
        manifest.wrote(args.csv)
    if args.export_lp:
        manifest.wrote(args.export_lp)
    manifest.data["total_time_s"] = bounds.total_time
    manifest.save(args.out)
    degraded = sum(s in ("dual_bound", "fallback") for layer in bounds.status for s in layer)
    print(f"{bounds.method} bounds for {net.name}: {bounds.num_layers} layers in {bounds.total_time:.3f}s"
          + (f", {degraded} neurons degraded" if degraded else ""))
    return EXIT_DEGRADED if degraded else EXIT_OK


def cmd_verify(args) -> int:
    manifest = _Manifest("verify", args)
    net = _load_net(manifest, args.network)
    if not os.path.exists(args.bounds):
        raise UsageError(f"bounds file not found: {args.bounds}")
    manifest.read(args.bounds)
    bounds = load_bounds(args.bounds)
    if not os.path.exists(args.x0):
        raise UsageError(f"x0 file not found: {args.x0}")
    x0_data = json.loads(manifest.read(args.x0))
    target = "all" if args.target == "all" else int(args.target)
    cfg = VerifyConfig(np.asarray(x0_data["x0"], dtype=float), args.radius, target, args.time_limit,
                       early_exit=args.early_exit)
    report = verify(net, bounds, cfg, _bnb(args, args.time_limit))
    label = x0_data.get("label")
    if label is not None and int(label) != report.reference_class:
        print(f"note: network predicts class {report.reference_class} for x0, label says {label}", file=sys.stderr)
    out = Path(args.out)
    witness_dir = Path(args.witness_dir) if args.witness_dir else out.parent
    witness_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for r in report.results:
        if r.witness is None:
            continue
        path = witness_dir / f"{out.stem}_witness_t{r.target}.json"
        with open(path, "w") as fh:
            json.dump({"x": r.witness.tolist(), "target_class": r.target, "reference_class": report.reference_class,
                       "predicted_class": r.witness_class, "objective": r.objective}, fh)
            fh.write("\n")
        files[r.target] = str(path)
        manifest.wrote(path)
    report.write_csv(out, files)
    manifest.wrote(out)
    manifest.save(out)
    for r in report.results:
        flag = "ADVERSARIAL" if r.adversarial else "robust" if r.status == OPTIMAL else "unknown"
        print(f"target {r.target}: {r.status} objective={r.objective} gap={r.rel_gap:.3g} {flag}")
    degraded = any(r.status != OPTIMAL for r in report.results)
    return EXIT_DEGRADED if degraded else EXIT_OK


def cmd_compare(args) -> int:
    manifest = _Manifest("compare", args)
    for path in (args.strong, args.other):
        if not os.path.exists(path):
            raise UsageError(f"bounds file not found: {path}")
        manifest.read(path)
    table = ro_gap(load_bounds(args.strong), load_bounds(args.other))
    table.write_csv(args.out)
    manifest.wrote(args.out)
    manifest.save(args.out)
    for row in table.layer_summary():
        print(f"layer {row['layer']}: lower mean {row['mean_lower']:.4g} max {row['max_lower']:.4g} | "
              f"upper mean {row['mean_upper']:.4g} max {row['max_upper']:.4g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actbounds", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def solver_flags(p):
        p.add_argument("--feas-tol", type=float, default=None, help="LP feasibility tolerance (env FEAS_TOL)")
        p.add_argument("--opt-tol", type=float, default=None, help="LP optimality tolerance (env OPT_TOL)")
        p.add_argument("--int-tol", type=float, default=None, help="integrality tolerance (env INT_TOL)")
        p.add_argument("--max-iter", type=int, default=None, help="simplex pivot limit per LP")

    p = sub.add_parser("gen", help="write a seeded random network")
    p.add_argument("--arch", type=_arch, required=True, help="widths joined by 'x', e.g. 2x20x20x3")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="uniform weight range [-scale, scale]")
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("prune", help="zero weights below a magnitude threshold")
    p.add_argument("--network", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--keep-bias", action="store_true", help="do not prune biases")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("bounds", help="compute activation bounds")
    p.add_argument("--network", required=True)
    p.add_argument("--method", choices=sorted(METHOD_ALIASES), required=True)
    p.add_argument("--layer-methods", default=None, help="comma list for --method hybrid")
    p.add_argument("--time-limit", type=float, default=3600.0, help="seconds per neuron-and-sense solve")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="per-neuron CSV")
    p.add_argument("--export-lp", default=None, metavar="DIR", help="write every model as an LP file")
    p.add_argument("--no-timing", action="store_true", help="write zero timings so files are reproducible")
    solver_flags(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("verify", help="search adversarial inputs around x0")
    p.add_argument("--network", required=True)
    p.add_argument("--bounds", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--target", default="all", help="'all' or a class index")
    p.add_argument("--time-limit", type=float, default=3600.0)
    p.add_argument("--early-exit", action="store_true")
    p.add_argument("--witness-dir", default=None)
    p.add_argument("--out", required=True)
    solver_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("compare", help="relative optimality gaps against strong bounds")
    p.add_argument("--strong", required=True)
    p.add_argument("--other", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, NetworkError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_DEGRADED


if __name__ == "__main__":
    sys.exit(main())
