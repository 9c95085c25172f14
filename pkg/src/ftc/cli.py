"""Command-line surface tying generation, building, verification, piece
certification, capacity bounds, and the scaling experiment together.

Exit codes: 0 success, 1 semantic failure (failed verification, violated
bound, infeasible build), 2 usage or parse error.  Every artifact-producing
command writes a run manifest next to its primary output; ``--no-timestamp``
makes reruns byte-identical.  Setting FTC_RATIONAL=1 lifts verification runs
to exact rational arithmetic.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from fractions import Fraction
from typing import List, Optional, Sequence

from . import __version__
from .bounds import (
    RegimeError,
    ftc_mc_consistency,
    m_bounds_2layer,
    m_bounds_3layer,
    n_bounds_2layer,
    n_bounds_3layer,
)
from .builders2 import build_two_layer
from .builders3 import (
    BuildError,
    TargetCollisionError,
    TargetRangeError,
    build_bump,
    build_compact,
    build_grid,
    build_sparse,
    three_layer_auto,
)
from .deep import build_deep
from .instance import (
    DirectionSearchError,
    FineTuneInstance,
    gen_adversarial,
    synthetic_instance,
)
from .network import (
    Layer,
    Network,
    relu_layer_widths,
    restrict_to_line,
    verify_finetune,
)
from .numerics import to_exact
from .partition import j_size_bound, reduced_index_set
from .pwl import Activation, piece_budget


class _ParseFailure(Exception):
    """Input file or value failed to parse; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(
    primary: str,
    command: str,
    args: argparse.Namespace,
    inputs: Sequence[str],
    outputs: Sequence[str],
) -> str:
    config = {
        k: v
        for k, v in sorted(vars(args).items())
        if k not in ("func", "no_timestamp") and not k.startswith("_")
    }
    manifest = {
        "command": command,
        "config": config,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": {p: _sha256(p) for p in outputs},
        "tool": {"name": "ftc", "version": __version__},
        "timestamp": None
        if args.no_timestamp
        else datetime.now(timezone.utc).isoformat(),
    }
    path = primary + ".manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise _ParseFailure(f"{path}: {exc}") from exc


def _load_instance(path: str) -> FineTuneInstance:
    obj = _load_json(path)
    try:
        return FineTuneInstance.from_json(obj)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise _ParseFailure(f"{path}: not a valid instance file ({exc})") from exc


def _load_network(path: str) -> Network:
    obj = _load_json(path)
    try:
        return Network.from_json(obj)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise _ParseFailure(f"{path}: not a valid network file ({exc})") from exc


def _parse_vector(text: str) -> List:
    """Comma-separated scalars; ints and p/q fractions stay exact."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            if "/" in tok:
                out.append(Fraction(tok))
            elif tok.lstrip("+-").isdigit():
                out.append(int(tok))
            else:
                out.append(float(tok))
        except (ValueError, ZeroDivisionError) as exc:
            raise _ParseFailure(f"bad vector component {tok!r}") from exc
    return out


def _rational_mode() -> bool:
    return os.environ.get("FTC_RATIONAL") == "1"


def _lift_network(net: Network) -> Network:
    """Promote every float weight (a dyadic rational) to an exact Fraction."""
    layers = [
        Layer(
            [[to_exact(v) for v in row] for row in l.weights],
            [to_exact(b) for b in l.biases],
            [
                Activation(a.kind, tuple((k, to_exact(v)) for k, v in a.params))
                for a in l.activations
            ],
        )
        for l in net.layers
    ]
    return Network(net.input_dim, layers, to_exact(net.output_bias))


def _verify(net: Network, inst: FineTuneInstance, tol: Optional[float]):
    if _rational_mode():
        net, inst = _lift_network(net), inst.as_exact()
        if tol is None:
            tol = 0
    return verify_finetune(net, inst, tol)


def _emit(obj: dict, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=1)
    print(text)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")


# ---------------------------------------------------------------------------
# gen / partition
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.kind == "adversarial":
        u = _parse_vector(args.direction) if args.direction else None
        inst = gen_adversarial(args.K, args.N, u)
    else:
        inst = synthetic_instance(
            args.K, args.d, args.N, seed=args.seed,
            target_low=args.target_low, target_high=args.target_high,
        )
    inst.save(args.out)
    _write_manifest(args.out, "gen", args, [], [args.out])
    print(
        f"wrote {args.out}: {inst.generator} instance "
        f"K={inst.K} N={inst.N} d={inst.d}"
    )
    return 0


def cmd_partition(args) -> int:
    inst = _load_instance(args.instance)
    reduced = reduced_index_set(inst.K, set(inst.tune_set))
    bound = j_size_bound(inst.K, inst.N)
    result = {
        "K": inst.K,
        "N": inst.N,
        "kept": list(reduced.kept),
        "removed": list(reduced.removed),
        "untuned_blocks": [list(b) for b in reduced.untuned_partition.blocks],
        "j_size": len(reduced.kept),
        "j_size_bound": bound,
    }
    _emit(result, args.out)
    if args.out:
        _write_manifest(args.out, "partition", args, [args.instance], [args.out])
    if len(reduced.kept) > bound:
        print("error: kept set exceeds its cardinality bound", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# build commands
# ---------------------------------------------------------------------------

_BUILDERS3 = {
    "grid": build_grid,
    "bump": build_bump,
    "sparse": build_sparse,
    "compact": build_compact,
    "auto": three_layer_auto,
}


def _finish_build(args, inst, net, report, command: str) -> int:
    vr = _verify(net, inst, None)
    net.save(args.out)
    report_path = args.report or args.out + ".report.json"
    payload = dict(report.to_json())
    payload["verified"] = vr.passed
    payload["max_err_on_T"] = float(vr.max_err_on_T)
    payload["max_err_off_T"] = float(vr.max_err_off_T)
    with open(report_path, "w") as fh:
        json.dump(payload, fh, indent=1)
    _write_manifest(
        args.out, command, args, [args.instance], [args.out, report_path]
    )
    width_note = ""
    if report.method == "deep":
        width_note = f" max_width={report.bound_parts['max_width']}"
    print(
        f"{report.method}: m={report.m} bound={report.bound}{width_note} "
        f"verified={vr.passed} -> {args.out}"
    )
    return 0 if vr.passed else 1


def cmd_build2(args) -> int:
    inst = _load_instance(args.instance)
    net, report = build_two_layer(inst)
    return _finish_build(args, inst, net, report, "build2")


def cmd_build3(args) -> int:
    inst = _load_instance(args.instance)
    net, report = _BUILDERS3[args.method](inst)
    return _finish_build(args, inst, net, report, "build3")


def cmd_deep(args) -> int:
    inst = _load_instance(args.instance)
    net, report = build_deep(inst, args.depth)
    return _finish_build(args, inst, net, report, "deep")


# ---------------------------------------------------------------------------
# verify / pieces
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    net = _load_network(args.network)
    inst = _load_instance(args.instance)
    vr = _verify(net, inst, args.tol)
    _emit(vr.to_json(), args.out)
    if args.out:
        _write_manifest(
            args.out, "verify", args, [args.network, args.instance], [args.out]
        )
    return 0 if vr.passed else 1


def _piece_ceiling(net: Network) -> Optional[int]:
    """Depth-appropriate ceiling in ReLU-equivalent widths, when one exists."""
    widths = relu_layer_widths(net)
    if len(widths) == 1:
        return widths[0] + 1
    if len(widths) == 2:
        d1, d2 = widths
        return 2 * d1 * d2 + d2 + 1
    return None


def cmd_pieces(args) -> int:
    net = _load_network(args.network)
    inst = _load_instance(args.instance) if args.instance else None

    direction = None
    if args.direction:
        direction = _parse_vector(args.direction)
    elif inst is not None and "u" in inst.meta:
        direction = _parse_vector(",".join(str(v) for v in inst.meta["u"]))
    if direction is None:
        direction = [1] + [0] * (net.input_dim - 1)
    if len(direction) != net.input_dim:
        raise _ParseFailure(
            f"direction has {len(direction)} components, need {net.input_dim}"
        )
    origin = _parse_vector(args.origin) if args.origin else [0] * net.input_dim

    line = restrict_to_line(net, direction, origin)
    count = line.piece_count()
    ceiling = _piece_ceiling(net)

    result = {
        "pieces": count,
        "ceiling": ceiling,
        "direction": [str(v) for v in direction],
        "origin": [str(v) for v in origin],
    }
    failed = []
    if ceiling is not None and count > ceiling:
        failed.append("piece count exceeds the architectural ceiling")
    if inst is not None:
        budget = piece_budget(inst.K, inst.N)
        vr = _verify(net, inst, args.tol)
        result["budget"] = budget
        result["verified"] = vr.passed
        if vr.passed and count < budget:
            failed.append("verified interpolant has fewer pieces than the budget")
    result["pass"] = not failed
    result["failures"] = failed
    _emit(result, args.out)
    if args.out:
        inputs = [args.network] + ([args.instance] if args.instance else [])
        _write_manifest(args.out, "pieces", args, inputs, [args.out])
    return 0 if not failed else 1


# ---------------------------------------------------------------------------
# bounds / experiment / report
# ---------------------------------------------------------------------------


def cmd_bounds(args) -> int:
    if args.N is not None:
        calc = m_bounds_2layer if args.depth == 2 else m_bounds_3layer
        result = calc(args.N, args.K).to_json()
        result["depth"] = args.depth
        result["direction"] = "neurons-for-samples"
    else:
        calc = n_bounds_2layer if args.depth == 2 else n_bounds_3layer
        result = calc(args.m, args.K).to_json()
        result["depth"] = args.depth
        result["direction"] = "samples-for-neurons"
        result["consistency"] = ftc_mc_consistency(args.m, args.K)
    _emit(result, args.out)
    if args.out:
        _write_manifest(args.out, "bounds", args, [], [args.out])
    return 0 if result.get("consistency", True) else 1


def cmd_experiment(args) -> int:
    # imported lazily: pulls in the training kernels (numba when available)
    from .experiment import PAPER_SCALE, TrainConfig, run_experiment

    overrides = dict(PAPER_SCALE) if args.paper_scale else {}
    for key, val in (
        ("K", args.K),
        ("d", args.d),
        ("f_epochs", args.f_epochs),
        ("g_epochs", args.g_epochs),
        ("master_seed", args.master_seed),
        ("seeds_per_cell", args.seeds),
        ("threshold", args.threshold),
        ("m_max", args.m_max),
    ):
        if val is not None:
            overrides[key] = val
    if args.constructive:
        overrides["constructive_init"] = True
    cfg = TrainConfig(**overrides)
    n_list = [int(v) for v in _parse_vector(args.n_list)]

    os.makedirs(args.out, exist_ok=True)
    res = run_experiment(cfg, n_list, workers=args.workers)

    rows_path = os.path.join(args.out, "rows.csv")
    summary_path = os.path.join(args.out, "summary.json")
    res.to_csv(rows_path)
    res.save_summary(summary_path)
    _write_manifest(
        os.path.join(args.out, "run"), "experiment", args, [],
        [rows_path, summary_path],
    )

    print(f"backend={res.meta['backend']} f_loss={res.meta['f_loss']:.3e}")
    for n in sorted(res.min_m):
        print(f"  N={n:4d}  min_m={res.min_m[n]}")
    if res.exponent is not None:
        print(f"exponent={res.exponent:.4f} stderr={res.stderr:.4f}")
    else:
        print("exponent=NA (fewer than 4 usable frontier points)")
    print(f"wrote {rows_path}, {summary_path}")
    return 0


_REPORT_COLUMNS = ["file", "method", "K", "N", "m", "bound", "margin", "verified"]


def _report_row(path: str) -> dict:
    obj = _load_json(path)
    try:
        method = obj["method"]
        measured = obj["bound_parts"]["max_width"] if method == "deep" else obj["m"]
        margin = obj["bound"] - measured
        return {
            "file": os.path.basename(path),
            "method": method,
            "K": obj["K"],
            "N": obj["N"],
            "m": obj["m"],
            "bound": obj["bound"],
            "margin": margin,
            "verified": bool(obj.get("verified", False)),
        }
    except (KeyError, TypeError) as exc:
        raise _ParseFailure(f"{path}: not a valid build report ({exc})") from exc


def cmd_report(args) -> int:
    rows = [_report_row(p) for p in args.reports]
    header = ",".join(_REPORT_COLUMNS)
    lines = [header]
    flagged = 0
    for row in rows:
        bad = row["margin"] < 0 or not row["verified"]
        flagged += bad
        lines.append(
            ",".join(str(row[c]) for c in _REPORT_COLUMNS)
            + (",FLAGGED" if bad else "")
        )
    text = "\n".join(lines)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
        _write_manifest(args.out, "report", args, list(args.reports), [args.out])
    if flagged:
        print(f"error: {flagged} row(s) violate a bound or failed verification",
              file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ftc",
        description="Exact additive fine-tuning builders and certificates.",
    )
    parser.add_argument("--version", action="version", version=f"ftc {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--no-timestamp", action="store_true",
        help="omit the timestamp from manifests for byte-identical reruns",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen", parents=[common], help="generate an instance file")
    gkind = p.add_subparsers(dest="kind", metavar="kind", required=True)
    ga = gkind.add_parser("adversarial", parents=[common],
                          help="collinear piece-forcing layout")
    ga.add_argument("-K", type=int, required=True)
    ga.add_argument("-N", type=int, required=True)
    ga.add_argument("--direction", help="comma-separated line direction u")
    ga.add_argument("-o", "--out", required=True)
    ga.set_defaults(func=cmd_gen, kind="adversarial")
    gs = gkind.add_parser("synthetic", parents=[common],
                          help="gaussian points, uniform targets")
    gs.add_argument("-K", type=int, required=True)
    gs.add_argument("-d", type=int, required=True)
    gs.add_argument("-N", type=int, required=True)
    gs.add_argument("--seed", type=int, default=0)
    gs.add_argument("--target-low", type=float, default=-1.0)
    gs.add_argument("--target-high", type=float, default=1.0)
    gs.add_argument("-o", "--out", required=True)
    gs.set_defaults(func=cmd_gen, kind="synthetic")

    p = sub.add_parser("partition", parents=[common],
                       help="point-removal index analysis for an instance")
    p.add_argument("instance")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("build2", parents=[common],
                       help="two-layer exact side network")
    p.add_argument("instance")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--report", help="report path (default: OUT.report.json)")
    p.set_defaults(func=cmd_build2)

    p = sub.add_parser("build3", parents=[common],
                       help="three-layer exact side network")
    p.add_argument("instance")
    p.add_argument("--method", choices=sorted(_BUILDERS3), default="auto")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--report", help="report path (default: OUT.report.json)")
    p.set_defaults(func=cmd_build3)

    p = sub.add_parser("deep", parents=[common],
                       help="depth-L stacked side network")
    p.add_argument("instance")
    p.add_argument("-L", "--depth", type=int, required=True)
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--report", help="report path (default: OUT.report.json)")
    p.set_defaults(func=cmd_deep)

    p = sub.add_parser("verify", parents=[common],
                       help="check the fine-tuning contract")
    p.add_argument("network")
    p.add_argument("instance")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("pieces", parents=[common],
                       help="piece count along a line, with certificates")
    p.add_argument("network")
    p.add_argument("--instance")
    p.add_argument("--direction", help="comma-separated direction")
    p.add_argument("--origin", help="comma-separated origin")
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_pieces)

    p = sub.add_parser("bounds", parents=[common],
                       help="closed-form capacity bounds")
    p.add_argument("--depth", type=int, choices=(2, 3), required=True)
    p.add_argument("-K", type=int, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("-N", type=int, help="tuned samples: solve for neurons")
    group.add_argument("-m", type=int, help="neuron budget: solve for samples")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("experiment", parents=[common],
                       help="width-vs-samples scaling run")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--n-list", default="2,4,8,16,32,64")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-K", type=int)
    p.add_argument("-d", type=int)
    p.add_argument("--f-epochs", type=int)
    p.add_argument("--g-epochs", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--seeds", type=int, help="seeds per cell")
    p.add_argument("--threshold", type=float)
    p.add_argument("--m-max", type=int)
    p.add_argument("--constructive", action="store_true",
                   help="exact-build initialization instead of trained g")
    p.add_argument("--paper-scale", action="store_true",
                   help="K=1000 preset; hours, not minutes")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", parents=[common],
                       help="consolidate build reports into a table")
    p.add_argument("reports", nargs="*")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse printed usage; keep its exit code
        return int(exc.code or 0)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except _ParseFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        BuildError,
        TargetRangeError,
        TargetCollisionError,
        RegimeError,
        DirectionSearchError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:  # bad argument values (domain checks)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
