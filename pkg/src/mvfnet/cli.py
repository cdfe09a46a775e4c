"""Command-line entry point.

Exit codes: 0 success, 1 check failed (or training diverged), 2 usage error,
3 unreadable or invalid config, 4 weight file missing, corrupt or not
matching the configured network.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import checks
from .config import ConfigError, load_config
from .cost import cost_network
from .errors import MvfError
from .mvf import MvfConfig
from .network import PRESETS, NetworkSpec, build_network, parse_stages, preset
from .train import EvalProtocol, TrainingDiverged, evaluate, train
from .weights_io import WeightFileError, load_weights, save_weights

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_CONFIG, EXIT_WEIGHTS = 0, 1, 2, 3, 4


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _ratio(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvfnet", description="Multi-view fusion kernels, checks and desk-scale training.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("cost", help="analytical MACs and parameters of a network")
    c.add_argument("--backbone", choices=sorted(PRESETS), default="r50")
    c.add_argument("--frames", type=_positive_int, default=8)
    c.add_argument("--alpha", type=_ratio, default=0.5)
    c.add_argument("--stages", default="none", help="comma-separated stage names, or 'none'")
    c.add_argument("--classes", type=_positive_int, default=400)
    c.add_argument("--resolution", type=_positive_int, default=None, help="input side (backbone default)")
    c.add_argument("--crops", type=_positive_int, default=1)
    c.add_argument("--clips", type=_positive_int, default=1)
    c.add_argument("--per-layer", action="store_true")
    c.add_argument("--json", action="store_true")
    c.set_defaults(subparser=c)

    g = sub.add_parser("gradcheck", help="central-difference gradient checks (double precision)")
    g.add_argument("--target", choices=checks.GRAD_TARGETS + ("all",), default="all")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--json", action="store_true")
    g.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)

    e = sub.add_parser("equiv", help="specialization equivalence suites")
    e.add_argument("--which", choices=checks.EQUIV_SUITES + ("all",), default="all")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--json", action="store_true")

    t = sub.add_parser("train", help="train on a synthetic task")
    t.add_argument("config")
    t.add_argument("--out", required=True, help="weight file to write")
    t.add_argument("--history", default=None, help="JSON-lines history (default: <out>.history.jsonl)")
    t.add_argument("--json", action="store_true")

    v = sub.add_parser("eval", help="multi-view evaluation of trained weights")
    v.add_argument("config")
    v.add_argument("weights")
    v.add_argument("--clips", type=_positive_int, default=None, help="override eval.clips_per_video")
    v.add_argument("--crops", choices=("center1", "three"), default=None, help="override eval.crops")
    v.add_argument("--json", action="store_true")
    return p


def _cost(args, parser) -> int:
    bb = preset(args.backbone)
    stages = parse_stages(args.stages)
    unknown = sorted(stages - set(bb.stage_names))
    if unknown:
        parser.error(f"argument --stages: {unknown} not in {args.backbone} (stages: {', '.join(bb.stage_names)})")
    spec = NetworkSpec(bb, frames=args.frames, mvf=MvfConfig(alpha=args.alpha), mvf_stages=stages,
                       classes=args.classes, input_resolution=args.resolution)
    report = cost_network(spec, crops=args.crops, clips=args.clips)
    print(dumps(report.to_dict(per_layer=args.per_layer)) if args.json else report.format(args.per_layer))
    return EXIT_OK


def _gradcheck(args) -> int:
    targets = checks.GRAD_TARGETS if args.target == "all" else (args.target,)
    reports = [checks.run_gradcheck(t, args.seed, corrupt=args.corrupt) for t in targets]
    ok = all(r.passed for r in reports)
    if args.json:
        print(dumps({"passed": ok, "tolerance": checks.GRAD_TOL, "reports": [r.to_dict() for r in reports]}))
    else:
        for r in reports:
            for c in r.results:
                extra = f"  ({c.skipped} kink-crossing coords skipped)" if c.skipped else ""
                print(f"{r.target:<9} {c.name:<38} max_rel_err {c.max_rel_err:.3e}  "
                      f"{'ok' if c.passed else 'FAIL'}  [{c.checked} coords]{extra}")
            rel = "<" if r.passed else ">="
            print(f"{r.target}: max_rel_err {rel} {checks.GRAD_TOL:g} ({r.max_rel_err:.3e})")
    return EXIT_OK if ok else EXIT_CHECK


def _equiv(args) -> int:
    suites = checks.EQUIV_SUITES if args.which == "all" else (args.which,)
    reports = [checks.run_equiv(w, args.seed) for w in suites]
    ok = all(r.passed for r in reports)
    if args.json:
        print(dumps({"passed": ok, "reports": [r.to_dict() for r in reports]}))
    else:
        for r in reports:
            print(f"{r.which:<9} cases {r.cases:>4}  max abs deviation {r.max_abs_dev!r}  {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK


def _train(args) -> int:
    cfg = load_config(args.config)
    history_path = Path(args.history or f"{args.out}.history.jsonl")
    with open(history_path, "w") as hist:
        def on_epoch(row):
            hist.write(json.dumps(row, sort_keys=True) + "\n")
            hist.flush()
            if not args.json:
                print(f"epoch {row['epoch']:>3}  lr {row['lr']:.5g}  loss {row['train_loss']:.4f}  "
                      f"val_acc {row['val_acc']:.4f}", flush=True)

        result = train(cfg.network, cfg.task, cfg.train, on_epoch=on_epoch)
    save_weights(args.out, result.net.state())
    summary = {"config": cfg.to_dict(), "weights": str(args.out), "history": str(history_path),
               "final": result.history[-1] if result.history else None}
    if args.json:
        print(dumps(summary))
    else:
        print(f"wrote {args.out} and {history_path}")
    return EXIT_OK


def _eval(args) -> int:
    cfg = load_config(args.config)
    protocol = EvalProtocol(args.clips or cfg.eval.clips_per_video, args.crops or cfg.eval.crops,
                            cfg.eval.resolution)
    net = build_network(cfg.network, seed=cfg.train.seed)
    try:
        net.load_state(load_weights(args.weights))
    except OSError as e:
        raise WeightFileError(f"cannot read weights {args.weights}: {e}") from e
    except MvfError as e:
        raise WeightFileError(f"weights do not match the configured network: {e}") from e
    metrics = evaluate(net, cfg.task, protocol, cfg.eval_videos, cfg.eval_seed)
    protocol_info = {"clips_per_video": protocol.clips_per_video, "crops": protocol.crops, "views": protocol.views}
    if args.json:
        print(dumps({"protocol": protocol_info, "task": cfg.task.kind, "metrics": metrics}))
    else:
        print(f"protocol: {protocol.clips_per_video} clip(s) x {protocol.crops} = {protocol.views} view(s); "
              f"task {cfg.task.kind}; {metrics['videos']} videos")
        print(f"accuracy {metrics['accuracy']:.4f}")
        if "pair_accuracy" in metrics:
            print(f"pair_accuracy {metrics['pair_accuracy']:.4f}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "cost":
            return _cost(args, args.subparser)
        if args.command == "gradcheck":
            return _gradcheck(args)
        if args.command == "equiv":
            return _equiv(args)
        if args.command == "train":
            return _train(args)
        return _eval(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except WeightFileError as e:
        print(f"weights error: {e}", file=sys.stderr)
        return EXIT_WEIGHTS
    except TrainingDiverged as e:
        print(str(e), file=sys.stderr)
        return EXIT_CHECK
    except MvfError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
