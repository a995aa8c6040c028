"""Command line front end.

Each subcommand prints a one-line JSON summary on stdout. Exit codes:
0 success, 2 configuration error, 3 I/O or file-format error,
4 self-training produced no pseudo-labels in its first round.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .evaluation import SchemaMismatchError
from .io import Domain, SceneIOError
from .selftrain import ZeroPseudoLabelError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NO_PSEUDO = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--out", help="output root")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")


def _data(p, source=False, target=False):
    if source:
        p.add_argument("--source-root")
    if target:
        p.add_argument("--target-root")


def _cja(p):
    p.add_argument("--cja-range-deg", type=float)
    p.add_argument("--cja-prob", type=float)


def _detector(p):
    p.add_argument("--head", choices=["anchor", "center"])
    p.add_argument("--voxel-size", type=float)
    p.add_argument("--cluster-min-points", type=int)


def _thresholds(p):
    p.add_argument("--preset", dest="threshold_preset", choices=["phase1", "phase2"])
    p.add_argument("--pos-thresh-car", type=float)
    p.add_argument("--pos-thresh-ped", type=float)
    p.add_argument("--neg-thresh", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--refresh-every", type=int)
    p.add_argument("--mix-source", action="store_true", default=None,
                   help="refit on source labels as well as pseudo-labels (needs --source-root)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossplat3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--profile", default="vehicle", help="profile name (vehicle, quadruped, drone) or JSON file")
    p.add_argument("--spec", help="scene spec JSON file")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--domain", choices=["source", "target"], default="source")

    p = sub.add_parser("augment", help="write a CJA-augmented copy of a source dataset")
    _common(p)
    _data(p, source=True)
    _cja(p)

    p = sub.add_parser("pretrain", help="stage 1: fit the detector on source data")
    _common(p)
    _data(p, source=True)
    _cja(p)
    p.add_argument("--no-cja", dest="cja", action="store_false", default=None)
    _detector(p)

    p = sub.add_parser("selftrain", help="stage 2: pseudo-label self-training on target data")
    _common(p)
    _data(p, source=True, target=True)
    p.add_argument("--model", required=True)
    _thresholds(p)

    p = sub.add_parser("detect", help="run a model over a dataset")
    _common(p)
    _data(p, target=True)
    p.add_argument("--root", help="dataset to run on (defaults to --target-root)")
    p.add_argument("--model", required=True)

    p = sub.add_parser("eval", help="AP report of detections against ground truth")
    _common(p)
    p.add_argument("--dets", required=True, help="label directory or JSON-lines collection")
    p.add_argument("--gt", required=True, help="label directory or JSON-lines collection")
    p.add_argument("--bev", action="store_true", help="diagnostic: match by BEV IoU")

    p = sub.add_parser("ablation", help="CJA x ST3D grid on shared synthetic domains")
    _common(p)
    _data(p, source=True, target=True)
    _cja(p)
    _detector(p)
    _thresholds(p)
    p.add_argument("--n-source", type=int)
    p.add_argument("--n-target", type=int)
    return parser


_NON_CONFIG = {"command", "config", "profile", "spec", "frames", "domain", "model", "root", "dets", "gt", "bev"}


def _config(args) -> pipeline.PipelineConfig:
    cfg = pipeline.PipelineConfig.from_file(args.config) if args.config else pipeline.PipelineConfig()
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    return cfg.merged(overrides)


def _dispatch(args) -> dict:
    cfg = _config(args)
    if args.command == "gen":
        if args.spec:
            cfg = cfg.merged({"scene": json.loads(open(args.spec, encoding="utf-8").read())})
        return pipeline.run_gen(cfg, args.profile, args.frames, Domain(args.domain.capitalize()))
    if args.command == "augment":
        return pipeline.run_augment(cfg)
    if args.command == "pretrain":
        return pipeline.run_pretrain(cfg)
    if args.command == "selftrain":
        return pipeline.run_selftrain(cfg, args.model)
    if args.command == "detect":
        return pipeline.run_detect(cfg, args.model, args.root)
    if args.command == "eval":
        return pipeline.run_eval(cfg, args.dets, args.gt, args.bev)
    if args.command == "ablation":
        return pipeline.run_ablation(cfg)
    raise pipeline.ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        summary = _dispatch(args)
    except pipeline.ConfigError as exc:
        print(json.dumps({"command": args.command, "error": "config", "message": str(exc)}))
        return EXIT_CONFIG
    except ZeroPseudoLabelError as exc:
        print(json.dumps({"command": args.command, "error": "no_pseudo_labels", "message": str(exc)}))
        return EXIT_NO_PSEUDO
    except (SceneIOError, SchemaMismatchError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"command": args.command, "error": "io", "message": str(exc)}))
        return EXIT_IO
    summary["status"] = "ok"
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
