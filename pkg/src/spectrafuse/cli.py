"""Command-line driver: segment bundles, inspect spectra, dump head matches,
and score label maps.

Exit codes: 0 success, 2 usage or validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .bundle import build_gram_graph, read_bundle
from .errors import ConvergenceFailure, NonFinite, SpectraFuseError
from .matching import match_heads
from .pipeline import RunConfig, segment_bundle
from .segmentation import evaluate, read_label_pgm, write_label_pgm
from .spectral import eigendecompose_symmetric, select_rank_energy

log = logging.getLogger("spectrafuse")

_CONFIG_FLAGS = (
    "alpha",
    "gamma",
    "eta",
    "epsilon",
    "m",
    "n",
    "cluster_threshold",
    "matching",
    "threads",
)


def _setup_logging() -> None:
    level = os.environ.get("SPECTRAFUSE_LOG", "error").lower()
    chosen = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level, logging.ERROR
    )
    logging.basicConfig(stream=sys.stderr, level=chosen, format="%(name)s %(levelname)s %(message)s")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectrafuse",
        description="Training-free open-vocabulary segmentation over tensor bundles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    seg = sub.add_parser("segment", help="run the full pipeline on a bundle")
    seg.add_argument("--bundle", required=True, help="bundle directory")
    seg.add_argument("--out", required=True, help="output directory")
    seg.add_argument("--config", help="JSON config file; explicit flags override it")
    seg.add_argument("--alpha", type=float, default=None)
    seg.add_argument("--gamma", type=float, default=None)
    seg.add_argument("--eta", type=float, default=None)
    seg.add_argument("--epsilon", type=float, default=None)
    seg.add_argument("--m", type=int, default=None)
    seg.add_argument("--n", type=int, default=None)
    seg.add_argument("--cluster-threshold", dest="cluster_threshold", type=float, default=None)
    seg.add_argument("--matching", choices=("complementary", "similar", "sequential"), default=None)
    seg.add_argument("--no-vfm", action="store_true", help="skip graph distillation entirely")
    seg.add_argument("--no-tailoring", action="store_true", help="distill raw, untailored graphs")
    seg.add_argument("--no-ops", action="store_true", help="disable object-perspective similarity")
    seg.add_argument("--no-ota", action="store_true", help="disable text-embedding adjustment")
    seg.add_argument("--threads", type=int, default=None)

    spec = sub.add_parser("inspect-spectrum", help="CSV eigenvalue spectrum of one head graph")
    spec.add_argument("--bundle", required=True)
    spec.add_argument("--side", choices=("vfm", "clip"), required=True)
    spec.add_argument("--head", type=int, required=True)
    spec.add_argument("--window", type=int, default=0)
    spec.add_argument("--eta", type=float, default=RunConfig.eta)

    match = sub.add_parser("match-heads", help="JSON cost matrix, pairing, and weights")
    match.add_argument("--bundle", required=True)
    match.add_argument("--window", type=int, default=0)
    match.add_argument("--m", type=int, default=None)
    match.add_argument(
        "--matching", choices=("complementary", "similar", "sequential"), default="complementary"
    )

    ev = sub.add_parser("eval", help="score a predicted label map against ground truth")
    ev.add_argument("--pred", required=True, help="predicted label PGM")
    ev.add_argument("--gt", required=True, help="ground-truth label PGM")
    ev.add_argument("--classes", required=True, help="JSON list of class names")
    ev.add_argument("--ignore-index", type=int, default=None)
    return parser


def _load_run_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            file_values = json.load(fh)
        for key, value in file_values.items():
            if not hasattr(config, key):
                raise ValueError(f"unknown config key {key!r}")
            setattr(config, key, value)
    for key in _CONFIG_FLAGS:
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)
    if args.no_vfm:
        config.use_vfm = False
    if args.no_tailoring:
        config.use_tailoring = False
    if args.no_ops:
        config.use_prior_similarity = False
    if args.no_ota:
        config.use_text_adjustment = False
    return config


def _cmd_segment(args: argparse.Namespace) -> int:
    config = _load_run_config(args)
    bundle = read_bundle(args.bundle)
    started = time.perf_counter()
    result = segment_bundle(bundle, config)
    elapsed = time.perf_counter() - started
    log.info("segmented %s in %.3f s", args.bundle, elapsed)
    os.makedirs(args.out, exist_ok=True)
    write_label_pgm(result.labels, os.path.join(args.out, "label_map.pgm"))
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(result.report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _head_graph(bundle, window: int, side: str, head: int) -> np.ndarray:
    if not (0 <= window < len(bundle.windows)):
        raise ValueError(f"window index {window} out of range")
    if not (0 <= head < bundle.h):
        raise ValueError(f"head index {head} out of range (h={bundle.h})")
    keys = bundle.windows[window].k_vfm if side == "vfm" else bundle.windows[window].k_clip
    return build_gram_graph(keys)[head]


def _cmd_inspect_spectrum(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.bundle)
    graph = _head_graph(bundle, args.window, args.side, args.head)
    system = eigendecompose_symmetric(graph)
    vals = np.maximum(system.eigenvalues, 0.0)
    trace = float(np.trace(graph))
    if trace > 0.0:
        selection = select_rank_energy(vals, trace, args.eta)
        fractions = np.cumsum(vals) / trace
        k = selection.k
    else:
        fractions = np.zeros_like(vals)
        k = vals.size
    print("rank,eigenvalue,cumulative_fraction,selected")
    for idx, (value, frac) in enumerate(zip(system.eigenvalues, fractions), start=1):
        print(f"{idx},{float(value)!r},{float(frac)!r},{1 if idx == k else 0}")
    return 0


def _cmd_match_heads(args: argparse.Namespace) -> int:
    bundle = read_bundle(args.bundle)
    if not (0 <= args.window < len(bundle.windows)):
        raise ValueError(f"window index {args.window} out of range")
    window = bundle.windows[args.window]
    a_vfm = build_gram_graph(window.k_vfm)
    a_clip = build_gram_graph(window.k_clip)
    m = args.m if args.m is not None else bundle.h
    assignment = match_heads(a_vfm, a_clip, m=m, mode=args.matching)
    payload = {
        "window": args.window,
        "mode": assignment.mode,
        "m": m,
        "cost_matrix": assignment.cost_matrix.tolist(),
        "pairs": [list(p) for p in assignment.pairs],
        "weights": assignment.weights.tolist(),
        "signatures": {
            "vfm": [s.values.tolist() for s in assignment.sig_vfm],
            "clip": [s.values.tolist() for s in assignment.sig_clip],
        },
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    pred = read_label_pgm(args.pred)
    gt = read_label_pgm(args.gt)
    with open(args.classes, encoding="utf-8") as fh:
        class_names = json.load(fh)
    if not isinstance(class_names, list) or not class_names:
        raise ValueError("classes file must hold a nonempty JSON list of names")
    report = evaluate(pred, gt, n_classes=len(class_names), ignore_index=args.ignore_index)
    payload = report.to_dict()
    payload["class_names"] = class_names
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


_COMMANDS = {
    "segment": _cmd_segment,
    "inspect-spectrum": _cmd_inspect_spectrum,
    "match-heads": _cmd_match_heads,
    "eval": _cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except (ConvergenceFailure, NonFinite) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SpectraFuseError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
