"""Batch command line: ``rotext {infer,proposals,gen-targets,loss-check,eval}``.

Exit codes: 0 success, 1 validation failure, 2 I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__
from .evaluation import evaluate
from .formats import FormatError, load_manifest, read_det_file, read_gt_file, write_det_file
from .geometry import ANGLE_MIN, PI
from .gradcheck import GRAD_TOL, LOSS_NAMES, run_loss_check
from .postprocess import ArrayProvider, LevelMaps, StubProvider, first_stage, infer_pipeline
from .targets import DEFAULT_SHRINK, generate_targets
from .tensorio import TensorFormatError, read_tensor, write_tensor

log = logging.getLogger("rotext")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
LOGIT_CLIP = 1e-6
OBJ_LOGIT = 12.0


def _load_levels(manifest):
    levels = []
    for entry in manifest.levels:
        obj_path = manifest.resolve(entry.objectness)
        reg_path = manifest.resolve(entry.regression)
        obj = read_tensor(obj_path)
        reg = read_tensor(reg_path)
        try:
            levels.append(LevelMaps(entry.stride, obj, reg))
        except ValueError as exc:
            raise FormatError(f"{reg_path}", str(exc)) from None
        expect = (math.ceil(manifest.image_size[0] / entry.stride), math.ceil(manifest.image_size[1] / entry.stride))
        if levels[-1].objectness.shape != expect:
            raise FormatError(
                obj_path, f"map shape {levels[-1].objectness.shape} does not match image size at stride {entry.stride} {expect}"
            )
    return levels


def _load_provider(manifest):
    ss = manifest.second_stage
    if ss is None:
        return StubProvider()
    seqs = read_tensor(manifest.resolve(ss["sequences"])) if ss.get("sequences") else None
    try:
        return ArrayProvider(
            read_tensor(manifest.resolve(ss["regression"])),
            read_tensor(manifest.resolve(ss["scores"])),
            seqs,
        )
    except ValueError as exc:
        raise FormatError("second_stage", str(exc)) from None


def _overrides(args):
    return dict(
        base_size=args.base_size,
        t_d=args.t_d,
        t_r=args.t_r,
        nms_iou=args.nms_iou,
        score_thresh=args.score_thresh,
        topk=args.topk,
    )


def cmd_infer(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = manifest.filter_config(**_overrides(args))
    levels = _load_levels(manifest)
    provider = _load_provider(manifest)
    if isinstance(provider, ArrayProvider):
        n_props = len(first_stage(levels, cfg))
        if len(provider) < n_props:
            raise FormatError("second_stage", f"{len(provider)} rows for {n_props} proposals")
    dets = infer_pipeline(levels, provider, cfg, manifest.alphabet, n_jobs=args.threads)
    write_det_file(args.output, dets)
    log.info("wrote %d detections to %s", len(dets), args.output)
    return EXIT_OK


def cmd_proposals(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = manifest.filter_config(**_overrides(args))
    props = first_stage(_load_levels(manifest), cfg)
    arr = np.array([b.as_tuple() + (s,) for b, s in props]).reshape(-1, 6)
    write_tensor(args.output, arr)
    log.info("wrote %d proposals to %s", len(props), args.output)
    return EXIT_OK


def targets_to_logits(cls: np.ndarray, reg: np.ndarray, base_size: float):
    """Invert the decoder's sigmoid mapping so ground-truth maps act as perfect predictions."""
    obj = np.where(cls > 0, OBJ_LOGIT, -OBJ_LOGIT)
    frac = np.empty_like(reg)
    frac[:4] = reg[:4] / base_size
    frac[4] = (reg[4] - ANGLE_MIN) / PI
    frac = np.clip(frac, LOGIT_CLIP, 1 - LOGIT_CLIP)
    return obj, np.log(frac) - np.log1p(-frac)


def cmd_gen_targets(args) -> int:
    gts = read_gt_file(args.gt)
    height, width = args.image_size
    os.makedirs(args.out_dir, exist_ok=True)
    maps = generate_targets(gts, height, width, args.shrink)
    levels = []
    for lt in maps:
        name = lt.spec.level_id.lower()
        write_tensor(os.path.join(args.out_dir, f"{name}_cls.rten"), lt.cls)
        write_tensor(os.path.join(args.out_dir, f"{name}_reg.rten"), lt.reg)
        if args.logits:
            obj, reg = targets_to_logits(lt.cls, lt.reg, args.base_size)
            write_tensor(os.path.join(args.out_dir, f"{name}_obj_logit.rten"), obj)
            write_tensor(os.path.join(args.out_dir, f"{name}_reg_logit.rten"), reg)
            levels.append(
                {"stride": lt.spec.stride, "objectness": f"{name}_obj_logit.rten", "regression": f"{name}_reg_logit.rten"}
            )
    if args.logits:
        manifest = {"image_size": [height, width], "levels": levels, "config": {"base_size": args.base_size}}
        with open(os.path.join(args.out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
    counts = {lt.spec.level_id: int(lt.cls.sum()) for lt in maps}
    log.info("positive cells per level: %s", counts)
    return EXIT_OK


def cmd_loss_check(args) -> int:
    report = run_loss_check(args.seed, args.trials, args.corrupt)
    ok = True
    for name, err in report.items():
        status = "ok" if err <= GRAD_TOL else "FAIL"
        ok &= err <= GRAD_TOL
        print(f"{name:<14} max_rel_err={err:.3e} {status}")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_eval(args) -> int:
    dets = read_det_file(args.det)
    gts = read_gt_file(args.gt)
    report = evaluate(dets, gts, args.iou)
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def _add_filter_flags(p):
    p.add_argument("--base-size", type=float, default=None, help="regression scale (default 640)")
    p.add_argument("--t-d", type=float, default=None, help="detection score threshold (default 0.7)")
    p.add_argument("--t-r", type=float, default=None, help="recognition score threshold (default 0.8)")
    p.add_argument("--nms-iou", type=float, default=None, help="NMS IoU threshold (default 0.3)")
    p.add_argument("--score-thresh", type=float, default=None, help="objectness threshold (default 0.5)")
    p.add_argument("--topk", type=int, default=None, help="proposals kept per level (default 1000)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotext", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="run the inference pipeline from a manifest")
    p.add_argument("manifest")
    p.add_argument("output")
    p.add_argument("--threads", type=int, default=1)
    _add_filter_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("proposals", help="dump first-stage proposals (N x 6 tensor: cx,cy,w,h,theta,score)")
    p.add_argument("manifest")
    p.add_argument("output")
    _add_filter_flags(p)
    p.set_defaults(func=cmd_proposals)

    p = sub.add_parser("gen-targets", help="write per-level classification/regression target maps")
    p.add_argument("gt")
    p.add_argument("out_dir")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("HEIGHT", "WIDTH"), required=True)
    p.add_argument("--shrink", type=float, default=DEFAULT_SHRINK)
    p.add_argument("--base-size", type=float, default=640.0)
    p.add_argument("--logits", action="store_true", help="also write logit-inverted maps and manifest.json")
    p.set_defaults(func=cmd_gen_targets)

    p = sub.add_parser("loss-check", help="finite-difference check of every loss gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--corrupt", choices=LOSS_NAMES, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_loss_check)

    p = sub.add_parser("eval", help="precision/recall/F-measure of detections against ground truth")
    p.add_argument("det")
    p.add_argument("gt")
    p.add_argument("--iou", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (TensorFormatError, FormatError, ValueError) as exc:
        print(f"rotext: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"rotext: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
