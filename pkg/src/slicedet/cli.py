"""Command-line front end: gen / train / detect / eval.

Exit codes: 0 success, 2 I/O or usage problems (missing files, unwritable
output, bad flags), 3 semantic errors (training stages out of order,
mismatched image sets, malformed corpora).

Configuration files are flat `key=value` lines with `#` comments. Flags
beat config values, config values beat the built-in defaults listed in
DEFAULTS. Unknown keys are rejected by name.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from .corpus import GenConfig, generate_corpus, load_manifest, load_samples, read_pgm
from .errors import (AnnotationError, ConfigError, DegenerateRegionError, IngestionError,
                     InputError, SliceDetError, UsageError)
from .evaluate import compute_prf, match_detections
from .pipeline import (PipelineConfig, build_detector, detect, load_detector, save_detector,
                       train_stage1, train_stage2)
from .proposals import AnchorConfig, RpnConfig
from .features import BackboneConfig
from .textlines import RegressionConfig

DEFAULTS: dict[str, object] = {
    "seed": 7,
    "anchor_heights": "11,16,23,33,47,67,96,137,196,280",
    "pos_iou": 0.7,
    "neg_iou": 0.3,
    "score_threshold": 0.7,
    "connect_max_gap": 50.0,
    "connect_min_overlap": 0.7,
    "stage16_channels": 64,
    "stage32_channels": 96,
    "fused_channels": 64,
    "blocks_per_stage": 2,
    "rpn_channels": 64,
    "rnn_hidden": 32,
    "pool_bins": 4,
    "head_hidden": 64,
    "batch_size": 128,
    "momentum": 0.9,
    "stage1_lr": 0.02,
    "stage2_lr": 0.001,
    "stage1_epochs": 12,
    "stage2_epochs": 80,
    "reg_lambda": 1.0,
    "jitter_expand": 0.15,
    "jitter_shrink": 0.08,
    "scale_short": 600,
    "scale_long": 1000,
    "eval_iou": 0.5,
    "gen_height_min": 192,
    "gen_height_max": 288,
    "gen_width_min": 352,
    "gen_width_max": 512,
    "gen_max_words": 6,
    "gen_noise": 0.04,
}


def parse_config_file(path) -> dict[str, object]:
    """Read key=value lines; values take the type of the matching default."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InputError("cannot read config %s: %s" % (path, exc)) from exc
    out: dict[str, object] = {}
    for ln, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config %s line %d: expected key=value" % (path, ln))
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError("config %s line %d: unknown key %r" % (path, ln, key))
        default = DEFAULTS[key]
        try:
            if isinstance(default, bool):
                out[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                out[key] = int(value)
            elif isinstance(default, float):
                out[key] = float(value)
            else:
                out[key] = value
        except ValueError as exc:
            raise ConfigError("config %s line %d: bad value for %r: %s"
                              % (path, ln, key, exc)) from exc
    return out


def resolve_settings(args) -> dict[str, object]:
    """defaults <- config file <- command-line flags."""
    settings = dict(DEFAULTS)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        settings.update(parse_config_file(cfg_path))
    for key in DEFAULTS:
        flag = getattr(args, "opt_" + key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def pipeline_config(settings: dict[str, object]) -> PipelineConfig:
    heights = tuple(int(v) for v in str(settings["anchor_heights"]).split(",") if v.strip())
    return PipelineConfig(
        backbone=BackboneConfig(
            stage16_channels=int(settings["stage16_channels"]),
            stage32_channels=int(settings["stage32_channels"]),
            fused_channels=int(settings["fused_channels"]),
            blocks_per_stage=int(settings["blocks_per_stage"])),
        anchors=AnchorConfig(heights=heights, pos_iou=float(settings["pos_iou"]),
                             neg_iou=float(settings["neg_iou"])),
        rpn=RpnConfig(mid_channels=int(settings["rpn_channels"]),
                      hidden_size=int(settings["rnn_hidden"])),
        regression=RegressionConfig(pool_bins=int(settings["pool_bins"]),
                                    hidden=int(settings["head_hidden"])),
        score_threshold=float(settings["score_threshold"]),
        connect_max_gap=float(settings["connect_max_gap"]),
        connect_min_overlap=float(settings["connect_min_overlap"]),
        scale_limits=(int(settings["scale_short"]), int(settings["scale_long"])),
        seed=int(settings["seed"]),
        batch_size=int(settings["batch_size"]),
        momentum=float(settings["momentum"]),
        stage1_lr=float(settings["stage1_lr"]),
        stage2_lr=float(settings["stage2_lr"]),
        stage1_epochs=int(settings["stage1_epochs"]),
        stage2_epochs=int(settings["stage2_epochs"]),
        reg_lambda=float(settings["reg_lambda"]),
        jitter_expand=float(settings["jitter_expand"]),
        jitter_shrink=float(settings["jitter_shrink"]),
    )


def gen_config(settings: dict[str, object]) -> GenConfig:
    return GenConfig(
        height_range=(int(settings["gen_height_min"]), int(settings["gen_height_max"])),
        width_range=(int(settings["gen_width_min"]), int(settings["gen_width_max"])),
        max_words=int(settings["gen_max_words"]),
        noise=float(settings["gen_noise"]),
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    settings = resolve_settings(args)
    seed = args.seed if args.seed is not None else int(settings["seed"])
    generate_corpus(args.out, args.count, seed, gen_config(settings))
    print("wrote %d images to %s" % (args.count, args.out))
    return 0


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    config = pipeline_config(settings)
    if args.epochs is not None:
        config = _with_epochs(config, args.stage, args.epochs)
    samples = load_samples(args.corpus)
    if not samples:
        raise IngestionError("corpus %s has no entries" % args.corpus)

    def progress(epoch, loss):
        print("epoch %d loss %.6f" % (epoch, loss))

    if args.stage == "2":
        if not os.path.exists(args.model):
            raise UsageError("stage 2 requires the stage-one model at %s" % args.model)
        detector = load_detector(args.model, config)
        train_stage2(detector, samples, progress=progress)
    elif args.stage == "1":
        detector = build_detector(config)
        train_stage1(detector, samples, progress=progress)
    else:
        detector = build_detector(config)
        losses1 = train_stage1(detector, samples, progress=progress)
        train_stage2(detector, samples, progress=progress, epoch_offset=len(losses1))
    save_detector(detector, args.model)
    print("saved model to %s" % args.model)
    return 0


def _with_epochs(config: PipelineConfig, stage: str, epochs: int) -> PipelineConfig:
    from dataclasses import replace
    if stage == "1":
        return replace(config, stage1_epochs=epochs)
    if stage == "2":
        return replace(config, stage2_epochs=epochs)
    return replace(config, stage1_epochs=epochs, stage2_epochs=epochs)


def _detect_one(detector, pixels, threshold):
    result = detect(detector, pixels, score_threshold=threshold)
    return result


def _detection_record(path, result):
    return {
        "path": path,
        "detections": [
            {"x0": b[0], "y0": b[1], "x1": b[2], "y1": b[3], "score": s}
            for b, s in result.detections
        ],
    }


def render_svg(extent, result) -> str:
    """Image-sized SVG: dashed rects for proposals, solid for detections."""
    h, w = extent
    parts = ['<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
             'width="%d" height="%d" viewBox="0 0 %d %d">' % (w, h, w, h)]
    for box, _ in result.proposal_boxes:
        parts.append('<rect x="%.2f" y="%.2f" width="%.2f" height="%.2f" '
                     'fill="none" stroke="#888888" stroke-width="1" '
                     'stroke-dasharray="4 3"/>'
                     % (box[0], box[1], box[2] - box[0], box[3] - box[1]))
    for box, _ in result.detections:
        parts.append('<rect x="%.2f" y="%.2f" width="%.2f" height="%.2f" '
                     'fill="none" stroke="#cc2200" stroke-width="2"/>'
                     % (box[0], box[1], box[2] - box[0], box[3] - box[1]))
    parts.append("</svg>")
    return "\n".join(parts)


def cmd_detect(args) -> int:
    settings = resolve_settings(args)
    config = pipeline_config(settings)
    threshold = args.threshold if args.threshold is not None else config.score_threshold
    detector = load_detector(args.model, config)

    records = []
    if args.image:
        pixels = read_pgm(args.image)
        result = _detect_one(detector, pixels, threshold)
        records.append(_detection_record(args.image, result))
        if args.svg:
            with open(args.svg, "w", encoding="utf-8") as fh:
                fh.write(render_svg(pixels.shape, result))
    else:
        manifest = load_manifest(args.corpus)
        base = os.path.dirname(os.path.abspath(args.corpus))
        for entry in manifest.entries:
            pixels = read_pgm(os.path.join(base, entry.path))
            result = _detect_one(detector, pixels, threshold)
            records.append(_detection_record(entry.path, result))

    doc = {"version": 1, "images": records}
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    else:
        json.dump(doc, sys.stdout, indent=1)
        sys.stdout.write("\n")
    return 0


def load_detections(path) -> dict[str, list]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError("cannot read detections %s: %s" % (path, exc)) from exc
    except json.JSONDecodeError as exc:
        raise IngestionError("detections %s are not valid JSON: %s" % (path, exc)) from exc
    if not isinstance(doc, dict) or "images" not in doc:
        raise IngestionError("detections %s: missing the images list" % path)
    out = {}
    for rec in doc["images"]:
        dets = [((d["x0"], d["y0"], d["x1"], d["y1"]), float(d["score"]))
                for d in rec["detections"]]
        out[rec["path"]] = dets
    return out


def cmd_eval(args) -> int:
    preds = load_detections(args.pred)
    manifest = load_manifest(args.gt, check_images=False)
    gt_paths = [e.path for e in manifest.entries]
    missing = sorted(set(gt_paths) - set(preds))
    extra = sorted(set(preds) - set(gt_paths))
    if missing or extra:
        name = (missing or extra)[0]
        raise UsageError("prediction and ground-truth image sets differ "
                         "(first mismatch: %s)" % name)
    per_image = []
    for entry in manifest.entries:
        gts = [wd.box for wd in entry.words]
        per_image.append(match_detections(preds[entry.path], gts,
                                          iou_threshold=args.iou, image=entry.path))
    report = compute_prf(per_image)
    print("precision %.6f" % report.precision)
    print("recall %.6f" % report.recall)
    print("f_measure %.6f" % report.f_measure)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_config_flag(p):
    p.add_argument("--config", help="flat key=value config file")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicedet",
                                     description="word-level text detection on gray images")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--count", type=int, required=True, help="number of images")
    p.add_argument("--seed", type=int, default=None, help="corpus seed (default from config)")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flag(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the detector")
    p.add_argument("--corpus", required=True, help="manifest.json of the training corpus")
    p.add_argument("--stage", choices=["1", "2", "both"], default="both")
    p.add_argument("--epochs", type=int, default=None, help="epochs for the trained stage(s)")
    p.add_argument("--model", required=True, help="model file (output; input too for --stage 2)")
    _add_config_flag(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="run detection")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="single PGM image")
    src.add_argument("--corpus", help="manifest.json; detects every image in it")
    p.add_argument("--threshold", type=float, default=None, help="proposal score threshold")
    p.add_argument("--json", help="write detections to this file instead of stdout")
    p.add_argument("--svg", help="write an overlay SVG (single image only)")
    _add_config_flag(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score detections against ground truth")
    p.add_argument("--pred", required=True, help="detections JSON from `detect`")
    p.add_argument("--gt", required=True, help="ground-truth manifest.json")
    p.add_argument("--iou", type=float, default=float(DEFAULTS["eval_iou"]))
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "detect" and args.svg and not args.image:
        parser.error("--svg needs --image")  # exits 2
    try:
        return args.func(args)
    except (UsageError, IngestionError, AnnotationError, DegenerateRegionError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 3
    except (InputError, ConfigError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
