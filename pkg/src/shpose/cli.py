"""Command line entry point: ``shpose {synth,train,predict,eval,bench}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .evaluation import MissingWeightsError
from .heatmap import JOINT_INDEX, JOINT_NAMES, KeypointSet
from .model import ModelError

log = logging.getLogger("shpose")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NONFINITE = 3


class CommandError(RuntimeError):
    pass


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}") from None
    if not _writable(out):
        raise CommandError(f"output directory is not writable: {out}")
    return out


def _writable(path: Path) -> bool:
    probe = path / ".write-probe"
    try:
        probe.write_text("")
        probe.unlink()
        return True
    except OSError:
        return False


def _require_dir(path: str, what: str) -> Path:
    if not path:
        raise CommandError(f"no {what} given")
    p = Path(path)
    if not p.exists():
        raise CommandError(f"{what} not found: {p}")
    return p


def cmd_synth(cfg: RunConfig, args) -> int:
    from .training.data import write_dataset
    from .training.synthetic import generate_dataset

    out = _out_dir(cfg)
    count = args.count if args.count is not None else cfg.synth.count
    samples = generate_dataset(cfg.scene, count, cfg.seed)
    ann = write_dataset(samples, out)
    print(f"wrote {count} samples ({cfg.scene.height}x{cfg.scene.width}, seed {cfg.seed}) to {ann}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    from .model import build_model
    from .training.data import load_dataset
    from .training.loop import NonFiniteLossError, train

    data = _require_dir(args.data or cfg.data.train, "training dataset")
    out = _out_dir(cfg)
    dataset = load_dataset(data)
    model = build_model(cfg.model, seed=cfg.seed)
    log.info("training %s (%s) on %d samples", cfg.model.name, cfg.model.upsample_mode, len(dataset))
    try:
        result = train(model, dataset, cfg.train, checkpoint_dir=out, resume=args.resume,
                       progress=lambda e, loss: print(f"epoch {e + 1}: mean loss {loss:.6f}", flush=True))
    except NonFiniteLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    if not result.epoch_losses:
        print("no epochs to run")
    return EXIT_OK


def _detector(cfg: RunConfig):
    from .pipeline import FullImageDetector, GroundTruthBoxDetector

    kind = cfg.predict.detector
    if kind == "gt_box":
        return GroundTruthBoxDetector(cfg.predict.detector_margin)
    if kind == "full_image":
        return FullImageDetector()
    return None


def _collect_inputs(args, cfg: RunConfig):
    """(image_id, loader) pairs; loaders raise on unreadable files."""
    from .geometry import ImageBuffer
    from .training.data import read_annotations

    items = []
    data = args.data or (cfg.data.eval if not args.inputs else "")
    if data:
        root = _require_dir(data, "dataset")
        for rec in read_annotations(root):
            kps = KeypointSet.from_records(rec["joints"], rec["reference_length"])
            image_id = Path(rec["image"]).stem

            def load(path=root / rec["image"], image_id=image_id, kps=kps):
                im = ImageBuffer.load(path, image_id=image_id)
                im.annotation = kps
                return im

            items.append((image_id, load))
    for name in args.inputs:
        path = Path(name)
        items.append((path.stem, lambda path=path: ImageBuffer.load(path, image_id=path.stem)))
    return items


def cmd_predict(cfg: RunConfig, args) -> int:
    from .pipeline import estimate, write_records
    from .weights import load_model

    settings = cfg.predict
    detector = _detector(cfg)
    if settings.pipeline == "cascade" and detector is None:
        raise CommandError("pipeline 'cascade' needs a person detector (set predict.detector)")
    weights = args.weights or settings.weights
    if not weights or not Path(weights).is_file():
        raise CommandError(f"weights file not found: {weights or '(none given)'}")
    model = load_model(weights)
    inputs = _collect_inputs(args, cfg)
    out = _out_dir(cfg)
    overlay_dir = out / "overlays"
    if args.overlay:
        overlay_dir.mkdir(exist_ok=True)
    failures = 0
    records = []
    for image_id, load in inputs:
        try:
            image = load()
            est = estimate(image, model, settings.pipeline, settings.decoder, detector, settings.sharpness)
        except Exception as exc:  # reported per image, run continues
            failures += 1
            records.append({"image_id": image_id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        records.append(est.to_record(image_id, settings.pipeline, settings.decoder))
        if args.overlay:
            draw_overlay(image, est).save(overlay_dir / f"{image_id}.png")
    with open(out / "predictions.jsonl", "w") as fh:
        write_records(records, fh)
    print(f"wrote {len(records)} prediction records to {out / 'predictions.jsonl'} ({failures} errors)")
    return EXIT_FAILURE if failures else EXIT_OK


def draw_overlay(image, est):
    from PIL import Image, ImageDraw

    canvas = Image.fromarray(image.to_uint8() if image.channels == 3 else
                             np.repeat(image.to_uint8(), 3, axis=2))
    draw = ImageDraw.Draw(canvas)
    xy = est.keypoints.xy
    for a, b in est.edges:
        pa, pb = xy[JOINT_INDEX[a]], xy[JOINT_INDEX[b]]
        draw.line([tuple(pa), tuple(pb)], fill=(255, 255, 255), width=2)
    r = max(2, round(min(image.height, image.width) / 80))
    for x, y in xy:
        draw.ellipse([x - r, y - r, x + r, y + r], fill=(255, 255, 0), outline=(0, 0, 0))
    return canvas


def _read_predictions(path) -> dict[str, dict]:
    records = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                records[rec["image_id"]] = rec
    return records


def cmd_eval(cfg: RunConfig, args) -> int:
    from .evaluation import evaluate_keypoints, write_curve_csv
    from .training.data import read_annotations

    data = _require_dir(args.data or cfg.data.eval, "evaluation dataset")
    gts = {Path(r["image"]).stem: KeypointSet.from_records(r["joints"], r["reference_length"])
           for r in read_annotations(data)}
    pred_path = args.predictions or cfg.eval.predictions
    if pred_path:
        if not Path(pred_path).is_file():
            raise CommandError(f"predictions file not found: {pred_path}")
        preds = _read_predictions(pred_path)
    else:
        weights = args.weights or cfg.predict.weights
        if not weights:
            raise CommandError("eval needs --predictions or --weights")
        preds = _predict_for_eval(cfg, data, weights)
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    if missing or extra:
        raise CommandError(f"prediction/ground-truth id mismatch: missing predictions for {missing}, "
                           f"unknown ids {extra}")
    failed = sorted(k for k, r in preds.items() if "error" in r)
    if failed:
        raise CommandError(f"predictions contain errors for ids {failed}")
    ids = sorted(gts)
    pred_sets = []
    for i in ids:
        by_name = {j["name"]: j for j in preds[i]["joints"]}
        xy = [[by_name[n]["x"], by_name[n]["y"]] for n in JOINT_NAMES]
        pred_sets.append(KeypointSet.all_visible(xy, gts[i].reference_length))
    report = evaluate_keypoints(pred_sets, [gts[i] for i in ids], cfg.eval.alphas)
    out = _out_dir(cfg)
    write_curve_csv(out / "curve.csv", [(a, acc) for a, acc in report.curve if a in set(cfg.eval.alphas)])
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    summary = ", ".join(f"{g} {v:.3f}" for g, v in report.pckh.items())
    print(f"PCKh@0.5 over {report.sample_count} samples: {summary}")
    return EXIT_OK


def _predict_for_eval(cfg: RunConfig, data: Path, weights: str) -> dict[str, dict]:
    from .pipeline import estimate
    from .training.data import load_dataset
    from .weights import load_model

    model = load_model(weights)
    detector = _detector(cfg)
    samples = load_dataset(data)
    out = {}
    for s in samples:
        est = estimate(s.image, model, cfg.predict.pipeline, cfg.predict.decoder, detector, cfg.predict.sharpness)
        out[s.image.image_id] = est.to_record(s.image.image_id)
    return out


def cmd_bench(cfg: RunConfig, args) -> int:
    from .evaluation import compare_variants, write_variant_csv
    from .model import ModelConfig
    from .training.data import load_dataset

    settings = cfg.bench
    grid_names = args.grid.split(",") if args.grid else list(settings.grid)
    grid_names = [g.strip() for g in grid_names if g.strip()]
    if not grid_names:
        raise CommandError("empty model grid")
    base = cfg.model
    grid = [(name, ModelConfig.from_name(name, channels=base.channels, num_joints=base.num_joints,
                                         input_side=base.input_side, heatmap_side=base.heatmap_side,
                                         upsample_mode=base.upsample_mode)) for name in grid_names]
    weights = {}
    if settings.weights_dir:
        wdir = _require_dir(settings.weights_dir, "weights directory")
        weights = {name: wdir / f"{name}.shw" for name, _ in grid if (wdir / f"{name}.shw").is_file()}
    dataset = None
    data = args.data or cfg.data.eval
    if data:
        dataset = load_dataset(_require_dir(data, "evaluation dataset"))
        if settings.limit:
            dataset = dataset[:settings.limit]
    rows = compare_variants(grid, dataset, weights, random_init=settings.random_init or args.random_init,
                            warmup=settings.warmup, reps=settings.reps, decoder_mode=cfg.predict.decoder,
                            seed=cfg.seed, rounds=settings.rounds)
    out = _out_dir(cfg)
    write_variant_csv(out / "variants.csv", rows)
    with open(out / "variants.json", "w") as fh:
        json.dump([{"model": r.name, "pckh@0.5": r.pckh, "latency": r.latency.to_dict()} for r in rows], fh, indent=2)
    for r in rows:
        print(f"{r.name}: mean {r.latency.mean_ms:.1f} ms, median {r.latency.median_ms:.1f} ms")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config entry, e.g. --set model.num_stacks=2")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="shpose", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic stick-figure dataset")
    p.add_argument("--count", type=int, help="number of samples (overrides synth.count)")

    p = sub.add_parser("train", parents=[common], help="train a model on a dataset directory")
    p.add_argument("--data", help="dataset directory (overrides data.train)")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    p = sub.add_parser("predict", parents=[common], help="estimate poses for images")
    p.add_argument("inputs", nargs="*", help="image files")
    p.add_argument("--data", help="dataset directory to predict on")
    p.add_argument("--weights", help="weight file (overrides predict.weights)")
    p.add_argument("--overlay", action="store_true", help="also write images with the skeleton drawn")

    p = sub.add_parser("eval", parents=[common], help="PCKh report and accuracy curve")
    p.add_argument("--data", help="labelled dataset directory (overrides data.eval)")
    p.add_argument("--predictions", help="prediction records to score")
    p.add_argument("--weights", help="predict with this model instead of reading records")

    p = sub.add_parser("bench", parents=[common], help="accuracy/latency table over a model grid")
    p.add_argument("--grid", help="comma-separated variant names, e.g. sh21,sh81")
    p.add_argument("--data", help="labelled dataset for the accuracy columns")
    p.add_argument("--random-init", action="store_true", help="use random weights where none are given")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(args.config, args.set, seed=args.seed, out=args.out)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CommandError, FileNotFoundError, MissingWeightsError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
