"""PCKh accuracy, accuracy curves and latency benchmarking."""
from __future__ import annotations

import csv
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
import torch

from .decode import DEFAULT_SHARPNESS, decode
from .heatmap import JOINT_INDEX, KeypointSet
from .model import build_model, images_to_tensor
from .geometry import ImageBuffer
from .pipeline import GroundTruthBoxDetector, estimate, prepare_input

JOINT_GROUPS = {
    "shoulder": ("l_shoulder", "r_shoulder"),
    "elbow": ("l_elbow", "r_elbow"),
    "wrist": ("l_wrist", "r_wrist"),
    "neck": ("neck",),
}
GROUP_NAMES = tuple(JOINT_GROUPS)
DEFAULT_ALPHAS = tuple(np.round(np.linspace(0.0, 0.5, 11), 10))


class EvaluationError(ValueError):
    pass


class MissingWeightsError(EvaluationError):
    def __init__(self, name: str):
        super().__init__(f"no weights for model variant {name!r}")
        self.name = name


def pckh(pred: KeypointSet, gt: KeypointSet, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-joint hits and the mask of joints that count.

    A visible ground-truth joint is a hit when the prediction lies within
    ``alpha * gt.reference_length`` (inclusive).
    """
    if not gt.reference_length > 0:
        raise EvaluationError(f"reference_length must be > 0, got {gt.reference_length}")
    dist = np.linalg.norm(pred.xy - gt.xy, axis=1)
    valid = gt.visible.copy()
    hits = valid & (dist <= alpha * gt.reference_length)
    return hits, valid


def group_accuracy(hits: np.ndarray, valid: np.ndarray) -> dict[str, float]:
    """Pooled hit rate per joint group over (N, 7) hit/valid arrays."""
    hits = np.atleast_2d(hits)
    valid = np.atleast_2d(valid)
    out = {}
    for group, names in JOINT_GROUPS.items():
        idx = [JOINT_INDEX[n] for n in names]
        n = valid[:, idx].sum()
        out[group] = float(hits[:, idx].sum() / n) if n else float("nan")
    return out


def accuracy_curve(predictions: Sequence[KeypointSet], ground_truths: Sequence[KeypointSet],
                   alphas: Iterable[float] = DEFAULT_ALPHAS) -> list[tuple[float, dict]]:
    if len(predictions) == 0:
        raise EvaluationError("no predictions to evaluate")
    if len(predictions) != len(ground_truths):
        raise EvaluationError(f"{len(predictions)} predictions vs {len(ground_truths)} ground truths")
    curve = []
    for alpha in alphas:
        results = [pckh(p, g, alpha) for p, g in zip(predictions, ground_truths)]
        hits = np.stack([r[0] for r in results])
        valid = np.stack([r[1] for r in results])
        curve.append((float(alpha), group_accuracy(hits, valid)))
    return curve


@dataclass
class LatencyStats:
    mean_ms: float
    median_ms: float
    p95_ms: float
    samples: int

    def to_dict(self) -> dict:
        # wall-clock values; excluded from determinism guarantees
        return {"mean_ms": self.mean_ms, "median_ms": self.median_ms, "p95_ms": self.p95_ms,
                "samples": self.samples, "deterministic": False}


@contextmanager
def single_thread():
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def _check_bench_args(warmup: int, reps: int) -> None:
    if reps < 10:
        raise EvaluationError(f"need at least 10 timed repetitions, got {reps}")
    if warmup < 0 or reps < warmup:
        raise EvaluationError(f"reps ({reps}) must not be smaller than warmup ({warmup})")


def _timed_passes(model, batches, passes: int, decoder_mode: str) -> list[float]:
    times = []
    for _ in range(passes):
        for x in batches:
            start = time.perf_counter()
            heatmaps = model(x)[-1][0].numpy()
            decode(heatmaps, decoder_mode)
            times.append((time.perf_counter() - start) * 1000.0)
    return times


def _stats(times: list[float]) -> LatencyStats:
    return LatencyStats(statistics.fmean(times), statistics.median(times),
                        float(np.percentile(times, 95)), len(times))


def benchmark_grid(models: dict, images, warmup: int = 2, reps: int = 10, rounds: int = 1,
                   decoder_mode: str = "integral") -> dict[str, LatencyStats]:
    """Per-image forward + decode wall time for several models on one thread.

    ``images`` are network-ready (already padded and resized) and must suit
    every model. Each model gets ``warmup`` discarded passes, then
    ``rounds`` rounds of ``reps`` timed passes; rounds visit the models in
    turn so slow drift in machine load spreads evenly over the grid.
    """
    _check_bench_args(warmup, reps)
    if rounds < 1:
        raise EvaluationError(f"rounds must be >= 1, got {rounds}")
    images = list(images)
    if not images:
        raise EvaluationError("no images to benchmark")
    prepared = {}
    for label, model in models.items():
        model.eval()
        dtype = next(model.parameters()).dtype
        prepared[label] = (model, [images_to_tensor([im], dtype) for im in images])
    times: dict[str, list] = {label: [] for label in models}
    with single_thread(), torch.no_grad():
        for model, batches in prepared.values():
            _timed_passes(model, batches, warmup, decoder_mode)
        for _ in range(rounds):
            for label, (model, batches) in prepared.items():
                times[label].extend(_timed_passes(model, batches, reps, decoder_mode))
    return {label: _stats(t) for label, t in times.items()}


def benchmark_latency(model, images, warmup: int = 2, reps: int = 10, decoder_mode: str = "integral") -> LatencyStats:
    """Single-model form of :func:`benchmark_grid` with one round."""
    return benchmark_grid({"model": model}, images, warmup, reps, 1, decoder_mode)["model"]


@dataclass
class EvalReport:
    pckh: dict
    curve: list
    latency: Optional[LatencyStats]
    sample_count: int
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pckh@0.5": self.pckh,
            "curve": [{"alpha": a, **acc} for a, acc in self.curve],
            "latency": self.latency.to_dict() if self.latency else None,
            "sample_count": self.sample_count,
            "errors": self.errors,
        }


def evaluate_keypoints(predictions, ground_truths, alphas=DEFAULT_ALPHAS, latency=None) -> EvalReport:
    alphas = sorted(set(float(a) for a in alphas) | {0.5})
    curve = accuracy_curve(predictions, ground_truths, alphas)
    at_half = dict(next(acc for a, acc in curve if a == 0.5))
    return EvalReport(at_half, curve, latency, len(predictions))


def predict_samples(model, samples, pipeline: str = "end_to_end", decoder_mode: str = "integral",
                    sharpness: float | None = DEFAULT_SHARPNESS):
    detector = GroundTruthBoxDetector() if pipeline == "cascade" else None
    return [estimate(s.image, model, pipeline, decoder_mode, detector, sharpness) for s in samples]


def evaluate_model(model, samples, pipeline: str = "end_to_end", decoder_mode: str = "integral",
                   alphas=DEFAULT_ALPHAS, sharpness: float | None = DEFAULT_SHARPNESS) -> EvalReport:
    estimates = predict_samples(model, samples, pipeline, decoder_mode, sharpness)
    times = sorted(e.inference_ms for e in estimates)
    latency = LatencyStats(statistics.fmean(times), statistics.median(times),
                           float(np.percentile(times, 95)), len(times)) if times else None
    return evaluate_keypoints([e.keypoints for e in estimates], [s.keypoints for s in samples], alphas, latency)


@dataclass
class VariantRow:
    name: str
    pckh: dict
    latency: LatencyStats
    report: Optional[EvalReport] = None


def compare_variants(grid, dataset=None, weights: Optional[dict] = None, random_init: bool = False,
                     bench_images=None, warmup: int = 2, reps: int = 10, decoder_mode: str = "integral",
                     seed: int = 0, dtype=torch.float32, rounds: int = 1) -> list[VariantRow]:
    """Accuracy and latency for each variant in ``grid``.

    ``grid`` holds ModelConfigs or (label, ModelConfig) pairs. Weights are
    looked up by label in ``weights`` (paths or models); with
    ``random_init`` missing entries get freshly initialized weights.
    Timing uses :func:`benchmark_grid`, so variants are measured
    interleaved. Benchmark images default to the first dataset image, or a
    random image without a dataset.
    """
    from .weights import load_model

    if not grid:
        raise EvaluationError("empty model grid")
    weights = weights or {}
    entries = [entry if isinstance(entry, tuple) else (entry.name, entry) for entry in grid]
    labels = [label for label, _ in entries]
    if len(set(labels)) != len(labels):
        raise EvaluationError(f"duplicate variant labels in {labels}")
    sides = {cfg.input_side for _, cfg in entries}
    if len(sides) != 1:
        raise EvaluationError(f"variants must share one input size, got {sorted(sides)}")
    side = sides.pop()

    models, reports = {}, {}
    for label, cfg in entries:
        source = weights.get(label)
        if source is None:
            if not random_init:
                raise MissingWeightsError(label)
            model = build_model(cfg, seed=seed, dtype=dtype)
        elif isinstance(source, torch.nn.Module):
            model = source
        else:
            model = load_model(source)
        model.eval()
        models[label] = model
        if dataset:
            reports[label] = evaluate_model(model, dataset, "end_to_end", decoder_mode)

    if bench_images is not None:
        images = [prepare_input(im, side)[0] for im in bench_images]
    elif dataset:
        images = [prepare_input(dataset[0].image, side)[0]]
    else:
        rng = np.random.default_rng(seed)
        images = [ImageBuffer(rng.uniform(0, 1, size=(side, side, 3)))]
    latency = benchmark_grid(models, images, warmup, reps, rounds, decoder_mode)

    rows = []
    for label, _ in entries:
        report = reports.get(label)
        acc = report.pckh if report else {g: float("nan") for g in GROUP_NAMES}
        rows.append(VariantRow(label, acc, latency[label], report))
    return rows


def _fmt(x: float) -> str:
    return "" if x != x else repr(float(x))


def write_curve_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", *GROUP_NAMES])
        for alpha, acc in curve:
            writer.writerow([repr(float(alpha)), *(_fmt(acc[g]) for g in GROUP_NAMES)])


def write_variant_csv(path, rows: Sequence[VariantRow]) -> None:
    """Columns: model, shoulder, elbow, wrist, neck (PCKh@0.5), time_ms (mean)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "shoulder", "elbow", "wrist", "neck", "time_ms"])
        for row in rows:
            writer.writerow([row.name, *(_fmt(row.pckh[g]) for g in GROUP_NAMES),
                             f"{row.latency.mean_ms:.3f}"])
