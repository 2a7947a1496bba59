"""End-to-end and cascade (detect, crop, then estimate) pose pipelines."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
import torch

from .decode import DEFAULT_SHARPNESS, DECODER_MODES, decode, decode_to_image
from .geometry import BoxRegion, CoordTransform, ImageBuffer, compose, crop, expand_box, pad_to_square, resize
from .heatmap import JOINT_INDEX, JOINT_NAMES, NUM_JOINTS, KeypointSet
from .model import images_to_tensor

SKELETON_EDGES = (
    ("l_wrist", "l_elbow"),
    ("l_elbow", "l_shoulder"),
    ("l_shoulder", "neck"),
    ("neck", "r_shoulder"),
    ("r_shoulder", "r_elbow"),
    ("r_elbow", "r_wrist"),
)
BOX_EXPANSION = 0.15
PIPELINE_MODES = ("end_to_end", "cascade")


class PipelineError(RuntimeError):
    pass


class NoPersonError(PipelineError):
    """The person detector found nobody; no pose can be estimated."""


class PersonDetector(Protocol):
    def detect(self, image: ImageBuffer) -> list[tuple[BoxRegion, float]]:
        ...


@dataclass
class PoseEstimate:
    keypoints: KeypointSet
    confidences: np.ndarray
    edges: list
    inference_ms: float
    transform: CoordTransform = field(default_factory=CoordTransform.identity)
    box: BoxRegion | None = None

    def to_record(self, image_id: str = "", pipeline: str = "", decoder: str = "") -> dict:
        """Prediction record; keys are emitted in this order.

        ``inference_ms`` is wall-clock timing and is the only field not
        covered by determinism guarantees.
        """
        return {
            "image_id": image_id,
            "pipeline": pipeline,
            "decoder": decoder,
            "joints": [
                {"name": name, "x": float(x), "y": float(y), "confidence": float(c)}
                for name, (x, y), c in zip(JOINT_NAMES, self.keypoints.xy, self.confidences)
            ],
            "edges": [list(e) for e in self.edges],
            "inference_ms": float(self.inference_ms),
        }


def connect_skeleton(keypoints: KeypointSet) -> list[tuple[str, str]]:
    """The upper-limb chain, minus links touching an undetected joint."""
    vis = keypoints.visible
    return [(a, b) for a, b in SKELETON_EDGES if vis[JOINT_INDEX[a]] and vis[JOINT_INDEX[b]]]


class GroundTruthBoxDetector:
    """Stand-in detector that boxes the annotated joints of an image.

    Images must carry a KeypointSet in ``image.annotation``.
    """

    def __init__(self, margin: float = 0.0):
        self.margin = margin

    def detect(self, image: ImageBuffer) -> list[tuple[BoxRegion, float]]:
        kps = image.annotation
        if kps is None:
            raise PipelineError(f"image {image.image_id!r} has no ground-truth annotation")
        pts = kps.xy[kps.visible]
        if len(pts) == 0:
            return []
        x0, y0 = pts.min(axis=0) - self.margin
        x1, y1 = pts.max(axis=0) + self.margin
        x0, y0 = max(x0, 0.0), max(y0, 0.0)
        x1, y1 = min(x1, float(image.width)), min(y1, float(image.height))
        # a single joint or a collinear set still needs a nonzero box
        w = max(x1 - x0, 1.0)
        h = max(y1 - y0, 1.0)
        return [(BoxRegion(float(x0), float(y0), float(w), float(h)), 1.0)]


class FullImageDetector:
    def detect(self, image: ImageBuffer) -> list[tuple[BoxRegion, float]]:
        return [(BoxRegion(0.0, 0.0, float(image.width), float(image.height)), 1.0)]


def prepare_input(image: ImageBuffer, input_side: int) -> tuple[ImageBuffer, list[CoordTransform]]:
    """Pad to a square and resize; returns the network input and its transforms."""
    padded, t_pad = pad_to_square(image)
    resized, t_resize = resize(padded, input_side)
    return resized, [t_pad, t_resize]


def _run_model(model, image: ImageBuffer) -> tuple[np.ndarray, float]:
    cfg = model.config
    if cfg.num_joints != NUM_JOINTS:
        raise PipelineError(f"model predicts {cfg.num_joints} joints; pipelines need {NUM_JOINTS}")
    if model.training:
        model.eval()
    dtype = next(model.parameters()).dtype
    batch = images_to_tensor([image], dtype)
    start = time.perf_counter()
    with torch.no_grad():
        outputs = model(batch)
    elapsed = (time.perf_counter() - start) * 1000.0
    # the final stack carries the refined prediction
    return outputs[-1][0].double().numpy(), elapsed


def _estimate(image: ImageBuffer, chain: list[CoordTransform], model, decoder_mode: str,
              sharpness: float | None) -> PoseEstimate:
    if decoder_mode not in DECODER_MODES:
        raise PipelineError(f"decoder mode must be one of {DECODER_MODES}, got {decoder_mode!r}")
    cfg = model.config
    net_input, prep = prepare_input(image, cfg.input_side)
    chain = list(chain) + prep
    heatmaps, ms = _run_model(model, net_input)
    decoded = decode(heatmaps, decoder_mode, sharpness)
    transform = compose(chain)
    kps = decode_to_image(decoded, transform, cfg.input_side, cfg.heatmap_side)
    return PoseEstimate(kps, decoded.confidence, connect_skeleton(kps), ms, transform)


def estimate_end_to_end(image: ImageBuffer, model, decoder_mode: str = "integral",
                        sharpness: float | None = DEFAULT_SHARPNESS) -> PoseEstimate:
    return _estimate(image, [], model, decoder_mode, sharpness)


def estimate_cascade(image: ImageBuffer, detector: PersonDetector, model, decoder_mode: str = "integral",
                     sharpness: float | None = DEFAULT_SHARPNESS,
                     expansion: float = BOX_EXPANSION) -> PoseEstimate:
    detections = detector.detect(image)
    if not detections:
        raise NoPersonError(f"no person detected in image {image.image_id!r}")
    box, _ = max(detections, key=lambda d: d[1])
    box = expand_box(box, expansion, (image.height, image.width))
    cropped, t_crop = crop(image, box)
    est = _estimate(cropped, [t_crop], model, decoder_mode, sharpness)
    est.box = box
    return est


def estimate(image: ImageBuffer, model, pipeline: str = "end_to_end", decoder_mode: str = "integral",
             detector: PersonDetector | None = None, sharpness: float | None = DEFAULT_SHARPNESS) -> PoseEstimate:
    if pipeline == "end_to_end":
        return estimate_end_to_end(image, model, decoder_mode, sharpness)
    if pipeline == "cascade":
        if detector is None:
            raise PipelineError("cascade pipeline requires a person detector")
        return estimate_cascade(image, detector, model, decoder_mode, sharpness)
    raise PipelineError(f"pipeline must be one of {PIPELINE_MODES}, got {pipeline!r}")


def write_records(records: Sequence[dict], fh) -> None:
    for rec in records:
        fh.write(json.dumps(rec) + "\n")
