"""Dataset files and batch assembly.

On disk a dataset is a directory holding ``images/`` and
``annotations.jsonl``; each line is one record::

    {"image": "images/000000.png",
     "joints": [{"name": "r_wrist", "x": 12.5, "y": 40.0, "visible": true}, ...],
     "reference_length": 38.2}

Joints appear in the fixed order r_wrist, r_elbow, r_shoulder, neck,
l_shoulder, l_elbow, l_wrist. Paths are relative to the dataset directory.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..geometry import ImageBuffer, compose
from ..heatmap import GaussianSpec, KeypointSet, render_targets, target_mask
from ..pipeline import prepare_input
from .synthetic import Sample

ANNOTATION_FILE = "annotations.jsonl"


class DatasetError(FileNotFoundError):
    pass


def sample_record(sample: Sample, image_path: str) -> dict:
    return {
        "image": image_path,
        "joints": sample.keypoints.to_records(),
        "reference_length": sample.keypoints.reference_length,
    }


def write_dataset(samples, root) -> Path:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    with open(root / ANNOTATION_FILE, "w") as fh:
        for i, sample in enumerate(samples):
            rel = f"images/{sample.image.image_id or f'{i:06d}'}.png"
            sample.image.save(root / rel)
            fh.write(json.dumps(sample_record(sample, rel)) + "\n")
    return root / ANNOTATION_FILE


def read_annotations(root) -> list[dict]:
    root = Path(root)
    ann = root / ANNOTATION_FILE
    if not ann.is_file():
        raise DatasetError(f"dataset annotation file not found: {ann}")
    with open(ann) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_dataset(root) -> list[Sample]:
    root = Path(root)
    samples = []
    for rec in read_annotations(root):
        kps = KeypointSet.from_records(rec["joints"], rec["reference_length"])
        image_id = Path(rec["image"]).stem
        image = ImageBuffer.load(root / rec["image"], image_id=image_id)
        image.annotation = kps
        samples.append(Sample(image, kps))
    return samples


def to_training_pair(sample: Sample, input_side: int, heatmap_side: int, gaussian: GaussianSpec):
    """Network input (3xSxS), heatmap targets (7xHxH) and channel mask."""
    net_input, chain = prepare_input(sample.image, input_side)
    to_heatmap = heatmap_side / input_side
    xy = compose(chain).apply(sample.keypoints.xy) * to_heatmap
    kps = KeypointSet(xy, sample.keypoints.visible, sample.keypoints.reference_length)
    target = render_targets(kps, heatmap_side, heatmap_side, gaussian)
    mask = target_mask(kps, heatmap_side, heatmap_side, gaussian)
    return net_input.data.transpose(2, 0, 1), target, mask


def make_batch(samples, input_side: int, heatmap_side: int, gaussian: GaussianSpec, dtype=torch.float32):
    pairs = [to_training_pair(s, input_side, heatmap_side, gaussian) for s in samples]
    x = torch.from_numpy(np.stack([p[0] for p in pairs])).to(dtype)
    y = torch.from_numpy(np.stack([p[1] for p in pairs])).to(dtype)
    m = torch.from_numpy(np.stack([p[2] for p in pairs]))
    return x, y, m
