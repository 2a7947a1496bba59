"""Training-time augmentation: random crop, color dither, rotation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import BoxRegion, apply_affine, crop, rotate
from .synthetic import Sample

AUGMENTATIONS = ("random_crop", "color_dither", "rotation")
MAX_CROP_ATTEMPTS = 20


@dataclass(frozen=True)
class AugmentConfig:
    enabled: frozenset = frozenset(AUGMENTATIONS)
    crop_fraction: tuple = (0.75, 1.0)
    dither_range: tuple = (0.8, 1.2)
    rotation_range: tuple = (-30.0, 30.0)

    def __post_init__(self):
        unknown = set(self.enabled) - set(AUGMENTATIONS)
        if unknown:
            raise ValueError(f"unknown augmentations {sorted(unknown)}; choose from {AUGMENTATIONS}")


def _random_crop(sample: Sample, config: AugmentConfig, rng: np.random.Generator):
    img, kps = sample.image, sample.keypoints
    pts = kps.xy[kps.visible]
    for _ in range(MAX_CROP_ATTEMPTS):
        w = max(1, int(round(rng.uniform(*config.crop_fraction) * img.width)))
        h = max(1, int(round(rng.uniform(*config.crop_fraction) * img.height)))
        x0 = int(rng.integers(0, img.width - w + 1))
        y0 = int(rng.integers(0, img.height - h + 1))
        inside = ((pts[:, 0] >= x0) & (pts[:, 0] <= x0 + w - 1)
                  & (pts[:, 1] >= y0) & (pts[:, 1] <= y0 + h - 1))
        if inside.all():
            cropped, t = crop(img, BoxRegion(x0, y0, w, h))
            return Sample(cropped, kps.transformed(t.apply), dict(sample.meta))
    return None


def augment(sample: Sample, config: AugmentConfig, rng: np.random.Generator) -> Sample:
    """Apply the enabled augmentations in the order crop, dither, rotation.

    A crop that would cut off a visible joint is redrawn; after
    ``MAX_CROP_ATTEMPTS`` rejections the sample is returned unaugmented.
    """
    enabled = config.enabled
    out = sample
    if "random_crop" in enabled:
        out = _random_crop(sample, config, rng)
        if out is None:
            return sample
    if "color_dither" in enabled:
        gains = rng.uniform(*config.dither_range, size=out.image.channels)
        data = np.clip(out.image.data * gains, 0.0, 1.0)
        out = Sample(out.image.with_data(data), out.keypoints, dict(out.meta))
    if "rotation" in enabled:
        angle = float(rng.uniform(*config.rotation_range))
        rotated, matrix = rotate(out.image, angle)
        kps = out.keypoints.transformed(lambda p: apply_affine(matrix, p))
        out = Sample(rotated, kps, dict(out.meta))
    if out.image.annotation is not None:
        out.image.annotation = out.keypoints
    return out
