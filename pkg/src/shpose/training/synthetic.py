"""Procedural stick-figure scenes with exact upper-limb keypoints."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..geometry import ImageBuffer
from ..heatmap import JOINT_INDEX, NUM_JOINTS, KeypointSet


@dataclass
class Sample:
    image: ImageBuffer
    keypoints: KeypointSet
    meta: dict = field(default_factory=dict)

    @property
    def reference_length(self) -> float:
        return self.keypoints.reference_length


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Canvas size and the figure's proportions (pixels, degrees)."""

    height: int = 120
    width: int = 160
    torso_length: float = 40.0
    clavicle_length: float = 18.0
    upper_arm_length: float = 26.0
    forearm_length: float = 24.0
    torso_width: float = 14.0
    limb_width: float = 6.0
    head_radius: float = 9.0
    scale_range: tuple = (0.85, 1.15)
    torso_tilt_range: tuple = (-15.0, 15.0)
    # right upper arm direction, measured from +x with y pointing down;
    # the left arm uses the mirrored range
    upper_arm_range: tuple = (100.0, 250.0)
    elbow_bend_range: tuple = (-110.0, 110.0)
    noise_level: float = 0.05
    color_jitter: float = 0.15
    margin: float = 4.0

    def __post_init__(self):
        lengths = (self.torso_length, self.clavicle_length, self.upper_arm_length, self.forearm_length)
        if min(lengths) <= 0 or self.height < 8 or self.width < 8:
            raise ValueError(f"degenerate scene spec: {self}")
        if self.scale_range[0] <= 0 or self.scale_range[0] > self.scale_range[1]:
            raise ValueError(f"invalid scale range {self.scale_range}")


SEGMENT_COLORS = {
    "torso": (0.25, 0.70, 0.30),
    "clavicle": (0.90, 0.85, 0.20),
    "head": (0.95, 0.78, 0.62),
    "r_upper": (0.90, 0.15, 0.15),
    "r_fore": (0.95, 0.55, 0.10),
    "l_upper": (0.20, 0.30, 0.95),
    "l_fore": (0.15, 0.75, 0.95),
}


def _unit(deg: float) -> np.ndarray:
    r = math.radians(deg)
    return np.array([math.cos(r), math.sin(r)])


def _pose(spec: SyntheticSceneSpec, rng: np.random.Generator):
    s = rng.uniform(*spec.scale_range)
    tilt = rng.uniform(*spec.torso_tilt_range)
    anchor = np.array([
        rng.uniform(0.35, 0.65) * spec.width,
        spec.height - rng.uniform(0.0, 0.2) * spec.height,
    ])
    up = _unit(-90.0 + tilt)
    across = _unit(tilt)  # perpendicular to the torso, toward image right
    neck = anchor + spec.torso_length * s * up
    r_shoulder = neck - spec.clavicle_length * s * across
    l_shoulder = neck + spec.clavicle_length * s * across
    r_upper = rng.uniform(*spec.upper_arm_range) + tilt
    l_upper = 180.0 - rng.uniform(*spec.upper_arm_range) + tilt
    r_elbow = r_shoulder + spec.upper_arm_length * s * _unit(r_upper)
    l_elbow = l_shoulder + spec.upper_arm_length * s * _unit(l_upper)
    r_wrist = r_elbow + spec.forearm_length * s * _unit(r_upper + rng.uniform(*spec.elbow_bend_range))
    l_wrist = l_elbow + spec.forearm_length * s * _unit(l_upper + rng.uniform(*spec.elbow_bend_range))
    joints = {
        "r_wrist": r_wrist, "r_elbow": r_elbow, "r_shoulder": r_shoulder, "neck": neck,
        "l_shoulder": l_shoulder, "l_elbow": l_elbow, "l_wrist": l_wrist,
    }
    xy = np.zeros((NUM_JOINTS, 2))
    for name, p in joints.items():
        xy[JOINT_INDEX[name]] = p
    return xy, anchor, s


def _draw_capsule(canvas, xs, ys, a, b, width, color):
    ab = b - a
    denom = float(ab @ ab) or 1.0
    t = np.clip(((xs - a[0]) * ab[0] + (ys - a[1]) * ab[1]) / denom, 0.0, 1.0)
    d = np.hypot(xs - (a[0] + t * ab[0]), ys - (a[1] + t * ab[1]))
    alpha = np.clip(width / 2.0 - d + 0.5, 0.0, 1.0)[..., None]
    canvas *= 1.0 - alpha
    canvas += alpha * np.asarray(color)


def generate_synthetic_sample(spec: SyntheticSceneSpec, rng: np.random.Generator, image_id: str = "") -> Sample:
    """Render one figure; reference length is the neck-to-torso-anchor distance."""
    for _ in range(1000):
        xy, anchor, s = _pose(spec, rng)
        m = spec.margin
        if (xy[:, 0].min() >= m and xy[:, 0].max() <= spec.width - 1 - m
                and xy[:, 1].min() >= m and xy[:, 1].max() <= spec.height - 1 - m):
            break
    else:
        raise ValueError("scene spec cannot place the figure inside the canvas")

    h, w = spec.height, spec.width
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    base = rng.uniform(0.1, 0.6, size=3)
    gradient = rng.uniform(-0.15, 0.15, size=(2, 3))
    canvas = (base + (xs / w - 0.5)[..., None] * gradient[0] + (ys / h - 0.5)[..., None] * gradient[1])
    jitter = spec.color_jitter

    def color(name):
        c = np.asarray(SEGMENT_COLORS[name])
        if jitter > 0:
            c = c * rng.uniform(1.0 - jitter, 1.0 + jitter, size=3)
        return np.clip(c, 0.0, 1.0)

    j = {name: xy[i] for name, i in JOINT_INDEX.items()}
    _draw_capsule(canvas, xs, ys, anchor, j["neck"], spec.torso_width * s, color("torso"))
    _draw_capsule(canvas, xs, ys, j["r_shoulder"], j["l_shoulder"], spec.limb_width * s, color("clavicle"))
    head = j["neck"] + (j["neck"] - anchor) / np.linalg.norm(j["neck"] - anchor) * spec.head_radius * s * 1.3
    _draw_capsule(canvas, xs, ys, head, head, 2 * spec.head_radius * s, color("head"))
    for side in ("r", "l"):
        _draw_capsule(canvas, xs, ys, j[f"{side}_shoulder"], j[f"{side}_elbow"], spec.limb_width * s, color(f"{side}_upper"))
        _draw_capsule(canvas, xs, ys, j[f"{side}_elbow"], j[f"{side}_wrist"], spec.limb_width * s, color(f"{side}_fore"))
    if spec.noise_level > 0:
        canvas = canvas + rng.normal(0.0, spec.noise_level, size=canvas.shape)
    canvas = np.clip(canvas, 0.0, 1.0)

    ref = float(np.linalg.norm(j["neck"] - anchor))
    kps = KeypointSet.all_visible(xy, ref)
    image = ImageBuffer(canvas, image_id=image_id, annotation=kps)
    meta = {"scale": float(s), "anchor": anchor.tolist()}
    return Sample(image, kps, meta)


def generate_dataset(spec: SyntheticSceneSpec, count: int, seed: int) -> list[Sample]:
    """``count`` samples; sample ``i`` depends only on ``(seed, i)``."""
    return [
        generate_synthetic_sample(spec, np.random.default_rng([seed, i]), image_id=f"{i:06d}")
        for i in range(count)
    ]
