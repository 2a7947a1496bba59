"""Upper-limb keypoint records, ground-truth heatmaps and the MSE signal."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

JOINT_NAMES = (
    "r_wrist",
    "r_elbow",
    "r_shoulder",
    "neck",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
)
NUM_JOINTS = len(JOINT_NAMES)
JOINT_INDEX = {name: i for i, name in enumerate(JOINT_NAMES)}

# standard deviation of the ground-truth Gaussian, in heatmap pixels
DEFAULT_SIGMA = 2.0


class HeatmapError(ValueError):
    pass


@dataclass
class KeypointSet:
    """The seven upper-limb joints in one coordinate frame.

    ``xy`` is (7, 2); ``visible`` is (7,) bool; ``reference_length`` is the
    per-sample PCKh normalizer in the same frame.
    """

    xy: np.ndarray
    visible: np.ndarray
    reference_length: float = 1.0

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(-1)
        if self.xy.shape != (NUM_JOINTS, 2) or self.visible.shape != (NUM_JOINTS,):
            raise HeatmapError(f"expected {NUM_JOINTS} joints, got xy {self.xy.shape}")
        if not self.reference_length > 0:
            raise HeatmapError(f"reference_length must be > 0, got {self.reference_length}")
        if not np.all(np.isfinite(self.xy[self.visible])):
            raise HeatmapError("visible joints must have finite coordinates")
        self.reference_length = float(self.reference_length)

    @classmethod
    def all_visible(cls, xy, reference_length: float = 1.0) -> "KeypointSet":
        return cls(xy, np.ones(NUM_JOINTS, dtype=bool), reference_length)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.xy[JOINT_INDEX[name]]

    def transformed(self, fn, reference_scale: float = 1.0) -> "KeypointSet":
        """Map coordinates through ``fn`` (an (N, 2) -> (N, 2) callable)."""
        return KeypointSet(fn(self.xy), self.visible.copy(), self.reference_length * reference_scale)

    def to_records(self) -> list[dict]:
        return [
            {"name": name, "x": float(x), "y": float(y), "visible": bool(v)}
            for name, (x, y), v in zip(JOINT_NAMES, self.xy, self.visible)
        ]

    @classmethod
    def from_records(cls, records: list[dict], reference_length: float) -> "KeypointSet":
        by_name = {r["name"]: r for r in records}
        missing = [n for n in JOINT_NAMES if n not in by_name]
        if missing:
            raise HeatmapError(f"missing joints: {missing}")
        xy = [[by_name[n]["x"], by_name[n]["y"]] for n in JOINT_NAMES]
        vis = [bool(by_name[n].get("visible", True)) for n in JOINT_NAMES]
        return cls(xy, vis, reference_length)


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float = DEFAULT_SIGMA

    def __post_init__(self):
        if not self.sigma > 0:
            raise HeatmapError(f"sigma must be > 0, got {self.sigma}")


def render_targets(keypoints: KeypointSet, height: int, width: int,
                   spec: GaussianSpec = GaussianSpec()) -> np.ndarray:
    """Render one unit-peak Gaussian per visible joint.

    ``keypoints`` must already be in the heatmap frame. Joints farther than
    three sigma outside the grid are treated as invisible.
    """
    if height < 1 or width < 1:
        raise HeatmapError(f"heatmap dimensions must be positive, got {height}x{width}")
    sigma = spec.sigma
    out = np.zeros((NUM_JOINTS, height, width), dtype=np.float64)
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    margin = 3.0 * sigma
    for k in range(NUM_JOINTS):
        if not keypoints.visible[k]:
            continue
        x, y = keypoints.xy[k]
        if not (-margin <= x <= width - 1 + margin and -margin <= y <= height - 1 + margin):
            continue
        # separable: exp(-(dx^2 + dy^2) / 2s^2) = gx * gy
        gx = np.exp(-((xs - x) ** 2) / (2 * sigma * sigma))
        gy = np.exp(-((ys - y) ** 2) / (2 * sigma * sigma))
        out[k] = gy[:, None] * gx[None, :]
    return out


def target_mask(keypoints: KeypointSet, height: int, width: int,
                spec: GaussianSpec = GaussianSpec()) -> np.ndarray:
    """Boolean (7,) mask of channels that carry a rendered target."""
    margin = 3.0 * spec.sigma
    x, y = keypoints.xy[:, 0], keypoints.xy[:, 1]
    with np.errstate(invalid="ignore"):
        inside = (x >= -margin) & (x <= width - 1 + margin) & (y >= -margin) & (y <= height - 1 + margin)
    return keypoints.visible & inside


def mse_loss(pred, target, mask=None):
    """Per-joint mean squared error over pixels, plus its masked mean.

    Works on numpy arrays and torch tensors of shape (..., K, H, W). ``mask``
    (shape (..., K)) drops channels from the mean; masked channels still get
    a per-joint value. Returns ``(per_joint, total)``.
    """
    if tuple(pred.shape) != tuple(target.shape):
        raise HeatmapError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    if len(pred.shape) < 3:
        raise HeatmapError(f"expected (..., K, H, W), got {tuple(pred.shape)}")
    diff = pred - target
    per_joint = (diff * diff).mean(-1).mean(-1)
    if mask is None:
        return per_joint, per_joint.mean()
    if tuple(mask.shape) != tuple(per_joint.shape):
        raise HeatmapError(f"mask shape {tuple(mask.shape)} does not match {tuple(per_joint.shape)}")
    weights = mask * 1.0 if isinstance(mask, np.ndarray) else mask.to(per_joint.dtype)
    count = weights.sum()
    if float(count) == 0:
        return per_joint, (per_joint * weights).sum()
    return per_joint, (per_joint * weights).sum() / count

