"""Image padding, cropping, resizing and coordinate bookkeeping.

Coordinates follow one convention everywhere: origin at the top-left pixel
center, x to the right, y downward, pixel centers on integer coordinates.
Every geometric operation returns a :class:`CoordTransform` mapping points
from its input frame to its output frame, so a chain of operations can be
undone exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass
class ImageBuffer:
    """An H x W x C raster with intensities in [0, 1].

    ``annotation`` is an optional sidecar (usually a KeypointSet in this
    image's frame) used by ground-truth driven components.
    """

    data: np.ndarray
    image_id: str = ""
    annotation: Optional[Any] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise GeometryError(f"image must be HxWxC, got shape {data.shape}")
        h, w, c = data.shape
        if h < 1 or w < 1 or c not in (1, 3):
            raise GeometryError(f"invalid image shape {data.shape}")
        if data.dtype == np.uint8:
            data = data.astype(np.float64) / 255.0
        else:
            data = data.astype(np.float64, copy=False)
        self.data = data

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray) -> "ImageBuffer":
        return ImageBuffer(data, image_id=self.image_id, annotation=self.annotation)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.round(self.data * 255.0), 0, 255).astype(np.uint8)

    @classmethod
    def load(cls, path, image_id: str = "") -> "ImageBuffer":
        from PIL import Image

        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
        return cls(arr, image_id=image_id or str(path))

    def save(self, path) -> None:
        from PIL import Image

        arr = self.to_uint8()
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
        Image.fromarray(arr).save(path)


@dataclass(frozen=True)
class BoxRegion:
    x0: float
    y0: float
    width: float
    height: float

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise GeometryError(f"box must have positive size, got {self}")

    @property
    def x1(self) -> float:
        return self.x0 + self.width

    @property
    def y1(self) -> float:
        return self.y0 + self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.width / 2.0, self.y0 + self.height / 2.0)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.width, self.height)


@dataclass(frozen=True)
class CoordTransform:
    """Per-axis affine map ``p' = scale * p + offset``."""

    scale_x: float = 1.0
    scale_y: float = 1.0
    offset_x: float = 0.0
    offset_y: float = 0.0

    def __post_init__(self):
        for s in (self.scale_x, self.scale_y):
            if not (math.isfinite(s) and s > 0):
                raise GeometryError(f"transform is not invertible (scale={s})")

    @classmethod
    def identity(cls) -> "CoordTransform":
        return cls()

    def inverse(self) -> "CoordTransform":
        return CoordTransform(
            1.0 / self.scale_x,
            1.0 / self.scale_y,
            -self.offset_x / self.scale_x,
            -self.offset_y / self.scale_y,
        )

    def then(self, other: "CoordTransform") -> "CoordTransform":
        """Apply ``self`` first, then ``other``."""
        return CoordTransform(
            other.scale_x * self.scale_x,
            other.scale_y * self.scale_y,
            other.scale_x * self.offset_x + other.offset_x,
            other.scale_y * self.offset_y + other.offset_y,
        )

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        out = np.empty_like(pts)
        out[..., 0] = pts[..., 0] * self.scale_x + self.offset_x
        out[..., 1] = pts[..., 1] * self.scale_y + self.offset_y
        return out

    def apply_inverse(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        out = np.empty_like(pts)
        out[..., 0] = (pts[..., 0] - self.offset_x) / self.scale_x
        out[..., 1] = (pts[..., 1] - self.offset_y) / self.scale_y
        return out

    def is_identity(self) -> bool:
        return (self.scale_x, self.scale_y, self.offset_x, self.offset_y) == (1.0, 1.0, 0.0, 0.0)


def compose(transforms: Iterable[CoordTransform]) -> CoordTransform:
    """Chain transforms in application order."""
    out = CoordTransform.identity()
    for t in transforms:
        out = out.then(t)
    return out


def map_points(points, transform: CoordTransform, direction: str = "forward") -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise GeometryError("points must be finite")
    if direction == "forward":
        return transform.apply(pts)
    if direction == "inverse":
        return transform.apply_inverse(pts)
    raise GeometryError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def pad_to_square(image: ImageBuffer, fill: float = 0.0) -> tuple[ImageBuffer, CoordTransform]:
    """Center ``image`` on an M x M canvas, M = max(height, width).

    The odd leftover pixel of padding goes to the bottom/right.
    """
    h, w = image.height, image.width
    m = max(h, w)
    if h == w:
        return image, CoordTransform.identity()
    top = (m - h) // 2
    left = (m - w) // 2
    out = np.full((m, m, image.channels), fill, dtype=np.float64)
    out[top:top + h, left:left + w] = image.data
    return image.with_data(out), CoordTransform(1.0, 1.0, float(left), float(top))


def bilinear_sample(data: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: Optional[float] = None) -> np.ndarray:
    """Sample an HxWxC array at real-valued pixel coordinates.

    With ``fill=None`` coordinates are clamped to the image; otherwise points
    outside the pixel-center hull take ``fill``.
    """
    h, w = data.shape[:2]
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if fill is not None:
        outside = (xs < 0) | (xs > w - 1) | (ys < 0) | (ys > h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.floor(xc).astype(np.intp)
    y0 = np.floor(yc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    top = data[y0, x0] * (1 - fx) + data[y0, x1] * fx
    bottom = data[y1, x0] * (1 - fx) + data[y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    if fill is not None:
        out[outside] = fill
    return out


def resize(image: ImageBuffer, side: int) -> tuple[ImageBuffer, CoordTransform]:
    """Bilinear resize of a square image to ``side`` x ``side``.

    Output pixel ``u`` samples the input at ``u / scale``, so the returned
    transform is a pure scaling.
    """
    if image.height != image.width:
        raise GeometryError(
            f"resize expects a square image, got {image.height}x{image.width}; pad it first"
        )
    if side < 1:
        raise GeometryError(f"side must be positive, got {side}")
    m = image.height
    if m == side:
        return image, CoordTransform.identity()
    scale = side / m
    coords = np.arange(side, dtype=np.float64) / scale
    xs, ys = np.meshgrid(coords, coords)
    out = bilinear_sample(image.data, xs, ys)
    return image.with_data(out), CoordTransform(scale, scale, 0.0, 0.0)


def expand_box(box: BoxRegion, factor: float, bounds: tuple[int, int]) -> BoxRegion:
    """Grow ``box`` by ``factor`` about its center, then clamp to ``bounds``.

    ``bounds`` is the parent image's (height, width); the clamp keeps the box
    inside the pixel extent [0, width] x [0, height].
    """
    if factor < 0:
        raise GeometryError(f"expansion factor must be >= 0, got {factor}")
    height, width = bounds
    cx, cy = box.center
    w = box.width * (1.0 + factor)
    h = box.height * (1.0 + factor)
    x0 = max(cx - w / 2.0, 0.0)
    y0 = max(cy - h / 2.0, 0.0)
    x1 = min(cx + w / 2.0, float(width))
    y1 = min(cy + h / 2.0, float(height))
    if x1 <= x0 or y1 <= y0:
        raise GeometryError(f"box {box} lies outside the {height}x{width} image")
    return BoxRegion(x0, y0, x1 - x0, y1 - y0)


def crop(image: ImageBuffer, box: BoxRegion) -> tuple[ImageBuffer, CoordTransform]:
    """Copy the pixels covered by ``box`` (snapped outward to whole pixels).

    The transform maps original coordinates into crop coordinates; use its
    inverse to go back.
    """
    x0 = max(int(math.floor(box.x0)), 0)
    y0 = max(int(math.floor(box.y0)), 0)
    x1 = min(int(math.ceil(box.x1)), image.width)
    y1 = min(int(math.ceil(box.y1)), image.height)
    if x1 <= x0 or y1 <= y0:
        raise GeometryError(f"box {box} does not intersect the {image.height}x{image.width} image")
    if (x0, y0, x1, y1) == (0, 0, image.width, image.height):
        return image, CoordTransform.identity()
    out = image.data[y0:y1, x0:x1].copy()
    return image.with_data(out), CoordTransform(1.0, 1.0, float(-x0), float(-y0))


def rotate(image: ImageBuffer, degrees: float, fill: float = 0.0) -> tuple[ImageBuffer, np.ndarray]:
    """Rotate about the image center, keeping the canvas size.

    Returns the rotated image and the 2x3 affine matrix taking original
    coordinates to rotated coordinates. With y pointing down, positive angles
    turn content clockwise on screen: 90 degrees sends (x, y) to (W-1-y, x)
    for a square image.
    """
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    # exact quarter turns keep integer pixel positions exact
    if abs(degrees % 90.0) < 1e-12:
        c, s = round(c), round(s)
    cx = (image.width - 1) / 2.0
    cy = (image.height - 1) / 2.0
    rot = np.array([[c, -s], [s, c]], dtype=np.float64)
    center = np.array([cx, cy])
    matrix = np.hstack([rot, (center - rot @ center)[:, None]])
    ys, xs = np.mgrid[0:image.height, 0:image.width].astype(np.float64)
    # inverse map: p = R^T (p' - c) + c
    dx, dy = xs - cx, ys - cy
    src_x = c * dx + s * dy + cx
    src_y = -s * dx + c * dy + cy
    out = bilinear_sample(image.data, src_x, src_y, fill=fill)
    return image.with_data(out), matrix


def apply_affine(matrix: np.ndarray, points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    return pts @ matrix[:, :2].T + matrix[:, 2]
