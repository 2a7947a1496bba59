"""Heatmap -> coordinate decoders.

Both decoders take arrays shaped (..., K, H, W) and return coordinates in
heatmap pixels as (..., K, 2) arrays of (x, y), with per-joint confidences.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CoordTransform, compose
from .heatmap import KeypointSet

DECODER_MODES = ("integral", "argmax")

# softmax sharpness applied to peak-normalized heatmaps before decoding;
# tuned for unit-peak Gaussian targets with sigma = 2 heatmap pixels
DEFAULT_SHARPNESS = 16.0


class DecodeError(ValueError):
    pass


@dataclass
class DecodedKeypoints:
    coords: np.ndarray
    confidence: np.ndarray
    mode: str = "integral"


def _as_array(heatmap) -> np.ndarray:
    if hasattr(heatmap, "detach"):
        heatmap = heatmap.detach().cpu().numpy()
    arr = np.asarray(heatmap, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-1] == 0 or arr.shape[-2] == 0:
        raise DecodeError(f"heatmap must be (..., H, W) and nonempty, got {arr.shape}")
    return arr


def _softmax_flat(flat: np.ndarray) -> np.ndarray:
    shifted = flat - flat.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def argmax_decode(heatmap) -> DecodedKeypoints:
    """Grid position of each channel's maximum (first in row-major order on ties).

    NaN entries are ignored; a channel that is entirely NaN is an error.
    """
    hm = _as_array(heatmap)
    h, w = hm.shape[-2:]
    flat = hm.reshape(hm.shape[:-2] + (h * w,))
    nan = np.isnan(flat)
    if np.any(nan.all(axis=-1)):
        raise DecodeError("cannot decode an all-NaN heatmap channel")
    filled = np.where(nan, -np.inf, flat)
    idx = np.argmax(filled, axis=-1)
    coords = np.stack([idx % w, idx // w], axis=-1).astype(np.float64)
    probs = _softmax_flat(filled)
    conf = np.take_along_axis(probs, idx[..., None], axis=-1)[..., 0]
    return DecodedKeypoints(coords, conf, "argmax")


def integral_decode(heatmap) -> DecodedKeypoints:
    """Softmax-weighted expectation of grid positions for each channel."""
    hm = _as_array(heatmap)
    if not np.all(np.isfinite(hm)):
        raise DecodeError("integral decoding requires finite heatmap values")
    h, w = hm.shape[-2:]
    # normalize once at the end: a uniform map then has unit weights and
    # integer sums, so it lands on the grid center exactly
    e = np.exp(hm - hm.max(axis=(-2, -1), keepdims=True))
    z = e.sum(axis=(-2, -1))
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    x = (e.sum(axis=-2) * xs).sum(axis=-1) / z
    y = (e.sum(axis=-1) * ys).sum(axis=-1) / z
    return DecodedKeypoints(np.stack([x, y], axis=-1), 1.0 / z, "integral")


def sharpen(heatmap, sharpness: float = DEFAULT_SHARPNESS) -> np.ndarray:
    """Scale each channel so its peak sits at ``sharpness``.

    Predicted heatmaps are regressed towards unit-peak Gaussians, so their
    raw softmax is nearly flat over the grid; the rescaled map concentrates
    the softmax around the peak while staying symmetric about it. Channels
    without a positive peak are only multiplied by ``sharpness``.
    """
    hm = _as_array(heatmap)
    peak = hm.max(axis=(-2, -1), keepdims=True)
    scale = np.where(peak > 1e-6, sharpness / np.where(peak > 1e-6, peak, 1.0), sharpness)
    return hm * scale


def decode(heatmap, mode: str = "integral", sharpness: float | None = DEFAULT_SHARPNESS) -> DecodedKeypoints:
    """Decode predicted heatmaps with either decoder.

    ``sharpness=None`` feeds the raw values to the decoder.
    """
    if mode not in DECODER_MODES:
        raise DecodeError(f"decoder mode must be one of {DECODER_MODES}, got {mode!r}")
    hm = _as_array(heatmap) if sharpness is None else sharpen(heatmap, sharpness)
    return integral_decode(hm) if mode == "integral" else argmax_decode(hm)


def heatmap_to_input_transform(input_side: int, heatmap_side: int) -> CoordTransform:
    s = input_side / heatmap_side
    return CoordTransform(s, s, 0.0, 0.0)


def decode_to_image(decoded: DecodedKeypoints, chain, input_side: int, heatmap_side: int,
                    reference_length: float = 1.0) -> KeypointSet:
    """Map one sample's decoded heatmap coordinates back to the original image.

    ``chain`` holds the forward transforms (original -> network input) in
    application order, or a single already-composed transform.
    """
    coords = np.asarray(decoded.coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] != 2:
        raise DecodeError(f"expected (K, 2) coordinates, got {coords.shape}")
    forward = chain if isinstance(chain, CoordTransform) else compose(chain)
    in_input = heatmap_to_input_transform(input_side, heatmap_side).apply(coords)
    original = forward.apply_inverse(in_input)
    return KeypointSet(original, np.ones(len(original), dtype=bool), reference_length)
