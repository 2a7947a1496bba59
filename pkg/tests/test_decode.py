import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shpose.decode import (
    DecodeError,
    argmax_decode,
    decode,
    decode_to_image,
    integral_decode,
    sharpen,
)
from shpose.geometry import CoordTransform, GeometryError
from shpose.heatmap import KeypointSet, render_targets


def scan_argmax(channel):
    """Exhaustive row-major scan keeping the first strict maximum."""
    best, pos = -math.inf, None
    for y in range(channel.shape[0]):
        for x in range(channel.shape[1]):
            if channel[y, x] > best:
                best, pos = channel[y, x], (x, y)
    return pos


def literal_soft_argmax(channel):
    """Softmax-weighted sum of grid positions, written out term by term."""
    z = 0.0
    sx = sy = 0.0
    for y in range(channel.shape[0]):
        for x in range(channel.shape[1]):
            w = math.exp(channel[y, x])
            z += w
            sx += x * w
            sy += y * w
    return sx / z, sy / z


def test_argmax_one_hot():
    hm = np.zeros((1, 12, 12))
    hm[0, 7, 5] = 1.0
    dec = argmax_decode(hm)
    assert tuple(dec.coords[0]) == (5.0, 7.0)


def test_argmax_constant_tie_break():
    dec = argmax_decode(np.full((1, 6, 9), 3.0))
    assert tuple(dec.coords[0]) == (0.0, 0.0)


def test_argmax_matches_exhaustive_scan():
    rng = np.random.default_rng(0)
    for _ in range(200):
        h, w = rng.integers(1, 20, size=2)
        ch = rng.normal(size=(h, w))
        if rng.random() < 0.3:
            ch = np.round(ch)  # plenty of ties
        assert tuple(argmax_decode(ch[None]).coords[0]) == scan_argmax(ch)


def test_argmax_all_nan_channel():
    hm = np.zeros((2, 3, 3))
    hm[1] = np.nan
    with pytest.raises(DecodeError):
        argmax_decode(hm)


def test_argmax_ignores_nan_entries():
    hm = np.zeros((1, 3, 3))
    hm[0, 0, 0] = np.nan
    hm[0, 2, 1] = 5.0
    assert tuple(argmax_decode(hm).coords[0]) == (1.0, 2.0)


def test_argmax_confidence_is_softmax_peak():
    hm = np.log(np.array([[[1.0, 2.0, 1.0]]]))
    assert argmax_decode(hm).confidence[0] == pytest.approx(0.5)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_argmax_invariant_to_monotone_maps(seed):
    ch = np.random.default_rng(seed).normal(size=(1, 9, 11))
    ref = argmax_decode(ch).coords
    for f in (np.exp, lambda v: v ** 3 + 2 * v, lambda v: 5 * v - 3, np.arctan):
        assert np.array_equal(argmax_decode(f(ch)).coords, ref)


def test_integral_uniform_is_center():
    dec = integral_decode(np.zeros((1, 7, 10)))
    assert tuple(dec.coords[0]) == ((10 - 1) / 2, (7 - 1) / 2)


def test_integral_symmetric_peak():
    dec = integral_decode(np.array([[[0.0, 1.0, 0.0]]]))
    assert dec.coords[0, 0] == pytest.approx(1.0, abs=1e-15)
    assert dec.coords[0, 1] == 0.0


def test_integral_edge_peak_matches_literal_oracle():
    dec = integral_decode(np.array([[[0.0, 0.0, 1.0]]]))
    e = math.e
    expected = (0 * 1 + 1 * 1 + 2 * e) / (1 + 1 + e)
    assert literal_soft_argmax(np.array([[0.0, 0.0, 1.0]]))[0] == pytest.approx(expected, abs=1e-15)
    assert dec.coords[0, 0] == pytest.approx(expected, abs=1e-12)


def test_integral_matches_literal_oracle_random():
    rng = np.random.default_rng(1)
    for _ in range(200):
        h, w = rng.integers(1, 16, size=2)
        ch = rng.normal(scale=3.0, size=(h, w))
        got = integral_decode(ch[None]).coords[0]
        assert np.allclose(got, literal_soft_argmax(ch), atol=1e-9, rtol=0)


def test_integral_rejects_non_finite():
    with pytest.raises(DecodeError):
        integral_decode(np.array([[[0.0, np.inf]]]))


def test_integral_large_values_are_stable():
    ch = np.array([[[1000.0, 1000.0, 990.0]]])
    x = integral_decode(ch).coords[0, 0]
    assert math.isfinite(x) and x == pytest.approx(0.5, abs=1e-4)


def single_peak_map(rng, h=24, w=24):
    ch = rng.uniform(0.0, 0.5, size=(h, w))
    y, x = rng.integers(0, h), rng.integers(0, w)
    ch[y, x] = 1.0
    return ch


def test_sharpness_limit_approaches_argmax():
    rng = np.random.default_rng(2)
    for _ in range(100):
        ch = single_peak_map(rng)[None]
        soft = integral_decode(50.0 * ch).coords[0]
        hard = argmax_decode(ch).coords[0]
        assert np.linalg.norm(soft - hard) < 0.01


@given(st.integers(0, 2**31 - 1), st.integers(-4, 4), st.integers(-4, 4))
@settings(max_examples=40, deadline=None)
def test_translation_equivariance(seed, dx, dy):
    rng = np.random.default_rng(seed)
    # effectively zero mass outside the support, so shifting is exact
    ch = np.full((24, 24), -1e4)
    ch[8:16, 8:16] = rng.normal(size=(8, 8))
    moved = np.roll(np.roll(ch, dy, axis=0), dx, axis=1)
    a, b = integral_decode(ch[None]).coords[0], integral_decode(moved[None]).coords[0]
    assert np.allclose(b - a, [dx, dy], atol=1e-9)
    a, b = argmax_decode(ch[None]).coords[0], argmax_decode(moved[None]).coords[0]
    assert np.array_equal(b - a, [dx, dy])


@given(st.integers(0, 2**31 - 1), st.floats(-500, 500))
@settings(max_examples=40, deadline=None)
def test_integral_shift_invariance(seed, c):
    ch = np.random.default_rng(seed).normal(scale=2.0, size=(1, 10, 13))
    assert np.allclose(integral_decode(ch + c).coords, integral_decode(ch).coords, atol=1e-9, rtol=0)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_integral_inside_grid_hull(seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(1, 20, size=2)
    ch = rng.normal(scale=10.0, size=(3, h, w))
    dec = integral_decode(ch)
    assert np.all(dec.coords[:, 0] >= 0) and np.all(dec.coords[:, 0] <= w - 1)
    assert np.all(dec.coords[:, 1] >= 0) and np.all(dec.coords[:, 1] <= h - 1)
    assert np.all((dec.confidence > 0) & (dec.confidence <= 1))


def test_batched_decode_matches_per_channel():
    rng = np.random.default_rng(3)
    hm = rng.normal(size=(2, 7, 8, 8))
    batched = integral_decode(hm).coords
    assert batched.shape == (2, 7, 2)
    assert np.allclose(batched[1, 3], integral_decode(hm[1, 3][None]).coords[0])


def test_sharpened_gaussian_targets_decode_subpixel():
    rng = np.random.default_rng(4)
    for _ in range(50):
        xy = rng.uniform(8, 56, size=(7, 2))
        hm = render_targets(KeypointSet.all_visible(xy), 64, 64)
        err = np.abs(decode(hm, "integral").coords - xy)
        assert err.max() < 0.05


def test_sharpen_scales_peak():
    hm = np.zeros((2, 4, 4))
    hm[0, 1, 1] = 0.5
    out = sharpen(hm, 16.0)
    assert out[0].max() == pytest.approx(16.0)
    assert not out[1].any()


def test_decode_unknown_mode():
    with pytest.raises(DecodeError):
        decode(np.zeros((1, 2, 2)), "median")


def test_decode_to_image_identity_pipeline():
    from shpose.decode import DecodedKeypoints

    dec = DecodedKeypoints(np.full((7, 2), 32.0), np.ones(7))
    kps = decode_to_image(dec, [CoordTransform.identity()], 256, 64)
    assert np.allclose(kps.xy, 128.0)


def test_decode_to_image_origin_maps_to_single_preimage():
    from shpose.decode import DecodedKeypoints

    chain = [CoordTransform(1, 1, 0, 80), CoordTransform(0.4, 0.4)]
    dec = DecodedKeypoints(np.zeros((7, 2)), np.ones(7))
    kps = decode_to_image(dec, chain, 256, 64)
    assert np.allclose(kps.xy, [0.0, -80.0])


def test_decode_to_image_rejects_singular_transform():
    with pytest.raises(GeometryError):
        decode_to_image(None, [CoordTransform(0.0, 1.0)], 256, 64)
