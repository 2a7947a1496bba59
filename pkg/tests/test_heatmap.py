import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from shpose.heatmap import (
    JOINT_NAMES,
    NUM_JOINTS,
    GaussianSpec,
    HeatmapError,
    KeypointSet,
    mse_loss,
    render_targets,
    target_mask,
)


def _kps(points, visible=None, ref=10.0):
    xy = np.zeros((NUM_JOINTS, 2))
    if len(points):
        xy[: len(points)] = points
    vis = np.zeros(NUM_JOINTS, bool) if visible is None else np.asarray(visible)
    if visible is None:
        vis[: len(points)] = True
    return KeypointSet(xy, vis, ref)


def test_joint_order():
    assert JOINT_NAMES == ("r_wrist", "r_elbow", "r_shoulder", "neck", "l_shoulder", "l_elbow", "l_wrist")


def test_keypoint_set_validation():
    with pytest.raises(HeatmapError):
        KeypointSet(np.zeros((6, 2)), np.ones(6, bool))
    with pytest.raises(HeatmapError):
        KeypointSet.all_visible(np.zeros((7, 2)), reference_length=0.0)
    with pytest.raises(HeatmapError):
        KeypointSet.all_visible(np.full((7, 2), np.nan))
    # invisible joints may carry NaN
    xy = np.full((7, 2), np.nan)
    KeypointSet(xy, np.zeros(7, bool))


def test_keypoint_records_round_trip():
    kps = KeypointSet(np.arange(14.0).reshape(7, 2), [True] * 6 + [False], 3.5)
    back = KeypointSet.from_records(kps.to_records(), kps.reference_length)
    assert np.array_equal(back.xy, kps.xy)
    assert np.array_equal(back.visible, kps.visible)


def test_render_peak_on_pixel():
    hm = render_targets(_kps([(5, 7)]), 16, 16, GaussianSpec(1.0))
    assert hm.shape == (7, 16, 16)
    assert hm[0].max() == 1.0
    assert np.unravel_index(hm[0].argmax(), hm[0].shape) == (7, 5)


def test_render_all_invisible_is_zero():
    hm = render_targets(_kps([]), 12, 10)
    assert hm.shape == (7, 12, 10)
    assert not hm.any()


def test_render_neighbor_value_sigma_one():
    hm = render_targets(_kps([(5, 7)]), 16, 16, GaussianSpec(1.0))
    assert hm[0, 7, 6] == pytest.approx(math.exp(-0.5))
    assert hm[0, 7, 6] == pytest.approx(0.6065, abs=1e-4)


def test_render_far_outside_treated_as_invisible():
    spec = GaussianSpec(2.0)
    kps = _kps([(-10.0, 5.0), (5.0, 5.0)])
    hm = render_targets(kps, 16, 16, spec)
    assert not hm[0].any() and hm[1].any()
    assert list(target_mask(kps, 16, 16, spec)[:2]) == [False, True]


def test_render_rejects_bad_dims():
    with pytest.raises(HeatmapError):
        render_targets(_kps([]), 0, 4)


def test_render_values_in_unit_interval():
    rng = np.random.default_rng(0)
    kps = KeypointSet.all_visible(rng.uniform(0, 31, size=(7, 2)))
    hm = render_targets(kps, 32, 32)
    assert hm.min() >= 0 and hm.max() <= 1


@given(st.integers(-5, 5), st.integers(-5, 5))
@settings(max_examples=30, deadline=None)
def test_render_translation_equivariant(dx, dy):
    base = render_targets(_kps([(15.3, 14.6)]), 32, 32)[0]
    moved = render_targets(_kps([(15.3 + dx, 14.6 + dy)]), 32, 32)[0]
    # compare on pixels whose shifted position stays inside the grid
    ys, xs = np.mgrid[8:24, 8:24]
    assert np.allclose(moved[ys + dy, xs + dx], base[ys, xs], atol=1e-15)


def test_mse_identity_zero():
    x = np.random.default_rng(0).normal(size=(7, 8, 8))
    per, total = mse_loss(x, x)
    assert np.all(per == 0) and total == 0


def test_mse_single_pixel_64():
    target = np.zeros((1, 64, 64))
    target[0, 10, 20] = 1.0
    per, total = mse_loss(np.zeros_like(target), target)
    assert per[0] == 1 / 4096
    assert total == 1 / 4096


def _mse_oracle(pred, target):
    """Literal pixel sum per channel."""
    out = []
    for p in range(pred.shape[0]):
        acc = 0.0
        m = 0
        for i in range(pred.shape[1]):
            for j in range(pred.shape[2]):
                acc += (pred[p, i, j] - target[p, i, j]) ** 2
                m += 1
        out.append(acc / m)
    return out


def test_mse_matches_pixel_sum_oracle():
    rng = np.random.default_rng(1)
    for _ in range(50):
        pred, target = rng.normal(size=(2, 7, 2, 2))
        per, total = mse_loss(pred, target)
        oracle = _mse_oracle(pred, target)
        assert np.allclose(per, oracle, rtol=0, atol=1e-12)
        assert total == pytest.approx(sum(oracle) / 7, abs=1e-12)


def test_mse_shape_mismatch():
    with pytest.raises(HeatmapError):
        mse_loss(np.zeros((7, 4, 4)), np.zeros((7, 4, 5)))


def test_mse_mask_excludes_channels():
    pred = np.zeros((2, 4, 4))
    target = np.ones((2, 4, 4))
    target[1] = 0.0
    _, total = mse_loss(pred, target, np.array([False, True]))
    assert total == 0.0
    _, total = mse_loss(pred, target, np.array([True, True]))
    assert total == 0.5


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=30, deadline=None)
def test_mse_nonnegative_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 7, 5, 6))
    per_ab, total_ab = mse_loss(a, b)
    per_ba, total_ba = mse_loss(b, a)
    assert np.all(per_ab >= 0) and total_ab > 0
    assert np.array_equal(per_ab, per_ba) and total_ab == total_ba


def test_mse_gradient_matches_closed_form_and_finite_differences():
    rng = np.random.default_rng(2)
    pred = torch.tensor(rng.normal(size=(1, 6, 5)), dtype=torch.float64, requires_grad=True)
    target = torch.tensor(rng.normal(size=(1, 6, 5)), dtype=torch.float64)
    per, _ = mse_loss(pred, target)
    per[0].backward()
    m = 30
    closed = 2.0 / m * (pred.detach() - target)
    assert torch.allclose(pred.grad, closed, rtol=1e-12, atol=0)
    h = 1e-6
    base = pred.detach().numpy().copy()
    tnp = target.numpy()
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += h
        minus[idx] -= h
        fd = (mse_loss(plus, tnp)[0][0] - mse_loss(minus, tnp)[0][0]) / (2 * h)
        a = float(pred.grad[idx])
        assert abs(fd - a) / max(abs(a), 1e-12) < 1e-6
