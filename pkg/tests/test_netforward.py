import numpy as np
import pytest
from hypothesis import given, strategies as st

from nncompress.errors import ConfigError, ShapeError
from nncompress.model import Kind, Layer, Network, Role, Tensor
from nncompress.netforward import (IDENTITY_NIP, Group, Moment, NipConfig, Stage, conv2d, descriptor,
                                   descriptor_drift, extract_transformed_stack, forward, load_image, nip_pool, roi_boxes,
                                   synthetic_image)
from nncompress.quantize import QuantizationSpec, quantize_network
from nncompress.zoo import toy_plain, toy_resnet

from nets import random_image, random_net
from oracles import direct_conv, direct_forward, nested_moments

SMALL_NIP = NipConfig(scales=(1.0, 0.75), rois_per_scale=4)


@pytest.mark.parametrize("seed", range(10))
def test_forward_matches_direct_summation(seed):
    net, plain, size = random_net(seed)
    img = random_image(seed, size)
    np.testing.assert_allclose(forward(net, img), direct_forward(plain, img), rtol=1e-9, atol=1e-9)


def test_conv_hand_example():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    w = np.ones((1, 1, 2, 2))
    out = conv2d(x, w, np.array([1.0]), stride=2)
    assert out[0, 0].tolist() == [[11.0, 19.0], [43.0, 51.0]]


def test_grouped_conv_matches_oracle(rng):
    x = rng.normal(size=(4, 5, 5))
    w = rng.normal(size=(6, 2, 3, 3))
    np.testing.assert_allclose(conv2d(x[None], w, groups=2, padding=1)[0], direct_conv(x, w, None, 1, 1, 2),
                               atol=1e-12)


def test_batch_equals_single():
    net = toy_resnet(2, 4, seed=1)
    imgs = np.stack([synthetic_image(i, 12) for i in range(3)])
    batch = forward(net, imgs)
    for i in range(3):
        np.testing.assert_allclose(batch[i], forward(net, imgs[i]), atol=1e-12)


def test_channel_mismatch():
    with pytest.raises(ShapeError):
        forward(toy_plain(1, 2), np.zeros((1, 8, 8)))


def test_residual_shape_mismatch_names_layer():
    w = Tensor((2, 1, 1, 1), np.ones(2))
    net = Network([Layer("c", Kind.CONV, {Role.CONV_WEIGHT: w}), Layer("j", Kind.ADD, hyperparams={"span": 2})])
    with pytest.raises(ShapeError, match="j"):
        forward(net, np.zeros((1, 3, 3)))


def test_synthetic_image_range_and_determinism():
    a = synthetic_image(7, 20)
    assert a.shape == (3, 20, 20) and a.min() == 0.0 and a.max() == 1.0
    assert np.array_equal(a, synthetic_image(7, 20))


def test_load_image_roundtrip(tmp_path):
    from PIL import Image

    arr = (synthetic_image(1, 10).transpose(1, 2, 0) * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(tmp_path / "x.ppm")
    back = load_image(tmp_path / "x.ppm")
    assert back.shape == (3, 10, 10)
    assert np.array_equal((back * 255).round().astype(np.uint8), arr.transpose(2, 0, 1))


# ---------------------------------------------------------------------------
# NIP


def test_roi_grid():
    boxes = roi_boxes(20, 20, 0.5, 4)
    assert boxes == [(0, 0, 10), (0, 10, 10), (10, 0, 10), (10, 10, 10)]
    assert len(roi_boxes(32, 32, 0.75, 20)) == 20
    with pytest.raises(ConfigError):
        roi_boxes(10, 10, 1.5, 4)


def test_default_stack_size():
    assert NipConfig().stack_size == 240
    stack = extract_transformed_stack(toy_plain(1, 2), synthetic_image(0, 16), NipConfig())
    assert stack.shape == (4, 3, 20) and len(stack) == 240


def test_symmetric_input_gives_rotated_maps():
    yy, xx = np.mgrid[0:9, 0:9] - 4.0
    img = np.stack([np.exp(-(yy ** 2 + xx ** 2) / 8)] * 3)
    net = toy_plain(2, 3, seed=0)
    cfg = NipConfig(scales=(1.0,), rois_per_scale=1)
    maps = [m[0][0] for m in extract_transformed_stack(net, img, cfg).maps]
    # a rotation-symmetric image looks the same after every rotation
    for m in maps[1:]:
        np.testing.assert_allclose(m, maps[0], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_nip_pool_matches_nested_loop_oracle(seed):
    means = np.random.default_rng(seed).normal(size=(4, 3, 5, 6))
    stages = [("scale", "average"), ("translation", "std"), ("rotation", "max")]
    np.testing.assert_allclose(nip_pool(means, stages).vector, nested_moments(means, stages), atol=1e-6)


@given(st.permutations(["rotation", "scale", "translation"]),
       st.lists(st.sampled_from(["average", "std", "max"]), min_size=3, max_size=3))
def test_any_stage_order_matches_oracle(order, moments):
    means = np.random.default_rng(0).normal(size=(2, 3, 4, 5))
    stages = list(zip(order, moments))
    np.testing.assert_allclose(nip_pool(means, stages).vector, nested_moments(means, stages), atol=1e-9)


def test_single_element_stack_is_normalised_means():
    means = np.array([[[[3.0, 4.0]]]])
    assert nip_pool(means).vector.tolist() == [0.6, 0.8]


def test_max_over_identical_entries_drops_axis(rng):
    base = rng.normal(size=(1, 3, 4, 5))
    tiled = np.repeat(base, 4, axis=0)
    a = nip_pool(tiled, [("scale", "average"), ("translation", "std"), ("rotation", "max")]).vector
    b = nip_pool(base, [("scale", "average"), ("translation", "std")] + [("rotation", "max")]).vector
    np.testing.assert_allclose(a, b, atol=1e-12)


@given(st.randoms(use_true_random=False))
def test_permutation_invariance(rnd):
    means = np.random.default_rng(1).normal(size=(4, 3, 5, 6))
    perm = means.copy()
    for axis in range(3):
        idx = list(range(perm.shape[axis]))
        rnd.shuffle(idx)
        perm = np.take(perm, idx, axis=axis)
    np.testing.assert_allclose(nip_pool(perm).vector, nip_pool(means).vector, atol=1e-12)


def test_stage_errors():
    means = np.zeros((2, 2, 2, 3)) + 1.0
    with pytest.raises(ConfigError):
        nip_pool(means, [("scale", "average"), ("scale", "max")])
    with pytest.raises(ConfigError):
        nip_pool(means, [("scale", "average")])
    with pytest.raises(ValueError):
        Stage("colour", "max")


def test_zero_descriptor_is_flagged():
    d = nip_pool(np.zeros((1, 1, 1, 4)))
    assert d.zero and not d.vector.any()


def test_stage_enums():
    s = Stage("rotation", "max")
    assert s.group is Group.ROTATION and s.moment is Moment.MAX


# ---------------------------------------------------------------------------
# drift


def test_drift_of_identical_nets():
    net = toy_plain(2, 4, seed=0)
    d = descriptor_drift(net, net, [synthetic_image(i, 12) for i in range(3)], SMALL_NIP)
    assert d.cosine == pytest.approx(1.0) and d.l2_gap == 0.0 and d.distance == pytest.approx(0.0)


def test_drift_architecture_mismatch():
    with pytest.raises(ShapeError):
        descriptor_drift(toy_plain(2, 4), toy_plain(3, 4), [synthetic_image(0, 12)], SMALL_NIP)


def test_eight_bit_drifts_less_than_three_bit():
    net = toy_plain(4, 8, seed=0)
    imgs = [synthetic_image(100 + i, 16) for i in range(20)]
    d = {b: descriptor_drift(net, quantize_network(net, QuantizationSpec.uniform(f"scalar:{b}")).decode(), imgs,
                             IDENTITY_NIP) for b in (3, 8)}
    assert d[8].cosine >= d[3].cosine
