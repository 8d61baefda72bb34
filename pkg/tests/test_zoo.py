import numpy as np
import pytest

from nncompress.analyze import fit_laplacian
from nncompress.model import Role, param_accounting
from nncompress.netforward import forward, synthetic_image
from nncompress.transform import shared_param_count, tie_blocks
from nncompress.zoo import (alexnet_like, alexnet_manifest, resnet50_manifest, resnet152_manifest,
                            shared_resnet_manifest, toy_plain, toy_resnet)


def test_alexnet_grouped_trunk_count():
    # conv1..conv5 of the two-tower network, weights plus biases
    expected = (96 * 3 * 121 + 96) + (256 * 48 * 25 + 256) + (384 * 256 * 9 + 384) + (384 * 192 * 9 + 384) + (
        256 * 192 * 9 + 256)
    assert param_accounting(alexnet_manifest()).total == expected == 2_334_080


def test_resnet_counts():
    assert param_accounting(resnet50_manifest(classifier=False)).total == 23_454_912
    assert param_accounting(resnet50_manifest()).total == 25_503_912
    assert param_accounting(resnet152_manifest()).total == 60_041_384


def test_shared_resnet_counts():
    net, plan = shared_resnet_manifest()
    sc = shared_param_count(tie_blocks(net, plan))
    assert sc.unique == 8_337_576
    assert sc.expanded == param_accounting(net).total == 29_055_144


def test_toy_weights_are_laplacian():
    w = toy_plain(2, 64, seed=3)["conv2"].tensors[Role.CONV_WEIGHT]
    assert fit_laplacian(w).b == pytest.approx(np.sqrt(1 / (64 * 9)), rel=0.05)


def test_toy_nets_run_and_are_seeded():
    img = synthetic_image(0, 16)
    for make in (lambda s: toy_plain(3, 4, s), lambda s: toy_resnet(2, 4, s), lambda s: alexnet_like(0.05, s)):
        a, b = forward(make(1), img), forward(make(1), img)
        assert np.array_equal(a, b) and np.isfinite(a).all()
        assert not np.array_equal(a, forward(make(2), img))


def test_calibrated_bn_normalises_channels():
    net = toy_resnet(1, 8, seed=0)
    imgs = np.stack([synthetic_image(10_000 + i, 24) for i in range(8)])
    x = forward(net, imgs, "stem")
    bn = net["stem_bn"].tensors
    assert np.allclose(bn[Role.BN_MEAN].data, x.mean(axis=(0, 2, 3)), atol=1e-5)
