import numpy as np
import pytest
from hypothesis import given, strategies as st

from nncompress.errors import CorruptionError, FormatError, ManifestError, ShapeError
from nncompress.model import (Kind, Layer, Network, Role, Tensor, deserialize_model, load_model, param_accounting,
                              save_model, serialize_model)
from nncompress.zoo import alexnet_manifest, toy_plain, toy_resnet


def small_net(seed=0):
    return toy_resnet(1, 4, seed, calibrate=False)


def test_tensor_is_float32_and_readonly():
    t = Tensor((2, 3), np.arange(6, dtype=np.float64))
    assert t.data.dtype == np.float32
    with pytest.raises(ValueError):
        t.data[0, 0] = 1.0


def test_tensor_rejects_bad_shapes_and_values():
    with pytest.raises(ShapeError):
        Tensor((2, 3), np.zeros(5))
    with pytest.raises(ShapeError):
        Tensor((0, 3))
    with pytest.raises(ValueError):
        Tensor((1,), np.array([np.nan]))


def test_tensor_equality_is_bitwise():
    a = Tensor((1,), np.array([0.0], dtype=np.float32))
    b = Tensor((1,), np.array([-0.0], dtype=np.float32))
    assert a != b
    assert a == Tensor((1,), np.array([0.0]))


def test_layer_validation():
    with pytest.raises(ManifestError):
        Layer("r", Kind.RELU, {Role.CONV_WEIGHT: Tensor((1, 1, 1, 1), np.ones(1))})
    with pytest.raises((ManifestError, ValueError)):
        Layer("bn", Kind.BATCHNORM, {Role.BN_SCALE: Tensor((2,), np.ones(2)), Role.BN_BIAS: Tensor((2,), np.ones(2)),
                                     Role.BN_MEAN: Tensor((2,), np.ones(2)), Role.BN_VAR: Tensor((2,), -np.ones(2))})


def test_network_rejects_duplicates_and_long_spans():
    with pytest.raises(ManifestError):
        Network([Layer("a", Kind.RELU), Layer("a", Kind.RELU)])
    with pytest.raises(ManifestError):
        Network([Layer("a", Kind.RELU), Layer("b", Kind.ADD, hyperparams={"span": 3})])
    Network([Layer("a", Kind.RELU), Layer("b", Kind.ADD, hyperparams={"span": 2})])


def test_roundtrip_bit_exact(tmp_path):
    net = small_net()
    save_model(net, tmp_path / "m.nnw")
    back = load_model(tmp_path / "m.nnw")
    assert back.names == net.names
    for a, b in zip(net.layers, back.layers):
        assert a.kind == b.kind and a.hyperparams == b.hyperparams
        assert a.tensors == b.tensors


def test_serialization_is_deterministic():
    assert serialize_model(small_net(3)) == serialize_model(small_net(3))


def test_shape_only_roundtrip():
    net = alexnet_manifest()
    back = deserialize_model(serialize_model(net))
    assert not back.has_payload()
    assert param_accounting(back).total == param_accounting(net).total


def test_bad_magic():
    with pytest.raises(FormatError):
        deserialize_model(b"XXXX" + serialize_model(small_net())[4:])


def test_crc_mismatch_names_record():
    buf = bytearray(serialize_model(small_net()))
    buf[-6] ^= 0xFF
    with pytest.raises(CorruptionError, match="/"):
        deserialize_model(bytes(buf))


@pytest.mark.parametrize("cut", [1, 9, 100])
def test_truncation(cut):
    buf = serialize_model(small_net())
    with pytest.raises((CorruptionError, FormatError)):
        deserialize_model(buf[:-cut])


def test_trailing_bytes():
    with pytest.raises(CorruptionError):
        deserialize_model(serialize_model(small_net()) + b"\0")


@given(st.binary(max_size=64))
def test_garbage_never_crashes_uncontrolled(blob):
    with pytest.raises((FormatError, CorruptionError)):
        deserialize_model(b"NNW1" + blob)


def test_param_accounting_separates_bn():
    net = toy_resnet(2, 4, 0, calibrate=False)
    acct = param_accounting(net)
    assert acct.conv_total == 3 * 3 * 3 * 4 + 4 * (4 * 4 * 9)
    assert acct.bn_total == 5 * 4 * 4
    assert acct.total == acct.conv_total


def test_param_accounting_counts_bias():
    net = toy_plain(2, 5, 0)
    assert param_accounting(net).total == (3 * 9 * 5 + 5) + (5 * 9 * 5 + 5)
