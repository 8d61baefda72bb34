import numpy as np
import pytest
from hypothesis import given, strategies as st

from nncompress.errors import ConfigError, CorruptionError
from nncompress.model import Role
from nncompress.quantize import (EXEMPT, IndexTensor, QuantizationSpec, Scalar, ScalarQuantizer, Vector,
                                 VectorQuantizer, parse_mode, quantize_network, quantizer_mse, sq_decode, sq_encode,
                                 tensor_modes, train_lbg, train_lloyd_max, vq_decode, vq_encode)
from nncompress.zoo import toy_plain, toy_resnet

from oracles import best_contiguous_partition, reference_lloyd

# Lloyd-Max outputs and MSE for the unit-variance Laplacian, frozen from
# fixed-point iteration on the exact density with numerical integration
LAPLACE_TABLE = {
    2: ([0.70711], 0.50000),
    4: ([0.41976, 1.83397], 0.17619),
    8: ([0.23340, 0.83296, 1.67247, 3.08669], 0.054476),
}


def laplace_grid(n=200_000):
    q = (np.arange(n) + 0.5) / n
    # inverse CDF of the unit-variance Laplacian
    b = 1 / np.sqrt(2)
    return np.where(q < 0.5, b * np.log(2 * q), -b * np.log(2 - 2 * q))


def test_two_cluster_oracle():
    q = train_lloyd_max([0, 1, 10, 11], 2)
    assert q.centroids.tolist() == [0.5, 10.5]
    cents, _ = best_contiguous_partition([0, 1, 10, 11], 2)
    assert cents == [0.5, 10.5]


@pytest.mark.parametrize("k", [2, 4, 8])
def test_matches_published_laplacian_table(k):
    levels, mse = LAPLACE_TABLE[k]
    q = train_lloyd_max(laplace_grid(), k, tol=1e-12, max_iter=2000)
    assert q.centroids[k // 2:] == pytest.approx(levels, abs=2e-3)
    assert q.centroids[: k // 2] == pytest.approx([-v for v in reversed(levels)], abs=2e-3)
    assert q.history[-1] == pytest.approx(mse, rel=5e-3)


@given(st.lists(st.integers(-20, 20), min_size=4, max_size=9), st.integers(2, 3))
def test_lloyd_reaches_the_brute_force_optimum_on_small_sets(values, k):
    if len(set(values)) <= k:
        return
    q = train_lloyd_max(values, k, tol=0.0)
    _, best = best_contiguous_partition(values, k)
    # Lloyd may stop in a local optimum; it can never beat the global one
    assert quantizer_mse(q, np.array(values, dtype=np.float32)) >= best - 1e-6


def test_fixed_point_conditions(rng):
    x = rng.laplace(0, 1, 20_000)
    q = train_lloyd_max(x, 8, tol=1e-12, max_iter=2000)
    c = q.centroids.astype(np.float64)
    cell = np.searchsorted(q.boundaries, x)
    for j in range(8):
        assert c[j] == pytest.approx(x[cell == j].mean(), abs=1e-5)


def test_history_non_increasing(rng):
    for seed in range(10):
        x = rng.standard_t(3, 5000)
        for k in (2, 5, 16):
            h = train_lloyd_max(x, k, seed=seed).history
            assert all(b <= a for a, b in zip(h, h[1:]))


def test_independent_reference_fixed_point(rng):
    x = rng.laplace(0, 0.05, 100_000)
    ours = train_lloyd_max(x, 16, tol=1e-10, max_iter=1000)
    _, ref = reference_lloyd(x, 16)
    assert quantizer_mse(ours, x) == pytest.approx(ref, rel=0.05)


def test_few_distinct_values_are_kept_exactly():
    q = train_lloyd_max([3.0, 1.0, 3.0, 1.0], 16)
    assert q.centroids.tolist() == [1.0, 3.0]


def test_sq_encode_decode_roundtrip(rng):
    x = rng.normal(size=(3, 4, 5)).astype(np.float32)
    q = train_lloyd_max(x.ravel(), 8)
    it = sq_encode(q, x)
    assert it.shape == (3, 4, 5)
    rec = sq_decode(q, it)
    assert set(rec.data.ravel().tolist()) <= set(q.centroids.tolist())
    nearest = q.centroids[np.argmin(np.abs(x.ravel()[:, None] - q.centroids[None, :]), axis=1)]
    assert np.array_equal(rec.data.ravel(), nearest)


def test_sq_decode_rejects_bad_indices():
    q = ScalarQuantizer([0.0, 1.0])
    with pytest.raises(CorruptionError):
        sq_decode(q, IndexTensor((2,), [0, 2]))
    with pytest.raises(CorruptionError):
        sq_decode(q, IndexTensor((3,), [0, 1]))


def test_centroids_must_increase():
    with pytest.raises(ValueError):
        ScalarQuantizer([1.0, 1.0])


@pytest.mark.parametrize("seed", range(5))
def test_vq_d1_equals_sq(seed, rng):
    x = rng.laplace(size=3000)
    sq = train_lloyd_max(x, 16, seed=seed)
    vq = train_lbg(x, 16, 1, seed=seed)
    assert np.array_equal(vq.codebook[:, 0], sq.centroids)
    assert vq.history == sq.history
    assert vq_encode(vq, x) == sq_encode(sq, x)


def test_lbg_finds_separated_clusters(rng):
    centres = np.array([[0, 0], [5, 5], [-5, 5], [5, -5]], dtype=float)
    x = np.concatenate([c + 0.1 * rng.normal(size=(200, 2)) for c in centres])
    # k-means can settle in a local optimum; keep the best of a few seeds
    vq = min((train_lbg(x, 4, 2, seed=s) for s in range(5)), key=lambda q: q.history[-1])
    found = sorted(map(tuple, np.round(vq.codebook).astype(int).tolist()))
    assert found == sorted(map(tuple, centres.astype(int).tolist()))


def test_lbg_repairs_empty_cells():
    # two far clusters with many duplicates force empty cells from random starts
    x = np.array([[0.0, 0.0]] * 50 + [[0.0, 1e-3]] * 50 + [[9.0, 9.0]] * 3 + [[9.0, 9.1]] * 3)
    for seed in range(10):
        vq = train_lbg(x, 4, 2, seed=seed)
        assert vq.k == 4
        h = vq.history
        assert all(b <= a for a, b in zip(h, h[1:]))


def test_vq_padding_roundtrip(rng):
    x = rng.normal(size=7).astype(np.float32)
    vq = train_lbg(np.concatenate([x, [0]]), 4, 2)
    it = vq_encode(vq, x)
    assert it.pad_count == 1 and it.indices.size == 4
    assert vq_decode(vq, it).shape == (7,)
    with pytest.raises(CorruptionError):
        vq_decode(vq, IndexTensor((7,), it.indices, 0))


def test_training_is_seed_deterministic(rng):
    x = rng.normal(size=(500, 3))
    assert train_lbg(x, 8, 3, seed=5) == train_lbg(x, 8, 3, seed=5)


@pytest.mark.parametrize("text,mode", [("scalar:4", Scalar(4)), ("vector:64x2", Vector(64, 2)), ("exempt", EXEMPT),
                                       ("SQ:8", Scalar(8))])
def test_parse_mode(text, mode):
    assert parse_mode(text) == mode


@pytest.mark.parametrize("text", ["scalar:0", "scalar:17", "vector:0x2", "vector:4", "float16"])
def test_parse_mode_rejects(text):
    with pytest.raises(ConfigError):
        parse_mode(text)


def test_spec_unknown_layer():
    with pytest.raises(ConfigError):
        QuantizationSpec(Scalar(4), {"nope": Scalar(2)}).check(toy_plain(2, 2))


def test_spec_dict_roundtrip():
    s = QuantizationSpec(Scalar(4), {"conv1": Vector(16, 2)}, bn_exempt=False, bias_exempt=True)
    assert QuantizationSpec.from_dict(s.to_dict()) == s


def test_tensor_modes_respect_exemptions():
    net = toy_resnet(1, 4, calibrate=False)
    spec = QuantizationSpec(Scalar(4))
    assert set(tensor_modes(net["stem_bn"], spec).values()) == {EXEMPT}
    spec.bn_exempt = False
    assert set(tensor_modes(net["stem_bn"], spec).values()) == {Scalar(4)}
    plain = toy_plain(1, 4)
    assert tensor_modes(plain["conv1"], QuantizationSpec(Scalar(4), bias_exempt=True))[Role.CONV_BIAS] == EXEMPT


def test_quantize_network_one_quantizer_per_tensor():
    net = toy_plain(3, 8, seed=1)
    qn = quantize_network(net, QuantizationSpec(Scalar(3), {"conv2": EXEMPT}))
    assert set(qn.quantized) == {("conv1", Role.CONV_WEIGHT), ("conv1", Role.CONV_BIAS),
                                 ("conv3", Role.CONV_WEIGHT), ("conv3", Role.CONV_BIAS)}
    dec = qn.decode()
    assert dec["conv2"].tensors == net["conv2"].tensors
    assert len(np.unique(dec["conv1"].tensors[Role.CONV_WEIGHT].data)) <= 8
