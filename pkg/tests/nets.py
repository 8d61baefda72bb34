"""Random small networks shared by the forward-pass tests."""
from __future__ import annotations

import numpy as np

from nncompress.model import Kind, Layer, Network, Role, Tensor


def random_net(seed: int, in_channels: int = 3):
    """Random conv/BN/ReLU/pool/residual stack, its plain-dict twin for the oracle and an input size."""
    rng = np.random.default_rng(seed)
    layers, plain = [], []
    c = in_channels
    size = in_size = int(rng.integers(9, 14))
    i = 0

    def push(layer, spec):
        layers.append(layer)
        plain.append(spec)

    for _ in range(int(rng.integers(2, 5))):
        groups = int(rng.choice([g for g in (1, 2) if c % g == 0]))
        cout = groups * int(rng.integers(1, 4))
        k = int(rng.choice([1, 2, 3]))
        stride = int(rng.choice([1, 1, 2]))
        pad = int(rng.integers(0, k))
        if size + 2 * pad < k:
            pad = k
        w = rng.normal(size=(cout, c // groups, k, k)).astype(np.float32)
        b = rng.normal(size=cout).astype(np.float32) if rng.random() < 0.7 else None
        tensors = {Role.CONV_WEIGHT: Tensor(w.shape, w)}
        if b is not None:
            tensors[Role.CONV_BIAS] = Tensor(b.shape, b)
        push(Layer(f"conv{i}", Kind.CONV, tensors, {"stride": stride, "padding": pad, "groups": groups}),
             {"kind": "conv", "w": w, "b": b, "stride": stride, "padding": pad, "groups": groups})
        size = (size + 2 * pad - k) // stride + 1
        c = cout
        i += 1
        if rng.random() < 0.6:
            p = {r: rng.normal(size=c).astype(np.float32) for r in (Role.BN_SCALE, Role.BN_BIAS, Role.BN_MEAN)}
            p[Role.BN_VAR] = rng.uniform(0.1, 2.0, size=c).astype(np.float32)
            push(Layer(f"bn{i}", Kind.BATCHNORM, {r: Tensor(v.shape, v) for r, v in p.items()}),
                 {"kind": "bn", "scale": p[Role.BN_SCALE], "bias": p[Role.BN_BIAS], "mean": p[Role.BN_MEAN],
                  "var": p[Role.BN_VAR], "eps": 1e-5})
        push(Layer(f"relu{i}", Kind.RELU), {"kind": "relu"})
        if rng.random() < 0.5:
            # identity-shaped residual branch joined back onto the ReLU output
            w2 = rng.normal(size=(c, c, 3, 3)).astype(np.float32)
            push(Layer(f"res{i}", Kind.CONV, {Role.CONV_WEIGHT: Tensor(w2.shape, w2)},
                       {"stride": 1, "padding": 1, "groups": 1}),
                 {"kind": "conv", "w": w2, "b": None, "stride": 1, "padding": 1, "groups": 1})
            push(Layer(f"add{i}", Kind.ADD, hyperparams={"span": 2}), {"kind": "add", "span": 2})
        if size >= 4 and rng.random() < 0.5:
            kind = "max" if rng.random() < 0.5 else "avg"
            pk, ps, pp = 2, 2, int(rng.integers(0, 2))
            push(Layer(f"pool{i}", Kind.MAXPOOL if kind == "max" else Kind.AVGPOOL,
                       hyperparams={"kernel": pk, "stride": ps, "padding": pp}),
                 {"kind": kind, "k": pk, "stride": ps, "padding": pp})
            size = (size + 2 * pp - pk) // ps + 1
    return Network(layers, f"random{seed}"), plain, in_size


def random_image(seed: int, size: int, channels: int = 3):
    return np.random.default_rng(10_000 + seed).normal(size=(channels, size, size))
