"""Reference architectures: full-size shape-only manifests for parameter accounting,
and small seeded networks with Laplacian weights for experiments."""
from __future__ import annotations

import numpy as np

from .model import Kind, Layer, Network, Role, Tensor
from .netforward import apply_layer, synthetic_image
from .transform import TieGroup, TyingPlan


class _Builder:
    """Appends layers; draws weights from a seeded Laplace source unless shape-only."""

    def __init__(self, seed: int | None, arch_tag: str):
        self.rng = None if seed is None else np.random.default_rng(seed)
        self.layers: list[Layer] = []
        self.arch_tag = arch_tag

    def _tensor(self, shape, scale, loc=0.0):
        if self.rng is None:
            return Tensor(shape)
        return Tensor(shape, self.rng.laplace(loc, scale, size=shape))

    def conv(self, name, cin, cout, k, stride=1, padding=None, groups=1, bias=True, **extra):
        padding = k // 2 if padding is None else padding
        fan_in = cin // groups * k * k
        tensors = {Role.CONV_WEIGHT: self._tensor((cout, cin // groups, k, k), np.sqrt(1.0 / fan_in))}
        if bias:
            tensors[Role.CONV_BIAS] = self._tensor((cout,), 0.01)
        hp = {"stride": stride, "padding": padding, "groups": groups, **extra}
        self.layers.append(Layer(name, Kind.CONV, tensors, hp))

    def bn(self, name, c, gain=(0.5, 1.5)):
        if self.rng is None:
            tensors = {r: Tensor((c,)) for r in (Role.BN_SCALE, Role.BN_BIAS, Role.BN_MEAN, Role.BN_VAR)}
        else:
            tensors = {
                Role.BN_SCALE: Tensor((c,), self.rng.uniform(*gain, size=c)),
                Role.BN_BIAS: Tensor((c,), self.rng.normal(0.0, 0.1, size=c)),
                Role.BN_MEAN: Tensor((c,), np.zeros(c)),
                Role.BN_VAR: Tensor((c,), np.ones(c)),
            }
        self.layers.append(Layer(name, Kind.BATCHNORM, tensors))

    def relu(self, name):
        self.layers.append(Layer(name, Kind.RELU))

    def pool(self, name, k, stride=None, padding=0, kind=Kind.MAXPOOL):
        self.layers.append(Layer(name, kind, hyperparams={"kernel": k, "stride": stride or k, "padding": padding}))

    def add(self, name, span):
        self.layers.append(Layer(name, Kind.ADD, hyperparams={"span": span}))

    def network(self) -> Network:
        return Network(self.layers, self.arch_tag)


# ---------------------------------------------------------------------------
# full-size manifests (shape only)

ALEXNET_CUTS = ("pool1", "pool2", "conv3_relu", "pool5")


def alexnet_manifest() -> Network:
    """Convolutional trunk of the original two-tower AlexNet (grouped conv2/4/5)."""
    b = _Builder(None, "alexnet")
    b.conv("conv1", 3, 96, 11, stride=4, padding=0)
    b.relu("relu1")
    b.pool("pool1", 3, 2)
    b.conv("conv2", 96, 256, 5, groups=2)
    b.relu("relu2")
    b.pool("pool2", 3, 2)
    b.conv("conv3", 256, 384, 3)
    b.relu("conv3_relu")
    b.conv("conv4", 384, 384, 3, groups=2)
    b.relu("relu4")
    b.conv("conv5", 384, 256, 3, groups=2)
    b.relu("relu5")
    b.pool("pool5", 3, 2)
    return b.network()


def _bottleneck_stage(b: _Builder, stage: int, cin: int, mid: int, cout: int, blocks: int, stride: int):
    for j in range(blocks):
        p = f"res{stage}{chr(ord('a') + j)}"
        s = stride if j == 0 else 1
        c_in = cin if j == 0 else cout
        b.conv(f"{p}_branch2a", c_in, mid, 1, stride=s, padding=0, bias=False)
        b.bn(f"{p}_bn2a", mid)
        b.relu(f"{p}_relu2a")
        b.conv(f"{p}_branch2b", mid, mid, 3, bias=False)
        b.bn(f"{p}_bn2b", mid)
        b.relu(f"{p}_relu2b")
        b.conv(f"{p}_branch2c", mid, cout, 1, padding=0, bias=False)
        b.bn(f"{p}_bn2c", cout)
        if j == 0:
            # projection shortcut reads the block input, 8 outputs back
            b.conv(f"{p}_branch1", c_in, cout, 1, stride=s, padding=0, bias=False, **{"from": 9})
            b.bn(f"{p}_bn1", cout)
            b.add(p, 3)
        else:
            b.add(p, 9)
        b.relu(f"{p}_relu")


def _resnet_bottleneck(tag: str, counts, classifier: bool) -> Network:
    b = _Builder(None, tag)
    b.conv("conv1", 3, 64, 7, stride=2, padding=3, bias=False)
    b.bn("bn_conv1", 64)
    b.relu("conv1_relu")
    b.pool("pool1", 3, 2, padding=1)
    cin = 64
    for stage, (mid, n) in enumerate(zip((64, 128, 256, 512), counts), start=2):
        _bottleneck_stage(b, stage, cin, mid, mid * 4, n, 1 if stage == 2 else 2)
        cin = mid * 4
    b.pool("pool5", 7, 1, kind=Kind.AVGPOOL)
    if classifier:
        b.conv("fc1000", cin, 1000, 1, padding=0)
    return b.network()


def resnet50_manifest(classifier: bool = True) -> Network:
    """ResNet-50 with projection shortcuts; ``classifier`` appends the 1000-way head as a 1x1 conv."""
    return _resnet_bottleneck("resnet50", (3, 4, 6, 3), classifier)


def resnet152_manifest(classifier: bool = True) -> Network:
    return _resnet_bottleneck("resnet152", (3, 8, 36, 3), classifier)


SHARED_REPEATS = (2, 3, 10, 3)


def _basic_block(b: _Builder, prefix: str, c: int, gain_last=(0.2, 0.5)):
    b.conv(f"{prefix}_conv1", c, c, 3, bias=False)
    b.bn(f"{prefix}_bn1", c)
    b.relu(f"{prefix}_relu1")
    b.conv(f"{prefix}_conv2", c, c, 3, bias=False)
    b.bn(f"{prefix}_bn2", c, gain=gain_last)
    b.add(f"{prefix}_add", 6)
    b.relu(f"{prefix}_relu")


def shared_resnet(widths=(64, 128, 256, 512), repeats=SHARED_REPEATS, classifier: bool = True,
                  seed: int | None = None, in_channels: int = 3, stem_kernel: int = 7) -> tuple[Network, TyingPlan]:
    """Residual network whose stages repeat one basic block ``repeats[i]`` times.

    Stages are joined by an unshared stride-2 3x3 transition conv.  Returns the
    expanded network (repeats already carry the template's weights) and the
    plan that ties them.
    """
    b = _Builder(seed, "shared_resnet")
    b.conv("conv1", in_channels, widths[0], stem_kernel, stride=2 if stem_kernel > 3 else 1, bias=False)
    b.bn("bn_conv1", widths[0])
    b.relu("conv1_relu")
    groups = []
    for stage, (c, n) in enumerate(zip(widths, repeats), start=2):
        if stage > 2:
            b.conv(f"trans{stage}", widths[stage - 3], c, 3, stride=2, bias=False)
            b.bn(f"trans{stage}_bn", c)
            b.relu(f"trans{stage}_relu")
        start = len(b.layers)
        _basic_block(b, f"conv{stage}_1", c)
        template = b.layers[start:]
        for r in range(2, n + 1):
            for layer in template:
                suffix = layer.name.split("_", 2)[-1]
                b.layers.append(Layer(f"conv{stage}_{r}_{suffix}", layer.kind, dict(layer.tensors), dict(layer.hyperparams)))
        groups.append(TieGroup(tuple(l.name for l in template), n))
    if classifier:
        b.conv("fc1000", widths[-1], 1000, 1, padding=0)
    return b.network(), TyingPlan(groups)


def shared_resnet_manifest(classifier: bool = True) -> tuple[Network, TyingPlan]:
    return shared_resnet(classifier=classifier)


# ---------------------------------------------------------------------------
# small seeded networks

TABLE1_ALEXNET = ((5, 96), (3, 256), (3, 384), (3, 384), (3, 256))


def alexnet_like(width: float = 1.0, seed: int | None = 0, in_channels: int = 3) -> Network:
    """AlexNet-style trunk with the kernel sizes and (scaled) filter counts of the usual table layout:
    5x5/96, 3x3/256, 3x3/384, 3x3/384, 3x3/256, pooling after conv1, conv2 and conv5."""
    b = _Builder(seed, "alexnet_like")
    chans = [max(1, int(round(c * width))) for _, c in TABLE1_ALEXNET]
    ks = [k for k, _ in TABLE1_ALEXNET]
    b.conv("conv1", in_channels, chans[0], ks[0])
    b.relu("relu1")
    b.pool("pool1", 2)
    b.conv("conv2", chans[0], chans[1], ks[1])
    b.relu("relu2")
    b.pool("pool2", 2)
    b.conv("conv3", chans[1], chans[2], ks[2])
    b.relu("conv3_relu")
    b.conv("conv4", chans[2], chans[3], ks[3])
    b.relu("relu4")
    b.conv("conv5", chans[3], chans[4], ks[4])
    b.relu("relu5")
    b.pool("pool5", 2)
    return b.network()


def toy_plain(n_conv: int = 4, channels: int = 8, seed: int = 0, in_channels: int = 3,
              pool_every: int = 0, scales=None) -> Network:
    """``n_conv`` 3x3 conv+ReLU layers; optional max pool after every ``pool_every`` convs.

    ``scales`` overrides the Laplace scale of each layer's weights.
    """
    b = _Builder(seed, f"plain{n_conv}")
    cin = in_channels
    for i in range(n_conv):
        b.conv(f"conv{i + 1}", cin, channels, 3)
        if scales is not None:
            w = b.layers[-1].tensors[Role.CONV_WEIGHT]
            b.layers[-1].tensors[Role.CONV_WEIGHT] = Tensor(w.shape, b.rng.laplace(0, scales[i], size=w.shape))
        b.relu(f"relu{i + 1}")
        if pool_every and (i + 1) % pool_every == 0:
            b.pool(f"pool{i + 1}", 2)
        cin = channels
    return b.network()


def toy_resnet(blocks: int = 4, channels: int = 8, seed: int = 0, in_channels: int = 3,
               calibrate: bool = True) -> Network:
    """3x3 stem conv + BN + ReLU followed by ``blocks`` basic residual blocks at constant width.

    With ``calibrate`` the BN running statistics are set from seeded synthetic images.
    """
    b = _Builder(seed, f"resnet{blocks}")
    b.conv("stem", in_channels, channels, 3, bias=False)
    b.bn("stem_bn", channels)
    b.relu("stem_relu")
    for i in range(blocks):
        _basic_block(b, f"block{i + 1}", channels)
    net = b.network()
    if calibrate:
        net = calibrate_batchnorm(net, [synthetic_image(10_000 + seed * 64 + i, 24, in_channels) for i in range(8)])
    return net


def calibrate_batchnorm(net: Network, images) -> Network:
    """Replace every BN layer's mean/variance with the per-channel statistics it sees on ``images``."""
    x = np.stack([np.asarray(im, dtype=np.float64) for im in images])
    outputs = [x]
    layers = []
    for i, layer in enumerate(net.layers):
        inp = outputs[i + 1 - int(layer.hyperparams.get("from", 1))]
        if layer.kind is Kind.BATCHNORM:
            tensors = dict(layer.tensors)
            tensors[Role.BN_MEAN] = Tensor.from_array(inp.mean(axis=(0, 2, 3)))
            tensors[Role.BN_VAR] = Tensor.from_array(np.maximum(inp.var(axis=(0, 2, 3)), 1e-4))
            layer = Layer(layer.name, layer.kind, tensors, dict(layer.hyperparams))
        layers.append(layer)
        outputs.append(apply_layer(layer, inp, outputs))
    return Network(layers, net.arch_tag)
