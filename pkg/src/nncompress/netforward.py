"""Small deterministic forward-pass engine and nested invariance pooling (NIP) descriptors.

Activations are NCHW float64 arrays.  A layer reads the previous layer's output
unless its ``from`` hyperparameter points further back (``from = 2`` reads the
output two layers earlier); this expresses projection shortcuts.  Convolution is cross-correlation with
symmetric zero padding; pooling windows that overhang the padded border are
dropped (floor output size) and average pooling divides by the full window area.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .model import Kind, Layer, Network, Role

# ---------------------------------------------------------------------------
# layers


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (list, tuple)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _windows(x: np.ndarray, kernel, stride, padding, fill=0.0) -> np.ndarray:
    kh, kw = kernel
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=fill)
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} smaller than kernel {kh}x{kw}")
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]


def conv2d(x: np.ndarray, weight: np.ndarray, bias=None, stride=1, padding=0, groups=1) -> np.ndarray:
    n, c, _, _ = x.shape
    o, cg, kh, kw = weight.shape
    if c != cg * groups or o % groups:
        raise ShapeError(f"conv expects {cg * groups} input channels in {groups} groups, got {c}")
    win = _windows(x, (kh, kw), stride, padding)  # n, c, ho, wo, kh, kw
    ho, wo = win.shape[2:4]
    og = o // groups
    cols = win.reshape(n, groups, cg, ho, wo, kh, kw).transpose(1, 0, 3, 4, 2, 5, 6)
    cols = cols.reshape(groups, n * ho * wo, cg * kh * kw)
    w = weight.astype(np.float64).reshape(groups, og, cg * kh * kw).transpose(0, 2, 1)
    out = (cols @ w).reshape(groups, n, ho, wo, og).transpose(1, 0, 4, 2, 3).reshape(n, o, ho, wo)
    if bias is not None:
        out = out + bias.astype(np.float64)[None, :, None, None]
    return out


def batchnorm(x: np.ndarray, layer: Layer) -> np.ndarray:
    c = x.shape[1]
    t = layer.tensors

    def get(role, default):
        return t[role].data.astype(np.float64) if role in t else np.full(c, default)

    scale, bias = get(Role.BN_SCALE, 1.0), get(Role.BN_BIAS, 0.0)
    mean, var = get(Role.BN_MEAN, 0.0), get(Role.BN_VAR, 1.0)
    if len(scale) != c:
        raise ShapeError(f"batchnorm {layer.name!r} has {len(scale)} channels, input has {c}")
    inv = scale / np.sqrt(var + float(layer.hyperparams.get("eps", 1e-5)))
    return (x - mean[None, :, None, None]) * inv[None, :, None, None] + bias[None, :, None, None]


def pool2d(x: np.ndarray, kind: Kind, kernel, stride, padding) -> np.ndarray:
    kernel = _pair(kernel)
    if kind is Kind.MAXPOOL:
        return _windows(x, kernel, stride, padding, fill=-np.inf).max(axis=(4, 5))
    return _windows(x, kernel, stride, padding).mean(axis=(4, 5))


def apply_layer(layer: Layer, x: np.ndarray, outputs: list[np.ndarray]) -> np.ndarray:
    """Run one layer on ``x``.

    ``outputs`` holds the network input followed by the output of every earlier
    layer; residual joins read from it.
    """
    hp = layer.hyperparams
    if layer.kind is Kind.CONV:
        w = layer.tensors[Role.CONV_WEIGHT].data
        b = layer.tensors.get(Role.CONV_BIAS)
        return conv2d(x, w, None if b is None else b.data, hp["stride"], hp["padding"], hp.get("groups", 1))
    if layer.kind is Kind.BATCHNORM:
        return batchnorm(x, layer)
    if layer.kind is Kind.RELU:
        return np.maximum(x, 0.0)
    if layer.kind in (Kind.MAXPOOL, Kind.AVGPOOL):
        return pool2d(x, layer.kind, hp["kernel"], hp["stride"], hp["padding"])
    if layer.kind is Kind.ADD:
        skip = outputs[len(outputs) - int(hp["span"])]
        if skip.shape != x.shape:
            raise ShapeError(f"residual join {layer.name!r}: {skip.shape} vs {x.shape}")
        return x + skip
    raise ShapeError(f"unsupported layer kind {layer.kind}")


def forward(net: Network, img, upto: str | None = None) -> np.ndarray:
    """Feature maps of layer ``upto`` (default: last layer).

    ``img`` is ``C x H x W`` (returns ``C' x h x w``) or a batch ``N x C x H x W``.
    """
    x = np.asarray(img, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ShapeError(f"expected a C x H x W image or N x C x H x W batch, got shape {x.shape}")
    stop = len(net.layers) - 1 if upto is None else net.index(upto)
    convs = net.conv_layers()
    if convs:
        w = convs[0].tensors[Role.CONV_WEIGHT]
        need = w.shape[1] * convs[0].hyperparams.get("groups", 1)
        if need != x.shape[1]:
            raise ShapeError(f"image has {x.shape[1]} channels, first conv expects {need}")
    outputs = [x]  # outputs[0] is the network input, outputs[i + 1] the output of layer i
    for i, layer in enumerate(net.layers[: stop + 1]):
        x = outputs[i + 1 - int(layer.hyperparams.get("from", 1))]
        try:
            x = apply_layer(layer, x, outputs)
        except ShapeError as exc:
            raise ShapeError(f"{layer.name}: {exc}") from exc
        outputs.append(x)
    return x[0] if single else x


# ---------------------------------------------------------------------------
# images


def synthetic_image(seed: int, size=32, channels: int = 3) -> np.ndarray:
    """Deterministic ``channels x H x W`` test image in [0, 1].

    Each channel is a sum of eight Gaussian blobs (centres, widths and signed
    amplitudes drawn from ``numpy.random.default_rng(seed)``) plus a random
    low-frequency plane wave, min-max scaled to [0, 1].
    """
    h, w = _pair(size)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.empty((channels, h, w))
    for c in range(channels):
        img = np.zeros((h, w))
        for _ in range(8):
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            sigma = rng.uniform(0.05, 0.25) * min(h, w)
            img += rng.uniform(-1, 1) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma ** 2))
        fy, fx, phase = rng.uniform(0, 3, size=2).tolist() + [rng.uniform(0, 2 * np.pi)]
        img += 0.3 * np.sin(2 * np.pi * (fy * yy / h + fx * xx / w) + phase)
        lo, hi = img.min(), img.max()
        out[c] = (img - lo) / (hi - lo) if hi > lo else 0.5
    return out


def load_image(path) -> np.ndarray:
    """Read a PGM/PPM (or any Pillow-readable) file as a ``C x H x W`` array in [0, 1]."""
    from PIL import Image

    with Image.open(Path(path)) as im:
        arr = np.asarray(im, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    scale = 65535.0 if arr.max() > 255 else 255.0
    return arr / scale


# ---------------------------------------------------------------------------
# nested invariance pooling


class Group(str, enum.Enum):
    ROTATION = "rotation"
    SCALE = "scale"
    TRANSLATION = "translation"


class Moment(str, enum.Enum):
    AVERAGE = "average"
    STD = "std"
    MAX = "max"


# axis order of a transformed stack
STACK_AXES = (Group.ROTATION, Group.SCALE, Group.TRANSLATION)


@dataclass(frozen=True)
class Stage:
    group: Group
    moment: Moment

    def __post_init__(self):
        object.__setattr__(self, "group", Group(self.group))
        object.__setattr__(self, "moment", Moment(self.moment))


DEFAULT_STAGES = (
    Stage(Group.SCALE, Moment.AVERAGE),
    Stage(Group.TRANSLATION, Moment.STD),
    Stage(Group.ROTATION, Moment.MAX),
)


@dataclass(frozen=True)
class NipConfig:
    """Transformations sampled per image and the nested moments that pool them.

    ``stages`` run innermost first.  ROIs are squares of side
    ``scale * min(H, W)`` laid on a uniform grid of ``rois_per_scale`` positions.
    """

    stages: tuple[Stage, ...] = DEFAULT_STAGES
    rotations: tuple[int, ...] = (0, 90, 180, 270)
    scales: tuple[float, ...] = (1.0, 0.75, 0.5)
    rois_per_scale: int = 20

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "rotations", tuple(int(r) for r in self.rotations))
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        if not self.stages:
            raise ConfigError("NIP needs at least one pooling stage")
        if not self.rotations or any(r % 90 for r in self.rotations):
            raise ConfigError("rotations must be a non-empty list of multiples of 90 degrees")
        if not self.scales:
            raise ConfigError("at least one ROI scale is required")
        if self.rois_per_scale < 1:
            raise ConfigError("rois_per_scale must be >= 1")

    @property
    def stack_size(self) -> int:
        return len(self.rotations) * len(self.scales) * self.rois_per_scale

    def to_dict(self) -> dict:
        return {"stages": [[s.group.value, s.moment.value] for s in self.stages],
                "rotations": list(self.rotations), "scales": list(self.scales),
                "rois_per_scale": self.rois_per_scale}


IDENTITY_NIP = NipConfig(stages=DEFAULT_STAGES, rotations=(0,), scales=(1.0,), rois_per_scale=1)


def _grid(n: int, h: int, w: int) -> tuple[int, int]:
    a = max(d for d in range(1, int(np.sqrt(n)) + 1) if n % d == 0)
    b = n // a
    return (a, b) if h <= w else (b, a)


def roi_boxes(h: int, w: int, scale: float, count: int) -> list[tuple[int, int, int]]:
    """``(top, left, side)`` of each ROI at one scale, row-major over the grid."""
    if not 0 < scale <= 1:
        raise ConfigError(f"ROI scale {scale} must lie in (0, 1]")
    side = max(1, int(round(scale * min(h, w))))
    if side > min(h, w):
        raise ConfigError(f"ROI side {side} exceeds image {h}x{w}")
    rows, cols = _grid(count, h, w)
    tops = np.round(np.linspace(0, h - side, rows)).astype(int)
    lefts = np.round(np.linspace(0, w - side, cols)).astype(int)
    return [(int(t), int(l), side) for t in tops for l in lefts]


@dataclass
class TransformedStack:
    """Feature maps indexed ``[rotation][scale][roi]``, each ``C x h x w``."""

    maps: list[list[list[np.ndarray]]]
    axes: tuple[Group, ...] = STACK_AXES

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.maps), len(self.maps[0]), len(self.maps[0][0])

    def __len__(self):
        r, s, t = self.shape
        return r * s * t

    def channel_means(self) -> np.ndarray:
        """Spatially averaged maps as an ``R x S x T x C`` array."""
        return np.array([[[m.mean(axis=(1, 2)) for m in per_scale] for per_scale in per_rot]
                         for per_rot in self.maps])


def extract_transformed_stack(net: Network, img, cfg: NipConfig, upto: str | None = None) -> TransformedStack:
    img = np.asarray(img, dtype=np.float64)
    maps = []
    for angle in cfg.rotations:
        rot = np.rot90(img, k=(angle // 90) % 4, axes=(1, 2))
        h, w = rot.shape[1:]
        per_scale = []
        for scale in cfg.scales:
            boxes = roi_boxes(h, w, scale, cfg.rois_per_scale)
            batch = np.stack([rot[:, t:t + s, l:l + s] for t, l, s in boxes])
            feats = forward(net, batch, upto)
            per_scale.append(list(feats))
        maps.append(per_scale)
    return TransformedStack(maps)


def _moment(x: np.ndarray, moment: Moment, axis: int) -> np.ndarray:
    if x.shape[axis] == 1:
        # trivial group: nothing to pool
        return np.take(x, 0, axis=axis)
    if moment is Moment.AVERAGE:
        return x.mean(axis=axis)
    if moment is Moment.STD:
        return x.std(axis=axis)
    return x.max(axis=axis)


@dataclass
class Descriptor:
    vector: np.ndarray
    zero: bool = False

    def __len__(self):
        return len(self.vector)


def l2_normalize(v: np.ndarray) -> Descriptor:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0:
        return Descriptor(v, zero=True)
    return Descriptor(v / norm)


def nip_pool(stack, stages=DEFAULT_STAGES) -> Descriptor:
    """Apply the moments innermost-first over their group axes, then L2-normalise.

    ``stack`` is a :class:`TransformedStack` or an ``R x S x T x C`` array of
    per-map channel means.
    """
    if isinstance(stack, TransformedStack):
        values, axes = stack.channel_means(), list(stack.axes)
    else:
        values, axes = np.asarray(stack, dtype=np.float64), list(STACK_AXES)
        if values.ndim != len(axes) + 1:
            raise ConfigError(f"expected an R x S x T x C array, got shape {values.shape}")
    for stage in stages:
        stage = stage if isinstance(stage, Stage) else Stage(*stage)
        if stage.group not in axes:
            raise ConfigError(f"stage pools {stage.group.value!r}, which is absent or already pooled")
        ax = axes.index(stage.group)
        values = _moment(values, stage.moment, ax)
        axes.pop(ax)
    for ax in reversed(range(len(axes))):
        if values.shape[ax] != 1:
            raise ConfigError(f"group {axes[ax].value!r} has {values.shape[ax]} entries but no pooling stage")
        values = values[(slice(None),) * ax + (0,)]
    return l2_normalize(values)


def descriptor(net: Network, img, cfg: NipConfig = NipConfig(), upto: str | None = None) -> Descriptor:
    return nip_pool(extract_transformed_stack(net, img, cfg, upto), cfg.stages)


@dataclass
class Drift:
    cosine: float
    l2_gap: float
    per_image: list = field(default_factory=list, repr=False)

    @property
    def distance(self) -> float:
        return 1.0 - self.cosine


def _check_same_arch(a: Network, b: Network):
    sig = lambda n: [(l.name, l.kind, {r: t.shape for r, t in l.tensors.items()}) for l in n.layers]  # noqa: E731
    if sig(a) != sig(b):
        raise ShapeError("networks do not share an architecture")


def descriptor_drift(net_a: Network, net_b: Network, images, cfg: NipConfig = NipConfig(),
                     upto: str | None = None) -> Drift:
    """Mean cosine similarity and mean L2 distance between per-image descriptors of two nets."""
    _check_same_arch(net_a, net_b)
    cos, gaps = [], []
    for img in images:
        da = descriptor(net_a, img, cfg, upto).vector
        db = descriptor(net_b, img, cfg, upto).vector
        na, nb = np.linalg.norm(da), np.linalg.norm(db)
        cos.append(float(da @ db / (na * nb)) if na and nb else float(na == nb))
        gaps.append(float(np.linalg.norm(da - db)))
    return Drift(float(np.mean(cos)), float(np.mean(gaps)), list(zip(cos, gaps)))
