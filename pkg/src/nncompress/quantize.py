"""Per-layer scalar (Lloyd-Max) and vector (LBG) quantization of network weights.

Both trainers share one Lloyd iteration over ``(n, d)`` sample blocks, so a
vector quantizer with ``d == 1`` behaves exactly like the scalar one when it is
seeded and initialised the same way.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigError, CorruptionError
from .model import Kind, Layer, Network, Role, Tensor

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 200
MAX_TRAIN_SAMPLES = 1_000_000
_CHUNK = 1 << 16


# ---------------------------------------------------------------------------
# Lloyd core

def _nearest(x: np.ndarray, cb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest codeword for every row and its squared distance.

    Ties go to the lower codeword index.
    """
    n, d = x.shape
    if d == 1:
        order = np.argsort(cb[:, 0], kind="stable")
        c = cb[order, 0]
        v = x[:, 0]
        hi = np.clip(np.searchsorted(c, v, side="left"), 0, len(c) - 1)
        lo = np.clip(hi - 1, 0, len(c) - 1)
        dlo = (v - c[lo]) ** 2
        dhi = (v - c[hi]) ** 2
        ilo, ihi = order[lo], order[hi]
        take_hi = (dhi < dlo) | ((dhi == dlo) & (ihi < ilo))
        labels = np.where(take_hi, ihi, ilo)
        return labels, np.where(take_hi, dhi, dlo)

    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    cnorm = np.einsum("kd,kd->k", cb, cb)
    for s in range(0, n, _CHUNK):
        blk = x[s:s + _CHUNK]
        d2 = np.einsum("nd,nd->n", blk, blk)[:, None] - 2.0 * blk @ cb.T + cnorm[None, :]
        lab = np.argmin(d2, axis=1)
        labels[s:s + _CHUNK] = lab
        dist[s:s + _CHUNK] = np.sum((blk - cb[lab]) ** 2, axis=1)
    return labels, dist


def _cell_means(x, labels, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.stack([np.bincount(labels, weights=x[:, j], minlength=k) for j in range(x.shape[1])], axis=1)
    return sums, counts


def _split_empty(x, labels, cb, counts):
    """Move each empty codeword next to the worst cluster, splitting it in two."""
    k = len(cb)
    empty = np.flatnonzero(counts == 0)
    if not len(empty):
        return cb
    dist = np.sum((x - cb[labels]) ** 2, axis=1)
    cluster_cost = np.bincount(labels, weights=dist, minlength=k)
    for j in empty:
        m = int(np.argmax(cluster_cost))
        if cluster_cost[m] <= 0:
            break
        members = np.flatnonzero(labels == m)
        far = members[np.argmax(dist[members])]
        # eps < 2/n_m guarantees the split lowers the cluster's distortion
        eps = min(1e-3, 1.0 / len(members))
        v = x[far] - cb[m]
        cb[j] = cb[m] + eps * v
        cb[m] = cb[m] - eps * v
        cluster_cost[m] = -1.0
    return cb


def _lloyd(x: np.ndarray, cb: np.ndarray, tol: float, max_iter: int):
    d = x.shape[1]
    cb = cb.astype(np.float64).copy()
    labels, dist = _nearest(x, cb)
    mse = float(dist.mean()) / d
    history = [mse]
    for _ in range(max_iter):
        if mse == 0.0:
            break
        sums, counts = _cell_means(x, labels, len(cb))
        new = cb.copy()
        filled = counts > 0
        new[filled] = sums[filled] / counts[filled, None]
        new = _split_empty(x, labels, new, counts)
        new_labels, new_dist = _nearest(x, new)
        new_mse = float(new_dist.mean()) / d
        if new_mse > mse:
            # floating-point noise at the fixed point
            break
        improvement = mse - new_mse
        cb, labels, mse = new, new_labels, new_mse
        history.append(mse)
        if improvement <= tol * history[-2]:
            break
    return cb, labels, history


def _canonical(cb: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Drop unused codewords, store as float32 and sort rows lexicographically."""
    used = np.unique(labels)
    cb = np.unique(cb[used].astype(np.float32), axis=0)
    return cb


def _prepare(samples, d, seed, max_samples):
    x = np.asarray(samples, dtype=np.float64)
    x = x.reshape(-1, d)
    if not len(x):
        raise ValueError("no training samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("training samples must be finite")
    rng = np.random.default_rng(seed)
    if max_samples is not None and len(x) > max_samples:
        x = x[np.sort(rng.choice(len(x), max_samples, replace=False))]
    return x, rng


def _quantile_init(x: np.ndarray, k: int) -> np.ndarray:
    q = (np.arange(k) + 0.5) / k
    return np.quantile(x[:, 0], q)[:, None]


def _train(samples, k, d, tol, max_iter, seed, max_samples):
    if k <= 0:
        raise ValueError(f"codeword count must be positive, got {k}")
    if d <= 0:
        raise ValueError(f"block size must be positive, got {d}")
    x, rng = _prepare(samples, d, seed, max_samples)
    distinct = np.unique(x, axis=0)
    if len(distinct) <= k:
        return np.unique(distinct.astype(np.float32), axis=0), [0.0]
    if d == 1:
        init = _quantile_init(x, k)
    else:
        init = distinct[np.sort(rng.choice(len(distinct), k, replace=False))]
    cb, labels, history = _lloyd(x, init, tol, max_iter)
    return _canonical(cb, labels), history


# ---------------------------------------------------------------------------
# quantizers

@dataclass
class IndexTensor:
    shape: tuple[int, ...]
    indices: np.ndarray
    pad_count: int = 0

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.indices = np.asarray(self.indices, dtype=np.int64).ravel()

    def __eq__(self, other):
        return (isinstance(other, IndexTensor) and self.shape == other.shape
                and self.pad_count == other.pad_count
                and np.array_equal(self.indices, other.indices))


@dataclass(eq=False)
class ScalarQuantizer:
    centroids: np.ndarray
    history: list = field(default_factory=list)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float32).ravel()
        if not len(c):
            raise ValueError("a quantizer needs at least one centroid")
        if np.any(np.diff(c) <= 0):
            raise ValueError("centroids must be strictly increasing")
        self.centroids = c

    @property
    def k(self) -> int:
        return len(self.centroids)

    @property
    def boundaries(self) -> np.ndarray:
        c = self.centroids.astype(np.float64)
        return (c[:-1] + c[1:]) / 2

    def __eq__(self, other):
        return isinstance(other, ScalarQuantizer) and np.array_equal(self.centroids, other.centroids)

    def encode(self, t) -> IndexTensor:
        return sq_encode(self, t)

    def decode(self, it: IndexTensor) -> Tensor:
        return sq_decode(self, it)


@dataclass(eq=False)
class VectorQuantizer:
    codebook: np.ndarray
    history: list = field(default_factory=list)

    def __post_init__(self):
        cb = np.asarray(self.codebook, dtype=np.float32)
        if cb.ndim != 2 or cb.shape[0] < 1 or cb.shape[1] < 1:
            raise ValueError(f"codebook must be a non-empty k x d matrix, got shape {cb.shape}")
        if not np.all(np.isfinite(cb)):
            raise ValueError("codebook rows must be finite")
        self.codebook = cb

    @property
    def k(self) -> int:
        return self.codebook.shape[0]

    @property
    def d(self) -> int:
        return self.codebook.shape[1]

    def __eq__(self, other):
        return isinstance(other, VectorQuantizer) and np.array_equal(self.codebook, other.codebook)

    def encode(self, t) -> IndexTensor:
        return vq_encode(self, t)

    def decode(self, it: IndexTensor) -> Tensor:
        return vq_decode(self, it)


Quantizer = Union[ScalarQuantizer, VectorQuantizer]


def train_lloyd_max(samples, k: int, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                    seed: int = 0, max_samples: int | None = MAX_TRAIN_SAMPLES) -> ScalarQuantizer:
    """Lloyd-Max scalar quantizer with ``k`` levels (fewer if the data has fewer distinct values).

    Centroids start at evenly spaced empirical quantiles; iterations stop when the
    relative MSE improvement drops to ``tol`` or after ``max_iter`` updates.
    The per-iteration MSE trace is kept in ``history``.
    """
    cb, history = _train(samples, k, 1, tol, max_iter, seed, max_samples)
    return ScalarQuantizer(cb[:, 0], history)


def train_lbg(samples, k: int, d: int, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
              seed: int = 0, max_samples: int | None = MAX_TRAIN_SAMPLES) -> VectorQuantizer:
    """LBG / k-means codebook over ``d``-dimensional blocks.

    ``samples`` is either an ``(n, d)`` block matrix or a flat vector whose
    length is a multiple of ``d``.  Empty cells are repaired by splitting the
    cluster with the largest distortion.
    """
    if d <= 0:
        raise ValueError(f"block size must be positive, got {d}")
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] != d:
        raise ValueError(f"block matrix has {arr.shape[1]} columns, expected {d}")
    if arr.size % d:
        raise ValueError(f"{arr.size} samples do not split into blocks of {d}")
    cb, history = _train(arr, k, d, tol, max_iter, seed, max_samples)
    return VectorQuantizer(cb, history)


def _flat(t) -> tuple[tuple[int, ...], np.ndarray]:
    if isinstance(t, Tensor):
        if t.data is None:
            raise ValueError("tensor has no payload")
        return t.shape, t.data.ravel()
    arr = np.asarray(t, dtype=np.float32)
    return arr.shape or (1,), arr.ravel()


def sq_encode(q: ScalarQuantizer, t) -> IndexTensor:
    shape, flat = _flat(t)
    labels, _ = _nearest(flat.astype(np.float64)[:, None], q.centroids.astype(np.float64)[:, None])
    return IndexTensor(shape, labels, 0)


def _check_indices(it: IndexTensor, k: int):
    if it.indices.size and (it.indices.min() < 0 or it.indices.max() >= k):
        raise CorruptionError(f"index out of range for a {k}-entry codebook")


def sq_decode(q: ScalarQuantizer, it: IndexTensor) -> Tensor:
    _check_indices(it, q.k)
    if it.pad_count or it.indices.size != int(np.prod(it.shape)):
        raise CorruptionError("index count does not match tensor shape")
    return Tensor(it.shape, q.centroids[it.indices])


def vq_encode(q: VectorQuantizer, t) -> IndexTensor:
    shape, flat = _flat(t)
    pad = (-flat.size) % q.d
    blocks = np.concatenate([flat, np.zeros(pad, dtype=np.float32)]).astype(np.float64).reshape(-1, q.d)
    labels, _ = _nearest(blocks, q.codebook.astype(np.float64))
    return IndexTensor(shape, labels, pad)


def vq_decode(q: VectorQuantizer, it: IndexTensor) -> Tensor:
    _check_indices(it, q.k)
    n = int(np.prod(it.shape))
    if not 0 <= it.pad_count < q.d or it.indices.size * q.d - it.pad_count != n:
        raise CorruptionError(f"pad count {it.pad_count} inconsistent with block size {q.d}")
    flat = q.codebook[it.indices].ravel()
    return Tensor(it.shape, flat[:n])


def quantizer_mse(q: Quantizer, t) -> float:
    """Per-value squared error of snapping ``t`` to the quantizer."""
    _, flat = _flat(t)
    rec = q.decode(q.encode(flat)).data.ravel()
    return float(np.mean((flat.astype(np.float64) - rec.astype(np.float64)) ** 2))


# ---------------------------------------------------------------------------
# quantization specs

@dataclass(frozen=True)
class Scalar:
    bits: int

    def __post_init__(self):
        if not 1 <= self.bits <= 16:
            raise ConfigError(f"scalar bits must be in [1, 16], got {self.bits}")

    @property
    def k(self) -> int:
        return 1 << self.bits

    @property
    def bit_width(self) -> int:
        return self.bits

    def __str__(self):
        return f"scalar:{self.bits}"


@dataclass(frozen=True)
class Vector:
    k: int
    d: int

    def __post_init__(self):
        if not 1 <= self.k <= 1 << 16:
            raise ConfigError(f"codebook size must be in [1, 65536], got {self.k}")
        if self.d < 1:
            raise ConfigError(f"block size must be positive, got {self.d}")

    @property
    def bit_width(self) -> int:
        return max(1, math.ceil(math.log2(self.k)))

    def __str__(self):
        return f"vector:{self.k}x{self.d}"


@dataclass(frozen=True)
class Exempt:
    def __str__(self):
        return "exempt"


Mode = Union[Scalar, Vector, Exempt]
EXEMPT = Exempt()


def parse_mode(text: str) -> Mode:
    """Parse ``scalar:<bits>``, ``vector:<k>x<d>`` or ``exempt``."""
    s = text.strip().lower()
    if s in ("exempt", "float", "none"):
        return EXEMPT
    m = re.fullmatch(r"(?:scalar|sq):(\d+)", s)
    if m:
        return Scalar(int(m.group(1)))
    m = re.fullmatch(r"(?:vector|vq):(\d+)x(\d+)", s)
    if m:
        return Vector(int(m.group(1)), int(m.group(2)))
    raise ConfigError(f"unrecognised quantization mode {text!r}")


@dataclass
class QuantizationSpec:
    default: Mode = EXEMPT
    layers: dict[str, Mode] = field(default_factory=dict)
    bn_exempt: bool = True
    bias_exempt: bool = False

    @classmethod
    def uniform(cls, mode: Mode | str, **kw) -> "QuantizationSpec":
        return cls(parse_mode(mode) if isinstance(mode, str) else mode, **kw)

    def mode_for(self, layer_name: str) -> Mode:
        return self.layers.get(layer_name, self.default)

    def check(self, net: Network):
        unknown = [name for name in self.layers if name not in net]
        if unknown:
            raise ConfigError(f"quantization spec names unknown layers: {', '.join(unknown)}")

    def to_dict(self) -> dict:
        return {"default": str(self.default), "bn_exempt": self.bn_exempt, "bias_exempt": self.bias_exempt,
                "layers": {k: str(v) for k, v in self.layers.items()}}

    @classmethod
    def from_dict(cls, obj: dict) -> "QuantizationSpec":
        return cls(parse_mode(obj.get("default", "exempt")),
                   {k: parse_mode(v) for k, v in obj.get("layers", {}).items()},
                   bool(obj.get("bn_exempt", True)), bool(obj.get("bias_exempt", False)))


# ---------------------------------------------------------------------------
# whole networks

@dataclass(eq=False)
class QuantizedTensor:
    quantizer: Quantizer
    indices: IndexTensor
    bit_width: int

    def decode(self) -> Tensor:
        return self.quantizer.decode(self.indices)


def tensor_seed(seed: int, layer_pos: int, role: Role) -> int:
    """Independent, schedule-free training seed for one tensor."""
    ss = np.random.SeedSequence([seed, layer_pos, list(Role).index(role)])
    return int(ss.generate_state(1)[0])


def quantize_tensor(t: Tensor, mode: Scalar | Vector, seed: int = 0, tol: float = DEFAULT_TOL,
                    max_iter: int = DEFAULT_MAX_ITER) -> QuantizedTensor:
    flat = t.data.ravel()
    if isinstance(mode, Scalar):
        q = train_lloyd_max(flat, mode.k, tol=tol, max_iter=max_iter, seed=seed)
        return QuantizedTensor(q, sq_encode(q, t), mode.bit_width)
    pad = (-flat.size) % mode.d
    blocks = np.concatenate([flat, np.zeros(pad, dtype=np.float32)])
    q = train_lbg(blocks, mode.k, mode.d, tol=tol, max_iter=max_iter, seed=seed)
    return QuantizedTensor(q, vq_encode(q, t), mode.bit_width)


@dataclass
class QuantizedNetwork:
    network: Network
    quantized: dict[tuple[str, Role], QuantizedTensor]

    def decode(self) -> Network:
        layers = []
        for layer in self.network.layers:
            tensors = {role: (self.quantized[layer.name, role].decode() if (layer.name, role) in self.quantized else t)
                       for role, t in layer.tensors.items()}
            layers.append(Layer(layer.name, layer.kind, tensors, dict(layer.hyperparams)))
        return Network(layers, self.network.arch_tag)


def tensor_modes(layer: Layer, spec: QuantizationSpec) -> dict[Role, Mode]:
    """Quantization mode applied to each tensor of ``layer`` under ``spec``."""
    mode = spec.mode_for(layer.name)
    out = {}
    for role in layer.tensors:
        if isinstance(mode, Exempt):
            out[role] = EXEMPT
        elif role.is_bn and spec.bn_exempt:
            out[role] = EXEMPT
        elif role is Role.CONV_BIAS and spec.bias_exempt:
            out[role] = EXEMPT
        else:
            out[role] = mode
    return out


def quantize_network(net: Network, spec: QuantizationSpec, seed: int = 0, tol: float = DEFAULT_TOL,
                     max_iter: int = DEFAULT_MAX_ITER) -> QuantizedNetwork:
    """Train one quantizer per tensor and encode it; BN and exempt tensors pass through."""
    spec.check(net)
    quantized = {}
    for pos, layer in enumerate(net.layers):
        if layer.kind not in (Kind.CONV, Kind.BATCHNORM):
            continue
        for role, mode in tensor_modes(layer, spec).items():
            if isinstance(mode, Exempt):
                continue
            t = layer.tensors[role]
            if not t.has_payload:
                raise ConfigError(f"{layer.name}/{role.value}: cannot quantize a shape-only tensor")
            quantized[layer.name, role] = quantize_tensor(t, mode, tensor_seed(seed, pos, role), tol, max_iter)
    return QuantizedNetwork(net, quantized)
