"""Uncompressed model container ("NNW1") and parameter accounting.

Byte layout of an ``.nnw`` file (all integers little-endian)::

    b"NNW1"
    u32  manifest length in bytes
    ...  manifest, UTF-8 JSON with sorted keys and no whitespace
    for every tensor with a payload, in manifest order:
        f32[n]  row-major values
        u32     CRC32 of the preceding f32 bytes

The manifest lists layers in data-flow order.  Every tensor entry records its
role, its shape and whether a payload follows; shape-only tensors let full-size
architectures be described and accounted without materialising the weights.
"""
from __future__ import annotations

import enum
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import CorruptionError, FormatError, ManifestError, ShapeError

MAGIC = b"NNW1"


class Role(str, enum.Enum):
    CONV_WEIGHT = "ConvWeight"
    CONV_BIAS = "ConvBias"
    BN_SCALE = "BnScale"
    BN_BIAS = "BnBias"
    BN_MEAN = "BnMean"
    BN_VAR = "BnVar"

    @property
    def is_bn(self) -> bool:
        return self.value.startswith("Bn")


# Serialisation order of tensors inside a layer.
ROLE_ORDER = list(Role)


class Kind(str, enum.Enum):
    CONV = "Conv"
    BATCHNORM = "BatchNorm"
    RELU = "ReLU"
    MAXPOOL = "MaxPool"
    AVGPOOL = "AvgPool"
    # Residual join: adds the output of the layer ``span`` positions earlier
    # (``span`` one past the layer's own position reaches the network input).
    # Any layer may read an older output through its ``from`` hyperparameter.
    ADD = "Add"


_ALLOWED_ROLES = {
    Kind.CONV: {Role.CONV_WEIGHT, Role.CONV_BIAS},
    Kind.BATCHNORM: {Role.BN_SCALE, Role.BN_BIAS, Role.BN_MEAN, Role.BN_VAR},
}


@dataclass(eq=False)
class Tensor:
    """A float32 array with an explicit shape; ``data`` may be ``None`` for shape-only manifests."""

    shape: tuple[int, ...]
    data: np.ndarray | None = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        if not self.shape or any(s <= 0 for s in self.shape):
            raise ShapeError(f"tensor dims must be positive, got {self.shape}")
        if self.data is not None:
            data = np.ascontiguousarray(self.data, dtype=np.float32)
            if data.size != self.size:
                raise ShapeError(f"shape {self.shape} needs {self.size} values, got {data.size}")
            data = data.reshape(self.shape)
            if not np.all(np.isfinite(data)):
                raise ValueError("tensor values must be finite")
            data.flags.writeable = False
            self.data = data

    @classmethod
    def from_array(cls, arr) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float32)
        return cls(arr.shape, arr)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def has_payload(self) -> bool:
        return self.data is not None

    def __eq__(self, other):
        if not isinstance(other, Tensor) or self.shape != other.shape:
            return False
        if self.data is None or other.data is None:
            return self.data is None and other.data is None
        return self.data.tobytes() == other.data.tobytes()

    def __repr__(self):
        kind = "payload" if self.has_payload else "shape-only"
        return f"Tensor({self.shape}, {kind})"


@dataclass
class Layer:
    name: str
    kind: Kind
    tensors: dict[Role, Tensor] = field(default_factory=dict)
    hyperparams: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = Kind(self.kind)
        self.tensors = {Role(r): t for r, t in self.tensors.items()}
        self.validate()

    def validate(self):
        allowed = _ALLOWED_ROLES.get(self.kind, set())
        extra = set(self.tensors) - allowed
        if extra:
            raise ManifestError(f"layer {self.name!r} ({self.kind.value}) cannot hold {sorted(r.value for r in extra)}")
        if self.kind is Kind.CONV:
            if Role.CONV_WEIGHT not in self.tensors:
                raise ManifestError(f"conv layer {self.name!r} has no ConvWeight")
            w = self.tensors[Role.CONV_WEIGHT]
            if len(w.shape) != 4:
                raise ManifestError(f"conv layer {self.name!r}: weight must be [out, in, kH, kW]")
            kernel = tuple(self.hyperparams.get("kernel", w.shape[2:]))
            if kernel != w.shape[2:]:
                raise ManifestError(f"conv layer {self.name!r}: kernel {kernel} disagrees with weight {w.shape}")
            self.hyperparams.setdefault("kernel", list(w.shape[2:]))
            self.hyperparams["kernel"] = list(self.hyperparams["kernel"])
            self.hyperparams.setdefault("stride", 1)
            self.hyperparams.setdefault("padding", 0)
            self.hyperparams.setdefault("groups", 1)
            b = self.tensors.get(Role.CONV_BIAS)
            if b is not None and b.shape != (w.shape[0],):
                raise ManifestError(f"conv layer {self.name!r}: bias shape {b.shape} vs {w.shape[0]} filters")
        elif self.kind is Kind.BATCHNORM:
            shapes = {t.shape for t in self.tensors.values()}
            if len(shapes) > 1 or any(len(s) != 1 for s in shapes):
                raise ManifestError(f"batchnorm {self.name!r}: parameters must be equal-length vectors")
            var = self.tensors.get(Role.BN_VAR)
            if var is not None and var.has_payload and np.any(var.data <= 0):
                raise ManifestError(f"batchnorm {self.name!r}: BnVar must be strictly positive")
            self.hyperparams.setdefault("eps", 1e-5)
        elif self.kind in (Kind.MAXPOOL, Kind.AVGPOOL):
            if "kernel" not in self.hyperparams:
                raise ManifestError(f"pool layer {self.name!r} needs a kernel")
            k = self.hyperparams["kernel"]
            self.hyperparams["kernel"] = [k, k] if isinstance(k, int) else list(k)
            self.hyperparams.setdefault("stride", self.hyperparams["kernel"][0])
            self.hyperparams.setdefault("padding", 0)
        elif self.kind is Kind.ADD:
            if int(self.hyperparams.get("span", 0)) < 1:
                raise ManifestError(f"add layer {self.name!r} needs span >= 1")

    @property
    def channels(self) -> int | None:
        if self.kind is Kind.CONV:
            return self.tensors[Role.CONV_WEIGHT].shape[0]
        if self.kind is Kind.BATCHNORM and self.tensors:
            return next(iter(self.tensors.values())).shape[0]
        return None

    def __eq__(self, other):
        return (
            isinstance(other, Layer)
            and self.name == other.name
            and self.kind == other.kind
            and self.hyperparams == other.hyperparams
            and self.tensors.keys() == other.tensors.keys()
            and all(self.tensors[r] == other.tensors[r] for r in self.tensors)
        )


@dataclass
class Network:
    layers: list[Layer] = field(default_factory=list)
    arch_tag: str = ""

    def __post_init__(self):
        self.layers = list(self.layers)
        seen = set()
        for i, layer in enumerate(self.layers):
            if layer.name in seen:
                raise ManifestError(f"duplicate layer name {layer.name!r}")
            seen.add(layer.name)
            if layer.kind is Kind.ADD and layer.hyperparams["span"] > i + 1:
                raise ManifestError(f"add layer {layer.name!r} reaches before the network input")
            if not 1 <= int(layer.hyperparams.get("from", 1)) <= i + 1:
                raise ManifestError(f"layer {layer.name!r} reads from before the network input")

    def __getitem__(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def __contains__(self, name) -> bool:
        return any(layer.name == name for layer in self.layers)

    def index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [layer.name for layer in self.layers]

    def conv_layers(self) -> list[Layer]:
        return [layer for layer in self.layers if layer.kind is Kind.CONV]

    def has_payload(self) -> bool:
        return all(t.has_payload for layer in self.layers for t in layer.tensors.values())


# ---------------------------------------------------------------------------
# serialisation

def _manifest(net: Network) -> dict:
    layers = []
    for layer in net.layers:
        tensors = [
            {"role": role.value, "shape": list(layer.tensors[role].shape),
             "payload": layer.tensors[role].has_payload}
            for role in ROLE_ORDER if role in layer.tensors
        ]
        layers.append({"name": layer.name, "kind": layer.kind.value,
                       "hyperparams": layer.hyperparams, "tensors": tensors})
    return {"arch_tag": net.arch_tag, "layers": layers}


def dumps_manifest(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def serialize_model(net: Network) -> bytes:
    manifest = dumps_manifest(_manifest(net))
    parts = [MAGIC, struct.pack("<I", len(manifest)), manifest]
    for layer in net.layers:
        for role in ROLE_ORDER:
            t = layer.tensors.get(role)
            if t is None or not t.has_payload:
                continue
            payload = t.data.astype("<f4").tobytes()
            parts.append(payload)
            parts.append(struct.pack("<I", zlib.crc32(payload)))
    return b"".join(parts)


def deserialize_model(buf: bytes) -> Network:
    if len(buf) < 8 or buf[:4] != MAGIC:
        raise FormatError(f"not an NNW1 file (magic {bytes(buf[:4])!r})")
    (mlen,) = struct.unpack_from("<I", buf, 4)
    if 8 + mlen > len(buf):
        raise CorruptionError("manifest truncated")
    try:
        manifest = json.loads(bytes(buf[8:8 + mlen]).decode("utf-8"))
        layer_specs = manifest["layers"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ManifestError(f"malformed manifest: {exc}") from exc

    pos = 8 + mlen
    layers = []
    for spec in layer_specs:
        tensors = {}
        for ts in spec.get("tensors", []):
            shape = tuple(ts["shape"])
            data = None
            if ts.get("payload", True):
                nbytes = 4 * int(np.prod(shape))
                if pos + nbytes + 4 > len(buf):
                    raise CorruptionError(f"payload of {spec['name']}/{ts['role']} truncated")
                payload = buf[pos:pos + nbytes]
                (crc,) = struct.unpack_from("<I", buf, pos + nbytes)
                if zlib.crc32(payload) != crc:
                    raise CorruptionError(f"checksum mismatch in {spec['name']}/{ts['role']}")
                data = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(shape)
                pos += nbytes + 4
            try:
                tensors[Role(ts["role"])] = Tensor(shape, data)
            except ValueError as exc:
                raise ManifestError(f"{spec['name']}: {exc}") from exc
        try:
            layers.append(Layer(spec["name"], spec["kind"], tensors, dict(spec.get("hyperparams", {}))))
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ManifestError):
                raise
            raise ManifestError(f"bad layer entry: {exc}") from exc
    if pos != len(buf):
        raise CorruptionError(f"{len(buf) - pos} trailing bytes after last payload")
    return Network(layers, manifest.get("arch_tag", ""))


def save_model(net: Network, path) -> None:
    Path(path).write_bytes(serialize_model(net))


def load_model(path) -> Network:
    return deserialize_model(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# parameter accounting

@dataclass
class LayerCount:
    name: str
    conv: int
    bn: int


@dataclass
class ParamAccounting:
    layers: list[LayerCount]

    @property
    def conv_total(self) -> int:
        return sum(c.conv for c in self.layers)

    @property
    def bn_total(self) -> int:
        return sum(c.bn for c in self.layers)

    @property
    def total(self) -> int:
        """Convolutional parameters only (weights + biases)."""
        return self.conv_total

    def __add__(self, other: "ParamAccounting") -> "ParamAccounting":
        return ParamAccounting(self.layers + other.layers)


def param_accounting(net: Network | Iterable[Layer]) -> ParamAccounting:
    """Per-layer parameter counts; BN parameters are kept apart from conv ones."""
    layers = net.layers if isinstance(net, Network) else list(net)
    counts = []
    for layer in layers:
        if layer.kind is Kind.CONV:
            counts.append(LayerCount(layer.name, sum(t.size for t in layer.tensors.values()), 0))
        elif layer.kind is Kind.BATCHNORM:
            counts.append(LayerCount(layer.name, 0, sum(t.size for t in layer.tensors.values())))
    return ParamAccounting(counts)
