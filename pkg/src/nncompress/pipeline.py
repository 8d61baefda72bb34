"""Compressed container ("NNZ1"): prune, tie, quantize and entropy-code a network.

Byte layout (integers little-endian)::

    b"NNZ1"
    u8   format version (1)
    u32  manifest length
    ...  manifest, UTF-8 JSON with sorted keys
    one record per stored tensor, in manifest order:
        ...  record sections, as listed in the tensor's manifest entry
        u32  CRC32 of the record sections

A raw (exempt) record holds the float32 values.  A quantized record holds the
codebook as float32 (``k * d`` values), then for variable-length coding one
code-length byte per codeword, then the MSB-first index bitstream.
"""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .analyze import Histogram
from .coding import Bitstream, HuffmanTable, build_huffman, decode_fixed, decode_huffman, encode_fixed, encode_huffman
from .errors import ConfigError, CorruptionError, FormatError, NNCompressError
from .model import ROLE_ORDER, Layer, Network, Role, Tensor, dumps_manifest
from .quantize import (DEFAULT_MAX_ITER, DEFAULT_TOL, IndexTensor, QuantizationSpec, ScalarQuantizer,
                       VectorQuantizer, quantize_network)
from .transform import Ref, TiedNetwork, TyingPlan, prune_at, tie_blocks, untie

MAGIC = b"NNZ1"
VERSION = 1
CODINGS = ("flc", "vlc")


@dataclass
class CompressionConfig:
    spec: QuantizationSpec = field(default_factory=QuantizationSpec)
    coding: str = "flc"
    prune_at: str | None = None
    tying: TyingPlan | None = None
    seed: int = 0
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        self.coding = self.coding.lower()
        if self.coding not in CODINGS:
            raise ConfigError(f"coding must be one of {CODINGS}, got {self.coding!r}")

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "coding": self.coding, "prune_at": self.prune_at,
                "tying": None if self.tying is None else self.tying.to_dict(), "seed": self.seed,
                "tol": self.tol, "max_iter": self.max_iter}


@dataclass
class SizeBreakdown:
    index_payload: int
    codebooks: int
    huffman_tables: int
    exempt: int
    manifest: int  # magic, version, lengths, manifest JSON and record checksums

    @property
    def total(self) -> int:
        return self.index_payload + self.codebooks + self.huffman_tables + self.exempt + self.manifest

    @property
    def log10_total(self) -> float:
        return math.log10(self.total) if self.total else float("-inf")


@dataclass
class CompressedModel:
    manifest: dict
    records: list[list[tuple[str, bytes]]]  # per stored tensor: (category, section bytes)

    def tobytes(self) -> bytes:
        m = dumps_manifest(self.manifest)
        parts = [MAGIC, struct.pack("<BI", VERSION, len(m)), m]
        for sections in self.records:
            body = b"".join(data for _, data in sections)
            parts.append(body)
            parts.append(struct.pack("<I", zlib.crc32(body)))
        return b"".join(parts)

    @classmethod
    def frombytes(cls, buf: bytes) -> "CompressedModel":
        if len(buf) < 9 or buf[:4] != MAGIC:
            raise FormatError(f"not an NNZ1 container (magic {bytes(buf[:4])!r})")
        version, mlen = struct.unpack_from("<BI", buf, 4)
        if version != VERSION:
            raise FormatError(f"unsupported container version {version}")
        if 9 + mlen > len(buf):
            raise CorruptionError("manifest truncated")
        try:
            manifest = json.loads(bytes(buf[9:9 + mlen]).decode("utf-8"))
            entries = [t for layer in manifest["layers"] for t in layer["tensors"]]
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc
        pos = 9 + mlen
        records = []
        for entry in entries:
            sections = []
            start = pos
            for cat, size in entry["sections"]:
                if pos + size > len(buf):
                    raise CorruptionError(f"record {entry['layer']}/{entry['role']} truncated")
                sections.append((cat, bytes(buf[pos:pos + size])))
                pos += size
            if pos + 4 > len(buf):
                raise CorruptionError(f"record {entry['layer']}/{entry['role']} truncated")
            (crc,) = struct.unpack_from("<I", buf, pos)
            if zlib.crc32(buf[start:pos]) != crc:
                raise CorruptionError(f"checksum mismatch in record {entry['layer']}/{entry['role']}")
            pos += 4
            records.append(sections)
        if pos != len(buf):
            raise CorruptionError(f"{len(buf) - pos} trailing bytes after last record")
        return cls(manifest, records)

    def size_report(self) -> SizeBreakdown:
        return size_report(self)


def _encode_record(layer_name: str, role: Role, t: Tensor, qt, coding: str) -> tuple[dict, list]:
    entry = {"layer": layer_name, "role": role.value, "shape": list(t.shape)}
    if qt is None:
        entry["enc"] = "raw"
        sections = [("exempt", t.data.astype("<f4").tobytes())]
    else:
        q = qt.quantizer
        codebook = q.centroids[:, None] if isinstance(q, ScalarQuantizer) else q.codebook
        idx = qt.indices.indices
        entry.update({"enc": "sq" if isinstance(q, ScalarQuantizer) else "vq", "k": int(codebook.shape[0]),
                      "d": int(codebook.shape[1]), "n": int(idx.size), "pad": qt.indices.pad_count,
                      "bits": qt.bit_width, "coding": coding})
        sections = [("codebook", codebook.astype("<f4").tobytes())]
        if coding == "vlc":
            table = build_huffman(Histogram.of(idx, codebook.shape[0]))
            bs = encode_huffman(idx, table)
            sections.append(("huffman", table.tobytes()))
            entry["limited"] = table.limited
        else:
            bs = encode_fixed(idx, qt.bit_width)
        sections.append(("index", bs.data))
        entry["bit_length"] = bs.bit_length
    entry["sections"] = [[cat, len(data)] for cat, data in sections]
    return entry, sections


def compress(net: Network, cfg: CompressionConfig) -> CompressedModel:
    """Prune, tie, quantize per tensor and entropy-code into a container."""
    if cfg.prune_at is not None:
        try:
            net = prune_at(net, cfg.prune_at)
        except ValueError as exc:
            raise ConfigError(f"prune_at: {exc}") from exc
    expansion = None
    if cfg.tying is not None:
        tied = tie_blocks(net, cfg.tying)
        expansion = tied.to_dict()["expansion"]
        net = tied.unique_layers
    try:
        cfg.spec.check(net)
    except ConfigError as exc:
        raise ConfigError(f"{exc} (after pruning/tying)") from exc
    qn = quantize_network(net, cfg.spec, cfg.seed, cfg.tol, cfg.max_iter)

    layers, records = [], []
    for layer in net.layers:
        entries = []
        for role in ROLE_ORDER:
            t = layer.tensors.get(role)
            if t is None:
                continue
            if not t.has_payload:
                raise ConfigError(f"{layer.name}/{role.value}: shape-only tensors cannot be compressed")
            try:
                entry, sections = _encode_record(layer.name, role, t, qn.quantized.get((layer.name, role)), cfg.coding)
            except (NNCompressError, ValueError) as exc:
                raise type(exc)(f"{layer.name}/{role.value}: {exc}") from exc
            entries.append(entry)
            records.append(sections)
        layers.append({"name": layer.name, "kind": layer.kind.value, "hyperparams": layer.hyperparams,
                       "tensors": entries})
    manifest = {"format": "NNZ1", "arch_tag": net.arch_tag, "seed": cfg.seed, "config": cfg.to_dict(),
                "layers": layers, "expansion": expansion}
    return CompressedModel(manifest, records)


def _decode_record(entry: dict, sections: list) -> Tensor:
    data = {cat: blob for cat, blob in sections}
    shape = tuple(entry["shape"])
    if entry["enc"] == "raw":
        return Tensor(shape, np.frombuffer(data["exempt"], dtype="<f4").astype(np.float32))
    k, d, n = entry["k"], entry["d"], entry["n"]
    cb = np.frombuffer(data["codebook"], dtype="<f4").astype(np.float32)
    if cb.size != k * d:
        raise CorruptionError("codebook size disagrees with manifest")
    bs = Bitstream(data["index"], entry["bit_length"])
    if entry["coding"] == "vlc":
        table = HuffmanTable.frombytes(data["huffman"])
        idx = decode_huffman(bs, table, n)
    else:
        idx = decode_fixed(bs, entry["bits"], n)
    it = IndexTensor(shape, idx, entry["pad"])
    q = ScalarQuantizer(cb) if entry["enc"] == "sq" else VectorQuantizer(cb.reshape(k, d))
    return q.decode(it)


def decompress_tied(cm) -> TiedNetwork | Network:
    """Rebuild the stored layers; returns a :class:`TiedNetwork` when the container records tying."""
    if isinstance(cm, (bytes, bytearray, memoryview)):
        cm = CompressedModel.frombytes(bytes(cm))
    it = iter(cm.records)
    layers = []
    for spec in cm.manifest["layers"]:
        tensors = {}
        for entry in spec["tensors"]:
            try:
                sections = next(it)
            except StopIteration:
                raise CorruptionError("fewer records than manifest entries") from None
            try:
                tensors[Role(entry["role"])] = _decode_record(entry, sections)
            except (NNCompressError, ValueError, KeyError) as exc:
                raise CorruptionError(f"{spec['name']}/{entry.get('role')}: {exc}") from exc
        layers.append(Layer(spec["name"], spec["kind"], tensors, dict(spec["hyperparams"])))
    net = Network(layers, cm.manifest.get("arch_tag", ""))
    if cm.manifest.get("expansion") is None:
        return net
    return TiedNetwork(net, [Ref(t, int(r), name) for t, r, name in cm.manifest["expansion"]])


def decompress(cm) -> Network:
    """Materialised network; tied blocks are expanded to their full depth."""
    out = decompress_tied(cm)
    return untie(out) if isinstance(out, TiedNetwork) else out


def size_report(cm: CompressedModel) -> SizeBreakdown:
    sizes = {"index": 0, "codebook": 0, "huffman": 0, "exempt": 0}
    for sections in cm.records:
        for cat, data in sections:
            sizes[cat] += len(data)
    header = len(MAGIC) + 5 + len(dumps_manifest(cm.manifest)) + 4 * len(cm.records)
    return SizeBreakdown(sizes["index"], sizes["codebook"], sizes["huffman"], sizes["exempt"], header)


def save_compressed(cm: CompressedModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(cm.tobytes())


def load_compressed(path) -> CompressedModel:
    with open(path, "rb") as fh:
        return CompressedModel.frombytes(fh.read())
