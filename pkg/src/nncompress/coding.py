"""Fixed-length and canonical Huffman coding of quantizer index streams.

Bits are packed MSB-first; unused trailing bits of the last byte are zero.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .analyze import Histogram
from .errors import CorruptionError

MAX_CODE_LENGTH = 16


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    bit_length: int

    def __post_init__(self):
        if not self.bit_length <= 8 * len(self.data) < self.bit_length + 8:
            raise ValueError(f"{len(self.data)} bytes cannot hold exactly {self.bit_length} bits")

    @classmethod
    def from_bits(cls, bits: np.ndarray) -> "Bitstream":
        bits = np.asarray(bits, dtype=np.uint8)
        return cls(np.packbits(bits).tobytes(), int(bits.size))

    def bits(self) -> np.ndarray:
        arr = np.frombuffer(self.data, dtype=np.uint8)
        return np.unpackbits(arr)[: self.bit_length]

    def __len__(self):
        return len(self.data)


def _as_indices(indices) -> np.ndarray:
    return np.asarray(indices, dtype=np.int64).ravel()


def _int_to_bits(values: np.ndarray, widths: np.ndarray, max_width: int) -> np.ndarray:
    """Concatenate the low ``widths[i]`` bits of ``values[i]``, MSB first."""
    if not values.size:
        return np.zeros(0, dtype=np.uint8)
    shifts = np.arange(max_width - 1, -1, -1)
    mat = ((values[:, None] >> shifts[None, :]) & 1).astype(np.uint8)
    keep = shifts[None, :] < widths[:, None]
    return mat[keep]


def encode_fixed(indices, bit_width: int) -> Bitstream:
    if not 1 <= bit_width <= 16:
        raise ValueError(f"bit width must be in [1, 16], got {bit_width}")
    idx = _as_indices(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= 1 << bit_width):
        raise ValueError(f"index does not fit in {bit_width} bits")
    bits = _int_to_bits(idx, np.full(idx.size, bit_width), bit_width)
    return Bitstream.from_bits(bits)


def decode_fixed(bs: Bitstream, bit_width: int, n: int) -> np.ndarray:
    if not 1 <= bit_width <= 16:
        raise ValueError(f"bit width must be in [1, 16], got {bit_width}")
    if bs.bit_length < n * bit_width:
        raise CorruptionError(f"stream holds {bs.bit_length} bits, need {n * bit_width}")
    bits = bs.bits()[: n * bit_width].reshape(n, bit_width).astype(np.int64)
    weights = 1 << np.arange(bit_width - 1, -1, -1)
    return bits @ weights


# ---------------------------------------------------------------------------
# Huffman

@dataclass(frozen=True)
class HuffmanTable:
    """Canonical prefix code given entirely by per-symbol code lengths (0 = absent)."""

    code_lengths: tuple[int, ...]
    limited: bool = False

    def __post_init__(self):
        lengths = tuple(int(v) for v in self.code_lengths)
        object.__setattr__(self, "code_lengths", lengths)
        if any(v < 0 or v > MAX_CODE_LENGTH for v in lengths):
            raise ValueError(f"code lengths must be in [0, {MAX_CODE_LENGTH}]")
        if not any(lengths):
            raise ValueError("a Huffman table needs at least one symbol")
        if self.kraft_sum() > 1:
            raise ValueError("code lengths violate the Kraft inequality")

    def kraft_sum(self) -> float:
        return sum(2.0 ** -v for v in self.code_lengths if v)

    @property
    def symbol_count(self) -> int:
        return len(self.code_lengths)

    @property
    def max_length(self) -> int:
        return max(self.code_lengths)

    def codes(self) -> np.ndarray:
        """Canonical code value per symbol, ordered by (length, symbol)."""
        lengths = np.asarray(self.code_lengths)
        codes = np.zeros(len(lengths), dtype=np.int64)
        order = sorted((v, s) for s, v in enumerate(self.code_lengths) if v)
        code, prev = 0, order[0][0]
        for i, (length, sym) in enumerate(order):
            if i:
                code = (code + 1) << (length - prev)
            codes[sym] = code
            prev = length
        return codes

    def weighted_length(self, h: Histogram) -> float:
        counts = h.counts
        return float(np.dot(counts, self.code_lengths[: len(counts)]) / counts.sum())

    def tobytes(self) -> bytes:
        return bytes(self.code_lengths)

    @classmethod
    def frombytes(cls, data: bytes) -> "HuffmanTable":
        try:
            return cls(tuple(data))
        except ValueError as exc:
            raise CorruptionError(f"bad Huffman table: {exc}") from exc


def _huffman_lengths(counts) -> list[int]:
    heap = [(c, s, (s,)) for s, c in enumerate(counts) if c > 0]
    lengths = [0] * len(counts)
    if len(heap) == 1:
        lengths[heap[0][1]] = 1
        return lengths
    heapq.heapify(heap)
    # (weight, smallest symbol) keys make the merge order deterministic
    while len(heap) > 1:
        w1, s1, m1 = heapq.heappop(heap)
        w2, s2, m2 = heapq.heappop(heap)
        for s in m1 + m2:
            lengths[s] += 1
        heapq.heappush(heap, (w1 + w2, min(s1, s2), m1 + m2))
    return lengths


def _limit_lengths(lengths: list[int], counts, max_len: int) -> list[int]:
    """Clamp code lengths to ``max_len`` and lengthen cheap codes until Kraft holds."""
    out = [min(v, max_len) for v in lengths]
    scale = 1 << max_len
    kraft = sum(scale >> v for v in out if v)
    # lengthen the least frequent codes that still have room
    order = sorted((counts[s], -out[s], s) for s in range(len(out)) if out[s])
    while kraft > scale:
        for _, _, s in order:
            if out[s] < max_len:
                kraft -= scale >> (out[s] + 1)
                out[s] += 1
                break
        order = sorted((counts[s], -out[s], s) for s in range(len(out)) if out[s])
    return out


def build_huffman(h: Histogram, max_length: int = MAX_CODE_LENGTH) -> HuffmanTable:
    if not isinstance(h, Histogram):
        h = Histogram(h)
    if h.total <= 0:
        raise ValueError("cannot build a Huffman code from an empty histogram")
    counts = [int(c) for c in h.counts]
    lengths = _huffman_lengths(counts)
    limited = max(lengths) > max_length
    if limited:
        lengths = _limit_lengths(lengths, counts, max_length)
    return HuffmanTable(tuple(lengths), limited)


def encode_huffman(indices, table: HuffmanTable) -> Bitstream:
    idx = _as_indices(indices)
    lengths = np.asarray(table.code_lengths, dtype=np.int64)
    if idx.size:
        if idx.min() < 0 or idx.max() >= len(lengths):
            raise ValueError("index outside the table's alphabet")
        missing = lengths[idx] == 0
        if missing.any():
            raise ValueError(f"symbol {int(idx[missing][0])} has no code")
    codes = table.codes()
    bits = _int_to_bits(codes[idx], lengths[idx], table.max_length)
    return Bitstream.from_bits(bits)


def _decode_lut(table: HuffmanTable):
    width = table.max_length
    sym = np.full(1 << width, -1, dtype=np.int64)
    ln = np.zeros(1 << width, dtype=np.int64)
    codes = table.codes()
    for s, v in enumerate(table.code_lengths):
        if v:
            lo = codes[s] << (width - v)
            sym[lo: lo + (1 << (width - v))] = s
            ln[lo: lo + (1 << (width - v))] = v
    return width, sym, ln


def decode_huffman(bs: Bitstream, table: HuffmanTable, n: int) -> np.ndarray:
    width, sym_lut, len_lut = _decode_lut(table)
    bits = bs.bits().astype(np.int64)
    padded = np.concatenate([bits, np.zeros(width, dtype=np.int64)])
    # window[p] = the next `width` bits starting at bit p
    window = np.zeros(bits.size + 1, dtype=np.int64)
    for j in range(width):
        window = (window << 1) | padded[j: j + bits.size + 1]
    syms = sym_lut[window].tolist()
    lens = len_lut[window].tolist()
    out = np.empty(n, dtype=np.int64)
    pos, total = 0, bs.bit_length
    for i in range(n):
        if pos >= total:
            raise CorruptionError(f"stream exhausted after {i} of {n} symbols")
        s = syms[pos]
        if s < 0:
            raise CorruptionError(f"invalid code at bit {pos}")
        pos += lens[pos]
        if pos > total:
            raise CorruptionError("last code runs past the end of the stream")
        out[i] = s
    return out
