"""Toy single-image transform codec: 8x8 DCT-II, uniform quantization,
zigzag scan, adaptive range coding.

Fills the baseline-compressor slot so the pipeline produces real bitstreams
and a lossy reconstruction without any trained weights. Deterministic by
construction: float work is a fixed matrix DCT, everything downstream is
integer-only.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError
from .rangecoder import AdaptiveModel, RangeDecoder, RangeEncoder
from .tensor import ImagePlane, crop_to, pad_replicate

BITSTREAM_MAGIC = b"FFCB"
BITSTREAM_VERSION = 1

# Quantizer ladder in 8-bit DCT units; strictly decreasing step = rising quality.
QUALITY_STEPS = (64.0, 40.0, 26.0, 16.0, 10.0, 7.0, 4.0, 2.5)

_BLOCK = 8


@dataclass(frozen=True)
class QualityLevel:
    """Index 0..7 into the quantizer ladder."""

    index: int

    def __post_init__(self):
        if not 0 <= self.index < len(QUALITY_STEPS):
            raise InputError(f"quality index must be 0..{len(QUALITY_STEPS) - 1}")

    @property
    def step(self) -> float:
        return QUALITY_STEPS[self.index]


@dataclass(frozen=True)
class Bitstream:
    """One coded image: header fields plus the range-coded payload.

    ``bits`` overrides the exact payload bit count when a coder emits a
    stream that does not end on a byte boundary; by default every payload
    byte counts in full.
    """

    height: int
    width: int
    quality: int
    payload: bytes
    bits: int | None = None

    def __post_init__(self):
        if self.bits is not None and self.bits > 8 * len(self.payload):
            raise InputError("bit count exceeds payload size")

    @property
    def bit_length(self) -> int:
        return 8 * len(self.payload) if self.bits is None else self.bits

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += BITSTREAM_MAGIC
        out.append(BITSTREAM_VERSION)
        out += np.array([self.height, self.width], dtype="<u4").tobytes()
        out.append(self.quality)
        out += len(self.payload).to_bytes(4, "little")
        out += self.payload
        out += (zlib.crc32(self.payload) & 0xFFFFFFFF).to_bytes(4, "little")
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        if len(data) < 18:
            raise FormatError("bitstream too short")
        if data[:4] != BITSTREAM_MAGIC:
            raise FormatError("bad bitstream magic")
        if data[4] != BITSTREAM_VERSION:
            raise FormatError(f"unsupported bitstream version {data[4]}")
        h, w = (int(v) for v in np.frombuffer(data[5:13], dtype="<u4"))
        quality = data[13]
        plen = int.from_bytes(data[14:18], "little")
        if len(data) < 18 + plen + 4:
            raise FormatError("truncated bitstream payload")
        payload = data[18 : 18 + plen]
        crc = int.from_bytes(data[18 + plen : 18 + plen + 4], "little")
        if crc != (zlib.crc32(payload) & 0xFFFFFFFF):
            raise FormatError("payload CRC mismatch")
        if quality >= len(QUALITY_STEPS):
            raise FormatError(f"bad quality index {quality}")
        return cls(height=h, width=w, quality=quality, payload=payload)


def bpp(b: Bitstream, dims: tuple) -> float:
    """Bits per pixel of a stream against the given (height, width)."""
    h, w = dims
    if h <= 0 or w <= 0:
        raise InputError("dims must be positive")
    return b.bit_length / float(h * w)


def _dct_matrix() -> np.ndarray:
    n = _BLOCK
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    t = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    t[0, :] = np.sqrt(1.0 / n)
    return t


_DCT = _dct_matrix()


def _zigzag_indices():
    order = []
    for s in range(2 * _BLOCK - 1):
        diag = [(i, s - i) for i in range(_BLOCK) if 0 <= s - i < _BLOCK]
        if s % 2 == 0:
            diag.reverse()
        order.extend(diag)
    ii = np.array([p[0] for p in order])
    jj = np.array([p[1] for p in order])
    return ii, jj


_ZZ_I, _ZZ_J = _zigzag_indices()

# coefficient-band split along the zigzag: DC, low, mid, high
_BAND_OF = np.zeros(_BLOCK * _BLOCK, dtype=np.int64)
_BAND_OF[1:8] = 1
_BAND_OF[8:24] = 2
_BAND_OF[24:] = 3
_NUM_BANDS = 4

_MAX_VARINT_BYTES = 6  # caps decoded magnitudes at < 2**41


def _blocks_of(channel: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    return channel.reshape(h // _BLOCK, _BLOCK, w // _BLOCK, _BLOCK).transpose(0, 2, 1, 3)


def _unblocks(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    return blocks.transpose(0, 2, 1, 3).reshape(h, w)


def encode_image(image: ImagePlane, q: QualityLevel) -> Bitstream:
    """Deterministically encode an image at the given quality level."""
    step = q.step
    padded, (h, w) = pad_replicate(image.samples, _BLOCK)
    x = padded.astype(np.float64) * 255.0

    enc = RangeEncoder()
    eob_model = AdaptiveModel(_BLOCK * _BLOCK + 1)
    band_models = [AdaptiveModel(256) for _ in range(_NUM_BANDS)]

    for c in range(image.channels):
        blocks = _blocks_of(x[c]).reshape(-1, _BLOCK, _BLOCK)
        coefs = _DCT @ blocks @ _DCT.T
        quant = np.rint(coefs / step).astype(np.int64)
        zz = quant[:, _ZZ_I, _ZZ_J]
        nz = zz != 0
        # index one past the last nonzero coefficient, 0 for all-zero blocks
        ends = np.where(
            nz.any(axis=1), _BLOCK * _BLOCK - np.argmax(nz[:, ::-1], axis=1), 0
        )
        for blk, end in zip(zz, ends):
            eob_model.encode(enc, int(end))
            for pos in range(int(end)):
                v = int(blk[pos])
                u = 2 * v if v >= 0 else -2 * v - 1
                model = band_models[_BAND_OF[pos]]
                while u >= 0x80:
                    model.encode(enc, (u & 0x7F) | 0x80)
                    u >>= 7
                model.encode(enc, u)

    payload = bytes([image.channels]) + enc.finish()
    return Bitstream(height=h, width=w, quality=q.index, payload=payload)


def decode_image(b: Bitstream) -> ImagePlane:
    """Decode a bitstream back to an image; raises FormatError on damage."""
    if not b.payload:
        raise FormatError("empty payload")
    channels = b.payload[0]
    if channels not in (1, 3):
        raise FormatError(f"bad channel count {channels}")
    if b.height < 1 or b.width < 1:
        raise FormatError("bad dims in header")
    step = QUALITY_STEPS[b.quality]
    hp = -(-b.height // _BLOCK) * _BLOCK
    wp = -(-b.width // _BLOCK) * _BLOCK
    nblocks = (hp // _BLOCK) * (wp // _BLOCK)

    dec = RangeDecoder(b.payload[1:])
    eob_model = AdaptiveModel(_BLOCK * _BLOCK + 1)
    band_models = [AdaptiveModel(256) for _ in range(_NUM_BANDS)]

    out = np.empty((channels, hp, wp), dtype=np.float64)
    for c in range(channels):
        zz = np.zeros((nblocks, _BLOCK * _BLOCK), dtype=np.int64)
        for bi in range(nblocks):
            end = eob_model.decode(dec)
            for pos in range(end):
                model = band_models[_BAND_OF[pos]]
                u = 0
                shift = 0
                for nb in range(_MAX_VARINT_BYTES):
                    byte = model.decode(dec)
                    u |= (byte & 0x7F) << shift
                    if byte < 0x80:
                        break
                    shift += 7
                else:
                    raise FormatError("coefficient varint too long")
                v = u >> 1 if u % 2 == 0 else -((u + 1) >> 1)
                zz[bi, pos] = v
        quant = np.zeros((nblocks, _BLOCK, _BLOCK), dtype=np.float64)
        quant[:, _ZZ_I, _ZZ_J] = zz
        blocks = _DCT.T @ (quant * step) @ _DCT
        out[c] = _unblocks(blocks.reshape(hp // _BLOCK, wp // _BLOCK, _BLOCK, _BLOCK), hp, wp)

    samples = np.clip(out / 255.0, 0.0, 1.0).astype(np.float32)
    return ImagePlane(crop_to(samples, (b.height, b.width)))
