"""Adaptive byte-wise range coder (integer-only state).

Carry-free 32-bit range coder paired with adaptive frequency models kept in
a Fenwick tree. Totals never exceed 2**16, which both avoids carry handling
and keeps every intermediate in exact integer arithmetic, so encoder output
is reproducible across platforms.
"""

from __future__ import annotations

from .errors import FormatError

_MASK32 = 0xFFFFFFFF
_TOP = 1 << 24
_BOT = 1 << 16


class AdaptiveModel:
    """Order-0 adaptive frequency table over ``nsym`` symbols."""

    INCREMENT = 32
    LIMIT = (1 << 16) - INCREMENT

    def __init__(self, nsym: int):
        self.n = nsym
        self.counts = [1] * nsym
        self.total = nsym
        # Fenwick tree of an all-ones table: tree[i] = i & -i
        self.tree = [0] + [i & -i for i in range(1, nsym + 1)]
        self._top_bit = 1 << (nsym.bit_length() - 1)

    def _prefix(self, i: int) -> int:
        s = 0
        while i > 0:
            s += self.tree[i]
            i -= i & -i
        return s

    def _bump(self, sym: int) -> None:
        self.counts[sym] += self.INCREMENT
        self.total += self.INCREMENT
        i = sym + 1
        while i <= self.n:
            self.tree[i] += self.INCREMENT
            i += i & -i
        if self.total > self.LIMIT:
            self._rescale()

    def _rescale(self) -> None:
        self.counts = [(c + 1) // 2 for c in self.counts]
        self.total = sum(self.counts)
        tree = [0] * (self.n + 1)
        for i in range(1, self.n + 1):
            tree[i] += self.counts[i - 1]
            j = i + (i & -i)
            if j <= self.n:
                tree[j] += tree[i]
        self.tree = tree

    def encode(self, enc: "RangeEncoder", sym: int) -> None:
        cum = self._prefix(sym)
        enc.encode(cum, self.counts[sym], self.total)
        self._bump(sym)

    def decode(self, dec: "RangeDecoder") -> int:
        value = dec.decode_freq(self.total)
        # Fenwick descent: largest sym with prefix(sym) <= value
        sym = 0
        cum = 0
        bit = self._top_bit
        while bit:
            nxt = sym + bit
            if nxt <= self.n and cum + self.tree[nxt] <= value:
                sym = nxt
                cum += self.tree[nxt]
            bit >>= 1
        dec.decode_update(cum, self.counts[sym], self.total)
        self._bump(sym)
        return sym


class RangeEncoder:
    def __init__(self):
        self._low = 0
        self._range = _MASK32
        self._out = bytearray()

    def encode(self, cum: int, freq: int, total: int) -> None:
        r = self._range // total
        self._low += r * cum
        self._range = r * freq
        low = self._low
        rng = self._range
        out = self._out
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = (-low) & (_BOT - 1)
            else:
                break
            out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK32
            rng <<= 8
        self._low = low
        self._range = rng

    def finish(self) -> bytes:
        low = self._low
        for _ in range(4):
            self._out.append((low >> 24) & 0xFF)
            low = (low << 8) & _MASK32
        return bytes(self._out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0
        self._low = 0
        self._range = _MASK32
        code = 0
        for _ in range(4):
            code = (code << 8) | self._next_byte()
        self._code = code

    def _next_byte(self) -> int:
        if self._pos >= len(self._data):
            raise FormatError("range-coded payload truncated")
        b = self._data[self._pos]
        self._pos += 1
        return b

    def decode_freq(self, total: int) -> int:
        self._r = self._range // total
        v = (self._code - self._low) // self._r
        return v if v < total else total - 1

    def decode_update(self, cum: int, freq: int, total: int) -> None:
        r = self._r
        self._low += r * cum
        self._range = r * freq
        low = self._low
        rng = self._range
        code = self._code
        while True:
            if (low ^ (low + rng)) < _TOP:
                pass
            elif rng < _BOT:
                rng = (-low) & (_BOT - 1)
            else:
                break
            code = ((code << 8) | self._next_byte()) & _MASK32
            low = (low << 8) & _MASK32
            rng <<= 8
        self._low = low
        self._range = rng
        self._code = code


def rc_encode_bytes(data: bytes) -> bytes:
    """Compress a byte sequence with one adaptive order-0 model.

    The uncompressed length is stored as a 4-byte LE prefix.
    """
    if len(data) > _MASK32:
        raise FormatError("sequence too long")
    enc = RangeEncoder()
    model = AdaptiveModel(256)
    for b in data:
        model.encode(enc, b)
    coded = enc.finish()
    return len(data).to_bytes(4, "little") + coded


def rc_decode_bytes(blob: bytes) -> bytes:
    if len(blob) < 4:
        raise FormatError("compressed blob too short")
    n = int.from_bytes(blob[:4], "little")
    dec = RangeDecoder(blob[4:])
    model = AdaptiveModel(256)
    out = bytearray()
    for _ in range(n):
        out.append(model.decode(dec))
    return bytes(out)


def rc_roundtrip(symbols: bytes) -> bytes:
    """Encode then decode a byte sequence; must be the identity."""
    return rc_decode_bytes(rc_encode_bytes(bytes(symbols)))
