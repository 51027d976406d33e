import numpy as np
import pytest

from ffca.codec import (
    _DCT,
    QUALITY_STEPS,
    Bitstream,
    QualityLevel,
    bpp,
    decode_image,
    encode_image,
)
from ffca.errors import FormatError, InputError
from ffca.metrics import psnr
from ffca.rangecoder import rc_decode_bytes, rc_encode_bytes, rc_roundtrip
from ffca.tensor import ImagePlane


def smooth_image(rng, h=48, w=64):
    from scipy import ndimage

    base = ndimage.gaussian_filter(rng.standard_normal((3, h, w)), (0, 2, 2))
    lo, hi = base.min(), base.max()
    return ImagePlane(((base - lo) / (hi - lo)).astype(np.float32))


class TestRangeCoder:
    def test_empty_roundtrip(self):
        assert rc_roundtrip(b"") == b""

    def test_random_roundtrips(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(0, 300))
            data = bytes(rng.integers(0, 256, n, dtype=np.uint8))
            assert rc_roundtrip(data) == data

    def test_skewed_roundtrips(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            n = int(rng.integers(1, 2000))
            data = bytes(rng.choice([0, 0, 0, 0, 1, 7, 255], n).astype(np.uint8))
            assert rc_roundtrip(data) == data

    def test_identical_bytes_compress_below_one_percent(self):
        data = b"\x42" * 10**6
        coded = rc_encode_bytes(data)
        assert len(coded) < 0.01 * len(data)
        assert rc_decode_bytes(coded) == data

    def test_random_bytes_incompressible(self):
        rng = np.random.default_rng(2)
        data = bytes(rng.integers(0, 256, 10**5, dtype=np.uint8))
        coded = rc_encode_bytes(data)
        assert len(coded) >= 0.99 * len(data)

    def test_truncated_blob_errors(self):
        coded = rc_encode_bytes(b"hello world, hello world")
        with pytest.raises(FormatError):
            rc_decode_bytes(coded[: len(coded) // 2])


class TestQuantizerLadder:
    def test_steps_strictly_decreasing(self):
        assert all(a > b for a, b in zip(QUALITY_STEPS, QUALITY_STEPS[1:]))

    def test_quality_index_range(self):
        QualityLevel(0)
        QualityLevel(7)
        with pytest.raises(InputError):
            QualityLevel(8)

    def test_constant_block_single_nonzero_coefficient(self):
        # DCT of a flat block concentrates everything in the DC slot
        block = np.full((8, 8), 0.5 * 255.0)
        coefs = _DCT @ block @ _DCT.T
        for step in QUALITY_STEPS:
            quant = np.rint(coefs / step)
            assert np.count_nonzero(quant) == 1
            assert quant[0, 0] != 0


class TestCodec:
    def test_roundtrip_dims_and_finiteness(self):
        rng = np.random.default_rng(3)
        img = ImagePlane(rng.random((3, 64, 64), dtype=np.float32))
        rec = decode_image(encode_image(img, QualityLevel(4)))
        assert rec.samples.shape == img.samples.shape
        assert np.all(np.isfinite(rec.samples))
        assert rec.samples.min() >= 0.0 and rec.samples.max() <= 1.0

    def test_encode_deterministic(self):
        rng = np.random.default_rng(4)
        img = smooth_image(rng)
        a = encode_image(img, QualityLevel(3)).to_bytes()
        b = encode_image(img, QualityLevel(3)).to_bytes()
        assert a == b

    def test_decode_deterministic(self):
        rng = np.random.default_rng(5)
        img = smooth_image(rng)
        stream = encode_image(img, QualityLevel(2))
        r1 = decode_image(stream)
        r2 = decode_image(Bitstream.from_bytes(stream.to_bytes()))
        assert np.array_equal(r1.samples, r2.samples)

    def test_psnr_monotone_over_ladder(self):
        rng = np.random.default_rng(6)
        for seed in range(2):
            img = smooth_image(np.random.default_rng(seed), 40, 56)
            values = [
                psnr(decode_image(encode_image(img, QualityLevel(q))), img)
                for q in range(8)
            ]
            assert all(b >= a for a, b in zip(values, values[1:])), values

    def test_top_quality_beats_bottom(self):
        img = smooth_image(np.random.default_rng(7))
        lo = psnr(decode_image(encode_image(img, QualityLevel(0))), img)
        hi = psnr(decode_image(encode_image(img, QualityLevel(7))), img)
        assert hi >= lo

    def test_odd_dims_roundtrip(self):
        rng = np.random.default_rng(8)
        img = ImagePlane(rng.random((1, 23, 37), dtype=np.float32))
        rec = decode_image(encode_image(img, QualityLevel(5)))
        assert rec.samples.shape == (1, 23, 37)

    def test_container_header_roundtrip(self):
        stream = Bitstream(height=832, width=1024, quality=5, payload=b"\x03abc")
        back = Bitstream.from_bytes(stream.to_bytes())
        assert (back.height, back.width, back.quality) == (832, 1024, 5)
        assert back.payload == stream.payload

    def test_corrupt_payload_byte_rejected(self):
        rng = np.random.default_rng(9)
        img = smooth_image(rng)
        blob = bytearray(encode_image(img, QualityLevel(4)).to_bytes())
        blob[30] ^= 0xFF  # inside the payload
        with pytest.raises(FormatError):
            decode_image(Bitstream.from_bytes(bytes(blob)))

    def test_truncated_container_rejected(self):
        rng = np.random.default_rng(10)
        img = smooth_image(rng)
        blob = encode_image(img, QualityLevel(4)).to_bytes()
        with pytest.raises(FormatError):
            Bitstream.from_bytes(blob[: len(blob) - 6])

    def test_bad_magic_rejected(self):
        with pytest.raises(FormatError):
            Bitstream.from_bytes(b"XXXX" + bytes(20))


class TestBpp:
    def test_basic_ratio(self):
        stream = Bitstream(height=64, width=64, quality=0, payload=bytes(1024))
        assert bpp(stream, (64, 64)) == 2.0

    def test_empty_payload(self):
        stream = Bitstream(height=4, width=4, quality=0, payload=b"")
        assert bpp(stream, (4, 4)) == 0.0

    def test_exact_bit_count(self):
        stream = Bitstream(height=831, width=1, quality=0, payload=bytes(104), bits=831)
        assert bpp(stream, (831, 1)) == 1.0

    def test_bits_cannot_exceed_payload(self):
        with pytest.raises(InputError):
            Bitstream(height=1, width=1, quality=0, payload=b"a", bits=9)

    def test_bad_dims(self):
        stream = Bitstream(height=4, width=4, quality=0, payload=b"")
        with pytest.raises(InputError):
            bpp(stream, (0, 4))
