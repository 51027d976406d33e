"""Images, feature pyramids, patch grids, and the pad/crop protocol.

Feature maps are plain ``(C, H, W)`` float32 ndarrays. Images carry their
samples in ``[0, 1]``. The pyramid extractor is a fixed, deterministic
kernel bank (no trained weights): level 1 sits at half image resolution and
each further level is a 2x2 average pooling of the previous one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError

PAD_MULTIPLE = 16
PYRAMID_LEVELS = 4

ROLE_MAIN_HAT = "main_hat"
ROLE_SIDE_LOSSLESS = "side_lossless"
ROLE_SIDE_COARSE = "side_coarse"
ROLE_SIDE_FINE = "side_fine"
_ROLES = (ROLE_MAIN_HAT, ROLE_SIDE_LOSSLESS, ROLE_SIDE_COARSE, ROLE_SIDE_FINE)

FIXTURE_MAGIC = b"FFCA"
FIXTURE_VERSION = 1


@dataclass(frozen=True)
class ImagePlane:
    """A 1- or 3-channel image with samples in [0, 1], shape (C, H, W)."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float32)
        if s.ndim != 3 or s.shape[0] not in (1, 3):
            raise InputError(f"image must be (C,H,W) with C in {{1,3}}, got {s.shape}")
        if s.shape[1] < 1 or s.shape[2] < 1:
            raise InputError("image dims must be positive")
        if not np.all(np.isfinite(s)):
            raise InputError("image samples must be finite")
        if s.min() < 0.0 or s.max() > 1.0:
            raise InputError("image samples must lie in [0, 1]")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def height(self) -> int:
        return self.samples.shape[1]

    @property
    def width(self) -> int:
        return self.samples.shape[2]


@dataclass(frozen=True)
class FeaturePyramid:
    """Four feature maps, each half the resolution of the previous one."""

    levels: tuple
    role: str

    def __post_init__(self):
        if self.role not in _ROLES:
            raise InputError(f"unknown pyramid role {self.role!r}")
        levels = tuple(np.asarray(l, dtype=np.float32) for l in self.levels)
        if len(levels) != PYRAMID_LEVELS:
            raise InputError(f"pyramid needs {PYRAMID_LEVELS} levels, got {len(levels)}")
        c = levels[0].shape[0]
        for i, lvl in enumerate(levels):
            if lvl.ndim != 3:
                raise InputError("pyramid levels must be (C,H,W)")
            if lvl.shape[0] != c:
                raise InputError("all pyramid levels must share the channel count")
            if not np.all(np.isfinite(lvl)):
                raise InputError(f"level {i + 1} contains non-finite samples")
            if i > 0:
                ph, pw = levels[i - 1].shape[1:]
                if lvl.shape[1] * 2 != ph or lvl.shape[2] * 2 != pw:
                    raise InputError(
                        f"level {i + 1} dims {lvl.shape[1:]} are not half of level {i}"
                    )
        for lvl in levels:
            lvl.setflags(write=False)
        object.__setattr__(self, "levels", levels)

    @property
    def channels(self) -> int:
        return self.levels[0].shape[0]

    def level(self, i: int) -> np.ndarray:
        """Return the feature map for level ``i`` (1-based, 1..4)."""
        if not 1 <= i <= PYRAMID_LEVELS:
            raise InputError(f"level index must be 1..{PYRAMID_LEVELS}, got {i}")
        return self.levels[i - 1]


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping or strided patch tiling of a (C, H, W) map."""

    B: int
    S: int
    rows: int = field(init=False, default=0)
    cols: int = field(init=False, default=0)
    height: int = 0
    width: int = 0

    def __post_init__(self):
        if self.B < 1:
            raise InputError("patch size B must be >= 1")
        if not 1 <= self.S <= self.B:
            raise InputError("stride S must satisfy 1 <= S <= B")
        if self.B > self.height or self.B > self.width:
            raise InputError(
                f"patch size {self.B} exceeds map dims {self.height}x{self.width}"
            )
        object.__setattr__(self, "rows", (self.height - self.B) // self.S + 1)
        object.__setattr__(self, "cols", (self.width - self.B) // self.S + 1)

    def origin(self, m: int, n: int) -> tuple:
        """Top-left cell of patch (m, n)."""
        return m * self.S, n * self.S


def patch_grid(feature_map: np.ndarray, B: int, S: int) -> PatchGrid:
    """Build the patch grid for a (C, H, W) feature map."""
    fm = np.asarray(feature_map)
    if fm.ndim != 3:
        raise InputError("feature map must be (C,H,W)")
    return PatchGrid(B=B, S=S, height=fm.shape[1], width=fm.shape[2])


def pad_replicate(samples: np.ndarray, multiple: int):
    """Pad the trailing two axes up to the next multiple, replicating edges.

    Returns ``(padded, (orig_h, orig_w))``; the original dims are what
    :func:`crop_to` needs to undo the padding bit-exactly.
    """
    if multiple < 1:
        raise InputError("pad multiple must be >= 1")
    x = np.asarray(samples)
    if x.ndim not in (2, 3):
        raise InputError("pad_replicate expects (H,W) or (C,H,W)")
    h, w = x.shape[-2], x.shape[-1]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x.copy(), (h, w)
    pad = [(0, 0)] * (x.ndim - 2) + [(0, ph), (0, pw)]
    return np.pad(x, pad, mode="edge"), (h, w)


def crop_to(samples: np.ndarray, original_dims: tuple) -> np.ndarray:
    """Top-left crop back to ``original_dims`` (inverse of pad_replicate)."""
    x = np.asarray(samples)
    h, w = original_dims
    if h > x.shape[-2] or w > x.shape[-1]:
        raise InputError(
            f"crop dims {original_dims} exceed map dims {x.shape[-2:]}"
        )
    return x[..., :h, :w].copy()


def avg_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 average pooling of the trailing two axes (dims must be even).

    Summation is grouped pairwise so a block of four equal values pools to
    exactly that value (and zeros stay exactly zero).
    """
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise InputError(f"avg_pool2 needs even dims, got {x.shape[-2:]}")
    a = x[..., ::2, ::2]
    b = x[..., ::2, 1::2]
    c = x[..., 1::2, ::2]
    d = x[..., 1::2, 1::2]
    return ((a + b) + (c + d)) * np.asarray(0.25, dtype=x.dtype)


def _smooth121(x: np.ndarray, axis: int) -> np.ndarray:
    """[1, 2, 1] smoothing along one axis with replicated edges (no /4)."""
    p = np.pad(x, [(1, 1) if a == axis else (0, 0) for a in range(x.ndim)], mode="edge")
    lo = [slice(None)] * x.ndim
    mid = [slice(None)] * x.ndim
    hi = [slice(None)] * x.ndim
    lo[axis] = slice(0, -2)
    mid[axis] = slice(1, -1)
    hi[axis] = slice(2, None)
    return p[tuple(lo)] + 2.0 * p[tuple(mid)] + p[tuple(hi)]


def _diff_central(x: np.ndarray, axis: int) -> np.ndarray:
    """Central difference along one axis with replicated edges.

    A pure subtraction, so constant inputs map to exactly zero.
    """
    p = np.pad(x, [(1, 1) if a == axis else (0, 0) for a in range(x.ndim)], mode="edge")
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[axis] = slice(2, None)
    lo[axis] = slice(0, -2)
    return p[tuple(hi)] - p[tuple(lo)]


def _k_gauss(x):
    return _smooth121(_smooth121(x, 0), 1) * np.float32(1.0 / 16.0)


def _k_sobel_x(x):
    return _diff_central(_smooth121(x, 0), 1)


def _k_sobel_y(x):
    return _diff_central(_smooth121(x, 1), 0)


def _k_laplace(x):
    p = np.pad(x, ((1, 1), (1, 1)), mode="edge")
    up, down = p[:-2, 1:-1], p[2:, 1:-1]
    left, right = p[1:-1, :-2], p[1:-1, 2:]
    # grouped so four equal neighbours sum to exactly 4x the centre
    return ((up + down) + (left + right)) - 4.0 * x


def _k_identity(x):
    return x.copy()


_KERNEL_BANK = (_k_gauss, _k_sobel_x, _k_sobel_y, _k_laplace, _k_identity)
# channels whose kernel is a pure derivative (exactly zero on constants)
GRADIENT_KERNEL_SLOTS = (1, 2, 3)


def extract_pyramid(image: ImagePlane, channels: int, role: str = ROLE_MAIN_HAT) -> FeaturePyramid:
    """Deterministic multi-scale feature extraction.

    The image is edge-padded to a multiple of 16, average-pooled to half
    resolution, and run through a fixed bank of ``channels`` kernels
    (Gaussian, Sobel-x, Sobel-y, Laplacian, identity, cycling, with a
    per-channel dyadic gain). Levels 2..4 are average poolings of level 1.
    Same input always yields bit-identical output.
    """
    if channels < 1:
        raise InputError("channel count must be >= 1")
    if image.height < PAD_MULTIPLE or image.width < PAD_MULTIPLE:
        raise InputError(
            f"input too small: need at least {PAD_MULTIPLE}x{PAD_MULTIPLE}, "
            f"got {image.height}x{image.width}"
        )
    padded, _ = pad_replicate(image.samples, PAD_MULTIPLE)
    half = avg_pool2(padded.astype(np.float32))
    cin = half.shape[0]

    level1 = np.empty((channels, half.shape[1], half.shape[2]), dtype=np.float32)
    for c in range(channels):
        src = half[c % cin]
        kernel = _KERNEL_BANK[c % len(_KERNEL_BANK)]
        gain = np.float32(2.0 ** (-((c // len(_KERNEL_BANK)) % 3)))
        level1[c] = kernel(src) * gain

    levels = [level1]
    for _ in range(PYRAMID_LEVELS - 1):
        levels.append(avg_pool2(levels[-1]))
    return FeaturePyramid(levels=tuple(levels), role=role)


# ---------------------------------------------------------------------------
# Image I/O: binary PPM (P6) for RGB, PGM (P5) for single-channel.
# ---------------------------------------------------------------------------

def _read_pnm_tokens(data: bytes, count: int):
    """Read `count` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise FormatError("truncated PNM header")
        ch = data[i : i + 1]
        if ch == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i + 1  # header ends with a single whitespace byte


def image_from_pnm_bytes(data: bytes) -> ImagePlane:
    if len(data) < 2:
        raise FormatError("not a PNM file")
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"unsupported PNM magic {magic!r}")
    tokens, offset = _read_pnm_tokens(data[2:], 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as e:
        raise FormatError(f"bad PNM header: {e}") from None
    if maxval != 255:
        raise FormatError("only 8-bit PNM supported")
    nch = 3 if magic == b"P6" else 1
    body = data[2 + offset :]
    need = w * h * nch
    if len(body) < need:
        raise FormatError("truncated PNM payload")
    raw = np.frombuffer(body[:need], dtype=np.uint8).reshape(h, w, nch)
    samples = (raw.astype(np.float32) / np.float32(255.0)).transpose(2, 0, 1)
    return ImagePlane(samples)


def image_to_pnm_bytes(image: ImagePlane) -> bytes:
    arr = np.clip(np.rint(image.samples * 255.0), 0, 255).astype(np.uint8)
    magic = b"P6" if image.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, image.width, image.height)
    return header + arr.transpose(1, 2, 0).tobytes()


def read_image(path) -> ImagePlane:
    with open(path, "rb") as f:
        return image_from_pnm_bytes(f.read())


def write_image(path, image: ImagePlane) -> None:
    with open(path, "wb") as f:
        f.write(image_to_pnm_bytes(image))


# ---------------------------------------------------------------------------
# Feature fixture container ("FFCA"): test vectors for feature maps.
# ---------------------------------------------------------------------------

def write_feature_fixture(path, levels) -> None:
    """Serialize a list of (C, H, W) float32 maps to the fixture format."""
    levels = [np.ascontiguousarray(l, dtype="<f4") for l in levels]
    if len(levels) > 255:
        raise InputError("too many levels for fixture container")
    out = bytearray()
    out += FIXTURE_MAGIC
    out.append(FIXTURE_VERSION)
    out.append(len(levels))
    for lvl in levels:
        if lvl.ndim != 3:
            raise InputError("fixture levels must be (C,H,W)")
        c, h, w = lvl.shape
        out += np.array([c, h, w], dtype="<u4").tobytes()
        out += lvl.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


def read_feature_fixture(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != FIXTURE_MAGIC:
        raise FormatError("bad fixture magic")
    if data[4] != FIXTURE_VERSION:
        raise FormatError(f"unsupported fixture version {data[4]}")
    count = data[5]
    pos = 6
    levels = []
    for _ in range(count):
        if pos + 12 > len(data):
            raise FormatError("truncated fixture header")
        c, h, w = np.frombuffer(data[pos : pos + 12], dtype="<u4")
        pos += 12
        n = int(c) * int(h) * int(w) * 4
        if pos + n > len(data):
            raise FormatError("truncated fixture payload")
        lvl = np.frombuffer(data[pos : pos + n], dtype="<f4").reshape(int(c), int(h), int(w))
        levels.append(lvl.copy())
        pos += n
    return levels
