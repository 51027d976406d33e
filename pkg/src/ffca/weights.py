"""Network weight tables: expected layer shapes, parameter counts,
random/zero initialization, and the "FFCW" file container.

One container carries both the refinement and the fusion weights; layer
names are prefixed ``refine.`` and ``fff.``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

WEIGHTS_MAGIC = b"FFCW"
WEIGHTS_VERSION = 1

_META_NAME = "meta.config"

DEFAULT_GROUPS = 4
DEFAULT_HIDDEN = 32


@dataclass
class NetworkWeights:
    """Named tensor table plus the layout metadata (C, D, groups)."""

    tensors: dict
    channels: int
    num_hypotheses: int
    groups: int = DEFAULT_GROUPS
    hidden: int = DEFAULT_HIDDEN

    def __post_init__(self):
        for name, t in self.tensors.items():
            t = np.asarray(t, dtype=np.float32)
            if not np.all(np.isfinite(t)):
                raise InputError(f"layer {name}: non-finite values")
            self.tensors[name] = t

    def get(self, name: str) -> np.ndarray:
        try:
            return self.tensors[name]
        except KeyError:
            raise InputError(f"layer {name}: missing from weights") from None


def refinement_layer_table(channels: int, num_hypotheses: int,
                           groups: int = DEFAULT_GROUPS, hidden: int = DEFAULT_HIDDEN):
    """Expected (name, shape) pairs for the hourglass refinement network."""
    if hidden % groups:
        raise InputError("hidden width must divide by groups")
    c2 = 2 * channels
    if c2 % groups:
        raise InputError("2*C must divide by groups")
    w = hidden
    wg = w // groups
    table = []
    for i in (1, 2, 3):
        table.append((f"refine.level{i}.proj.weight", (w, c2 // groups, 3, 3)))
        table.append((f"refine.level{i}.proj.bias", (w,)))
        for j in (1, 2):
            for k in (1, 2):
                table.append((f"refine.level{i}.block{j}.conv{k}.weight", (w, wg, 3, 3)))
                table.append((f"refine.level{i}.block{j}.conv{k}.bias", (w,)))
    for name in ("down1", "fuse2", "down2", "fuse3"):
        table.append((f"refine.{name}.weight", (w, wg, 3, 3)))
        table.append((f"refine.{name}.bias", (w,)))
    for name in ("up2", "up1"):
        table.append((f"refine.{name}.weight", (w, wg, 4, 4)))
        table.append((f"refine.{name}.bias", (w,)))
    table.append(("refine.head.weight", (num_hypotheses, w, 1, 1)))
    table.append(("refine.head.bias", (num_hypotheses,)))
    return table


def fff_layer_table(channels: int, groups: int = DEFAULT_GROUPS):
    """Expected (name, shape) pairs for the fast-feature-fusion stages."""
    c = channels
    table = []
    for i in (4, 3, 2, 1):
        cin = 2 * c if i == 4 else 3 * c
        if cin % groups:
            raise InputError("stage input channels must divide by groups")
        cout = c if i > 1 else 3
        table.append((f"fff.stage{i}.dw.weight", (cin, 3, 3)))
        table.append((f"fff.stage{i}.dw.bias", (cin,)))
        table.append((f"fff.stage{i}.pw.weight", (c, cin, 1, 1)))
        table.append((f"fff.stage{i}.pw.bias", (c,)))
        table.append((f"fff.stage{i}.up_dw.weight", (c, 3, 3)))
        table.append((f"fff.stage{i}.up_dw.bias", (c,)))
        table.append((f"fff.stage{i}.up_pw.weight", (cout, c, 1, 1)))
        table.append((f"fff.stage{i}.up_pw.bias", (cout,)))
    return table


def count_parameters(table) -> int:
    return int(sum(int(np.prod(shape)) for _, shape in table))


def full_layer_table(channels, num_hypotheses, groups=DEFAULT_GROUPS, hidden=DEFAULT_HIDDEN):
    return refinement_layer_table(channels, num_hypotheses, groups, hidden) + fff_layer_table(
        channels, groups
    )


def validate_weights(weights: NetworkWeights, table) -> None:
    """Check every required layer exists with the right shape."""
    for name, shape in table:
        t = weights.get(name)
        if t.shape != tuple(shape):
            raise InputError(
                f"layer {name}: expected shape {tuple(shape)}, got {t.shape}"
            )


def random_weights(channels: int, num_hypotheses: int, seed: int = 0,
                   groups: int = DEFAULT_GROUPS, hidden: int = DEFAULT_HIDDEN,
                   scale: float = 0.1) -> NetworkWeights:
    """Gaussian-initialized weights; biases start at zero."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in full_layer_table(channels, num_hypotheses, groups, hidden):
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
            std = scale / np.sqrt(max(fan_in, 1))
            tensors[name] = (rng.standard_normal(shape) * std).astype(np.float32)
    return NetworkWeights(tensors, channels, num_hypotheses, groups, hidden)


def zero_weights(channels: int, num_hypotheses: int,
                 groups: int = DEFAULT_GROUPS, hidden: int = DEFAULT_HIDDEN) -> NetworkWeights:
    tensors = {
        name: np.zeros(shape, dtype=np.float32)
        for name, shape in full_layer_table(channels, num_hypotheses, groups, hidden)
    }
    return NetworkWeights(tensors, channels, num_hypotheses, groups, hidden)


def describe_weights(channels: int, num_hypotheses: int,
                     groups: int = DEFAULT_GROUPS, hidden: int = DEFAULT_HIDDEN) -> str:
    """Human-readable expected layer table with parameter totals."""
    lines = [f"config: C={channels} D={num_hypotheses} groups={groups} hidden={hidden}", ""]
    ref = refinement_layer_table(channels, num_hypotheses, groups, hidden)
    fff = fff_layer_table(channels, groups)
    for title, table in (("refinement", ref), ("fusion", fff)):
        lines.append(f"[{title}]  {count_parameters(table):,} parameters")
        for name, shape in table:
            lines.append(f"  {name:<44s} {'x'.join(str(s) for s in shape)}")
        lines.append("")
    lines.append(f"total: {count_parameters(ref) + count_parameters(fff):,} parameters")
    return "\n".join(lines)


def save_weights(path, weights: NetworkWeights) -> None:
    entries = [(
        _META_NAME,
        np.array([weights.channels, weights.num_hypotheses, weights.groups, weights.hidden],
                 dtype=np.float32),
    )]
    entries += sorted(weights.tensors.items())
    out = bytearray()
    out += WEIGHTS_MAGIC
    out.append(WEIGHTS_VERSION)
    out += len(entries).to_bytes(4, "little")
    for name, tensor in entries:
        raw = name.encode("utf-8")
        out += len(raw).to_bytes(2, "little")
        out += raw
        t = np.ascontiguousarray(tensor, dtype="<f4")
        out.append(t.ndim)
        for d in t.shape:
            out += int(d).to_bytes(4, "little")
        out += t.tobytes()
    with open(path, "wb") as f:
        f.write(bytes(out))


def load_weights(path) -> NetworkWeights:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError("bad weights magic")
    if data[4] != WEIGHTS_VERSION:
        raise FormatError(f"unsupported weights version {data[4]}")
    count = int.from_bytes(data[5:9], "little")
    pos = 9
    tensors = {}
    for _ in range(count):
        if pos + 2 > len(data):
            raise FormatError("truncated weights entry")
        nlen = int.from_bytes(data[pos : pos + 2], "little")
        pos += 2
        name = data[pos : pos + nlen].decode("utf-8")
        pos += nlen
        if pos >= len(data):
            raise FormatError("truncated weights entry")
        rank = data[pos]
        pos += 1
        dims = []
        for _ in range(rank):
            dims.append(int.from_bytes(data[pos : pos + 4], "little"))
            pos += 4
        n = int(np.prod(dims)) * 4 if dims else 4
        if pos + n > len(data):
            raise FormatError(f"truncated tensor data for {name}")
        tensors[name] = np.frombuffer(data[pos : pos + n], dtype="<f4").reshape(dims).copy()
        pos += n
    meta = tensors.pop(_META_NAME, None)
    if meta is None or meta.size != 4:
        raise FormatError("weights file lacks the meta.config entry")
    c, d, g, h = (int(v) for v in meta)
    return NetworkWeights(tensors, channels=c, num_hypotheses=d, groups=g, hidden=h)
