"""Pipeline configuration: defaults, validation, and the key-value file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .codec import QUALITY_STEPS
from .errors import InputError

DEFAULT_LAMBDAS = (0.005, 0.01, 0.02, 0.035, 0.07, 0.1, 0.2, 1.0)
DEFAULT_HYPOTHESES = (-4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)


@dataclass
class PipelineConfig:
    """Every knob of the alignment cascade and its evaluation.

    Defaults: patch size 16, channel threshold 0.5, distortion mix 0.1.
    """

    B: int = 16
    mu: float = 0.5
    alpha: float = 0.1
    lambdas: tuple = DEFAULT_LAMBDAS
    d_max: int = 64
    slack: int = 4
    direction: int = 1
    hypotheses: tuple = DEFAULT_HYPOTHESES
    channels: int = 128
    groups: int = 4
    hidden_width: int = 32
    select_mode: str = "rms"  # rms | raw_l2
    index_scale_mode: str = "divide"  # divide | multiply
    d1_mode: str = "mse"  # mse | msssim
    reuse_channel_selection: bool = False
    ms_ssim_single_scale_fallback: bool = False
    weights_path: str = ""
    quality: int = 7

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in self.lambdas)
        self.hypotheses = tuple(float(v) for v in self.hypotheses)
        self.validate()

    @property
    def num_hypotheses(self) -> int:
        return len(self.hypotheses)

    def validate(self) -> None:
        if self.B < 1:
            raise InputError("B must be >= 1")
        if self.mu < 0:
            raise InputError("mu must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise InputError("alpha must lie in [0, 1]")
        if len(self.lambdas) != len(QUALITY_STEPS):
            raise InputError(f"lambdas must list {len(QUALITY_STEPS)} values")
        if any(l < 0 for l in self.lambdas):
            raise InputError("lambdas must be >= 0")
        if self.d_max < 0 or self.slack < 0:
            raise InputError("d_max and slack must be >= 0")
        if self.direction not in (1, -1):
            raise InputError("direction must be +1 or -1")
        if not self.hypotheses:
            raise InputError("need at least one disparity hypothesis")
        if self.channels < 1:
            raise InputError("channels must be >= 1")
        if self.groups < 1 or self.channels % self.groups:
            raise InputError("channels must divide by groups")
        if self.hidden_width < 1 or self.hidden_width % self.groups:
            raise InputError("hidden width must divide by groups")
        if self.select_mode not in ("rms", "raw_l2"):
            raise InputError("select_mode must be rms or raw_l2")
        if self.index_scale_mode not in ("divide", "multiply"):
            raise InputError("index_scale_mode must be divide or multiply")
        if self.d1_mode not in ("mse", "msssim"):
            raise InputError("d1_mode must be mse or msssim")
        if not 0 <= self.quality < len(QUALITY_STEPS):
            raise InputError(f"quality must be 0..{len(QUALITY_STEPS) - 1}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        d["hypotheses"] = list(self.hypotheses)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


_BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse_value(field_type, raw: str):
    raw = raw.strip()
    if field_type is bool:
        try:
            return _BOOL_WORDS[raw.lower()]
        except KeyError:
            raise InputError(f"bad boolean value {raw!r}") from None
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    if field_type is tuple:
        return tuple(float(v) for v in raw.split(",") if v.strip())
    return raw


def load_config(path) -> PipelineConfig:
    """Read a `key = value` text file ('#' starts a comment)."""
    types = {f.name: (f.type if isinstance(f.type, type) else type(getattr(PipelineConfig(), f.name)))
             for f in fields(PipelineConfig)}
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise InputError(f"{path}:{lineno}: unknown config key {key!r}")
            try:
                values[key] = _parse_value(types[key], raw)
            except (ValueError, InputError) as e:
                raise InputError(f"{path}:{lineno}: {e}") from None
    return PipelineConfig(**values)


def save_config(path, config: PipelineConfig) -> None:
    with open(path, "w") as f:
        for name, value in config.to_dict().items():
            if isinstance(value, list):
                value = ",".join(repr(v) for v in value)
            f.write(f"{name} = {value}\n")
