"""Run configuration: model shape, task, variant/ablation, and training recipe.

Config files are line-oriented ``key = value`` text. ``#`` starts a comment,
tuples are comma separated, and the ablation set is a comma list of attention
input groups (or ``none``). Unknown keys are errors that carry the line number.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Optional

from .. import attention as ga
from ..errors import ConfigError

VARIANTS = ("full", "remote", "proximate")
TASKS = ("classification", "regression")


@dataclasses.dataclass
class RunConfig:
    # shapes
    image_px: int = 64
    grid: int = 8
    pano_channels: int = 32
    pano_h: int = 64
    pano_w: int = 256
    crop_deg: float = 40.0
    num_panos: int = 4
    overhead_widths: tuple = (8, 16, 24)
    pano_widths: tuple = (8, 16, 24, 32)
    fusion_widths: tuple = (32, 48)
    decoder_widths: tuple = (48, 32, 24, 16, 16)
    # task
    task: str = "classification"
    num_classes: int = 5
    ignore_label: int = 255
    # geospatial attention
    variant: str = "full"
    ablation: Optional[tuple] = None  # None -> the variant's default input set
    dist_scale: float = 1.0
    attention_init_scale: float = 0.05
    # training
    seed: int = 0
    epochs: int = 25
    batch_size: int = 4
    lr: float = 1e-4
    gamma: float = 0.96
    # paths (CLI flags take precedence)
    data_dir: str = ""
    out_dir: str = ""

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------------
    @property
    def inputs(self) -> tuple[str, ...]:
        """Attention input groups in canonical order (empty for ``remote``)."""
        if self.ablation is None:
            if self.variant == "remote":
                return ()
            if self.variant == "proximate":
                return tuple(k for k in ga.INPUT_ORDER if k != "overhead_pool")
            return ga.INPUT_ORDER
        return tuple(k for k in ga.INPUT_ORDER if k in self.ablation)

    @property
    def attention_width(self) -> int:
        return sum(ga.INPUT_WIDTHS[k] for k in self.inputs)

    @property
    def uses_panoramas(self) -> bool:
        return self.variant != "remote"

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.ablation is not None:
            unknown = set(self.ablation) - ga.ALL_INPUTS
            if unknown:
                raise ConfigError(f"unknown ablation inputs {sorted(unknown)}")
            if self.variant == "remote" and self.ablation:
                raise ConfigError("the remote variant uses no panoramas; ablation inputs "
                                  f"{sorted(self.ablation)} contradict it")
            if self.variant != "remote" and not self.ablation:
                raise ConfigError(f"variant {self.variant!r} needs at least one attention input")
            if self.variant == "proximate" and "overhead_pool" in self.ablation:
                raise ConfigError("the proximate variant has no overhead features to pool")
        if len(self.overhead_widths) != 3:
            raise ConfigError("overhead_widths needs three stages")
        if len(self.pano_widths) != 4:
            raise ConfigError("pano_widths needs four stages")
        if len(self.fusion_widths) != 2:
            raise ConfigError("fusion_widths needs two blocks")
        if len(self.decoder_widths) != 5:
            raise ConfigError("decoder_widths needs five levels")
        if self.image_px % 32:
            raise ConfigError(f"image_px {self.image_px} must be divisible by 32")
        if self.grid != self.image_px // 8:
            raise ConfigError(f"grid {self.grid} must equal image_px/8 = {self.image_px // 8} "
                              "to align with the stride-8 overhead features")
        if self.pano_h < 16 or self.pano_w < 32:
            raise ConfigError("panorama must be at least 16 x 32 pixels")
        if not 0 <= self.crop_deg < 90:
            raise ConfigError("crop_deg must lie in [0, 90)")
        for name in ("epochs", "batch_size", "num_panos", "pano_channels", "num_classes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.task == "classification" and self.num_classes < 2:
            raise ConfigError("classification needs at least two classes")

    @property
    def out_channels(self) -> int:
        return self.num_classes if self.task == "classification" else 2

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    # ------------------------------------------------------------------
    # serialization
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name), f.name)}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["ablation"] = None if self.ablation is None else sorted(self.ablation)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name in d:
                v = d[f.name]
                kw[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)


_TUPLE_FIELDS = {"overhead_widths", "pano_widths", "fusion_widths", "decoder_widths"}


def _format(value, name) -> str:
    if name == "ablation":
        if value is None:
            return "default"
        return ",".join(k for k in ga.INPUT_ORDER if k in value) or "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(name: str, text: str, kind, lineno: int):
    try:
        if name == "ablation":
            if text in ("default", ""):
                return None
            if text == "none":
                return ()
            items = tuple(s.strip() for s in text.split(",") if s.strip())
            aliases = {"pano": "pano_pool", "overhead": "overhead_pool", "theta": "orient", "d": "dist"}
            return tuple(aliases.get(s, s) for s in items)
        if name in _TUPLE_FIELDS:
            return tuple(int(s) for s in text.split(","))
        if kind is int or kind == "int":
            return int(text)
        if kind is float or kind == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"line {lineno}: bad value for {name!r}: {text!r}") from exc


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, value, fields[key], lineno)
    base = base or RunConfig()
    try:
        return dataclasses.replace(base, **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:  # pragma: no cover - defensive
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)


# ----------------------------------------------------------------------------
# presets

def desk_config(**kw) -> RunConfig:
    """Desk-scale defaults used by the synthetic benchmark."""
    base = RunConfig(lr=2e-3, dist_scale=0.02, epochs=15)
    return base.replace(**kw)


def full_scale_config(**kw) -> RunConfig:
    """Full-scale widths: 256 px overhead, 32x32 grid, 128x500 panoramas (no pretrained weights)."""
    base = RunConfig(
        image_px=256, grid=32, pano_channels=128, pano_h=128, pano_w=500,
        overhead_widths=(48, 32, 56), pano_widths=(64, 256, 512, 1024),
        fusion_widths=(160, 448), decoder_widths=(448, 160, 56, 88, 88),
        num_classes=13, num_panos=1, batch_size=1)
    return base.replace(**kw)


# attention-input rows of the ablation study (panorama / overhead / geometry)
ABLATION_ROWS = {
    "pano": ("pano_pool",),
    "overhead": ("overhead_pool",),
    "dist": ("dist",),
    "orient": ("orient",),
    "geometry": ("dist", "orient"),
    "pano+geometry": ("pano_pool", "dist", "orient"),
    "overhead+geometry": ("overhead_pool", "dist", "orient"),
    "full": ("pano_pool", "overhead_pool", "dist", "orient"),
}
