"""Run configuration: one dataclass, one flat text format.

The file format is UTF-8 lines of ``key = value`` with ``#`` comments.
Every field of TrainConfig is a key; unknown keys are errors (they are
always typos).  Serialization writes every field, so parse(serialize(c))
reproduces c exactly and a config embedded in a checkpoint rebuilds the
same model.
"""

from __future__ import annotations

from dataclasses import dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # model
    num_classes: int = 4
    widths: tuple = (16, 32, 64, 64, 64)
    c1: int = 16  # aggregation output width; kept narrow so the context
    # channels do not drown the backbone features in the concatenated head
    k: int = 11
    use_context_prior: bool = True

    # optimization
    crop: int = 32
    batch_size: int = 8
    total_iterations: int = 2000
    base_lr: float = 0.02
    poly_power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4

    # loss weights
    lambda_s: float = 1.0
    lambda_a: float = 0.4
    lambda_p: float = 1.0
    lambda_u: float = 1.0
    lambda_g: float = 1.0

    # data
    seed: int = 0
    scene_size: int = 32
    shapes_per_image: int = 2
    noise_std: float = 0.015
    shadow_prob: float = 0.1
    min_shape: int = 12
    max_shape: int = 24
    flip_prob: float = 0.5
    aug_scales: tuple = (0.5, 0.75, 1.0, 1.5, 1.75, 2.0)
    val_scenes: int = 64

    # evaluation: upscale-only averaging, because at a 32 px scene the
    # stride-8 feature grid is 4x4 and boundary precision comes almost
    # entirely from evaluating enlarged copies
    eval_scales: tuple = (2.0, 2.5, 3.0)
    eval_flip: bool = True

    # bookkeeping
    log_every: int = 1
    eval_every: int = 500
    checkpoint_every: int = 500

    def validate(self) -> None:
        if self.crop % 8 or self.scene_size % 8:
            raise ConfigError("crop and scene_size must be divisible by 8")
        if len(self.widths) != 5:
            raise ConfigError("widths needs exactly 5 entries")
        for key in ("base_lr", "momentum", "poly_power"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be non-negative")
        if self.base_lr == 0:
            raise ConfigError("base_lr must be positive")
        if self.batch_size < 1 or self.total_iterations < 0:
            raise ConfigError("batch_size >= 1 and total_iterations >= 0 required")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be at least 2")
        if self.k % 2 == 0:
            raise ConfigError("k must be odd")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(text: str, template):
    if isinstance(template, bool):
        low = text.lower()
        if low not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {text!r}")
        return low == "true"
    if isinstance(template, int):
        return int(text)
    if isinstance(template, float):
        return float(text)
    if isinstance(template, tuple):
        elem = template[0] if template else 0.0
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(_parse_value(p, elem) for p in parts)
    return text


def serialize_config(cfg: TrainConfig) -> str:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> TrainConfig:
    cfg = TrainConfig()
    known = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _parse_value(value, known[key]))
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key}: {e}") from None
    cfg.validate()
    return cfg


def load_config(path: str) -> TrainConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())
