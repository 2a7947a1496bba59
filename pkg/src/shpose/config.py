"""Flat ``section.key = value`` run configuration.

Example::

    # desk-scale preset
    model.num_stacks = 2
    model.channels = 64
    train.augmentations = random_crop, color_dither, rotation
    run.seed = 0

Blank lines and ``#`` comments are ignored. Later assignments win, and
command-line overrides are applied after the file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .decode import DECODER_MODES, DEFAULT_SHARPNESS
from .model import ModelConfig
from .pipeline import PIPELINE_MODES
from .training.loop import TrainConfig
from .training.synthetic import SyntheticSceneSpec

SECTIONS = ("run", "model", "train", "synth", "data", "predict", "eval", "bench")


class ConfigError(ValueError):
    pass


def parse_text(text: str, source: str = "<config>") -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        section = key.split(".", 1)[0]
        if "." not in key or section not in SECTIONS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}; sections are {SECTIONS}")
        values[key] = value
    return values


def load_file(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_text(path.read_text(), str(path))


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, (tuple, frozenset, set, list)):
        items = [v.strip() for v in value.split(",") if v.strip()]
        if isinstance(default, (frozenset, set)):
            return frozenset(items)
        sample = next(iter(default), "")
        return tuple(_coerce(v, sample) for v in items)
    if default is None:
        if value.lower() in ("", "none", "auto"):
            return None
        try:
            return int(value)
        except ValueError:
            return value
    return value


def _build(cls, values: dict[str, str], section: str, **fixed):
    kwargs = dict(fixed)
    defaults = {f.name: _default_of(f) for f in dataclasses.fields(cls)}
    prefix = section + "."
    for key, raw in values.items():
        if not key.startswith(prefix):
            continue
        name = key[len(prefix):]
        if name not in defaults:
            continue
        if raw.lower() in ("none", "auto"):
            kwargs[name] = None
            continue
        try:
            kwargs[name] = _coerce(raw, defaults[name])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] settings: {exc}") from None


def _default_of(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


@dataclass
class PredictSettings:
    pipeline: str = "end_to_end"
    decoder: str = "integral"
    detector: str = "none"
    detector_margin: float = 0.0
    sharpness: float = DEFAULT_SHARPNESS
    weights: str = ""

    def __post_init__(self):
        if self.pipeline not in PIPELINE_MODES:
            raise ConfigError(f"predict.pipeline must be one of {PIPELINE_MODES}, got {self.pipeline!r}")
        if self.decoder not in DECODER_MODES:
            raise ConfigError(f"predict.decoder must be one of {DECODER_MODES}, got {self.decoder!r}")
        if self.detector not in ("none", "gt_box", "full_image"):
            raise ConfigError(f"predict.detector must be none, gt_box or full_image, got {self.detector!r}")


@dataclass
class SynthSettings:
    count: int = 2000


@dataclass
class DataSettings:
    train: str = ""
    eval: str = ""


@dataclass
class EvalSettings:
    alphas: tuple = (0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5)
    predictions: str = ""
    limit: int = 0


@dataclass
class BenchSettings:
    grid: tuple = ("sh21", "sh41", "sh81")
    weights_dir: str = ""
    random_init: bool = False
    warmup: int = 2
    reps: int = 10
    rounds: int = 3
    limit: int = 0


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "out"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scene: SyntheticSceneSpec = field(default_factory=SyntheticSceneSpec)
    synth: SynthSettings = field(default_factory=SynthSettings)
    data: DataSettings = field(default_factory=DataSettings)
    predict: PredictSettings = field(default_factory=PredictSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    raw: dict = field(default_factory=dict)


def build_run_config(values: dict[str, str], seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    run_seed = int(values.get("run.seed", 0)) if seed is None else seed
    return RunConfig(
        seed=run_seed,
        out=out if out is not None else values.get("run.out", "out"),
        model=_build(ModelConfig, values, "model"),
        train=_build(TrainConfig, values, "train", seed=run_seed),
        scene=_build(SyntheticSceneSpec, values, "synth"),
        synth=_build(SynthSettings, values, "synth"),
        data=_build(DataSettings, values, "data"),
        predict=_build(PredictSettings, values, "predict"),
        eval=_build(EvalSettings, values, "eval"),
        bench=_build(BenchSettings, values, "bench"),
        raw=dict(values),
    )


def load_run_config(path=None, overrides=(), seed: Optional[int] = None, out: Optional[str] = None) -> RunConfig:
    values = load_file(path) if path else {}
    for item in overrides:
        values.update(parse_text(item, "--set"))
    return build_run_config(values, seed, out)
