"""Flat ``section.key=value`` run configuration.

Sections are ``world.``, ``model.``, ``optim.`` and ``run.``. Blank lines and
``#`` comments are ignored; unknown keys are rejected by name.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .synthdata import STATES, WorldConfig

ARMS = ("MV", "MV+T", "MV+G", "MV+T+G", "MV+T+G+CT", "MV+T+I+G+CT")
ARM_ALIASES = {"MV+T+G(add)": "MV+T+G"}


def canonical_arm(name: str) -> str:
    arm = ARM_ALIASES.get(name.strip(), name.strip())
    if arm not in ARMS:
        raise ConfigError(f"unknown ablation arm {name!r}; choose from {', '.join(ARMS)}")
    return arm


@dataclass(frozen=True)
class ModelConfig:
    width: int = 32
    heads: int = 4
    ffn: int = 64
    patch: int = 4
    image_layers: int = 2
    text_layers: int = 1
    ct_layers: int = 2
    decoder_layers: int = 2
    states: int = len(STATES)
    max_report_len: int = 48
    interp_warmup: int = 300
    arm: str = "MV+T+I+G+CT"

    def __post_init__(self):
        for name in ("width", "heads", "ffn", "patch", "image_layers", "decoder_layers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be >= 1")
        for name in ("text_layers", "ct_layers", "interp_warmup"):
            if getattr(self, name) < 0:
                raise ConfigError(f"model.{name} must be >= 0")
        if self.width % self.heads:
            raise ConfigError("model.width must be divisible by model.heads")
        if self.states != len(STATES):
            raise ConfigError(f"model.states must be {len(STATES)} (one per report template state)")
        if self.max_report_len < 2:
            raise ConfigError("model.max_report_len must be >= 2")
        object.__setattr__(self, "arm", canonical_arm(self.arm))

    @property
    def uses_text(self) -> bool:
        return "T" in self.arm.split("+")

    @property
    def uses_graph(self) -> bool:
        return "G" in self.arm.split("+")

    @property
    def uses_ct(self) -> bool:
        return "CT" in self.arm.split("+")

    @property
    def uses_interpreter(self) -> bool:
        return "I" in self.arm.split("+")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("optim.lr must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("optim.beta1/beta2 must be in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("optim.eps must be > 0")


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    steps: int = 2000
    batch_size: int = 8
    eval_every: int = 250
    log_every: int = 50
    train_limit: int = 0
    eval_limit: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    arms: tuple[str, ...] = ("MV", "MV+T", "MV+G", "MV+T+G", "MV+T+G+CT", "MV+T+I+G+CT")
    data: str = "data"
    out: str = "runs"

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("run.steps must be >= 0 and run.batch_size >= 1")
        if self.eval_every < 0 or self.log_every < 1:
            raise ConfigError("run.eval_every must be >= 0 and run.log_every >= 1")
        if self.train_limit < 0 or self.eval_limit < 0:
            raise ConfigError("run.train_limit and run.eval_limit must be >= 0")
        object.__setattr__(self, "arms", tuple(canonical_arm(a) for a in self.arms))


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    run: RunSection = field(default_factory=RunSection)

    def replace(self, section: str, **changes) -> "RunConfig":
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})

    def to_text(self) -> str:
        lines = []
        for section in ("world", "model", "optim", "run"):
            obj = getattr(self, section)
            for f in fields(obj):
                lines.append(f"{section}.{f.name}={_format(getattr(obj, f.name), f.name)}")
        return "\n".join(lines) + "\n"


_SECTIONS = {"world": WorldConfig, "model": ModelConfig, "optim": OptimConfig, "run": RunSection}


def _format(value, name: str) -> str:
    if name == "split":
        return "/".join(map(str, value))
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(cls, name: str, raw: str):
    default = {f.name: f.default for f in fields(cls)}[name]
    try:
        if name == "split":
            return tuple(int(x) for x in raw.split("/"))
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            return tuple(int(x) for x in items) if name == "seeds" else tuple(items)
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r} ({exc})") from None


def parse_pairs(text: str) -> dict[str, dict[str, object]]:
    values: dict[str, dict[str, object]] = {s: {} for s in _SECTIONS}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        section, _, name = key.partition(".")
        cls = _SECTIONS.get(section)
        if cls is None or name not in {f.name for f in fields(cls)}:
            raise ConfigError(f"unknown config key {key!r}")
        values[section][name] = _convert(cls, name, raw)
    return values


def parse_config(text: str) -> RunConfig:
    values = parse_pairs(text)
    return RunConfig(**{s: cls(**values[s]) for s, cls in _SECTIONS.items()})


def parse_world(text: str) -> WorldConfig:
    values = parse_pairs(text)
    extra = [f"{s}.{k}" for s in ("model", "optim", "run") for k in values[s]]
    if extra:
        raise ConfigError(f"world file contains non-world keys: {extra}")
    return WorldConfig(**values["world"])


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text())
