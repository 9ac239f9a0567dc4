"""Training configuration and its INI-style file format.

Three sections are recognised; unknown sections or keys are errors::

    [train]
    task = classification          ; or segmentation
    learning_rate = 0.005
    weight_decay = 1e-5
    scheduler_step = 10
    scheduler_gamma = 1
    batch_size = 32
    epochs = 100
    lambda = 5
    seed = 0
    checkpoint_every = 10

    [model]
    conv = sfconv                  ; default kind for every conv layer
    kinds = full,sfconv,sfconv,sfconv   ; optional per-layer override
    widths = 8,16,16,32
    kernel = 3
    rank = 10

    [data]
    source = synthetic             ; or a dataset directory written by `synth`
    n_train = 96
    n_eval = 48
    seed = 1
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

TASKS = ("classification", "segmentation")

TASK_DEFAULTS = {
    "classification": dict(learning_rate=0.005, lam=5.0, batch_size=32, epochs=100,
                           widths=(8, 16, 16, 32)),
    "segmentation": dict(learning_rate=0.01, lam=10.0, batch_size=16, epochs=50,
                         widths=(8, 16, 32)),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    conv: str = "sfconv"
    kinds: tuple = ()
    widths: tuple = ()
    kernel: int = 3
    rank: int = 10

    def layer_kinds(self, n: int) -> tuple:
        if self.kinds:
            if len(self.kinds) != n:
                raise ConfigError(f"model.kinds lists {len(self.kinds)} layers, backbone has {n}")
            return tuple(self.kinds)
        return (self.conv,) * n


@dataclass(frozen=True)
class DataSpec:
    source: str = "synthetic"
    n_train: int = 96
    n_eval: int = 48
    seed: int = 1


@dataclass(frozen=True)
class TrainConfig:
    task: str = "classification"
    learning_rate: float = 0.005
    weight_decay: float = 1e-5
    scheduler_step: int = 10
    scheduler_gamma: float = 1.0
    batch_size: int = 32
    epochs: int = 100
    lam: float = 5.0
    seed: int = 0
    checkpoint_every: int = 10
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataSpec = field(default_factory=DataSpec)

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if min(self.learning_rate, self.weight_decay, self.scheduler_gamma, self.lam) < 0:
            raise ConfigError("rates, gamma and lambda must be non-negative")
        if self.batch_size < 1 or self.epochs < 1 or self.scheduler_step < 1:
            raise ConfigError("batch_size, epochs and scheduler_step must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        for kind in (self.model.conv,) + tuple(self.model.kinds):
            if kind not in ("full", "sfconv"):
                raise ConfigError(f"unknown conv kind {kind!r}")
        if self.model.kernel < 1 or self.model.rank < 1:
            raise ConfigError("kernel and rank must be positive")

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        """Published settings for ``task`` with keyword overrides."""
        if task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
        d = dict(TASK_DEFAULTS[task])
        widths = d.pop("widths")
        model = overrides.pop("model", ModelSpec(widths=widths))
        if not model.widths:
            model = dataclasses.replace(model, widths=widths)
        d.update(overrides)
        return cls(task=task, model=model, **d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    # --- text form -------------------------------------------------------

    def to_ini(self) -> str:
        m, d = self.model, self.data
        lines = [
            "[train]",
            f"task = {self.task}",
            f"learning_rate = {self.learning_rate!r}",
            f"weight_decay = {self.weight_decay!r}",
            f"scheduler_step = {self.scheduler_step}",
            f"scheduler_gamma = {self.scheduler_gamma!r}",
            f"batch_size = {self.batch_size}",
            f"epochs = {self.epochs}",
            f"lambda = {self.lam!r}",
            f"seed = {self.seed}",
            f"checkpoint_every = {self.checkpoint_every}",
            "",
            "[model]",
            f"conv = {m.conv}",
        ]
        if m.kinds:
            lines.append(f"kinds = {','.join(m.kinds)}")
        lines += [
            f"widths = {','.join(str(w) for w in m.widths)}",
            f"kernel = {m.kernel}",
            f"rank = {m.rank}",
            "",
            "[data]",
            f"source = {d.source}",
            f"n_train = {d.n_train}",
            f"n_eval = {d.n_eval}",
            f"seed = {d.seed}",
            "",
        ]
        return "\n".join(lines)


_TRAIN_KEYS = {
    "task": str, "learning_rate": float, "weight_decay": float, "scheduler_step": int,
    "scheduler_gamma": float, "batch_size": int, "epochs": int, "lambda": float,
    "seed": int, "checkpoint_every": int,
}
_MODEL_KEYS = {"conv": str, "kinds": "list", "widths": "ints", "kernel": int, "rank": int}
_DATA_KEYS = {"source": str, "n_train": int, "n_eval": int, "seed": int}


def _convert(section, key, raw, kind):
    try:
        if kind == "list":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        if kind == "ints":
            return tuple(int(s) for s in raw.split(",") if s.strip())
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}") from exc


def _section(parser, name, keys):
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in keys:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        out[key] = _convert(name, key, raw.strip(), keys[key])
    return out


def parse_config(text: str) -> TrainConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    unknown = set(parser.sections()) - {"train", "model", "data"}
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    train = _section(parser, "train", _TRAIN_KEYS)
    model = _section(parser, "model", _MODEL_KEYS)
    data = _section(parser, "data", _DATA_KEYS)
    task = train.pop("task", "classification")
    if "lambda" in train:
        train["lam"] = train.pop("lambda")
    spec = ModelSpec(**model)
    return TrainConfig.for_task(task, model=spec, data=DataSpec(**data), **train)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))
