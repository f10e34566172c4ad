"""JSON experiment configuration.

A config document has up to five sections, every key optional::

    {
      "train":   {"batch_size": 64, "n_critic": 5, "stage_one_steps": 3000,
                  "stage_two_steps": 2000, "hidden": [256, 256], "lr": 1e-4,
                  "encoder_lr": 1e-4, "beta1": 0.5, "beta2": 0.9, "adam_eps": 1e-8,
                  "seed": 0, "checkpoint_every": 0, "mi_enabled": true,
                  "refine_encoder_u": true, "debug_checks": false},
      "weights": {"gp": 10.0, "mi_discrete": 1.0, "mi_continuous": 0.1, "sigma_rec": 1.0},
      "prior":   {"z_dim": 8, "c_dim": 2, "K": 3, "continuous_law": "uniform", "tau": 0.67},
      "data":    {"shapes": ["square", "disk", "cross"], "grid": 8, "image_side": 32,
                  "sprite_size": 8},
      "eval":    {"seed": 1, "votes": 300, "samples_per_vote": 32, "n_elbo": 256, "n_mc": 4}
    }

Unknown keys and ill-typed values raise ``ConfigError`` naming the field.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import FactorSpec
from .distributions import PriorConfig
from .evaluation import EvalConfig
from .objectives import LossWeights
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: FactorSpec = field(default_factory=FactorSpec)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        t = dataclasses.asdict(self.train)
        weights, prior = t.pop("weights"), t.pop("prior")
        t["hidden"] = list(t["hidden"])
        d = dataclasses.asdict(self.data)
        d["shapes"] = list(d["shapes"])
        return {"train": t, "weights": weights, "prior": prior, "data": d,
                "eval": dataclasses.asdict(self.eval)}


def _coerce(path: str, value, hint):
    origin = typing.get_origin(hint)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if origin is tuple:
        (inner, _) = typing.get_args(hint)
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(_coerce(f"{path}[{i}]", v, inner) for i, v in enumerate(value))
    raise ConfigError(f"{path}: unsupported field type {hint}")  # pragma: no cover


def _build(cls, section: str, raw, skip=()):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object, got {type(raw).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(f"{section}.{k}", v, hints[k]) for k, v in raw.items()}
    return kwargs


def _make(cls, section, kwargs, **extra):
    try:
        return cls(**kwargs, **extra)
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


SECTIONS = ("train", "weights", "prior", "data", "eval")


def config_from_dict(doc) -> Config:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"config: unknown section(s) {', '.join(unknown)}")
    weights = _make(LossWeights, "weights", _build(LossWeights, "weights", doc.get("weights")))
    prior = _make(PriorConfig, "prior", _build(PriorConfig, "prior", doc.get("prior")))
    train_kw = _build(TrainConfig, "train", doc.get("train"), skip=("weights", "prior"))
    train = _make(TrainConfig, "train", train_kw, weights=weights, prior=prior)
    data = _make(FactorSpec, "data", _build(FactorSpec, "data", doc.get("data")))
    ev = _make(EvalConfig, "eval", _build(EvalConfig, "eval", doc.get("eval")))
    return Config(train, data, ev)


def parse_config(text: str) -> Config:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc)


def load_config(path) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
