"""Run configuration files (TOML or JSON) and command-line overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datasets import Sampler, gaussian_pair
from .errors import InvalidArgument
from .schedule import GammaSchedule, schedule_from_config
from .trainer import TrainConfig

DEFAULT_SCHEDULE = {"type": "symmetric", "n": 20, "gamma_min": 1.0, "gamma_max": 10.0, "normalize": True}


@dataclass
class PretrainSpec:
    steps: int = 5000
    batch_size: int = 128
    lr: float = 1e-3
    dual: bool = True


@dataclass
class EvalSpec:
    n_eval_times: int = 9
    n_paths: int = 10_000
    seed: int = 0


@dataclass
class RunConfig:
    data: dict = field(default_factory=lambda: gaussian_pair(2)[0].to_config())
    prior: dict = field(default_factory=lambda: gaussian_pair(2)[1].to_config())
    schedule: dict = field(default_factory=lambda: dict(DEFAULT_SCHEDULE))
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainSpec = field(default_factory=PretrainSpec)
    eval: EvalSpec = field(default_factory=EvalSpec)
    init_backward: str | None = None
    init_forward: str | None = None
    output_dir: str = "runs/default"

    def samplers(self):
        return Sampler.from_config(self.data), Sampler.from_config(self.prior)

    def gamma_schedule(self) -> GammaSchedule:
        return schedule_from_config(self.schedule)

    def oracle_a(self):
        """Shift ``a`` when the boundaries are N(a, I) and N(-a, I), else None."""
        data, prior = self.samplers()
        if data.kind != "shifted_gaussian" or prior.kind != "shifted_gaussian" or data.d != prior.d:
            return None
        if not np.allclose(data.shift, -prior.shift):
            return None
        sched = self.gamma_schedule()
        if not sched.is_normalized:
            return None
        return data.shift

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "prior": self.prior,
            "schedule": self.schedule,
            "train": self.train.to_dict(),
            "pretrain": dataclasses.asdict(self.pretrain),
            "eval": dataclasses.asdict(self.eval),
            "init_backward": self.init_backward,
            "init_forward": self.init_forward,
            "output_dir": self.output_dir,
        }

    def hash(self) -> str:
        """Digest of everything that affects results; the output location is left out."""
        payload = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        blob = json.dumps(_jsonable(payload), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self):
        data, prior = self.samplers()
        if data.d != prior.d:
            raise InvalidArgument("data and prior dimensions differ")
        sched = self.gamma_schedule()
        if self.train.objective.needs_normalized_schedule and not sched.is_normalized:
            raise InvalidArgument(f"objective {self.train.objective.value} needs a normalized schedule")
        for p in (self.init_backward, self.init_forward):
            if p is not None and not os.path.exists(p):
                raise FileNotFoundError(p)
        return self


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    return v


def _section(cls, raw, name):
    raw = dict(raw or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise InvalidArgument(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**raw)
    except TypeError as exc:
        raise InvalidArgument(f"[{name}]: {exc}") from None


def run_config_from_dict(raw: dict) -> RunConfig:
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(RunConfig)} | {"objective"}
    unknown = set(raw) - known
    if unknown:
        raise InvalidArgument(f"unknown top-level keys: {sorted(unknown)}")
    train_raw = dict(raw.pop("train", {}) or {})
    if "objective" in raw:
        train_raw["objective"] = raw.pop("objective")
    cfg = RunConfig(
        train=TrainConfig.from_dict(train_raw),
        pretrain=_section(PretrainSpec, raw.pop("pretrain", None), "pretrain"),
        eval=_section(EvalSpec, raw.pop("eval", None), "eval"),
    )
    for key, value in raw.items():
        setattr(cfg, key, value)
    for key in ("data", "prior"):
        Sampler.from_config(getattr(cfg, key))
    schedule_from_config(cfg.schedule)
    return cfg


def load_run_config(path) -> RunConfig:
    """Read a TOML (``.toml``) or JSON run configuration."""
    with open(path, "rb") as fh:
        raw_bytes = fh.read()
    try:
        if str(path).endswith(".toml"):
            raw = tomllib.loads(raw_bytes.decode())
        else:
            raw = json.loads(raw_bytes)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise InvalidArgument(f"{path}: {exc}") from None
    return run_config_from_dict(raw)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Set dotted keys such as ``train.lr`` or ``init_backward``; ``None`` values are skipped."""
    for key, value in overrides.items():
        if value is None:
            continue
        target = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            target = getattr(target, p)
        if not hasattr(target, parts[-1]):
            raise InvalidArgument(f"unknown config field {key!r}")
        setattr(target, parts[-1], value)
    # re-run validation of the training section after overrides
    cfg.train = TrainConfig.from_dict(cfg.train.to_dict())
    return cfg


def default_run_config() -> RunConfig:
    return RunConfig()
