"""Experiment configuration: parsing, validation and serialization.

A configuration is one JSON document::

    {
      "distribution": {"kind": "explicit", "values": [...], "probs": [...]},
      "mechanism": {"kind": "welfare_extraction", "eps": 0.1},
      "learner": {"kind": "MWU", "feedback": "full"},
      "engine": {"T": 100000, "trials": 20, "mode": "sampled", "seed": 0},
      "output": {"series": true, "plots": true},
      "experiments": [{"scenario": "...", "learner": {...}}, ...]
    }

Each entry of ``experiments`` overrides whole sections of the base; without
the key the base itself is the only experiment.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .core import ArmSchedule, ValueDistribution, equal_revenue_truncated, sec3_example
from .learners import KINDS, LearnerSpec
from . import mechanisms as mech


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _get(d: dict, key: str, path: str, default=..., types=None):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}", "missing")
        return default
    val = d[key]
    if types is None:
        return val
    names = {bool: "a boolean", int: "an integer", str: "a string", list: "a list"}
    want = names.get(types, "a number")
    if isinstance(val, bool) and types is not bool:
        raise ConfigError(f"{path}.{key}", f"expected {want}")
    if not isinstance(val, types):
        raise ConfigError(f"{path}.{key}", f"expected {want}")
    return val


def _check_keys(d: dict, allowed: set, path: str):
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}", "unknown field")


_NUM = (int, float)


@dataclass
class DistributionConfig:
    kind: str = "sec3"
    values: Optional[list] = None
    probs: Optional[list] = None
    value: Optional[float] = None
    H: Optional[float] = None
    m: Optional[int] = None
    scale: Optional[float] = None

    KINDS = ("sec3", "explicit", "point", "erc")

    @classmethod
    def from_dict(cls, d: Any, path="distribution") -> "DistributionConfig":
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        kind = _get(d, "kind", path, "explicit" if "values" in d else ..., str)
        if kind not in cls.KINDS:
            raise ConfigError(f"{path}.kind", f"must be one of {cls.KINDS}")
        if kind == "sec3":
            _check_keys(d, {"kind"}, path)
            cfg = cls(kind)
        elif kind == "explicit":
            _check_keys(d, {"kind", "values", "probs", "scale"}, path)
            vals = _get(d, "values", path, types=list)
            probs = _get(d, "probs", path, types=list)
            for key, seq in (("values", vals), ("probs", probs)):
                for k, x in enumerate(seq):
                    if not isinstance(x, _NUM) or isinstance(x, bool):
                        raise ConfigError(f"{path}.{key}[{k}]", "expected a number")
            scale = _get(d, "scale", path, None, _NUM)
            cfg = cls(kind, values=[float(x) for x in vals], probs=[float(x) for x in probs],
                      scale=None if scale is None else float(scale))
        elif kind == "point":
            _check_keys(d, {"kind", "value"}, path)
            cfg = cls(kind, value=float(_get(d, "value", path, types=_NUM)))
        else:
            _check_keys(d, {"kind", "H", "m"}, path)
            m = _get(d, "m", path, types=int)
            cfg = cls(kind, H=float(_get(d, "H", path, types=_NUM)), m=m)
        try:
            cfg.build()
        except ValueError as exc:
            raise ConfigError(path, str(exc)) from None
        return cfg

    def build(self, normalize: bool = True) -> ValueDistribution:
        """The distribution, by default mapped onto the [0, 1] scale used by the simulator."""
        if self.kind == "sec3":
            d = sec3_example()
        elif self.kind == "explicit":
            d = ValueDistribution(tuple(self.values), tuple(self.probs), self.scale or 1.0)
        elif self.kind == "point":
            d = ValueDistribution.point(self.value)
        else:
            d = equal_revenue_truncated(self.H, self.m)
        return d.normalized() if normalize else d

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class MechanismConfig:
    kind: str = "myerson_posted"
    eps: Optional[Any] = None  # float, or "auto" for mbrev
    gamma: Optional[float] = None
    price: Optional[float] = None
    prior_dependent: bool = False
    path: Optional[str] = None

    KINDS = ("myerson_posted", "posted", "example_arbitrary", "example_critical", "welfare_extraction",
             "mbrev", "nonmonotone", "file")
    FIELDS = {
        "myerson_posted": set(), "posted": {"price"}, "example_arbitrary": set(), "example_critical": set(),
        "welfare_extraction": {"eps", "prior_dependent"}, "mbrev": {"eps"}, "nonmonotone": {"eps", "gamma"},
        "file": {"path"},
    }

    @classmethod
    def from_dict(cls, d: Any, path="mechanism") -> "MechanismConfig":
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        kind = _get(d, "kind", path, types=str)
        if kind not in cls.KINDS:
            raise ConfigError(f"{path}.kind", f"must be one of {cls.KINDS}")
        _check_keys(d, {"kind"} | cls.FIELDS[kind], path)
        cfg = cls(kind)
        if kind == "posted":
            cfg.price = float(_get(d, "price", path, types=_NUM))
            if not 0 <= cfg.price <= 1:
                raise ConfigError(f"{path}.price", "must lie in [0, 1]")
        if kind in ("welfare_extraction", "nonmonotone"):
            cfg.eps = float(_get(d, "eps", path, types=_NUM))
            if not 0 < cfg.eps < 1:
                raise ConfigError(f"{path}.eps", "must lie in (0, 1)")
        if kind == "welfare_extraction":
            cfg.prior_dependent = bool(_get(d, "prior_dependent", path, False, bool))
        if kind == "mbrev":
            eps = _get(d, "eps", path, "auto")
            if eps != "auto":
                if not isinstance(eps, _NUM) or eps < 0:
                    raise ConfigError(f"{path}.eps", "must be a non-negative number or 'auto'")
                eps = float(eps)
            cfg.eps = eps
        if kind == "nonmonotone":
            cfg.gamma = float(_get(d, "gamma", path, types=_NUM))
            if not cfg.gamma > 0:
                raise ConfigError(f"{path}.gamma", "must be positive")
        if kind == "file":
            cfg.path = str(_get(d, "path", path, types=str))
        return cfg

    def build(self, dist: ValueDistribution, T: int) -> ArmSchedule:
        k = self.kind
        if k == "myerson_posted":
            return mech.myerson_posted(dist, T)
        if k == "posted":
            return mech.posted_price(self.price, T)
        if k == "example_arbitrary":
            return mech.example_arbitrary(T)
        if k == "example_critical":
            return mech.example_critical(T)
        if k == "welfare_extraction":
            return mech.welfare_extraction(self.eps, T, dist, self.prior_dependent)
        if k == "mbrev":
            eps = self.eps
            if eps == "auto":
                gap = float(np.min(np.diff(dist.values))) if dist.m > 1 else 1.0
                eps = min(0.01, 0.5 * gap)
            return mech.mbrev_mechanism(dist, eps, T)
        if k == "nonmonotone":
            return mech.nonmonotone_full_welfare(dist, self.eps, self.gamma, T)
        with open(self.path) as fh:
            sched = ArmSchedule.from_dict(json.load(fh))
        if sched.horizon != T:
            raise ValueError(f"schedule file has horizon {sched.horizon}, engine.T is {T}")
        return sched

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        for f in self.FIELDS[self.kind]:
            d[f] = getattr(self, f)
        return d


@dataclass
class EngineConfig:
    T: int = 10_000
    trials: int = 1
    mode: str = "expectation"
    seed: int = 0

    @classmethod
    def from_dict(cls, d: Any, path="engine") -> "EngineConfig":
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        _check_keys(d, {"T", "trials", "mode", "seed"}, path)
        cfg = cls(T=_get(d, "T", path, 10_000, int), trials=_get(d, "trials", path, 1, int),
                  mode=_get(d, "mode", path, "expectation", str), seed=_get(d, "seed", path, 0, int))
        if cfg.T < 1:
            raise ConfigError(f"{path}.T", "must be positive")
        if cfg.trials < 1:
            raise ConfigError(f"{path}.trials", "must be positive")
        if cfg.mode not in ("expectation", "sampled"):
            raise ConfigError(f"{path}.mode", "must be 'expectation' or 'sampled'")
        if cfg.seed < 0:
            raise ConfigError(f"{path}.seed", "must be non-negative")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class OutputConfig:
    series: bool = False
    plots: bool = False
    schedule: bool = False
    series_bins: int = 200

    @classmethod
    def from_dict(cls, d: Any, path="output") -> "OutputConfig":
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        _check_keys(d, {"series", "plots", "schedule", "series_bins"}, path)
        cfg = cls(series=_get(d, "series", path, False, bool), plots=_get(d, "plots", path, False, bool),
                  schedule=_get(d, "schedule", path, False, bool),
                  series_bins=_get(d, "series_bins", path, 200, int))
        if cfg.series_bins < 1:
            raise ConfigError(f"{path}.series_bins", "must be positive")
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


def learner_from_dict(d: Any, path="learner") -> LearnerSpec:
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    _check_keys(d, {"kind", "feedback", "eps", "gamma", "conservative", "inner"}, path)
    kind = _get(d, "kind", path, types=str)
    if kind not in KINDS:
        raise ConfigError(f"{path}.kind", f"must be one of {KINDS}")
    feedback = _get(d, "feedback", path, "bandit" if kind == "EXP3" else "full", str)
    eps = _get(d, "eps", path, None, _NUM)
    gamma = _get(d, "gamma", path, None, _NUM)
    try:
        return LearnerSpec(kind, feedback, None if eps is None else float(eps),
                           None if gamma is None else float(gamma),
                           bool(_get(d, "conservative", path, False, bool)), _get(d, "inner", path, None, str))
    except ValueError as exc:
        raise ConfigError(path, str(exc)) from None


SECTIONS = ("distribution", "mechanism", "learner", "engine", "output")


@dataclass
class Experiment:
    scenario: str
    distribution: DistributionConfig
    mechanism: MechanismConfig
    learner: LearnerSpec
    engine: EngineConfig
    output: OutputConfig

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "distribution": self.distribution.to_dict(),
                "mechanism": self.mechanism.to_dict(), "learner": self.learner.to_dict(),
                "engine": self.engine.to_dict(), "output": self.output.to_dict()}


@dataclass
class Config:
    name: str
    experiments: list[Experiment] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "experiments": [e.to_dict() for e in self.experiments]}


def _parse_one(d: dict, path: str, scenario: str) -> Experiment:
    for key in ("distribution", "mechanism", "learner"):
        if key not in d:
            raise ConfigError(f"{path}.{key}", "missing")
    return Experiment(
        scenario=scenario,
        distribution=DistributionConfig.from_dict(d["distribution"], f"{path}.distribution"),
        mechanism=MechanismConfig.from_dict(d["mechanism"], f"{path}.mechanism"),
        learner=learner_from_dict(d["learner"], f"{path}.learner"),
        engine=EngineConfig.from_dict(d.get("engine", {}), f"{path}.engine"),
        output=OutputConfig.from_dict(d.get("output", {}), f"{path}.output"),
    )


def parse_config(doc: Any, name: str = "config") -> Config:
    """Validate a configuration document and expand its experiment list."""
    if not isinstance(doc, dict):
        raise ConfigError("$", "configuration must be a JSON object")
    _check_keys(doc, set(SECTIONS) | {"experiments", "name"}, "$")
    name = doc.get("name", name)
    if "experiments" not in doc:
        return Config(name, [_parse_one(doc, "$", name)])
    exps = doc["experiments"]
    if not isinstance(exps, list):
        raise ConfigError("$.experiments", "expected a list")
    out = []
    for k, over in enumerate(exps):
        path = f"$.experiments[{k}]"
        if not isinstance(over, dict):
            raise ConfigError(path, "expected an object")
        _check_keys(over, set(SECTIONS) | {"scenario"}, path)
        merged = {s: copy.deepcopy(doc[s]) for s in SECTIONS if s in doc}
        for s in SECTIONS:
            if s in over:
                merged[s] = over[s]
        scenario = over.get("scenario", f"{name}-{k}")
        if not isinstance(scenario, str):
            raise ConfigError(f"{path}.scenario", "expected a string")
        out.append(_parse_one(merged, path, scenario))
    return Config(name, out)


def load_config(path: str | Path) -> Config:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("$", f"cannot read {p}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON: {exc}") from None
    return parse_config(doc, p.stem)


def dump_config(cfg: Config) -> dict:
    """Serialized form that :func:`parse_config` maps back to the same settings."""
    return {"name": cfg.name, "experiments": [e.to_dict() for e in cfg.experiments]}
