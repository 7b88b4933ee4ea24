"""Run configuration: one JSON document fully determines an experiment."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

from ..simkernel import NS_PER_SEC
from ..td3 import TD3Config

MODES = ("rl_solo", "sentiment_solo", "indirect", "direct")


class ConfigError(Exception):
    """The configuration document is invalid or inconsistent."""


class DataError(Exception):
    """A referenced data file is missing or malformed."""


@dataclass(frozen=True)
class AgentParams:
    rl_interval_s: float = 30.0
    sentiment_interval_s: float = 60.0
    lot: int = 100
    value_offset_units: int = 1_000_000_000
    aggressiveness_ticks: int = 5
    jitter_frac: float = 0.1


@dataclass(frozen=True)
class FeedParams:
    backend: str = "template"  # "template" or "http"
    classifier: str = "lexicon"  # "lexicon" or "http"
    rate_per_minute: int = 100
    p_seen: float = 0.5
    sample_cap: int = 30
    predecessors: int = 10
    gen_url: Optional[str] = None
    gen_model: Optional[str] = None
    gen_system: Optional[str] = None
    gen_max_tokens: int = 256
    gen_temperature: float = 0.7
    classify_url: Optional[str] = None
    feed_file: Optional[str] = None  # pre-built JSONL archive; skips generation

    def __post_init__(self):
        if self.backend not in ("template", "http"):
            raise ConfigError(f"unknown feed backend {self.backend!r}")
        if self.classifier not in ("lexicon", "http"):
            raise ConfigError(f"unknown classifier {self.classifier!r}")
        if self.backend == "http" and not self.gen_url:
            raise ConfigError("feed backend 'http' requires gen_url")
        if self.classifier == "http" and not self.classify_url:
            raise ConfigError("classifier 'http' requires classify_url")


@dataclass(frozen=True)
class FlowParams:
    """Synthetic order-flow generator parameters (or a replay file)."""

    file: Optional[str] = None  # LOBSTER CSV; when set, generator params unused
    premarket_s: int = 300
    base_price_units: int = 2_235_000
    arrival_rate_hz: float = 4.0
    mean_order_size: int = 120
    p_execute: float = 0.22
    p_cancel: float = 0.28
    p_partial_cancel: float = 0.3
    p_improve: float = 0.15
    p_join: float = 0.3
    level_geometric_p: float = 0.3
    max_level_ticks: int = 30
    seed_levels: int = 20
    seed_orders_per_level: int = 3
    regime_dwell_mean_s: float = 240.0
    regime_drift_exec_bias: float = 0.22
    regime_drift_submit_bias: float = 0.12
    regime_size_multiplier: float = 1.7
    reversion_scale_units: int = 20_000
    reversion_strength: float = 0.1

    def __post_init__(self):
        if self.p_execute + self.p_cancel >= 1.0:
            raise ConfigError("p_execute + p_cancel must be < 1")
        if not 0 < self.level_geometric_p < 1:
            raise ConfigError("level_geometric_p must be in (0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str = "indirect"
    symbol: str = "SYNTH"
    seed: int = 1
    trials: int = 16
    workers: int = 0  # 0 = cpu count
    out_dir: str = "results"
    training_passes: int = 5
    in_sample_minutes: int = 60
    oos_gap_minutes: int = 0
    oos_minutes: int = 30
    open_s: int = 34_200  # 09:30
    record_trace: bool = False
    td3: TD3Config = field(default_factory=TD3Config)
    agents: AgentParams = field(default_factory=AgentParams)
    feed: FeedParams = field(default_factory=FeedParams)
    flow: FlowParams = field(default_factory=FlowParams)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        for name in ("training_passes", "in_sample_minutes", "oos_minutes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.oos_gap_minutes < 0:
            raise ConfigError("oos_gap_minutes must be >= 0")

    # -- derived simulation times (ns) --

    @property
    def open_ns(self) -> int:
        return self.open_s * NS_PER_SEC

    @property
    def premarket_open_ns(self) -> int:
        return self.open_ns - self.flow.premarket_s * NS_PER_SEC

    @property
    def in_sample_end_ns(self) -> int:
        return self.open_ns + self.in_sample_minutes * 60 * NS_PER_SEC

    @property
    def oos_start_ns(self) -> int:
        return self.in_sample_end_ns + self.oos_gap_minutes * 60 * NS_PER_SEC

    @property
    def oos_end_ns(self) -> int:
        return self.oos_start_ns + self.oos_minutes * 60 * NS_PER_SEC


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where} config: {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    data = dict(data)
    nested = {
        "td3": TD3Config,
        "agents": AgentParams,
        "feed": FeedParams,
        "flow": FlowParams,
    }
    kwargs = {}
    for key, cls in nested.items():
        if key in data:
            kwargs[key] = _build(cls, data.pop(key), key)
    kwargs.update(data)
    return _build(ExperimentConfig, kwargs, "experiment")


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return config_from_dict(data)
