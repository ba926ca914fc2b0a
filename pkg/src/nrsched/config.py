"""Experiment configuration: INI-style ``key = value`` sections with validated defaults.

Every section maps to a dataclass below; unknown sections or keys are errors.
``ExperimentConfig.to_ini()`` writes every key, so parse -> write -> parse is
the identity.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .neural import Arch
from .simcore import ResourceGridConfig, TrafficConfig
from .sortmdp import RewardNorms


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    env: str = "nr"  # nr | toysort
    td_policy: str = "qadra"  # round_robin | proportional_fair | qadra
    voip_first: bool = False
    seed: int = 0
    deterministic: bool = True
    out_dir: str = "runs/default"


@dataclass
class ScenarioSection:
    n_voip: int = 10
    full_buffer: bool = True
    voip_packet_bits: int = 320
    voip_period_ttis: int = 40
    voip_max_delay: float = 0.1
    # feature value reported as the full-buffer backlog (one full grid of bits)
    fb_saturation_bits: float = 16128.0


@dataclass
class GridSection:
    prbs_per_direction: int = 24
    bits_per_prb: int = 672
    pdcch_capacity: int = 8
    tti_duration: float = 0.0005
    bler: float = 0.01


@dataclass
class ToySortSection:
    list_len: int = 4
    max_value: int = 100
    eval_lists: int = 200


@dataclass
class RewardSection:
    omega: tuple = (1.0, 0.0)
    fb_norm: float = 200000.0
    voip_norm: float = 0.01


@dataclass
class PfSection:
    smoothing: float = 0.01
    floor: float = 1.0


@dataclass
class NetworkSection:
    enc_dense: tuple = (256, 128)
    enc_gru: tuple = (64, 32, 32)
    q_hidden: tuple = (512, 256, 128, 64)


@dataclass
class TrainingSection:
    total_ttis: int = 400000
    n_actors: int = 4
    sync_every: int = 10
    actor_ttis_per_learner_step: int = 4
    gamma: float = 0.99
    lr: float = 1e-4
    batch_size: int = 32
    replay_capacity: int = 131072
    warmup: int = 20000
    replay_mode: str = "prioritized"  # prioritized | uniform
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    target_mode: str = "double"  # double | vanilla
    target_period: int = 2500
    explore_start: float = 1.0
    explore_end: float = 0.4
    explore_horizon: int = 200000
    max_grad_norm: Optional[float] = None
    checkpoint_every: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class EvalSection:
    eval_ttis: int = 60000
    seed_offset: int = 1000
    # throughput percentiles are taken over non-overlapping windows of this many TTIs
    tpt_window_ttis: int = 40
    plots: bool = False


SECTIONS = {
    "run": RunSection,
    "scenario": ScenarioSection,
    "grid": GridSection,
    "toysort": ToySortSection,
    "reward": RewardSection,
    "pf": PfSection,
    "network": NetworkSection,
    "training": TrainingSection,
    "eval": EvalSection,
}

CHOICES = {
    ("run", "env"): ("nr", "toysort"),
    ("run", "td_policy"): ("round_robin", "proportional_fair", "qadra"),
    ("training", "replay_mode"): ("prioritized", "uniform"),
    ("training", "target_mode"): ("double", "vanilla"),
}


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    grid: GridSection = field(default_factory=GridSection)
    toysort: ToySortSection = field(default_factory=ToySortSection)
    reward: RewardSection = field(default_factory=RewardSection)
    pf: PfSection = field(default_factory=PfSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        self.validate()

    # ------------------------------------------------------------ derived objects
    def traffic_config(self) -> TrafficConfig:
        s = self.scenario
        return TrafficConfig(s.n_voip, s.full_buffer, s.voip_packet_bits, s.voip_period_ttis, s.voip_max_delay)

    def grid_config(self) -> ResourceGridConfig:
        return ResourceGridConfig(**dataclasses.asdict(self.grid))

    def reward_norms(self) -> RewardNorms:
        return RewardNorms(self.reward.fb_norm, self.reward.voip_norm)

    def arch(self) -> Arch:
        n = self.network
        return Arch(6, tuple(n.enc_dense), tuple(n.enc_gru), tuple(n.q_hidden))

    # ------------------------------------------------------------ validation
    def validate(self) -> None:
        for (sec, key), allowed in CHOICES.items():
            value = getattr(getattr(self, sec), key)
            if value not in allowed:
                raise ConfigError(f"[{sec}] {key} = {value!r}; expected one of {allowed}")
        try:
            self.traffic_config()
            self.grid_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        t = self.training
        positive = ("n_actors", "sync_every", "actor_ttis_per_learner_step", "batch_size", "replay_capacity")
        for key in positive:
            if getattr(t, key) <= 0:
                raise ConfigError(f"[training] {key} must be positive")
        if t.total_ttis < 0 or t.warmup < 0:
            raise ConfigError("[training] total_ttis and warmup must be >= 0")
        if not 0.0 <= t.gamma <= 1.0:
            raise ConfigError("[training] gamma must lie in [0, 1]")
        if not (0.0 < t.explore_end <= t.explore_start <= 1.0):
            raise ConfigError("[training] need 0 < explore_end <= explore_start <= 1")
        if len(self.reward.omega) != 2:
            raise ConfigError("[reward] omega needs one weight per flow group (2)")
        if self.reward.fb_norm == 0:
            raise ConfigError("[reward] fb_norm must be nonzero")
        if not self.network.enc_gru or not self.network.enc_dense:
            raise ConfigError("[network] encoder needs at least one dense and one GRU layer")
        if self.eval.tpt_window_ttis < 1:
            raise ConfigError("[eval] tpt_window_ttis must be >= 1")
        if self.toysort.list_len < 1 or self.toysort.max_value < self.toysort.list_len:
            raise ConfigError("[toysort] need 1 <= list_len <= max_value")

    # ------------------------------------------------------------ (de)serialization
    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        sections = {}
        for name in parser.sections():
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]")
            klass = SECTIONS[name]
            hints = typing.get_type_hints(klass)
            defaults = klass()
            values = {}
            for key, raw in parser.items(name):
                if key not in hints:
                    raise ConfigError(f"unknown key [{name}] {key}")
                values[key] = _parse_value(raw, hints[key], getattr(defaults, key), f"[{name}] {key}")
            sections[name] = klass(**values)
        return cls(**sections)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text())

    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            for f in dataclasses.fields(SECTIONS[name]):
                lines.append(f"{f.name} = {_format_value(getattr(getattr(self, name), f.name))}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    def replace(self, **sections) -> "ExperimentConfig":
        """Copy with per-section overrides, e.g. ``replace(training={"gamma": 0.9})``."""
        kw = {}
        for name in SECTIONS:
            sec = getattr(self, name)
            kw[name] = dataclasses.replace(sec, **sections.get(name, {}))
        unknown = set(sections) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown sections {sorted(unknown)}")
        return ExperimentConfig(**kw)


def _parse_value(raw: str, hint, default, where: str):
    raw = raw.strip()
    optional = typing.get_origin(hint) is typing.Union and type(None) in typing.get_args(hint)
    if optional:
        if raw.lower() in ("none", ""):
            return None
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
    try:
        if hint is bool:
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is tuple:
            elem = type(default[0]) if default else float
            return tuple(elem(v) for v in raw.replace(" ", "").split(",") if v)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") from None


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)
