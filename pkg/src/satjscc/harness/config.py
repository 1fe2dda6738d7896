"""Experiment configuration: channel setup, experiment plan and the YAML file
that ties them to an architecture and a dataset."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import re

import yaml

from ..channel import MODES, PER_SYMBOL
from ..fading import (ChannelState, EnvironmentTable, LooParams,
                      default_environment_tables, load_environment_file, states_from)
from ..jscc import ArchitectureConfig, AttentionConfig, ChannelContext
from ..linkbudget import LinkParams, snr


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class Condition:
    environment: str
    elevation_deg: float
    state: ChannelState
    snr_db: float
    loo: LooParams

    def context(self) -> ChannelContext:
        return ChannelContext(self.snr_db, self.state, self.loo)


@dataclass
class ChannelSetup:
    link: LinkParams = field(default_factory=LinkParams)
    tables: dict[str, EnvironmentTable] = field(default_factory=default_environment_tables)
    mode: str = PER_SYMBOL
    snr_source: str = "linkbudget"
    snr_db: float | None = None
    random_phase: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise PlanError(f"channel mode must be one of {MODES}")
        if self.snr_source not in ("linkbudget", "explicit"):
            raise PlanError("snr_source must be 'linkbudget' or 'explicit'")
        if self.snr_source == "explicit" and self.snr_db is None:
            raise PlanError("explicit SNR source needs snr_db")

    def snr_at(self, elevation_deg: float) -> float:
        if self.snr_source == "explicit":
            return float(self.snr_db)
        return snr(self.link, elevation_deg).snr_db

    def condition(self, environment: str, elevation_deg: float, state,
                  snr_db: float | None = None) -> Condition:
        try:
            table = self.tables[environment]
        except KeyError:
            raise PlanError(f"environment {environment!r} not in table "
                            f"(have {sorted(self.tables)})") from None
        state = ChannelState.parse(state)
        loo = table.lookup(elevation_deg, state)
        value = self.snr_at(elevation_deg) if snr_db is None else float(snr_db)
        return Condition(environment, float(elevation_deg), state, value, loo)


@dataclass
class ExperimentPlan:
    environments: list[str] = field(default_factory=lambda: ["urban"])
    states: list = field(default_factory=lambda: list(ChannelState))
    elevations: list[float] = field(default_factory=lambda: [40.0])
    ratios: list[float] = field(default_factory=lambda: [0.04, 0.17, 0.33])
    kinds: list[str] = field(default_factory=lambda: ["baseline", "adaptive"])
    seeds: list[int] = field(default_factory=lambda: [0])
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_drop_fraction: float = 0.5
    lr_drop_factor: float = 0.1
    patience: int = 50
    realizations: int = 10
    max_realizations: int = 160
    psnr_stderr_db: float = 0.1

    def __post_init__(self):
        self.states = states_from(self.states)
        self.elevations = [float(e) for e in self.elevations]
        self.ratios = [float(r) for r in self.ratios]
        self.seeds = [int(s) for s in self.seeds]
        if not all(0 < r < 1 for r in self.ratios):
            raise PlanError("compression ratios must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise PlanError("batch_size and epochs must be >= 1")
        bad = set(self.kinds) - {"baseline", "adaptive"}
        if bad:
            raise PlanError(f"unknown model kinds {sorted(bad)}")
        if not (self.environments and self.states and self.elevations and self.ratios
                and self.kinds and self.seeds):
            raise PlanError("every plan axis needs at least one value")
        if not 0 < self.lr_drop_fraction <= 1:
            raise PlanError("lr_drop_fraction must be in (0, 1]")
        if self.realizations < 1:
            raise PlanError("need at least one channel realization per image")

    @property
    def lr_drop_epoch(self) -> int:
        return max(1, round(self.epochs * self.lr_drop_fraction))

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * (self.lr_drop_factor if epoch >= self.lr_drop_epoch else 1.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["states"] = [s.label for s in self.states]
        return d


@dataclass
class DatasetSpec:
    count: int = 512
    bands: int = 3
    size: int = 16
    seed: int = 0
    manifest: str | None = None


@dataclass
class Config:
    seed: int = 0
    channel: ChannelSetup = field(default_factory=ChannelSetup)
    architecture: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    plan: ExperimentPlan = field(default_factory=ExperimentPlan)
    table_path: str | None = None

    def architecture_for(self, ratio: float, input_shape) -> ArchitectureConfig:
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in self.architecture.items()}
        kwargs["input_shape"] = tuple(input_shape)
        return ArchitectureConfig.for_ratio(ratio, **kwargs)

    def attention_config(self, enabled: bool) -> AttentionConfig:
        kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in self.attention.items()}
        return AttentionConfig(enabled=enabled, **kwargs)


def _pick(cls, data: dict, where: str) -> dict:
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise PlanError(f"{where}: unknown keys {sorted(unknown)}")
    return data


def config_from_dict(doc: dict[str, Any], base_dir: Path | None = None) -> Config:
    doc = dict(doc or {})
    unknown = set(doc) - {"seed", "link", "environment_table", "channel", "architecture",
                          "attention", "dataset", "plan"}
    if unknown:
        raise PlanError(f"config: unknown sections {sorted(unknown)}")
    link = LinkParams(**_pick(LinkParams, doc.get("link") or {}, "link"))
    table_path = doc.get("environment_table")
    if table_path:
        path = Path(table_path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        tables = load_environment_file(path)
        table_path = str(path)
    else:
        tables = default_environment_tables()
    channel_doc = dict(doc.get("channel") or {})
    _pick(ChannelSetup, channel_doc, "channel")
    channel = ChannelSetup(link=link, tables=tables, **channel_doc)
    arch = dict(doc.get("architecture") or {})
    allowed_arch = {"num_blocks", "filters", "kernel", "strides", "power"}
    if set(arch) - allowed_arch:
        raise PlanError(f"architecture: unknown keys {sorted(set(arch) - allowed_arch)}")
    attention = dict(doc.get("attention") or {})
    allowed_att = {"hidden_dim", "snr_range_db", "use_loo", "alpha_range_db", "psi_range_db",
                   "mp_range_db"}
    if set(attention) - allowed_att:
        raise PlanError(f"attention: unknown keys {sorted(set(attention) - allowed_att)}")
    dataset = DatasetSpec(**_pick(DatasetSpec, doc.get("dataset") or {}, "dataset"))
    plan = ExperimentPlan(**_pick(ExperimentPlan, doc.get("plan") or {}, "plan"))
    for env in plan.environments:
        if env not in tables:
            raise PlanError(f"plan environment {env!r} missing from the environment table")
    return Config(seed=int(doc.get("seed", 0)), channel=channel, architecture=arch,
                  attention=attention, dataset=dataset, plan=plan, table_path=table_path)


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``1e-3``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[0-9][0-9_]*[eE][-+]?[0-9]+
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_config(path) -> Config:
    path = Path(path)
    try:
        doc = yaml.load(path.read_text(encoding="utf-8"), Loader=_Loader)
    except yaml.YAMLError as exc:
        raise PlanError(f"{path}: {exc}") from None
    return config_from_dict(doc or {}, path.parent)

