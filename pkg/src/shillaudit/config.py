"""TOML run configuration with CLI overrides.

A run config collects the per-module settings (dataset paths, attack,
prescreen, audit, reward, recsys) plus an output directory and a global
seed. Unknown keys and malformed values fail fast as config errors; every
command writes the resolved config beside its outputs so reruns are
reproducible.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .attacks import AttackConfig
from .audit.client import AuditorEndpoint
from .audit.prompts import DEFAULT_ITEM_CHAR_BUDGET, DEFAULT_MAX_ITEMS, MODES
from .errors import ConfigError
from .prescreen import PrescreenConfig
from .recsys import RecModelConfig
from .reward import RewardConfig


@dataclass(frozen=True)
class DatasetPaths:
    interactions: str = ""
    catalog: str = ""
    format: str = "csv"
    holdout: str | float = "leave-one-out"
    domain: str = "generic"


@dataclass(frozen=True)
class AuditSettings:
    base_url: str = ""
    model_name: str = ""
    auth_token_env_var: str | None = None
    max_concurrency: int = 4
    timeout: float = 30.0
    retries: int = 2
    temperature: float = 0.0
    max_tokens: int = 512
    mode: str = "confidence"
    prior_knowledge: str = ""  # domain name or file path; empty = dataset domain
    item_char_budget: int = DEFAULT_ITEM_CHAR_BUDGET
    max_items: int = DEFAULT_MAX_ITEMS
    fail_closed: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"audit mode must be one of {MODES}, got {self.mode!r}")

    def endpoint(self) -> AuditorEndpoint:
        if not self.base_url:
            raise ConfigError("audit.base_url is required for HTTP auditing")
        return AuditorEndpoint(
            base_url=self.base_url,
            model_name=self.model_name,
            auth_token_env_var=self.auth_token_env_var,
            max_concurrency=self.max_concurrency,
            timeout=self.timeout,
            retries=self.retries,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )


@dataclass(frozen=True)
class SweepSettings:
    attacks: tuple[str, ...] = ("random", "bandwagon")
    delta_grid: tuple[float, ...] = ()
    tau_grid: tuple[float, ...] = ()


@dataclass(frozen=True)
class CorpusSettings:
    datasets: tuple[dict, ...] = ()  # each: {name, interactions, catalog, format?, domain?}
    injectors: tuple[str, ...] = ("random", "bandwagon")
    regimes: tuple[str, ...] = ("unpopular", "popular", "random")


@dataclass(frozen=True)
class EvaluateRcSettings:
    clean_interactions: str = ""
    poisoned_interactions: str = ""
    manifest: str = ""
    flagged_users: str = ""  # JSON list of external user ids; empty = use fakes from detection
    top_n: int = 50


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetPaths = field(default_factory=DatasetPaths)
    attack: AttackConfig = field(default_factory=AttackConfig)
    prescreen: PrescreenConfig = field(default_factory=PrescreenConfig)
    audit: AuditSettings = field(default_factory=AuditSettings)
    reward: RewardConfig = field(default_factory=RewardConfig)
    recsys: RecModelConfig = field(default_factory=RecModelConfig)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    evaluate_rc: EvaluateRcSettings = field(default_factory=EvaluateRcSettings)
    output_dir: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def save_snapshot(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def require_files(self, *paths: str) -> None:
        for p in paths:
            if not p:
                raise ConfigError("a required dataset path is empty in the config")
            if not Path(p).exists():
                raise ConfigError(f"configured file does not exist: {p}")


_SECTION_TYPES = {
    "dataset": DatasetPaths,
    "attack": AttackConfig,
    "prescreen": PrescreenConfig,
    "audit": AuditSettings,
    "reward": RewardConfig,
    "recsys": RecModelConfig,
    "sweep": SweepSettings,
    "corpus": CorpusSettings,
    "evaluate_rc": EvaluateRcSettings,
}
_SCALAR_KEYS = {"output_dir", "seed"}


def _build_section(cls, data: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        elif isinstance(value, str) and isinstance(fields[key].default, tuple):
            # tuple-valued fields accept comma-separated override strings
            value = tuple(x.strip() for x in value.split(",") if x.strip())
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def _parse_override_value(text: str):
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply `section.key=value` strings onto the raw config mapping."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        dotted, value = item.split("=", 1)
        parts = dotted.strip().split(".")
        node = data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {dotted!r} crosses a non-table value")
        node[parts[-1]] = _parse_override_value(value.strip())
    return data


def config_from_mapping(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTION_TYPES) - _SCALAR_KEYS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        section = data.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be a table")
        kwargs[name] = _build_section(cls, section)
    if "output_dir" in data:
        kwargs["output_dir"] = str(data["output_dir"])
    if "seed" in data:
        if not isinstance(data["seed"], int):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = data["seed"]
    return RunConfig(**kwargs)


def load_run_config(path, overrides: list[str] | None = None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None
    if overrides:
        data = apply_overrides(data, overrides)
    return config_from_mapping(data)
