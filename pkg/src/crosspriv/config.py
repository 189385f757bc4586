"""Run configuration: one INI file with a section per component, all defaults built in."""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import AdversaryModel, CandidateGrid
from .env import ConfigError, Env, RewardWeights
from .geo import GeoPoint
from .trainer import TrainConfig
from .world import (BBox, RadioParams, Scenario, ServerDefaults, TrafficProfile, load_servers, load_traces,
                    synth_servers, synth_traces)

BUNDLED = Path(__file__).with_name("data")


@dataclass(frozen=True)
class ScenarioConfig:
    source: str = "synthetic"
    traces: str = ""
    servers: str = ""
    bbox: tuple = (121.40, 31.18, 121.50, 31.26)
    slot_seconds: float = 30.0
    vehicles: int = 2
    rsus: int = 6
    slots: int = 200
    speed_min_kmh: float = 20.0
    speed_max_kmh: float = 60.0
    link_radius_km: float = 5.0
    disconnected_hops: int = 50
    scenario_seed: int = 0

    def __post_init__(self):
        if self.source not in ("synthetic", "real"):
            raise ConfigError("scenario.source must be 'synthetic' or 'real'")
        if len(self.bbox) != 4:
            raise ConfigError("scenario.bbox needs lon_min, lat_min, lon_max, lat_max")
        if self.vehicles < 1 or self.rsus < 1 or self.slots < 1 or not self.slot_seconds > 0:
            raise ConfigError("scenario sizes and slot length must be positive")


@dataclass(frozen=True)
class VehicleConfig:
    tx_power: float = 0.2
    cycles_per_bit: float = 100.0
    agent_model_size: float = 1e7


@dataclass(frozen=True)
class GridConfig:
    cell: float = 0.005
    radius: float = 0.05


@dataclass(frozen=True)
class RewardConfig:
    function: str = "llm_refined"
    w_entropy: float = 1.0
    w_latency: float = 0.5
    w_qos: float = 0.5
    w1: float = 1.0
    w2: float = 0.5
    w3: float = 0.5
    w4: float = 0.3
    w5: float = 0.2
    q_max: str = "auto"

    def weights(self) -> RewardWeights:
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(RewardWeights) if f.name != "q_max"}
        if self.q_max != "auto":
            try:
                kw["q_max"] = float(self.q_max)
            except ValueError:
                raise ConfigError(f"reward.q_max must be 'auto' or a number, got {self.q_max!r}") from None
            if not kw["q_max"] > 0:
                raise ConfigError("reward.q_max must be positive")
        return RewardWeights(**kw)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "runs"
    log_every: int = 1


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    radio: RadioParams = field(default_factory=RadioParams)
    hardware: ServerDefaults = field(default_factory=ServerDefaults)
    traffic: TrafficProfile = field(default_factory=TrafficProfile)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    adversary: AdversaryModel = field(default_factory=AdversaryModel)
    grid: GridConfig = field(default_factory=GridConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    base_dir: str = "."


SECTIONS = ("scenario", "radio", "hardware", "traffic", "vehicle", "adversary", "grid", "reward", "train",
            "output")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _section(cls, items: dict, where: str):
    defaults = cls()
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kw = {k: _parse(v, getattr(defaults, k), f"{where}.{k}") for k, v in items.items()}
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(text: str, source: str = "<string>", base_dir: str = ".") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    extra = set(cp.sections()) - set(SECTIONS) - {"run"}
    if extra:
        raise ConfigError(f"{source}: unknown sections {sorted(extra)}")
    kinds = {f.name: f.default_factory for f in dataclasses.fields(RunConfig) if f.name in SECTIONS}
    kw = {}
    for name in SECTIONS:
        items = dict(cp[name]) if cp.has_section(name) else {}
        kw[name] = _section(kinds[name], items, f"{source} [{name}]")
    seed = 0
    if cp.has_section("run"):
        run = dict(cp["run"])
        if set(run) - {"seed"}:
            raise ConfigError(f"{source} [run]: unknown keys {sorted(set(run) - {'seed'})}")
        seed = _parse(run.get("seed", "0"), 0, f"{source} [run].seed")
    cfg = RunConfig(**kw, seed=seed, base_dir=str(base_dir))
    _check_files(cfg, source)
    return cfg


def _check_files(cfg: RunConfig, source: str):
    if cfg.scenario.source != "real":
        return
    for key in ("traces", "servers"):
        value = getattr(cfg.scenario, key)
        if not value:
            raise ConfigError(f"{source}: scenario.{key} is required for real traces")
        if not resolve(cfg, value).exists():
            raise ConfigError(f"{source}: scenario.{key} file not found: {resolve(cfg, value)}")


def resolve(cfg: RunConfig, path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else Path(cfg.base_dir) / p


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path), str(path.parent))


def dump_config(cfg: RunConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name in SECTIONS:
        obj = getattr(cfg, name)
        cp[name] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    cp["run"] = {"seed": str(cfg.seed)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Copy of ``cfg`` with per-section field overrides, e.g. ``train={"lr": 1e-3}``."""
    kw = {}
    for name, changes in sections.items():
        if name == "seed":
            kw["seed"] = changes
            continue
        kw[name] = dataclasses.replace(getattr(cfg, name), **changes)
    return dataclasses.replace(cfg, **kw)


def tiny_config_path() -> Path:
    return BUNDLED / "tiny.ini"


# ------------------------------------------------------------ assembly
def build_scenario(cfg: RunConfig) -> Scenario:
    sc = cfg.scenario
    bbox = BBox(*sc.bbox)
    vkw = dataclasses.asdict(cfg.vehicle)
    if sc.source == "real":
        vehicles = load_traces(resolve(cfg, sc.traces), bbox, sc.slot_seconds, **vkw)
        servers = load_servers(resolve(cfg, sc.servers), bbox, sc.rsus, sc.scenario_seed, cfg.hardware)
    else:
        rng = np.random.default_rng(sc.scenario_seed)
        servers = synth_servers(sc.rsus, bbox, rng, cfg.hardware)
        vehicles = synth_traces(sc.vehicles, bbox, sc.slots, (sc.speed_min_kmh, sc.speed_max_kmh), rng,
                                sc.slot_seconds, **vkw)
    return Scenario(vehicles, servers, cfg.radio, cfg.traffic, bbox, sc.link_radius_km, sc.disconnected_hops)


def build_env(cfg: RunConfig, scenario: Scenario | None = None, log=None, seed: int | None = None) -> Env:
    scenario = scenario or build_scenario(cfg)
    bbox = scenario.bbox
    grid = CandidateGrid(GeoPoint(bbox.lon_min, bbox.lat_min), cfg.grid.cell, cfg.grid.radius)
    return Env(scenario, cfg.adversary, grid, cfg.reward.function, cfg.reward.weights(),
               cfg.seed if seed is None else seed, log)
