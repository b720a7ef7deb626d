"""Configuration: defaults, JSON config file, and flag overrides.

Precedence is flags > config file > defaults.  Config files are a single
JSON document with ``engine``, ``agent``, ``experiment``, and ``net``
sections; unknown keys are rejected before anything starts.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass
class EngineConfig:
    dwell_ms: int = 250
    gap_tolerance_ms: int = 50
    timeout_ms: int = 5000
    max_timeouts: int = 3
    delta_d_m: float = 1.0
    delta_t_ms: int = 500
    delta_t_min_ms: int = 200
    delta_t_max_ms: int = 3000
    ewma_alpha: float = 0.5
    beta: float = 1.2
    marker_half_extent_m: float = 0.15
    eccentricity_deg: float = 8.0
    mode: str = "confirmation_gated"
    hfov_deg: float = 43.0
    vfov_deg: float = 29.0
    reference_depth_m: float = 2.0
    fixation_window_ms: int = 150
    fixation_dispersion_deg: float = 1.5
    frustum_inset_deg: float = 2.0
    adaptive_interval: bool = True
    track_capacity: int = 512

    def validate(self):
        if self.mode not in ("confirmation_gated", "scheduled"):
            raise ConfigError(f"unknown engine mode {self.mode!r}")
        if self.dwell_ms <= 0 or self.gap_tolerance_ms < 0:
            raise ConfigError("dwell_ms must be > 0 and gap_tolerance_ms >= 0")
        if not (0 < self.delta_t_min_ms <= self.delta_t_max_ms):
            raise ConfigError("need 0 < delta_t_min_ms <= delta_t_max_ms")
        if not (0.0 < self.ewma_alpha <= 1.0):
            raise ConfigError("ewma_alpha must be in (0, 1]")
        if self.beta <= 0:
            raise ConfigError("beta must be > 0")
        if self.delta_d_m <= 0:
            raise ConfigError("delta_d_m must be > 0")
        if self.marker_half_extent_m <= 0:
            raise ConfigError("marker_half_extent_m must be > 0")
        if self.max_timeouts < 1 or self.timeout_ms <= 0:
            raise ConfigError("timeout_ms and max_timeouts must be positive")


@dataclass
class AgentParams:
    latency_ms: int = 200
    saccade_speed_dps: float = 300.0
    jitter_sigma_deg: float = 0.5
    fov_h_deg: float = 43.0
    fov_v_deg: float = 29.0
    head_lag_tau_ms: int = 300
    sample_hz: int = 60
    seed: int = 0

    def validate(self):
        for name in (
            "latency_ms",
            "saccade_speed_dps",
            "fov_h_deg",
            "fov_v_deg",
            "head_lag_tau_ms",
            "sample_hz",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"agent.{name} must be positive")
        if self.jitter_sigma_deg < 0:
            raise ConfigError("agent.jitter_sigma_deg must be >= 0")


@dataclass
class ExperimentConfig:
    delta_d_grid: list = field(default_factory=lambda: [0.5, 1.0])
    delta_t_grid: list = field(default_factory=lambda: [500, 1000])
    episodes_per_cell: int = 10
    mode: str = "confirmation_gated"
    world: list = field(
        default_factory=lambda: [
            {"id": "poi-1", "position": [2.0, 1.6, 4.0], "label": "crate"}
        ]
    )
    agent: AgentParams = field(default_factory=AgentParams)
    seed: int = 0
    max_sim_s: float = 120.0

    def validate(self):
        if not self.delta_d_grid or not self.delta_t_grid:
            raise ConfigError("delta_d_grid and delta_t_grid must be non-empty")
        if any(d <= 0 for d in self.delta_d_grid):
            raise ConfigError("delta_d_grid values must be > 0")
        if any(t <= 0 for t in self.delta_t_grid):
            raise ConfigError("delta_t_grid values must be > 0")
        if self.episodes_per_cell < 1:
            raise ConfigError("episodes_per_cell must be >= 1")
        if self.mode not in ("confirmation_gated", "scheduled"):
            raise ConfigError(f"unknown experiment mode {self.mode!r}")
        if not self.world:
            raise ConfigError("experiment.world must contain at least one POI")
        self.agent.validate()


@dataclass
class NetConfig:
    port: int = 7070
    ws_port: int = 8080
    log_dir: str = "logs"
    static_dir: Optional[str] = None


@dataclass
class CliConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    agent: AgentParams = field(default_factory=AgentParams)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    net: NetConfig = field(default_factory=NetConfig)

    def validate(self):
        self.engine.validate()
        self.agent.validate()
        self.experiment.validate()


def _apply_section(obj, data: dict, section: str):
    known = {f.name for f in fields(obj)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key {section}.{key}")
        if key == "agent" and isinstance(value, dict):
            _apply_section(obj.agent, value, f"{section}.agent")
        else:
            setattr(obj, key, value)


def load_config(path: Optional[str] = None) -> CliConfig:
    cfg = CliConfig()
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        sections = {"engine": cfg.engine, "agent": cfg.agent,
                    "experiment": cfg.experiment, "net": cfg.net}
        for section, body in data.items():
            if section not in sections:
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(body, dict):
                raise ConfigError(f"section {section!r} must be an object")
            _apply_section(sections[section], body, section)
    # Experiment agent defaults to the shared agent section unless overridden.
    if path is None or "experiment" not in (data if path else {}) or \
            "agent" not in data.get("experiment", {}):
        cfg.experiment.agent = cfg.agent
    cfg.validate()
    return cfg


def config_as_dict(cfg: CliConfig) -> dict:
    return asdict(cfg)
