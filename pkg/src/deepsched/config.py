"""Configuration dataclasses and the flat key-value config file loader."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class SimConfig:
    n_cells: int = 3
    n_ues_per_cell: int = 12
    n_rbg: int = 6
    max_candidates: int = 4          # |U|
    max_layers: int = 2              # |L|
    max_rank: int = 2
    rbg_bandwidth: float = 360e3     # Hz
    tti_duration: float = 0.5e-3     # s
    traffic_mix: float = 0.5         # fraction of full-buffer UEs
    ftp3_packet_bytes: float = 1500.0
    ftp3_rate: float = 500.0         # packets/s
    smoothing_forget: float = 0.99   # epsilon
    seed: int = 0
    warmup_ttis: int = 100

    # channel abstraction
    n_antennas: int = 8
    fading_persistence: float = 0.9
    tx_power_dbm: float = 44.0
    pathloss_ref_db: float = 30.0    # at 1 m
    pathloss_exponent: float = 3.0
    noise_interference_dbm: float = -50.0
    shadowing_std_db: float = 4.0
    cell_radius_m: float = 115.0
    min_distance_m: float = 10.0
    rank2_threshold_db: float = 15.0
    max_mimo_layers: int | None = None   # defaults to max_layers * max_rank

    # normalizers
    buffer_max_bytes: float = 10e6
    cqi_min: int = 1
    cqi_max: int = 15
    sinr_min_db: float = -6.0
    sinr_max_db: float = 22.0
    subband_cqi_norm: float = 15.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for name in ("n_cells", "n_ues_per_cell", "n_rbg", "max_candidates", "max_layers",
                     "max_rank", "n_antennas"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.max_rank > 2:
            raise ConfigError("max_rank must be <= 2")
        if self.max_rank > self.n_antennas:
            raise ConfigError("max_rank exceeds antenna count")
        if not 0.0 < self.smoothing_forget < 1.0:
            raise ConfigError(f"smoothing_forget must lie in (0, 1), got {self.smoothing_forget}")
        if not 0.0 <= self.fading_persistence <= 1.0:
            raise ConfigError("fading_persistence must lie in [0, 1]")
        if not 0.0 <= self.traffic_mix <= 1.0:
            raise ConfigError("traffic_mix must lie in [0, 1]")
        if self.warmup_ttis < 0:
            raise ConfigError("warmup_ttis must be >= 0")
        if self.rbg_bandwidth <= 0 or self.tti_duration <= 0:
            raise ConfigError("rbg_bandwidth and tti_duration must be positive")
        if self.ftp3_packet_bytes <= 0 or self.ftp3_rate < 0:
            raise ConfigError("invalid FTP3 traffic parameters")
        if self.cqi_max <= self.cqi_min:
            raise ConfigError("cqi_max must exceed cqi_min")
        if self.sinr_max_db <= self.sinr_min_db:
            raise ConfigError("sinr_max_db must exceed sinr_min_db")
        if self.buffer_max_bytes <= 0:
            raise ConfigError("buffer_max_bytes must be positive")
        if self.max_mimo_layers is not None and self.max_mimo_layers < 1:
            raise ConfigError("max_mimo_layers must be >= 1")

    @property
    def mimo_layer_limit(self) -> int:
        if self.max_mimo_layers is None:
            return self.max_layers * self.max_rank
        return self.max_mimo_layers

    @property
    def n_actions(self) -> int:
        return self.max_candidates + 1

    def state_dim(self, arch: str) -> int:
        if arch == "1l":
            return self.max_candidates * (5 + 2 * self.n_rbg)
        if arch == "2l":
            return self.max_candidates * 8 + 1
        raise ConfigError(f"unknown architecture {arch!r}")

    def n_branches(self, arch: str) -> int:
        return self.n_rbg if arch == "1l" else 1


@dataclass
class TrainConfig:
    train_ttis: int = 2000
    hidden: tuple[int, ...] = (32, 32)
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    alpha_lr: float = 1e-4
    checkpoint_every: int = 500
    curve_window: int = 50
    n_permutations: int = 1          # N_Pi augmentation copies per tuple

    # off-policy (SACD / DSACD)
    gamma_off: float = 0.0
    batch_size: int = 32
    target_tau: float = 0.001
    quantiles: int = 16
    per_omega: float = 0.5
    per_eps: float = 1e-3
    per_weight_start: float = 0.4    # omega' anneals linearly to 1
    replay_per_cell: int = 1000      # capacity = n_cells * replay_per_cell
    beta_1l: float = 0.999
    beta_2l: float = 0.4
    init_alpha: float = 1.0
    updates_per_tti: int = 1
    reward_scope: str = "tti"        # "tti" or "decision"

    # on-policy (PPO with expert guidance)
    gamma_ppo: float = 0.95
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    reward_k: float = 0.2
    ppo_batch: int = 128
    expert_capacity: int = 4000
    jsd_batch: int = 128
    jsd_lr: float | None = None      # defaults to actor_lr
    expert_smoothing: float = 1e-3
    ppo_critic_lr: float = 2e-4

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.train_ttis < 0 or self.batch_size < 1 or self.ppo_batch < 1:
            raise ConfigError("invalid training sizes")
        if self.quantiles < 1:
            raise ConfigError("quantiles must be >= 1")
        if self.reward_scope not in ("tti", "decision"):
            raise ConfigError(f"unknown reward_scope {self.reward_scope!r}")
        if not 0.0 <= self.target_tau <= 1.0:
            raise ConfigError("target_tau must lie in [0, 1]")


@dataclass
class EvalConfig:
    eval_ttis: int = 600
    seeds: tuple[int, ...] = (101, 102, 103)
    workers: int = 1

    def __post_init__(self) -> None:
        self.seeds = tuple(int(s) for s in self.seeds)


@dataclass
class RunConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_flat(self) -> dict:
        out = {}
        for part in (self.sim, self.train, self.eval):
            for f in fields(part):
                v = getattr(part, f.name)
                out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_SECTIONS = {"sim": SimConfig, "train": TrainConfig, "eval": EvalConfig}


def _coerce(f, value):
    """YAML reads '1e-4' as a string; cast numbers by the declared field type."""
    if value is None or not isinstance(value, (str, int)) or isinstance(value, bool):
        return value
    kind = str(f.type)
    try:
        if kind.startswith("float"):
            return float(value)
        if kind.startswith("int"):
            return int(value)
    except ValueError as exc:
        raise ConfigError(f"{f.name}: cannot read {value!r} as {kind}") from exc
    return value


def config_from_flat(values: dict) -> RunConfig:
    """Split a flat key-value mapping over the three config dataclasses."""
    parts: dict[str, dict] = {k: {} for k in _SECTIONS}
    owner = {f.name: (sec, f) for sec, cls in _SECTIONS.items() for f in fields(cls)}
    for key, value in values.items():
        if key not in owner:
            raise ConfigError(f"unknown config key {key!r}")
        sec, f = owner[key]
        parts[sec][key] = _coerce(f, value)
    try:
        return RunConfig(**{sec: cls(**parts[sec]) for sec, cls in _SECTIONS.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    data = yaml.safe_load(text) or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a flat key-value mapping")
    return config_from_flat(data)


def replace_sim(cfg: SimConfig, **changes) -> SimConfig:
    return dataclasses.replace(cfg, **changes)
