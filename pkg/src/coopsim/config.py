"""Experiment configuration: one flat JSON object covering world, radio, and RL."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .channel import NetConfig
from .federation import FedConfig
from .rlcore import TrainConfig
from .world import ConfigError, WorldConfig


@dataclass
class ExperimentConfig:
    # world
    extent_m: float = 128.0
    cell_m: float = 4.0
    slot_s: float = 0.002
    n_vehicles: int = 4
    road_width_m: float = 10.0
    light_phase_s: float = 8.0
    speed_min: float = 10.0
    speed_max: float = 20.0
    world_seed: int = 0
    # sensing / blocks
    levels: int = 3
    sensing_radius_m: float | None = None  # default: half the 2^levels square
    reliability: float = 1.0
    mu_per_s: float = 0.9
    t_int_s: float = 2.0
    max_past_blocks: int = 10
    # radio
    n_rb: int = 4
    rb_bandwidth_hz: float = 180e3
    tx_power_dbm: float = -40.0
    noise_dbm_hz: float = -174.0
    block_bits: int = 800
    fading: bool = True
    # training
    lr: float = 1e-4
    batch: int = 64
    gamma: float = 0.99
    target_sync: int = 1000
    warmup: int = 1000
    eps_decay_frac: float = 0.6    # fraction of planned agent steps
    reward_scale: float = 1.0      # reward multiplier inside the learner only
    buffer_capacity: int = 200_000
    trunk: list[int] = field(default_factory=lambda: [48, 32])
    branch_hidden: int = 16
    grad_clip: float = 10.0
    # schedule
    slots_per_frame: int = 5
    frames_per_episode: int = 10
    episodes: int = 2000
    eval_period: int = 100
    eval_episodes: int = 10
    trace_slots: int = 30_000
    # federation
    federation: bool = False
    fed_period_frames: int = 1
    # bookkeeping
    seed: int = 0
    checkpoint_period: int = 500   # episodes
    flat_head: bool = False        # baseline: joint-action head instead of branches
    flat_head_guard: int = 4096

    def validate(self) -> None:
        if self.slots_per_frame < 1 or self.frames_per_episode < 1:
            raise ConfigError("frame/episode lengths must be at least 1")
        if self.episodes < 1:
            raise ConfigError("episodes must be at least 1")
        if self.levels < 1 or self.levels > 6:
            raise ConfigError("levels must be between 1 and 6")
        if not (0.0 < self.mu_per_s < 1.0):
            raise ConfigError("mu_per_s must be in (0, 1)")
        if self.n_vehicles < 2:
            raise ConfigError("need at least 2 vehicles")
        if self.trace_slots < self.slots_per_frame * self.frames_per_episode:
            raise ConfigError("trace shorter than one episode")
        self.world().validate()
        self.net().validate()
        self.train().validate()
        self.fed().validate()

    @property
    def radius(self) -> float:
        if self.sensing_radius_m is not None:
            return self.sensing_radius_m
        return self.cell_m * (2 ** self.levels) / 2.0

    @property
    def slots_per_episode(self) -> int:
        return self.slots_per_frame * self.frames_per_episode

    def world(self) -> WorldConfig:
        return WorldConfig(extent_m=self.extent_m, cell_m=self.cell_m,
                           road_width_ns_m=self.road_width_m,
                           road_width_ew_m=self.road_width_m,
                           light_phase_s=self.light_phase_s, slot_s=self.slot_s,
                           n_max=self.n_vehicles, seed=self.world_seed,
                           speed_min=self.speed_min, speed_max=self.speed_max)

    def net(self) -> NetConfig:
        return NetConfig(n_rb=self.n_rb, rb_bandwidth_hz=self.rb_bandwidth_hz,
                         tx_power_dbm=self.tx_power_dbm,
                         noise_dbm_hz=self.noise_dbm_hz,
                         block_bits=self.block_bits, fading=self.fading)

    def train(self, planned_steps: int | None = None) -> TrainConfig:
        if planned_steps is None:
            planned_steps = self.episodes * self.slots_per_episode
        decay = max(int(planned_steps * self.eps_decay_frac), 1)
        return TrainConfig(lr=self.lr, batch=self.batch, gamma=self.gamma,
                           target_sync=self.target_sync, warmup=self.warmup,
                           eps_decay_steps=decay, grad_clip=self.grad_clip,
                           reward_scale=self.reward_scale,
                           buffer_capacity=self.buffer_capacity)

    def fed(self) -> FedConfig:
        return FedConfig(enabled=self.federation,
                         period_frames=self.fed_period_frames)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError("config must be a flat JSON object")
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    cfg = ExperimentConfig(**data)
    cfg.validate()
    return cfg
