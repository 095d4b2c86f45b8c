"""Engine configuration: every solver, planner, executor, and randomization
constant lives here and can be overridden from a YAML config file."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

FORMAT_TAG = "locogen-config/1"


@dataclass(frozen=True)
class IkParams:
    damping: float = 0.01
    step_clamp: float = 0.2
    max_iterations: int = 200
    pos_tol: float = 1e-3
    ori_tol: float = 1e-2
    # Free-joint ladder, tried in order; tokens: arms, torso, base.
    ladder: tuple = (("arms",), ("arms", "torso"), ("arms", "base"), ("arms", "torso", "base"))
    base_window_xy: float = 1.2
    base_window_yaw: float = math.pi
    base_window_height: float = 0.12


@dataclass(frozen=True)
class PlannerParams:
    goal_bias: float = 0.1
    max_iterations: int = 10000
    shortcut_passes: int = 50
    extend_step: float = 0.3
    base_step: float = 0.05
    base_yaw_step: float = 0.1
    joint_step: float = 0.05
    edge_resolution_joint: float = 0.01
    edge_resolution_base: float = 0.01
    yaw_weight: float = 0.3  # meters of cost per radian of yaw in the planar metric
    sample_margin: float = 1.0


@dataclass(frozen=True)
class ExecutorParams:
    dt: float = 0.02  # 50 Hz control
    joint_rate_limit: float = 2.0  # rad/s toward joint targets
    height_rate_limit: float = 0.5  # m/s toward commanded height
    max_vx: float = 0.6
    max_vy: float = 0.6
    max_yaw_rate: float = 1.0
    tracking_eta: float = 0.05  # velocity scale ~ U[1-eta, 1+eta], per episode
    yaw_bias_scale: float = 0.4  # yaw-rate bias ~ U(+-eta*scale) rad/s
    follower_lookahead: float = 0.25
    follower_gain_lin: float = 2.5
    follower_gain_yaw: float = 3.0
    follower_pos_tol: float = 0.02
    follower_yaw_tol: float = 0.05
    follower_step_budget: int = 5000
    grasp_contact_margin: float = 0.005
    hand_closed_threshold: float = 0.6
    settle_steps: int = 50


@dataclass(frozen=True)
class GenConfig:
    """Top-level generation configuration (the engine configuration file)."""

    seed: int = 0
    motion_noise_sigma: float = 0.005  # rad, on executed upper/hand targets
    init_perturb_x: float = 0.05
    init_perturb_y: float = 0.05
    init_perturb_yaw: float = 0.05
    ik_batch: int = 16
    skill_ik_batch: int = 1  # warm-start-only replay IK by default
    retry_factor: int = 20  # attempt budget = retry_factor * requested successes
    ik: IkParams = field(default_factory=IkParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    executor: ExecutorParams = field(default_factory=ExecutorParams)

    def __post_init__(self):
        for name in ("motion_noise_sigma", "init_perturb_x", "init_perturb_y", "init_perturb_yaw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.ik_batch < 1 or self.skill_ik_batch < 1 or self.retry_factor < 1:
            raise ValueError("batch and retry settings must be >= 1")

    def without_motion_noise(self) -> "GenConfig":
        return replace(self, motion_noise_sigma=0.0)

    def without_init_noise(self) -> "GenConfig":
        return replace(self, init_perturb_x=0.0, init_perturb_y=0.0, init_perturb_yaw=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ik"]["ladder"] = [list(level) for level in self.ik.ladder]
        return d

    @staticmethod
    def from_dict(data: dict) -> "GenConfig":
        data = dict(data)
        ik = dict(data.pop("ik", {}))
        if "ladder" in ik:
            ik["ladder"] = tuple(tuple(level) for level in ik["ladder"])
        planner = dict(data.pop("planner", {}))
        executor = dict(data.pop("executor", {}))
        _check_fields(GenConfig, data)
        _check_fields(IkParams, ik)
        _check_fields(PlannerParams, planner)
        _check_fields(ExecutorParams, executor)
        return GenConfig(
            ik=IkParams(**ik),
            planner=PlannerParams(**planner),
            executor=ExecutorParams(**executor),
            **data,
        )


def _check_fields(cls, data: dict) -> None:
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")


def load_config(path: str | Path) -> GenConfig:
    with open(path) as f:
        data = yaml.safe_load(f) or {}
    if data.get("format", FORMAT_TAG) != FORMAT_TAG:
        raise ValueError(f"unsupported config format {data.get('format')!r}")
    data.pop("format", None)
    return GenConfig.from_dict(data)


def save_config(path: str | Path, cfg: GenConfig) -> None:
    data = {"format": FORMAT_TAG, **cfg.to_dict()}
    with open(path, "w") as f:
        yaml.safe_dump(data, f, sort_keys=False)
