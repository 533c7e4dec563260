"""Flat dotted-key run configuration (JSON) and its translation to typed configs."""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .bounds import Scenario, default_suite
from .errors import ConfigError
from .objective import LossConfig
from .rewards import RewardConfig
from .trainer import CurriculumState, TrainConfig

DEFAULTS: dict = {
    "seed": 0,
    "out": "out",
    "env.kind": "linear",
    "env.params": {},
    "policy.hidden": [32],
    "policy.init_log_std": -0.5,
    "train.M": 12,
    "train.N": 10,
    "train.K": 8,
    "train.contexts": 16,
    "train.batch_size": 64,
    "train.lr": 1e-3,
    "train.grad_clip": 1.0,
    "train.eval_episodes": 16,
    "train.minibatch_unit": "step",
    "train.workers": 1,
    "train.record_wall_time": False,
    "train.checkpoint_every": 0,
    "train.init_checkpoint": None,
    "train.bc_contexts": 0,
    "train.bc_steps": 500,
    "train.bc_lr": 0.05,
    "perturb.channel": "vector-ball",
    "perturb.p_clean": 0.15,
    "curriculum.eps_obs": 0.0,
    "curriculum.eps_act": 0.0,
    "curriculum.p_ma": 0.0,
    "curriculum.gamma": 0.9,
    "curriculum.tau_low": 0.6,
    "curriculum.tau_high": 0.8,
    "curriculum.delta_obs": 0.2,
    "curriculum.delta_act": 0.02,
    "curriculum.obs_range": [0.0, 1.0],
    "curriculum.act_range": [0.0, 0.3],
    "curriculum.interval": 1,
    "loss.clip_low": 0.2,
    "loss.clip_high": 0.2,
    "loss.alpha": 0.005,
    "loss.beta": 0.0005,
    "loss.g_max": 100.0,
    "loss.jac_mode": "fd-hutchinson",
    "loss.probes": 8,
    "loss.probe_step": 1e-4,
    "loss.ratio_mode": "step",
    "reward.w_proximity": 0.01,
    "reward.w_progress": 0.01,
    "reward.w_velocity": 0.001,
    "reward.w_acceleration": 0.001,
    "reward.w_success": 1.0,
    "reward.milestones": 4,
    "eval.checkpoint": None,
    "eval.episodes": 50,
    "eval.eps_obs": 0.5,
    "eval.sigmas": [0.1, 0.2, 0.3],
    "eval.joint_sigma": 0.1,
    "demo.G": 32,
    "demo.position": [0.3, 0.6],
    "demo.goal": [0.7, 0.35],
    "demo.levels": [0.0, 0.5, 1.0],
    "demo.channels": ["shift", "rotation", "color", "occlusion", "erasing"],
    "bounds.suite": "default",
}

# keys whose value may be null or a string
_OPTIONAL_STR = {"train.init_checkpoint", "eval.checkpoint"}


def _check_type(key: str, value, default):
    if key in _OPTIONAL_STR:
        if value is not None and not isinstance(value, str):
            raise ConfigError(key, "must be a path string or null")
        return value
    if key == "bounds.suite":
        if value == "default" or isinstance(value, list):
            return value
        raise ConfigError(key, "must be \"default\" or a list of scenario objects")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(key, "must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, "must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(key, "must be a list")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(key, "must be an object")
        return value
    return value


def resolve(raw: dict | None = None, **overrides) -> dict:
    """Defaults overlaid with ``raw`` and then ``overrides`` (unknown keys rejected)."""
    cfg = copy.deepcopy(DEFAULTS)
    raw = dict(raw or {})
    for k, v in overrides.items():
        if v is not None:
            raw[k] = v
    for key, value in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown configuration key")
        cfg[key] = _check_type(key, value, DEFAULTS[key])
    return cfg


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("--config", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("--config", "top level must be an object")
    return raw


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def _section(cfg: dict, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def loss_config(cfg: dict) -> LossConfig:
    return LossConfig(**_section(cfg, "loss"))


def reward_config(cfg: dict) -> RewardConfig:
    return RewardConfig(**_section(cfg, "reward"))


def curriculum_state(cfg: dict) -> CurriculumState:
    kw = _section(cfg, "curriculum")
    for key in ("obs_range", "act_range"):
        v = kw[key]
        if len(v) != 2 or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise ConfigError(f"curriculum.{key}", "must be a [min, max] pair")
        kw[key] = (float(v[0]), float(v[1]))
    return CurriculumState(**kw)


def train_config(cfg: dict) -> TrainConfig:
    t = _section(cfg, "train")
    for key in ("bc_contexts", "bc_steps", "bc_lr"):
        t.pop(key)
    hidden = cfg["policy.hidden"]
    if not all(isinstance(h, int) and not isinstance(h, bool) for h in hidden):
        raise ConfigError("policy.hidden", "layer widths must be integers")
    return TrainConfig(
        **t,
        hidden=tuple(hidden),
        init_log_std=cfg["policy.init_log_std"],
        seed=cfg["seed"],
        out_dir=cfg["out"],
        env_kind=cfg["env.kind"],
        env_params=dict(cfg["env.params"]),
        channel=cfg["perturb.channel"],
        p_clean=cfg["perturb.p_clean"],
        loss=loss_config(cfg),
        curriculum=curriculum_state(cfg),
        reward=reward_config(cfg),
    )


def bounds_suite(cfg: dict) -> list[Scenario]:
    suite = cfg["bounds.suite"]
    if suite == "default":
        return default_suite()
    out = []
    for i, item in enumerate(suite):
        where = f"bounds.suite[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(where, "scenario must be an object")
        out.append(Scenario.from_dict(item, where))
    return out
