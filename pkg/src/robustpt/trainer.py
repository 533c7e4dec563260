"""Outer rollout/update loop, evaluation and the curriculum noise scheduler."""

from __future__ import annotations

import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import numkit as nk
from .envs import Context, PerturbationSpec, make_env, perturb_action, perturb_observation
from .errors import ConfigError, ContractError, DomainError, NumericalAbort
from .objective import LossConfig, robust_loss
from .policy import PolicyParams, bind, init_params, load_params, mean_action, mean_graph, save_params
from .rewards import RewardConfig
from .rollout import collect_group, make_minibatches

METRICS_HEADER = (
    "iter,env_steps,mean_return,success_rate,p_ma,eps_obs,eps_act,"
    "loss_ppo,loss_jac,loss_smooth,grad_norm,wall_s"
)
EVAL_CONTEXT_OFFSET = 1_000_000


# ---------------------------------------------------------------------------
# curriculum
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CurriculumState:
    eps_obs: float = 0.0
    eps_act: float = 0.0
    p_ma: float = 0.0
    gamma: float = 0.9
    tau_low: float = 0.6
    tau_high: float = 0.8
    delta_obs: float = 0.2
    delta_act: float = 0.02
    obs_range: tuple = (0.0, 1.0)
    act_range: tuple = (0.0, 0.3)
    interval: int = 1

    def __post_init__(self):
        lo, hi = self.obs_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError("curriculum.obs_range", "need 0 <= min <= max <= 1")
        lo, hi = self.act_range
        if not 0.0 <= lo <= hi:
            raise ConfigError("curriculum.act_range", "need 0 <= min <= max")
        if not self.obs_range[0] <= self.eps_obs <= self.obs_range[1]:
            raise ConfigError("curriculum.eps_obs", "initial level outside obs_range")
        if not self.act_range[0] <= self.eps_act <= self.act_range[1]:
            raise ConfigError("curriculum.eps_act", "initial level outside act_range")
        if not 0.0 <= self.p_ma <= 1.0:
            raise ConfigError("curriculum.p_ma", "must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("curriculum.gamma", "must lie in [0, 1]")
        if not 0.0 <= self.tau_low <= self.tau_high <= 1.0:
            raise ConfigError("curriculum.tau_low", "need 0 <= tau_low <= tau_high <= 1")
        if self.delta_obs < 0 or self.delta_act < 0:
            raise ConfigError("curriculum.delta_obs", "steps must be >= 0")
        if int(self.interval) != self.interval or self.interval < 1:
            raise ConfigError("curriculum.interval", "must be an integer >= 1")


def curriculum_update(state: CurriculumState, p: float) -> CurriculumState:
    """Smooth the success rate, then raise or lower both noise levels."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"success rate must lie in [0, 1], got {p}")
    p_ma = state.gamma * p + (1.0 - state.gamma) * state.p_ma
    p_ma = min(max(p_ma, 0.0), 1.0)
    eps_obs, eps_act = state.eps_obs, state.eps_act
    if p_ma > state.tau_high:
        eps_obs = min(eps_obs + state.delta_obs, state.obs_range[1])
        eps_act = min(eps_act + state.delta_act, state.act_range[1])
    elif p_ma < state.tau_low:
        eps_obs = max(eps_obs - state.delta_obs, state.obs_range[0])
        eps_act = max(eps_act - state.delta_act, state.act_range[0])
    return replace(state, p_ma=p_ma, eps_obs=eps_obs, eps_act=eps_act)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


DEFAULT_ENV_PARAMS = {
    "linear": {
        "A": [[0.9, 0.0], [0.0, 0.9]],
        "B": [[0.3, 0.0], [0.0, 0.3]],
        "horizon": 30,
        "success_radius": 0.1,
    },
    "point-image": {},
}
VECTOR_CHANNELS = ("none", "vector-ball")


def _default_env_params():
    return {}


@dataclass
class TrainConfig:
    M: int = 12
    N: int = 10
    K: int = 8
    contexts: int = 16
    batch_size: int = 64
    lr: float = 1e-3
    grad_clip: float = 1.0
    hidden: tuple = (32,)
    init_log_std: float = -0.5
    eval_episodes: int = 16
    minibatch_unit: str = "step"
    workers: int = 1
    record_wall_time: bool = False
    checkpoint_every: int = 0
    init_checkpoint: str | None = None
    seed: int = 0
    out_dir: str | None = None
    env_kind: str = "linear"
    env_params: dict = field(default_factory=_default_env_params)
    channel: str = "vector-ball"
    p_clean: float = 0.15
    loss: LossConfig = field(default_factory=LossConfig)
    curriculum: CurriculumState = field(default_factory=CurriculumState)
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        for key in ("M", "N", "K", "contexts", "batch_size", "eval_episodes", "workers"):
            v = getattr(self, key)
            if int(v) != v or v < 1:
                raise ConfigError(f"train.{key}", "must be an integer >= 1")
        if self.K < 2:
            raise ConfigError("train.K", "leave-one-out needs K >= 2")
        if not self.lr >= 0:
            raise ConfigError("train.lr", "must be >= 0")
        if not self.grad_clip > 0:
            raise ConfigError("train.grad_clip", "must be > 0")
        if self.minibatch_unit not in ("step", "trajectory"):
            raise ConfigError("train.minibatch_unit", "must be 'step' or 'trajectory'")
        if self.checkpoint_every < 0:
            raise ConfigError("train.checkpoint_every", "must be >= 0")
        if any(int(h) != h or h < 1 for h in self.hidden):
            raise ConfigError("policy.hidden", "layer widths must be positive integers")
        if self.env_kind not in ("linear", "point-image"):
            raise ConfigError("env.kind", "must be 'linear' or 'point-image'")
        try:
            PerturbationSpec(self.channel, 0.0, 0.0, self.p_clean)
        except (ContractError, DomainError) as exc:
            raise ConfigError("perturb.channel" if "channel" in str(exc) else "perturb.p_clean", str(exc)) from None
        if (self.env_kind == "linear") != (self.channel in VECTOR_CHANNELS) and self.channel != "none":
            raise ConfigError("perturb.channel", f"channel {self.channel!r} does not apply to env kind {self.env_kind!r}")

    def build_env(self):
        kw = {**DEFAULT_ENV_PARAMS[self.env_kind], **self.env_params}
        try:
            return make_env(self.env_kind, reward_config=self.reward, **kw)
        except (TypeError, ContractError, DomainError) as exc:
            raise ConfigError("env.params", str(exc)) from None

    def spec(self, state: CurriculumState) -> PerturbationSpec:
        return PerturbationSpec(self.channel, state.eps_obs, state.eps_act, self.p_clean)


@dataclass
class MetricsRow:
    iter: int
    env_steps: int
    mean_return: float
    success_rate: float
    p_ma: float
    eps_obs: float
    eps_act: float
    loss_ppo: float
    loss_jac: float
    loss_smooth: float
    grad_norm: float
    wall_s: float

    def csv(self) -> str:
        vals = [str(self.iter), str(self.env_steps)]
        vals += [f"{v:.9g}" for v in asdict(self).values() if isinstance(v, float)]
        return ",".join(vals)


@dataclass
class TrainResult:
    params: PolicyParams
    metrics: list
    curriculum: CurriculumState
    history: list  # parameter snapshot at the end of every outer iteration


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def evaluate(params: PolicyParams, env, n_episodes: int, spec: PerturbationSpec, rng: nk.RngStream, context_offset: int = EVAL_CONTEXT_OFFSET):
    """Success fraction and mean dense return using mean actions.

    Episode ``i`` uses context ``(rng.seed, context_offset + i)`` and draws its
    perturbations from ``rng.child(i)``.
    """
    if n_episodes < 1:
        raise DomainError("n_episodes must be >= 1")
    wins = 0
    total = 0.0
    for i in range(n_episodes):
        ep_rng = rng.child(i)
        obs = env.reset(Context(rng.seed, context_offset + i))
        done, success, ret = False, False, 0.0
        while not done:
            a = mean_action(params, env.features(perturb_observation(obs, spec, ep_rng)))
            res = env.step(perturb_action(a, spec.sigma, ep_rng))
            ret += res.terms.total
            success = success or res.success
            obs, done = res.observation, res.done
        wins += int(success)
        total += ret
    return wins / n_episodes, total / n_episodes


# ---------------------------------------------------------------------------
# supervised initialisation
# ---------------------------------------------------------------------------


def expert_dataset(env, n_contexts: int, seed: int, context_offset: int = 2 * EVAL_CONTEXT_OFFSET):
    """(features, actions) from clean rollouts of ``env.expert_action``."""
    if not hasattr(env, "expert_action"):
        raise ContractError(f"{type(env).__name__} has no built-in expert")
    X, Y = [], []
    for i in range(n_contexts):
        obs = env.reset(Context(seed, context_offset + i))
        done = False
        while not done:
            a = env.expert_action()
            X.append(env.features(obs))
            Y.append(a)
            res = env.step(a)
            obs, done = res.observation, res.done
    return np.array(X), np.array(Y)


def fit_linear_policy(obs, actions, ridge: float = 1e-3, log_std: float = -0.5) -> PolicyParams:
    """Ridge regression of actions on features, packaged as a linear policy."""
    X = np.asarray(obs, dtype=np.float64)
    Y = np.asarray(actions, dtype=np.float64)
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    reg = ridge * np.eye(Xa.shape[1])
    reg[-1, -1] = 0.0
    coef = np.linalg.solve(Xa.T @ Xa + reg, Xa.T @ Y)
    return PolicyParams((coef[:-1].T.copy(),), (coef[-1].copy(),), np.full(Y.shape[1], float(log_std)))


def behavior_clone(params: PolicyParams, obs, actions, steps: int = 500, lr: float = 0.05) -> PolicyParams:
    """Full-batch gradient descent on the mean-action squared error."""
    X = np.asarray(obs, dtype=np.float64)
    Y = np.asarray(actions, dtype=np.float64)
    for _ in range(steps):
        tape = nk.Tape()
        pv = bind(tape, params)
        diff = nk.sub(mean_graph(pv, tape.const(X)), tape.const(Y))
        loss = nk.mean(nk.sum(nk.square(diff), axis=1))
        grads = nk.grad(loss, pv.leaves())
        arrays = params.arrays()
        n_mean = 2 * len(params.weights)  # log_std is not fitted
        new = [p - lr * g.reshape(p.shape) if i < n_mean else p for i, (p, g) in enumerate(zip(arrays, grads))]
        params = params.with_arrays(new)
    return params


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def clip_by_global_norm(grads, max_norm: float):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        factor = max_norm / norm
        return [g * factor for g in grads], norm
    return list(grads), norm


def initial_params(config: TrainConfig, env) -> PolicyParams:
    if config.init_checkpoint:
        params = load_params(config.init_checkpoint)
        if params.obs_dim != env.obs_dim or params.action_dim != env.action_dim:
            raise ConfigError("train.init_checkpoint", "checkpoint does not match the environment dimensions")
        return params
    sizes = [env.obs_dim, *config.hidden, env.action_dim]
    return init_params(sizes, nk.rng_stream(config.seed, ["init"]), log_std=config.init_log_std)


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump_abort(config: TrainConfig, params: PolicyParams, info: dict) -> str | None:
    if not config.out_dir:
        return None
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_params(params, out / "abort_params.ckpt")
    _atomic_text(out / "abort_state.json", json.dumps(info, indent=2, sort_keys=True, default=str) + "\n")
    return str(out / "abort_state.json")


def _collect(config: TrainConfig, env_pool, params, spec, m: int):
    C = config.contexts

    def one(c, env):
        ctx = Context(config.seed, (m - 1) * C + c)
        return collect_group(env, params, ctx, config.K, spec, nk.rng_stream(config.seed, ["rollout", m, c]))

    if config.workers == 1:
        return [one(c, env_pool[0]) for c in range(C)]
    # one env per context so no instance is shared between threads
    with ThreadPoolExecutor(max_workers=config.workers) as ex:
        return list(ex.map(lambda c: one(c, env_pool[c]), range(C)))


def train(config: TrainConfig, params: PolicyParams | None = None) -> TrainResult:
    """Run ``M`` outer iterations of collect → ``N`` updates → reference sync."""
    env = config.build_env()
    env_pool = [env] if config.workers == 1 else [config.build_env() for _ in range(config.contexts)]
    eval_env = config.build_env()
    if params is None:
        params = initial_params(config, env)
    elif params.obs_dim != env.obs_dim or params.action_dim != env.action_dim:
        raise ContractError("initial parameters do not match the environment")
    ref = params
    state = config.curriculum
    out = Path(config.out_dir) if config.out_dir else None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    rows: list[MetricsRow] = []
    history = []
    env_steps = 0
    t0 = time.perf_counter()

    for m in range(1, config.M + 1):
        spec = config.spec(state)
        groups = _collect(config, env_pool, params, spec, m)
        trajs = [t for g in groups for t in g.trajectories]
        env_steps += sum(len(t) for t in trajs)
        mean_return = float(np.mean([t.ret for t in trajs]))
        success_rate = float(np.mean([t.success for t in trajs]))

        mb_rng = nk.rng_stream(config.seed, ["minibatch", m])
        pool: list = []
        epoch = 0
        sums = np.zeros(4)
        for n in range(config.N):
            if not pool:
                pool = make_minibatches(groups, config.batch_size, mb_rng.child(epoch), config.minibatch_unit)
                epoch += 1
            batch = pool.pop(0)
            lb = robust_loss(params, ref, batch, config.loss, nk.rng_stream(config.seed, ["jac", m, n]))
            grads, norm = clip_by_global_norm(lb.grads, config.grad_clip)
            if not (math.isfinite(lb.total) and math.isfinite(norm)):
                dump = _dump_abort(
                    config,
                    params,
                    {"iter": m, "update": n, "ppo": lb.ppo, "jac": lb.jac, "smooth": lb.smooth, "grad_norm": norm},
                )
                raise NumericalAbort(f"non-finite loss at iteration {m}, update {n}", dump)
            params = params.with_arrays([p - config.lr * g for p, g in zip(params.arrays(), grads)])
            sums += (lb.ppo, lb.jac, lb.smooth, norm)
        sums /= config.N
        ref = params
        history.append(params)

        if m % state.interval == 0:
            p, _ = evaluate(params, eval_env, config.eval_episodes, spec, nk.rng_stream(config.seed, ["eval", m]))
            state = curriculum_update(state, p)

        wall = time.perf_counter() - t0 if config.record_wall_time else 0.0
        rows.append(
            MetricsRow(
                m,
                env_steps,
                mean_return,
                success_rate,
                state.p_ma,
                spec.eps_obs,
                spec.sigma,
                float(sums[0]),
                float(sums[1]),
                float(sums[2]),
                float(sums[3]),
                float(wall),
            )
        )
        if out is not None:
            _atomic_text(out / "metrics.csv", metrics_csv(rows))
            if config.checkpoint_every and m % config.checkpoint_every == 0:
                save_params(params, out / "checkpoints" / f"iter_{m:04d}.ckpt")

    if out is not None:
        save_params(params, out / "checkpoints" / "final.ckpt")
    return TrainResult(params, rows, state, history)


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    buf.write(METRICS_HEADER + "\n")
    for r in rows:
        buf.write(r.csv() + "\n")
    return buf.getvalue()
