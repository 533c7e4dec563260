"""Robust post-training loss: clipped PPO + α·Jacobian penalty + β·smoothness penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .errors import ConfigError, ContractError, DomainError
from .policy import PolicyParams, ParamVars, bind, input_grad_graph, log_prob_graph, mean_action, mean_graph
from .rollout import Minibatch

JAC_MODES = ("exact-no-flow", "fd-hutchinson")
RATIO_MODES = ("step", "rollout")


@dataclass(frozen=True)
class LossConfig:
    clip_low: float = 0.2
    clip_high: float = 0.2
    alpha: float = 0.005
    beta: float = 0.0005
    g_max: float = 100.0
    jac_mode: str = "fd-hutchinson"
    probes: int = 8
    probe_step: float = 1e-4
    ratio_mode: str = "step"

    def __post_init__(self):
        if not 0 < self.clip_low < 1:
            raise ConfigError("loss.clip_low", "must lie in (0, 1)")
        if not 0 < self.clip_high < 1:
            raise ConfigError("loss.clip_high", "must lie in (0, 1)")
        if self.alpha < 0:
            raise ConfigError("loss.alpha", "must be >= 0")
        if self.beta < 0:
            raise ConfigError("loss.beta", "must be >= 0")
        if not self.g_max > 0:
            raise ConfigError("loss.g_max", "must be > 0")
        if self.jac_mode not in JAC_MODES:
            raise ConfigError("loss.jac_mode", f"must be one of {JAC_MODES}")
        if int(self.probes) != self.probes or self.probes < 1:
            raise ConfigError("loss.probes", "must be an integer >= 1")
        if not self.probe_step > 0:
            raise ConfigError("loss.probe_step", "must be > 0")
        if self.ratio_mode not in RATIO_MODES:
            raise ConfigError("loss.ratio_mode", f"must be one of {RATIO_MODES}")


@dataclass
class LossBreakdown:
    ppo: float
    jac: float
    smooth: float
    total: float
    grads: list  # aligned with PolicyParams.arrays()
    grad_norms: dict

    @property
    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(g * g)) for g in self.grads))


def ppo_term(logp_new: float, logp_old: float, advantage: float, eps_low: float = 0.2, eps_high: float = 0.2) -> float:
    """``-min(η A, clip(η, 1-ε_low, 1+ε_high) A)`` with ``η = exp(logp_new - logp_old)``."""
    eta = math.exp(logp_new - logp_old)
    clipped = min(max(eta, 1.0 - eps_low), 1.0 + eps_high)
    return -min(eta * advantage, clipped * advantage)


# ---------------------------------------------------------------------------
# graph builders
# ---------------------------------------------------------------------------


def _segment_matrix(segment: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ids, inverse = np.unique(segment, return_inverse=True)
    S = np.zeros((ids.shape[0], segment.shape[0]))
    S[inverse, np.arange(segment.shape[0])] = 1.0
    return S, inverse


def ppo_graph(pv: ParamVars, batch: Minibatch, cfg: LossConfig) -> nk.Var:
    tape = pv.log_std.tape
    x = tape.const(batch.obs)
    a = tape.const(batch.actions)
    log_ratio = nk.sub(log_prob_graph(pv, x, a), tape.const(batch.logp_old.reshape(-1, 1)))
    adv = batch.advantages.reshape(-1, 1)
    if cfg.ratio_mode == "rollout":
        if batch.segment is None:
            raise ContractError("rollout-level ratios need trajectory segments")
        S, inverse = _segment_matrix(batch.segment)
        log_ratio = nk.matmul(tape.const(S), log_ratio)
        first = np.zeros(S.shape[0], dtype=int)
        first[inverse[::-1]] = np.arange(len(inverse))[::-1]
        adv = adv[first]
    eta = nk.exp(log_ratio)
    A = tape.const(adv)
    surr = nk.minimum(nk.mul(eta, A), nk.mul(nk.clip(eta, 1.0 - cfg.clip_low, 1.0 + cfg.clip_high), A))
    return nk.neg(nk.mean(surr))


def _input_grad_sq_exact(pv: ParamVars, obs: np.ndarray, actions: np.ndarray) -> nk.Var:
    tape = pv.log_std.tape
    g = input_grad_graph(pv, tape.const(obs), tape.const(actions))
    return nk.sum(nk.square(g), axis=1)


def _input_grad_sq_hutchinson(pv: ParamVars, obs: np.ndarray, actions: np.ndarray, m: int, h: float, rng: nk.RngStream) -> nk.Var:
    tape = pv.log_std.tape
    B, d = obs.shape
    a = tape.const(actions)
    acc = None
    for _ in range(m):
        v = rng.unit_sphere(B, d)
        lp_plus = log_prob_graph(pv, tape.const(obs + h * v), a)
        lp_minus = log_prob_graph(pv, tape.const(obs - h * v), a)
        dd = nk.scale(nk.sub(lp_plus, lp_minus), 1.0 / (2.0 * h))
        est = nk.scale(nk.square(dd), float(d))
        acc = est if acc is None else nk.add(acc, est)
    return nk.scale(acc, 1.0 / m)


def jacobian_graph(pv: ParamVars, obs: np.ndarray, actions: np.ndarray, cfg: LossConfig, rng: nk.RngStream | None) -> nk.Var:
    """``mean_i min(‖∇_s log π(a_i|s_i)‖², G_max)`` as a scalar node."""
    if obs.shape[0] == 0:
        raise DomainError("empty batch")
    if cfg.jac_mode == "exact-no-flow":
        sq = _input_grad_sq_exact(pv, obs, actions)
    else:
        if rng is None:
            raise ContractError("fd-hutchinson mode needs a random stream for probes")
        sq = _input_grad_sq_hutchinson(pv, obs, actions, cfg.probes, cfg.probe_step, rng)
    return nk.mean(nk.clamp_max(sq, cfg.g_max))


def smooth_graph(pv: ParamVars, ref_params: PolicyParams, states: np.ndarray) -> nk.Var:
    """``mean_s ‖μ_θ(s) - μ_ref(s)‖²``; the reference is a constant."""
    if states.shape[0] == 0:
        raise DomainError("empty state batch")
    tape = pv.log_std.tape
    ref_mu = tape.const(mean_action(ref_params, states))
    diff = nk.sub(mean_graph(pv, tape.const(states)), ref_mu)
    return nk.mean(nk.sum(nk.square(diff), axis=1))


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _grads(tape_out: nk.Var, pv: ParamVars, params: PolicyParams) -> list[np.ndarray]:
    raw = nk.grad(tape_out, pv.leaves())
    return [g.reshape(p.shape) for g, p in zip(raw, params.arrays())]


def _group_norms(grads, params: PolicyParams) -> dict:
    n = len(params.weights)
    sq = lambda gs: math.sqrt(sum(float(np.sum(g * g)) for g in gs))  # noqa: E731
    return {"weights": sq(grads[:n]), "biases": sq(grads[n : 2 * n]), "log_std": sq(grads[2 * n :])}


def jacobian_penalty(
    params: PolicyParams,
    obs,
    actions,
    g_max: float = 100.0,
    mode: str = "exact-no-flow",
    m: int = 8,
    h: float = 1e-4,
    rng: nk.RngStream | None = None,
) -> tuple[float, list[np.ndarray]]:
    """Clamped mean squared input-gradient norm and its parameter gradient."""
    cfg = LossConfig(alpha=1.0, beta=0.0, g_max=g_max, jac_mode=mode, probes=m, probe_step=h)
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.float64).reshape(obs.shape[0], -1)
    tape = nk.Tape()
    pv = bind(tape, params)
    out = jacobian_graph(pv, obs, actions, cfg, rng)
    return float(out.value[0, 0]), _grads(out, pv, params)


def smooth_penalty(params: PolicyParams, ref_params: PolicyParams, states) -> float:
    if not params.same_architecture(ref_params):
        raise ContractError("params and reference differ in architecture")
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    diff = mean_action(params, states) - mean_action(ref_params, states)
    return float(np.mean(np.sum(diff * diff, axis=1)))


def robust_loss(
    params: PolicyParams,
    ref_params: PolicyParams,
    batch: Minibatch,
    config: LossConfig,
    rng: nk.RngStream | None = None,
) -> LossBreakdown:
    """``L = L_PPO + α R_Jac + β R_Smooth`` on one minibatch, with gradients."""
    if not params.same_architecture(ref_params):
        raise ContractError("params and reference differ in architecture")
    tape = nk.Tape()
    pv = bind(tape, params)
    ppo = ppo_graph(pv, batch, config)
    jac = jacobian_graph(pv, batch.obs, batch.actions, config, rng)
    smooth = smooth_graph(pv, ref_params, batch.obs)
    total = nk.add(nk.add(ppo, nk.scale(jac, config.alpha)), nk.scale(smooth, config.beta))
    grads = _grads(total, pv, params)
    v_ppo, v_jac, v_smooth = float(ppo.value[0, 0]), float(jac.value[0, 0]), float(smooth.value[0, 0])
    return LossBreakdown(
        v_ppo,
        v_jac,
        v_smooth,
        v_ppo + config.alpha * v_jac + config.beta * v_smooth,
        grads,
        _group_norms(grads, params),
    )
