"""K-rollout collection, leave-one-out advantages and minibatch assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numkit as nk
from .envs import Context, PerturbationSpec, perturb_action, perturb_observation
from .errors import DomainError
from .policy import PolicyParams, log_prob, sample_action


@dataclass
class Trajectory:
    states: np.ndarray  # (T, d_s) true state before each action
    observations: np.ndarray  # (T, d_obs) policy inputs actually delivered
    actions: np.ndarray  # (T, d_a) sampled by the policy
    executed: np.ndarray  # (T, d_a) after action noise
    logp: np.ndarray  # (T,) under the sampling policy
    rewards: np.ndarray  # (T,) weighted totals
    terms: list
    success: bool
    context_id: int
    rollout_id: int

    @property
    def ret(self) -> float:
        return float(np.sum(self.rewards))

    def __len__(self):
        return self.rewards.shape[0]


@dataclass
class RolloutGroup:
    context_id: int
    trajectories: list
    advantages: np.ndarray

    @property
    def returns(self) -> np.ndarray:
        return np.array([t.ret for t in self.trajectories])


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    # trajectory id per row; only used for rollout-level ratios
    segment: np.ndarray | None = None

    def __len__(self):
        return self.obs.shape[0]


def loo_advantages(returns: Sequence[float]) -> np.ndarray:
    """``A_k = r_k - mean_{j≠k} r_j``."""
    r = np.asarray(returns, dtype=np.float64).reshape(-1)
    K = r.shape[0]
    if K < 2:
        raise DomainError("leave-one-out baseline needs K >= 2")
    # r_k - (S - r_k)/(K-1) = (K r_k - S)/(K-1); subtract the mean so Σ A = 0 holds to rounding
    adv = (K * r - r.sum()) / (K - 1)
    return adv - adv.mean()


def run_episode(env, params: PolicyParams, context: Context, spec: PerturbationSpec, rng: nk.RngStream, rollout_id: int = 0) -> Trajectory:
    """One episode: perturb obs → sample → record log-prob → perturb action → step."""
    obs = env.reset(context)
    states, feats, acts, execd, rews, terms = [], [], [], [], [], []
    success = False
    done = False
    while not done:
        states.append(env.state.copy())
        seen = env.features(perturb_observation(obs, spec, rng))
        a = sample_action(params, seen, rng)
        ex = perturb_action(a, spec.sigma, rng)
        res = env.step(ex)
        feats.append(seen)
        acts.append(a)
        execd.append(ex)
        rews.append(res.terms.total)
        terms.append(res.terms)
        success = success or res.success
        obs, done = res.observation, res.done
    feats = np.array(feats)
    acts = np.array(acts)
    return Trajectory(
        np.array(states),
        feats,
        acts,
        np.array(execd),
        np.asarray(log_prob(params, feats, acts)),
        np.array(rews),
        terms,
        success,
        context.id,
        rollout_id,
    )


def collect_group(env, sampling_params: PolicyParams, context: Context, K: int, spec: PerturbationSpec, rng: nk.RngStream) -> RolloutGroup:
    """``K`` episodes from one context; rollout ``k`` draws from ``rng.child(k)``."""
    if K < 2:
        raise DomainError("need K >= 2 rollouts per context")
    trajs = [run_episode(env, sampling_params, context, spec, rng.child(k), k) for k in range(K)]
    return RolloutGroup(context.id, trajs, loo_advantages([t.ret for t in trajs]))


def flatten_groups(groups: Sequence[RolloutGroup]) -> Minibatch:
    obs, acts, lps, advs, seg = [], [], [], [], []
    tid = 0
    for g in groups:
        for traj, adv in zip(g.trajectories, g.advantages):
            n = len(traj)
            obs.append(traj.observations)
            acts.append(traj.actions)
            lps.append(traj.logp)
            advs.append(np.full(n, adv))
            seg.append(np.full(n, tid))
            tid += 1
    if not obs:
        raise DomainError("empty rollout buffer")
    return Minibatch(np.concatenate(obs), np.concatenate(acts), np.concatenate(lps), np.concatenate(advs), np.concatenate(seg))


def make_minibatches(groups: Sequence[RolloutGroup], batch_size: int, rng: nk.RngStream, unit: str = "step") -> list[Minibatch]:
    """One shuffled pass over the buffer.

    ``unit="step"`` partitions individual steps; ``unit="trajectory"`` keeps
    whole trajectories together (``batch_size`` then counts trajectories).
    """
    if batch_size < 1:
        raise DomainError("batch_size must be >= 1")
    flat = flatten_groups(groups)
    if unit == "step":
        order = rng.permutation(len(flat))
        chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    elif unit == "trajectory":
        n_traj = int(flat.segment.max()) + 1
        torder = rng.permutation(n_traj)
        chunks = []
        for i in range(0, n_traj, batch_size):
            ids = torder[i : i + batch_size]
            chunks.append(np.concatenate([np.flatnonzero(flat.segment == t) for t in ids]))
    else:
        raise DomainError(f"unknown minibatch unit {unit!r}")
    return [
        Minibatch(flat.obs[idx], flat.actions[idx], flat.logp_old[idx], flat.advantages[idx], flat.segment[idx])
        for idx in chunks
    ]
