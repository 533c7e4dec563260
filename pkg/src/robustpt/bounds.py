"""Explicit-constant return-gap bounds and their Monte Carlo certification.

Returns are summed over the ``H`` post-transition states: the shared initial
state carries no gap, so

    J(π) = Σ_{t=1..H} γ^{t-1} r(s_t, a_t)

with ``γ = 1`` for the undiscounted bounds.  Expert rollouts are clean; policy
rollouts see an exact-radius observation displacement and Gaussian action
noise.  Both use deterministic mean actions.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np
from scipy import integrate

from . import numkit as nk
from .envs import LinearLipschitzEnv, PerturbationSpec
from .errors import ConfigError, ContractError, DomainError, UnsupportedModeError
from .policy import PolicyParams, StateBox, log_prob, input_grad_logprob, linear_policy, mean_action

KINDS = ("T1", "T2", "T3", "C1", "C2")
REPORT_HEADER = "theorem,H,L_f,L_r,lambda,eps_s,eps_off,sum_delta,sigma,d,gamma,gap_mean,gap_se,bound,satisfied"


# ---------------------------------------------------------------------------
# bound calculators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundParams:
    H: int
    L_f: float
    L_r: float
    lam: float = 0.0
    eps_s: float = 0.0
    eps_offline: float = 0.0
    deltas: tuple = ()
    sigma: float = 0.0
    d: int = 1
    gamma: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(x) for x in self.deltas))
        for name in ("H", "L_f", "L_r", "lam", "eps_s", "eps_offline", "sigma", "d"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be non-negative")
        if any(not x >= 0 for x in self.deltas):
            raise DomainError("every drift delta must be non-negative")
        if int(self.H) != self.H or int(self.d) != self.d:
            raise DomainError("H and d must be integers")

    @property
    def sum_delta(self) -> float:
        return float(math.fsum(self.deltas))

    def drive(self, kind: str) -> float:
        """Per-step drive ``c`` entering the deviation recursion."""
        noise = self.sigma * math.sqrt(self.d)
        if kind == "T1":
            return self.lam * self.eps_s + self.eps_offline
        if kind == "T2":
            return self.eps_offline + self.sum_delta + noise
        if kind in ("T3", "C2"):
            return self.lam * self.eps_s + self.eps_offline + self.sum_delta + noise
        if kind == "C1":
            return self.lam * self.eps_s
        raise DomainError(f"unknown bound kind {kind!r}")


def deviation_bound(L_f: float, c: float, t: int) -> float:
    """Unrolled ``d_{k+1} <= L_f (d_k + c)`` from ``d_0 = 0``."""
    if not L_f > 0:
        raise DomainError("L_f must be > 0")
    if c < 0 or t < 0:
        raise DomainError("need c >= 0 and t >= 0")
    if t == 0 or c == 0:
        return 0.0
    if L_f == 1.0:
        return c * t * L_f
    return c * L_f * (L_f**t - 1.0) / (L_f - 1.0)


def _summed(L_f: float, L_r: float, c: float, H: int) -> float:
    if c == 0:
        return 0.0
    return L_r * math.fsum(deviation_bound(L_f, c, t) + c for t in range(1, H + 1))


def theorem_bound(kind: str, p: BoundParams) -> float:
    if kind not in KINDS:
        raise DomainError(f"unknown bound kind {kind!r}")
    if kind in ("T1", "T2", "T3"):
        if p.L_f == 0:
            raise DomainError("assumption L_f > 0 violated")
        return _summed(p.L_f, p.L_r, p.drive(kind), int(p.H))
    if not p.L_f < 1:
        raise DomainError("contractive-dynamics assumption L_f < 1 violated")
    if kind == "C1":
        if p.eps_offline != 0:
            raise DomainError("assumption eps_offline = 0 violated")
        return p.H * p.L_r * p.drive("C1") / (1.0 - p.L_f)
    g = p.gamma
    if g is None or not 0 < g < 1:
        raise DomainError("discount assumption gamma in (0, 1) violated")
    if not g * p.L_f < 1:
        raise DomainError("assumption gamma * L_f < 1 violated")
    C = p.drive("C2")
    return p.L_r * C * (p.L_f / (1.0 - p.L_f) * (1.0 / (1.0 - g) - 1.0 / (1.0 - g * p.L_f)) + 1.0 / (1.0 - g))


# ---------------------------------------------------------------------------
# policy gaps on a box
# ---------------------------------------------------------------------------


def _linear_parts(params: PolicyParams):
    if not params.is_linear:
        raise UnsupportedModeError("exact sup-norm gaps need linear policies; use sampled estimation for nonlinear ones")
    return params.weights[0], params.biases[0]


def offline_gap(expert: PolicyParams, policy: PolicyParams, box: StateBox) -> float:
    """``max_{s in box} ‖μ(s) - μ*(s)‖``, attained at a vertex (convexity)."""
    K, b = _linear_parts(policy)
    Ks, bs = _linear_parts(expert)
    if K.shape != Ks.shape or box.dim != K.shape[1]:
        raise ContractError("policies and box disagree in dimension")
    V = box.vertices()
    return float(np.max(np.linalg.norm(V @ (K - Ks).T + (b - bs), axis=1)))


def policy_drift(new: PolicyParams, old: PolicyParams, box: StateBox) -> float:
    return offline_gap(old, new, box)


# ---------------------------------------------------------------------------
# Monte Carlo return gap
# ---------------------------------------------------------------------------


@dataclass
class GapStats:
    mean: float
    se: float
    n: int
    gaps: np.ndarray  # per rollout
    deviation: np.ndarray  # (n, H+1) ‖s_t - s_t*‖
    noise_norm: np.ndarray  # (n, H) realized ‖ξ_t‖

    def __iter__(self):
        yield self.mean
        yield self.se


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    if x.shape[0] < 2:
        return float(np.mean(x)), 0.0
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.shape[0]))


def empirical_gap(
    env: LinearLipschitzEnv,
    expert: PolicyParams,
    policy: PolicyParams,
    spec: PerturbationSpec,
    n_rollouts: int,
    rng: nk.RngStream,
    H: int | None = None,
    gamma: float | None = None,
) -> GapStats:
    """Paired rollouts from shared initial states; returns ``E[J(π*) - J(π)]`` stats.

    Step ``t`` draws from fixed sub-streams in a fixed order, so runs with a
    longer horizon extend the paths of shorter ones (common random numbers).
    """
    if n_rollouts < 1:
        raise DomainError("need at least one rollout")
    if spec.channel not in ("none", "vector-ball"):
        raise ContractError("return-gap estimation uses vector-ball observation noise only")
    H = env.horizon if H is None else int(H)
    g = 1.0 if gamma is None else float(gamma)
    n = int(n_rollouts)
    s0 = env.start_box.sample(n, rng.child("start"))
    obs_rng, clean_rng, act_rng = rng.child("obs"), rng.child("clean"), rng.child("act")
    d_s, d_a = env.state_dim, env.action_dim
    eps = spec.eps_obs if spec.channel == "vector-ball" else 0.0

    s_exp, s_pol = s0.copy(), s0.copy()
    J_exp = np.zeros(n)
    J_pol = np.zeros(n)
    dev = np.zeros((n, H + 1))
    xi_norm = np.zeros((n, H))

    def policy_action(s):
        u = obs_rng.unit_sphere(n, d_s)
        keep = clean_rng.uniform(size=n) >= spec.p_clean
        delta = eps * u * keep[:, None]
        xi = spec.sigma * act_rng.normal((n, d_a))
        return mean_action(policy, s + delta) + xi, xi

    a_pol, xi = policy_action(s_pol)
    a_exp = mean_action(expert, s_exp)
    for t in range(1, H + 1):
        xi_norm[:, t - 1] = np.linalg.norm(xi, axis=1)
        s_exp = env.transition(s_exp, a_exp)
        s_pol = env.transition(s_pol, a_pol)
        dev[:, t] = np.linalg.norm(s_pol - s_exp, axis=1)
        a_exp = mean_action(expert, s_exp)
        a_pol, xi = policy_action(s_pol)
        w = g ** (t - 1)
        J_exp += w * env.task_reward(s_exp, a_exp)
        J_pol += w * env.task_reward(s_pol, a_pol)
    gaps = J_exp - J_pol
    mean, se = _mean_se(gaps)
    return GapStats(mean, se, n, gaps, dev, xi_norm)


# ---------------------------------------------------------------------------
# auxiliary inequalities
# ---------------------------------------------------------------------------


def gaussian_kl(mu_p: float, sigma_p: float, mu_q: float, sigma_q: float) -> float:
    # grouped so that equal scales contribute exactly zero
    r = sigma_p / sigma_q
    return math.log(sigma_q / sigma_p) + 0.5 * (r * r - 1.0) + (mu_p - mu_q) ** 2 / (2.0 * sigma_q**2)


def _crossings(mu_p, s_p, mu_q, s_q) -> list[float]:
    # log N(x; mu_p, s_p) = log N(x; mu_q, s_q) as a quadratic in x
    a = 1.0 / (2 * s_q**2) - 1.0 / (2 * s_p**2)
    b = mu_p / s_p**2 - mu_q / s_q**2
    c = mu_q**2 / (2 * s_q**2) - mu_p**2 / (2 * s_p**2) + math.log(s_q / s_p)
    if abs(a) < 1e-300:
        return [] if b == 0 else [-c / b]
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    r = math.sqrt(disc)
    return sorted({(-b - r) / (2 * a), (-b + r) / (2 * a)})


def pinsker_check(p: tuple, q: tuple) -> tuple[float, float, bool]:
    """``(‖p - q‖₁, √(2 KL(p‖q)), holds)`` for 1-d Gaussians given as ``(mean, std)``."""
    mu_p, s_p = map(float, p)
    mu_q, s_q = map(float, q)
    if not (s_p > 0 and s_q > 0):
        raise DomainError("standard deviations must be > 0")
    half = 12.0 * max(s_p, s_q) + abs(mu_p - mu_q) / 2.0
    lo, hi = (mu_p + mu_q) / 2.0 - half, (mu_p + mu_q) / 2.0 + half

    def f(x):
        zp = (x - mu_p) / s_p
        zq = (x - mu_q) / s_q
        return abs(math.exp(-0.5 * zp * zp) / s_p - math.exp(-0.5 * zq * zq) / s_q) / math.sqrt(2.0 * math.pi)

    pts = [x for x in _crossings(mu_p, s_p, mu_q, s_q) if lo < x < hi]
    pts += [mu_p, mu_q]
    l1, _ = integrate.quad(f, lo, hi, points=sorted(set(pts)), limit=200, epsabs=1e-13, epsrel=1e-10)
    kl = max(gaussian_kl(mu_p, s_p, mu_q, s_q), 0.0)
    bound = math.sqrt(2.0 * kl)
    return l1, bound, bool(l1 <= bound + 1e-9)


@dataclass
class DominanceResult:
    grad_pi: np.ndarray
    grad_logpi: np.ndarray
    density: np.ndarray
    comparable: np.ndarray

    @property
    def holds(self) -> bool:
        c = self.comparable
        return bool(np.all(self.grad_pi[c] <= self.grad_logpi[c] * (1 + 1e-12)))


def grad_dominance_check(params: PolicyParams, obs, actions) -> DominanceResult:
    """Compare ``‖∇_s π(a|s)‖`` and ``‖∇_s log π(a|s)‖`` at each (s, a) point."""
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    actions = np.asarray(actions, dtype=np.float64).reshape(obs.shape[0], -1)
    g_log = np.atleast_2d(input_grad_logprob(params, obs, actions))
    dens = np.exp(np.atleast_1d(log_prob(params, obs, actions)))
    n_log = np.linalg.norm(g_log, axis=1)
    n_pi = dens * n_log
    return DominanceResult(n_pi, n_log, dens, dens <= 1.0)


# ---------------------------------------------------------------------------
# scenario suite
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    theorem: str
    A: list
    B: list
    expert_gain: list
    policy_gain: list
    expert_bias: list | None = None
    policy_bias: list | None = None
    eps_s: float = 0.0
    sigma: float = 0.0
    drifts: int = 0
    drift_size: float = 0.01
    horizons: tuple = (50,)
    n_rollouts: int = 1000
    c: float = 1.0
    box: tuple = (-1.0, 1.0)
    start_box: tuple | None = None
    gamma: float | None = None

    @classmethod
    def from_dict(cls, d: dict, where: str = "bounds.suite") -> "Scenario":
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(f"{where}.{k}", "unknown scenario key")
        try:
            sc = cls(**d)
        except TypeError as exc:
            raise ConfigError(where, str(exc)) from None
        sc.horizons = tuple(int(h) for h in sc.horizons)
        sc.validate(where)
        return sc

    def validate(self, where: str = "bounds.suite"):
        if self.theorem not in KINDS:
            raise ConfigError(f"{where}.theorem", f"must be one of {KINDS}")
        if self.theorem == "T1" and (self.sigma != 0 or self.drifts != 0):
            raise ConfigError(f"{where}.theorem", "T1 assumes no action noise and no updates")
        if self.theorem == "T2" and self.eps_s != 0:
            raise ConfigError(f"{where}.theorem", "T2 assumes no observation noise")
        if self.theorem == "C2" and self.gamma is None:
            raise ConfigError(f"{where}.gamma", "C2 needs a discount")
        if self.n_rollouts < 1 or not self.horizons or min(self.horizons) < 1:
            raise ConfigError(f"{where}.n_rollouts", "need n_rollouts >= 1 and positive horizons")
        if not 0 <= self.eps_s <= 1:
            raise ConfigError(f"{where}.eps_s", "must lie in [0, 1]")
        if self.sigma < 0 or self.drifts < 0 or self.drift_size < 0:
            raise ConfigError(f"{where}.sigma", "noise and drift sizes must be >= 0")

    def as_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _mat(x) -> np.ndarray:
    return np.array(x, dtype=np.float64, ndmin=2)


@dataclass
class ScenarioSetup:
    env: LinearLipschitzEnv
    expert: PolicyParams
    snapshots: list  # π_0 … π_N; the last one is evaluated
    box: StateBox

    @property
    def policy(self) -> PolicyParams:
        return self.snapshots[-1]


def build_scenario(sc: Scenario, H: int) -> ScenarioSetup:
    A, B = _mat(sc.A), _mat(sc.B)
    d_s, d_a = A.shape[0], B.shape[1]
    box = StateBox.cube(d_s, sc.box[0], sc.box[1])
    start = box if sc.start_box is None else StateBox.cube(d_s, sc.start_box[0], sc.start_box[1])
    env = LinearLipschitzEnv(A, B, c=sc.c, kappa=0.0, horizon=H, box=box, start_box=start, terminate_on_success=False)
    Ks, K0 = _mat(sc.expert_gain), _mat(sc.policy_gain)
    if Ks.shape != (d_a, d_s) or K0.shape != (d_a, d_s):
        raise ConfigError("bounds.suite.expert_gain", f"gains must have shape ({d_a}, {d_s})")
    bs = np.zeros(d_a) if sc.expert_bias is None else np.array(sc.expert_bias, dtype=np.float64)
    b0 = np.zeros(d_a) if sc.policy_bias is None else np.array(sc.policy_bias, dtype=np.float64)
    # the deviation recursion needs the expert's closed loop to contract at rate L_f
    rho = nk.spectral_norm(A + B @ Ks)
    if rho > env.L_f * (1 + 1e-12):
        raise DomainError(f"scenario {sc.name}: expert closed loop ‖A+BK*‖={rho:.4g} exceeds L_f={env.L_f:.4g}")
    expert = linear_policy(Ks, bs)
    direction = np.ones(d_a) / math.sqrt(d_a)
    snaps = [linear_policy(K0, b0 + i * sc.drift_size * direction) for i in range(sc.drifts + 1)]
    return ScenarioSetup(env, expert, snaps, box)


@dataclass
class BoundReport:
    theorem: str
    params: BoundParams
    gap_mean: float
    gap_se: float
    bound: float
    satisfied: bool
    n_rollouts: int
    scenario: str = ""

    def csv(self) -> str:
        p = self.params
        gamma = "" if p.gamma is None else f"{p.gamma:.9g}"
        vals = [
            self.theorem,
            str(p.H),
            f"{p.L_f:.9g}",
            f"{p.L_r:.9g}",
            f"{p.lam:.9g}",
            f"{p.eps_s:.9g}",
            f"{p.eps_offline:.9g}",
            f"{p.sum_delta:.9g}",
            f"{p.sigma:.9g}",
            str(p.d),
            gamma,
            f"{self.gap_mean:.9g}",
            f"{self.gap_se:.9g}",
            f"{self.bound:.9g}",
            "true" if self.satisfied else "false",
        ]
        return ",".join(vals)


@dataclass
class AuditResult:
    scenario: str
    steps_checked: int
    violations: int
    max_excess: float


@dataclass
class SweepCheck:
    scenario: str
    kind: str
    passed: bool
    detail: str


@dataclass
class VerifyResult:
    reports: list = field(default_factory=list)
    audits: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)

    @property
    def all_satisfied(self) -> bool:
        return (
            all(r.satisfied for r in self.reports)
            and all(a.violations == 0 for a in self.audits)
            and all(s.passed for s in self.sweeps)
        )


def deviation_audit(setup: ScenarioSetup, stats: GapStats, lam: float, eps_s: float, eps_off: float, sum_delta: float) -> AuditResult:
    """Check realized deviations against the recursion, path by path.

    Without action noise the closed-form bound with ``c = λε_s + ε_off + Σδ``
    applies directly.  With action noise the per-path recursion uses the
    realized ``‖ξ_t‖`` as an extra drive.
    """
    L_f = setup.env.L_f
    c = lam * eps_s + eps_off + sum_delta
    dev = stats.deviation
    n, T = dev.shape
    if np.all(stats.noise_norm == 0):
        bound = np.array([deviation_bound(L_f, c, t) for t in range(T)]) if L_f > 0 else np.zeros(T)
        bound = np.broadcast_to(bound, dev.shape)
    else:
        bound = np.zeros_like(dev)
        for t in range(1, T):
            bound[:, t] = L_f * (bound[:, t - 1] + c + stats.noise_norm[:, t - 1])
    excess = dev - bound - 1e-12 * (1.0 + bound)
    return AuditResult("", n * T, int(np.count_nonzero(excess > 0)), float(np.max(dev - bound)))


def verify_scenario(sc: Scenario, seed: int = 0) -> VerifyResult:
    res = VerifyResult()
    per_h = []
    for H in sc.horizons:
        setup = build_scenario(sc, H)
        env = setup.env
        lam = nk.spectral_norm(setup.policy.weights[0])
        eps_off = offline_gap(setup.expert, setup.snapshots[0], setup.box)
        deltas = tuple(policy_drift(b, a, setup.box) for a, b in zip(setup.snapshots, setup.snapshots[1:]))
        p = BoundParams(
            H, env.L_f, env.L_r, lam, sc.eps_s, eps_off, deltas, sc.sigma, env.action_dim,
            sc.gamma if sc.theorem == "C2" else None,
        )
        bound = theorem_bound(sc.theorem, p)
        spec = PerturbationSpec("vector-ball", sc.eps_s, sc.sigma, 0.0)
        # one stream per scenario, shared by its horizons (common random numbers)
        stats = empirical_gap(env, setup.expert, setup.policy, spec, sc.n_rollouts, nk.rng_stream(seed, ["bounds", sc.name]), H, p.gamma)
        ok = stats.mean + 3.0 * stats.se <= bound
        res.reports.append(BoundReport(sc.theorem, p, stats.mean, stats.se, bound, bool(ok), stats.n, sc.name))
        audit = deviation_audit(setup, stats, lam, sc.eps_s, eps_off, p.sum_delta)
        audit.scenario = f"{sc.name}@H={H}"
        res.audits.append(audit)
        per_h.append((H, stats, bound))

    if sc.theorem == "C1" and len(per_h) > 1:
        ratios = [(H, st.mean / b, st.se / b) for H, st, b in per_h]
        worst = -math.inf
        for i in range(len(ratios)):
            for j in range(i + 1, len(ratios)):
                (_, r1, e1), (_, r2, e2) = ratios[i], ratios[j]
                worst = max(worst, (r2 - r1) - 3.0 * math.hypot(e1, e2))
        detail = "; ".join(f"H={H}: ratio={r:.6g}±{e:.2g}" for H, r, e in ratios)
        res.sweeps.append(SweepCheck(sc.name, "ratio-non-growth", worst <= 0, detail))
    if sc.theorem == "C2" and len(per_h) > 1:
        (H1, s1, _), (H2, s2, b2) = sorted(per_h, key=lambda x: x[0])[-2:]
        growth = s2.mean - s1.mean
        pooled = math.hypot(s1.se, s2.se)
        ok = growth <= 3.0 * pooled and s2.mean <= b2
        detail = f"gap(H={H2}) - gap(H={H1}) = {growth:.6g}, 3*pooled SE = {3 * pooled:.6g}, gap(H={H2}) = {s2.mean:.6g} vs C2 = {b2:.6g}"
        res.sweeps.append(SweepCheck(sc.name, "discounted-saturation", ok, detail))
    return res


def default_suite() -> list[Scenario]:
    """Certified scenarios spanning the contraction rates, noise levels and drifts."""
    return [
        Scenario("t1-expert-clean", "T1", [[0.8]], [[0.2]], [[-1.0]], [[-1.0]]),
        Scenario("t1-lf0.8-eps0.05", "T1", [[0.8]], [[0.2]], [[-1.0]], [[-0.9]], eps_s=0.05),
        Scenario("t1-lf0.5-eps0.1", "T1", [[0.5]], [[0.5]], [[-1.0]], [[-0.8]], eps_s=0.1),
        Scenario("t2-lf0.95-sig0.1-drift", "T2", [[0.95]], [[0.3]], [[-1.0]], [[-1.1]], sigma=0.1, drifts=5),
        Scenario(
            "t2-lf0.8-2d-sig0.2",
            "T2",
            [[0.8, 0.0], [0.0, 0.6]],
            [[0.4, 0.0], [0.0, 0.4]],
            [[-1.0, 0.0], [0.0, -1.0]],
            [[-0.9, 0.1], [0.0, -1.0]],
            sigma=0.2,
        ),
        Scenario("t3-lf0.95-all", "T3", [[0.95]], [[0.3]], [[-1.0]], [[-0.9]], eps_s=0.1, sigma=0.2, drifts=5),
        Scenario(
            "t3-lf0.5-2d",
            "T3",
            [[0.5, 0.0], [0.0, 0.3]],
            [[0.5, 0.0], [0.0, 0.5]],
            [[-1.0, 0.0], [0.0, -0.6]],
            [[-1.0, 0.0], [0.1, -0.6]],
            eps_s=0.05,
            sigma=0.1,
            drifts=5,
        ),
        # deadbeat expert (A + B K* = 0): the per-step gap is stationary from t = 1
        Scenario(
            "c1-lf0.5-deadbeat",
            "C1",
            [[0.5, 0.0], [0.0, 0.2]],
            [[0.5, 0.0], [0.0, 0.5]],
            [[-1.0, 0.0], [0.0, -0.4]],
            [[-1.0, 0.0], [0.0, -0.4]],
            eps_s=0.1,
            horizons=(10, 50, 100),
        ),
        Scenario(
            "c2-lf0.8-discounted",
            "C2",
            [[0.8]],
            [[0.2]],
            [[-1.0]],
            [[-0.9]],
            eps_s=0.05,
            sigma=0.1,
            drifts=5,
            gamma=0.95,
            horizons=(25, 50, 100, 200),
        ),
    ]


def verify(suite: Sequence[Scenario] | None = None, seed: int = 0) -> VerifyResult:
    out = VerifyResult()
    for sc in default_suite() if suite is None else suite:
        r = verify_scenario(sc, seed)
        out.reports += r.reports
        out.audits += r.audits
        out.sweeps += r.sweeps
    return out


def reports_csv(reports: Sequence[BoundReport]) -> str:
    buf = io.StringIO()
    buf.write(REPORT_HEADER + "\n")
    for r in reports:
        buf.write(r.csv() + "\n")
    return buf.getvalue()
