"""Synthetic goal-reaching environments and perturbation injectors.

Two environments:

* :class:`LinearLipschitzEnv` -- ``s' = clip(A s + B a)`` with Lipschitz reward
  ``r = -c(‖s - g‖ + κ‖a‖)``; both Lipschitz constants are known exactly.
* :class:`PointGoalImageEnv` -- a point mass in the unit square observed as a
  small grayscale image, used to exercise the image corruptions.

Observation corruptions follow the usual benchmark set (shift, rotation, color
jitter, occlusion, erasing) scaled by a level ``eps_obs`` in ``[0, 1]``; for
vector observations the corruption is an exact-radius displacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numkit as nk
from .errors import ContractError, DomainError
from .policy import StateBox
from .rewards import RewardConfig, RewardTerms, dense_reward

IMAGE_CHANNELS = ("shift", "rotation", "color", "occlusion", "erasing")
CHANNELS = ("none", "vector-ball", *IMAGE_CHANNELS, "mixed")

MAX_SHIFT_FRACTION = 0.3
MAX_ROTATION_DEG = 30.0
MAX_OCCLUSION_SIDE_AT_128 = 20
MAX_ERASE_FRACTION = 0.1


@dataclass(frozen=True)
class Context:
    """Episode context: a seed/id pair, optionally pinning the initial state."""

    seed: int
    id: int
    state: tuple | None = None

    def stream(self) -> nk.RngStream:
        return nk.rng_stream(self.seed, ["context", self.id])


@dataclass(frozen=True)
class PerturbationSpec:
    channel: str = "none"
    eps_obs: float = 0.0
    sigma: float = 0.0
    p_clean: float = 0.0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ContractError(f"unknown perturbation channel {self.channel!r}")
        if not 0.0 <= self.eps_obs <= 1.0:
            raise DomainError(f"eps_obs must lie in [0, 1], got {self.eps_obs}")
        if self.sigma < 0:
            raise DomainError(f"sigma must be non-negative, got {self.sigma}")
        if not 0.0 <= self.p_clean <= 1.0:
            raise DomainError(f"p_clean must lie in [0, 1], got {self.p_clean}")

    @property
    def is_clean(self) -> bool:
        return (self.channel == "none" or self.eps_obs == 0.0) and self.sigma == 0.0


@dataclass
class StepResult:
    observation: np.ndarray
    state: np.ndarray
    reward: float
    terms: RewardTerms
    success: bool
    done: bool


class _GoalEnv:
    """Shared episode bookkeeping (action history, progress, termination)."""

    obs_kind = "vector"
    horizon: int
    goal: np.ndarray
    reward_config: RewardConfig
    terminate_on_success: bool

    def _begin(self, state):
        self.state = np.array(state, dtype=np.float64)
        self.t = 0
        self.done = False
        zero = np.zeros(self.action_dim)
        self._a1, self._a2 = zero, zero
        self._progress = 0.0
        self._start_distance = float(np.linalg.norm(self.state - self.goal))

    def _finish_step(self, prev_state, action, reward) -> StepResult:
        self.t += 1
        success = bool(np.linalg.norm(self.state - self.goal) < self.success_radius)
        terms = dense_reward(
            prev_state,
            self.state,
            self._a1,
            self._a2,
            action,
            self.goal,
            self.reward_config,
            success=success,
            start_distance=self._start_distance,
            prev_progress=self._progress,
        )
        self._progress = terms.progress
        self._a2, self._a1 = self._a1, action
        self.done = self.t >= self.horizon or (success and self.terminate_on_success)
        return StepResult(self.observe(), self.state.copy(), reward, terms, success, self.done)

    def _check_action(self, action) -> np.ndarray:
        if getattr(self, "done", True):
            raise ContractError("step() called on a finished (or never reset) episode")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if a.shape[0] != self.action_dim:
            raise ContractError(f"action width {a.shape[0]} != {self.action_dim}")
        return a


class LinearLipschitzEnv(_GoalEnv):
    """Linear dynamics with exact Lipschitz constants.

    ``L_f = max(‖A‖₂, ‖B‖₂)`` bounds ``‖f(s,a) - f(s',a')‖ / (‖s-s'‖ + ‖a-a'‖)``
    and ``L_r = c·max(1, κ)`` does the same for the reward.  Clipping to the
    state box is a projection and does not raise either constant.
    """

    def __init__(
        self,
        A,
        B,
        goal=None,
        c: float = 1.0,
        kappa: float = 0.0,
        success_radius: float = 0.05,
        horizon: int = 50,
        box: StateBox | None = None,
        start_box: StateBox | None = None,
        reward_config: RewardConfig | None = None,
        terminate_on_success: bool = True,
    ):
        self.A = np.array(A, dtype=np.float64, ndmin=2)
        self.B = np.array(B, dtype=np.float64, ndmin=2)
        d_s = self.A.shape[0]
        if self.A.shape != (d_s, d_s) or self.B.shape[0] != d_s:
            raise ContractError(f"A {self.A.shape} and B {self.B.shape} do not compose")
        if c <= 0 or kappa < 0 or success_radius <= 0 or horizon < 1:
            raise DomainError("need c > 0, kappa >= 0, success_radius > 0, horizon >= 1")
        self.goal = np.zeros(d_s) if goal is None else np.array(goal, dtype=np.float64).reshape(d_s)
        self.c = float(c)
        self.kappa = float(kappa)
        self.success_radius = float(success_radius)
        self.horizon = int(horizon)
        self.box = box or StateBox.cube(d_s, -10.0, 10.0)
        self.start_box = start_box or StateBox.cube(d_s, -1.0, 1.0)
        self.reward_config = reward_config or RewardConfig()
        self.terminate_on_success = terminate_on_success
        self.L_f = max(nk.spectral_norm(self.A), nk.spectral_norm(self.B))
        self.L_r = self.c * max(1.0, self.kappa)
        self.done = True

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def action_dim(self) -> int:
        return self.B.shape[1]

    @property
    def obs_dim(self) -> int:
        return self.state_dim

    # pure, batched pieces ------------------------------------------------

    def transition(self, s, a) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        return np.clip(s @ self.A.T + a @ self.B.T, self.box.lower, self.box.upper)

    def task_reward(self, s, a):
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        return -self.c * (np.linalg.norm(s - self.goal, axis=-1) + self.kappa * np.linalg.norm(a, axis=-1))

    def initial_state(self, context: Context) -> np.ndarray:
        if context.state is not None:
            return np.clip(np.array(context.state, dtype=np.float64), self.box.lower, self.box.upper)
        return self.start_box.sample(1, context.stream())[0]

    # episode API ---------------------------------------------------------

    def reset(self, context: Context) -> np.ndarray:
        self._begin(self.initial_state(context))
        return self.observe()

    def observe(self) -> np.ndarray:
        return self.state.copy()

    def features(self, obs) -> np.ndarray:
        return np.asarray(obs, dtype=np.float64).reshape(-1)

    def step(self, action) -> StepResult:
        a = self._check_action(action)
        prev = self.state
        reward = float(self.task_reward(prev, a))
        self.state = self.transition(prev, a)
        return self._finish_step(prev, a, reward)


class PointGoalImageEnv(_GoalEnv):
    """Point mass in ``[0,1]²`` seen through a ``G×G`` rendered image.

    The policy input is the flattened image followed by the goal coordinates
    (the goal plays the role of the task instruction).
    """

    obs_kind = "image"

    def __init__(
        self,
        G: int = 32,
        blob_width: float = 1.5,
        step_gain: float = 0.1,
        horizon: int = 30,
        success_radius: float = 0.08,
        min_start_distance: float = 0.25,
        reward_config: RewardConfig | None = None,
        terminate_on_success: bool = True,
    ):
        if G < 4 or blob_width <= 0 or step_gain <= 0 or horizon < 1 or success_radius <= 0:
            raise DomainError("invalid PointGoalImageEnv parameters")
        self.G = int(G)
        self.blob_width = float(blob_width)
        self.step_gain = float(step_gain)
        self.horizon = int(horizon)
        self.success_radius = float(success_radius)
        self.min_start_distance = float(min_start_distance)
        self.reward_config = reward_config or RewardConfig()
        self.terminate_on_success = terminate_on_success
        self.goal = np.full(2, 0.5)
        self.done = True

    action_dim = 2
    state_dim = 2

    @property
    def obs_dim(self) -> int:
        return self.G * self.G + 2

    def initial_state(self, context: Context) -> tuple[np.ndarray, np.ndarray]:
        rng = context.stream()
        goal = 0.2 + 0.6 * rng.uniform(size=2)
        if context.state is not None:
            return np.clip(np.array(context.state, dtype=np.float64), 0.0, 1.0), goal
        for _ in range(1000):
            pos = rng.uniform(size=2)
            if np.linalg.norm(pos - goal) >= self.min_start_distance:
                break
        return pos, goal

    def reset(self, context: Context) -> np.ndarray:
        pos, goal = self.initial_state(context)
        self.goal = goal
        self._begin(pos)
        return self.observe()

    def observe(self) -> np.ndarray:
        return render_image(self.state, self.goal, self.G, self.blob_width)

    def features(self, obs) -> np.ndarray:
        return np.concatenate([np.asarray(obs, dtype=np.float64).reshape(-1), self.goal])

    def expert_action(self) -> np.ndarray:
        """Saturated straight-line controller toward the goal."""
        return np.clip((self.goal - self.state) / self.step_gain, -1.0, 1.0)

    def step(self, action) -> StepResult:
        a = self._check_action(action)
        prev = self.state
        reward = -float(np.linalg.norm(prev - self.goal))
        self.state = np.clip(prev + self.step_gain * np.clip(a, -1.0, 1.0), 0.0, 1.0)
        return self._finish_step(prev, a, reward)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_image(position, goal, G: int = 32, blob_width: float = 1.5) -> np.ndarray:
    """Gaussian blob at ``position`` (peak 1) over a goal blob (peak 0.5).

    ``x`` maps to columns and ``y`` to rows, pixel centre ``k`` at ``k/(G-1)``.
    """
    p = np.asarray(position, dtype=np.float64).reshape(-1)
    g = np.asarray(goal, dtype=np.float64).reshape(-1)
    if p.shape != (2,) or g.shape != (2,):
        raise ContractError("position and goal must be 2-vectors")
    if np.any(p < 0) or np.any(p > 1) or np.any(g < 0) or np.any(g > 1):
        raise ContractError("position and goal must lie in [0, 1]^2")
    idx = np.arange(G, dtype=np.float64)

    def blob(c):
        col, row = c * (G - 1)
        return np.outer(np.exp(-((idx - row) ** 2) / (2 * blob_width**2)), np.exp(-((idx - col) ** 2) / (2 * blob_width**2)))

    return np.clip(np.maximum(blob(p), 0.5 * blob(g)), 0.0, 1.0)


def write_pgm(path, img) -> None:
    """Binary PGM (P5, maxval 255), written atomically."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError("PGM needs a 2-D image")
    data = np.clip(np.rint(a * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii") + data.tobytes())
    tmp.replace(path)


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ContractError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


# ---------------------------------------------------------------------------
# image operators (all preserve shape and keep values in [0, 1])
# ---------------------------------------------------------------------------


def shift_image(img: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Move content ``dx`` columns left and ``dy`` rows up, zero fill."""
    G0, G1 = img.shape
    out = np.zeros_like(img)
    if dx < G1 and dy < G0:
        out[: G0 - dy, : G1 - dx] = img[dy:, dx:]
    return out


def rotate_image(img: np.ndarray, angle_deg: float) -> np.ndarray:
    """Counterclockwise rotation about the centre, nearest-neighbour, zero fill."""
    G0, G1 = img.shape
    cy, cx = (G0 - 1) / 2.0, (G1 - 1) / 2.0
    th = math.radians(angle_deg)
    cos, sin = math.cos(th), math.sin(th)
    rows, cols = np.meshgrid(np.arange(G0), np.arange(G1), indexing="ij")
    x = cols - cx
    y = cy - rows
    # inverse map: rotate the output coordinate clockwise to find its source
    xs = x * cos + y * sin
    ys = -x * sin + y * cos
    src_c = np.rint(xs + cx).astype(int)
    src_r = np.rint(cy - ys).astype(int)
    ok = (src_r >= 0) & (src_r < G0) & (src_c >= 0) & (src_c < G1)
    out = np.zeros_like(img)
    out[ok] = img[src_r[ok], src_c[ok]]
    return out


def _smooth(img: np.ndarray) -> np.ndarray:
    # 3x3 smoothing kernel [[1,1,1],[1,5,1],[1,1,1]]/13; border pixels kept
    out = img.copy()
    if min(img.shape) < 3:
        return out
    acc = 5.0 * img[1:-1, 1:-1]
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                acc = acc + img[1 + dr : img.shape[0] - 1 + dr, 1 + dc : img.shape[1] - 1 + dc]
    out[1:-1, 1:-1] = acc / 13.0
    return out


def color_jitter(img: np.ndarray, brightness: float, contrast: float, sharpness: float) -> np.ndarray:
    """Brightness, then contrast, then sharpness; each stage clipped to [0, 1].

    Every stage is a blend ``x*f + ref*(1-f)`` so a factor of 1 is exact identity.
    """
    out = np.clip(img * brightness, 0.0, 1.0)
    m = out.mean()
    out = np.clip(out * contrast + m * (1.0 - contrast), 0.0, 1.0)
    out = np.clip(out * sharpness + _smooth(out) * (1.0 - sharpness), 0.0, 1.0)
    return out


def occlusion_side_max(G: int, eps: float) -> int:
    return max(1, int(round(MAX_OCCLUSION_SIDE_AT_128 * eps * G / 128.0)))


def occlusion_boxes(G: int, eps: float, rng: nk.RngStream) -> list[tuple[int, int, int]]:
    """1-3 square blocks as ``(row, col, side)``."""
    n = int(rng.integers(1, 4))
    smax = occlusion_side_max(G, eps)
    boxes = []
    for _ in range(n):
        side = int(rng.integers(1, smax + 1))
        r = int(rng.integers(0, G - side + 1))
        c = int(rng.integers(0, G - side + 1))
        boxes.append((r, c, side))
    return boxes


def erasing_box(G: int, eps: float, rng: nk.RngStream) -> tuple[int, int, int, int]:
    """One rectangle ``(row, col, h, w)`` with ``h*w <= 0.1*eps*G²`` (may be empty)."""
    area = rng.uniform() * MAX_ERASE_FRACTION * eps * G * G
    aspect = rng.uniform(0.5, 2.0)
    h = min(G, max(1, int(math.floor(math.sqrt(area * aspect)))))
    w = min(G, int(math.floor(area / h)))
    r = int(rng.integers(0, G - h + 1))
    c = int(rng.integers(0, G - max(w, 1) + 1))
    return r, c, h, w


def _perturb_image(img: np.ndarray, channel: str, eps: float, rng: nk.RngStream) -> np.ndarray:
    G = img.shape[0]
    if channel == "mixed":
        channel = IMAGE_CHANNELS[int(rng.integers(0, len(IMAGE_CHANNELS)))]
    if channel == "shift":
        hi = MAX_SHIFT_FRACTION * eps * G
        dx = int(math.floor(rng.uniform(0.0, hi)))
        dy = int(math.floor(rng.uniform(0.0, hi)))
        return shift_image(img, dx, dy)
    if channel == "rotation":
        return rotate_image(img, rng.uniform(0.0, MAX_ROTATION_DEG * eps))
    if channel == "color":
        lo, hi = 1.0 / (1.0 + 2.0 * eps), 1.0 + 2.0 * eps
        b, c, s = rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)
        return color_jitter(img, b, c, s)
    if channel == "occlusion":
        out = img.copy()
        for r, c, side in occlusion_boxes(G, eps, rng):
            out[r : r + side, c : c + side] = 0.0
        return out
    if channel == "erasing":
        out = img.copy()
        r, c, h, w = erasing_box(G, eps, rng)
        if w > 0:
            out[r : r + h, c : c + w] = rng.uniform(size=(h, w))
        return out
    raise ContractError(f"channel {channel!r} does not apply to images")


def perturb_observation(obs, spec: PerturbationSpec, rng: nk.RngStream) -> np.ndarray:
    """Corrupt one observation according to ``spec``.

    A level of zero (or channel ``none``) is the identity for every channel.
    The clean-probability coin is always drawn, so stream consumption does not
    depend on the outcome.
    """
    x = np.asarray(obs, dtype=np.float64)
    is_image = x.ndim == 2 and x.shape[0] == x.shape[1]
    if spec.channel == "vector-ball" and x.ndim != 1:
        raise ContractError("vector-ball perturbation needs a vector observation")
    if spec.channel in (*IMAGE_CHANNELS, "mixed") and not is_image:
        raise ContractError(f"{spec.channel} perturbation needs a square image observation")
    coin = rng.uniform()
    if spec.channel == "none" or spec.eps_obs == 0.0 or coin < spec.p_clean:
        return x.copy()
    if spec.channel == "vector-ball":
        return x + spec.eps_obs * rng.unit_sphere(1, x.shape[0])[0]
    return _perturb_image(x, spec.channel, spec.eps_obs, rng)


def perturb_action(action, sigma: float, rng: nk.RngStream) -> np.ndarray:
    """``a + ξ`` with ξ ~ N(0, σ² I)."""
    if sigma < 0:
        raise DomainError("sigma must be non-negative")
    a = np.asarray(action, dtype=np.float64)
    return a + sigma * rng.normal(a.shape)


def make_env(kind: str, **kw):
    if kind == "linear":
        return LinearLipschitzEnv(**kw)
    if kind == "point-image":
        return PointGoalImageEnv(**kw)
    raise ContractError(f"unknown environment kind {kind!r}")


__all__ = [
    "Context",
    "PerturbationSpec",
    "StepResult",
    "LinearLipschitzEnv",
    "PointGoalImageEnv",
    "render_image",
    "write_pgm",
    "read_pgm",
    "shift_image",
    "rotate_image",
    "color_jitter",
    "occlusion_boxes",
    "occlusion_side_max",
    "erasing_box",
    "perturb_observation",
    "perturb_action",
    "make_env",
    "IMAGE_CHANNELS",
    "CHANNELS",
]
