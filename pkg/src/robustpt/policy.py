"""Diagonal-Gaussian MLP policy.

The mean network is ``tanh`` on hidden layers and linear on the output; the
log standard deviation is one learnable vector shared by all states.  Weights
are stored ``(out, in)`` so a single-layer policy is literally ``μ(s) = W s + b``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import numkit as nk
from .errors import ContractError, DomainError

LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_HEADER = b"RPTCKPT v1\n"


@dataclass(frozen=True)
class PolicyParams:
    weights: tuple
    biases: tuple
    log_std: np.ndarray

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64, ndmin=2) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        ls = np.array(self.log_std, dtype=np.float64).reshape(-1)
        if not ws or len(ws) != len(bs):
            raise ContractError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.shape[0] != b.shape[0]:
                raise ContractError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i > 0 and w.shape[1] != ws[i - 1].shape[0]:
                raise ContractError(f"layer {i}: input {w.shape[1]} != previous output {ws[i - 1].shape[0]}")
        if ls.shape[0] != ws[-1].shape[0] or ls.shape[0] < 1:
            raise ContractError("log_std length must equal the action dimension")
        if not np.all(np.isfinite(ls)):
            raise ContractError("log_std must be finite")
        for a in ws + bs + (ls,):
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)
        object.__setattr__(self, "log_std", ls)

    @property
    def obs_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def action_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def is_linear(self) -> bool:
        return len(self.weights) == 1

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_std)

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.log_std]

    def names(self) -> list[str]:
        n = len(self.weights)
        return [f"W{i}" for i in range(n)] + [f"b{i}" for i in range(n)] + ["log_std"]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "PolicyParams":
        n = len(self.weights)
        return PolicyParams(
            tuple(np.reshape(a, w.shape) for a, w in zip(arrays[:n], self.weights)),
            tuple(np.reshape(a, b.shape) for a, b in zip(arrays[n : 2 * n], self.biases)),
            np.reshape(arrays[2 * n], self.log_std.shape),
        )

    def same_architecture(self, other: "PolicyParams") -> bool:
        return [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]


def init_params(sizes: Sequence[int], rng: nk.RngStream, log_std: float = -0.5, out_scale: float = 0.1) -> PolicyParams:
    """Random MLP with layer widths ``sizes = [d_obs, h1, ..., d_a]``."""
    if len(sizes) < 2:
        raise DomainError("need at least input and output sizes")
    ws, bs = [], []
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        gain = out_scale if i == len(sizes) - 2 else 1.0
        ws.append(rng.normal((n_out, n_in)) * gain / math.sqrt(n_in))
        bs.append(np.zeros(n_out))
    return PolicyParams(tuple(ws), tuple(bs), np.full(sizes[-1], float(log_std)))


def linear_policy(gain, bias=None, log_std: float = 0.0) -> PolicyParams:
    gain = np.array(gain, dtype=np.float64, ndmin=2)
    bias = np.zeros(gain.shape[0]) if bias is None else bias
    return PolicyParams((gain,), (bias,), np.full(gain.shape[0], float(log_std)))


# ---------------------------------------------------------------------------
# numpy forward passes
# ---------------------------------------------------------------------------


def _batch(obs, d: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    if x.ndim != 2 or x.shape[1] != d:
        raise ContractError(f"observation width {x.shape[-1]} != policy input {d}")
    return x, single


def _forward(params: PolicyParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    hs = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.tanh(h)
            hs.append(h)
    return h, hs


def mean_action(params: PolicyParams, obs) -> np.ndarray:
    """μ_θ(s); accepts one observation or a batch of rows."""
    x, single = _batch(obs, params.obs_dim)
    mu, _ = _forward(params, x)
    return mu[0] if single else mu


def log_prob(params: PolicyParams, obs, action):
    """Diagonal-Gaussian log-density; scalar for one row, vector for a batch."""
    x, single = _batch(obs, params.obs_dim)
    a = np.asarray(action, dtype=np.float64).reshape(x.shape[0], -1)
    if a.shape[1] != params.action_dim:
        raise ContractError(f"action width {a.shape[1]} != {params.action_dim}")
    mu, _ = _forward(params, x)
    z = (a - mu) * np.exp(-params.log_std)
    lp = -0.5 * np.sum(z * z, axis=1) - np.sum(params.log_std) - 0.5 * params.action_dim * LOG_2PI
    return float(lp[0]) if single else lp


def sample_action(params: PolicyParams, obs, rng: nk.RngStream) -> np.ndarray:
    mu = mean_action(params, obs)
    return mu + params.sigma * rng.normal(mu.shape)


def kl_divergence(p: PolicyParams, q: PolicyParams, obs) -> float:
    """KL(p ‖ q) between the two diagonal Gaussians at ``obs``."""
    if p.action_dim != q.action_dim:
        raise ContractError("action dimensions differ")
    mp, mq = mean_action(p, obs), mean_action(q, obs)
    vp, vq = np.exp(2 * p.log_std), np.exp(2 * q.log_std)
    kl = q.log_std - p.log_std + (vp + (mp - mq) ** 2) / (2 * vq) - 0.5
    return float(max(np.sum(kl), 0.0))


def mean_jacobian(params: PolicyParams, obs) -> np.ndarray:
    """∂μ/∂s at a single observation, shape ``(d_a, d_obs)``."""
    x, _ = _batch(obs, params.obs_dim)
    _, hs = _forward(params, x)
    jac = params.weights[0]
    for w, h in zip(params.weights[1:], hs):
        jac = w @ ((1.0 - h[0] ** 2)[:, None] * jac)
    return jac


# ---------------------------------------------------------------------------
# tape graphs
# ---------------------------------------------------------------------------


class ParamVars(NamedTuple):
    weights: list
    biases: list
    log_std: nk.Var

    def leaves(self) -> list:
        return [*self.weights, *self.biases, self.log_std]


def bind(tape: nk.Tape, params: PolicyParams, trainable: bool = True) -> ParamVars:
    make = tape.leaf if trainable else tape.const
    return ParamVars(
        [make(w) for w in params.weights],
        [make(b.reshape(1, -1)) for b in params.biases],
        make(params.log_std.reshape(1, -1)),
    )


def mean_graph(pv: ParamVars, x: nk.Var, keep_hidden: bool = False):
    h = x
    hidden = []
    last = len(pv.weights) - 1
    for i, (w, b) in enumerate(zip(pv.weights, pv.biases)):
        h = nk.add(nk.matmul(h, nk.transpose(w)), b)
        if i < last:
            h = nk.tanh(h)
            hidden.append(h)
    return (h, hidden) if keep_hidden else h


def log_prob_graph(pv: ParamVars, x: nk.Var, a: nk.Var) -> nk.Var:
    """Per-row log-density, shape ``(B, 1)``."""
    mu = mean_graph(pv, x)
    d_a = mu.shape[1]
    z = nk.mul(nk.sub(a, mu), nk.exp(nk.neg(pv.log_std)))
    quad = nk.scale(nk.sum(nk.square(z), axis=1), -0.5)
    const = nk.add(nk.sum(pv.log_std), x.tape.const(0.5 * d_a * LOG_2PI))
    return nk.sub(quad, const)


def input_grad_graph(pv: ParamVars, x: nk.Var, a: nk.Var) -> nk.Var:
    """∇_s log π(a|s) written out as a forward expression, shape ``(B, d_obs)``.

    Built from first-order primitives, so differentiating it with respect to
    the parameters needs only the ordinary reverse sweep.
    """
    mu, hidden = mean_graph(pv, x, keep_hidden=True)
    # ∂ log π / ∂μ = (a − μ) / σ²
    g = nk.mul(nk.sub(a, mu), nk.exp(nk.scale(pv.log_std, -2.0)))
    for k in range(len(pv.weights) - 1, -1, -1):
        g = nk.matmul(g, pv.weights[k])
        if k > 0:
            h = hidden[k - 1]
            g = nk.mul(g, nk.sub(x.tape.const(1.0), nk.square(h)))
    return g


def input_grad_logprob(params: PolicyParams, obs, action) -> np.ndarray:
    """∇_s log π_θ(a|s) by reverse sweep over the observation leaf."""
    x, single = _batch(obs, params.obs_dim)
    a = np.asarray(action, dtype=np.float64).reshape(x.shape[0], -1)
    tape = nk.Tape()
    pv = bind(tape, params, trainable=False)
    xv = tape.leaf(x)
    lp = log_prob_graph(pv, xv, tape.const(a))
    (g,) = nk.grad(nk.sum(lp), [xv])
    return g[0] if single else g


# ---------------------------------------------------------------------------
# Lipschitz / sensitivity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StateBox:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64).reshape(-1)
        hi = np.array(self.upper, dtype=np.float64).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ContractError("box needs lower <= upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, d: int, lo: float, hi: float) -> "StateBox":
        return cls(np.full(d, lo), np.full(d, hi))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def vertices(self) -> np.ndarray:
        d = self.dim
        if d > 20:
            raise DomainError("vertex enumeration limited to 20 dimensions")
        bits = (np.arange(2**d)[:, None] >> np.arange(d)) & 1
        return np.where(bits == 1, self.upper, self.lower)

    def sample(self, n: int, rng: nk.RngStream) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.uniform(size=(n, self.dim))


@dataclass
class LambdaEstimate:
    value: float
    exact: bool
    samples: int = field(default=0)


def estimate_lambda(params: PolicyParams, box: StateBox, n: int, rng: nk.RngStream) -> LambdaEstimate:
    """Bound on ‖∂μ/∂s‖₂: exact for linear means, sampled max otherwise."""
    if n < 1:
        raise DomainError("need at least one sample")
    if params.is_linear:
        return LambdaEstimate(nk.spectral_norm(params.weights[0]), True, 0)
    if np.all(box.lower == box.upper):
        return LambdaEstimate(nk.spectral_norm(mean_jacobian(params, box.lower)), False, 1)
    pts = box.sample(n, rng)
    best = 0.0
    for s in pts:
        best = max(best, nk.spectral_norm(mean_jacobian(params, s)))
    return LambdaEstimate(best, False, n)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def dumps_params(params: PolicyParams) -> bytes:
    """Serialize: header line, then ``name rows cols`` lines each followed by raw LE float64."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_HEADER)
    for name, arr in zip(params.names(), params.arrays()):
        a = nk.as_tensor(arr) if arr.ndim == 2 else arr.reshape(1, -1)
        buf.write(f"{name} {a.shape[0]} {a.shape[1]}\n".encode("ascii"))
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_params(data: bytes) -> PolicyParams:
    if not data.startswith(CHECKPOINT_HEADER):
        raise ContractError("not an RPTCKPT v1 checkpoint")
    pos = len(CHECKPOINT_HEADER)
    entries = {}
    while pos < len(data):
        end = data.find(b"\n", pos)
        try:
            name, rows, cols = data[pos:end].decode("ascii").split()
            rows, cols = int(rows), int(cols)
        except (UnicodeDecodeError, ValueError):
            raise ContractError("malformed checkpoint entry header") from None
        pos = end + 1
        nbytes = 8 * rows * cols
        if end < 0 or pos + nbytes > len(data):
            raise ContractError(f"checkpoint truncated in entry {name}")
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<f8").astype(np.float64).reshape(rows, cols)
        pos += nbytes
        entries[name] = arr
    n = sum(1 for k in entries if k.startswith("W"))
    try:
        ws = tuple(entries[f"W{i}"] for i in range(n))
        bs = tuple(entries[f"b{i}"].reshape(-1) for i in range(n))
        ls = entries["log_std"].reshape(-1)
    except KeyError as exc:
        raise ContractError(f"checkpoint missing entry {exc}") from None
    return PolicyParams(ws, bs, ls)


def save_params(params: PolicyParams, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps_params(params))
    tmp.replace(path)


def load_params(path) -> PolicyParams:
    return loads_params(Path(path).read_bytes())

