"""From-scratch PPO learner: tanh-squashed Gaussian policy and value MLPs.

Forward and backward passes run on the selected kernel backend (compiled or
pure numpy). Everything is float64 and deterministic given the seeds: weight
init, action sampling and minibatch shuffling all draw from caller-provided
generators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .config import PpoConfig

_LOG_2PI = math.log(2.0 * math.pi)
_CKPT_MAGIC = b"PUSHLABCKPT1\n"


@dataclass
class NetParams:
    """Policy and value network parameters plus the learned action log-std."""

    obs_dim: int
    act_dim: int
    hidden: tuple[int, ...]
    policy_w: list
    policy_b: list
    value_w: list
    value_b: list
    log_std: np.ndarray

    def copy(self) -> "NetParams":
        return NetParams(
            self.obs_dim,
            self.act_dim,
            self.hidden,
            [w.copy() for w in self.policy_w],
            [b.copy() for b in self.policy_b],
            [w.copy() for w in self.value_w],
            [b.copy() for b in self.value_b],
            self.log_std.copy(),
        )

    def tensors(self):
        """(name, array) pairs in a fixed order; arrays are the live buffers."""
        out = []
        for i, (w, b) in enumerate(zip(self.policy_w, self.policy_b)):
            out.append((f"policy_w{i}", w))
            out.append((f"policy_b{i}", b))
        for i, (w, b) in enumerate(zip(self.value_w, self.value_b)):
            out.append((f"value_w{i}", w))
            out.append((f"value_b{i}", b))
        out.append(("log_std", self.log_std))
        return out

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for _, t in self.tensors())


def _init_stack(rng, dims):
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-scale, scale, size=fan_out))
    return weights, biases


def init(obs_dim: int, act_dim: int, widths=(64, 64, 64), seed: int = 0) -> NetParams:
    """Seeded scaled-uniform initialization (scale 1/sqrt(fan_in)) of both heads."""
    if obs_dim < 1 or act_dim < 1 or any(w < 1 for w in widths):
        raise ValueError("obs_dim, act_dim and all hidden widths must be >= 1")
    rng = np.random.default_rng(seed)
    widths = tuple(int(w) for w in widths)
    policy_w, policy_b = _init_stack(rng, (obs_dim, *widths, act_dim))
    value_w, value_b = _init_stack(rng, (obs_dim, *widths, 1))
    return NetParams(
        obs_dim=obs_dim,
        act_dim=act_dim,
        hidden=widths,
        policy_w=policy_w,
        policy_b=policy_b,
        value_w=value_w,
        value_b=value_b,
        log_std=np.full(act_dim, -0.5),
    )


def policy_forward(params: NetParams, obs_batch):
    """(hidden activations, action means) for a (B, obs_dim) batch."""
    return _kernels.mlp_forward(obs_batch, params.policy_w, params.policy_b)


def value_forward(params: NetParams, obs_batch):
    """(hidden activations, values (B,)) for a (B, obs_dim) batch."""
    hidden, out = _kernels.mlp_forward(obs_batch, params.value_w, params.value_b)
    return hidden, out[:, 0]


def squashed_log_prob(pre_squash, mean, log_std):
    """Log-density of tanh(pre_squash) under the squashed Gaussian policy.

    pre_squash, mean: (B, A); log_std: (A,). Returns (B,). The tanh change of
    variables uses the stable identity log(1 - tanh(z)^2) =
    2*(log 2 - z - softplus(-2z)).
    """
    z = np.asarray(pre_squash, dtype=np.float64)
    u = np.asarray(mean, dtype=np.float64)
    std = np.exp(log_std)
    gauss = -0.5 * ((z - u) / std) ** 2 - log_std - 0.5 * _LOG_2PI
    correction = 2.0 * (math.log(2.0) - z - np.logaddexp(0.0, -2.0 * z))
    return np.sum(gauss - correction, axis=1)


@dataclass
class ActResult:
    action: np.ndarray
    log_prob: float
    value: float
    pre_squash: np.ndarray


def act(params: NetParams, observation, mode: str = "stochastic", rng=None) -> ActResult:
    """One action from the policy; actions always lie in (-1, 1)^act_dim."""
    obs = np.asarray(observation, dtype=np.float64)
    if obs.shape != (params.obs_dim,) or not np.all(np.isfinite(obs)):
        raise ValueError(f"observation must be a finite vector of length {params.obs_dim}")
    batch = obs[None, :]
    _, mean = policy_forward(params, batch)
    _, value = value_forward(params, batch)
    if mode == "deterministic":
        z = mean
    elif mode == "stochastic":
        if rng is None:
            raise ValueError("stochastic mode needs an rng")
        z = mean + np.exp(params.log_std) * rng.standard_normal(params.act_dim)
    else:
        raise ValueError(f"mode must be stochastic|deterministic, got {mode!r}")
    log_prob = float(squashed_log_prob(z, mean, params.log_std)[0])
    return ActResult(
        action=np.tanh(z[0]),
        log_prob=log_prob,
        value=float(value[0]),
        pre_squash=z[0].copy(),
    )


def gae(rewards, values, dones, gamma: float, lam: float):
    """Recursive GAE; `values` carries the bootstrap value as its last entry.

    Returns (advantages, returns) where returns = advantages + values[:-1].
    """
    advantages = _kernels.gae_advantages(rewards, values, dones, gamma, lam)
    returns = advantages + np.asarray(values, dtype=np.float64)[:-1]
    return advantages, returns


@dataclass
class Minibatch:
    obs: np.ndarray  # (B, obs_dim)
    pre_squash: np.ndarray  # (B, act_dim)
    log_prob_old: np.ndarray  # (B,)
    advantages: np.ndarray  # (B,) already normalized if enabled
    returns: np.ndarray  # (B,)


def policy_entropy(params: NetParams) -> float:
    """Gaussian entropy of the pre-squash distribution (the loss bonus term)."""
    return float(np.sum(params.log_std) + 0.5 * params.act_dim * (1.0 + _LOG_2PI))


def loss_and_grads(params: NetParams, mb: Minibatch, cfg: PpoConfig):
    """Total PPO objective (to maximize) and its gradient for one minibatch.

    Returns (loss, grads, stats) where grads maps tensor names (as in
    NetParams.tensors()) to arrays and stats carries the scalar terms.
    """
    n = mb.obs.shape[0]
    p_hidden, mean = policy_forward(params, mb.obs)
    v_hidden, values = value_forward(params, mb.obs)

    log_prob_new = squashed_log_prob(mb.pre_squash, mean, params.log_std)
    ratio = np.exp(log_prob_new - mb.log_prob_old)
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
    surr_raw = ratio * mb.advantages
    surr_clip = clipped * mb.advantages
    surrogate = np.minimum(surr_raw, surr_clip)
    value_err = values - mb.returns
    entropy = policy_entropy(params)

    policy_term = float(np.mean(surrogate))
    value_loss = float(np.mean(value_err**2))
    total = policy_term - cfg.value_coef * value_loss + cfg.entropy_coef * entropy

    # gradient of mean(min(r*A, clip(r)*A)) w.r.t. ratio: flows only where the
    # unclipped branch is active (ties included)
    active = surr_raw <= surr_clip
    dl_dratio = np.where(active, mb.advantages, 0.0) / n
    dl_dlogp = dl_dratio * ratio
    std = np.exp(params.log_std)
    zdiff = (mb.pre_squash - mean) / (std**2)
    grad_mean = dl_dlogp[:, None] * zdiff
    grad_log_std = np.sum(
        dl_dlogp[:, None] * (((mb.pre_squash - mean) / std) ** 2 - 1.0), axis=0
    )
    grad_log_std = grad_log_std + cfg.entropy_coef  # entropy bonus, per dimension
    grad_values = -cfg.value_coef * 2.0 * value_err / n

    pw, pb = _kernels.mlp_backward(mb.obs, p_hidden, params.policy_w, grad_mean)
    vw, vb = _kernels.mlp_backward(mb.obs, v_hidden, params.value_w, grad_values[:, None])

    grads = {}
    for i in range(len(pw)):
        grads[f"policy_w{i}"] = pw[i]
        grads[f"policy_b{i}"] = pb[i]
    for i in range(len(vw)):
        grads[f"value_w{i}"] = vw[i]
        grads[f"value_b{i}"] = vb[i]
    grads["log_std"] = grad_log_std

    clip_fraction = float(np.mean(np.abs(ratio - 1.0) > cfg.clip))
    stats = {
        "policy_loss": -policy_term,
        "value_loss": value_loss,
        "entropy": entropy,
        "clip_fraction": clip_fraction,
    }
    return total, grads, stats


@dataclass
class Rollout:
    """Flat training batch spanning episode boundaries."""

    obs: np.ndarray  # (T, obs_dim)
    pre_squash: np.ndarray  # (T, act_dim)
    log_prob: np.ndarray  # (T,)
    values: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,)
    dones: np.ndarray  # (T,) 1.0 where the episode ended at this step
    bootstrap_value: float  # V(s_{T+1}) when the last step did not end its episode
    # V(s_end) at truncated episode ends (timeout/success), zero elsewhere and at
    # true terminals; folded into the final reward so values stay time-stationary
    trunc_bootstrap: np.ndarray | None = None


@dataclass
class UpdateStats:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    clip_fraction: float = 0.0
    first_clip_fraction: float = 0.0
    aborted: bool = False
    detail: str = ""


class _Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, tensors, grads):
        self.t += 1
        for name, tensor in tensors:
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(tensor))
            v = self.v.setdefault(name, np.zeros_like(tensor))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            tensor += self.lr * mhat / (np.sqrt(vhat) + self.eps)


class Updater:
    """Applies PPO updates; owns optimizer state across calls."""

    def __init__(self, cfg: PpoConfig):
        self.cfg = cfg
        self._adam = _Adam(cfg.lr) if cfg.optimizer == "adam" else None

    def update(self, params: NetParams, rollout: Rollout, rng) -> tuple[NetParams, UpdateStats]:
        cfg = self.cfg
        n = rollout.obs.shape[0]
        if n < cfg.minibatch:
            raise ValueError(f"rollout holds {n} steps, fewer than one minibatch ({cfg.minibatch})")
        values_ext = np.append(rollout.values, rollout.bootstrap_value)
        rewards = rollout.rewards * cfg.reward_scale
        if rollout.trunc_bootstrap is not None:
            rewards = rewards + cfg.gamma * rollout.trunc_bootstrap
        advantages, returns = gae(rewards, values_ext, rollout.dones, cfg.gamma, cfg.gae_lambda)
        if cfg.normalize_advantages:
            advantages = (advantages - advantages.mean()) / (advantages.std() + 1e-8)

        backup = params.copy()
        totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_fraction": 0.0}
        first_clip = 0.0
        count = 0
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                idx = order[start : start + cfg.minibatch]
                mb = Minibatch(
                    obs=rollout.obs[idx],
                    pre_squash=rollout.pre_squash[idx],
                    log_prob_old=rollout.log_prob[idx],
                    advantages=advantages[idx],
                    returns=returns[idx],
                )
                loss, grads, stats = loss_and_grads(params, mb, cfg)
                if not math.isfinite(loss):
                    return backup, UpdateStats(
                        aborted=True, detail=f"non-finite loss at minibatch {count}"
                    )
                if count == 0:
                    first_clip = stats["clip_fraction"]
                self._apply(params, grads)
                for key in totals:
                    totals[key] += stats[key]
                count += 1
        if not params.all_finite():
            return backup, UpdateStats(aborted=True, detail="non-finite parameters after update")
        return params, UpdateStats(
            policy_loss=totals["policy_loss"] / count,
            value_loss=totals["value_loss"] / count,
            entropy=totals["entropy"] / count,
            clip_fraction=totals["clip_fraction"] / count,
            first_clip_fraction=first_clip,
        )

    def _apply(self, params: NetParams, grads):
        if self._adam is not None:
            self._adam.step(params.tensors(), grads)
        else:
            for name, tensor in params.tensors():
                tensor += self.cfg.lr * grads[name]


def save(params: NetParams, path) -> None:
    """Write a checkpoint: magic, JSON shape header line, raw float64 payload."""
    header = {
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "hidden": list(params.hidden),
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in params.tensors()],
    }
    blob = bytearray()
    blob += _CKPT_MAGIC
    blob += (json.dumps(header, sort_keys=True) + "\n").encode()
    for _, tensor in params.tensors():
        blob += np.ascontiguousarray(tensor, dtype=np.float64).tobytes()
    Path(path).write_bytes(bytes(blob))


def load(path) -> NetParams:
    """Read a checkpoint written by save(); bit-exact round trip."""
    raw = Path(path).read_bytes()
    if not raw.startswith(_CKPT_MAGIC):
        raise ValueError(f"{path}: bad checkpoint magic at offset 0")
    body = raw[len(_CKPT_MAGIC) :]
    newline = body.find(b"\n")
    if newline < 0:
        raise ValueError(f"{path}: missing header terminator after offset {len(_CKPT_MAGIC)}")
    try:
        header = json.loads(body[:newline].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValueError(f"{path}: corrupt header at offset {len(_CKPT_MAGIC)}: {exc}") from exc
    payload = body[newline + 1 :]
    offset = len(_CKPT_MAGIC) + newline + 1
    tensors = {}
    pos = 0
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 8
        chunk = payload[pos : pos + nbytes]
        if len(chunk) < nbytes:
            raise ValueError(
                f"{path}: truncated payload for {entry['name']} at offset {offset + pos}"
            )
        tensors[entry["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        pos += nbytes
    if pos != len(payload):
        raise ValueError(f"{path}: {len(payload) - pos} trailing bytes at offset {offset + pos}")
    hidden = tuple(header["hidden"])
    n_layers = len(hidden) + 1
    try:
        params = NetParams(
            obs_dim=int(header["obs_dim"]),
            act_dim=int(header["act_dim"]),
            hidden=hidden,
            policy_w=[tensors[f"policy_w{i}"] for i in range(n_layers)],
            policy_b=[tensors[f"policy_b{i}"] for i in range(n_layers)],
            value_w=[tensors[f"value_w{i}"] for i in range(n_layers)],
            value_b=[tensors[f"value_b{i}"] for i in range(n_layers)],
            log_std=tensors["log_std"],
        )
    except KeyError as exc:
        raise ValueError(f"{path}: header/tensor mismatch, missing {exc}") from exc
    return params


def check_compat(params: NetParams, obs_dim: int, act_dim: int) -> None:
    """Raise when a checkpoint's dimensions do not match the environment."""
    if params.obs_dim != obs_dim or params.act_dim != act_dim:
        raise ValueError(
            f"checkpoint dims (obs={params.obs_dim}, act={params.act_dim}) do not match "
            f"environment (obs={obs_dim}, act={act_dim})"
        )
