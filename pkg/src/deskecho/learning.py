"""Navigate-skill reinforcement learning: a small tanh MLP with hand-derived
backpropagation, generalized advantage estimation, and clipped-surrogate
policy optimization.

The loss is  policy_clip + value_coef * value_mse - entropy_coef * entropy,
with the gradient L2-clipped at max_grad_norm. Training is single-threaded
and bit-deterministic given (seed, config).
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np

from .errors import NonFiniteLoss
from .observe import NavObservationStack
from .soundbank import SoundBank
from .world import (AgentState, MaterialProperties, NavAction,
                    ObjectInstance, Scene, WallSegment, World)
from .acoustics import RirCache

NAV_ACTIONS = (NavAction.MOVE_FORWARD, NavAction.TURN_LEFT,
               NavAction.TURN_RIGHT, NavAction.STOP)
N_ACTIONS = len(NAV_ACTIONS)

_PARAM_ORDER = ("w1", "b1", "w2", "b2", "wp", "bp", "wv", "bv")


@dataclass
class PpoConfig:
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    epochs: int = 2
    minibatches: int = 2
    rollout_length: int = 128
    value_coef: float = 0.5
    entropy_coef: float = 0.1
    max_grad_norm: float = 0.5
    total_steps: int = 50_000      # desk preset; the full run uses 500_000
    hidden: int = 64               # desk preset; the full run uses 512
    num_envs: int = 8              # parallel seeded rollout streams
    linear_decay: bool = True
    # anneal the entropy bonus with progress so the stop decision can
    # sharpen late in training; 0.1 flat leaves the policy near-uniform
    # between stopping and wandering inside the goal zone
    entropy_decay: bool = True

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must lie in (0, 1]")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gae lambda must lie in [0, 1]")
        if self.clip <= 0.0:
            raise ValueError("clip range must be positive")


DESK_CONFIG = PpoConfig()
PAPER_CONFIG = PpoConfig(total_steps=500_000, hidden=512)


class PolicyNet:
    """Shared tanh trunk (2 hidden layers) with action-logit and value heads."""

    def __init__(self, obs_dim: int, hidden: int = 64, n_actions: int = N_ACTIONS,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.obs_dim = obs_dim
        self.hidden = hidden
        self.n_actions = n_actions

        def init(fan_in, shape, scale=1.0):
            return rng.standard_normal(shape) * scale / math.sqrt(fan_in)

        self.params = {
            "w1": init(obs_dim, (obs_dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": init(hidden, (hidden, hidden)),
            "b2": np.zeros(hidden),
            "wp": init(hidden, (hidden, n_actions), scale=0.01),
            "bp": np.zeros(n_actions),
            "wv": init(hidden, (hidden, 1)),
            "bv": np.zeros(1),
        }

    # -- parameter vector helpers ---------------------------------------

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in _PARAM_ORDER])

    def set_flat(self, flat: np.ndarray):
        offset = 0
        for k in _PARAM_ORDER:
            size = self.params[k].size
            self.params[k] = flat[offset:offset + size].reshape(self.params[k].shape).copy()
            offset += size

    def copy(self) -> "PolicyNet":
        twin = PolicyNet(self.obs_dim, self.hidden, self.n_actions)
        twin.set_flat(self.get_flat())
        return twin

    # -- forward ---------------------------------------------------------

    def forward(self, obs: np.ndarray):
        """(logits [n, actions], values [n]) for a batch of observations."""
        _, logits, values = self._forward_full(np.atleast_2d(obs))
        return logits, values

    def _forward_full(self, x):
        p = self.params
        h1 = np.tanh(x @ p["w1"] + p["b1"])
        h2 = np.tanh(h1 @ p["w2"] + p["b2"])
        logits = h2 @ p["wp"] + p["bp"]
        values = (h2 @ p["wv"] + p["bv"])[:, 0]
        return (x, h1, h2), logits, values

    def log_probs(self, logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward_backward(net: PolicyNet, batch: dict,
                     clip_range: float = 0.2, value_coef: float = 0.5,
                     entropy_coef: float = 0.1,
                     max_grad_norm: float | None = 0.5):
    """Loss and hand-derived gradient of the clipped-surrogate objective.

    ``batch`` holds obs, actions, old_log_probs, advantages (already
    normalized), returns. The flat gradient is L2-clipped at
    ``max_grad_norm`` (pass None to disable, e.g. for finite-difference
    verification). Also returns a stats dict.
    """
    obs = np.atleast_2d(batch["obs"])
    actions = np.asarray(batch["actions"], dtype=int)
    old_logp = np.asarray(batch["old_log_probs"])
    adv = np.asarray(batch["advantages"])
    rets = np.asarray(batch["returns"])
    n = len(actions)
    if n == 0:
        raise ValueError("empty batch")

    (x, h1, h2), logits, values = net._forward_full(obs)
    logp = net.log_probs(logits)
    probs = np.exp(logp)
    logp_a = logp[np.arange(n), actions]

    ratio = np.exp(logp_a - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * adv
    policy_loss = -float(np.mean(np.minimum(unclipped, clipped)))

    value_err = values - rets
    value_loss = float(np.mean(value_err ** 2))

    entropy_per = -np.sum(probs * logp, axis=1)
    entropy = float(np.mean(entropy_per))

    loss = policy_loss + value_coef * value_loss - entropy_coef * entropy
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"loss={loss}")

    # d loss / d logits
    use_unclipped = (unclipped <= clipped).astype(float)
    dlogp_a = -(adv * ratio * use_unclipped) / n
    one_hot = np.zeros_like(probs)
    one_hot[np.arange(n), actions] = 1.0
    dlogits = dlogp_a[:, None] * (one_hot - probs)
    # entropy term: dH/dz_j = -p_j (log p_j + H)
    dlogits += (entropy_coef / n) * probs * (logp + entropy_per[:, None])
    # value head
    dvalues = (value_coef * 2.0 / n) * value_err

    p = net.params
    grads = {}
    dh2 = dlogits @ p["wp"].T + dvalues[:, None] @ p["wv"].T
    grads["wp"] = h2.T @ dlogits
    grads["bp"] = dlogits.sum(axis=0)
    grads["wv"] = h2.T @ dvalues[:, None]
    grads["bv"] = np.array([dvalues.sum()])
    da2 = dh2 * (1.0 - h2 ** 2)
    grads["w2"] = h1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    dh1 = da2 @ p["w2"].T
    da1 = dh1 * (1.0 - h1 ** 2)
    grads["w1"] = x.T @ da1
    grads["b1"] = da1.sum(axis=0)

    flat = np.concatenate([grads[k].ravel() for k in _PARAM_ORDER])
    if max_grad_norm is not None:
        norm = float(np.linalg.norm(flat))
        if norm > max_grad_norm:
            flat = flat * (max_grad_norm / norm)
    stats = {"policy_loss": policy_loss, "value_loss": value_loss,
             "entropy": entropy}
    return loss, flat, stats


def compute_gae(rewards, values, dones, bootstrap_value: float,
                gamma: float, lam: float, truncation_values=None):
    """Backward generalized-advantage recursion; returns = adv + values.

    ``truncation_values`` optionally maps step index -> value of the state
    a time-limit cut off; those steps bootstrap through the horizon instead
    of treating it as a true terminal.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    truncation_values = truncation_values or {}
    T = len(rewards)
    adv = np.zeros(T)
    running = 0.0
    next_value = bootstrap_value
    for t in range(T - 1, -1, -1):
        if dones[t] and t in truncation_values:
            delta = rewards[t] + gamma * truncation_values[t] - values[t]
            running = delta
        else:
            cont = 0.0 if dones[t] else 1.0
            delta = rewards[t] + gamma * next_value * cont - values[t]
            running = delta + gamma * lam * cont * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# ---------------------------------------------------------------------------
# Audio-goal navigation environment
# ---------------------------------------------------------------------------

_ENV_MATERIAL = {"brick": MaterialProperties((0.02, 0.03, 0.04, 0.05),
                                             (0.0, 0.0, 0.0, 0.0))}


def _empty_room(side: float = 6.0) -> Scene:
    c = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side)]
    walls = tuple(WallSegment(c[k], c[(k + 1) % 4], "brick") for k in range(4))
    return Scene("nav-room", (0.0, 0.0, side, side), 0.25,
                 dict(_ENV_MATERIAL), walls=walls)


class NavEnv:
    """Empty-room audio-goal task: navigate to a looping sound beacon and
    Stop within the success radius.

    Reward: +10 on a successful Stop, -0.01 per step, plus 1.0 x the step's
    reduction in distance to the source. The beacon draws from the
    continuous-envelope warble family so received level tracks distance;
    gated or decaying clips would decouple loudness from range.
    """

    SUCCESS_RADIUS = 0.5
    STEP_PENALTY = -0.01
    SUCCESS_REWARD = 10.0
    SHAPING = 1.0
    BEACON_CATEGORY = "Furby"

    def __init__(self, seed: int = 0, bank: SoundBank | None = None,
                 side: float = 6.0, horizon: int = 80, max_order: int = 0):
        # max_order 0 renders the beacon free-field: received level then
        # tracks 1/distance exactly, which keeps the stop cue clean
        self.rng = np.random.default_rng([seed, 0xA0D10])
        self.scene = _empty_room(side)
        self.bank = bank or SoundBank.build(0)
        self.horizon = horizon
        self.max_order = max_order
        self.rir_cache = RirCache(self.scene, max_order=max_order)
        self.stack = NavObservationStack(rir_fn=self.rir_cache, max_order=max_order)
        self.world: World | None = None
        self.goal = None
        self.steps = 0
        self.obs_dim = len(self.reset())

    MIN_START_DIST = 1.5
    MAX_START_DIST = 3.5

    def reset(self) -> np.ndarray:
        source_pos = self._sample_position(margin=0.6)
        while True:
            start = self._sample_position(margin=0.4)
            if self.MIN_START_DIST <= math.dist(start, source_pos) <= self.MAX_START_DIST:
                break
        heading = float(int(self.rng.integers(0, 4)) * math.pi / 2.0)
        clips = self.bank.clips(category=self.BEACON_CATEGORY, split="train")
        clip = clips[int(self.rng.integers(len(clips)))]
        source = ObjectInstance(id="goal", category=clip.category, kind="rigid",
                                position=source_pos, sound_clip=clip.clip_id,
                                emitting=True)
        agent = AgentState(base_position=start, heading=heading)
        self.world = World(self.scene, agent, {"goal": source})
        self.world.bank = self.bank
        self.goal = source_pos
        self.steps = 0
        self._last_dist = math.dist(start, self.goal)
        self.stack.reset()
        return self._observe()

    def _sample_position(self, margin: float):
        x0, y0, x1, y1 = self.scene.bounds
        cs = self.scene.cell_size
        gx = int(self.rng.integers(int(margin / cs) + 1,
                                   int((x1 - x0 - margin) / cs)))
        gy = int(self.rng.integers(int(margin / cs) + 1,
                                   int((y1 - y0 - margin) / cs)))
        return ((gx + 0.5) * cs, (gy + 0.5) * cs)

    def _observe(self) -> np.ndarray:
        return self.stack.observe(self.world)

    def step(self, action_idx: int):
        """(obs, reward, done, info) for one discrete action."""
        action = NAV_ACTIONS[action_idx]
        reward = self.STEP_PENALTY
        done = False
        success = False
        if action is NavAction.STOP:
            done = True
            success = math.dist(self.world.agent.base_position,
                                self.goal) <= self.SUCCESS_RADIUS
            if success:
                reward += self.SUCCESS_REWARD
        else:
            self.world.step(action)
            dist = math.dist(self.world.agent.base_position, self.goal)
            reward += self.SHAPING * (self._last_dist - dist)
            self._last_dist = dist
        self.steps += 1
        info = {"success": success}
        if self.steps >= self.horizon and not done:
            done = True
            info["truncated"] = True
            info["terminal_obs"] = self._observe()
        obs = self._observe() if not done else self.reset()
        return obs, reward, done, info


def make_env_factory(bank: SoundBank | None = None, **kwargs):
    shared_bank = bank or SoundBank.build(0)

    def factory(seed: int) -> NavEnv:
        return NavEnv(seed=seed, bank=shared_bank, **kwargs)

    return factory


# ---------------------------------------------------------------------------
# PPO training loop
# ---------------------------------------------------------------------------

class _Adam:
    def __init__(self, size, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def update(self, params, grad, lr):
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad ** 2
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params - lr * mhat / (np.sqrt(vhat) + self.eps)


# Fixed factor applied to env rewards inside the trainer: keeps value
# targets O(1) so critic regression on sparse +10 successes cannot flood
# the shared trunk through the gradient clip, while staying stationary
# (a running normalizer would keep moving the critic's target scale).
REWARD_SCALE = 0.1


STOP_INIT_BIAS = -3.0   # keeps early rollouts from terminating immediately


def train_navigate(env_factory, config: PpoConfig = DESK_CONFIG, seed: int = 0):
    """PPO training of the Navigate policy; returns (net, curve) where curve
    rows are dicts with cumulative step counts, mean episode return, rolling
    success rate, and loss statistics.

    Rollouts come from ``num_envs`` parallel seeded environments feeding one
    buffer through a serialized hand-off; ``total_steps`` counts environment
    steps summed over all streams.
    """
    rng = np.random.default_rng([seed, 0x990])
    envs = [env_factory(seed * 1000 + k) for k in range(config.num_envs)]
    net = PolicyNet(envs[0].obs_dim, hidden=config.hidden, rng=rng)
    net.params["bp"][NAV_ACTIONS.index(NavAction.STOP)] = STOP_INIT_BIAS
    adam = _Adam(net.get_flat().size)

    curve = []
    obs = np.stack([env.reset() for env in envs])
    steps_done = 0
    episode_return = np.zeros(config.num_envs)
    finished_returns: list[float] = []
    finished_success: list[bool] = []

    while steps_done < config.total_steps:
        T = config.rollout_length
        N = config.num_envs
        buf_obs = np.zeros((N, T, envs[0].obs_dim))
        buf_actions = np.zeros((N, T), dtype=int)
        buf_logp = np.zeros((N, T))
        buf_rewards = np.zeros((N, T))
        buf_values = np.zeros((N, T))
        buf_dones = np.zeros((N, T), dtype=bool)
        truncations: list[dict[int, float]] = [{} for _ in range(N)]

        for t in range(T):
            logits, values = net.forward(obs)
            logp = net.log_probs(logits)
            probs = np.exp(logp)
            for k, env in enumerate(envs):
                action = int(rng.choice(net.n_actions, p=probs[k]))
                buf_obs[k, t] = obs[k]
                buf_actions[k, t] = action
                buf_logp[k, t] = logp[k, action]
                buf_values[k, t] = values[k]
                nxt, reward, done, info = env.step(action)
                obs[k] = nxt
                buf_rewards[k, t] = reward
                buf_dones[k, t] = done
                episode_return[k] += reward
                if done:
                    finished_returns.append(float(episode_return[k]))
                    finished_success.append(info["success"])
                    episode_return[k] = 0.0
                    if info.get("truncated"):
                        _, tv = net.forward(info["terminal_obs"][None, :])
                        truncations[k][t] = float(tv[0])
        steps_done += N * T

        _, boot = net.forward(obs)
        adv = np.zeros((N, T))
        rets = np.zeros((N, T))
        for k in range(N):
            adv[k], rets[k] = compute_gae(
                buf_rewards[k] * REWARD_SCALE, buf_values[k], buf_dones[k],
                float(boot[k]), config.gamma, config.gae_lambda,
                truncation_values=truncations[k])

        flat_obs = buf_obs.reshape(N * T, -1)
        flat_actions = buf_actions.ravel()
        flat_logp = buf_logp.ravel()
        flat_adv = adv.ravel()
        flat_rets = rets.ravel()

        progress = max(0.0, 1.0 - steps_done / config.total_steps)
        lr = config.learning_rate * (progress if config.linear_decay else 1.0)
        # entropy decays over the first 40% of training so the remaining
        # learning-rate budget can sharpen the stop decision
        ent_frac = max(0.0, 1.0 - 2.5 * (1.0 - progress))
        entropy_coef = config.entropy_coef * (ent_frac if config.entropy_decay else 1.0)
        stats = {}
        for _ in range(config.epochs):
            order = rng.permutation(N * T)
            for chunk in np.array_split(order, config.minibatches):
                mb_adv = flat_adv[chunk]
                mb_adv = (mb_adv - mb_adv.mean()) / (mb_adv.std() + 1e-8)
                batch = {"obs": flat_obs[chunk], "actions": flat_actions[chunk],
                         "old_log_probs": flat_logp[chunk],
                         "advantages": mb_adv, "returns": flat_rets[chunk]}
                loss, grad, stats = forward_backward(
                    net, batch, clip_range=config.clip,
                    value_coef=config.value_coef,
                    entropy_coef=entropy_coef,
                    max_grad_norm=config.max_grad_norm)
                net.set_flat(adam.update(net.get_flat(), grad, lr))

        window_ret = finished_returns[-40:]
        window_suc = finished_success[-40:]
        curve.append({
            "steps": steps_done,
            "mean_return": float(np.mean(window_ret)) if window_ret else 0.0,
            "success_rate": float(np.mean(window_suc)) if window_suc else 0.0,
            "entropy": stats.get("entropy", 0.0),
            "policy_loss": stats.get("policy_loss", 0.0),
            "value_loss": stats.get("value_loss", 0.0),
        })
    return net, curve


def evaluate_navigate(net: PolicyNet, env_factory, episodes: int = 50,
                      seed: int = 1000, deterministic: bool = False) -> float:
    """Success rate over fresh evaluation episodes.

    By default actions are sampled from the trained distribution (seeded),
    matching how the stochastic policy is meant to act; pass
    deterministic=True for argmax rollouts.
    """
    env = env_factory(seed)
    rng = np.random.default_rng([seed, 0xE7A1])
    successes = 0
    for _ in range(episodes):
        obs = env.reset()
        done = False
        info = {}
        while not done:
            logits, _ = net.forward(obs[None, :])
            if deterministic:
                action = int(np.argmax(logits[0]))
            else:
                probs = np.exp(net.log_probs(logits)[0])
                action = int(rng.choice(net.n_actions, p=probs))
            obs, _, done, info = env.step(action)
        successes += bool(info.get("success"))
    return successes / episodes


# ---------------------------------------------------------------------------
# Checkpoints and learning-curve files
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"DENV"


def save_checkpoint(net: PolicyNet, path, config: PpoConfig | None = None):
    """Binary checkpoint: magic, u32 JSON-header length, header, then the
    flat float64 little-endian parameter block."""
    header = json.dumps({
        "obs_dim": net.obs_dim, "hidden": net.hidden,
        "n_actions": net.n_actions,
        "config": asdict(config) if config else None,
    }).encode()
    flat = net.get_flat().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(flat.tobytes())


def load_checkpoint(path) -> tuple[PolicyNet, dict | None]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CKPT_MAGIC:
            raise ValueError("not a policy checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        flat = np.frombuffer(fh.read(), dtype="<f8")
    net = PolicyNet(header["obs_dim"], header["hidden"], header["n_actions"])
    net.set_flat(flat.astype(np.float64))
    return net, header.get("config")


def save_curve(curve: list[dict], path):
    if not curve:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(curve[0].keys()))
        writer.writeheader()
        writer.writerows(curve)
