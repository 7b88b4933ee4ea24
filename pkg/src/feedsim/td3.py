"""Twin-delayed actor-critic learner over order-book observations.

The actor embeds the snapshot sequence with an LSTM, concatenates the
internal state, and maps through three dense+layernorm+tanh blocks to two
bounded action heads. Critics consume the flattened observation plus the
action. Targets are soft-updated copies; actor updates are delayed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import IO, Optional

import numpy as np

from . import neuralnet as nn
from .simkernel import stream_seed

A0_RANGE = 2.0
A1_RANGE = 1.0


@dataclass(frozen=True)
class Action:
    a0: float
    a1: float

    def clamped(self) -> "Action":
        return Action(
            float(np.clip(self.a0, -A0_RANGE, A0_RANGE)),
            float(np.clip(self.a1, -A1_RANGE, A1_RANGE)),
        )

    def as_array(self) -> np.ndarray:
        return np.array([self.a0, self.a1], dtype=np.float64)


@dataclass(frozen=True)
class Observation:
    """internal: [2]; environmental: [seq_len, 4*depth], oldest row first."""

    internal: np.ndarray
    environmental: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.internal).all() and np.isfinite(self.environmental).all()):
            raise ValueError("observation contains non-finite features")

    def flat(self) -> np.ndarray:
        return np.concatenate([self.environmental.ravel(), self.internal])


@dataclass(frozen=True)
class Transition:
    s: Observation
    a: Action
    r: float
    s_next: Observation
    done: bool


class ReplayBuffer:
    """Circular store with uniform without-replacement batch sampling."""

    def __init__(self, capacity: int = 100_000, rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.rng = rng or np.random.default_rng(0)
        self._data: list[Transition] = []
        self._write = 0

    def __len__(self) -> int:
        return len(self._data)

    def add(self, t: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(t)
        else:
            self._data[self._write] = t
        self._write = (self._write + 1) % self.capacity

    def sample(self, batch: int) -> list[Transition]:
        if batch > len(self._data):
            raise ValueError("buffer holds fewer transitions than batch size")
        idx = self.rng.choice(len(self._data), size=batch, replace=False)
        return [self._data[i] for i in idx]

    def clear(self) -> None:
        self._data.clear()
        self._write = 0


@dataclass(frozen=True)
class TD3Config:
    seq_len: int = 20
    depth: int = 10
    embed: int = 6
    width: int = 32
    lr: float = 0.01
    explore_sigma: float = 0.2
    policy_sigma: float = 0.4
    batch: int = 32
    policy_freq: int = 2
    tau: float = 0.02
    gamma: float = 0.99
    policy_noise_clip: float = 0.5
    buffer_capacity: int = 100_000
    internal_dim: int = 2

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must be in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must be in [0, 1]")
        for name in ("seq_len", "depth", "embed", "width", "batch", "policy_freq"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def snap_features(self) -> int:
        return 4 * self.depth

    @property
    def obs_dim(self) -> int:
        return self.seq_len * self.snap_features + self.internal_dim


class ActorNet:
    def __init__(self, cfg: TD3Config, rng: np.random.Generator):
        self.cfg = cfg
        self.lstm = nn.LSTMCell(cfg.snap_features, cfg.embed, rng)
        dims = [cfg.embed + cfg.internal_dim, cfg.width, cfg.width, cfg.width]
        self.blocks = []
        for i in range(3):
            self.blocks.append((nn.DenseLayer(dims[i], dims[i + 1], rng), nn.LayerNorm(dims[i + 1])))
        self.head0 = nn.DenseLayer(cfg.width, 1, rng)
        self.head1 = nn.DenseLayer(cfg.width, 1, rng)

    def forward_batch(self, env: np.ndarray, internal: np.ndarray) -> nn.Tensor:
        """env: [B, seq_len, 4*depth]; internal: [B, internal_dim] -> [B, 2]."""
        batch = env.shape[0]
        h = nn.constant(np.zeros((batch, self.cfg.embed)))
        c = nn.constant(np.zeros((batch, self.cfg.embed)))
        for t in range(self.cfg.seq_len):
            h, c = self.lstm.step(nn.constant(env[:, t, :]), h, c)
        x = nn.concat(h, nn.constant(internal))
        for dense, norm in self.blocks:
            x = nn.tanh(norm.forward(dense.forward(x)))
        a0 = nn.scale(nn.tanh(self.head0.forward(x)), A0_RANGE)
        a1 = nn.tanh(self.head1.forward(x))
        return nn.concat(a0, a1)

    def act(self, obs: Observation) -> Action:
        out = self.forward_batch(obs.environmental[None, :, :], obs.internal[None, :])
        return Action(float(out.value[0, 0]), float(out.value[0, 1]))

    def parameters(self) -> list[tuple[str, nn.Tensor]]:
        params = [(f"lstm/{n}", p) for n, p in self.lstm.parameters()]
        for i, (dense, norm) in enumerate(self.blocks):
            params += [(f"fc{i}/{n}", p) for n, p in dense.parameters()]
            params += [(f"ln{i}/{n}", p) for n, p in norm.parameters()]
        params += [(f"head0/{n}", p) for n, p in self.head0.parameters()]
        params += [(f"head1/{n}", p) for n, p in self.head1.parameters()]
        return params


class CriticNet:
    """Q(s, a) on the flattened observation concatenated with the action."""

    def __init__(self, cfg: TD3Config, rng: np.random.Generator):
        self.cfg = cfg
        dims = [cfg.obs_dim + 2, cfg.width, cfg.width, cfg.width]
        self.blocks = []
        for i in range(3):
            self.blocks.append((nn.DenseLayer(dims[i], dims[i + 1], rng), nn.LayerNorm(dims[i + 1])))
        self.head = nn.DenseLayer(cfg.width, 1, rng)

    def forward_batch(self, obs_flat: np.ndarray, action: nn.Tensor) -> nn.Tensor:
        x = nn.concat(nn.constant(obs_flat), action)
        for dense, norm in self.blocks:
            x = nn.tanh(norm.forward(dense.forward(x)))
        return self.head.forward(x)

    def parameters(self) -> list[tuple[str, nn.Tensor]]:
        params = []
        for i, (dense, norm) in enumerate(self.blocks):
            params += [(f"fc{i}/{n}", p) for n, p in dense.parameters()]
            params += [(f"ln{i}/{n}", p) for n, p in norm.parameters()]
        params += [(f"head/{n}", p) for n, p in self.head.parameters()]
        return params


def soft_update(net_params, target_params, tau: float) -> None:
    """target <- tau * net + (1 - tau) * target, parameter by parameter."""
    for (name_n, p_n), (name_t, p_t) in zip(net_params, target_params):
        if p_n.value.shape != p_t.value.shape:
            raise ValueError(f"shape mismatch for {name_n}: {p_n.value.shape} vs {p_t.value.shape}")
        p_t.value *= 1.0 - tau
        p_t.value += tau * p_n.value


@dataclass(frozen=True)
class TrainMetrics:
    step: int
    critic1_loss: float
    critic2_loss: float
    actor_loss: Optional[float]
    target_drift: float
    skipped: bool = False


class MetricsLogger:
    """Appends per-step training metrics to a CSV file."""

    FIELDS = ("step", "critic1_loss", "critic2_loss", "actor_loss", "reward")

    def __init__(self, path: str):
        self._handle: IO[str] = open(path, "a", newline="")
        self._writer = csv.writer(self._handle)
        if self._handle.tell() == 0:
            self._writer.writerow(self.FIELDS)

    def log(self, metrics: TrainMetrics, reward: float) -> None:
        actor = "" if metrics.actor_loss is None else repr(metrics.actor_loss)
        self._writer.writerow(
            [metrics.step, repr(metrics.critic1_loss), repr(metrics.critic2_loss), actor, repr(reward)]
        )

    def close(self) -> None:
        self._handle.close()


class TD3Learner:
    """One actor, twin critics, their targets, replay, and the update rule."""

    def __init__(self, cfg: TD3Config, seed: int):
        self.cfg = cfg
        init_rng = np.random.default_rng(stream_seed(seed, "td3/init"))
        self.actor = ActorNet(cfg, init_rng)
        self.critic1 = CriticNet(cfg, init_rng)
        self.critic2 = CriticNet(cfg, init_rng)
        self.actor_target = ActorNet(cfg, init_rng)
        self.critic1_target = CriticNet(cfg, init_rng)
        self.critic2_target = CriticNet(cfg, init_rng)
        soft_update(self.actor.parameters(), self.actor_target.parameters(), 1.0)
        soft_update(self.critic1.parameters(), self.critic1_target.parameters(), 1.0)
        soft_update(self.critic2.parameters(), self.critic2_target.parameters(), 1.0)
        self.actor_opt = nn.Adam([p for _, p in self.actor.parameters()], lr=cfg.lr)
        self.critic1_opt = nn.Adam([p for _, p in self.critic1.parameters()], lr=cfg.lr)
        self.critic2_opt = nn.Adam([p for _, p in self.critic2.parameters()], lr=cfg.lr)
        self.buffer = ReplayBuffer(
            cfg.buffer_capacity, np.random.default_rng(stream_seed(seed, "td3/buffer"))
        )
        self.explore_rng = np.random.default_rng(stream_seed(seed, "td3/explore"))
        self.policy_rng = np.random.default_rng(stream_seed(seed, "td3/policy"))
        self.updates = 0
        self.actor_updates = 0

    # -- acting ------------------------------------------------------------

    def select_action(self, obs: Observation, explore: bool) -> Action:
        action = self.actor.act(obs)
        if explore and self.cfg.explore_sigma > 0:
            noise = self.explore_rng.normal(0.0, self.cfg.explore_sigma, size=2)
            action = Action(action.a0 + noise[0], action.a1 + noise[1])
        return action.clamped()

    # -- updates -----------------------------------------------------------

    def _stack(self, batch: list[Transition]):
        env = np.stack([t.s.environmental for t in batch])
        internal = np.stack([t.s.internal for t in batch])
        flat = np.stack([t.s.flat() for t in batch])
        actions = np.stack([t.a.as_array() for t in batch])
        rewards = np.array([[t.r] for t in batch])
        env_n = np.stack([t.s_next.environmental for t in batch])
        internal_n = np.stack([t.s_next.internal for t in batch])
        flat_n = np.stack([t.s_next.flat() for t in batch])
        dones = np.array([[1.0 if t.done else 0.0] for t in batch])
        return env, internal, flat, actions, rewards, env_n, internal_n, flat_n, dones

    def compute_target(self, rewards, env_n, internal_n, flat_n, dones) -> np.ndarray:
        """y = r + gamma * (1 - done) * min(Q'_1, Q'_2)(s', smoothed pi'(s'))."""
        cfg = self.cfg
        a_next = self.actor_target.forward_batch(env_n, internal_n).value
        noise = np.clip(
            self.policy_rng.normal(0.0, cfg.policy_sigma, size=a_next.shape),
            -cfg.policy_noise_clip,
            cfg.policy_noise_clip,
        )
        a_next = a_next + noise
        a_next[:, 0] = np.clip(a_next[:, 0], -A0_RANGE, A0_RANGE)
        a_next[:, 1] = np.clip(a_next[:, 1], -A1_RANGE, A1_RANGE)
        a_tensor = nn.constant(a_next)
        q1 = self.critic1_target.forward_batch(flat_n, a_tensor).value
        q2 = self.critic2_target.forward_batch(flat_n, a_tensor).value
        return rewards + cfg.gamma * (1.0 - dones) * np.minimum(q1, q2)

    def update_critics(self, flat, actions, y) -> tuple[float, float]:
        losses = []
        for critic, opt in ((self.critic1, self.critic1_opt), (self.critic2, self.critic2_opt)):
            opt.zero_grad()
            q = critic.forward_batch(flat, nn.constant(actions))
            loss = nn.mse(q, y)
            loss.backward()
            opt.step()
            losses.append(float(loss.value[0, 0]))
        return losses[0], losses[1]

    def update_actor(self, env, internal, flat) -> float:
        self.actor_opt.zero_grad()
        self.critic1_opt.zero_grad()  # gradient flows through critic 1; discard it
        actions = self.actor.forward_batch(env, internal)
        q = self.critic1.forward_batch(flat, actions)
        loss = nn.scale(nn.mean_all(q), -1.0)
        loss.backward()
        self.actor_opt.step()
        self.critic1_opt.zero_grad()
        return float(loss.value[0, 0])

    def target_drift(self) -> float:
        total = 0.0
        for (_, p), (_, t) in zip(self.actor.parameters(), self.actor_target.parameters()):
            diff = p.value - t.value
            total += float((diff * diff).sum())
        return float(np.sqrt(total))

    def train_step(self) -> TrainMetrics:
        cfg = self.cfg
        if len(self.buffer) < cfg.batch:
            return TrainMetrics(self.updates, 0.0, 0.0, None, self.target_drift(), skipped=True)
        batch = self.buffer.sample(cfg.batch)
        env, internal, flat, actions, rewards, env_n, internal_n, flat_n, dones = self._stack(batch)
        y = self.compute_target(rewards, env_n, internal_n, flat_n, dones)
        c1, c2 = self.update_critics(flat, actions, y)
        self.updates += 1
        actor_loss = None
        if self.updates % cfg.policy_freq == 0:
            actor_loss = self.update_actor(env, internal, flat)
            self.actor_updates += 1
            soft_update(self.actor.parameters(), self.actor_target.parameters(), cfg.tau)
            soft_update(self.critic1.parameters(), self.critic1_target.parameters(), cfg.tau)
            soft_update(self.critic2.parameters(), self.critic2_target.parameters(), cfg.tau)
        return TrainMetrics(self.updates, c1, c2, actor_loss, self.target_drift())

    # -- persistence ---------------------------------------------------------

    def named_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        nets = {
            "actor": self.actor,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "actor_target": self.actor_target,
            "critic1_target": self.critic1_target,
            "critic2_target": self.critic2_target,
        }
        for prefix, net in nets.items():
            for name, p in net.parameters():
                out[f"{prefix}/{name}"] = p.value.copy()
        return out

    def save(self, path: str) -> None:
        nn.save_checkpoint(path, self.named_tensors())

    def load(self, path: str) -> None:
        tensors = nn.load_checkpoint(path)
        nets = {
            "actor": self.actor,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "actor_target": self.actor_target,
            "critic1_target": self.critic1_target,
            "critic2_target": self.critic2_target,
        }
        for prefix, net in nets.items():
            for name, p in net.parameters():
                key = f"{prefix}/{name}"
                if key not in tensors:
                    raise ValueError(f"checkpoint missing tensor {key}")
                if tensors[key].shape != p.value.shape:
                    raise ValueError(f"checkpoint shape mismatch for {key}")
                p.value[:] = tensors[key]
