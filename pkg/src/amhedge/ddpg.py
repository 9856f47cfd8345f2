"""Deep deterministic policy gradient for the hedging environment."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytic import OptionSpec
from .env import HedgeEnv
from .market import STREAM_MISC, PathSet, substream
from .nn import MLP, make_optimizer, soft_update

STATE_DIM = 3


class TrainingDiverged(RuntimeError):
    """Raised when a loss or a weight becomes non-finite during training."""

    def __init__(self, report: dict):
        self.report = report
        super().__init__(f"training diverged at episode {report.get('episode')}: {report.get('reason')}")


@dataclass(frozen=True)
class AgentConfig:
    actor_lr: float = 5e-6
    critic_lr: float = 5e-4
    episodes: int = 5000
    steps_per_episode: int = 25
    actor_arch: tuple = (64, 64)
    critic_arch: tuple = (64, 64)
    gamma: float = 0.99
    soft_tau: float = 0.005
    buffer_capacity: int = 100_000
    batch_size: int = 64
    warmup: int = 1000
    noise_sigma: float = 0.1
    noise_final: float = 0.01
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "actor_arch", tuple(int(w) for w in self.actor_arch))
        object.__setattr__(self, "critic_arch", tuple(int(w) for w in self.critic_arch))
        if self.actor_lr < 0 or self.critic_lr < 0:
            raise ValueError("learning rates must be non-negative")
        if not self.actor_arch or not self.critic_arch:
            raise ValueError("architectures must have at least one hidden layer")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 < self.soft_tau <= 1:
            raise ValueError("soft_tau must lie in (0, 1]")
        if self.episodes < 1 or self.steps_per_episode < 1:
            raise ValueError("episodes and steps_per_episode must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actor_arch"] = list(self.actor_arch)
        d["critic_arch"] = list(self.critic_arch)
        return d


class ReplayBuffer:
    """Fixed-capacity FIFO of transitions stored in preallocated arrays."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    def __len__(self):
        return self.size

    def add(self, state, action, reward, next_state, done):
        i = self._head
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = done
        self._head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if batch_size > self.size:
            raise ValueError("not enough transitions to sample")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.dones[idx])


class DDPG:
    """Actor, critic, their target copies and optimizers."""

    def __init__(self, cfg: AgentConfig):
        self.cfg = cfg
        rng = substream(cfg.seed, STREAM_MISC, 0)
        self.actor = MLP.init([STATE_DIM, *cfg.actor_arch, 1], "neg_sigmoid", rng, final_scale=1e-3)
        self.critic = MLP.init([STATE_DIM + 1, *cfg.critic_arch, 1], "linear", rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = make_optimizer(cfg.optimizer, cfg.actor_lr)
        self.critic_opt = make_optimizer(cfg.optimizer, cfg.critic_lr)

    def act(self, states) -> np.ndarray:
        return self.actor(states)[:, 0]

    def critic_update(self, batch) -> float:
        states, actions, rewards, next_states, dones = batch
        cfg = self.cfg
        next_actions = self.actor_target(next_states)
        q_next = self.critic_target(np.hstack([next_states, next_actions]))[:, 0]
        y = rewards + cfg.gamma * np.where(dones, 0.0, q_next)
        q, cache = self.critic.forward(np.hstack([states, actions[:, None]]))
        diff = q[:, 0] - y
        loss = float(np.mean(diff * diff))
        grads, _ = self.critic.backward(cache, (2.0 / diff.size) * diff[:, None])
        self.critic_opt.step(self.critic.theta, grads)
        return loss

    def actor_update(self, batch) -> float:
        states = batch[0]
        a, actor_cache = self.actor.forward(states)
        q, critic_cache = self.critic.forward(np.hstack([states, a]))
        objective = float(np.mean(q))
        # ascend mean Q: backpropagate -dQ/da through the actor only
        _, d_input = self.critic.backward(critic_cache, np.full_like(q, 1.0 / q.shape[0]))
        d_action = d_input[:, STATE_DIM:]
        grads, _ = self.actor.backward(actor_cache, -d_action)
        self.actor_opt.step(self.actor.theta, grads)
        return objective

    def update_targets(self):
        soft_update(self.actor_target, self.actor, self.cfg.soft_tau)
        soft_update(self.critic_target, self.critic, self.cfg.soft_tau)


def critic_update(agent: DDPG, batch) -> float:
    return agent.critic_update(batch)


def actor_update(agent: DDPG, batch) -> float:
    return agent.actor_update(batch)


@dataclass
class TrainedAgent:
    actor: MLP
    strike: float
    maturity: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.actor.sizes[0] != STATE_DIM or self.actor.sizes[-1] != 1:
            raise ValueError("actor must map 3 inputs to 1 output")

    def features(self, s, tau, holding) -> np.ndarray:
        s, tau, holding = np.broadcast_arrays(np.asarray(s, dtype=float),
                                              np.asarray(tau, dtype=float),
                                              np.asarray(holding, dtype=float))
        return np.stack([s / self.strike, tau / self.maturity, holding], axis=-1).reshape(-1, STATE_DIM)

    def action(self, s, tau, holding) -> np.ndarray:
        out = self.actor(self.features(s, tau, holding))[:, 0]
        if np.any(out < -1.0) or np.any(out > 0.0):
            raise RuntimeError("actor produced an action outside [-1, 0]")
        return out

    def to_dict(self) -> dict:
        return {"actor": self.actor.to_dict(), "strike": self.strike,
                "maturity": self.maturity, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainedAgent":
        return cls(MLP.from_dict(d["actor"]), d["strike"], d["maturity"], d.get("provenance", {}))

    def save(self, file) -> None:
        with open(file, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, file) -> "TrainedAgent":
        with open(file) as fh:
            return cls.from_dict(json.load(fh))


LOG_FIELDS = ("episode", "return", "critic_loss", "actor_objective", "noise_sigma")


def write_training_log(log: list, file) -> None:
    with open(file, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
        writer.writeheader()
        for row in log:
            writer.writerow({k: row[k] for k in LOG_FIELDS})


def _check_finite(agent: DDPG, episode: int, loss: float, objective: float):
    reason = None
    if not math.isfinite(loss):
        reason = "critic loss is not finite"
    elif not math.isfinite(objective):
        reason = "actor objective is not finite"
    else:
        for name, net in (("actor", agent.actor), ("critic", agent.critic)):
            if not np.all(np.isfinite(net.theta)):
                reason = f"{name} weights are not finite"
                break
    if reason:
        raise TrainingDiverged({"episode": episode, "reason": reason,
                                "critic_loss": loss, "actor_objective": objective})


def train(env: HedgeEnv, cfg: AgentConfig, paths: PathSet, data_descriptor: str = "",
          progress=None):
    """Train on ``paths`` (episode ``i`` uses path ``i mod n_paths``).

    Returns ``(TrainedAgent, log)`` where ``log`` holds one dict per episode.
    """
    spec: OptionSpec = env.cfg.spec
    if paths.n_steps != env.cfg.steps_per_episode:
        raise ValueError("training paths must have one column per environment step")
    agent = DDPG(cfg)
    buffer = ReplayBuffer(cfg.buffer_capacity)
    noise_rng = substream(cfg.seed, STREAM_MISC, 1)
    sample_rng = substream(cfg.seed, STREAM_MISC, 2)
    k_norm, t_norm = spec.strike, spec.maturity
    log = []
    for ep in range(cfg.episodes):
        frac = ep / max(cfg.episodes - 1, 1)
        sigma = cfg.noise_sigma + (cfg.noise_final - cfg.noise_sigma) * frac
        idx = ep % paths.n_paths
        state = env.reset(paths.path(idx), paths.vol_path(idx))
        x = np.array([state.s / k_norm, state.tau / t_norm, state.holding])
        done = False
        ep_return = 0.0
        losses, objectives = [], []
        while not done:
            a = float(agent.actor(x[None, :])[0, 0])
            if not -1.0 <= a <= 0.0:
                raise RuntimeError("actor produced an action outside [-1, 0]")
            a = min(max(a + sigma * noise_rng.standard_normal(), -1.0), 0.0)
            state, reward, done, _ = env.step(a)
            x_next = np.array([state.s / k_norm, state.tau / t_norm, state.holding])
            buffer.add(x, a, reward, x_next, done)
            ep_return += reward
            x = x_next
            if len(buffer) >= max(cfg.warmup, cfg.batch_size):
                batch = buffer.sample(cfg.batch_size, sample_rng)
                losses.append(agent.critic_update(batch))
                objectives.append(agent.actor_update(batch))
                agent.update_targets()
        loss = float(np.mean(losses)) if losses else float("nan")
        objective = float(np.mean(objectives)) if objectives else float("nan")
        if losses:
            _check_finite(agent, ep, loss, objective)
        log.append({"episode": ep, "return": ep_return, "critic_loss": loss,
                    "actor_objective": objective, "noise_sigma": sigma})
        if progress is not None:
            progress(ep, log[-1])
    provenance = {"config": cfg.to_dict(), "seed": cfg.seed, "data": data_descriptor,
                  "optimizer": cfg.optimizer}
    return TrainedAgent(agent.actor.copy(), k_norm, t_norm, provenance), log
