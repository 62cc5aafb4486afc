"""Off-policy actor-critic training with a replay buffer and target networks.

Per environment step (after warm-up): sample a uniform minibatch, regress the
critic toward one-step Bellman targets, push the actor along the critic's
action-gradient, and soft-update both target networks. Two details matter
and are enforced here:

* Bellman targets use the FULL candidate-and-re-rank policy built on the
  target networks, not the raw target actor output.
* The critic regresses on the executed action embedding stored in the
  buffer, while the actor's action-gradient is evaluated at the actor's own
  current output for the state.

The loop is single-threaded and bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .envs.base import Environment
from .nets import (
    GradientBundle,
    Mlp,
    adam_state,
    backward,
    clone_mlp,
    forward,
    load_params,
    optimizer_step,
    save_params,
    soft_update,
)
from .policy import ExplorationConfig, WolpertingerPolicy, noise_sigma_for


@dataclass(frozen=True)
class Transition:
    """One replay sample: (s, executed action id + embedding, r, s', done)."""

    state: np.ndarray
    action_id: int
    action_emb: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool

    def __post_init__(self) -> None:
        for name in ("state", "action_emb", "next_state"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite {name} in transition")
        if not math.isfinite(self.reward):
            raise ValueError("non-finite reward in transition")


@dataclass
class Batch:
    states: np.ndarray
    action_ids: np.ndarray
    action_embs: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


class ReplayBuffer:
    """Bounded FIFO of transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._states = np.empty((capacity, state_dim))
        self._action_ids = np.empty(capacity, dtype=np.int64)
        self._action_embs = np.empty((capacity, action_dim))
        self._rewards = np.empty(capacity)
        self._next_states = np.empty((capacity, state_dim))
        self._terminals = np.empty(capacity, dtype=bool)
        self._size = 0
        self._next = 0

    def __len__(self) -> int:
        return self._size

    def add(self, tr: Transition) -> None:
        i = self._next
        self._states[i] = tr.state
        self._action_ids[i] = tr.action_id
        self._action_embs[i] = tr.action_emb
        self._rewards[i] = tr.reward
        self._next_states[i] = tr.next_state
        self._terminals[i] = tr.terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        if self._size < n:
            raise RuntimeError(f"buffer holds {self._size} < minibatch {n} transitions")
        idx = rng.integers(self._size, size=n)
        return Batch(
            states=self._states[idx].copy(),
            action_ids=self._action_ids[idx].copy(),
            action_embs=self._action_embs[idx].copy(),
            rewards=self._rewards[idx].copy(),
            next_states=self._next_states[idx].copy(),
            terminals=self._terminals[idx].copy(),
        )


@dataclass
class TrainerConfig:
    gamma: float = 0.99
    tau: float = 0.001
    minibatch_size: int = 64
    buffer_capacity: int = 100_000
    warmup_steps: int = 1000
    max_env_steps: int = 10_000
    max_episodes: int | None = None
    max_steps_per_episode: int = 500
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_anneal_frac: float = 0.2
    noise_sigma_frac: float = 0.1
    # candidate count for the target-side policy; None tracks the behavior k
    target_k: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must be in [0, 1], got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.minibatch_size < 1:
            raise ValueError("minibatch_size must be >= 1")
        if self.buffer_capacity < self.minibatch_size:
            raise ValueError("buffer_capacity must hold at least one minibatch")


def critic_targets(batch: Batch, target_policy: WolpertingerPolicy, gamma: float) -> np.ndarray:
    """One-step Bellman targets y = r + gamma * Q'(s', pi'(s')).

    The next-state action comes from the full candidate-and-re-rank policy
    over the target networks; terminal transitions keep y = r.
    """
    y = np.asarray(batch.rewards, dtype=np.float64).copy()
    live = ~batch.terminals
    if gamma != 0.0 and live.any():
        sel = target_policy.select_batch(batch.next_states[live])
        y[live] += gamma * sel.q_values
    if not np.all(np.isfinite(y)):
        raise RuntimeError("non-finite Bellman target")
    return y


def critic_update(critic: Mlp, batch: Batch, targets: np.ndarray, opt_state) -> float:
    """One mean-squared-error step on the stored executed actions; returns
    the pre-step loss."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(batch),):
        raise ValueError(f"targets shape {targets.shape} != batch size {len(batch)}")
    x = np.concatenate([batch.states, batch.action_embs], axis=1)
    q = forward(critic, x)[:, 0]
    resid = q - targets
    loss = float(resid @ resid) / len(batch)
    if not math.isfinite(loss):
        raise RuntimeError("non-finite critic loss")
    grads = backward(critic, x, (2.0 / len(batch)) * resid[:, None])
    optimizer_step(critic, grads, opt_state)
    return loss


def actor_gradient(actor: Mlp, critic: Mlp, states: np.ndarray) -> GradientBundle:
    """Ascent gradient of mean_i Q(s_i, f(s_i)) w.r.t. the actor parameters.

    The critic's action-gradient is taken at the actor's current output for
    each state (not at whatever action was executed), then chained through
    the actor.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2:
        raise ValueError("states must be a batch of rows")
    protos = forward(actor, states)
    x = np.concatenate([states, protos], axis=1)
    n = states.shape[0]
    dq_dinput = backward(critic, x, np.full((n, 1), 1.0 / n)).input_grad
    dq_daction = dq_dinput[:, states.shape[1] :]
    return backward(actor, states, dq_daction)


def actor_update(actor: Mlp, critic: Mlp, states: np.ndarray, opt_state) -> float:
    """One gradient-ascent step on the critic's value of the actor's output;
    returns the L2 norm of the parameter gradient."""
    g = actor_gradient(actor, critic, states)
    descent = GradientBundle(
        weights=[-w for w in g.weights],
        biases=[-b for b in g.biases],
        input_grad=-g.input_grad,
    )
    optimizer_step(actor, descent, opt_state)
    return g.norm()


@dataclass
class EpisodeRecord:
    episode: int
    env_steps: int
    episode_return: float
    epsilon: float
    critic_loss_mean: float
    actor_grad_norm_mean: float
    steps_per_sec: float

    def deterministic_tuple(self) -> tuple:
        """Everything except the wall-clock rate."""
        return (
            self.episode,
            self.env_steps,
            self.episode_return,
            self.epsilon,
            self.critic_loss_mean,
            self.actor_grad_norm_mean,
        )


class TrainingLog:
    """Per-episode records; the CSV carries one timing column
    (steps_per_sec) that is excluded from determinism comparisons."""

    COLUMNS = (
        "episode",
        "env_steps",
        "episode_return",
        "epsilon",
        "critic_loss_mean",
        "actor_grad_norm_mean",
        "steps_per_sec",
    )

    def __init__(self) -> None:
        self.rows: list[EpisodeRecord] = []

    def __len__(self) -> int:
        return len(self.rows)

    def write_csv(self, path, include_timing: bool = True) -> None:
        cols = self.COLUMNS if include_timing else self.COLUMNS[:-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                vals = list(r.deterministic_tuple())
                if include_timing:
                    vals.append(r.steps_per_sec)
                w.writerow([_fmt(v) for v in vals])

    def deterministic_rows(self) -> list[tuple]:
        return [r.deterministic_tuple() for r in self.rows]


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _mean(values: list[float]) -> float:
    return float(np.mean(values)) if values else math.nan


class Trainer:
    """Owns the nets/targets/buffer for one training run."""

    def __init__(self, env: Environment, policy: WolpertingerPolicy, config: TrainerConfig):
        self.env = env
        self.policy = policy
        self.config = config
        target_k = config.target_k if config.target_k is not None else policy.k
        self.target_policy = WolpertingerPolicy(
            clone_mlp(policy.actor),
            clone_mlp(policy.critic),
            policy.index,
            policy.actions,
            k=target_k,
            refine=True,
        )
        self.actor_opt = adam_state(policy.actor, config.actor_lr)
        self.critic_opt = adam_state(policy.critic, config.critic_lr)
        self.buffer = ReplayBuffer(
            config.buffer_capacity, env.observation_dim, policy.actions.dim
        )
        explore_ss, replay_ss = np.random.SeedSequence(config.seed).spawn(2)
        self.explore_rng = np.random.default_rng(explore_ss)
        self.replay_rng = np.random.default_rng(replay_ss)
        self.noise_sigma = noise_sigma_for(policy.actions, config.noise_sigma_frac)
        self.env_steps = 0
        self.warmup = max(config.warmup_steps, config.minibatch_size)

    def epsilon_at(self, step: int) -> float:
        cfg = self.config
        anneal = cfg.epsilon_anneal_frac * cfg.max_env_steps
        if anneal <= 0:
            return cfg.epsilon_final
        frac = min(1.0, step / anneal)
        return cfg.epsilon_start + frac * (cfg.epsilon_final - cfg.epsilon_start)

    def _update(self) -> tuple[float, float]:
        cfg = self.config
        batch = self.buffer.sample(cfg.minibatch_size, self.replay_rng)
        y = critic_targets(batch, self.target_policy, cfg.gamma)
        loss = critic_update(self.policy.critic, batch, y, self.critic_opt)
        gnorm = actor_update(self.policy.actor, self.policy.critic, batch.states, self.actor_opt)
        soft_update(self.target_policy.critic, self.policy.critic, cfg.tau)
        soft_update(self.target_policy.actor, self.policy.actor, cfg.tau)
        return loss, gnorm

    def train(self, step_callback=None) -> TrainingLog:
        cfg = self.config
        log = TrainingLog()
        if cfg.max_env_steps <= 0 or cfg.max_steps_per_episode <= 0:
            return log
        actions = self.policy.actions
        # tiny matmuls dominate this loop; BLAS oversubscription only hurts
        with threadpool_limits(limits=1):
            episode = 0
            while self.env_steps < cfg.max_env_steps and (
                cfg.max_episodes is None or episode < cfg.max_episodes
            ):
                obs = self.env.reset()
                ep_return = 0.0
                losses: list[float] = []
                gnorms: list[float] = []
                ep_epsilon = self.epsilon_at(self.env_steps)
                t0 = time.perf_counter()
                steps = 0
                for _ in range(cfg.max_steps_per_episode):
                    explore = ExplorationConfig(
                        epsilon=self.epsilon_at(self.env_steps),
                        noise_sigma=self.noise_sigma,
                        support=self.env.exploration_support(),
                    )
                    decision = self.policy.select_action_explore(obs, explore, self.explore_rng)
                    step = self.env.step(decision.chosen)
                    self.buffer.add(
                        Transition(
                            state=obs,
                            action_id=decision.chosen,
                            action_emb=actions.vectors[decision.chosen].copy(),
                            reward=step.reward,
                            next_state=step.observation,
                            terminal=step.terminal,
                        )
                    )
                    obs = step.observation
                    self.env_steps += 1
                    steps += 1
                    ep_return += step.reward
                    if len(self.buffer) >= self.warmup:
                        loss, gnorm = self._update()
                        losses.append(loss)
                        gnorms.append(gnorm)
                    if step_callback is not None:
                        step_callback(self.env_steps)
                    if step.terminal or self.env_steps >= cfg.max_env_steps:
                        break
                elapsed = max(time.perf_counter() - t0, 1e-9)
                log.rows.append(
                    EpisodeRecord(
                        episode=episode,
                        env_steps=self.env_steps,
                        episode_return=ep_return,
                        epsilon=ep_epsilon,
                        critic_loss_mean=_mean(losses),
                        actor_grad_norm_mean=_mean(gnorms),
                        steps_per_sec=steps / elapsed,
                    )
                )
                episode += 1
        return log


def train(env: Environment, policy: WolpertingerPolicy, config: TrainerConfig, step_callback=None) -> TrainingLog:
    """Run the full training loop; see Trainer for the moving parts."""
    return Trainer(env, policy, config).train(step_callback)


def save_checkpoint(dir_path, policy: WolpertingerPolicy, target_policy: WolpertingerPolicy | None, config: TrainerConfig, env_steps: int, extra: dict | None = None) -> None:
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    save_params(policy.actor, d / "actor.bin")
    save_params(policy.critic, d / "critic.bin")
    if target_policy is not None:
        save_params(target_policy.actor, d / "target_actor.bin")
        save_params(target_policy.critic, d / "target_critic.bin")
    manifest = {
        "env_steps": int(env_steps),
        "seed": int(config.seed),
        "config": asdict(config),
        "actor": {
            "hidden_activation": policy.actor.hidden_activation,
            "output_activation": policy.actor.output_activation,
            "output_low": policy.actor.output_low.tolist(),
            "output_high": policy.actor.output_high.tolist(),
        },
        "critic": {
            "hidden_activation": policy.critic.hidden_activation,
            "output_activation": policy.critic.output_activation,
        },
        "k": int(policy.k),
        "refine": bool(policy.refine),
    }
    if extra:
        manifest.update(extra)
    with open(d / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_checkpoint(dir_path) -> dict:
    """Returns {"actor", "critic", optional targets, "manifest"}; the caller
    rebuilds the index/environment from its own config."""
    d = Path(dir_path)
    with open(d / "manifest.json") as fh:
        manifest = json.load(fh)
    actor_meta = manifest["actor"]
    out = {
        "manifest": manifest,
        "actor": load_params(
            d / "actor.bin",
            hidden_activation=actor_meta["hidden_activation"],
            output_activation=actor_meta["output_activation"],
            output_low=np.asarray(actor_meta["output_low"]),
            output_high=np.asarray(actor_meta["output_high"]),
        ),
        "critic": load_params(
            d / "critic.bin",
            hidden_activation=manifest["critic"]["hidden_activation"],
            output_activation=manifest["critic"]["output_activation"],
        ),
    }
    for name in ("target_actor", "target_critic"):
        p = d / f"{name}.bin"
        if p.exists():
            meta = actor_meta if "actor" in name else manifest["critic"]
            out[name] = load_params(
                p,
                hidden_activation=meta["hidden_activation"],
                output_activation=meta["output_activation"],
                output_low=np.asarray(meta["output_low"]) if "actor" in name else None,
                output_high=np.asarray(meta["output_high"]) if "actor" in name else None,
            )
    return out
