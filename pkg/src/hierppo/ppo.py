"""PPO for continuous actions: rollouts, truncated GAE, clipped surrogate and minibatch updates.

Arrays in a rollout are laid out ``(T, N, ...)``: timestep first, actor second.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from hierppo import nn_core
from hierppo.errors import ConfigurationError, InputError
from hierppo.nn_core import AdamState, adam_step, backward, forward

log = logging.getLogger(__name__)

ADV_NORM_EPS = 1e-8


@dataclass
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lam must lie in [0, 1], got {self.lam}")


@dataclass
class PpoConfig:
    clip_epsilon: float = 0.2
    c1: float = 0.5
    c2: float = 0.01
    learning_rate: float = 3e-4
    num_actors: int = 4
    horizon: int = 128
    minibatch_size: int = 128
    epochs: int = 10
    max_grad_norm: float | None = 0.5
    # constant multiplier on every reward stream before GAE
    reward_scale: float = 1.0

    def __post_init__(self):
        if self.clip_epsilon <= 0:
            raise ConfigurationError("clip_epsilon must be positive")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if self.num_actors < 1 or self.horizon < 1 or self.minibatch_size < 1 or self.epochs < 0:
            raise ConfigurationError("num_actors, horizon, minibatch_size must be >= 1 and epochs >= 0")
        if self.minibatch_size > self.num_actors * self.horizon:
            raise ConfigurationError(
                f"minibatch_size {self.minibatch_size} exceeds N*T = {self.num_actors * self.horizon}"
            )

    def check_episode_length(self, episode_length):
        if self.horizon >= episode_length:
            raise ConfigurationError(
                f"horizon {self.horizon} must be shorter than the episode ({episode_length} steps)"
            )


@dataclass
class ActorCritic:
    """A Gaussian policy network, a value network, and their optimizer states."""

    actor: nn_core.NetworkParameters
    critic: nn_core.NetworkParameters
    actor_opt: AdamState = None
    critic_opt: AdamState = None

    def __post_init__(self):
        if self.actor.log_std is None:
            raise ConfigurationError("the actor needs a log_std vector")
        if self.critic.output_width != 1:
            raise ConfigurationError("the critic must have a single output")
        if self.actor_opt is None:
            self.actor_opt = AdamState.fresh(self.actor)
        if self.critic_opt is None:
            self.critic_opt = AdamState.fresh(self.critic)

    @classmethod
    def create(cls, obs_dim, action_dim, rng, hidden_width=64, hidden_layers=3,
               log_std_init=0.0):
        actor = nn_core.init_network(
            nn_core.mlp_specs(obs_dim, hidden_width, hidden_layers, action_dim),
            rng, output_gain=0.01, action_dim=action_dim, log_std_init=log_std_init,
        )
        critic = nn_core.init_network(
            nn_core.mlp_specs(obs_dim, hidden_width, hidden_layers, 1), rng, output_gain=1.0,
        )
        return cls(actor, critic)

    def value(self, observations):
        obs = np.asarray(observations, dtype=np.float64)
        flat = obs.reshape(-1, obs.shape[-1])
        out, _ = forward(self.critic, flat)
        return out[:, 0].reshape(obs.shape[:-1])

    def mean_action(self, observations):
        out, _ = forward(self.actor, observations)
        return out


@dataclass
class Trajectory:
    observations: np.ndarray        # (T, N, obs_dim)
    actions: np.ndarray             # (T, N, act_dim)
    log_probs: np.ndarray           # (T, N) behaviour log-probabilities
    global_rewards: np.ndarray      # (T, N) environment reward R
    shaped_rewards: np.ndarray      # (T, N) reward the policy maximizes
    values: np.ndarray              # (T, N) V(s_t)
    boundaries: np.ndarray          # (T, N) episode ended after step t
    terminal_values: np.ndarray     # (T, N) V(final obs) where a boundary sits, else 0
    bootstrap_values: np.ndarray    # (N,) V(s_T)
    terminal_observations: np.ndarray  # (T, N, obs_dim), zero where no boundary
    final_observations: np.ndarray  # (N, obs_dim)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        t, n = self.log_probs.shape
        for name in ("global_rewards", "shaped_rewards", "values", "boundaries", "terminal_values"):
            if getattr(self, name).shape != (t, n):
                raise ConfigurationError(f"{name} has shape {getattr(self, name).shape}, expected {(t, n)}")
        if self.observations.shape[:2] != (t, n) or self.actions.shape[:2] != (t, n):
            raise ConfigurationError("observations/actions do not match the rollout length")
        if self.bootstrap_values.shape != (n,):
            raise ConfigurationError("one bootstrap value per actor")
        if not np.isfinite(self.log_probs).all():
            raise InputError("non-finite behaviour log-probability")

    @property
    def horizon(self):
        return self.log_probs.shape[0]

    @property
    def num_actors(self):
        return self.log_probs.shape[1]

    def values_with_bootstrap(self):
        return np.concatenate([self.values, self.bootstrap_values[None, :]], axis=0)


@dataclass
class AdvantageBatch:
    advantages: np.ndarray
    value_targets: np.ndarray


def compute_gae(rewards, values, boundaries, config, terminal_values=None):
    """Truncated GAE by backward recursion.

    ``values`` carries one extra row: the bootstrap value V(s_T) of each segment.
    A boundary at step t stops the recursion; the next-state value used there is
    ``terminal_values[t]`` (zero when omitted, i.e. a true terminal state).
    Inputs are ``(T,)`` for one segment or ``(T, N)`` for N side-by-side segments.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    boundaries = np.asarray(boundaries, dtype=bool)
    if values.shape[0] != rewards.shape[0] + 1 or values.shape[1:] != rewards.shape[1:]:
        raise ConfigurationError(
            f"values must have exactly one bootstrap entry more than rewards: "
            f"{values.shape} vs {rewards.shape}"
        )
    if boundaries.shape != rewards.shape:
        raise ConfigurationError("boundaries must match rewards")
    if terminal_values is None:
        terminal_values = np.zeros_like(rewards)
    else:
        terminal_values = np.asarray(terminal_values, dtype=np.float64)
        if terminal_values.shape != rewards.shape:
            raise ConfigurationError("terminal_values must match rewards")

    gamma, gl = config.gamma, config.gamma * config.lam
    advantages = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0])
    for t in range(rewards.shape[0] - 1, -1, -1):
        ended = boundaries[t]
        next_value = np.where(ended, terminal_values[t], values[t + 1])
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gl * np.where(ended, 0.0, running)
        advantages[t] = running
    return AdvantageBatch(advantages, advantages + values[:-1])


def clipped_surrogate(ratio, advantage, clip_epsilon):
    ratio = np.asarray(ratio, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon)
    return np.minimum(ratio * advantage, clipped * advantage)


def combined_loss(surrogate_mean, value_mse, entropy_mean, c1, c2):
    """Objective to maximize: surrogate - c1 * value error + c2 * entropy."""
    return surrogate_mean - c1 * value_mse + c2 * entropy_mean


def normalize_advantages(advantages):
    """Zero mean, unit std; the std is floored at ``ADV_NORM_EPS`` rather than offset by it."""
    advantages = np.asarray(advantages, dtype=np.float64)
    return (advantages - advantages.mean()) / max(advantages.std(), ADV_NORM_EPS)


@dataclass
class Minibatch:
    observations: np.ndarray   # (B, obs_dim)
    actions: np.ndarray        # (B, act_dim)
    log_probs: np.ndarray      # (B,)
    advantages: np.ndarray     # (B,) already normalized if wanted
    value_targets: np.ndarray  # (B,)


def ppo_loss_and_grads(actor, critic, batch, config):
    """Combined PPO objective on one minibatch and the gradients of its negation.

    Returns ``(objective, actor_grads, critic_grads, info)``.
    """
    b = batch.observations.shape[0]
    mean, actor_tape = forward(actor, batch.observations)
    value, critic_tape = forward(critic, batch.observations)
    value = value[:, 0]

    log_std = actor.log_std
    new_log_prob = nn_core.gaussian_log_prob(mean, log_std, batch.actions)
    log_ratio = new_log_prob - batch.log_probs
    ratio = np.exp(log_ratio)
    adv = batch.advantages
    eps = config.clip_epsilon
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    surrogate = np.minimum(unclipped, clipped)
    surrogate_mean = float(surrogate.mean())
    err = value - batch.value_targets
    value_mse = float(np.mean(err * err))
    entropy = nn_core.gaussian_entropy(log_std)
    objective = combined_loss(surrogate_mean, value_mse, entropy, config.c1, config.c2)

    # d(surrogate)/d(new log prob): ratio*adv on the unclipped branch, 0 where the clip binds
    active = unclipped <= clipped
    d_logp = np.where(active, unclipped, 0.0) / b
    d_mean, d_log_std = nn_core.gaussian_log_prob_grads(mean, log_std, batch.actions)
    grad_mean = -(d_logp[:, None] * d_mean)
    grad_log_std = -(d_logp[:, None] * d_log_std).sum(axis=0) - config.c2
    actor_grads = backward(actor_tape, grad_mean, grad_log_std)
    critic_grads = backward(critic_tape, (config.c1 * 2.0 / b * err)[:, None])

    info = {
        "policy_loss": -surrogate_mean,
        "value_loss": value_mse,
        "entropy": entropy,
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > eps)),
        "approx_kl": float(np.mean((ratio - 1.0) - log_ratio)),
    }
    return objective, actor_grads, critic_grads, info


def passthrough_rewards(observations, global_rewards):
    """Baseline reward provider: the policy maximizes the environment reward itself."""
    return np.array(global_rewards, dtype=np.float64, copy=True), {}


def collect_rollout(envs, observations, agent, horizon, rng, reward_provider=passthrough_rewards):
    """Run every environment for ``horizon`` steps under the stochastic policy.

    ``observations`` are the current observations ``(N, obs_dim)``; the environments
    reset themselves on episode end. Returns the trajectory; its
    ``final_observations`` continue the next rollout.
    """
    n = len(envs)
    observations = np.asarray(observations, dtype=np.float64)
    if observations.shape[0] != n:
        raise ConfigurationError("one current observation per environment")
    obs_dim = observations.shape[1]
    act_dim = agent.actor.output_width
    obs_buf = np.empty((horizon, n, obs_dim))
    act_buf = np.empty((horizon, n, act_dim))
    logp_buf = np.empty((horizon, n))
    reward_buf = np.empty((horizon, n))
    bound_buf = np.zeros((horizon, n), dtype=bool)
    term_obs = np.zeros((horizon, n, obs_dim))

    obs = observations.copy()
    log_std = agent.actor.log_std
    for t in range(horizon):
        obs_buf[t] = obs
        mean, _ = forward(agent.actor, obs)
        action = nn_core.gaussian_sample(mean, log_std, rng)
        act_buf[t] = action
        logp_buf[t] = nn_core.gaussian_log_prob(mean, log_std, action)
        next_obs = np.empty_like(obs)
        for i, env in enumerate(envs):
            o, r, done = env.step(action[i])
            reward_buf[t, i] = r
            if done:
                bound_buf[t, i] = True
                term_obs[t, i] = o
                o = env.reset()
            next_obs[i] = o
        obs = next_obs

    values = agent.value(obs_buf)
    terminal_values = np.where(bound_buf, agent.value(term_obs), 0.0)
    bootstrap = agent.value(obs)
    shaped, extras = reward_provider(obs_buf, reward_buf)
    return Trajectory(
        observations=obs_buf, actions=act_buf, log_probs=logp_buf,
        global_rewards=reward_buf, shaped_rewards=np.asarray(shaped, dtype=np.float64),
        values=values, boundaries=bound_buf, terminal_values=terminal_values,
        bootstrap_values=bootstrap, terminal_observations=term_obs,
        final_observations=obs, extras=extras,
    )


def advantages_for(trajectory, gae_config, reward_scale=1.0, critic_target="global"):
    """Policy advantages from the shaped stream; critic targets from the stream named by
    ``critic_target`` (``"global"`` or ``"shaped"``)."""
    if critic_target not in ("global", "shaped"):
        raise ConfigurationError(f"unknown critic_target {critic_target!r}")
    values = trajectory.values_with_bootstrap()
    shaped = compute_gae(trajectory.shaped_rewards * reward_scale, values,
                         trajectory.boundaries, gae_config, trajectory.terminal_values)
    if critic_target == "shaped":
        return shaped
    target = compute_gae(trajectory.global_rewards * reward_scale, values,
                         trajectory.boundaries, gae_config, trajectory.terminal_values)
    return AdvantageBatch(shaped.advantages, target.value_targets)


def ppo_update(trajectory, advantages, agent, config, rng, normalize=True):
    """K epochs of shuffled minibatch Adam steps on the combined objective.

    Returns ``(new_agent, stats)``; ``agent`` itself is left untouched.
    """
    obs = trajectory.observations.reshape(-1, trajectory.observations.shape[-1])
    actions = trajectory.actions.reshape(-1, trajectory.actions.shape[-1])
    log_probs = trajectory.log_probs.reshape(-1)
    adv = np.asarray(advantages.advantages, dtype=np.float64).reshape(-1)
    targets = np.asarray(advantages.value_targets, dtype=np.float64).reshape(-1)
    if not (len(adv) == len(targets) == len(log_probs)):
        raise ConfigurationError("advantages are not aligned with the trajectory")

    actor, critic = agent.actor, agent.critic
    actor_opt, critic_opt = agent.actor_opt, agent.critic_opt
    total = len(log_probs)
    m = config.minibatch_size
    sums = {}
    n_batches = 0
    skipped = 0
    for _ in range(config.epochs):
        order = rng.permutation(total)
        for start in range(0, total, m):
            idx = order[start:start + m]
            batch_adv = normalize_advantages(adv[idx]) if normalize else adv[idx]
            batch = Minibatch(obs[idx], actions[idx], log_probs[idx], batch_adv, targets[idx])
            objective, g_actor, g_critic, info = ppo_loss_and_grads(actor, critic, batch, config)
            if not math.isfinite(objective) or not (g_actor.is_finite() and g_critic.is_finite()):
                skipped += 1
                log.warning("non-finite PPO loss (%r); minibatch skipped", objective)
                continue
            g_actor, _ = nn_core.clip_by_global_norm(g_actor, config.max_grad_norm)
            g_critic, _ = nn_core.clip_by_global_norm(g_critic, config.max_grad_norm)
            actor, actor_opt = adam_step(actor, g_actor, actor_opt, config.learning_rate)
            critic, critic_opt = adam_step(critic, g_critic, critic_opt, config.learning_rate)
            n_batches += 1
            for k, v in info.items():
                sums[k] = sums.get(k, 0.0) + v

    stats = {k: v / n_batches for k, v in sums.items()} if n_batches else {
        "policy_loss": float("nan"), "value_loss": float("nan"),
        "entropy": nn_core.gaussian_entropy(actor.log_std),
        "clip_fraction": float("nan"), "approx_kl": float("nan"),
    }
    stats["minibatches"] = n_batches
    stats["skipped_minibatches"] = skipped
    return ActorCritic(actor, critic, actor_opt, critic_opt), stats


def ppo_train_step(agent, envs, observations, ppo_config, gae_config, rng,
                   reward_provider=passthrough_rewards, critic_target="global"):
    """Collect one rollout and update on it. Returns ``(agent, trajectory, stats)``."""
    trajectory = collect_rollout(envs, observations, agent, ppo_config.horizon, rng, reward_provider)
    adv = advantages_for(trajectory, gae_config, ppo_config.reward_scale, critic_target)
    agent, stats = ppo_update(trajectory, adv, agent, ppo_config, rng)
    return agent, trajectory, stats
