"""Hierarchical reward composition and the two-agent training step.

A reward agent watches the same observations as the main agent and emits ``n``
signals per step.  The main agent is trained on

    r = R * h(1),   h(k) = r_k * h(k+1) + 1,   h(n+1) = 1

which is ``R*r1 + R`` for one level and ``R(r1(r2*r3 + r2) + r1) + R`` for three.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hierppo import nn_core
from hierppo.errors import ConfigurationError
from hierppo.nn_core import forward
from hierppo.ppo import ActorCritic, Trajectory, advantages_for, ppo_train_step, ppo_update

SQUASHES = ("sigmoid01", "tanh11", "linear_clip")
SQUASH_RANGES = {"sigmoid01": (0.0, 1.0), "tanh11": (-1.0, 1.0), "linear_clip": (0.0, 1.0)}
NORMALIZATIONS = ("none", "running_std")
CRITIC_TARGETS = ("global", "shaped")


@dataclass
class HierarchyConfig:
    depth: int = 3
    squash: str = "sigmoid01"
    shaped_reward_normalization: str = "none"
    critic_target: str = "global"
    reward_hidden_width: int = 64
    reward_hidden_layers: int = 5
    reward_log_std_init: float = 0.0

    def __post_init__(self):
        if self.depth < 0:
            raise ConfigurationError("depth must be non-negative")
        if self.squash not in SQUASHES:
            raise ConfigurationError(f"squash must be one of {SQUASHES}")
        if self.shaped_reward_normalization not in NORMALIZATIONS:
            raise ConfigurationError(f"shaped_reward_normalization must be one of {NORMALIZATIONS}")
        if self.critic_target not in CRITIC_TARGETS:
            raise ConfigurationError(f"critic_target must be one of {CRITIC_TARGETS}")


@dataclass(frozen=True)
class HierarchySignals:
    """One step's signals r_1..r_n, highest priority first."""

    signals: tuple
    squash: str = "sigmoid01"

    def __post_init__(self):
        lo, hi = SQUASH_RANGES[self.squash]
        values = tuple(float(s) for s in self.signals)
        object.__setattr__(self, "signals", values)
        for s in values:
            if not lo <= s <= hi:
                raise ConfigurationError(f"signal {s} outside the {self.squash} range [{lo}, {hi}]")

    @property
    def depth(self):
        return len(self.signals)


def _signal_array(signals):
    if isinstance(signals, HierarchySignals):
        signals = signals.signals
    return np.asarray(signals, dtype=np.float64)


def compose(R, signals):
    """Shaped reward ``R * h(1)``. ``signals`` has the levels on its last axis."""
    s = _signal_array(signals)
    h = np.ones(s.shape[:-1]) if s.ndim > 1 else 1.0
    for k in range(s.shape[-1] - 1, -1, -1):
        h = s[..., k] * h + 1.0
    out = np.asarray(R, dtype=np.float64) * h
    return float(out) if np.ndim(out) == 0 else out


def compose_oracle(R, signals):
    """Sum of prefix products R, R*r1, R*r1*r2, ...; equal to ``compose`` algebraically."""
    s = [float(v) for v in _signal_array(signals)]
    total = float(R)
    prefix = float(R)
    for v in s:
        prefix *= v
        total += prefix
    return total


def squash(raw, kind):
    raw = np.asarray(raw, dtype=np.float64)
    if kind == "sigmoid01":
        # split by sign so exp never overflows
        out = np.empty_like(raw)
        pos = raw >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-raw[pos]))
        e = np.exp(raw[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    if kind == "tanh11":
        return np.tanh(raw)
    if kind == "linear_clip":
        return np.clip(raw, 0.0, 1.0)
    raise ConfigurationError(f"unknown squash {kind!r}")


def create_reward_agent(obs_dim, config, rng):
    """Actor with ``depth`` outputs and a matching critic, both ``reward_hidden_layers`` x ``reward_hidden_width``."""
    if config.depth < 1:
        raise ConfigurationError("a reward agent needs depth >= 1")
    return ActorCritic.create(obs_dim, config.depth, rng, hidden_width=config.reward_hidden_width,
                              hidden_layers=config.reward_hidden_layers,
                              log_std_init=config.reward_log_std_init)


def emit_signals(agent, observations, rng, stochastic=True, squash_kind="sigmoid01"):
    """Sample (or take the mean of) the reward agent's Gaussian and squash it.

    Returns ``(signals, log_prob, raw)``; ``log_prob`` is that of the unsquashed draw.
    """
    obs = np.asarray(observations, dtype=np.float64)
    flat = obs.reshape(-1, obs.shape[-1])
    mean, _ = forward(agent.actor, flat)
    log_std = agent.actor.log_std
    raw = nn_core.gaussian_sample(mean, log_std, rng) if stochastic else mean
    log_prob = nn_core.gaussian_log_prob(mean, log_std, raw)
    lead = obs.shape[:-1]
    raw = raw.reshape(lead + (raw.shape[-1],))
    return squash(raw, squash_kind), log_prob.reshape(lead), raw


class RunningStd:
    """Running variance of a scalar stream (parallel-merge update)."""

    def __init__(self, epsilon=1e-4):
        self.mean = 0.0
        self.var = 1.0
        self.count = epsilon

    def update(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        b_mean, b_var, b_count = x.mean(), x.var(), x.size
        delta = b_mean - self.mean
        total = self.count + b_count
        m2 = self.var * self.count + b_var * b_count + delta * delta * self.count * b_count / total
        self.mean = self.mean + delta * b_count / total
        self.var = m2 / total
        self.count = total

    @property
    def std(self):
        return float(np.sqrt(self.var + 1e-8))


@dataclass
class HierarchyRewardProvider:
    """Reward provider for rollouts: emits signals on every visited state and composes."""

    agent: ActorCritic | None
    config: HierarchyConfig
    rng: np.random.Generator
    normalizer: RunningStd | None = field(default=None)

    def __post_init__(self):
        if self.config.shaped_reward_normalization == "running_std" and self.normalizer is None:
            self.normalizer = RunningStd()

    def __call__(self, observations, global_rewards):
        R = np.asarray(global_rewards, dtype=np.float64)
        if self.config.depth == 0:
            shaped = R.copy()
            extras = {}
        else:
            signals, log_prob, raw = emit_signals(self.agent, observations, self.rng, True,
                                                  self.config.squash)
            shaped = compose(R, signals)
            extras = {"signals": signals, "signal_log_probs": log_prob, "raw_signals": raw}
        if self.normalizer is not None:
            self.normalizer.update(shaped)
            shaped = shaped / self.normalizer.std
        return shaped, extras


def reward_agent_trajectory(main, reward_agent):
    """Re-express a shared rollout from the reward agent's side: its raw signals are the
    actions, R is its reward, and its own critic supplies the values."""
    ex = main.extras
    values = reward_agent.value(main.observations)
    terminal = np.where(main.boundaries, reward_agent.value(main.terminal_observations), 0.0)
    return Trajectory(
        observations=main.observations, actions=ex["raw_signals"],
        log_probs=ex["signal_log_probs"], global_rewards=main.global_rewards,
        shaped_rewards=main.global_rewards, values=values, boundaries=main.boundaries,
        terminal_values=terminal, bootstrap_values=reward_agent.value(main.final_observations),
        terminal_observations=main.terminal_observations,
        final_observations=main.final_observations,
    )


def dual_train_step(main_agent, reward_agent, envs, observations, ppo_config, gae_config,
                    hier_config, rng, reward_rng, provider=None):
    """One shared rollout, then a PPO update of the main agent followed by the reward agent.

    ``rng`` drives the main agent exactly as in a baseline step; ``reward_rng`` is the
    reward agent's own stream, so depth 0 reproduces the baseline bit for bit.
    Returns ``(main_agent, reward_agent, trajectory, stats)``.
    """
    if provider is None:
        provider = HierarchyRewardProvider(reward_agent, hier_config, reward_rng)
    else:
        provider.agent = reward_agent
    main_agent, trajectory, stats = ppo_train_step(
        main_agent, envs, observations, ppo_config, gae_config, rng,
        reward_provider=provider, critic_target=hier_config.critic_target,
    )
    if hier_config.depth > 0:
        side = reward_agent_trajectory(trajectory, reward_agent)
        adv = advantages_for(side, gae_config, ppo_config.reward_scale, "global")
        reward_agent, r_stats = ppo_update(side, adv, reward_agent, ppo_config, reward_rng)
        stats.update({f"reward_agent/{k}": v for k, v in r_stats.items()})
        stats["mean_signal"] = float(trajectory.extras["signals"].mean())
    return main_agent, reward_agent, trajectory, stats
