"""Multi-seed training, deterministic evaluation and the CSV files they leave behind.

A run directory holds::

    config.json
    episodes_seed<S>.csv   one row per finished training episode
    updates_seed<S>.csv    one row per PPO update
    checkpoint_seed<S>.bin final networks
    eval_seed<S>.csv       per-episode evaluation returns
    eval_summary.csv       per-seed mean/std plus an ``all`` row
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from hierppo import checkpoint
from hierppo.errors import CheckpointError, ConfigurationError
from hierppo.hierarchy import HierarchyRewardProvider, create_reward_agent, dual_train_step
from hierppo.nn_core import forward
from hierppo.pendulum import ACTION_DIM, OBS_DIM, PendulumEnv
from hierppo.ppo import ActorCritic, ppo_train_step

log = logging.getLogger(__name__)

EPISODE_COLUMNS = ("variant", "seed", "env_step", "episode_index", "episode_return_global_R",
                   "episode_return_shaped_r", "moving_avg_10")
EVAL_COLUMNS = ("seed", "episode", "return_global_R")
SUMMARY_COLUMNS = ("seed", "episodes", "mean_return", "std_return", "sum_return")
MOVING_WINDOW = 10


def fmt(x):
    """Shortest round-tripping text for a float; blank for None."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return repr(float(x))


def write_csv(path, columns, rows):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) if not isinstance(v, str) else v for v in row])
    os.replace(tmp, path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def moving_average(values, window=MOVING_WINDOW):
    """Trailing mean over ``window`` entries; None until the window is full."""
    out = []
    total = 0.0
    for i, v in enumerate(values):
        total += v
        if i >= window:
            total -= values[i - window]
        out.append(total / window if i >= window - 1 else None)
    return out


def seed_streams(seed):
    """Independent generators for one training seed.

    The main agent's streams are identical for every variant, which is what makes a
    depth-0 hierarchy reproduce the baseline exactly.
    """
    ss = np.random.SeedSequence(seed)
    policy, init, envs, reward_init, reward_policy = ss.spawn(5)
    return {
        "policy": np.random.default_rng(policy),
        "init": np.random.default_rng(init),
        "envs": envs,
        "reward_init": np.random.default_rng(reward_init),
        "reward_policy": np.random.default_rng(reward_policy),
    }


@dataclass
class SeedResult:
    seed: int
    episode_rows: list
    update_rows: list
    networks: dict


def train_seed(config, seed):
    """Train one seed to ``config.total_timesteps`` environment steps."""
    ppo_cfg, gae_cfg, hier_cfg = config.ppo, config.gae, config.hierarchy
    streams = seed_streams(seed)
    agent = ActorCritic.create(OBS_DIM, ACTION_DIM, streams["init"],
                               hidden_width=config.policy_hidden_width,
                               hidden_layers=config.policy_hidden_layers,
                               log_std_init=config.log_std_init)
    envs = [PendulumEnv(s) for s in streams["envs"].spawn(ppo_cfg.num_actors)]
    obs = np.stack([env.reset() for env in envs])

    depth = config.depth
    reward_agent = provider = None
    if config.variant == "hier":
        if depth > 0:
            reward_agent = create_reward_agent(OBS_DIM, hier_cfg, streams["reward_init"])
        provider = HierarchyRewardProvider(reward_agent, hier_cfg, streams["reward_policy"])

    n = ppo_cfg.num_actors
    ep_R = np.zeros(n)
    ep_r = np.zeros(n)
    returns_R = []
    episode_rows = []
    update_rows = []
    env_step = 0
    update = 0
    while env_step < config.total_timesteps:
        if config.variant == "hier":
            agent, reward_agent, traj, stats = dual_train_step(
                agent, reward_agent, envs, obs, ppo_cfg, gae_cfg, hier_cfg,
                streams["policy"], streams["reward_policy"], provider,
            )
        else:
            agent, traj, stats = ppo_train_step(agent, envs, obs, ppo_cfg, gae_cfg, streams["policy"])
        obs = traj.final_observations
        for t in range(traj.horizon):
            ep_R += traj.global_rewards[t]
            ep_r += traj.shaped_rewards[t]
            for i in np.flatnonzero(traj.boundaries[t]):
                returns_R.append(float(ep_R[i]))
                window = returns_R[-MOVING_WINDOW:]
                avg = sum(window) / MOVING_WINDOW if len(returns_R) >= MOVING_WINDOW else None
                episode_rows.append((config.variant, seed, env_step + (t + 1) * n,
                                     len(returns_R) - 1, ep_R[i], ep_r[i], avg))
                ep_R[i] = 0.0
                ep_r[i] = 0.0
        env_step += traj.horizon * n
        update += 1
        update_rows.append((update, env_step, stats))
        if stats.get("skipped_minibatches"):
            log.warning("seed %d update %d: %d minibatches skipped", seed, update,
                        stats["skipped_minibatches"])

    networks = {"actor": agent.actor, "critic": agent.critic}
    if reward_agent is not None:
        networks["reward_actor"] = reward_agent.actor
        networks["reward_critic"] = reward_agent.critic
    return SeedResult(seed, episode_rows, update_rows, networks)


def _update_table(update_rows):
    keys = []
    for _, _, stats in update_rows:
        for k in stats:
            if k not in keys:
                keys.append(k)
    columns = ("update", "env_step", *keys)
    rows = [(u, s, *(stats.get(k) for k in keys)) for u, s, stats in update_rows]
    return columns, rows


@dataclass
class EvalSummary:
    seed: int
    returns: list

    @property
    def episodes(self):
        return len(self.returns)

    @property
    def mean(self):
        return float(np.mean(self.returns))

    @property
    def std(self):
        return float(np.std(self.returns))

    @property
    def total(self):
        return float(np.sum(self.returns))


def evaluate_policy(actor, episodes=100, seed=0):
    """Returns of ``episodes`` consecutive episodes under the mean action."""
    env = PendulumEnv(seed)
    returns = []
    for _ in range(episodes):
        obs = env.reset()
        total = 0.0
        done = False
        while not done:
            action, _ = forward(actor, obs)
            obs, reward, done = env.step(action)
            total += reward
        returns.append(total)
    return returns


def run_eval(checkpoint_path, episodes=100, seed=0, out_path=None, label=None):
    networks = checkpoint.load(checkpoint_path)
    if "actor" not in networks:
        raise CheckpointError(f"{checkpoint_path}: no 'actor' network")
    summary = EvalSummary(seed if label is None else label,
                          evaluate_policy(networks["actor"], episodes, seed))
    if out_path is not None:
        write_csv(out_path, EVAL_COLUMNS,
                  [(summary.seed, i, r) for i, r in enumerate(summary.returns)])
    return summary


def summary_rows(summaries):
    rows = [(s.seed, s.episodes, s.mean, s.std, s.total) for s in summaries]
    means = [s.mean for s in summaries]
    rows.append(("all", sum(s.episodes for s in summaries), float(np.mean(means)),
                 float(np.std(means)), float(sum(s.total for s in summaries))))
    return rows


def _train_and_save(config, seed):
    out = config.output_dir
    result = train_seed(config, seed)
    write_csv(os.path.join(out, f"episodes_seed{seed}.csv"), EPISODE_COLUMNS, result.episode_rows)
    columns, rows = _update_table(result.update_rows)
    write_csv(os.path.join(out, f"updates_seed{seed}.csv"), columns, rows)
    ckpt = os.path.join(out, f"checkpoint_seed{seed}.bin")
    checkpoint.save(ckpt, result.networks)
    summary = None
    if config.eval_episodes:
        summary = run_eval(ckpt, config.eval_episodes, config.eval_seed,
                           os.path.join(out, f"eval_seed{seed}.csv"), label=seed)
    return seed, summary


def run_train(config):
    """Train every seed, write the run directory, return ``{seed: EvalSummary or None}``."""
    out = config.output_dir
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write_test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise ConfigurationError(f"output directory {out!r} is not writable: {exc}") from None
    with open(os.path.join(out, "config.json"), "w") as fh:
        fh.write(config.to_json())

    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_train_and_save, [config] * len(config.seeds), config.seeds))
    else:
        results = [_train_and_save(config, s) for s in config.seeds]
    summaries = dict(results)
    done = [s for s in summaries.values() if s is not None]
    if done:
        write_csv(os.path.join(out, "eval_summary.csv"), SUMMARY_COLUMNS, summary_rows(done))
    return summaries


def load_episode_curves(run_dir):
    """``{seed: (env_steps, moving_avg_10)}`` from a run directory, one point per env step."""
    if not os.path.isdir(run_dir):
        raise ConfigurationError(f"run directory {run_dir!r} does not exist")
    files = sorted(f for f in os.listdir(run_dir)
                   if f.startswith("episodes_seed") and f.endswith(".csv"))
    if not files:
        raise ConfigurationError(f"run directory {run_dir!r} has no episodes_seed*.csv files")
    curves = {}
    variant = None
    for name in files:
        rows = read_csv(os.path.join(run_dir, name))
        if rows and tuple(rows[0].keys()) != EPISODE_COLUMNS:
            raise ConfigurationError(f"{run_dir}/{name}: unexpected columns")
        points = {}
        for row in rows:
            variant = variant or row["variant"]
            if row["moving_avg_10"] == "":
                continue
            # the last episode to finish at a given step carries the freshest average
            points[int(row["env_step"])] = float(row["moving_avg_10"])
        steps = sorted(points)
        seed = int(name[len("episodes_seed"):-len(".csv")])
        curves[seed] = (np.array(steps, dtype=np.float64), np.array([points[s] for s in steps]))
    return variant, curves


def final_third_mean(steps, values, total_steps=None):
    """Mean of a curve over the last third of training."""
    end = steps[-1] if total_steps is None else total_steps
    mask = steps >= end * 2.0 / 3.0
    if not mask.any():
        return math.nan
    return float(np.mean(values[mask]))
