"""Imitation loop: DAgger with an episode-dependent alternation curriculum.

Every episode computes n = max(1, ceil(episode / n_f)) and lets the expert
act on steps where t mod n == 0 while the current distilled policy acts
otherwise; every visited state is relabeled with the expert's action and
aggregated.  The growing dataset keeps a standing 20% held-out partition
(assigned per episode by seeded shuffle) so reported test scores never see
training data; the distilled model is refit on the training partition at
episode end.  Episode 1 always has n == 1, so the zero-action fallback that
stands in before the first fit is never actually sampled.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from distillkit.core import (
    ACTOR_DISTILLED,
    ACTOR_EXPERT,
    AggregatedDataset,
    DistillkitError,
    Environment,
    Policy,
    TransitionRecord,
    ZeroPolicy,
    r2_score,
)
from distillkit.ebm import fit_ebm_policy
from distillkit.envs import ACTION_NAMES, make_env, make_expert, observation_schema
from distillkit.gbm import fit_gbm_policy
from distillkit.symreg import fit_symbolic_policy

FAMILIES = ("gbm", "ebm", "symbolic")

DEFAULT_MODEL_PARAMS = {
    "gbm": {"n_stages": 100, "learning_rate": 0.1, "max_depth": 3,
            "min_samples_leaf": 5},
    "ebm": {"rounds": 500, "learning_rate": 0.1, "max_bins": 256,
            "max_pairs": 10, "pair_rounds": 100},
    "symbolic": {"iterations": 20, "population_size": 1000,
                 "batch_size": 2048},
}

SWEEP_RATIOS = (0.0, 1.0 / 8.0, 1.0 / 6.0, 1.0 / 4.0, 1.0 / 2.0, 1.0)


@dataclass
class AlternationSchedule:
    """Curriculum state: the expert acts every n-th step, n grows with the
    episode index."""

    n_f: int = 4
    max_episodes: int = 30
    episode: int = 1

    def __post_init__(self):
        if self.n_f < 1 or self.max_episodes < 1:
            raise DistillkitError("n_f and max_episodes must be >= 1")

    @property
    def n(self) -> int:
        return max(1, math.ceil(self.episode / self.n_f))

    def sequence(self) -> list[int]:
        return [max(1, math.ceil(e / self.n_f))
                for e in range(1, self.max_episodes + 1)]


def actor_for_step(schedule_or_n, step_index: int) -> str:
    """Expert acts when step_index is a multiple of n."""
    n = schedule_or_n.n if isinstance(schedule_or_n, AlternationSchedule) \
        else int(schedule_or_n)
    return ACTOR_EXPERT if step_index % n == 0 else ACTOR_DISTILLED


@dataclass
class DistillationConfig:
    gait: str = "walk"
    family: str = "gbm"
    seed: int = 0
    n_f: int = 4
    max_episodes: int = 30
    episode_length: int = 1000
    command_cycle: tuple = (0.0, 0.25, 0.5, 0.75)
    test_fraction: float = 0.2
    retrain_every: int = 1
    model_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DistillkitError(
                f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not self.command_cycle:
            raise DistillkitError("command_cycle must be non-empty")
        if self.retrain_every < 1:
            raise DistillkitError("retrain_every must be >= 1")

    def resolved_model_params(self) -> dict:
        params = dict(DEFAULT_MODEL_PARAMS[self.family])
        for key in self.model_params:
            if key not in params:
                raise DistillkitError(
                    f"unknown {self.family} parameter {key!r}; known: "
                    f"{sorted(params)}")
        params.update(self.model_params)
        return params

    def to_json(self) -> dict:
        obj = asdict(self)
        obj["command_cycle"] = list(self.command_cycle)
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "DistillationConfig":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(obj) - known)
        if unknown:
            raise DistillkitError(
                f"unknown config keys {unknown}; known keys: {sorted(known)}")
        obj = dict(obj)
        if "command_cycle" in obj:
            obj["command_cycle"] = tuple(obj["command_cycle"])
        return cls(**obj)


@dataclass
class EpisodeLog:
    episode: int
    n: int
    expert_fraction: float
    episode_reward: float
    train_r2: float
    test_r2: float


@dataclass
class DistillationResult:
    policy: Policy
    dataset: AggregatedDataset
    episodes: list[EpisodeLog]
    config: DistillationConfig


def episode_seed(seed: int, episode: int) -> int:
    return int(np.random.SeedSequence((seed, episode)).generate_state(1)[0])


def _fit_family(family: str, X, Y, schema, params: dict, seed: int,
                warm=None):
    """Refit the distilled policy; returns (policy, warm-start payload)."""
    if family == "gbm":
        return fit_gbm_policy(X, Y, schema, ACTION_NAMES, **params), None
    if family == "ebm":
        return fit_ebm_policy(X, Y, schema, ACTION_NAMES, **params), None
    policy = fit_symbolic_policy(X, Y, schema, ACTION_NAMES, seed=seed,
                                 warm_archives=warm, **params)
    return policy, policy.archives


def run_distillation(env: Environment, expert: Policy,
                     config: DistillationConfig) -> DistillationResult:
    """Run the full alternation-curriculum imitation loop.

    Returns the final distilled policy (trained on the train partition of
    the aggregated dataset), the partitioned dataset, and per-episode logs.
    """
    schema = observation_schema()
    if env.obs_dim != schema.dim or expert.action_dim != env.action_dim:
        raise DistillkitError("environment/expert dimensions disagree")
    params = config.resolved_model_params()
    schedule = AlternationSchedule(config.n_f, config.max_episodes)
    dataset = AggregatedDataset(schema=schema, action_names=ACTION_NAMES)
    test_flags: list[bool] = []
    states: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    policy: Policy = ZeroPolicy(env.action_dim)
    warm = None
    episodes: list[EpisodeLog] = []

    for ep in range(1, config.max_episodes + 1):
        schedule.episode = ep
        n = schedule.n
        command = config.command_cycle[(ep - 1) % len(config.command_cycle)]
        env.set_command(command)
        obs = env.reset(seed=episode_seed(config.seed, ep))
        total_reward = 0.0
        expert_steps = 0
        block = len(dataset)
        try:
            for t in range(config.episode_length):
                label = expert.act(obs)
                if not np.isfinite(label).all():
                    raise DistillkitError("expert produced a non-finite action")
                actor = actor_for_step(n, t)
                if actor == ACTOR_EXPERT:
                    action = label
                    expert_steps += 1
                else:
                    action = np.asarray(policy.act(obs), dtype=np.float64)
                next_obs, reward, done = env.step(action)
                dataset.records.append(TransitionRecord(
                    state=obs, executed_action=action, expert_label=label,
                    reward=reward, step_index=t, episode_index=ep,
                    actor_tag=actor))
                states.append(obs)
                labels.append(label)
                total_reward += reward
                obs = next_obs
                if done and t < config.episode_length - 1:
                    raise DistillkitError("environment finished early")
        except DistillkitError:
            raise
        except Exception as exc:  # env fault: abort with partial log
            raise DistillkitError(
                f"environment fault in episode {ep} "
                f"(completed episodes: {len(episodes)}): {exc}") from exc

        # standing 20% held-out assignment for this episode's block
        block_size = len(dataset) - block
        n_test = int(math.ceil(block_size * config.test_fraction - 1e-9))
        order = np.random.default_rng(
            episode_seed(config.seed, ep) + 1).permutation(block_size)
        flags = np.zeros(block_size, dtype=bool)
        flags[order[:n_test]] = True
        test_flags.extend(flags.tolist())

        if ep % config.retrain_every == 0 or ep == config.max_episodes:
            mask = np.asarray(test_flags)
            X = np.asarray(states)
            Y = np.asarray(labels)
            policy, warm = _fit_family(config.family, X[~mask], Y[~mask],
                                       schema, params,
                                       seed=episode_seed(config.seed, ep),
                                       warm=warm)
            train_r2 = r2_score(policy.predict(X[~mask]), Y[~mask])
            test_r2 = r2_score(policy.predict(X[mask]), Y[mask])
        else:
            train_r2 = episodes[-1].train_r2 if episodes else float("nan")
            test_r2 = episodes[-1].test_r2 if episodes else float("nan")

        episodes.append(EpisodeLog(
            episode=ep, n=n,
            expert_fraction=expert_steps / config.episode_length,
            episode_reward=total_reward, train_r2=train_r2, test_r2=test_r2))

    dataset.test_mask = np.asarray(test_flags)
    return DistillationResult(policy, dataset, episodes, config)


def distill_gait(config: DistillationConfig) -> DistillationResult:
    """Convenience wrapper building the standard environment and expert."""
    env = make_env(config.gait, command=config.command_cycle[0],
                   episode_length=config.episode_length)
    return run_distillation(env, make_expert(config.gait), config)


def rollout_with_ratio(env: Environment, expert: Policy, distilled: Policy,
                       ratio: float, episodes: int, seed: int,
                       commands=(0.0, 0.25, 0.5, 0.75)) -> float:
    """Mean episodic reward when the expert acts on every (1/ratio)-th step.

    ratio 1 is pure expert, 0 pure distilled; other values must be 1/k for
    an integer k.
    """
    if ratio == 1.0:
        k = 1
    elif ratio == 0.0:
        k = 0  # never expert
    else:
        k = round(1.0 / ratio)
        if k < 1 or abs(1.0 / k - ratio) > 1e-9:
            raise DistillkitError(f"ratio {ratio} is not 1/k for integer k")
    if episodes < 1:
        raise DistillkitError("episodes must be >= 1")
    totals = []
    for i in range(episodes):
        env.set_command(commands[i % len(commands)])
        obs = env.reset(seed=episode_seed(seed, i + 1))
        total = 0.0
        done = False
        t = 0
        while not done:
            if k == 1 or (k > 0 and t % k == 0):
                action = expert.act(obs)
            else:
                action = distilled.act(obs)
            obs, reward, done = env.step(action)
            total += reward
            t += 1
        totals.append(total)
    return float(np.mean(totals))


def save_policy(policy, path) -> None:
    """Persist a distilled policy (family-tagged JSON)."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy.to_json(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_policy(path):
    """Load a policy saved by save_policy; dispatches on the family tag."""
    from distillkit.ebm import EbmPolicy
    from distillkit.gbm import GbmPolicy
    from distillkit.symreg import SymbolicPolicy

    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    loaders = {"gbm": GbmPolicy, "ebm": EbmPolicy, "symbolic": SymbolicPolicy}
    family = obj.get("family")
    if family not in loaders:
        raise DistillkitError(f"unknown policy family {family!r} in {path}")
    return loaders[family].from_json(obj)


def write_episode_log(path, episodes: list[EpisodeLog]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "n", "expert_fraction", "episode_reward",
                    "train_r2", "test_r2"])
        for e in episodes:
            w.writerow([e.episode, e.n, repr(e.expert_fraction),
                        repr(e.episode_reward), repr(e.train_r2),
                        repr(e.test_r2)])
