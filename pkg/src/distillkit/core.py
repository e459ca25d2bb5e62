"""Domain types shared across the toolkit.

Observations and actions are plain float64 numpy vectors; the classes here
add the schema, the labeled transition records accumulated by the
distillation loop, and the train/test bookkeeping on top of them.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class DistillkitError(Exception):
    """Base class for errors raised by this package."""


class DegenerateScoreWarning(UserWarning):
    """A score was defined by convention because its input was degenerate."""


ACTOR_EXPERT = "expert"
ACTOR_DISTILLED = "distilled"


def as_vector(values, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate and return a finite 1-D float64 vector."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise DistillkitError(f"{name} must be 1-D, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DistillkitError(f"{name} has length {v.shape[0]}, expected {dim}")
    if not np.isfinite(v).all():
        raise DistillkitError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class FeatureSchema:
    """Names, units and group tags for the observation axes."""

    names: tuple[str, ...]
    units: tuple[str, ...]
    groups: tuple[str, ...]

    def __post_init__(self):
        d = len(self.names)
        if d < 1:
            raise DistillkitError("schema needs at least one feature")
        if len(set(self.names)) != d:
            raise DistillkitError("feature names must be unique")
        if len(self.units) != d or len(self.groups) != d:
            raise DistillkitError("names/units/groups lengths differ")

    @property
    def dim(self) -> int:
        return len(self.names)

    def index_of(self, name: str) -> int:
        return self.names.index(name)

    def to_json(self) -> dict:
        return {"names": list(self.names), "units": list(self.units),
                "groups": list(self.groups)}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureSchema":
        return cls(tuple(obj["names"]), tuple(obj["units"]),
                   tuple(obj["groups"]))


class Policy:
    """Deterministic observation -> action mapping.

    Implementations must be pure functions of the observation so that expert
    relabeling and replay checks are exact.
    """

    family: str = "abstract"
    action_dim: int = 0

    def act(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Environment:
    """Deterministic episodic environment contract."""

    obs_dim: int = 0
    action_dim: int = 0
    episode_length: int = 0

    def reset(self, seed: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def step(self, action: np.ndarray):
        """Apply an action; returns (observation, reward, done)."""
        raise NotImplementedError


@dataclass
class TransitionRecord:
    """One step of a rollout, relabeled with the expert's action."""

    state: np.ndarray
    executed_action: np.ndarray
    expert_label: np.ndarray
    reward: float
    step_index: int
    episode_index: int
    actor_tag: str


@dataclass
class AggregatedDataset:
    """Transition records plus schema and an optional train/test partition."""

    schema: FeatureSchema
    action_names: tuple[str, ...]
    records: list[TransitionRecord] = field(default_factory=list)
    test_mask: np.ndarray | None = None  # bool per record once split

    def __len__(self) -> int:
        return len(self.records)

    @property
    def action_dim(self) -> int:
        return len(self.action_names)

    def append(self, record: TransitionRecord) -> None:
        if self.test_mask is not None:
            raise DistillkitError("cannot append to a dataset after splitting")
        self.records.append(record)

    def observations(self) -> np.ndarray:
        return np.array([r.state for r in self.records], dtype=np.float64)

    def expert_labels(self) -> np.ndarray:
        return np.array([r.expert_label for r in self.records],
                        dtype=np.float64)

    def train_test_arrays(self):
        """(X_train, Y_train, X_test, Y_test) under the current partition."""
        if self.test_mask is None:
            raise DistillkitError("dataset is not split")
        X = self.observations()
        Y = self.expert_labels()
        tr = ~self.test_mask
        return X[tr], Y[tr], X[self.test_mask], Y[self.test_mask]


def split_train_test(dataset: AggregatedDataset, test_fraction: float,
                     seed: int) -> AggregatedDataset:
    """Assign a seeded shuffled train/test partition in place.

    The test side takes ceil(n * fraction) records (train gets the floor);
    the same seed always yields the same partition.
    """
    n = len(dataset)
    if n == 0:
        raise DistillkitError("cannot split an empty dataset")
    if not (0.0 < test_fraction < 1.0):
        raise DistillkitError("test_fraction must lie in (0, 1)")
    # small negative slack so n*fraction landing on an integer is not pushed
    # up by float representation error
    n_test = int(math.ceil(n * test_fraction - 1e-9))
    n_test = min(max(n_test, 1), n - 1)
    order = np.random.default_rng(seed).permutation(n)
    mask = np.zeros(n, dtype=bool)
    mask[order[:n_test]] = True
    dataset.test_mask = mask
    return dataset


def r2_score(predictions, targets) -> float:
    """Coefficient of determination, averaged uniformly over outputs.

    A constant-target output contributes 0 and raises a
    DegenerateScoreWarning instead of producing a NaN.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if p.shape != t.shape:
        raise DistillkitError(f"shape mismatch {p.shape} vs {t.shape}")
    if p.shape[0] < 2:
        raise DistillkitError("need at least two rows to score")
    ss_res = ((t - p) ** 2).sum(axis=0)
    ss_tot = ((t - t.mean(axis=0)) ** 2).sum(axis=0)
    scores = np.empty(p.shape[1])
    for k in range(p.shape[1]):
        if ss_tot[k] == 0.0:
            warnings.warn(f"constant target in output {k}; R^2 set to 0",
                          DegenerateScoreWarning, stacklevel=2)
            scores[k] = 0.0
        else:
            scores[k] = 1.0 - ss_res[k] / ss_tot[k]
    return float(scores.mean())


class PerOutputPolicy(Policy):
    """Single policy built from one scalar regressor per action dimension.

    act() clamps to the actuator range (non-finite values fall back to the
    range edges or zero) so rollouts never receive unusable actions even
    when a model extrapolates badly; predict() stays raw for regression
    scoring.
    """

    action_limit = 1.0

    def __init__(self, family: str, models: list, schema: FeatureSchema,
                 action_names: tuple[str, ...]):
        self.family = family
        self.models = models
        self.schema = schema
        self.action_names = tuple(action_names)
        self.action_dim = len(models)

    def _clamp(self, raw: np.ndarray) -> np.ndarray:
        lim = self.action_limit
        return np.clip(np.nan_to_num(raw, nan=0.0, posinf=lim,
                                     neginf=-lim), -lim, lim)

    def act(self, obs: np.ndarray) -> np.ndarray:
        return self._clamp(np.array([m.predict_row(obs)
                                     for m in self.models]))

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Batch prediction, (n, action_dim), unclamped."""
        return np.column_stack([m.predict(X) for m in self.models])


class ZeroPolicy(Policy):
    """Zero-action fallback used before the first supervised fit."""

    family = "zero"

    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    def act(self, obs: np.ndarray) -> np.ndarray:
        return np.zeros(self.action_dim)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.zeros((X.shape[0], self.action_dim))


# ---------------------------------------------------------------------------
# dataset CSV interface
# ---------------------------------------------------------------------------

_META_COLUMNS = ("reward", "step", "episode", "actor")


def save_dataset(dataset: AggregatedDataset, path) -> None:
    """Write the dataset: feature columns, action (expert label) columns,
    then reward/step/episode/actor."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(dataset.schema.names) + list(dataset.action_names)
                   + list(_META_COLUMNS))
        for r in dataset.records:
            w.writerow([repr(float(v)) for v in r.state]
                       + [repr(float(v)) for v in r.expert_label]
                       + [repr(float(r.reward)), r.step_index,
                          r.episode_index, r.actor_tag])


def load_dataset(path, schema: FeatureSchema,
                 action_names: tuple[str, ...]) -> AggregatedDataset:
    """Read a dataset written by save_dataset.

    Executed actions are not part of the on-disk format; loaded records carry
    the expert label in that slot.
    """
    d = schema.dim
    m = len(action_names)
    ds = AggregatedDataset(schema=schema, action_names=tuple(action_names))
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        expected = list(schema.names) + list(action_names) + list(_META_COLUMNS)
        if header != expected:
            raise DistillkitError("dataset header does not match schema")
        for row in rd:
            state = np.array([float(v) for v in row[:d]])
            label = np.array([float(v) for v in row[d:d + m]])
            ds.records.append(TransitionRecord(
                state=state, executed_action=label.copy(), expert_label=label,
                reward=float(row[d + m]), step_index=int(row[d + m + 1]),
                episode_index=int(row[d + m + 2]), actor_tag=row[d + m + 3]))
    return ds
