"""In-memory labeled datasets and the observer-model file format."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .envgen import G_MAX, read_environments
from .oracles import MetricKind


class MissingLabels(KeyError):
    pass


class TooManyGoals(ValueError):
    pass


@dataclass
class PaddedGoalSet:
    positions: np.ndarray  # (g_max, 3)
    mask: np.ndarray  # (g_max,) bool, True for real goals


def pad_goals(goals, g_max: int = G_MAX) -> PaddedGoalSet:
    """Real goals first, then zero-position dummies that are masked out."""
    goals = np.asarray(goals, dtype=np.float64).reshape(-1, 3)
    if len(goals) == 0:
        raise ValueError("need at least one goal")
    if len(goals) > g_max:
        raise TooManyGoals(f"{len(goals)} goals exceed g_max={g_max}")
    positions = np.zeros((g_max, 3))
    positions[: len(goals)] = goals
    mask = np.zeros(g_max, dtype=bool)
    mask[: len(goals)] = True
    return PaddedGoalSet(positions, mask)


@dataclass
class TrajectoryData:
    """A split held as dense, goal-padded arrays.

    ``labels[metric]`` is ``(N, g_max)`` with zeros in dummy slots.
    """

    name: str
    points: np.ndarray  # (N, n_points, 3)
    goals: np.ndarray  # (N, g_max, 3)
    mask: np.ndarray  # (N, g_max)
    target_index: np.ndarray
    env_ids: list[str]
    labels: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def g_max(self) -> int:
        return self.goals.shape[1]

    @property
    def n_points(self) -> int:
        return self.points.shape[1]

    @property
    def goal_counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def scores(self, metric) -> np.ndarray:
        key = str(MetricKind(metric))
        if key not in self.labels:
            raise MissingLabels(f"{self.name} has no '{key}' labels")
        return self.labels[key]

    def oracle_argmax(self, metric) -> np.ndarray:
        return np.argmax(np.where(self.mask, self.scores(metric), -np.inf), axis=1)

    def subset(self, idx) -> "TrajectoryData":
        idx = np.asarray(idx)
        return TrajectoryData(
            self.name,
            self.points[idx],
            self.goals[idx],
            self.mask[idx],
            self.target_index[idx],
            [self.env_ids[i] for i in idx],
            {k: v[idx] for k, v in self.labels.items()},
        )

    def translated(self, offset) -> "TrajectoryData":
        offset = np.asarray(offset, dtype=np.float64)
        goals = np.where(self.mask[..., None], self.goals + offset, 0.0)
        return TrajectoryData(
            self.name, self.points + offset, goals, self.mask, self.target_index, self.env_ids, dict(self.labels)
        )


def default_envs_path(dataset_path: str | Path) -> Path:
    p = str(dataset_path)
    for suffix in (".labeled.jsonl", ".jsonl"):
        if p.endswith(suffix):
            return Path(p[: -len(suffix)] + ".envs.json")
    raise ValueError(f"cannot infer the environments file for {dataset_path}")


def load_dataset(
    path: str | Path, envs_path: str | Path | None = None, g_max: int = G_MAX, name: str | None = None
) -> TrajectoryData:
    """Read a (labeled) JSONL split and pad its goal sets to ``g_max``."""
    envs = {e.env_id: e.goals for e in read_environments(envs_path or default_envs_path(path))}
    for env_id, goals in envs.items():
        if len(goals) > g_max:
            raise TooManyGoals(f"environment {env_id} has {len(goals)} goals, more than g_max={g_max}")
    points, env_ids, targets = [], [], []
    labels: dict[str, list] = {}
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["env_id"] not in envs:
                raise KeyError(f"unknown environment {rec['env_id']!r}")
            points.append(rec["points"])
            env_ids.append(rec["env_id"])
            targets.append(rec["target_index"])
            for metric, vals in rec.get("labels", {}).items():
                labels.setdefault(metric, []).append(vals)
    n = len(points)
    n_points = len(points[0]) if n else 100
    goals = np.zeros((n, g_max, 3))
    mask = np.zeros((n, g_max), dtype=bool)
    for i, env_id in enumerate(env_ids):
        k = len(envs[env_id])
        goals[i, :k] = envs[env_id]
        mask[i, :k] = True
    dense_labels = {}
    for metric, rows in labels.items():
        if len(rows) != n:
            raise MissingLabels(f"'{metric}' labels are missing for some records")
        arr = np.zeros((n, g_max))
        for i, row in enumerate(rows):
            arr[i, : len(row)] = row
        dense_labels[metric] = arr
    return TrajectoryData(
        name=name or Path(path).name.split(".")[0],
        points=np.asarray(points, dtype=np.float64).reshape(n, n_points, 3),
        goals=goals,
        mask=mask,
        target_index=np.asarray(targets, dtype=np.int64),
        env_ids=env_ids,
        labels=dense_labels,
    )


@dataclass
class ObserverModel:
    """A value (SLOT-V) or reward (T-REX) network plus its data contract."""

    params: nn.MLP
    framework: str = "slotv"
    n_points: int = 100
    g_max: int = G_MAX
    metric: str | None = None
    train_seed: int | None = None

    def header(self) -> dict:
        return {
            "framework": self.framework,
            "g_max": self.g_max,
            "n_points": self.n_points,
            "metric": self.metric,
            "train_seed": self.train_seed,
        }

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        """Write the model file; ``extra`` adds provenance fields to the header."""
        nn.save_mlp(path, self.params, {**self.header(), **(extra or {})})

    @classmethod
    def load(cls, path: str | Path) -> "ObserverModel":
        doc = json.loads(Path(path).read_text())
        return cls(
            params=nn.mlp_from_dict(doc),
            framework=doc.get("framework", "slotv"),
            n_points=int(doc.get("n_points", 100)),
            g_max=int(doc.get("g_max", G_MAX)),
            metric=doc.get("metric"),
            train_seed=doc.get("train_seed"),
        )


# rows per forward pass when evaluating big batches; bounds peak memory
EVAL_ROWS = 1 << 16


def pair_values(params: nn.MLP, points: np.ndarray, goals: np.ndarray) -> tuple[np.ndarray, list]:
    """Network values at every point of each (trajectory, goal) pair.

    Args:
        points: ``(P, n_points, 3)`` trajectories.
        goals: ``(P, 3)`` goal per pair.

    Returns:
        ``(values (P, n_points), cache)``.
    """
    x = nn.relative_inputs(points, goals[:, None, :])
    out, cache = nn.forward(params, x)
    return out.reshape(points.shape[0], points.shape[1]), cache


def real_slot_scores(params: nn.MLP, data: TrajectoryData, idx: np.ndarray, reduce: str) -> np.ndarray:
    """Per-goal aggregated network values for examples ``idx``.

    Only real goal slots are evaluated; dummy slots are left at 0 and must
    be masked by the caller. ``reduce`` is ``"mean"`` or ``"sum"``.
    """
    mask = data.mask[idx]
    b, j = np.nonzero(mask)
    out = np.zeros(mask.shape, dtype=np.float64)
    per_chunk = max(1, EVAL_ROWS // data.n_points)
    for s in range(0, len(b), per_chunk):
        bb, jj = b[s : s + per_chunk], j[s : s + per_chunk]
        vals, _ = pair_values(params, data.points[idx[bb]], data.goals[idx[bb], jj])
        agg = vals.astype(np.float64).sum(axis=1)
        if reduce == "mean":
            agg /= data.n_points
        out[bb, jj] = agg
    return out
