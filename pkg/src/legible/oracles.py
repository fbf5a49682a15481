"""Hand-crafted legibility metrics used as training labels.

Each metric maps a trajectory and a goal set to one score per goal; higher
means the trajectory reads more clearly as heading to that goal.
"""

from __future__ import annotations

import json
from enum import Enum
from pathlib import Path

import numpy as np

from .envgen import read_environments
from .geom import Viewpoint, project_viewpoint

DEFAULT_VIEWPOINT = Viewpoint(eye=(1.5, 0.0, 0.5), look_at=(0.5, 0.0, 0.025), up=(0.0, 0.0, 1.0))


class MetricKind(str, Enum):
    DRAGAN = "dragan"
    NIKOLAIDIS = "nikolaidis"
    EFFDIST = "effdist"
    FASTAPP = "fastapp"

    def __str__(self) -> str:
        return self.value


ALL_METRICS = tuple(MetricKind)


class UnknownEnvironment(KeyError):
    pass


def _goal_distances(traj: np.ndarray, goals: np.ndarray) -> np.ndarray:
    """(n_points, n_goals) Euclidean distances."""
    return np.linalg.norm(traj[:, None, :] - goals[None, :, :], axis=-1)


def _time_weights(n: int) -> np.ndarray:
    # weight n-1-k: early prefixes count most, the endpoint not at all
    return np.arange(n - 1, -1, -1, dtype=np.float64)


def dragan_terms(traj, goals) -> tuple[np.ndarray, np.ndarray]:
    """Per-prefix exponents and goal posteriors of the efficiency model.

    For prefix ``k`` ending at ``q_k`` after path length ``c_k`` the
    unnormalised belief in goal ``g`` is ``exp(|s-g| - c_k - |q_k-g|)``;
    the exponent is never positive (triangle inequality).

    Returns:
        ``(exponents, posteriors)``, both shaped ``(n_points, n_goals)``.
    """
    traj = np.asarray(traj, dtype=np.float64)
    goals = np.asarray(goals, dtype=np.float64)
    dist = _goal_distances(traj, goals)
    cum = np.concatenate(([0.0], np.cumsum(np.linalg.norm(np.diff(traj, axis=0), axis=1))))
    expo = dist[0][None, :] - cum[:, None] - dist
    shifted = expo - expo.max(axis=1, keepdims=True)
    u = np.exp(shifted)
    return expo, u / u.sum(axis=1, keepdims=True)


def dragan_scores(traj, goals) -> np.ndarray:
    """Time-weighted average goal posterior along the trajectory."""
    _, post = dragan_terms(traj, goals)
    w = _time_weights(post.shape[0])
    return (w @ post) / w.sum()


def nikolaidis_scores(traj, goals, vp: Viewpoint = DEFAULT_VIEWPOINT) -> np.ndarray:
    """Dragan legibility computed in the observer's 2-D image plane."""
    return dragan_scores(project_viewpoint(traj, vp), project_viewpoint(goals, vp))


def effdist_scores(traj, goals) -> np.ndarray:
    """Negative mean distance to each goal."""
    dist = _goal_distances(np.asarray(traj, dtype=np.float64), np.asarray(goals, dtype=np.float64))
    return -dist.mean(axis=0)


def fastapp_scores(traj, goals) -> np.ndarray:
    """Negative mean distance to each goal, early points weighted most."""
    dist = _goal_distances(np.asarray(traj, dtype=np.float64), np.asarray(goals, dtype=np.float64))
    w = _time_weights(dist.shape[0])
    return -(w @ dist) / w.sum()


def metric_scores(metric: MetricKind | str, traj, goals, vp: Viewpoint = DEFAULT_VIEWPOINT) -> np.ndarray:
    metric = MetricKind(metric)
    if metric is MetricKind.DRAGAN:
        return dragan_scores(traj, goals)
    if metric is MetricKind.NIKOLAIDIS:
        return nikolaidis_scores(traj, goals, vp)
    if metric is MetricKind.EFFDIST:
        return effdist_scores(traj, goals)
    return fastapp_scores(traj, goals)


def scores_to_distribution(scores, scale: float | None = None) -> np.ndarray:
    """Center the per-goal scores, divide by a spread, then softmax.

    With ``scale=None`` the spread is the vector's own standard deviation
    (a z-score); a vector with (numerically) zero spread maps to the
    uniform distribution. A fixed ``scale`` divides every example by the
    same constant instead, which keeps relative margins intact.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need a non-empty score vector")
    sd = s.std() if scale is None else float(scale)
    if sd < 1e-12:
        return np.full(s.size, 1.0 / s.size)
    z = (s - s.mean()) / sd
    e = np.exp(z - z.max())
    return e / e.sum()


def _centered(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    s = np.where(mask, np.asarray(scores, dtype=np.float64), 0.0)
    mean = s.sum(axis=1, keepdims=True) / mask.sum(axis=1, keepdims=True)
    return np.where(mask, s - mean, 0.0)


def dataset_score_scale(scores: np.ndarray, mask: np.ndarray) -> float:
    """Root-mean-square deviation of scores from their per-example mean."""
    mask = np.asarray(mask, dtype=bool)
    dev = _centered(scores, mask)
    return float(np.sqrt((dev**2).sum() / max(mask.sum(), 1)))


def batch_scores_to_distribution(scores: np.ndarray, mask: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Row-wise :func:`scores_to_distribution` over the unmasked entries.

    ``scores`` and ``mask`` are ``(n_examples, g_max)``; masked entries get
    probability 0 and their values are ignored.
    """
    mask = np.asarray(mask, dtype=bool)
    dev = _centered(scores, mask)
    if scale is None:
        sd = np.sqrt((dev**2).sum(axis=1, keepdims=True) / mask.sum(axis=1, keepdims=True))
    else:
        sd = np.full((len(mask), 1), float(scale))
    flat = sd < 1e-12
    z = np.where(mask, dev / np.where(flat, 1.0, sd), -np.inf)
    z = np.where(flat & mask, 0.0, z)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def label_record_line(line: str, envs: dict, metrics, vp: Viewpoint) -> str:
    """Append a ``labels`` object to a raw dataset line, leaving the rest untouched."""
    body = line.rstrip("\n")
    rec = json.loads(body)
    if rec["env_id"] not in envs:
        raise UnknownEnvironment(rec["env_id"])
    goals = envs[rec["env_id"]].goals
    traj = np.asarray(rec["points"], dtype=np.float64)
    labels = {str(m): metric_scores(m, traj, goals, vp).tolist() for m in metrics}
    if not body.endswith("}"):
        raise ValueError("malformed dataset record")
    return body[:-1] + ',"labels":' + json.dumps(labels, separators=(",", ":")) + "}\n"


def label_dataset(
    dataset_path: str | Path,
    environments_path: str | Path,
    out_path: str | Path,
    metrics=ALL_METRICS,
    vp: Viewpoint = DEFAULT_VIEWPOINT,
) -> int:
    """Label every record of a dataset file with the requested metrics.

    Returns the number of records written.
    """
    metrics = [MetricKind(m) for m in metrics]
    order = [m for m in ALL_METRICS if m in metrics]
    envs = {e.env_id: e for e in read_environments(environments_path)}
    n = 0
    with open(dataset_path) as src, open(out_path, "w") as dst:
        for line in src:
            if not line.strip():
                continue
            dst.write(label_record_line(line, envs, order, vp))
            n += 1
    return n
