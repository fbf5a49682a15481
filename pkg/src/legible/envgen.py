"""Random environments and goal-reaching trajectory datasets.

All randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence``. Every environment and every trajectory record gets its
own sub-stream keyed by ``(kind, index)``, so records can be generated in
any order (or in parallel) and still come out identical.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geom import N_POINTS, DegeneratePath, resample_uniform

logger = logging.getLogger(__name__)

G_MAX = 8
MIN_GOAL_SEPARATION = 0.10
MAX_REJECTIONS = 10_000
RNG_NAME = "numpy.PCG64/SeedSequence"

_ENV_STREAM = 0
_TRAJ_STREAM = 1
_GOAL_COUNT_STREAM = 2


class PlacementFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Workspace:
    """Sampling box above the goal table plus the fixed start pose.

    The start pose belongs to the robot, which sits in front of the table,
    so it is allowed to lie outside the box.
    """

    lo: tuple[float, float, float] = (0.2, -0.35, 0.0)
    hi: tuple[float, float, float] = (0.8, 0.35, 0.6)
    table_z: float = 0.025
    start: tuple[float, float, float] = (0.0, 0.0, 0.4)

    def __post_init__(self):
        if not all(a < b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"workspace bounds must satisfy lo < hi, got {self.lo} / {self.hi}")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Workspace":
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)


@dataclass
class Environment:
    env_id: str
    goals: np.ndarray  # (n_goals, 3)

    def to_dict(self) -> dict:
        return {"env_id": self.env_id, "goals": self.goals.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        return cls(env_id=d["env_id"], goals=np.asarray(d["goals"], dtype=np.float64).reshape(-1, 3))


@dataclass
class RawSample:
    env_id: str
    target_index: int
    points: np.ndarray  # (n_points, 3)

    def to_json(self) -> str:
        return json.dumps(
            {"env_id": self.env_id, "target_index": int(self.target_index), "points": self.points.tolist()},
            separators=(",", ":"),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "RawSample":
        return cls(d["env_id"], int(d["target_index"]), np.asarray(d["points"], dtype=np.float64))


@dataclass
class DatasetSpec:
    name: str
    n_trajectories: int
    n_environments: int
    goal_counts: tuple[int, ...]
    seed: int = 0
    g_max: int = G_MAX

    def __post_init__(self):
        self.goal_counts = tuple(sorted(int(c) for c in self.goal_counts))
        if self.n_trajectories < 0 or self.n_environments <= 0:
            raise ValueError(f"{self.name}: counts must be positive")
        if not self.goal_counts or any(c < 2 or c > self.g_max for c in self.goal_counts):
            raise ValueError(f"{self.name}: goal counts must lie in 2..{self.g_max}, got {self.goal_counts}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["goal_counts"] = list(self.goal_counts)
        return d


@dataclass
class DatasetManifest:
    spec: dict
    seed: int
    count: int
    rng: str
    dataset_sha256: str
    environments: list[str]
    config_hash: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def sample_environment(
    rng: np.random.Generator,
    workspace: Workspace,
    goal_count: int,
    *,
    env_id: str = "env",
    g_max: int = G_MAX,
    min_separation: float = MIN_GOAL_SEPARATION,
) -> Environment:
    """Drop ``goal_count`` goals uniformly on the table, rejecting overlaps."""
    if goal_count < 2 or goal_count > g_max:
        raise ValueError(f"goal_count must be in 2..{g_max}, got {goal_count}")
    goals: list[np.ndarray] = []
    rejections = 0
    while len(goals) < goal_count:
        xy = rng.uniform(workspace.lo[:2], workspace.hi[:2])
        cand = np.array([xy[0], xy[1], workspace.table_z])
        if all(np.linalg.norm(cand - g) >= min_separation for g in goals):
            goals.append(cand)
            continue
        rejections += 1
        if rejections >= MAX_REJECTIONS:
            raise PlacementFailure(
                f"could not place {goal_count} goals {min_separation} m apart after {rejections} rejections"
            )
    return Environment(env_id=env_id, goals=np.stack(goals))


def sample_trajectory(
    rng: np.random.Generator, env: Environment, workspace: Workspace, n_points: int = N_POINTS
) -> RawSample:
    """Random piecewise-linear reach: start, 3-5 random waypoints, target goal."""
    target = int(rng.integers(len(env.goals)))
    lo, hi = np.asarray(workspace.lo), np.asarray(workspace.hi)
    for attempt in range(2):
        n_control = int(rng.integers(3, 6))
        waypoints = rng.uniform(lo, hi, size=(n_control, 3))
        path = np.vstack([np.asarray(workspace.start, dtype=np.float64), waypoints, env.goals[target]])
        try:
            points = resample_uniform(path, n_points)
        except DegeneratePath:
            if attempt == 1:
                raise
            continue
        return RawSample(env.env_id, target, points)
    raise AssertionError("unreachable")


def generate_environments(spec: DatasetSpec, workspace: Workspace, prefix: str | None = None) -> list[Environment]:
    prefix = prefix or spec.name
    counts_rng = substream(spec.seed, _GOAL_COUNT_STREAM)
    envs = []
    for i in range(spec.n_environments):
        goal_count = int(counts_rng.choice(spec.goal_counts))
        envs.append(
            sample_environment(
                substream(spec.seed, _ENV_STREAM, i),
                workspace,
                goal_count,
                env_id=f"{prefix}-{i:04d}",
                g_max=spec.g_max,
            )
        )
    return envs


def iter_samples(spec: DatasetSpec, workspace: Workspace, environments: list[Environment], n_points: int = N_POINTS):
    for j in range(spec.n_trajectories):
        rng = substream(spec.seed, _TRAJ_STREAM, j)
        env = environments[int(rng.integers(len(environments)))]
        yield sample_trajectory(rng, env, workspace, n_points)


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dataset_paths(out_dir: str | Path, name: str) -> dict[str, Path]:
    out_dir = Path(out_dir)
    return {
        "dataset": out_dir / f"{name}.jsonl",
        "environments": out_dir / f"{name}.envs.json",
        "manifest": out_dir / f"{name}.manifest.json",
        "labeled": out_dir / f"{name}.labeled.jsonl",
    }


def write_environments(path: str | Path, environments: list[Environment]) -> None:
    doc = {"environments": [e.to_dict() for e in environments]}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def read_environments(path: str | Path) -> list[Environment]:
    doc = json.loads(Path(path).read_text())
    return [Environment.from_dict(e) for e in doc["environments"]]


def read_samples(path: str | Path):
    with open(path) as f:
        for line in f:
            if line.strip():
                yield RawSample.from_dict(json.loads(line))


def generate_dataset(
    spec: DatasetSpec,
    workspace: Workspace,
    out_dir: str | Path,
    environments: list[Environment] | None = None,
    *,
    n_points: int = N_POINTS,
    config_hash: str | None = None,
) -> DatasetManifest:
    """Write ``<name>.jsonl``, ``<name>.envs.json`` and ``<name>.manifest.json``.

    Environments are sampled first (unless given, e.g. to draw a second
    split from the training environments) and each trajectory then picks
    one of them uniformly.
    """
    paths = dataset_paths(out_dir, spec.name)
    paths["dataset"].parent.mkdir(parents=True, exist_ok=True)
    if environments is None:
        environments = generate_environments(spec, workspace)
    write_environments(paths["environments"], environments)

    count = 0
    with open(paths["dataset"], "w") as f:
        for sample in iter_samples(spec, workspace, environments, n_points):
            f.write(sample.to_json())
            f.write("\n")
            count += 1
    logger.info("wrote %d trajectories to %s", count, paths["dataset"])

    manifest = DatasetManifest(
        spec=spec.to_dict(),
        seed=spec.seed,
        count=count,
        rng=RNG_NAME,
        dataset_sha256=file_sha256(paths["dataset"]),
        environments=[e.env_id for e in environments],
        config_hash=config_hash,
        extra={"workspace": workspace.to_dict(), "n_points": n_points},
    )
    paths["manifest"].write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest
