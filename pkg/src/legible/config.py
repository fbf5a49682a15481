"""Experiment configuration: presets, JSON round-trip, hashing and seeds.

Every random choice of an experiment derives from one master seed through
``SeedSequence`` spawn keys, so two runs with the same config file and seed
produce the same bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .envgen import G_MAX, DatasetSpec, Workspace
from .geom import N_POINTS, Viewpoint
from .oracles import DEFAULT_VIEWPOINT, MetricKind
from .slotv import DESK_WIDTHS, SlotVTrainConfig
from .slotv import PAPER_WIDTHS as SLOTV_PAPER_WIDTHS
from .trex import PAPER_WIDTHS as TREX_PAPER_WIDTHS
from .trex import TrexTrainConfig

SPLIT_NAMES = (
    "training",
    "trajectory_val",
    "trajectory_test",
    "position_val",
    "position_test",
    "goal_count_val",
    "goal_count_test",
)
# splits reported in the accuracy table, with their row labels
TABLE_SPLITS = {
    "training": "training",
    "trajectory_test": "trajectory",
    "position_test": "position",
    "goal_count_test": "goal_count",
}
FRAMEWORKS = ("slotv", "trex")
SCALES = ("paper", "desk")

# spawn-key prefixes for derived seeds
_SPLIT_KEY = 1
_RUN_KEY = 2
_CURVE_KEY = 3


def derive_seed(master: int, *key: int) -> int:
    """A 63-bit seed for sub-task ``key`` of the run seeded by ``master``."""
    state = np.random.SeedSequence(master, spawn_key=key).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


@dataclass
class SplitConfig:
    n_trajectories: int
    n_environments: int
    goal_counts: tuple[int, ...]
    # reuse the environments of another split instead of sampling fresh ones
    env_source: str | None = None


@dataclass
class ModelConfig:
    widths: tuple[int, ...]
    precision: str = "float32"


def _full_splits() -> dict[str, SplitConfig]:
    train_counts = (2, 3, 5, 6)
    return {
        "training": SplitConfig(100_000, 250, train_counts),
        "trajectory_val": SplitConfig(10_000, 250, train_counts, "training"),
        "trajectory_test": SplitConfig(10_000, 250, train_counts, "training"),
        "position_val": SplitConfig(10_000, 10, train_counts),
        "position_test": SplitConfig(10_000, 10, train_counts),
        "goal_count_val": SplitConfig(10_000, 10, (7,)),
        "goal_count_test": SplitConfig(10_000, 10, (4, 8)),
    }


@dataclass
class ExperimentConfig:
    """Everything that determines an experiment's outputs.

    Defaults are the full-scale setup; :meth:`desk` shrinks counts, widths,
    epochs and repeats for a laptop CPU without changing any formula.
    """

    workspace: Workspace = field(default_factory=Workspace)
    splits: dict[str, SplitConfig] = field(default_factory=_full_splits)
    viewpoint: Viewpoint = DEFAULT_VIEWPOINT
    slotv_model: ModelConfig = field(default_factory=lambda: ModelConfig(SLOTV_PAPER_WIDTHS))
    trex_model: ModelConfig = field(default_factory=lambda: ModelConfig(TREX_PAPER_WIDTHS))
    slotv_train: SlotVTrainConfig = field(default_factory=SlotVTrainConfig)
    trex_train: TrexTrainConfig = field(default_factory=TrexTrainConfig)
    n_repeats: int = 10
    seed: int = 0
    out_dir: str = "runs"
    curve_metric: str = "dragan"
    eval_every: int = 10
    n_points: int = N_POINTS
    g_max: int = G_MAX
    scale: str = "paper"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if set(self.splits) != set(SPLIT_NAMES):
            raise ValueError(f"splits must be exactly {SPLIT_NAMES}, got {sorted(self.splits)}")
        for name in SPLIT_NAMES:
            sc = self.splits[name]
            if sc.env_source is not None:
                src = self.splits.get(sc.env_source)
                if src is None or src.env_source is not None:
                    raise ValueError(f"{name}: env_source must name a split with its own environments")
            self.dataset_spec(name)  # DatasetSpec checks counts and goal counts
        if self.n_repeats <= 0 or self.eval_every <= 0:
            raise ValueError("n_repeats and eval_every must be positive")
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}")
        MetricKind(self.curve_metric)
        self.viewpoint.basis()
        seeds = [self.split_seed(n) for n in SPLIT_NAMES]
        if len(set(seeds)) != len(seeds):
            raise ValueError("split seed streams collide")

    @classmethod
    def paper(cls, **overrides) -> "ExperimentConfig":
        return cls(**overrides)

    @classmethod
    def desk(cls, **overrides) -> "ExperimentConfig":
        return cls(**overrides).with_scale("desk")

    def with_scale(self, scale: str) -> "ExperimentConfig":
        """Apply a preset's counts, widths, epochs and repeats."""
        if scale == "paper":
            base = ExperimentConfig()
            return replace(
                self,
                splits=base.splits,
                slotv_model=replace(self.slotv_model, widths=base.slotv_model.widths),
                trex_model=replace(self.trex_model, widths=base.trex_model.widths),
                slotv_train=replace(self.slotv_train, epochs=base.slotv_train.epochs),
                trex_train=replace(self.trex_train, epochs=base.trex_train.epochs),
                n_repeats=base.n_repeats,
                scale="paper",
            )
        if scale != "desk":
            raise ValueError(f"unknown scale {scale!r}")
        train_counts = (2, 3)
        splits = {
            "training": SplitConfig(10_000, 25, train_counts),
            "trajectory_val": SplitConfig(1_000, 25, train_counts, "training"),
            "trajectory_test": SplitConfig(1_000, 25, train_counts, "training"),
            "position_val": SplitConfig(1_000, 10, train_counts),
            "position_test": SplitConfig(1_000, 10, train_counts),
            "goal_count_val": SplitConfig(1_000, 10, (7,)),
            "goal_count_test": SplitConfig(1_000, 10, (4, 8)),
        }
        return replace(
            self,
            splits=splits,
            slotv_model=replace(self.slotv_model, widths=DESK_WIDTHS),
            trex_model=replace(self.trex_model, widths=DESK_WIDTHS),
            slotv_train=replace(self.slotv_train, epochs=5),
            trex_train=replace(self.trex_train, epochs=15),
            n_repeats=3,
            scale="desk",
        )

    def split_seed(self, name: str) -> int:
        return derive_seed(self.seed, _SPLIT_KEY, SPLIT_NAMES.index(name))

    def run_seed(self, framework: str, metric: str, repeat: int) -> int:
        m = list(MetricKind).index(MetricKind(metric))
        return derive_seed(self.seed, _RUN_KEY, FRAMEWORKS.index(framework), m, repeat)

    def curve_seed(self, framework: str, repeat: int) -> int:
        return derive_seed(self.seed, _CURVE_KEY, FRAMEWORKS.index(framework), repeat)

    def dataset_spec(self, name: str) -> DatasetSpec:
        sc = self.splits[name]
        n_env = self.splits[sc.env_source].n_environments if sc.env_source else sc.n_environments
        counts = self.splits[sc.env_source].goal_counts if sc.env_source else sc.goal_counts
        return DatasetSpec(name, sc.n_trajectories, n_env, tuple(counts), seed=self.split_seed(name), g_max=self.g_max)

    def model_config(self, framework: str) -> ModelConfig:
        return {"slotv": self.slotv_model, "trex": self.trex_model}[framework]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["workspace"] = self.workspace.to_dict()
        d["viewpoint"] = self.viewpoint.to_dict()
        return json.loads(json.dumps(d))  # tuples -> lists

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kw = dict(d)
        if "workspace" in kw:
            kw["workspace"] = Workspace.from_dict(kw["workspace"])
        if "viewpoint" in kw:
            kw["viewpoint"] = Viewpoint.from_dict(kw["viewpoint"])
        if "splits" in kw:
            kw["splits"] = {
                k: SplitConfig(v["n_trajectories"], v["n_environments"], tuple(v["goal_counts"]), v.get("env_source"))
                for k, v in kw["splits"].items()
            }
        for key in ("slotv_model", "trex_model"):
            if key in kw:
                kw[key] = ModelConfig(tuple(kw[key]["widths"]), kw[key].get("precision", "float32"))
        if "slotv_train" in kw:
            kw["slotv_train"] = SlotVTrainConfig(**kw["slotv_train"])
        if "trex_train" in kw:
            kw["trex_train"] = TrexTrainConfig(**kw["trex_train"])
        return cls(**kw)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, ignoring where outputs are written."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
