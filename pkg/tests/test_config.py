from dataclasses import replace

import pytest

from legible.config import SPLIT_NAMES, ExperimentConfig, ModelConfig, derive_seed


def test_full_scale_defaults():
    c = ExperimentConfig()
    assert c.dataset_spec("training").n_trajectories == 100_000
    assert c.dataset_spec("training").n_environments == 250
    assert c.dataset_spec("training").goal_counts == (2, 3, 5, 6)
    assert c.dataset_spec("goal_count_val").goal_counts == (7,)
    assert c.dataset_spec("goal_count_test").goal_counts == (4, 8)
    assert c.dataset_spec("position_test").n_environments == 10
    assert c.slotv_model.widths == (1536, 768) and c.trex_model.widths == (1792, 768)
    assert (c.slotv_train.epochs, c.trex_train.epochs, c.n_repeats) == (15, 25, 10)


def test_desk_preset():
    c = ExperimentConfig.desk()
    assert c.dataset_spec("training").n_trajectories == 10_000
    assert c.dataset_spec("training").n_environments == 25
    assert c.dataset_spec("training").goal_counts == (2, 3)
    assert all(c.dataset_spec(n).n_trajectories == 1_000 for n in SPLIT_NAMES[1:])
    assert c.slotv_model.widths == (256, 128) == c.trex_model.widths
    assert (c.slotv_train.epochs, c.trex_train.epochs, c.n_repeats) == (5, 15, 3)
    # only sizes change
    assert c.slotv_train.lr == 0.005 and c.viewpoint == ExperimentConfig().viewpoint
    assert c.with_scale("paper").to_dict() == ExperimentConfig().to_dict()


def test_trajectory_splits_share_training_environments():
    c = ExperimentConfig.desk()
    assert c.splits["trajectory_test"].env_source == "training"
    assert c.dataset_spec("trajectory_test").n_environments == 25
    assert c.splits["position_test"].env_source is None


def test_split_seeds_distinct_and_master_dependent():
    a, b = ExperimentConfig(), ExperimentConfig(seed=1)
    seeds = [a.split_seed(n) for n in SPLIT_NAMES]
    assert len(set(seeds)) == 7
    assert seeds != [b.split_seed(n) for n in SPLIT_NAMES]
    assert a.run_seed("slotv", "dragan", 0) != a.run_seed("slotv", "dragan", 1) != a.run_seed("trex", "dragan", 1)
    assert derive_seed(0, 1, 2) == derive_seed(0, 1, 2) >= 0


def test_json_roundtrip_and_hash(tmp_path):
    c = ExperimentConfig.desk(seed=7)
    c.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back.to_dict() == c.to_dict()
    assert back.config_hash() == c.config_hash()
    assert replace(c, out_dir="elsewhere").config_hash() == c.config_hash()
    assert replace(c, seed=8).config_hash() != c.config_hash()
    assert replace(c, slotv_model=ModelConfig((64,))).config_hash() != c.config_hash()


def test_invalid_configs():
    with pytest.raises(ValueError):
        ExperimentConfig(n_repeats=0)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    bad = ExperimentConfig().splits
    bad["position_test"] = replace(bad["position_test"], env_source="trajectory_val")
    with pytest.raises(ValueError):
        ExperimentConfig(splits=bad)
    with pytest.raises(ValueError):
        ExperimentConfig().with_scale("huge")
