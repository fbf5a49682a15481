import json
from dataclasses import replace

import numpy as np
import pytest

from legible import cli, nn, slotv
from legible.config import SPLIT_NAMES, ExperimentConfig, ModelConfig
from legible.data import ObserverModel, load_dataset
from legible.envgen import Environment, RawSample, file_sha256, write_environments
from legible.oracles import ALL_METRICS, effdist_scores, metric_scores


def tiny_config(out_dir, **kw):
    c = ExperimentConfig.desk(out_dir=str(out_dir))
    splits = {
        k: replace(v, n_trajectories=640 if k == "training" else 40, n_environments=min(v.n_environments, 5))
        for k, v in c.splits.items()
    }
    c = replace(
        c,
        splits=splits,
        slotv_model=ModelConfig((16, 8)),
        trex_model=ModelConfig((16, 8)),
        slotv_train=replace(c.slotv_train, epochs=1),
        trex_train=replace(c.trex_train, epochs=1),
        n_repeats=2,
        eval_every=1,
    )
    return replace(c, **kw)


@pytest.fixture(scope="module")
def labeled(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("tiny"))
    manifests = cli.cmd_gen(cfg)
    cli.cmd_label(cfg)
    return cfg, manifests


def test_parser_global_flags_anywhere():
    p = cli.build_parser()
    a = p.parse_args(["--scale", "desk", "--seed", "3", "gen"])
    b = p.parse_args(["gen", "--scale", "desk", "--seed", "3"])
    assert (a.scale, a.seed, a.command) == (b.scale, b.seed, b.command) == ("desk", 3, "gen")
    assert p.parse_args(["table"]).out is None


def test_resolve_config(tmp_path):
    args = cli.build_parser().parse_args(["--scale", "desk", "--out", str(tmp_path), "--seed", "5", "gen"])
    cfg = cli.resolve_config(args)
    assert cfg.scale == "desk" and cfg.seed == 5 and cfg.out_dir == str(tmp_path)
    assert cfg.dataset_spec("training").n_trajectories == 10_000
    full = cli.resolve_config(cli.build_parser().parse_args(["gen"]))
    assert full.dataset_spec("training").n_trajectories == 100_000


def test_gen_outputs(labeled):
    cfg, manifests = labeled
    lay = cli.Layout(cfg.out_dir)
    assert set(manifests) == set(SPLIT_NAMES)
    for name in SPLIT_NAMES:
        p = lay.split(name)
        man = json.loads(p["manifest"].read_text())
        assert man["count"] == len(p["dataset"].read_text().splitlines()) == cfg.splits[name].n_trajectories
        assert man["dataset_sha256"] == file_sha256(p["dataset"])
        assert man["config_hash"] == cfg.config_hash()
    train_envs = set(manifests["training"].environments)
    assert set(manifests["trajectory_test"].environments) == train_envs
    for name in ("position_val", "position_test", "goal_count_val", "goal_count_test"):
        assert not train_envs & set(manifests[name].environments)
    assert not set(manifests["position_val"].environments) & set(manifests["position_test"].environments)
    assert json.loads((lay.root / "config.json").read_text())["seed"] == cfg.seed


def test_label_outputs(labeled):
    cfg, _ = labeled
    p = cli.Layout(cfg.out_dir).split("goal_count_test")
    envs = {e["env_id"]: np.array(e["goals"]) for e in json.loads(p["environments"].read_text())["environments"]}
    line = p["labeled"].read_text().splitlines()[0]
    rec = json.loads(line)
    goals = envs[rec["env_id"]]
    assert set(rec["labels"]) == {str(m) for m in ALL_METRICS}
    for m in ALL_METRICS:
        assert len(rec["labels"][str(m)]) == len(goals)
        assert rec["labels"][str(m)] == metric_scores(m, np.array(rec["points"]), goals, cfg.viewpoint).tolist()
    before = p["labeled"].read_bytes()
    cli.cmd_label(cfg)
    assert p["labeled"].read_bytes() == before
    man = json.loads(p["labeled_manifest"].read_text())
    assert man["labeled_sha256"] == file_sha256(p["labeled"]) and man["config_hash"] == cfg.config_hash()


def test_gen_deterministic(tmp_path, labeled):
    cfg, _ = labeled
    other = replace(cfg, out_dir=str(tmp_path))
    cli.cmd_gen(other)
    for name in SPLIT_NAMES:
        a, b = cli.Layout(cfg.out_dir).split(name), cli.Layout(other.out_dir).split(name)
        for key in ("dataset", "environments", "manifest"):
            assert a[key].read_bytes() == b[key].read_bytes()


def test_label_requires_data(tmp_path):
    with pytest.raises(FileNotFoundError):
        cli.cmd_label(tiny_config(tmp_path))
    assert cli.main(["--out", str(tmp_path), "table"]) == 2


def test_table_schema_and_records(labeled):
    cfg, _ = labeled
    out = cli.cmd_table(cfg, ["slotv"], ["effdist"])
    lay = cli.Layout(cfg.out_dir)
    lines = (lay.results / "table.csv").read_text().splitlines()
    assert lines[0] == "framework,metric,split,mean,sd,n"
    assert [ln.split(",")[2] for ln in lines[1:]] == ["training", "trajectory", "position", "goal_count"]
    assert all(ln.split(",")[5] == "2" for ln in lines[1:])
    runs = [json.loads(x) for x in (lay.results / "runs.jsonl").read_text().splitlines()]
    assert len(runs) == 2 * 4 and {r["repeat"] for r in runs} == {0, 1}
    assert all(0 <= r["accuracy"] <= 1 for r in runs)
    # table means are the run means
    traj = [r["accuracy"] for r in runs if r["split"] == "trajectory"]
    row = next(r for r in out["rows"] if r["split"] == "trajectory")
    assert row["mean"] == pytest.approx(np.mean(traj)) and row["sd"] == pytest.approx(np.std(traj, ddof=1))
    header = json.loads(lay.model("slotv", "effdist", 1).read_text())
    assert header["config_hash"] == cfg.config_hash() and header["framework"] == "slotv"
    assert out["config_hash"] == cfg.config_hash() and out["failed"] == []


def test_table_failed_cell_is_recorded(labeled, monkeypatch):
    cfg, _ = labeled
    real = cli.train_model

    def flaky(cfg_, fw, metric, repeat, data):
        if fw == "trex":
            raise RuntimeError("boom")
        return real(cfg_, fw, metric, repeat, data)

    monkeypatch.setattr(cli, "train_model", flaky)
    out = cli.cmd_table(replace(cfg, n_repeats=1), ["trex", "slotv"], ["fastapp"])
    assert out["failed"] == [{"framework": "trex", "metric": "fastapp", "error": "RuntimeError: boom"}]
    rows = {(r["framework"], r["split"]): r for r in out["rows"]}
    assert rows[("trex", "trajectory")]["n"] == 0 and rows[("slotv", "trajectory")]["n"] == 1
    assert "trex,fastapp,trajectory,nan,nan,0" in (cli.Layout(cfg.out_dir).results / "table.csv").read_text()


def test_curve_schema(labeled):
    cfg, _ = labeled
    out = cli.cmd_curve(replace(cfg, n_repeats=1))
    slotv_pts = [p["examples_seen"] for p in out["curve"]["slotv"]]
    trex_pts = [p["examples_seen"] for p in out["curve"]["trex"]]
    assert slotv_pts == list(range(32, 641, 32))  # eval_every=1, batch 32
    assert trex_pts == [256, 512, 640]  # 128 pairs = 256 trajectories per update; last batch short
    assert cli.shared_checkpoint_wins(
        {k: [(p["examples_seen"], p["val_accuracy"]) for p in v] for k, v in out["curve"].items()}
    )[1] == 3
    lines = (cli.Layout(cfg.out_dir).results / "curve.csv").read_text().splitlines()
    assert lines[0] == "framework,examples_seen,val_accuracy" and len(lines) == 1 + 20 + 3


def test_curve_spacing_default():
    checkpoints = [[slotv.Checkpoint(u, u * 32, 0.5) for u in (10, 20)], [slotv.Checkpoint(10, 320, 0.7)]]
    assert cli.average_curves(checkpoints) == [(320, pytest.approx(0.6))]


def _oracle_fixture(tmp_path, n=30):
    """Collinear scenes where V(x) = -|x_0| is exactly the EffDist summand."""
    rng = np.random.default_rng(0)
    envs, samples = [], []
    for i in range(n):
        k = 2 + i % 3
        goals = np.zeros((k, 3))
        goals[:, 0] = rng.choice(np.linspace(-1, 1, 21), size=k, replace=False)
        envs.append(Environment(f"e{i}", goals))
        pts = np.zeros((100, 3))
        pts[:, 0] = np.linspace(rng.uniform(-1, 1), goals[0, 0], 100)
        samples.append(RawSample(f"e{i}", 0, pts))
    write_environments(tmp_path / "o.envs.json", envs)
    lines = []
    for s, e in zip(samples, envs):
        body = s.to_json()[:-1]
        lines.append(body + ',"labels":{"effdist":' + json.dumps(effdist_scores(s.points, e.goals).tolist()) + "}}\n")
    (tmp_path / "o.labeled.jsonl").write_text("".join(lines))
    w1 = np.zeros((3, 2))
    w1[0] = [1.0, -1.0]
    model = ObserverModel(nn.MLP((2,), [w1, -np.ones((2, 1))], [np.zeros(2), np.zeros(1)]), metric="effdist")
    model.save(tmp_path / "oracle.json")
    return tmp_path / "o.labeled.jsonl", tmp_path / "oracle.json"


def test_eval_oracle_model(tmp_path, capsys):
    data, model = _oracle_fixture(tmp_path)
    assert cli.main(["eval", "--model", str(model), "--data", str(data), "--report", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["accuracy"] == 1.0 and report["n"] == 30 and report["metric"] == "effdist"
    assert json.loads(capsys.readouterr().out)["accuracy"] == 1.0


def test_eval_matches_library(labeled, tmp_path):
    cfg, _ = labeled
    res = cli.cmd_train(cfg, "slotv", "dragan")
    data_path = cli.Layout(cfg.out_dir).split("position_test")["labeled"]
    rc = cli.main(["eval", "--model", res["model"], "--data", str(data_path), "--report", str(tmp_path / "r.json")])
    assert rc == 0
    lib = slotv.evaluate(ObserverModel.load(res["model"]), load_dataset(data_path), "dragan")
    assert json.loads((tmp_path / "r.json").read_text())["accuracy"] == lib.accuracy


def test_eval_gmax_mismatch(tmp_path, capsys):
    data, model = _oracle_fixture(tmp_path)
    doc = json.loads(model.read_text())
    doc["g_max"] = 3
    model.write_text(json.dumps(doc))
    assert cli.main(["eval", "--model", str(model), "--data", str(data), "--report", str(tmp_path / "r.json")]) == 2
    assert "G_max mismatch" in capsys.readouterr().err
    assert not (tmp_path / "r.json").exists()


def test_eval_malformed_inputs(tmp_path, capsys):
    data, model = _oracle_fixture(tmp_path)
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["eval", "--model", str(tmp_path / "bad.json"), "--data", str(data)]) == 2
    assert cli.main(["eval", "--model", str(model), "--data", str(tmp_path / "missing.labeled.jsonl")]) == 2
    assert cli.main(["eval", "--model", str(model), "--data", str(data), "--metric", "dragan"]) == 2
    assert capsys.readouterr().err.count("error:") == 3
