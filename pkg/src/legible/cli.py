"""Command-line entry point.

    legible --scale desk --out runs/desk gen
    legible --scale desk --out runs/desk label
    legible --scale desk --out runs/desk table
    legible --scale desk --out runs/desk curve
    legible eval --model runs/desk/models/slotv_effdist_r0.json \\
        --data runs/desk/data/trajectory_test.labeled.jsonl

Output layout under ``--out``::

    config.json            resolved config (hash and seed inside)
    data/                  datasets, environments, manifests, labeled files
    models/                trained networks
    results/               table.csv/.json, runs.jsonl, curve.csv/.json
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import slotv, trex
from .config import FRAMEWORKS, SCALES, SPLIT_NAMES, TABLE_SPLITS, ExperimentConfig
from .data import ObserverModel, TooManyGoals, TrajectoryData, load_dataset
from .envgen import dataset_paths, file_sha256, generate_dataset, generate_environments
from .oracles import ALL_METRICS, MetricKind, label_dataset

logger = logging.getLogger("legible")

TABLE_HEADER = "framework,metric,split,mean,sd,n"
CURVE_HEADER = "framework,examples_seen,val_accuracy"


@dataclass
class RunRecord:
    framework: str
    metric: str
    split: str
    repeat: int
    accuracy: float
    wall_time: float
    seed: int


class Layout:
    """Where every artifact of an experiment lives."""

    def __init__(self, out_dir: str | Path):
        self.root = Path(out_dir)
        self.data = self.root / "data"
        self.models = self.root / "models"
        self.results = self.root / "results"

    def split(self, name: str) -> dict[str, Path]:
        paths = dataset_paths(self.data, name)
        paths["labeled_manifest"] = self.data / f"{name}.labeled.manifest.json"
        return paths

    def model(self, framework: str, metric: str, repeat: int) -> Path:
        return self.models / f"{framework}_{metric}_r{repeat}.json"


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "scale": cfg.scale}


def cmd_gen(cfg: ExperimentConfig) -> dict:
    """Generate all seven splits; returns the manifests keyed by split."""
    lay = Layout(cfg.out_dir)
    lay.root.mkdir(parents=True, exist_ok=True)
    cfg.save(lay.root / "config.json")
    chash = cfg.config_hash()
    own_envs = {}
    manifests = {}
    for name in SPLIT_NAMES:
        spec = cfg.dataset_spec(name)
        source = cfg.splits[name].env_source
        if source is None:
            own_envs[name] = generate_environments(spec, cfg.workspace)
        envs = own_envs[source or name]
        manifests[name] = generate_dataset(spec, cfg.workspace, lay.data, envs, n_points=cfg.n_points, config_hash=chash)
        logger.info("gen %s: %d trajectories, %d environments", name, manifests[name].count, len(envs))
    seen: dict[str, str] = {}
    for name, envs in own_envs.items():
        for e in envs:
            if e.env_id in seen:
                raise RuntimeError(f"environment {e.env_id} shared by {seen[e.env_id]} and {name}")
            seen[e.env_id] = name
    return manifests


def cmd_label(cfg: ExperimentConfig) -> dict[str, int]:
    """Label every split with all four metrics."""
    lay = Layout(cfg.out_dir)
    counts = {}
    for name in SPLIT_NAMES:
        p = lay.split(name)
        for key in ("dataset", "environments"):
            if not p[key].exists():
                raise FileNotFoundError(f"{p[key]} is missing; run 'gen' first")
        counts[name] = label_dataset(p["dataset"], p["environments"], p["labeled"], ALL_METRICS, cfg.viewpoint)
        _write_json(
            p["labeled_manifest"],
            {
                **_provenance(cfg),
                "count": counts[name],
                "metrics": [str(m) for m in ALL_METRICS],
                "viewpoint": cfg.viewpoint.to_dict(),
                "source_sha256": file_sha256(p["dataset"]),
                "labeled_sha256": file_sha256(p["labeled"]),
            },
        )
        logger.info("label %s: %d records", name, counts[name])
    return counts


def load_split(cfg: ExperimentConfig, name: str) -> TrajectoryData:
    p = Layout(cfg.out_dir).split(name)
    if not p["labeled"].exists():
        raise FileNotFoundError(f"{p['labeled']} is missing; run 'gen' and 'label' first")
    return load_dataset(p["labeled"], p["environments"], g_max=cfg.g_max, name=name)


def train_model(cfg: ExperimentConfig, framework: str, metric: str, repeat: int, data: TrajectoryData):
    """Train one fresh network; returns ``(model, loss history, seed)``."""
    seed = cfg.run_seed(framework, metric, repeat)
    mc = cfg.model_config(framework)
    model = slotv.new_model(
        mc.widths, seed, precision=mc.precision, framework=framework, g_max=cfg.g_max, n_points=cfg.n_points
    )
    if framework == "slotv":
        history = slotv.train(model, data, replace(cfg.slotv_train, metric=metric, seed=seed))
    else:
        history = trex.train_trex(model, data, replace(cfg.trex_train, metric=metric, seed=seed))
    return model, history, seed


def evaluate_model(model: ObserverModel, data: TrajectoryData, metric: str) -> slotv.EvalReport:
    if model.framework == "trex":
        return trex.evaluate_trex(model, data, metric)
    return slotv.evaluate(model, data, metric)


def cmd_train(cfg: ExperimentConfig, framework: str, metric: str, repeat: int = 0) -> dict:
    data = load_split(cfg, "training")
    t0 = time.perf_counter()
    model, history, seed = train_model(cfg, framework, metric, repeat, data)
    path = Layout(cfg.out_dir).model(framework, metric, repeat)
    path.parent.mkdir(parents=True, exist_ok=True)
    model.save(path, {"config_hash": cfg.config_hash()})
    return {"model": str(path), "seed": seed, "loss_history": history, "wall_time": time.perf_counter() - t0}


def _mean_sd(values: list[float]) -> tuple[float, float]:
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


def cmd_table(cfg: ExperimentConfig, frameworks=FRAMEWORKS, metrics=ALL_METRICS) -> dict:
    """Accuracy matrix: ``n_repeats`` trainings per (framework, metric) cell.

    A cell whose training raises is recorded as failed and the run goes on.
    """
    lay = Layout(cfg.out_dir)
    lay.models.mkdir(parents=True, exist_ok=True)
    lay.results.mkdir(parents=True, exist_ok=True)
    data = {name: load_split(cfg, name) for name in TABLE_SPLITS}
    chash = cfg.config_hash()
    rows, failed = [], []
    runs_path = lay.results / "runs.jsonl"
    runs_path.write_text("")
    for fw in frameworks:
        for metric in (str(MetricKind(m)) for m in metrics):
            acc: dict[str, list[float]] = {s: [] for s in TABLE_SPLITS}
            try:
                for r in range(cfg.n_repeats):
                    t0 = time.perf_counter()
                    model, _, seed = train_model(cfg, fw, metric, r, data["training"])
                    train_time = time.perf_counter() - t0
                    model.save(lay.model(fw, metric, r), {"config_hash": chash})
                    for split, d in data.items():
                        t1 = time.perf_counter()
                        rep = evaluate_model(model, d, metric)
                        acc[split].append(rep.accuracy)
                        rec = RunRecord(fw, metric, TABLE_SPLITS[split], r, rep.accuracy,
                                        train_time + time.perf_counter() - t1, seed)
                        with open(runs_path, "a") as f:
                            f.write(json.dumps({**asdict(rec), "config_hash": chash}) + "\n")
                    logger.info(
                        "table %s/%s repeat %d: %s (%.0fs)", fw, metric, r,
                        {TABLE_SPLITS[s]: round(v[-1], 3) for s, v in acc.items()}, time.perf_counter() - t0,
                    )
            except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the matrix
                logger.exception("cell %s/%s failed", fw, metric)
                failed.append({"framework": fw, "metric": metric, "error": f"{type(exc).__name__}: {exc}"})
                for split in TABLE_SPLITS:
                    rows.append({"framework": fw, "metric": metric, "split": TABLE_SPLITS[split],
                                 "mean": None, "sd": None, "n": 0})
                continue
            for split in TABLE_SPLITS:
                mean, sd = _mean_sd(acc[split])
                rows.append({"framework": fw, "metric": metric, "split": TABLE_SPLITS[split],
                             "mean": mean, "sd": sd, "n": len(acc[split])})

    def fmt(v):
        return "nan" if v is None else f"{v:.6f}"

    lines = [TABLE_HEADER] + [f"{r['framework']},{r['metric']},{r['split']},{fmt(r['mean'])},{fmt(r['sd'])},{r['n']}" for r in rows]
    (lay.results / "table.csv").write_text("\n".join(lines) + "\n")
    result = {**_provenance(cfg), "n_repeats": cfg.n_repeats, "rows": rows, "failed": failed}
    _write_json(lay.results / "table.json", result)
    return result


def average_curves(curves: list[list[slotv.Checkpoint]]) -> list[tuple[int, float]]:
    """Mean validation accuracy at the checkpoints every repeat reached."""
    common = set.intersection(*(set(c.examples_seen for c in run) for run in curves)) if curves else set()
    out = []
    for seen in sorted(common):
        out.append((seen, float(np.mean([next(c.val_accuracy for c in run if c.examples_seen == seen) for run in curves]))))
    return out


def shared_checkpoint_wins(curve: dict[str, list[tuple[int, float]]]) -> tuple[int, int]:
    """``(wins, shared)``: checkpoints where SLOT-V is at least as accurate as T-REX."""
    s, t = dict(curve["slotv"]), dict(curve["trex"])
    shared = sorted(set(s) & set(t))
    return sum(s[k] >= t[k] for k in shared), len(shared)


def cmd_curve(cfg: ExperimentConfig, metric: str | None = None) -> dict:
    """One-epoch learning curves of both frameworks on the trajectory validation split."""
    metric = str(MetricKind(metric or cfg.curve_metric))
    train_data, val_data = load_split(cfg, "training"), load_split(cfg, "trajectory_val")
    raw: dict[str, list[list[slotv.Checkpoint]]] = {fw: [] for fw in FRAMEWORKS}
    for r in range(cfg.n_repeats):
        for fw in FRAMEWORKS:
            seed = cfg.curve_seed(fw, r)
            mc = cfg.model_config(fw)
            model = slotv.new_model(mc.widths, seed, precision=mc.precision, framework=fw, g_max=cfg.g_max)
            if fw == "slotv":
                c = slotv.learning_curve(model, train_data, val_data, replace(cfg.slotv_train, metric=metric, seed=seed), cfg.eval_every)
            else:
                c = trex.learning_curve(model, train_data, val_data, replace(cfg.trex_train, metric=metric, seed=seed), cfg.eval_every)
            raw[fw].append(c)
            logger.info("curve %s repeat %d: final %.3f", fw, r, c[-1].val_accuracy if c else float("nan"))
    curve = {fw: average_curves(runs) for fw, runs in raw.items()}
    lay = Layout(cfg.out_dir)
    lay.results.mkdir(parents=True, exist_ok=True)
    lines = [CURVE_HEADER] + [f"{fw},{seen},{acc:.6f}" for fw in FRAMEWORKS for seen, acc in curve[fw]]
    (lay.results / "curve.csv").write_text("\n".join(lines) + "\n")
    result = {
        **_provenance(cfg),
        "metric": metric,
        "n_repeats": cfg.n_repeats,
        "curve": {fw: [{"examples_seen": s, "val_accuracy": a} for s, a in pts] for fw, pts in curve.items()},
        "runs": {fw: [[asdict(c) for c in run] for run in runs] for fw, runs in raw.items()},
    }
    _write_json(lay.results / "curve.json", result)
    return result


class CliError(Exception):
    pass


def cmd_eval(model_path, data_path, metric=None, report_path=None, envs_path=None) -> dict:
    try:
        model = ObserverModel.load(model_path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read model {model_path}: {exc}") from exc
    try:
        data = load_dataset(data_path, envs_path, g_max=model.g_max)
    except TooManyGoals as exc:
        raise CliError(f"G_max mismatch: the model pads to {model.g_max} goals but {exc}") from exc
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read dataset {data_path}: {exc}") from exc
    if len(data) and data.n_points != model.n_points:
        raise CliError(f"model expects {model.n_points} points per trajectory, data has {data.n_points}")
    metric = metric or model.metric
    if metric is None:
        raise CliError("the model file names no metric; pass --metric")
    try:
        report = evaluate_model(model, data, metric)
    except (KeyError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    doc = {**report.to_dict(), "model": str(model_path), "data": str(data_path)}
    if report_path is not None:
        _write_json(Path(report_path), doc)
    return doc


def _common_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    """Global flags, accepted before or after the subcommand."""

    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--config", default=default(None), help="experiment config JSON")
    parser.add_argument("--seed", type=int, default=default(None), help="master seed")
    parser.add_argument("--out", default=default(None), help="output directory")
    parser.add_argument("--scale", choices=SCALES, default=default(None), help="apply a size preset")
    parser.add_argument("-v", "--verbose", action="count", default=default(0))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="legible", description="Observer-model learning experiments.")
    _common_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        _common_flags(sp, suppress=True)
        return sp

    add("gen", "generate the seven dataset splits")
    add("label", "label every split with all four metrics")
    for fw in FRAMEWORKS:
        sp = add(f"train-{fw}", f"train one {fw} model on the training split")
        sp.add_argument("--metric", default="dragan", choices=[str(m) for m in MetricKind])
        sp.add_argument("--repeat", type=int, default=0, help="repeat index (selects the seed)")
    sp = add("eval", "evaluate a model file on a labeled dataset")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="labeled JSONL file")
    sp.add_argument("--envs", default=None, help="environments file (default: next to the data)")
    sp.add_argument("--metric", default=None, choices=[str(m) for m in MetricKind])
    sp.add_argument("--report", default=None, help="report path (default: <out>/reports/eval.json)")
    sp = add("table", "accuracy matrix over repeated trainings")
    sp.add_argument("--frameworks", nargs="+", default=list(FRAMEWORKS), choices=FRAMEWORKS)
    sp.add_argument("--metrics", nargs="+", default=[str(m) for m in MetricKind], choices=[str(m) for m in MetricKind])
    sp = add("curve", "one-epoch sample-efficiency curves")
    sp.add_argument("--metric", default=None, choices=[str(m) for m in MetricKind])
    return p


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.scale:
        cfg = cfg.with_scale(args.scale)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        if args.command == "gen":
            out = {k: m.count for k, m in cmd_gen(cfg).items()}
        elif args.command == "label":
            out = cmd_label(cfg)
        elif args.command.startswith("train-"):
            out = cmd_train(cfg, args.command[len("train-"):], args.metric, args.repeat)
        elif args.command == "eval":
            report = args.report or Path(cfg.out_dir) / "reports" / "eval.json"
            out = cmd_eval(args.model, args.data, args.metric, report, args.envs)
        elif args.command == "table":
            out = cmd_table(cfg, args.frameworks, args.metrics)
            if out["failed"]:
                print(json.dumps(out, indent=2))
                return 1
        else:
            out = cmd_curve(cfg, args.metric)
            out = {k: v for k, v in out.items() if k != "runs"}
    except (CliError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(out, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
