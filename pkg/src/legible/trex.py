"""Preference-ranking baseline (adapted T-REX).

A reward network ``r(q - g)`` is summed over a trajectory's control points.
Training pairs two random trajectories, each with a random goal of its own
scene, and classifies which one the oracle rates higher.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .data import ObserverModel, TrajectoryData, pair_values
from .envgen import substream
from .oracles import MetricKind
from .slotv import Checkpoint, DivergedTraining, EvalReport, accuracy_report, predicted_argmax

logger = logging.getLogger(__name__)

PAPER_WIDTHS = (1792, 768)
# each pair consumes two trajectories
EXAMPLES_PER_PAIR = 2


class InsufficientData(ValueError):
    pass


@dataclass
class TrexTrainConfig:
    metric: str = "dragan"
    epochs: int = 25
    batch_size: int = 128
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    pairs_per_epoch: int | None = None  # None: one pass over the trajectories
    seed: int = 0

    def __post_init__(self):
        self.metric = str(MetricKind(self.metric))
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")

    def optimizer(self) -> nn.Adam:
        return nn.Adam(lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)


@dataclass(frozen=True)
class PreferencePair:
    first: int
    first_goal: int
    second: int
    second_goal: int
    label: int  # 1 when the second trajectory is preferred


def pair_arrays(pairs: list[PreferencePair]) -> tuple[np.ndarray, ...]:
    a = np.array([(p.first, p.first_goal, p.second, p.second_goal, p.label) for p in pairs], dtype=np.int64)
    a = a.reshape(-1, 5)
    return a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4]


def accumulated_reward(model: ObserverModel, traj, goal) -> float:
    traj = np.asarray(traj, dtype=np.float64)
    vals, _ = pair_values(model.params, traj[None], np.asarray(goal, dtype=np.float64)[None])
    return float(vals.astype(np.float64).sum())


def build_pairs(data: TrajectoryData, metric: str, n_pairs: int | None, rng: np.random.Generator) -> list[PreferencePair]:
    """Draw disjoint trajectory pairs labelled by the oracle.

    Trajectories are consumed two at a time from a shuffled order, so none
    is used twice. Pairs whose two scores tie exactly are dropped.
    """
    scores = data.scores(metric)
    counts = data.goal_counts
    order = rng.permutation(len(data))
    limit = len(order) // 2 if n_pairs is None else n_pairs
    pairs: list[PreferencePair] = []
    for s in range(0, len(order) - 1, 2):
        if len(pairs) >= limit:
            break
        a, b = int(order[s]), int(order[s + 1])
        ga, gb = int(rng.integers(counts[a])), int(rng.integers(counts[b]))
        sa, sb = scores[a, ga], scores[b, gb]
        if sa == sb:
            continue
        pairs.append(PreferencePair(a, ga, b, gb, int(sb > sa)))
    if not pairs:
        raise InsufficientData("no usable (non-tied) trajectory pairs")
    return pairs


def pair_likelihood_from_returns(r1, r2) -> np.ndarray:
    """Second softmax component of ``(r1, r2)``."""
    r1, r2 = np.asarray(r1, dtype=np.float64), np.asarray(r2, dtype=np.float64)
    m = np.maximum(r1, r2)
    e1, e2 = np.exp(r1 - m), np.exp(r2 - m)
    return e2 / (e1 + e2)


def pair_likelihood(model: ObserverModel, data: TrajectoryData, pair: PreferencePair) -> float:
    r1 = accumulated_reward(model, data.points[pair.first], data.goals[pair.first, pair.first_goal])
    r2 = accumulated_reward(model, data.points[pair.second], data.goals[pair.second, pair.second_goal])
    return float(pair_likelihood_from_returns(r1, r2))


def _pair_returns(params: nn.MLP, data: TrajectoryData, i1, g1, i2, g2):
    points = np.concatenate([data.points[i1], data.points[i2]])
    goals = np.concatenate([data.goals[i1, g1], data.goals[i2, g2]])
    vals, cache = pair_values(params, points, goals)
    ret = vals.astype(np.float64).sum(axis=1)
    n = len(i1)
    return ret[:n], ret[n:], cache


def batch_loss_and_grads(params: nn.MLP, data: TrajectoryData, i1, g1, i2, g2, labels) -> tuple[float, nn.Gradients]:
    """Mean binary cross-entropy over a batch of pairs and its gradient."""
    r1, r2, cache = _pair_returns(params, data, i1, g1, i2, g2)
    d = r2 - r1
    y = np.asarray(labels, dtype=np.float64)
    n_batch = len(d)
    loss = float(np.mean(np.logaddexp(0.0, d) - y * d))
    dd = (pair_likelihood_from_returns(r1, r2) - y) / n_batch
    n_points = data.n_points
    upstream = np.concatenate([np.repeat(-dd, n_points), np.repeat(dd, n_points)])
    return loss, nn.backward(params, cache, upstream)


def pair_accuracy(model: ObserverModel, data: TrajectoryData, pairs: list[PreferencePair]) -> float:
    i1, g1, i2, g2, labels = pair_arrays(pairs)
    correct = 0
    for s in range(0, len(i1), 256):
        sl = slice(s, s + 256)
        r1, r2, _ = _pair_returns(model.params, data, i1[sl], g1[sl], i2[sl], g2[sl])
        correct += int(np.sum((r2 > r1).astype(int) == labels[sl]))
    return correct / len(i1)


def _run_epoch(
    model: ObserverModel,
    data: TrajectoryData,
    pairs: list[PreferencePair],
    opt: nn.Adam,
    batch_size: int,
    on_update: Callable[[int], None] | None,
    updates: int,
) -> tuple[float, int]:
    i1, g1, i2, g2, labels = pair_arrays(pairs)
    total = 0.0
    for s in range(0, len(i1), batch_size):
        sl = slice(s, s + batch_size)
        loss, grads = batch_loss_and_grads(model.params, data, i1[sl], g1[sl], i2[sl], g2[sl], labels[sl])
        if not np.isfinite(loss):
            raise DivergedTraining(f"non-finite T-REX loss after {updates} updates")
        opt.step(model.params, grads)
        total += loss * len(labels[sl])
        updates += 1
        if on_update is not None:
            on_update(updates)
    return total / len(i1), updates


def train_trex(
    model: ObserverModel,
    data: TrajectoryData,
    config: TrexTrainConfig,
    on_update: Callable[[int], None] | None = None,
) -> list[float]:
    """Fit the reward network in place; returns mean pair loss per epoch.

    Pairs are redrawn every epoch from a fresh seed stream.
    """
    opt = config.optimizer()
    model.framework = "trex"
    model.metric = config.metric
    model.train_seed = config.seed
    history: list[float] = []
    updates = 0
    for epoch in range(config.epochs):
        pairs = build_pairs(data, config.metric, config.pairs_per_epoch, substream(config.seed, epoch))
        loss, updates = _run_epoch(model, data, pairs, opt, config.batch_size, on_update, updates)
        history.append(loss)
        logger.debug("trex epoch %d loss %.5f", epoch, loss)
    return history


def evaluate_trex(model: ObserverModel, data: TrajectoryData, metric: str) -> EvalReport:
    """Argmax agreement between per-goal accumulated rewards and the oracle."""
    data.scores(metric)
    return accuracy_report(predicted_argmax(model, data, "sum"), data, metric, "trex")


def learning_curve(
    model: ObserverModel,
    train_data: TrajectoryData,
    val_data: TrajectoryData,
    config: TrexTrainConfig,
    eval_every: int = 10,
) -> list[Checkpoint]:
    """One epoch of pair training with validation checks every ``eval_every`` updates.

    ``examples_seen`` counts two trajectories per pair.
    """
    val_data.scores(config.metric)
    opt = config.optimizer()
    model.framework = "trex"
    model.metric = config.metric
    model.train_seed = config.seed
    curve: list[Checkpoint] = []

    def checkpoint(updates: int) -> None:
        if updates % eval_every == 0:
            acc = evaluate_trex(model, val_data, config.metric).accuracy
            n = min(updates * config.batch_size, len(pairs))
            curve.append(Checkpoint(updates, n * EXAMPLES_PER_PAIR, acc))

    pairs = build_pairs(train_data, config.metric, config.pairs_per_epoch, substream(config.seed, 0))
    _run_epoch(model, train_data, pairs, opt, config.batch_size, checkpoint, 0)
    return curve
