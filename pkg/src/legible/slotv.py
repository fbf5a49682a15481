"""Supervised observer-model learning (SLOT-V).

A trajectory's score for goal ``g`` is the mean of ``V(q_k - g)`` over its
control points. Scores of all goals in the scene go through a masked
softmax and are fit to the oracle's target distribution with
cross-entropy.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .data import ObserverModel, PaddedGoalSet, TrajectoryData, pair_values, real_slot_scores
from .envgen import G_MAX, substream
from .oracles import MetricKind, batch_scores_to_distribution, dataset_score_scale

logger = logging.getLogger(__name__)

PAPER_WIDTHS = (1536, 768)
DESK_WIDTHS = (256, 128)


class DivergedTraining(RuntimeError):
    pass


@dataclass
class SlotVTrainConfig:
    metric: str = "dragan"
    epochs: int = 15
    batch_size: int = 32
    lr: float = 0.005
    rho: float = 0.9
    momentum: float = 0.0
    eps: float = 1e-7
    # "dataset": one spread for the whole training set; "example": per-example z-score
    target_scale: str = "dataset"
    seed: int = 0

    def __post_init__(self):
        self.metric = str(MetricKind(self.metric))
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ValueError("epochs and batch_size must be positive")
        if self.target_scale not in ("dataset", "example"):
            raise ValueError(f"unknown target_scale {self.target_scale!r}")

    def optimizer(self) -> nn.RMSprop:
        return nn.RMSprop(lr=self.lr, rho=self.rho, momentum=self.momentum, eps=self.eps)


@dataclass
class EvalReport:
    dataset: str
    metric: str
    accuracy: float
    n: int
    framework: str = "slotv"
    per_goal_count: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> str:
        return f"{self.dataset},{self.metric},{self.accuracy!r},{self.n}"


CSV_HEADER = "dataset,metric,accuracy,n"


@dataclass
class Checkpoint:
    updates: int
    examples_seen: int
    val_accuracy: float


def new_model(
    widths=PAPER_WIDTHS,
    seed: int = 0,
    *,
    precision: str = "float32",
    framework: str = "slotv",
    g_max: int = G_MAX,
    n_points: int = 100,
    metric: str | None = None,
) -> ObserverModel:
    params = nn.init_mlp(widths, np.random.default_rng(seed), precision)
    return ObserverModel(params, framework, n_points, g_max, metric, seed)


def score_goals(model: ObserverModel, traj, padded: PaddedGoalSet) -> tuple[np.ndarray, np.ndarray]:
    """Mean value along ``traj`` for every goal slot, dummies included.

    Returns ``(logits, mask)``; dummy logits are meaningless and must be
    masked before use.
    """
    traj = np.asarray(traj, dtype=np.float64)
    vals, _ = pair_values(model.params, np.broadcast_to(traj, (len(padded.mask), *traj.shape)), padded.positions)
    return vals.astype(np.float64).sum(axis=1) / traj.shape[0], padded.mask.copy()


def masked_softmax(logits, mask) -> np.ndarray:
    """Softmax over unmasked entries along the last axis; masked entries are exactly 0."""
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    z = np.where(mask, logits, -np.inf)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def masked_log_softmax(logits, mask) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def predict_distribution(model: ObserverModel, traj, padded: PaddedGoalSet) -> np.ndarray:
    logits, mask = score_goals(model, traj, padded)
    return masked_softmax(logits, mask)


def batch_loss_and_grads(
    params: nn.MLP, points: np.ndarray, goals: np.ndarray, mask: np.ndarray, targets: np.ndarray
) -> tuple[float, nn.Gradients]:
    """Mean cross-entropy of a batch and its parameter gradient.

    Dummy slots are never pushed through the network: their probability is
    exactly 0 after masking, so they contribute nothing to loss or gradient.
    """
    n_batch, n_points = mask.shape[0], points.shape[1]
    b, j = np.nonzero(mask)
    vals, cache = pair_values(params, points[b], goals[b, j])
    logits = np.zeros(mask.shape)
    logits[b, j] = vals.astype(np.float64).sum(axis=1) / n_points
    logp = np.where(mask, masked_log_softmax(logits, mask), 0.0)
    loss = -float(np.sum(targets * logp)) / n_batch
    dlogits = (np.where(mask, np.exp(logp), 0.0) - targets) / n_batch
    upstream = np.repeat(dlogits[b, j] / n_points, n_points)
    return loss, nn.backward(params, cache, upstream)


def target_distributions(data: TrajectoryData, config: SlotVTrainConfig) -> np.ndarray:
    """Oracle scores turned into per-example target distributions."""
    scores = data.scores(config.metric)
    scale = dataset_score_scale(scores, data.mask) if config.target_scale == "dataset" else None
    return batch_scores_to_distribution(scores, data.mask, scale)


def _run_epoch(
    model: ObserverModel,
    data: TrajectoryData,
    targets: np.ndarray,
    opt: nn.RMSprop,
    order: np.ndarray,
    batch_size: int,
    on_update: Callable[[int], None] | None = None,
    updates: int = 0,
) -> tuple[float, int]:
    losses = []
    for s in range(0, len(order), batch_size):
        idx = order[s : s + batch_size]
        loss, grads = batch_loss_and_grads(model.params, data.points[idx], data.goals[idx], data.mask[idx], targets[idx])
        if not np.isfinite(loss):
            raise DivergedTraining(f"non-finite loss after {updates} updates")
        opt.step(model.params, grads)
        losses.append(loss * len(idx))
        updates += 1
        if on_update is not None:
            on_update(updates)
    return float(np.sum(losses) / max(len(order), 1)), updates


def train(
    model: ObserverModel,
    data: TrajectoryData,
    config: SlotVTrainConfig,
    on_update: Callable[[int], None] | None = None,
) -> list[float]:
    """Fit ``model`` in place; returns the mean training loss of every epoch."""
    targets = target_distributions(data, config)
    opt = config.optimizer()
    model.metric = config.metric
    model.train_seed = config.seed
    history: list[float] = []
    updates = 0
    for epoch in range(config.epochs):
        order = substream(config.seed, epoch).permutation(len(data))
        loss, updates = _run_epoch(model, data, targets, opt, order, config.batch_size, on_update, updates)
        history.append(loss)
        logger.debug("slotv epoch %d loss %.5f", epoch, loss)
    return history


def predicted_argmax(model: ObserverModel, data: TrajectoryData, reduce: str = "mean") -> np.ndarray:
    idx = np.arange(len(data))
    scores = real_slot_scores(model.params, data, idx, reduce)
    return np.argmax(np.where(data.mask, scores, -np.inf), axis=1)


def accuracy_report(
    predicted: np.ndarray, data: TrajectoryData, metric: str, framework: str
) -> EvalReport:
    metric = str(MetricKind(metric))
    truth = data.oracle_argmax(metric)
    correct = predicted == truth
    counts = data.goal_counts
    per_count = {str(int(c)): float(correct[counts == c].mean()) for c in np.unique(counts)}
    return EvalReport(
        dataset=data.name,
        metric=metric,
        accuracy=float(correct.mean()) if len(correct) else 0.0,
        n=len(correct),
        framework=framework,
        per_goal_count=per_count,
    )


def evaluate(model: ObserverModel, data: TrajectoryData, metric: str) -> EvalReport:
    """Argmax agreement between the model's goal distribution and the oracle."""
    data.scores(metric)
    return accuracy_report(predicted_argmax(model, data, "mean"), data, metric, "slotv")


def learning_curve(
    model: ObserverModel,
    train_data: TrajectoryData,
    val_data: TrajectoryData,
    config: SlotVTrainConfig,
    eval_every: int = 10,
) -> list[Checkpoint]:
    """Train one epoch, checking validation accuracy every ``eval_every`` updates."""
    targets = target_distributions(train_data, config)
    val_data.scores(config.metric)
    opt = config.optimizer()
    model.metric = config.metric
    model.train_seed = config.seed
    curve: list[Checkpoint] = []

    def checkpoint(updates: int) -> None:
        if updates % eval_every == 0:
            acc = evaluate(model, val_data, config.metric).accuracy
            # only the last batch can be short
            curve.append(Checkpoint(updates, min(updates * config.batch_size, len(train_data)), acc))

    order = substream(config.seed, 0).permutation(len(train_data))
    _run_epoch(model, train_data, targets, opt, order, config.batch_size, checkpoint)
    return curve
