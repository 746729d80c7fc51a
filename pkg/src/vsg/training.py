"""Supervised training loop and evaluation for variability prediction.

The loss is a masked, class-weighted focal loss applied independently to the
three binary outputs per node:

    loss_element = -w_c * (1 - p_t)^gamma * log(p_t)

where p_t is the probability the model assigns to the true class (p for a
positive label, 1-p for a negative one) and w_c is the weight of that class.
Masked elements contribute nothing, and the loss is the mean over unmasked
elements. gamma = 0 with unit weights recovers plain binary cross-entropy.

A batch is a set of whole graphs; samples are drawn with replacement under
importance weights so rare positives are seen often. The returned model is
the best-validation-loss snapshot, and the whole run is deterministic per
(config, seed).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import (
    DatasetBundle,
    LabelConfig,
    Sample,
    VARIABILITY_NAMES,
    importance_sample,
    label_matrices,
    label_statistics,
)
from .embedding import EdgeConfig, EmbeddedGraph, embed, encode_nodes, fit_pca, resolve_tau
from .errors import ConfigError, EvaluationError, TrainingError
from .model import ModelConfig, build_model
from .nn_core import Adam

logger = logging.getLogger(__name__)

_CLAMP_LO = 1e-7
_CLAMP_HI = 1.0 - 1e-7


@dataclass(frozen=True)
class LossConfig:
    """gamma is the focusing exponent; class_weights is (3, 2): per
    variability type, weight of the positive then the negative class."""

    gamma: float = 0.5
    class_weights: tuple[tuple[float, float], ...] = ((1.0, 1.0),) * 3

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma!r}")
        w = np.asarray(self.class_weights, dtype=np.float64)
        if w.shape != (3, 2) or not (w > 0).all():
            raise ConfigError("class_weights must be a (3, 2) table of positive weights")
        object.__setattr__(
            self, "class_weights", tuple(tuple(float(x) for x in row) for row in w)
        )


def class_weights_from_samples(samples: list[Sample], cap: float = 20.0) -> tuple:
    """Inverse positive-frequency weights per variability type, capped."""
    stats = label_statistics(samples)
    rows = []
    for rate in stats.positive_rates:
        pos = min(cap, 1.0 / rate) if rate > 0 else 1.0
        rows.append((float(pos), 1.0))
    return tuple(rows)


def focal_loss(
    probs: np.ndarray, labels: np.ndarray, masks: np.ndarray, cfg: LossConfig = LossConfig()
) -> tuple[float, np.ndarray]:
    """Masked focal loss and its exact gradient w.r.t. the probabilities.

    All inputs are (N, 3). Returns (mean loss over unmasked elements,
    dLoss/dprobs with zeros at masked entries). All-masked input is defined
    as loss 0 with zero gradient.
    """
    if probs.shape != labels.shape or probs.shape != masks.shape:
        raise ConfigError(
            f"shape mismatch: probs {probs.shape}, labels {labels.shape}, masks {masks.shape}"
        )
    count = masks.sum()
    if count == 0:
        return 0.0, np.zeros_like(probs)
    cw = np.asarray(cfg.class_weights, dtype=np.float64)
    positive = labels > 0.5
    w = np.where(positive, cw[None, :, 0], cw[None, :, 1])
    clamped = np.clip(probs, _CLAMP_LO, _CLAMP_HI)
    p_t = np.where(positive, clamped, 1.0 - clamped)
    one_minus = 1.0 - p_t
    log_pt = np.log(p_t)
    loss_elements = -w * one_minus**cfg.gamma * log_pt
    loss = float((loss_elements * masks).sum() / count)
    # d/dp_t of -w (1-p_t)^g log p_t; the g=0 focusing term vanishes exactly.
    if cfg.gamma == 0.0:
        dpt = -w / p_t
    else:
        dpt = w * cfg.gamma * one_minus ** (cfg.gamma - 1.0) * log_pt - w * one_minus**cfg.gamma / p_t
    sign = np.where(positive, 1.0, -1.0)
    inside = (probs > _CLAMP_LO) & (probs < _CLAMP_HI)
    dprobs = dpt * sign * masks * inside / count
    return loss, dprobs


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-3
    dropout_rate: float = 0.2
    seed: int = 0
    patience: int | None = 20  # epochs without val pooled-F1 improvement; None disables
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs, batch_size and learning_rate must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate!r}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 or None")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ConfigError("split fractions must be non-negative and sum to 1")


@dataclass
class TrainingReport:
    """Per-epoch trace of one run; serializes deterministically."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_pooled_f1: list[float] = field(default_factory=list)
    best_epoch: int = -1
    epochs_run: int = 0
    stopped_early: bool = False
    diverged: bool = False
    all_masked_steps: int = 0
    tau: float = 0.0
    class_weights: tuple = ()
    num_train_samples: int = 0
    num_val_samples: int = 0

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_pooled_f1": self.val_pooled_f1,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "diverged": self.diverged,
            "all_masked_steps": self.all_masked_steps,
            "tau": self.tau,
            "class_weights": [list(r) for r in self.class_weights],
            "num_train_samples": self.num_train_samples,
            "num_val_samples": self.num_val_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict()) + "\n"


@dataclass(frozen=True)
class _Prepared:
    sample: Sample
    graph: EmbeddedGraph
    labels: np.ndarray
    masks: np.ndarray


def _prepare(samples: list[Sample], tax, pca, edge_cfg) -> list[_Prepared]:
    cache: dict[tuple[str, str], EmbeddedGraph] = {}
    out = []
    for s in samples:
        key = (s.environment_id, s.input.scan_id)
        if key not in cache:
            cache[key] = embed(s.input, tax, pca, edge_cfg)
        y, m = label_matrices(s)
        out.append(_Prepared(s, cache[key], y, m))
    return out


def _snapshot(model) -> dict[str, np.ndarray]:
    return {n: model.store[n].value.copy() for n in model.store.names()}


def _restore(model, snap: dict[str, np.ndarray]) -> None:
    for n, v in snap.items():
        model.store[n].value[...] = v


def _dataset_loss(model, prepared: list[_Prepared], loss_cfg: LossConfig) -> float:
    total = 0.0
    for p in prepared:
        probs, _ = model.forward(p.graph, mode="eval")
        loss, _ = focal_loss(probs, p.labels, p.masks, loss_cfg)
        total += loss
    return total / len(prepared) if prepared else 0.0


def train(
    bundle: DatasetBundle,
    model_cfg: ModelConfig = ModelConfig(),
    train_cfg: TrainConfig = TrainConfig(),
    loss_cfg: LossConfig | None = None,
    label_cfg: LabelConfig = LabelConfig(),
):
    """Fit a model on the bundle's train split; returns (model, report).

    PCA and the tau distance threshold are fit on the train split only. The
    validation split drives checkpoint selection (lowest loss) and early
    stopping (pooled F1 patience); when the bundle has no validation
    environments the train samples stand in, with a warning.
    """
    tax = bundle.taxonomy
    train_samples = bundle.samples("train", label_cfg)
    if not train_samples:
        raise TrainingError("train split has no samples")
    val_samples = bundle.samples("val", label_cfg)
    if not val_samples:
        logger.warning("no validation environments; validating on the train split")
        val_samples = train_samples

    train_graphs = [
        bundle.environments[e][i]
        for e in bundle.environment_ids("train")
        for i in range(len(bundle.environments[e]))
    ]
    vectors = np.vstack([encode_nodes(g, tax) for g in train_graphs if g.num_nodes])
    d_v = min(model_cfg.d_v, vectors.shape[1])
    pca = fit_pca(vectors, d_v)
    tau = resolve_tau(model_cfg.tau, train_graphs)
    edge_cfg = EdgeConfig(tau=tau, include_semantic_edges=model_cfg.include_semantic_edges)

    if loss_cfg is None:
        loss_cfg = LossConfig(class_weights=class_weights_from_samples(train_samples))
    model = build_model(
        model_cfg, tax.name, tax.num_relationships, pca, edge_cfg,
        dropout_rate=train_cfg.dropout_rate, seed=train_cfg.seed,
    )
    optimizer = Adam(model.store, lr=train_cfg.learning_rate)

    prepared_train = _prepare(train_samples, tax, pca, edge_cfg)
    prepared_val = _prepare(val_samples, tax, pca, edge_cfg)
    weights = importance_sample(train_samples)

    draw_rng = np.random.default_rng([train_cfg.seed, 1])
    dropout_rng = np.random.default_rng([train_cfg.seed, 2])

    report = TrainingReport(
        tau=tau,
        class_weights=loss_cfg.class_weights,
        num_train_samples=len(train_samples),
        num_val_samples=len(val_samples),
    )
    best_val = math.inf
    best_snap = _snapshot(model)
    best_f1 = -1.0
    stale = 0
    steps_per_epoch = max(1, math.ceil(len(prepared_train) / train_cfg.batch_size))

    for epoch in range(train_cfg.epochs):
        epoch_loss = 0.0
        for _ in range(steps_per_epoch):
            idx = draw_rng.choice(len(prepared_train), size=train_cfg.batch_size, p=weights)
            model.store.zero_grads()
            batch_loss = 0.0
            batch_unmasked = 0
            for k in idx:
                p = prepared_train[int(k)]
                probs, cache = model.forward(p.graph, mode="train", rng=dropout_rng)
                loss, dprobs = focal_loss(probs, p.labels, p.masks, loss_cfg)
                batch_loss += loss / train_cfg.batch_size
                batch_unmasked += int(p.masks.sum())
                model.backward(cache, dprobs / train_cfg.batch_size)
            if batch_unmasked == 0:
                report.all_masked_steps += 1
            if not math.isfinite(batch_loss):
                logger.warning("non-finite loss at epoch %d; restoring best checkpoint", epoch)
                report.diverged = True
                report.epochs_run = epoch
                _restore(model, best_snap)
                return model, report
            model.store.require_finite_grads()
            optimizer.step()
            epoch_loss += batch_loss / steps_per_epoch
        report.train_loss.append(epoch_loss)

        val_loss = _dataset_loss(model, prepared_val, loss_cfg)
        val_eval = _evaluate_prepared(model, prepared_val)
        f1 = val_eval.metrics["pooled"].f1
        report.val_loss.append(val_loss)
        report.val_pooled_f1.append(f1)
        if val_loss < best_val:
            best_val = val_loss
            best_snap = _snapshot(model)
            report.best_epoch = epoch
        if f1 > best_f1:
            best_f1 = f1
            stale = 0
        else:
            stale += 1
        report.epochs_run = epoch + 1
        if train_cfg.patience is not None and stale >= train_cfg.patience:
            report.stopped_early = True
            break

    _restore(model, best_snap)
    return model, report


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    support: int  # positive ground-truth elements among the unmasked


@dataclass(frozen=True)
class EvalReport:
    metrics: dict[str, Metrics]  # position, state, instance, pooled
    threshold: float


def _metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(accuracy, precision, recall, f1, tp + fn)


def evaluate_probabilities(
    prob_list: list[np.ndarray],
    label_list: list[np.ndarray],
    mask_list: list[np.ndarray],
    threshold: float = 0.5,
) -> EvalReport:
    """Metrics at a fixed threshold; masked elements are excluded everywhere."""
    if not prob_list:
        raise EvaluationError("nothing to evaluate: empty sample set")
    counts = np.zeros((3, 4), dtype=np.int64)  # per type: tp, fp, fn, tn
    for probs, labels, masks in zip(prob_list, label_list, mask_list):
        pred = probs >= threshold
        pos = labels > 0.5
        m = masks > 0
        for t in range(3):
            sel = m[:, t]
            p, y = pred[sel, t], pos[sel, t]
            counts[t] += (
                int((p & y).sum()),
                int((p & ~y).sum()),
                int((~p & y).sum()),
                int((~p & ~y).sum()),
            )
    metrics = {
        name: _metrics_from_counts(*counts[t]) for t, name in enumerate(VARIABILITY_NAMES)
    }
    metrics["pooled"] = _metrics_from_counts(*counts.sum(axis=0))
    return EvalReport(metrics=metrics, threshold=threshold)


def _evaluate_prepared(model, prepared: list[_Prepared], threshold: float = 0.5) -> EvalReport:
    probs = [model.forward(p.graph, mode="eval")[0] for p in prepared]
    return evaluate_probabilities(
        probs, [p.labels for p in prepared], [p.masks for p in prepared], threshold
    )


def evaluate(model, samples: list[Sample], tax, threshold: float = 0.5) -> EvalReport:
    """Run the model over labeled samples and report per-variability metrics."""
    if not samples:
        raise EvaluationError("nothing to evaluate: empty sample set")
    prepared = _prepare(samples, tax, model.pca, model.edge_config)
    return _evaluate_prepared(model, prepared, threshold)


def threshold_sweep(
    model, samples: list[Sample], tax, thresholds: list[float] | None = None
) -> list[dict]:
    """Precision/recall per variability type across decision thresholds."""
    if thresholds is None:
        thresholds = [round(0.05 * k, 2) for k in range(1, 20)]
    prepared = _prepare(samples, tax, model.pca, model.edge_config)
    rows = []
    for th in thresholds:
        rep = _evaluate_prepared(model, prepared, th)
        for name in VARIABILITY_NAMES:
            m = rep.metrics[name]
            rows.append(
                {
                    "threshold": th,
                    "variability": name,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                }
            )
    return rows


def write_eval_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["variability", "accuracy", "precision", "recall", "f1", "support"])
        for name in (*VARIABILITY_NAMES, "pooled"):
            m = report.metrics[name]
            writer.writerow([name, m.accuracy, m.precision, m.recall, m.f1, m.support])


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["threshold", "variability", "precision", "recall", "f1"])
        writer.writeheader()
        writer.writerows(rows)
