"""Training loops for regression-only, diagnosis-only, and multitask models.

Determinism contract: one seed fixes weight initialization, batch
shuffling, and dropout draws. Each randomness source has its own
seed-derived substream, so the multitask trainer at alpha=1 walks the same
backbone and diagnosis-head parameter trajectory as the diagnosis-only
trainer (and alpha=0 matches the regression-only trainer) bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .losses import focal_grad_logits, focal_loss_batch, smooth_l1, smooth_l1_grad
from .network import (
    DIAGNOSIS_HEAD,
    REGRESSION_HEAD,
    STREAM_DIAG_DROPOUT,
    STREAM_GRADCHECK,
    STREAM_REG_DROPOUT,
    STREAM_SHUFFLE,
    Network,
    NetworkConfig,
)

MODEL_KIND_ALIASES = {
    "regression": "regression",
    "diagnosis": "diagnosis",
    "multitask": "multitask",
    "m1": "regression",
    "m2": "diagnosis",
    "mt": "multitask",
}
MODEL_SELECTIONS = ("auto", "min-val-mae", "max-val-balanced-accuracy")
CLASS_NAMES = ("benign", "malignant")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""


def canonical_model_kind(name: str) -> str:
    try:
        return MODEL_KIND_ALIASES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown model kind {name!r}") from None


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.9
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10
    seed: int = 0
    model_selection: str = "auto"
    frozen_regression_head: bool = False
    focal_gamma: float = 2.0
    smooth_l1_beta: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epochs <= 0 or self.batch_size <= 0 or self.lr_decay_every <= 0:
            raise ValueError("epochs, batch_size, and lr_decay_every must be positive")
        if self.learning_rate < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("rates must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.model_selection not in MODEL_SELECTIONS:
            raise ValueError(f"unknown model selection {self.model_selection!r}")


@dataclass(frozen=True)
class FoldData:
    """One fold of images with diagnosis labels and optional IAA targets."""

    images: np.ndarray  # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int class indices
    iaa: np.ndarray | None  # (N,) float64 targets, None when unavailable
    image_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.images.ndim != 4:
            raise ValueError("images must be (N, C, H, W)")
        n = self.images.shape[0]
        if self.labels.shape != (n,):
            raise ValueError("labels must match image count")
        if self.iaa is not None and self.iaa.shape != (n,):
            raise ValueError("iaa targets must match image count")

    @property
    def n(self) -> int:
        return self.images.shape[0]


@dataclass(frozen=True)
class EvalReport:
    n: int
    mae: float | None = None
    mse: float | None = None
    balanced_accuracy: float | None = None
    auroc: float | None = None
    per_class: dict | None = None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_mae: float | None
    val_balanced_accuracy: float | None
    lr: float


@dataclass
class TrainResult:
    network: Network
    model_kind: str
    config: TrainConfig
    best_epoch: int
    epoch_logs: list[EpochLog]
    trajectory: list[dict[str, str]]  # per-epoch component parameter digests
    rng_state: dict | None = None  # end-of-run generator states, JSON-able


def _loss_scales(kind: str, alpha: float) -> tuple[float, float]:
    """(diagnosis scale, regression scale) for the combined objective."""
    if kind == "regression":
        return 0.0, 1.0
    if kind == "diagnosis":
        return 1.0, 0.0
    return alpha, 1.0 - alpha


def midranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks (ties get the mean rank), 1-based."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    _, starts, counts = np.unique(sorted_vals, return_index=True, return_counts=True)
    rank_of_sorted = np.empty(values.size)
    for s, c in zip(starts, counts):
        rank_of_sorted[s : s + c] = s + (c - 1) / 2.0 + 1.0
    ranks = np.empty(values.size)
    ranks[order] = rank_of_sorted
    return ranks


def auroc_from_scores(scores: np.ndarray, positive: np.ndarray) -> float:
    """Rank-based AUROC: the probability a positive outranks a negative."""
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both classes present")
    r_pos = float(midranks(scores)[positive].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def train_step(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray | None,
    iaa: np.ndarray | None,
    scales: tuple[float, float],
    config: TrainConfig,
    velocities: dict[str, np.ndarray],
    lr: float,
    dropout_rngs: dict[str, np.random.Generator],
) -> float:
    """One forward/backward/update step; returns the batch loss.

    A zero-scaled task contributes nothing to any gradient: its backward
    pass is skipped outright instead of being multiplied by zero.
    """
    scale_d, scale_r = scales
    b = images.shape[0]
    net.zero_grads()
    pred = net.forward(images, train=True, dropout_rngs=dropout_rngs)
    loss = 0.0
    d_logits = None
    d_z_hat = None
    if scale_d > 0.0:
        if labels is None or pred.logits is None:
            raise ValueError("diagnosis loss requires labels and a diagnosis head")
        loss += scale_d * float(
            np.mean(focal_loss_batch(labels, pred.probs, config.focal_gamma))
        )
        d_logits = (scale_d / b) * focal_grad_logits(
            labels, pred.logits, pred.probs, config.focal_gamma
        )
    if scale_r > 0.0:
        if iaa is None or pred.z_hat is None:
            raise ValueError("regression loss requires IAA targets and a regression head")
        loss += scale_r * float(np.mean(smooth_l1(iaa, pred.z_hat, config.smooth_l1_beta)))
        d_z_hat = (scale_r / b) * smooth_l1_grad(iaa, pred.z_hat, config.smooth_l1_beta)
    if not math.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss!r}")
    net.backward(d_z_hat, d_logits)
    frozen = (REGRESSION_HEAD,) if config.frozen_regression_head else ()
    sgd_step(net, velocities, lr, config.momentum, config.weight_decay, frozen)
    return loss


def sgd_step(
    net: Network,
    velocities: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
    frozen_components: Sequence[str] = (),
) -> None:
    """SGD with momentum and decoupled L2 weight decay.

    The decay term lr * wd * p is subtracted alongside the momentum update
    rather than folded into the gradient. Frozen components are skipped
    entirely (no velocity accumulation, no decay).
    """
    grads = net.gradients()
    for path, p in net.parameters().items():
        if any(path.startswith(c + ".") for c in frozen_components):
            continue
        v = velocities[path]
        v *= momentum
        v += grads[path]
        p -= lr * (v + weight_decay * p)


def train(
    model_kind: str,
    folds: Mapping[str, FoldData],
    config: TrainConfig,
    net_config: NetworkConfig | None = None,
) -> TrainResult:
    """Train a model of the given kind and select the best epoch checkpoint.

    Selection follows ``config.model_selection``; 'auto' picks lowest
    validation MAE for regression models and highest validation balanced
    accuracy otherwise. The returned network carries the selected epoch's
    parameters; ``trajectory`` records per-epoch parameter digests of every
    component.
    """
    kind = canonical_model_kind(model_kind)
    train_fold = folds.get("train")
    valid_fold = folds.get("valid")
    if train_fold is None or valid_fold is None or train_fold.n == 0 or valid_fold.n == 0:
        raise ValueError("training requires non-empty 'train' and 'valid' folds")
    needs_iaa = kind in ("regression", "multitask") and not (
        kind == "multitask" and config.alpha == 1.0
    )
    if needs_iaa and (train_fold.iaa is None or valid_fold.iaa is None):
        raise ValueError(f"model kind {kind!r} requires IAA targets in train and valid folds")
    if net_config is None:
        net_config = NetworkConfig(
            input_side=train_fold.images.shape[2],
            in_channels=train_fold.images.shape[1],
            n_classes=int(train_fold.labels.max()) + 1 if kind != "regression" else 2,
        )
    net_config = replace(
        net_config,
        with_regression=kind in ("regression", "multitask"),
        with_diagnosis=kind in ("diagnosis", "multitask"),
    )
    selection = config.model_selection
    if selection == "auto":
        selection = "min-val-mae" if kind == "regression" else "max-val-balanced-accuracy"

    net = Network.build(net_config, config.seed)
    scales = _loss_scales(kind, config.alpha)
    shuffle_rng = np.random.default_rng((config.seed, STREAM_SHUFFLE))
    dropout_rngs = {
        REGRESSION_HEAD: np.random.default_rng((config.seed, STREAM_REG_DROPOUT)),
        DIAGNOSIS_HEAD: np.random.default_rng((config.seed, STREAM_DIAG_DROPOUT)),
    }
    velocities = {path: np.zeros_like(p) for path, p in net.parameters().items()}

    logs: list[EpochLog] = []
    trajectory: list[dict[str, str]] = []
    best_metric = None
    best_epoch = -1
    best_params = net.snapshot()
    for epoch in range(config.epochs):
        lr = config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every)
        perm = shuffle_rng.permutation(train_fold.n)
        epoch_loss = 0.0
        for start in range(0, train_fold.n, config.batch_size):
            batch = perm[start : start + config.batch_size]
            loss = train_step(
                net,
                train_fold.images[batch],
                train_fold.labels[batch] if scales[0] > 0 else None,
                train_fold.iaa[batch] if scales[1] > 0 and train_fold.iaa is not None else None,
                scales,
                config,
                velocities,
                lr,
                dropout_rngs,
            )
            epoch_loss += loss * batch.size
        report = evaluate(net, valid_fold)
        # Metrics of an inactive task (zero loss scale) are masked from the
        # log: they describe an untrained head, and masking keeps the alpha
        # degeneracies exact at the log level too.
        logs.append(
            EpochLog(
                epoch=epoch,
                train_loss=epoch_loss / train_fold.n,
                val_mae=report.mae if scales[1] > 0 else None,
                val_balanced_accuracy=report.balanced_accuracy if scales[0] > 0 else None,
                lr=lr,
            )
        )
        trajectory.append(net.digests())
        if selection == "min-val-mae":
            metric = report.mae
            better = best_metric is None or (metric is not None and metric < best_metric)
        else:
            metric = report.balanced_accuracy
            better = best_metric is None or (metric is not None and metric > best_metric)
        if better:
            best_metric = metric
            best_epoch = epoch
            best_params = net.snapshot()
    net.restore(best_params)
    return TrainResult(
        network=net,
        model_kind=kind,
        config=config,
        best_epoch=best_epoch,
        epoch_logs=logs,
        trajectory=trajectory,
        rng_state={
            "shuffle": shuffle_rng.bit_generator.state,
            "dropout": {k: g.bit_generator.state for k, g in dropout_rngs.items()},
        },
    )


def evaluate(net: Network, fold: FoldData, batch_size: int = 256,
             class_names: Sequence[str] = CLASS_NAMES) -> EvalReport:
    """Eval-mode metrics on one fold.

    MAE/MSE require the regression head plus IAA targets; balanced accuracy
    and AUROC require the diagnosis head. Balanced accuracy averages the
    recalls of the classes present in the fold, with a note when a class is
    absent; AUROC is reported for two-class problems only.
    """
    if fold.n == 0:
        raise ValueError("cannot evaluate an empty fold")
    z_hats = []
    probs = []
    for start in range(0, fold.n, batch_size):
        pred = net.forward(fold.images[start : start + batch_size], train=False)
        if pred.z_hat is not None:
            z_hats.append(pred.z_hat)
        if pred.probs is not None:
            probs.append(pred.probs)
    notes: list[str] = []
    mae = mse = None
    per_class: dict | None = None
    if z_hats and fold.iaa is not None:
        z_hat = np.concatenate(z_hats)
        err = z_hat - fold.iaa
        mae = float(np.mean(np.abs(err)))
        mse = float(np.mean(err**2))
        per_class = {}
        for cls in np.unique(fold.labels):
            name = class_names[cls] if cls < len(class_names) else str(cls)
            sel = fold.labels == cls
            per_class[name] = {
                "mae": float(np.mean(np.abs(err[sel]))),
                "mse": float(np.mean(err[sel] ** 2)),
            }
    balanced_accuracy = auroc = None
    if probs:
        prob = np.vstack(probs)
        predicted = prob.argmax(axis=1)
        recalls = []
        for cls in range(prob.shape[1]):
            sel = fold.labels == cls
            if not sel.any():
                notes.append(f"class {cls} absent from fold; recall undefined")
                continue
            recalls.append(float(np.mean(predicted[sel] == cls)))
        balanced_accuracy = float(np.mean(recalls)) if recalls else None
        if prob.shape[1] == 2:
            positive = fold.labels == 1
            if positive.any() and (~positive).any():
                auroc = auroc_from_scores(prob[:, 1], positive)
            else:
                notes.append("AUROC undefined: one class absent")
    return EvalReport(
        n=fold.n,
        mae=mae,
        mse=mse,
        balanced_accuracy=balanced_accuracy,
        auroc=auroc,
        per_class=per_class,
        notes=tuple(notes),
    )


def gradient_check(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray | None,
    iaa: np.ndarray | None,
    alpha: float,
    config: TrainConfig | None = None,
    epsilon: float = 1e-5,
    max_params: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in eval mode (dropout inactive, running batch-norm statistics), so
    the loss surface the finite differences probe is exactly the one the
    analytic backward pass differentiates. Checks a random subset of at
    most ``max_params`` parameters.
    """
    config = config or TrainConfig()
    kind = "multitask" if (labels is not None and iaa is not None) else (
        "diagnosis" if labels is not None else "regression"
    )
    scales = _loss_scales(kind, alpha)

    def loss_value() -> float:
        pred = net.forward(images, train=False)
        total = 0.0
        if scales[0] > 0.0:
            total += scales[0] * float(
                np.mean(focal_loss_batch(labels, pred.probs, config.focal_gamma))
            )
        if scales[1] > 0.0:
            total += scales[1] * float(
                np.mean(smooth_l1(iaa, pred.z_hat, config.smooth_l1_beta))
            )
        return total

    b = images.shape[0]
    net.zero_grads()
    pred = net.forward(images, train=False)
    d_logits = None
    d_z_hat = None
    if scales[0] > 0.0:
        d_logits = (scales[0] / b) * focal_grad_logits(
            labels, pred.logits, pred.probs, config.focal_gamma
        )
    if scales[1] > 0.0:
        d_z_hat = (scales[1] / b) * smooth_l1_grad(iaa, pred.z_hat, config.smooth_l1_beta)
    net.backward(d_z_hat, d_logits)

    params = net.parameters()
    grads = net.gradients()
    flat: list[tuple[str, int]] = []
    for path, p in params.items():
        flat.extend((path, i) for i in range(p.size))
    rng = np.random.default_rng((seed, STREAM_GRADCHECK))
    if len(flat) > max_params:
        chosen = [flat[i] for i in rng.choice(len(flat), size=max_params, replace=False)]
    else:
        chosen = flat
    worst = 0.0
    for path, i in chosen:
        p = params[path]
        original = p.flat[i]
        p.flat[i] = original + epsilon
        up = loss_value()
        p.flat[i] = original - epsilon
        down = loss_value()
        p.flat[i] = original
        numeric = (up - down) / (2.0 * epsilon)
        analytic = grads[path].flat[i]
        err = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst
