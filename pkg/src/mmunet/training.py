"""SGD with momentum, the stair learning-rate schedule, mIoU evaluation and the training loop."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data_io import stack
from .errors import DataError, ShapeError, UsageError
from .models import forward


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 16
    base_lr: float = 0.015
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_drop_start: int = 100
    lr_drop_every: int = 10
    lr_drop_factor: float = 10.0
    seed: int = 0
    input_size: int = 256
    # global gradient-norm clip applied before weight decay; 0 disables
    grad_clip: float = 0.0

    def validate(self):
        if min(self.epochs, self.batch_size, self.lr_drop_every, self.input_size) < 1:
            raise UsageError("epochs, batch_size, lr_drop_every and input_size must be >= 1")
        if self.base_lr <= 0 or self.momentum < 0 or self.weight_decay < 0 or self.lr_drop_start < 0:
            raise UsageError("base_lr must be positive; momentum, weight_decay, lr_drop_start >= 0")
        if self.grad_clip < 0:
            raise UsageError("grad_clip must be >= 0")
        if self.lr_drop_factor <= 1:
            raise UsageError("lr_drop_factor must exceed 1")
        return self


@dataclass
class Metrics:
    accuracy: float
    per_class_iou: list
    miou: float
    confusion: np.ndarray = field(default=None, repr=False)

    def __str__(self):
        ious = ", ".join("nan" if math.isnan(v) else f"{v:.6f}" for v in self.per_class_iou)
        return f"acc={self.accuracy:.6f} miou={self.miou:.6f} iou=[{ious}]"


def lr_at(epoch, cfg):
    """Learning rate for 1-based ``epoch``: flat, then divided by the factor every interval."""
    if not 1 <= epoch <= cfg.epochs:
        raise UsageError(f"epoch {epoch} outside [1, {cfg.epochs}]")
    if epoch <= cfg.lr_drop_start:
        return cfg.base_lr
    drops = -(-(epoch - cfg.lr_drop_start) // cfg.lr_drop_every)
    return cfg.base_lr / cfg.lr_drop_factor**drops


def sgd_step(params, grads, velocity, lr, cfg):
    """In-place classical momentum step with L2 weight decay folded into the gradient.

    ``params``, ``grads`` and ``velocity`` are parallel lists of arrays.
    """
    if not len(params) == len(grads) == len(velocity):
        raise ShapeError("params, grads and velocity must have the same length")
    mu, wd = cfg.momentum, cfg.weight_decay
    for p, g, v in zip(params, grads, velocity):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeError(f"sgd_step: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        step = g + wd * p if wd else g
        v *= mu
        v += step
        p -= lr * v
    return params, velocity


def clip_grad_norm(grads, max_norm):
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the norm."""
    norm = math.sqrt(sum(float(np.dot(g.ravel(), g.ravel())) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= g.dtype.type(scale)
    return norm


# ------------------------------------------------------------------- metrics


def confusion_matrix(pred, target, num_classes):
    pred = np.asarray(pred).astype(np.int64).ravel()
    target = np.asarray(target).astype(np.int64).ravel()
    if pred.shape != target.shape:
        raise ShapeError("prediction and target sizes differ")
    for name, a in (("target", target), ("prediction", pred)):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            bad = int(np.flatnonzero((a < 0) | (a >= num_classes))[0])
            raise DataError(f"{name} class id {a[bad]} at flat pixel {bad} outside [0, {num_classes})")
    # rows: ground truth, columns: prediction
    return np.bincount(target * num_classes + pred, minlength=num_classes**2).reshape(
        num_classes, num_classes
    )


def metrics_from_confusion(cm):
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    inter = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    ious = [float(i / u) if u else float("nan") for i, u in zip(inter, union)]
    included = [v for v in ious if not math.isnan(v)]
    miou = float(np.mean(included)) if included else float("nan")
    acc = float(inter.sum() / total) if total else float("nan")
    return Metrics(acc, ious, miou, cm)


def segmentation_metrics(pred, target, num_classes):
    return metrics_from_confusion(confusion_matrix(pred, target, num_classes))


def predict(model, images, batch_size=16):
    images = np.asarray(images, dtype=model.head.weight.dtype)
    out = []
    for i in range(0, len(images), batch_size):
        logits = forward(model, images[i : i + batch_size])
        out.append(logits.data.argmax(axis=1).astype(np.uint8))
    return np.concatenate(out)


def evaluate_predictions(preds, masks, num_classes):
    """Metrics of paired (prediction, ground truth) masks pooled into one confusion matrix."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for pred, mask in zip(preds, masks, strict=True):
        cm += confusion_matrix(pred, mask, num_classes)
    return metrics_from_confusion(cm)


def evaluate(model, dataset, batch_size=16):
    """Pixel accuracy and mIoU over the whole dataset (one global confusion matrix)."""
    images, masks = _arrays(dataset)
    if len(images) == 0:
        raise UsageError("cannot evaluate on an empty dataset")
    K = model.spec.num_classes
    if masks.min() < 0 or masks.max() >= K:
        raise DataError(f"mask ids must lie in [0, {K})")
    starts = range(0, len(images), batch_size)
    preds = (predict(model, images[i : i + batch_size], batch_size) for i in starts)
    return evaluate_predictions(preds, (masks[i : i + batch_size] for i in starts), K)


# ------------------------------------------------------------------ training


def _arrays(dataset):
    if isinstance(dataset, tuple):
        return dataset
    return stack(dataset) if len(dataset) else (np.zeros((0,)), np.zeros((0,)))


def format_log_row(epoch, lr, loss, metrics):
    return f"epoch={epoch} lr={lr:.6g} loss={loss:.6f} acc={metrics.accuracy:.6f} miou={metrics.miou:.6f}"


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_metrics: Metrics
    log: list


def train(model, train_set, val_set, cfg, on_epoch=None):
    """Train ``model`` in place; returns the best-by-val-mIoU parameters and the epoch log."""
    cfg.validate()
    images, masks = _arrays(train_set)
    val = _arrays(val_set)
    if len(images) == 0 or len(val[0]) == 0:
        raise UsageError("training and validation sets must be nonempty")
    if cfg.batch_size > len(images):
        raise UsageError(f"batch_size {cfg.batch_size} exceeds {len(images)} training samples")
    dtype = model.head.weight.dtype
    images = images.astype(dtype, copy=False)
    named = list(model.named_parameters())
    params = [p for _, p in named]
    velocity = [np.zeros_like(p.data) for p in params]
    shuffle = np.random.default_rng([int(cfg.seed), 0x5EED])
    steps = len(images) // cfg.batch_size

    log, best = [], None
    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(epoch, cfg)
        order = shuffle.permutation(len(images))
        losses = []
        for s in range(steps):
            idx = order[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            logits = forward(model, images[idx])
            loss = T.softmax_ce(logits, masks[idx])
            T.backward(loss)
            grads = [p.grad for p in params]
            if cfg.grad_clip:
                clip_grad_norm(grads, cfg.grad_clip)
            sgd_step([p.data for p in params], grads, velocity, lr, cfg)
            losses.append(float(loss.data))
            for p in params:
                p.grad = None
        metrics = evaluate(model, val, cfg.batch_size)
        row = format_log_row(epoch, lr, float(np.mean(losses)), metrics)
        log.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if best is None or metrics.miou > best[2].miou:
            best = (model.state_dict(), epoch, metrics)
    return TrainResult(best[0], best[1], best[2], log)
