"""End-to-end training of the colorspace and segmentation networks."""

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .data import augment, normalize
from .losses import colorspace_pair, discriminant_loss, total_loss
from .metrics import Confusion, SegMetrics, confusion, threshold_sweep
from .nets import ModelPair, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "split", "loss", "acc", "precision", "recall", "f1", "iou0", "iou1", "miou", "lr")
FAMILY_COLUMNS = ("family_id", "n_images", "acc", "f1", "miou")


class TrainingError(RuntimeError):
    pass


class Adam:
    """Adam with bias correction over a dict of named parameter tensors."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads, lr=None):
        """Apply one update. ``grads`` maps parameter name to gradient array; missing means zero."""
        lr = self.lr if lr is None else lr
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauScheduler:
    """Multiply the rate by ``factor`` after ``patience`` epochs without a new best score."""

    def __init__(self, lr, patience=3, factor=0.5, min_lr=1e-6):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.best = -math.inf
        self.bad_epochs = 0

    def step(self, score):
        if score > self.best:
            self.best = score
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr


def build_model(cfg):
    mode = cfg.ablation
    return ModelPair.build(
        cfg.effective_d_cs,
        depth=cfg.depth,
        base_width=cfg.base_width,
        seed=cfg.seed,
        colorspace=mode != "focal_only",
        segmentation=mode != "dda_only",
    )


def _batch(samples, cfg, epoch=None, offset=0):
    if epoch is not None and cfg.augment:
        samples = [augment(s, [cfg.seed, epoch, offset + i]) for i, s in enumerate(samples)]
    x = np.stack([normalize(s.image) for s in samples])
    m = np.stack([s.mask for s in samples]).astype(np.float64)
    return x, m


def _objective(model, cfg, lcfg, x, mask, track):
    """Returns (loss tensor, score map, discriminant skipped?)."""
    y, probs = model.forward(ad.Tensor(x), track)
    mode = cfg.ablation
    if mode == "dda_only":
        pair = colorspace_pair(y, mask)
        if pair is None:
            return None, y.data[..., 0], True
        return discriminant_loss(pair, lcfg), y.data[..., 0], False
    if mode == "full":
        pair = colorspace_pair(y, mask)
        parts = total_loss(probs, mask, pair, lcfg)
        return parts.total, probs.data[..., 0], parts.dda_skipped
    return total_loss(probs, mask, None, lcfg).total, probs.data[..., 0], False


def predict(model, cfg, samples, batch_size=None):
    """Score maps (N, H, W) for a list of samples, without gradient tracking."""
    bs = batch_size or cfg.batch_size
    out = []
    for i in range(0, len(samples), bs):
        x, _ = _batch(samples[i : i + bs], cfg)
        y, probs = model.forward(ad.Tensor(x), track=False)
        out.append((probs if probs is not None else y).data[..., 0])
    return np.concatenate(out) if out else np.zeros((0,))


def _validate(model, cfg, lcfg, samples):
    losses, scores = [], []
    for i in range(0, len(samples), cfg.batch_size):
        x, m = _batch(samples[i : i + cfg.batch_size], cfg)
        loss, s, _ = _objective(model, cfg, lcfg, x, m, track=False)
        if loss is not None:
            losses.append(loss.item())
        scores.append(s)
    scores = np.concatenate(scores)
    masks = np.stack([s.mask for s in samples])
    threshold = 0.5
    if cfg.ablation == "dda_only":
        threshold, _ = threshold_sweep(scores, masks)
    metrics = SegMetrics.from_confusion(confusion(scores > threshold, masks))
    return float(np.mean(losses)) if losses else float("nan"), metrics, threshold


def _row(epoch, split, loss, metrics, lr):
    return {
        "epoch": epoch,
        "split": split,
        "loss": loss,
        "acc": metrics.accuracy,
        "precision": metrics.precision,
        "recall": metrics.recall,
        "f1": metrics.f1,
        "iou0": metrics.iou_c0,
        "iou1": metrics.iou_c1,
        "miou": metrics.miou,
        "lr": lr,
    }


@dataclass
class TrainResult:
    model: ModelPair
    config: TrainConfig
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_miou: float = -math.inf
    threshold: float = 0.5
    skipped_dda_batches: int = 0


def train(cfg, splits, out_dir=None):
    """Train per ``cfg`` on ``splits`` (dict with 'train' and 'val' sample lists).

    The model is left holding the best-validation-mIoU parameters. When
    ``out_dir`` is given, the best checkpoint and ``metrics.csv`` are written
    there.
    """
    train_set, val_set = splits.get("train", []), splits.get("val", [])
    if not train_set or not val_set:
        raise ValueError("train: dataset needs nonempty train and val splits")
    lcfg = cfg.loss_config()
    model = build_model(cfg)
    params = model.params
    opt = Adam(params, lr=cfg.learning_rate)
    sched = PlateauScheduler(cfg.learning_rate, cfg.patience, cfg.lr_factor, cfg.min_lr)
    result = TrainResult(model, cfg)
    best = model.snapshot()
    lr = cfg.learning_rate

    for epoch in range(cfg.max_epochs):
        order = np.random.default_rng([cfg.seed, epoch, 17]).permutation(len(train_set))
        conf = Confusion(0, 0, 0, 0)
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, m = _batch([train_set[i] for i in idx], cfg, epoch, start)
            loss, scores, skipped = _objective(model, cfg, lcfg, x, m, track=True)
            if skipped:
                result.skipped_dda_batches += 1
                log.info("epoch %d batch %d: one class empty, discriminant term skipped", epoch, start)
            if loss is None:
                continue
            if not math.isfinite(loss.item()):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}: {loss.item()}")
            grads = ad.backward(loss)
            opt.step({name: grads[p] for name, p in params.items() if p in grads}, lr)
            losses.append(loss.item())
            conf = conf + confusion(scores > 0.5, m)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        result.history.append(_row(epoch, "train", train_loss, SegMetrics.from_confusion(conf), lr))

        val_loss, val_metrics, threshold = _validate(model, cfg, lcfg, val_set)
        result.history.append(_row(epoch, "val", val_loss, val_metrics, lr))
        log.info("epoch %d: train loss %.5f, val mIoU %.4f, lr %.2g", epoch, train_loss, val_metrics.miou, lr)
        if val_metrics.miou > result.best_val_miou:
            result.best_val_miou = val_metrics.miou
            result.best_epoch = epoch
            result.threshold = threshold
            best = model.snapshot()
        lr = sched.step(val_metrics.miou)

    model.restore(best)
    if out_dir is not None:
        save_result(out_dir, result)
    return result


def write_csv(path_or_buf, rows, columns):
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_fmt(r[c]) for c in columns])
    finally:
        if own:
            fh.close()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def history_csv(history):
    buf = io.StringIO()
    write_csv(buf, history, LOG_COLUMNS)
    return buf.getvalue()


def save_result(out_dir, result):
    os.makedirs(out_dir, exist_ok=True)
    extra = {"threshold": result.threshold, "best_epoch": result.best_epoch}
    save_checkpoint(os.path.join(out_dir, "checkpoint"), result.model, result.config.to_lines(), extra)
    write_csv(os.path.join(out_dir, "metrics.csv"), result.history, LOG_COLUMNS)


def load_trained(checkpoint_dir):
    """Returns (model, TrainConfig, threshold) from a checkpoint directory."""
    model, entries = load_checkpoint(checkpoint_dir)
    keys = set(TrainConfig.__dataclass_fields__)
    cfg = TrainConfig.from_lines(f"{k} = {v}" for k, v in entries.items() if k in keys)
    return model, cfg, float(entries.get("threshold", 0.5))


@dataclass
class EvalResult:
    per_image: list
    aggregate: SegMetrics
    per_family: dict
    loss: float = float("nan")


def evaluate(model, cfg, samples, threshold=0.5):
    """Per-image, pooled (micro-averaged) and per-family metrics at ``threshold``."""
    if not samples:
        raise ValueError("evaluate: empty split")
    scores = predict(model, cfg, samples)
    per_image, total = [], Confusion(0, 0, 0, 0)
    fam_conf, fam_count = {}, {}
    for s, sc in zip(samples, scores):
        c = confusion(sc > threshold, s.mask)
        total = total + c
        per_image.append({"seed": s.seed, "family_id": s.family_id, **SegMetrics.from_confusion(c).as_dict()})
        fam_conf[s.family_id] = fam_conf.get(s.family_id, Confusion(0, 0, 0, 0)) + c
        fam_count[s.family_id] = fam_count.get(s.family_id, 0) + 1
    per_family = {
        f: (fam_count[f], SegMetrics.from_confusion(fam_conf[f])) for f in sorted(fam_conf)
    }
    return EvalResult(per_image, SegMetrics.from_confusion(total), per_family)


def family_rows(result):
    return [
        {"family_id": f, "n_images": n, "acc": m.accuracy, "f1": m.f1, "miou": m.miou}
        for f, (n, m) in result.per_family.items()
    ]
