"""Multi-label training: stabilized sigmoid BCE, SGD with momentum and
weight decay, linear warmup, and step decay at fractional-epoch milestones.

Everything is deterministic given the config seed: parameter init, epoch
shuffles, and therefore the loss trajectory, checkpoint bytes, and metric
log bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .boxes import filter_boxes
from .data import ClipSample
from .errors import ConfigurationError, DimensionError, NumericsError, ValidationError
from .model import RelationDetector, evaluate_detector
from .tensor import Tensor, make_op, no_grad, sigmoid_np


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.04
    momentum: float = 0.9
    weight_decay: float = 1e-7
    batch_size: int = 8
    epochs: int = 6
    warmup_steps: int = 0
    milestones: tuple = ()        # fractional epochs, strictly increasing in (0, epochs]
    decay_factor: float = 0.1
    seed: int = 0
    max_steps: int | None = None  # hard cap on optimizer steps, if set
    eval_interval: int = 1        # epochs between mAP evaluations; 0 disables

    def __post_init__(self):
        ms = tuple(float(m) for m in self.milestones)
        object.__setattr__(self, "milestones", ms)
        if any(m2 <= m1 for m1, m2 in zip(ms, ms[1:])):
            raise ConfigurationError(f"milestones must be strictly increasing: {ms}")
        if any(not 0.0 < m <= self.epochs for m in ms):
            raise ConfigurationError(
                f"milestones must lie in (0, epochs={self.epochs}]: {ms}"
            )

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["milestones"] = list(d["milestones"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown train keys: {sorted(unknown)}")
        if "milestones" in d:
            d = dict(d, milestones=tuple(d["milestones"]))
        return cls(**d)


def learning_rate_at(step: int, steps_per_epoch: int, cfg: TrainConfig) -> float:
    """LR for optimizer step `step` (0-based): linear warmup, then x decay_factor
    once the fractional epoch passes each milestone."""
    lr = cfg.lr
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        lr *= (step + 1) / cfg.warmup_steps
    epoch_frac = step / max(steps_per_epoch, 1)
    for m in cfg.milestones:
        if epoch_frac >= m:
            lr *= cfg.decay_factor
    return lr


def bce_loss(logits, targets) -> Tensor:
    """Mean over all entries of sigmoid binary cross-entropy, in the
    overflow-free log-sum-exp form.  Targets must be exactly 0 or 1."""
    if not isinstance(logits, Tensor):
        logits = Tensor(np.asarray(logits, dtype=np.float32))
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DimensionError(
            f"bce_loss: targets shape {t.shape} != logits shape {logits.shape}"
        )
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValidationError("bce_loss: targets must be exactly 0 or 1")
    z = logits.data
    elem = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    value = np.asarray(elem.mean(), dtype=logits.dtype)
    count = z.size

    def bwd(g):
        return ((sigmoid_np(z) - t) * (g / count),)

    return make_op(value, (logits,), bwd)


class MomentumSGD:
    """v = mu*v + grad + wd*param;  param -= lr*v."""

    def __init__(self, named_params, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = [t for _, t in named_params]
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(t.data) for t in self.params]

    def zero_grad(self):
        for t in self.params:
            t.grad = None

    def step(self, lr: float):
        for t, v in zip(self.params, self.velocity):
            if t.grad is None:
                continue
            g = t.grad
            if self.weight_decay:
                g = g + self.weight_decay * t.data
            v *= self.momentum
            v += g
            t.data -= (lr * v).astype(t.data.dtype, copy=False)


class MetricsLog:
    """Append-only structured text lines; None path keeps records in memory only."""

    def __init__(self, path=None):
        self.path = path
        self.records = []
        if path is not None:
            open(path, "w").close()

    def write(self, record: dict):
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _clip_training_batch(clip: ClipSample):
    kept = filter_boxes(clip.proposals,
                        list(zip(clip.gt_boxes, clip.gt_labels)), mode="train")
    boxes = [b for b, _ in kept]
    labels = np.stack([l for _, l in kept]) if kept else None
    return boxes, labels


def _train_loop(forward, named_params, dataset, cfg: TrainConfig, log: MetricsLog,
                eval_fn=None):
    """Shared optimizer loop; `forward(clip, boxes)` returns logits for the boxes."""
    if not dataset:
        raise ValidationError("training requires a non-empty dataset")
    opt = MomentumSGD(named_params, cfg.momentum, cfg.weight_decay)
    order_rng = np.random.default_rng([cfg.seed, 1])
    steps_per_epoch = max(1, -(-len(dataset) // cfg.batch_size))
    step = 0
    from .tensor import concat
    for epoch in range(cfg.epochs):
        perm = order_rng.permutation(len(dataset))
        for start in range(0, len(dataset), cfg.batch_size):
            if cfg.max_steps is not None and step >= cfg.max_steps:
                return step
            batch = [dataset[i] for i in perm[start:start + cfg.batch_size]]
            logit_parts, target_parts = [], []
            for clip in batch:
                boxes, labels = _clip_training_batch(clip)
                if not boxes:
                    continue
                logit_parts.append(forward(clip, boxes))
                target_parts.append(labels)
            if not logit_parts:
                continue
            logits = concat(logit_parts, axis=0)
            loss = bce_loss(logits, np.concatenate(target_parts, axis=0))
            if not np.isfinite(loss.data):
                raise NumericsError(f"training loss diverged (non-finite) at step {step}")
            lr = learning_rate_at(step, steps_per_epoch, cfg)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
            log.write({"step": step, "loss": float(loss.data), "lr": lr})
            step += 1
        if eval_fn is not None and cfg.eval_interval and (epoch + 1) % cfg.eval_interval == 0:
            log.write({"epoch": epoch + 1, "map": eval_fn()})
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return step


def train_short(detector: RelationDetector, dataset: list[ClipSample],
                cfg: TrainConfig, log_path=None, eval_set=None) -> MetricsLog:
    """Phase one: train the whole model (backbone, encoders, short head)."""
    log = MetricsLog(log_path)
    detector.set_trainable(None)  # everything
    params = [(n, t) for n, t in detector.all_parameters()
              if not n.startswith("head_long.")]

    def forward(clip, boxes):
        _, logits = detector.short_forward(clip.frames, boxes)
        return logits

    eval_clips = eval_set if eval_set is not None else dataset
    _train_loop(forward, params, dataset, cfg, log,
                eval_fn=lambda: evaluate_detector(detector, eval_clips).mean)
    return log


def train_long(detector: RelationDetector, dataset: list[ClipSample], bank,
               cfg: TrainConfig, log_path=None, eval_set=None,
               eval_bank=None) -> MetricsLog:
    """Phase two: freeze the encoder pipeline, train only the long-term head
    against windows drawn from the relation bank."""
    log = MetricsLog(log_path)
    detector.set_trainable(["head_long."])
    params = detector.long_head_parameters()

    def forward(clip, boxes):
        with no_grad():
            feats, _ = detector.short_forward(clip.frames, boxes)
        support = bank.query_window(clip.video_id, clip.time_s)
        return detector.long_forward(Tensor(feats.data), support)

    eval_fn = None
    if eval_set is not None:
        eval_fn = lambda: evaluate_detector(detector, eval_set,
                                            bank=eval_bank or bank).mean
    _train_loop(forward, params, dataset, cfg, log, eval_fn=eval_fn)
    detector.set_trainable(None)
    return log
