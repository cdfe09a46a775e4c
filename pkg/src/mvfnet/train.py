"""SGD training, learning-rate schedule and multi-view evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import ops
from .data import SyntheticTask, make_dataset
from .errors import DomainError, MvfError
from .network import Network, NetworkSpec, build_network

log = logging.getLogger(__name__)


class TrainingDiverged(MvfError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    decay_epochs: tuple[int, ...] = (18, 24, 27)
    decay_factor: float = 10.0
    batch_size: int = 8
    seed: int = 0
    train_clips: int = 2000
    val_clips: int = 400

    def __post_init__(self):
        object.__setattr__(self, "decay_epochs", tuple(self.decay_epochs))
        d = self.decay_epochs
        if any(e <= 0 for e in d) or any(b <= a for a, b in zip(d, d[1:])):
            raise DomainError(f"decay_epochs must be positive and strictly increasing, got {d}")
        if self.batch_size < 1 or self.epochs < 0 or self.base_lr <= 0:
            raise DomainError("batch_size >= 1, epochs >= 0 and base_lr > 0 required")

    @property
    def scaled_lr(self) -> float:
        """Initial rate under linear scaling with the batch size (reference batch 8)."""
        return self.base_lr * self.batch_size / 8


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    if epoch < 0:
        raise DomainError(f"epoch must be >= 0, got {epoch}")
    decays = sum(1 for e in cfg.decay_epochs if e <= epoch)
    return cfg.scaled_lr / cfg.decay_factor**decays


class SGD:
    """Momentum SGD: ``v = m*v + g + wd*w``, ``w -= lr*v``.

    Names in ``no_decay`` (norm scales/shifts, biases, view weights) get no
    weight decay.
    """

    def __init__(self, params: dict[str, np.ndarray], momentum: float, weight_decay: float,
                 no_decay: Sequence[str] = ()):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for name, w in self.params.items():
            g = grads.get(name)
            if g is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += g
            if self.weight_decay and name not in self.no_decay:
                v += self.weight_decay * w
            w -= w.dtype.type(lr) * v


def sgd_step(params, grads, velocity, lr, momentum, weight_decay, no_decay=()):
    """Functional form of one :class:`SGD` step; updates arrays in place."""
    opt = SGD(params, momentum, weight_decay, no_decay)
    opt.velocity = velocity
    opt.step(grads, lr)


@dataclass
class TrainResult:
    net: Network
    history: list[dict] = field(default_factory=list)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def predict_logits(net: Network, videos: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = [net.forward(videos[i : i + batch_size], training=False) for i in range(0, len(videos), batch_size)]
    return np.concatenate(out)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def pair_accuracy(logits: np.ndarray, labels: np.ndarray, task: SyntheticTask) -> Optional[float]:
    """Accuracy of choosing between each clip's class and its reversed partner."""
    partners = [task.partner(int(c)) for c in labels]
    if any(p is None for p in partners):
        return None
    idx = np.arange(len(labels))
    own = logits[idx, labels]
    other = logits[idx, np.array(partners)]
    # ties go to the lower class index
    correct = np.where(own == other, labels < np.array(partners), own > other)
    return float(np.mean(correct))


def train(netspec: NetworkSpec, task: SyntheticTask, cfg: TrainConfig,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train a network from scratch on generated clips.

    Training clips come from stream ``cfg.seed``; validation clips are
    generated in time-reversed pairs from a disjoint stream. Raises
    :class:`TrainingDiverged` if the loss stops being finite.
    """
    if netspec.classes != task.num_classes:
        raise DomainError(f"network has {netspec.classes} classes, task {task.kind} has {task.num_classes}")
    if netspec.frames != task.frames or netspec.input_resolution != task.resolution:
        raise DomainError("network frames/resolution must match the task")
    net = build_network(netspec, seed=cfg.seed)
    x_train, y_train = make_dataset(task, cfg.train_clips, seed=cfg.seed)
    paired = all(task.partner(c) is not None for c in range(task.num_classes))
    x_val, y_val = make_dataset(task, cfg.val_clips, seed=cfg.seed + 1_000_003, paired=paired)
    params = net.parameters()
    opt = SGD(params, cfg.momentum, cfg.weight_decay, no_decay=net.no_decay_names())
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    result = TrainResult(net)
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        total, seen = 0.0, 0
        for idx in _batches(len(x_train), cfg.batch_size, rng):
            logits = net.forward(x_train[idx], training=True)
            loss, d_logits = ops.softmax_xent(logits, y_train[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            net.backward(d_logits.astype(net.dtype), input_grad=False)
            opt.step(net.gradients(), lr)
            total += loss * len(idx)
            seen += len(idx)
        val_logits = predict_logits(net, x_val)
        row = {"epoch": epoch, "lr": lr, "train_loss": total / max(seen, 1), "val_acc": accuracy(val_logits, y_val)}
        pa = pair_accuracy(val_logits, y_val, task)
        if pa is not None:
            row["val_pair_acc"] = pa
        log.info("epoch %d lr %.5f loss %.4f val_acc %.4f", epoch, lr, row["train_loss"], row["val_acc"])
        result.history.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return result


# ---------------------------------------------------------------------------
# inference protocol

CROP_MODES = ("center1", "three")


@dataclass(frozen=True)
class EvalProtocol:
    clips_per_video: int = 1
    crops: str = "center1"
    resolution: int = 32

    def __post_init__(self):
        if self.clips_per_video < 1:
            raise DomainError(f"clips_per_video must be >= 1, got {self.clips_per_video}")
        if self.crops not in CROP_MODES:
            raise DomainError(f"crops must be one of {CROP_MODES}, got {self.crops!r}")

    @property
    def views(self) -> int:
        return self.clips_per_video * (3 if self.crops == "three" else 1)


def _resize_short_side(frames: np.ndarray, target: int) -> np.ndarray:
    from scipy.ndimage import zoom

    h, w = frames.shape[-2:]
    if min(h, w) == target:
        return frames
    f = target / min(h, w)
    out_h, out_w = max(target, round(h * f)), max(target, round(w * f))
    factors = (1,) * (frames.ndim - 2) + (out_h / h, out_w / w)
    return zoom(frames, factors, order=1)


def crop_views(frames: np.ndarray, protocol: EvalProtocol) -> list[np.ndarray]:
    """Square crops of side ``protocol.resolution`` from ``(..., h, w)`` frames.

    Frames are first resized so the short side equals the crop size.
    ``center1`` gives the central crop; ``three`` gives crops at the start,
    centre and end of the long side.
    """
    s = protocol.resolution
    h, w = frames.shape[-2:]
    if s > min(h, w):
        raise DomainError(f"crop {s} larger than frame {h}x{w}")
    frames = _resize_short_side(frames, s)
    h, w = frames.shape[-2:]
    top, left = (h - s) // 2, (w - s) // 2
    if protocol.crops == "center1":
        offsets = [(top, left)]
    elif w >= h:
        offsets = [(top, 0), (top, left), (top, w - s)]
    else:
        offsets = [(0, left), (top, left), (h - s, left)]
    return [np.ascontiguousarray(frames[..., i : i + s, j : j + s]) for i, j in offsets]


def clip_consensus(per_clip_logits: Sequence[np.ndarray]) -> int:
    """Average the softmax of every view's logits; argmax, lowest index on ties."""
    if len(per_clip_logits) == 0:
        raise DomainError("consensus needs at least one clip")
    probs = np.mean([ops.softmax(np.asarray(l, dtype=np.float64)) for l in per_clip_logits], axis=0)
    return int(np.argmax(probs))


def split_clips(video: np.ndarray, clips: int) -> list[np.ndarray]:
    """Clip ``j`` takes frames ``j::clips`` of a ``(c, t*clips, h, w)`` video."""
    return [np.ascontiguousarray(video[:, j::clips]) for j in range(clips)]


def evaluate(net: Network, task: SyntheticTask, protocol: EvalProtocol, count: int, seed: int) -> dict:
    """Video-level accuracy under the multi-clip, multi-crop protocol."""
    paired = all(task.partner(c) is not None for c in range(task.num_classes))
    videos, labels = make_dataset(task, count, seed=seed, paired=paired, clips=protocol.clips_per_video)
    preds, view_probs = [], []
    for video in videos:
        views = []
        for clip in split_clips(video, protocol.clips_per_video):
            views.extend(crop_views(clip, protocol))
        logits = net.forward(np.stack(views), training=False)
        view_probs.append(ops.softmax(logits.astype(np.float64)).mean(axis=0))
        preds.append(clip_consensus(list(logits)))
    preds = np.array(preds)
    out = {
        "videos": int(count),
        "clips_per_video": protocol.clips_per_video,
        "crops": protocol.crops,
        "views": protocol.views,
        "accuracy": float(np.mean(preds == labels)),
    }
    pa = pair_accuracy(np.array(view_probs), labels, task)
    if pa is not None:
        out["pair_accuracy"] = pa
    return out
