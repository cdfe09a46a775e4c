"""Procedural moving-square clips for desk-scale temporal modeling.

A bright square translates at constant velocity while fading in. A
time-reversed class is the frame-reversed clip of its partner class, so it
moves the opposite way *and* fades out; telling a class from its reversed
partner needs the order of frames, not just their content.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DomainError

DIRECTIONS = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1)}

TASK_CLASSES = {
    "direction_lr": ("left", "right"),
    "direction_ud": ("up", "down"),
    "temporal_order": ("right", "right-reversed"),
    "full_eight": (
        "left", "right", "up", "down",
        "left-reversed", "right-reversed", "up-reversed", "down-reversed",
    ),
}


@dataclass(frozen=True)
class SyntheticTask:
    kind: str = "full_eight"
    resolution: int = 32
    frames: int = 8
    size_range: tuple[float, float] = (5.0, 9.0)
    speed_range: tuple[float, float] = (1.5, 2.5)  # pixels per frame
    intensity_range: tuple[float, float] = (0.6, 1.0)
    fade_start_range: tuple[float, float] = (0.2, 0.5)  # first-frame brightness factor
    noise_std: float = 0.05

    def __post_init__(self):
        if self.kind not in TASK_CLASSES:
            raise DomainError(f"unknown task kind {self.kind!r}; choose from {sorted(TASK_CLASSES)}")
        if self.frames < 2 or self.resolution < 4:
            raise DomainError("tasks need at least 2 frames and resolution 4")
        travel = self.size_range[1] + self.speed_range[1] * (self.frames - 1)
        if travel > self.resolution:
            raise DomainError(f"largest square ({travel:.1f}px of travel) leaves a {self.resolution}px frame")

    @property
    def class_names(self) -> tuple[str, ...]:
        return TASK_CLASSES[self.kind]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def partner(self, class_id: int) -> Optional[int]:
        """Index of the time-reversed partner class, if the task has one."""
        names = self.class_names
        name = names[class_id]
        other = name[: -len("-reversed")] if name.endswith("-reversed") else name + "-reversed"
        return names.index(other) if other in names else None


class Motion(NamedTuple):
    x0: float  # top-left corner at frame 0
    y0: float
    vx: float  # pixels per frame
    vy: float
    size: float
    intensity: float
    fade_start: float


def _check_class(task: SyntheticTask, class_id: int) -> str:
    if not 0 <= class_id < task.num_classes:
        raise DomainError(f"class {class_id} invalid for {task.kind} ({task.num_classes} classes)")
    return task.class_names[class_id]


def sample_motion(task: SyntheticTask, direction: str, rng: np.random.Generator) -> Motion:
    dx, dy = DIRECTIONS[direction]
    size = rng.uniform(*task.size_range)
    speed = rng.uniform(*task.speed_range)
    intensity = rng.uniform(*task.intensity_range)
    fade = rng.uniform(*task.fade_start_range)
    travel = speed * (task.frames - 1)
    room = task.resolution - size
    along = rng.uniform(0, room - travel)
    across = rng.uniform(0, room)
    # motion axis start measured from the side the square departs from
    def start(d):
        if d > 0:
            return along
        if d < 0:
            return along + travel
        return across
    return Motion(start(dx), start(dy), dx * speed, dy * speed, size, intensity, fade)


def _coverage(lo: np.ndarray, size: float, n: int) -> np.ndarray:
    """Fraction of each of ``n`` unit pixels covered by ``[lo, lo + size)``."""
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(edges + 1, lo[:, None] + size) - np.maximum(edges, lo[:, None]), 0, 1)


def render(task: SyntheticTask, m: Motion, frames: int, step: float = 1.0) -> np.ndarray:
    """Noise-free frames ``(frames, res, res)``; ``step`` scales time per frame."""
    t = np.arange(frames, dtype=np.float64) * step
    span = step * (frames - 1)
    ramp = m.fade_start + (1 - m.fade_start) * (t / span if span > 0 else 1.0)
    cx = _coverage(m.x0 + m.vx * t, m.size, task.resolution)
    cy = _coverage(m.y0 + m.vy * t, m.size, task.resolution)
    return (m.intensity * ramp)[:, None, None] * cy[:, :, None] * cx[:, None, :]


def reverse_frames(clip: np.ndarray) -> np.ndarray:
    """Reverse the time axis of ``(..., t, h, w)`` data."""
    return np.ascontiguousarray(clip[..., ::-1, :, :])


def gen_video(task: SyntheticTask, class_id: int, rng: np.random.Generator, clips: int = 1) -> np.ndarray:
    """A ``(1, frames * clips, res, res)`` float32 video.

    The motion spans the same distance as a single clip, so clip ``j`` of the
    video (frames ``j::clips``) is distributed like a training clip.
    """
    name = _check_class(task, class_id)
    base = name[: -len("-reversed")] if name.endswith("-reversed") else name
    m = sample_motion(task, base, rng)
    video = render(task, m, task.frames * clips, step=1.0 / clips)
    video = video + rng.standard_normal(video.shape) * task.noise_std
    if name.endswith("-reversed"):
        video = reverse_frames(video)
    return video[None].astype(np.float32)


def gen_clip(task: SyntheticTask, class_id: int, rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """One ``(1, t, h, w)`` clip and its label."""
    return gen_video(task, class_id, rng), class_id


def clip_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def make_dataset(task: SyntheticTask, count: int, seed: int, paired: bool = False, clips: int = 1):
    """``(videos (n, 1, t*clips, h, w), labels (n,))`` with balanced classes.

    Clip ``i`` draws from its own stream ``(seed, i)``. With ``paired=True``
    every clip is followed by its exact time reversal (labelled with the
    partner class), which needs a task whose classes all have partners.
    """
    k = task.num_classes
    if paired:
        if any(task.partner(c) is None for c in range(k)):
            raise DomainError(f"task {task.kind} has classes without a reversed partner")
        if count % 2:
            raise DomainError("paired datasets need an even count")
        bases = [c for c in range(k) if not task.class_names[c].endswith("-reversed")]
        videos, labels = [], []
        for i in range(count // 2):
            c = bases[i % len(bases)]
            v = gen_video(task, c, clip_rng(seed, i), clips)
            videos += [v, reverse_frames(v)]
            labels += [c, task.partner(c)]
    else:
        labels = [i % k for i in range(count)]
        videos = [gen_video(task, c, clip_rng(seed, i), clips) for i, c in enumerate(labels)]
    return np.stack(videos), np.array(labels, dtype=np.int64)
