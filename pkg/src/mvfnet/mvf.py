"""Multi-view fusion: split, three channel-wise convolutions, fuse, concat.

The multi-view path takes the first ``round(alpha * C)`` channels ``x1``,
convolves them along t, h and w with separate 3-tap per-channel kernels,
fuses the three responses as ``act(b_t * o_t + b_h * o_h + b_w * o_w)`` and
appends the result after the untouched channels: ``y = concat(x2, o1)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import DomainError, ShapeError
from .ops import Axis, conv1d_channelwise, conv1d_channelwise_backward
from .tensor import check_video, concat_channels, split_channels, split_count

ACTIVATIONS = ("relu", "identity")

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


@dataclass(frozen=True)
class MvfConfig:
    alpha: float = 0.5
    beta_t: float = 1.0
    beta_h: float = 1.0
    beta_w: float = 1.0
    activation: str = "relu"
    learnable_beta: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def betas(self) -> tuple[float, float, float]:
        return (self.beta_t, self.beta_h, self.beta_w)

    def with_betas(self, beta_t: float, beta_h: float, beta_w: float) -> "MvfConfig":
        return MvfConfig(self.alpha, beta_t, beta_h, beta_w, self.activation, self.learnable_beta)


@dataclass
class MvfWeights:
    k_t: np.ndarray
    k_h: np.ndarray
    k_w: np.ndarray

    def __post_init__(self):
        shapes = {self.k_t.shape, self.k_h.shape, self.k_w.shape}
        if len(shapes) != 1:
            raise ShapeError(f"kernels disagree in shape: {sorted(shapes)}")
        if self.k_t.ndim != 2 or self.k_t.shape[1] != 3:
            raise ShapeError(f"kernels must have shape (channels, 3), got {self.k_t.shape}")

    @property
    def channels(self) -> int:
        return self.k_t.shape[0]

    def kernels(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.k_t, self.k_h, self.k_w)


@dataclass
class MvfTrace:
    x1: np.ndarray
    x2: np.ndarray
    o_t: np.ndarray
    o_h: np.ndarray
    o_w: np.ndarray
    fused: np.ndarray  # pre-activation sum
    o1: np.ndarray
    y: np.ndarray


@dataclass
class MvfGrads:
    d_x: np.ndarray
    d_weights: MvfWeights
    d_beta: Optional[np.ndarray] = field(default=None)  # (d_beta_t, d_beta_h, d_beta_w)


class Specialization(enum.Enum):
    C2D = "c2d"
    SLOWONLY_DW = "slowonly_dw"
    LEARNABLE_TSM = "learnable_tsm"
    FULL_MVF = "full_mvf"


_AXES = (Axis.TEMPORAL, Axis.HEIGHT, Axis.WIDTH)


def mvf_forward(x: np.ndarray, cfg: MvfConfig, w: MvfWeights) -> MvfTrace:
    check_video(x)
    x1, x2 = split_channels(x, cfg.alpha)
    if w.channels != x1.shape[1]:
        raise ShapeError(
            f"weights cover {w.channels} channels, alpha={cfg.alpha} of {x.shape[1]} needs {x1.shape[1]}"
        )
    if w.k_t.dtype != x.dtype:
        raise ShapeError(f"weights dtype {w.k_t.dtype} != input dtype {x.dtype}")
    o_t, o_h, o_w = (conv1d_channelwise(x1, k, a) for k, a in zip(w.kernels(), _AXES))
    b_t, b_h, b_w = (x.dtype.type(b) for b in cfg.betas)
    fused = b_t * o_t
    fused += b_h * o_h
    fused += b_w * o_w
    o1 = np.maximum(fused, 0) if cfg.activation == "relu" else fused
    return MvfTrace(x1, x2, o_t, o_h, o_w, fused, o1, concat_channels(x2, o1))


def mvf_backward(trace: MvfTrace, cfg: MvfConfig, w: MvfWeights, d_y: np.ndarray) -> MvfGrads:
    if d_y.shape != trace.y.shape:
        raise ShapeError(f"d_y shape {d_y.shape} != output shape {trace.y.shape}")
    c2 = trace.x2.shape[1]
    d_x2 = d_y[:, :c2]
    d_fused = d_y[:, c2:]
    if cfg.activation == "relu":
        d_fused = d_fused * (trace.fused > 0)
    d_x1 = np.zeros_like(trace.x1)
    d_ks = []
    for k, axis, beta in zip(w.kernels(), _AXES, cfg.betas):
        d_view = d_fused * d_y.dtype.type(beta)
        gp = conv1d_channelwise_backward(trace.x1, k, axis, d_view)
        d_x1 += gp.d_input
        d_ks.append(gp.d_weights)
    d_beta = None
    if cfg.learnable_beta:
        d_beta = np.array(
            [np.sum(d_fused * o) for o in (trace.o_t, trace.o_h, trace.o_w)], dtype=d_y.dtype
        )
    d_x = np.concatenate([d_x1, d_x2], axis=1)
    return MvfGrads(d_x, MvfWeights(*d_ks), d_beta)


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def init_gaussian(cfg: MvfConfig, channels: int, std: float = 0.01, seed: SeedLike = 0, dtype=np.float64) -> MvfWeights:
    """I.i.d. zero-mean Gaussian taps for the ``round(alpha * channels)`` path."""
    if not std > 0:
        raise DomainError(f"std must be positive, got {std}")
    rng = _rng(seed)
    c1 = split_count(channels, cfg.alpha)
    ks = [(rng.standard_normal((c1, 3)) * std).astype(dtype) for _ in range(3)]
    return MvfWeights(*ks)


def _shift_fold(c: int, fraction: float) -> int:
    if not 0.0 <= fraction <= 1.0:
        raise DomainError(f"fraction must lie in [0, 1], got {fraction}")
    count = split_count(c, fraction)
    if count % 2:
        raise DomainError(f"fraction {fraction} of {c} channels gives an odd shifted count {count}")
    return count // 2


def tsm_shift(x: np.ndarray, fraction: float) -> np.ndarray:
    """Reference temporal shift with zero fill.

    The first ``fold`` channels move forward in time (``out[t] = in[t-1]``),
    the next ``fold`` move backward (``out[t] = in[t+1]``), the rest are copied.
    """
    check_video(x)
    fold = _shift_fold(x.shape[1], fraction)
    out = x.copy()
    out[:, :fold] = 0
    out[:, :fold, 1:] = x[:, :fold, :-1]
    out[:, fold : 2 * fold] = 0
    out[:, fold : 2 * fold, :-1] = x[:, fold : 2 * fold, 1:]
    return out


FORWARD_SHIFT_TAPS = (1.0, 0.0, 0.0)   # out[t] = in[t-1]
BACKWARD_SHIFT_TAPS = (0.0, 0.0, 1.0)  # out[t] = in[t+1]
IDENTITY_TAPS = (0.0, 1.0, 0.0)


def as_fixed_shift_weights(channels: int, fraction: float, dtype=np.float64) -> MvfWeights:
    """Temporal kernels reproducing :func:`tsm_shift` over ``channels`` channels.

    With cross-correlation taps ``[k(-1), k(0), k(+1)]`` a forward shift is
    ``[1, 0, 0]`` and a backward shift ``[0, 0, 1]``. The h/w kernels are
    identities; pair these weights with ``beta_h = beta_w = 0``.
    """
    if fraction > 0 and channels < 2:
        raise DomainError("a shift needs at least 2 channels")
    fold = _shift_fold(channels, fraction)
    k_t = np.tile(np.array(IDENTITY_TAPS, dtype=dtype), (channels, 1))
    k_t[:fold] = FORWARD_SHIFT_TAPS
    k_t[fold : 2 * fold] = BACKWARD_SHIFT_TAPS
    ident = np.tile(np.array(IDENTITY_TAPS, dtype=dtype), (channels, 1))
    return MvfWeights(k_t, ident, ident.copy())


def output_permutation(channels: int, alpha: float) -> np.ndarray:
    """Index map from input channel order to module output order.

    ``y[:, i]`` is derived from input channel ``perm[i]``: the pass-through
    channels come first, then the multi-view channels.
    """
    c1 = split_count(channels, alpha)
    return np.concatenate([np.arange(c1, channels), np.arange(c1)])


def classify_specialization(cfg: MvfConfig) -> Specialization:
    spatial_off = cfg.beta_h == 0 and cfg.beta_w == 0
    if cfg.alpha == 0:
        return Specialization.C2D
    if cfg.alpha == 1 and spatial_off:
        return Specialization.SLOWONLY_DW
    if math.isclose(cfg.alpha, 0.25) and spatial_off:
        return Specialization.LEARNABLE_TSM
    return Specialization.FULL_MVF
