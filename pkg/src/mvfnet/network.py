"""Backbone presets, network specs and the executable network."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import ops
from .errors import DomainError, ShapeError
from .layers import Bottleneck, Conv3x3, Layer, MvfLayer, Norm, ReLU
from .mvf import MvfConfig
from .tensor import check_video

STAGE_NAMES = ("res2", "res3", "res4", "res5")


@dataclass(frozen=True)
class StemSpec:
    kernel: int
    in_channels: int
    out_channels: int
    stride: int
    pool: Optional[str]  # "max3x3" (ResNet, stride 2) or "avg2x2" after the stem conv


@dataclass(frozen=True)
class StageSpec:
    name: str
    blocks: int
    in_channels: int
    bottleneck_channels: int  # hidden width; inverted residuals use expansion * block input
    out_channels: int
    spatial_stride: int
    expansion: int = 0  # > 0 marks an inverted-residual (MobileNet-V2) stage


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    stem: StemSpec
    stages: tuple[StageSpec, ...]
    feature_channels: int  # channels entering the classifier
    head_conv: Optional[int] = None  # final 1x1 conv width (MobileNet-V2)
    resolution: int = 224
    executable: bool = False

    def stage(self, name: str) -> StageSpec:
        for s in self.stages:
            if s.name == name:
                return s
        raise DomainError(f"backbone {self.name} has no stage {name!r}")

    @property
    def stage_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.stages)


def _resnet(name: str, blocks: tuple[int, int, int, int]) -> BackboneSpec:
    stages = []
    c_in = 64
    for i, (n, mid, out) in enumerate(zip(blocks, (64, 128, 256, 512), (256, 512, 1024, 2048))):
        stages.append(StageSpec(STAGE_NAMES[i], n, c_in, mid, out, 1 if i == 0 else 2))
        c_in = out
    return BackboneSpec(name, StemSpec(7, 3, 64, 2, "max3x3"), tuple(stages), 2048)


_MBV2_TABLE = ((1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1))


def _mobilenet_v2() -> BackboneSpec:
    stages = []
    c_in = 32
    for i, (t, c, n, s) in enumerate(_MBV2_TABLE):
        stages.append(StageSpec(f"ir{i + 1}", n, c_in, c_in * t, c, s, expansion=t))
        c_in = c
    return BackboneSpec("mobilenet_v2", StemSpec(3, 3, 32, 2, None), tuple(stages), 1280, head_conv=1280)


def _tiny() -> BackboneSpec:
    stages = (
        StageSpec("res2", 2, 16, 8, 16, 1),
        StageSpec("res3", 2, 16, 16, 32, 2),
        StageSpec("res4", 2, 32, 32, 64, 2),
    )
    return BackboneSpec("tiny", StemSpec(3, 1, 16, 2, "avg2x2"), stages, 64, resolution=32, executable=True)


PRESETS = {
    "r50": lambda: _resnet("r50", (3, 4, 6, 3)),
    "r101": lambda: _resnet("r101", (3, 4, 23, 3)),
    "mobilenet_v2": _mobilenet_v2,
    "tiny": _tiny,
}

# MobileNet-V2 has no res stages; MVF goes into the last two stages' blocks.
MBV2_MVF_STAGES = frozenset({"ir6", "ir7"})


def preset(name: str) -> BackboneSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise DomainError(f"unknown backbone {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class NetworkSpec:
    backbone: BackboneSpec
    frames: int = 8
    mvf: MvfConfig = field(default_factory=MvfConfig)
    mvf_stages: frozenset = frozenset()
    classes: int = 400
    input_resolution: Optional[int] = None

    def __post_init__(self):
        if self.frames < 1:
            raise DomainError(f"frames must be >= 1, got {self.frames}")
        if self.classes < 1:
            raise DomainError(f"classes must be >= 1, got {self.classes}")
        object.__setattr__(self, "mvf_stages", frozenset(self.mvf_stages))
        unknown = self.mvf_stages - set(self.backbone.stage_names)
        if unknown:
            raise DomainError(f"stages {sorted(unknown)} not in backbone {self.backbone.name}")
        if self.input_resolution is None:
            object.__setattr__(self, "input_resolution", self.backbone.resolution)

    @property
    def alpha(self) -> float:
        return self.mvf.alpha

    def mvf_block_count(self) -> int:
        return sum(s.blocks for s in self.backbone.stages if s.name in self.mvf_stages)

    def with_mvf(self, **changes) -> "NetworkSpec":
        return replace(self, mvf=replace(self.mvf, **changes))


def parse_stages(text: str) -> frozenset:
    """``"res4,res5"`` -> {"res4", "res5"}; ``"none"`` or ``""`` -> empty."""
    text = text.strip()
    if text.lower() in ("", "none"):
        return frozenset()
    return frozenset(s.strip() for s in text.split(",") if s.strip())


def _seed_sequence(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=key)


class Network(Layer):
    """Stem, residual stages, global average pool and a linear classifier.

    Backbone weights come from one random stream and each MVF module from
    its own stream, so a network with ``alpha = 0`` carries exactly the
    weights of the same-seed network without MVF modules.
    """

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32, zero_init_residual=False):
        super().__init__()
        bb = spec.backbone
        if not bb.executable:
            raise DomainError(f"backbone {bb.name!r} is descriptor-only; use the cost model")
        if bb.stem.kernel != 3 or bb.stem.pool != "avg2x2":
            raise DomainError(f"backbone {bb.name!r} has no executable stem")
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(_seed_sequence(seed, 0))
        self.stem_conv = Conv3x3(bb.stem.in_channels, bb.stem.out_channels, bb.stem.stride, rng, dtype)
        self.stem_bn = Norm(bb.stem.out_channels, dtype)
        self.stem_relu = ReLU()
        self.blocks: list[tuple[str, Bottleneck]] = []
        index = 0
        for stage in bb.stages:
            for b in range(stage.blocks):
                c_in = stage.in_channels if b == 0 else stage.out_channels
                stride = stage.spatial_stride if b == 0 else 1
                mvf = None
                if stage.name in spec.mvf_stages:
                    mvf = MvfLayer(spec.mvf, c_in, _seed_sequence(seed, 1, index), dtype)
                block = Bottleneck(c_in, stage.bottleneck_channels, stage.out_channels, stride, rng, dtype,
                                   mvf=mvf, zero_init_residual=zero_init_residual)
                self.blocks.append((f"{stage.name}.{b}", block))
                index += 1
        self.params["fc.w"] = (rng.standard_normal((spec.classes, bb.feature_channels)) * 0.01).astype(dtype)
        self.params["fc.b"] = np.zeros(spec.classes, dtype=dtype)
        self.no_decay = ("fc.b",)

    def children(self):
        out = {"stem.conv": self.stem_conv, "stem.bn": self.stem_bn}
        out.update(dict(self.blocks))
        return out

    def mvf_layers(self) -> list[MvfLayer]:
        return [b.mvf for _, b in self.blocks if b.mvf is not None]

    def features(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Activations entering the global pool, shape (n, c, t, h', w')."""
        h = self.stem_relu.forward(self.stem_bn.forward(self.stem_conv.forward(x, training), training), training)
        self._stem_shape = h.shape
        h = ops.avg_pool2x2(h)
        for _, block in self.blocks:
            h = block.forward(h, training)
        return h

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        check_video(x)
        spec = self.spec
        want = (spec.backbone.stem.in_channels, spec.frames, spec.input_resolution, spec.input_resolution)
        if x.shape[1:] != want:
            raise ShapeError(f"expected clips of shape (n, {', '.join(map(str, want))}), got {x.shape}")
        if x.dtype != self.dtype:
            raise ShapeError(f"network dtype {self.dtype} != input dtype {x.dtype}")
        h = self.features(x, training)
        self._feat_shape = h.shape
        self._pooled = ops.global_avg_pool(h)
        return ops.linear(self._pooled, self.params["fc.w"], self.params["fc.b"])

    def backward(self, d_logits: np.ndarray, input_grad: bool = True) -> Optional[np.ndarray]:
        """Fills ``grads`` of every layer; returns d(input) unless ``input_grad`` is off."""
        d_pool, d_w, d_b = ops.linear_backward(self._pooled, self.params["fc.w"], d_logits)
        self.grads["fc.w"], self.grads["fc.b"] = d_w, d_b
        d = ops.global_avg_pool_backward(self._feat_shape, d_pool)
        for _, block in reversed(self.blocks):
            d = block.backward(d)
        d = self.stem_relu.backward(ops.avg_pool2x2_backward(d))
        return self.stem_conv.backward(self.stem_bn.backward(d), need_input=input_grad)

    def parameters(self) -> dict[str, np.ndarray]:
        return self.named_tensors(kind="params")

    def gradients(self) -> dict[str, np.ndarray]:
        return self.named_tensors(kind="grads")

    def state(self) -> dict[str, np.ndarray]:
        """Parameters and buffers, keyed by dotted name."""
        out = self.named_tensors(kind="params")
        out.update(self.named_tensors(kind="buffers"))
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        own = self.state()
        if set(own) != set(tensors):
            missing, extra = sorted(set(own) - set(tensors)), sorted(set(tensors) - set(own))
            raise ShapeError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, dst in own.items():
            src = tensors[name]
            if src.shape != dst.shape:
                raise ShapeError(f"{name}: expected shape {dst.shape}, got {src.shape}")
            dst[...] = src


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32, zero_init_residual=False) -> Network:
    """Executable network for ``spec``; descriptor-only backbones raise."""
    return Network(spec, seed=seed, dtype=dtype, zero_init_residual=zero_init_residual)


def network_forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Eval-mode logits for a batch of clips."""
    return net.forward(batch, training=False)
