"""Stateful layers wrapping the kernels in :mod:`mvfnet.ops`.

Each layer caches what its backward pass needs during ``forward`` and
writes parameter gradients into ``self.grads`` during ``backward``.
Parameters live in ``self.params``; non-trained state (running statistics)
lives in ``self.buffers``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import ops
from .mvf import MvfConfig, MvfWeights, init_gaussian, mvf_backward, mvf_forward


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, d_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> dict[str, "Layer"]:
        return {}

    def named_tensors(self, prefix: str = "", kind: str = "params") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in getattr(self, kind).items()}
        for name, child in self.children().items():
            out.update(child.named_tensors(f"{prefix}{name}.", kind))
        return out

    def no_decay_names(self, prefix: str = "") -> set[str]:
        names = {prefix + k for k in getattr(self, "no_decay", ())}
        for name, child in self.children().items():
            names |= child.no_decay_names(f"{prefix}{name}.")
        return names


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv3x3(Layer):
    def __init__(self, c_in, c_out, stride, rng, dtype):
        super().__init__()
        self.stride = stride
        self.params["w"] = he_normal(rng, (c_out, c_in, 3, 3), 9 * c_in, dtype)

    def forward(self, x, training=False):
        self._x = x
        self._cols = ops._im2col(x, self.stride)
        return ops.conv2d_spatial(x, self.params["w"], self.stride, cols=self._cols)

    def backward(self, d_out, need_input=True):
        d_x, d_w = ops.conv2d_spatial_backward(
            self._x, self.params["w"], self.stride, d_out, cols=self._cols, need_input=need_input
        )
        self.grads["w"] = d_w
        return d_x


class Conv1x1(Layer):
    """Pointwise convolution; stride 2 subsamples rows and columns first."""

    def __init__(self, c_in, c_out, rng, dtype, stride=1):
        super().__init__()
        self.stride = stride
        self.params["w"] = he_normal(rng, (c_out, c_in), c_in, dtype)

    def forward(self, x, training=False):
        self._shape = x.shape
        if self.stride > 1:
            x = np.ascontiguousarray(x[:, :, :, :: self.stride, :: self.stride])
        self._x = x
        return ops.conv_pointwise(x, self.params["w"])

    def backward(self, d_out):
        d_x, d_w, _ = ops.conv_pointwise_backward(self._x, self.params["w"], d_out)
        self.grads["w"] = d_w
        if self.stride > 1:
            full = np.zeros(self._shape, dtype=d_x.dtype)
            full[:, :, :, :: self.stride, :: self.stride] = d_x
            d_x = full
        return d_x


class Norm(Layer):
    no_decay = ("gamma", "beta")

    def __init__(self, c, dtype, gamma=1.0):
        super().__init__()
        self.params["gamma"] = np.full(c, gamma, dtype=dtype)
        self.params["beta"] = np.zeros(c, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)

    def forward(self, x, training=False):
        self._training = training
        y, self._cache = ops.norm_affine(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"], training,
        )
        return y

    def backward(self, d_out):
        d_x, d_g, d_b = ops.norm_affine_backward(self._cache, self.params["gamma"], d_out, self._training)
        self.grads["gamma"], self.grads["beta"] = d_g, d_b
        return d_x.astype(d_out.dtype, copy=False)


class ReLU(Layer):
    def forward(self, x, training=False):
        self._x = x
        return np.maximum(x, 0)

    def backward(self, d_out):
        return ops.relu_backward(self._x, d_out)


class MvfLayer(Layer):
    """The multi-view fusion module as a trainable layer."""

    no_decay = ("beta",)

    def __init__(self, cfg: MvfConfig, channels: int, seed, dtype, std=0.01):
        super().__init__()
        self.cfg = cfg
        self.channels = channels
        w = init_gaussian(cfg, channels, std=std, seed=seed, dtype=dtype)
        self.params.update(k_t=w.k_t, k_h=w.k_h, k_w=w.k_w)
        if cfg.learnable_beta:
            self.params["beta"] = np.array(cfg.betas, dtype=dtype)

    @property
    def weights(self) -> MvfWeights:
        return MvfWeights(self.params["k_t"], self.params["k_h"], self.params["k_w"])

    def current_config(self) -> MvfConfig:
        if "beta" in self.params:
            return self.cfg.with_betas(*(float(b) for b in self.params["beta"]))
        return self.cfg

    def forward(self, x, training=False):
        self._trace = mvf_forward(x, self.current_config(), self.weights)
        return self._trace.y

    def backward(self, d_out):
        g = mvf_backward(self._trace, self.current_config(), self.weights, d_out)
        self.grads.update(k_t=g.d_weights.k_t, k_h=g.d_weights.k_h, k_w=g.d_weights.k_w)
        if g.d_beta is not None:
            self.grads["beta"] = g.d_beta
        return g.d_x


class Bottleneck(Layer):
    """Residual bottleneck; an optional MVF module precedes the first conv.

    Residual branch: [mvf] -> 1x1 -> norm -> relu -> 3x3(stride) -> norm
    -> relu -> 1x1 -> norm. Output: relu(branch + shortcut), where the
    shortcut is a strided 1x1 projection plus norm when shapes change.
    """

    def __init__(self, c_in, c_mid, c_out, stride, rng, dtype, mvf: Optional[MvfLayer] = None,
                 zero_init_residual=False):
        super().__init__()
        self.mvf = mvf
        self.conv1 = Conv1x1(c_in, c_mid, rng, dtype)
        self.bn1 = Norm(c_mid, dtype)
        self.relu1 = ReLU()
        self.conv2 = Conv3x3(c_mid, c_mid, stride, rng, dtype)
        self.bn2 = Norm(c_mid, dtype)
        self.relu2 = ReLU()
        self.conv3 = Conv1x1(c_mid, c_out, rng, dtype)
        self.bn3 = Norm(c_out, dtype, gamma=0.0 if zero_init_residual else 1.0)
        self.shortcut = None
        if stride != 1 or c_in != c_out:
            self.shortcut = Conv1x1(c_in, c_out, rng, dtype, stride=stride)
            self.shortcut_bn = Norm(c_out, dtype)
        self.out_relu = ReLU()

    def _branch(self):
        layers = [self.conv1, self.bn1, self.relu1, self.conv2, self.bn2, self.relu2, self.conv3, self.bn3]
        return ([self.mvf] if self.mvf is not None else []) + layers

    def children(self):
        names = ["conv1", "bn1", "conv2", "bn2", "conv3", "bn3"]
        out = {"mvf": self.mvf} if self.mvf is not None else {}
        out.update({n: getattr(self, n) for n in names})
        if self.shortcut is not None:
            out.update(shortcut=self.shortcut, shortcut_bn=self.shortcut_bn)
        return out

    def forward(self, x, training=False):
        h = x
        for layer in self._branch():
            h = layer.forward(h, training)
        s = x
        if self.shortcut is not None:
            s = self.shortcut_bn.forward(self.shortcut.forward(x, training), training)
        return self.out_relu.forward(h + s, training)

    def backward(self, d_out):
        d = self.out_relu.backward(d_out)
        d_s = d
        if self.shortcut is not None:
            d_s = self.shortcut.backward(self.shortcut_bn.backward(d))
        for layer in reversed(self._branch()):
            d = layer.backward(d)
        return d + d_s


def mvf_block_forward(x: np.ndarray, block: Bottleneck, training: bool = False) -> np.ndarray:
    """``residual_block(mvf(x))`` for a built :class:`Bottleneck`."""
    return block.forward(x, training)
