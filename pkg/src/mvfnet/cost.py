"""Analytical multiply-accumulate and parameter counts.

Counting convention (what the FLOPs columns of video-recognition papers
usually report):

* convolutions and fully connected layers: one MAC per multiply-add;
* batch normalization: two per output element (scale and shift), with two
  parameters per channel;
* activations, pooling, shifts, split/concat and additions: free.

Every count is an exact integer; conversion to G/M happens for display.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .network import BackboneSpec, NetworkSpec
from .tensor import split_count


def cost_conv2d(c_in, c_out, k, h_out, w_out, t, groups=1, bias=False) -> tuple[int, int]:
    params = k * k * (c_in // groups) * c_out + (c_out if bias else 0)
    macs = k * k * (c_in // groups) * c_out * h_out * w_out * t
    return macs, params


def cost_pointwise(c_in, c_out, h, w, t, bias=False) -> tuple[int, int]:
    return cost_conv2d(c_in, c_out, 1, h, w, t, bias=bias)


def cost_linear(f_in, f_out, bias=True) -> tuple[int, int]:
    return f_in * f_out, f_in * f_out + (f_out if bias else 0)


def cost_norm(c, h, w, t) -> tuple[int, int]:
    return 2 * c * h * w * t, 2 * c


def cost_mvf_module(c_in, alpha, t, h, w) -> tuple[int, int]:
    """Three 3-tap channel-wise convolutions over ``round(alpha * c_in)`` channels."""
    c1 = split_count(c_in, alpha)
    return 3 * (3 * c1 * t * h * w), 9 * c1


@dataclass
class LayerCost:
    layer: str
    macs: int
    params: int


@dataclass
class CostReport:
    backbone: str
    frames: int
    resolution: int
    alpha: float
    mvf_stages: tuple[str, ...]
    mvf_blocks: int
    classes: int
    per_layer: list[LayerCost] = field(default_factory=list)
    crops: int = 1
    clips: int = 1

    @property
    def total_macs(self) -> int:
        return sum(l.macs for l in self.per_layer)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.per_layer)

    @property
    def total_gmacs(self) -> float:
        return self.total_macs / 1e9

    @property
    def total_params_m(self) -> float:
        return self.total_params / 1e6

    @property
    def mvf_macs(self) -> int:
        return sum(l.macs for l in self.per_layer if l.layer.endswith(".mvf"))

    @property
    def mvf_params(self) -> int:
        return sum(l.params for l in self.per_layer if l.layer.endswith(".mvf"))

    @property
    def views(self) -> int:
        return self.crops * self.clips

    @property
    def protocol_total(self) -> Optional[float]:
        """GMACs over all views, or None for a single view."""
        return cost_protocol(self, self.crops, self.clips) if self.views > 1 else None

    def to_dict(self, per_layer: bool = True) -> dict:
        out = {
            "backbone": self.backbone,
            "frames": self.frames,
            "input_resolution": self.resolution,
            "alpha": self.alpha,
            "mvf_stages": list(self.mvf_stages),
            "mvf_blocks": self.mvf_blocks,
            "classes": self.classes,
            "total_macs": self.total_macs,
            "total_gmacs": round(self.total_gmacs, 6),
            "total_params": self.total_params,
            "total_params_m": round(self.total_params_m, 6),
            "mvf_macs": self.mvf_macs,
            "mvf_params": self.mvf_params,
            "protocol": {
                "crops": self.crops,
                "clips": self.clips,
                "views": self.views,
                "total_gmacs": round(cost_protocol(self, self.crops, self.clips), 6),
            },
        }
        if per_layer:
            out["per_layer"] = [{"layer": l.layer, "macs": l.macs, "params": l.params} for l in self.per_layer]
        return out

    def format(self, per_layer: bool = False) -> str:
        stages = ",".join(self.mvf_stages) or "none"
        lines = [
            f"backbone {self.backbone}  frames {self.frames}  resolution {self.resolution}  "
            f"alpha {self.alpha:g}  stages {stages}  classes {self.classes}",
            f"MVF blocks:  {self.mvf_blocks}",
            f"GMACs/clip:  {self.total_gmacs:.2f}G",
            f"Params:      {self.total_params_m:.1f}M ({self.total_params:,})",
            f"MVF overhead: {self.mvf_macs / 1e9:.4f}G MACs, {self.mvf_params:,} params",
        ]
        if self.views > 1:
            lines.append(f"Protocol:    {self.total_gmacs:.1f}G × {self.views} "
                         f"({self.crops} crops x {self.clips} clips) = {cost_protocol(self, self.crops, self.clips):.1f}G")
        if per_layer:
            lines.append("")
            lines.extend(f"  {l.layer:<28} {l.macs:>14,} {l.params:>12,}" for l in self.per_layer)
        return "\n".join(lines)


def cost_protocol(report: CostReport, crops: int, clips: int) -> float:
    if crops < 1 or clips < 1:
        raise ValueError("crops and clips must be >= 1")
    return report.total_gmacs * crops * clips


def _out(size: int, k: int, stride: int) -> int:
    return (size + 2 * (k // 2) - k) // stride + 1


class _Acc:
    def __init__(self):
        self.rows: list[LayerCost] = []

    def add(self, name: str, cost: tuple[int, int]) -> None:
        self.rows.append(LayerCost(name, *cost))


def _stem(bb: BackboneSpec, acc: _Acc, res: int, t: int) -> int:
    s = bb.stem
    h = _out(res, s.kernel, s.stride)
    acc.add("stem.conv", cost_conv2d(s.in_channels, s.out_channels, s.kernel, h, h, t))
    acc.add("stem.bn", cost_norm(s.out_channels, h, h, t))
    if s.pool == "max3x3":
        h = _out(h, 3, 2)
    elif s.pool == "avg2x2":
        h //= 2
    return h


def cost_network(spec: NetworkSpec, crops: int = 1, clips: int = 1) -> CostReport:
    """Per-clip cost of ``spec`` (``frames`` frames at ``input_resolution``)."""
    bb, t, cfg = spec.backbone, spec.frames, spec.mvf
    acc = _Acc()
    h = _stem(bb, acc, spec.input_resolution, t)
    c = bb.stem.out_channels
    for stage in bb.stages:
        for b in range(stage.blocks):
            name = f"{stage.name}.{b}"
            c_in = stage.in_channels if b == 0 else stage.out_channels
            stride = stage.spatial_stride if b == 0 else 1
            if stage.name in spec.mvf_stages:
                acc.add(f"{name}.mvf", cost_mvf_module(c_in, cfg.alpha, t, h, h))
            ho = _out(h, 3, stride)
            mid, c_out = stage.bottleneck_channels, stage.out_channels
            if stage.expansion:
                mid = c_in * stage.expansion
                if stage.expansion != 1:
                    acc.add(f"{name}.expand", cost_pointwise(c_in, mid, h, h, t))
                    acc.add(f"{name}.expand_bn", cost_norm(mid, h, h, t))
                acc.add(f"{name}.depthwise", cost_conv2d(mid, mid, 3, ho, ho, t, groups=mid))
                acc.add(f"{name}.depthwise_bn", cost_norm(mid, ho, ho, t))
                acc.add(f"{name}.project", cost_pointwise(mid, c_out, ho, ho, t))
                acc.add(f"{name}.project_bn", cost_norm(c_out, ho, ho, t))
            else:
                acc.add(f"{name}.conv1", cost_pointwise(c_in, mid, h, h, t))
                acc.add(f"{name}.bn1", cost_norm(mid, h, h, t))
                acc.add(f"{name}.conv2", cost_conv2d(mid, mid, 3, ho, ho, t))
                acc.add(f"{name}.bn2", cost_norm(mid, ho, ho, t))
                acc.add(f"{name}.conv3", cost_pointwise(mid, c_out, ho, ho, t))
                acc.add(f"{name}.bn3", cost_norm(c_out, ho, ho, t))
                if stride != 1 or c_in != c_out:
                    acc.add(f"{name}.shortcut", cost_pointwise(c_in, c_out, ho, ho, t))
                    acc.add(f"{name}.shortcut_bn", cost_norm(c_out, ho, ho, t))
            h, c = ho, c_out
    if bb.head_conv:
        acc.add("head.conv", cost_pointwise(c, bb.head_conv, h, h, t))
        acc.add("head.bn", cost_norm(bb.head_conv, h, h, t))
    acc.add("fc", cost_linear(bb.feature_channels, spec.classes))
    return CostReport(
        backbone=bb.name,
        frames=t,
        resolution=spec.input_resolution,
        alpha=cfg.alpha,
        mvf_stages=tuple(n for n in bb.stage_names if n in spec.mvf_stages),
        mvf_blocks=spec.mvf_block_count(),
        classes=spec.classes,
        per_layer=acc.rows,
        crops=crops,
        clips=clips,
    )
