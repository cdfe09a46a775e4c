"""JSON configuration documents (strict: unknown keys are errors).

Sections and defaults::

    network: backbone "tiny", frames 8, mvf_stages ["res2", "res3"],
             classes (must equal the task's class count),
             input_resolution (must equal task.resolution)
    mvf:     alpha 0.5, beta_t/beta_h/beta_w 1.0, activation "relu",
             learnable_beta false
    train:   base_lr 0.01, momentum 0.9, weight_decay 1e-4, epochs 30,
             decay_epochs [18, 24, 27], decay_factor 10, batch_size 8,
             seed 0, train_clips 2000, val_clips 400
    eval:    clips_per_video 1, crops "center1", videos 400, seed 7
    task:    kind "full_eight", resolution 32, frames (network frames),
             size_range [5, 9], speed_range [1.5, 2.5],
             intensity_range [0.6, 1.0], fade_start_range [0.2, 0.5],
             noise_std 0.05
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Union

from .data import SyntheticTask
from .errors import MvfError
from .mvf import MvfConfig
from .network import NetworkSpec, preset
from .train import EvalProtocol, TrainConfig


class ConfigError(MvfError):
    pass


SECTIONS = ("network", "mvf", "train", "eval", "task")

_NETWORK_KEYS = {"backbone", "frames", "mvf_stages", "classes", "input_resolution"}
_EVAL_KEYS = {"clips_per_video", "crops", "videos", "seed"}


@dataclass(frozen=True)
class ConfigDocument:
    network: NetworkSpec
    task: SyntheticTask
    train: TrainConfig
    eval: EvalProtocol
    eval_videos: int = 400
    eval_seed: int = 7

    def to_dict(self) -> dict:
        net, mvf = self.network, self.network.mvf
        return {
            "network": {
                "backbone": net.backbone.name,
                "frames": net.frames,
                "mvf_stages": sorted(net.mvf_stages),
                "classes": net.classes,
                "input_resolution": net.input_resolution,
            },
            "mvf": dataclasses.asdict(mvf),
            "train": {**dataclasses.asdict(self.train), "decay_epochs": list(self.train.decay_epochs)},
            "eval": {
                "clips_per_video": self.eval.clips_per_video,
                "crops": self.eval.crops,
                "videos": self.eval_videos,
                "seed": self.eval_seed,
            },
            "task": {
                k: (list(v) if isinstance(v, tuple) else v) for k, v in dataclasses.asdict(self.task).items()
            },
        }


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _section(doc: dict, name: str, allowed: set[str]) -> dict:
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    return dict(sec)


def _as_tuple(sec: dict, *keys: str) -> dict:
    for k in keys:
        if k in sec:
            if not isinstance(sec[k], list):
                raise ConfigError(f"{k} must be a list")
            sec[k] = tuple(sec[k])
    return sec


def parse_config(doc: Any) -> ConfigDocument:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    try:
        net = _section(doc, "network", _NETWORK_KEYS)
        mvf = MvfConfig(**_section(doc, "mvf", _field_names(MvfConfig)))
        train = TrainConfig(**_as_tuple(_section(doc, "train", _field_names(TrainConfig)), "decay_epochs"))
        task_sec = _as_tuple(
            _section(doc, "task", _field_names(SyntheticTask)),
            "size_range", "speed_range", "intensity_range", "fade_start_range",
        )
        frames = net.get("frames", task_sec.get("frames", 8))
        task_sec.setdefault("frames", frames)
        if task_sec["frames"] != frames:
            raise ConfigError(f"task.frames {task_sec['frames']} != network.frames {frames}")
        task = SyntheticTask(**task_sec)
        ev = _section(doc, "eval", _EVAL_KEYS)
        protocol = EvalProtocol(ev.get("clips_per_video", 1), ev.get("crops", "center1"), task.resolution)
        stages = net.get("mvf_stages", ["res2", "res3"])
        if not isinstance(stages, list):
            raise ConfigError("network.mvf_stages must be a list")
        if net.get("classes") not in (None, task.num_classes):
            raise ConfigError(f"network.classes {net['classes']} != {task.num_classes} classes of task {task.kind}")
        if net.get("input_resolution") not in (None, task.resolution):
            raise ConfigError(f"network.input_resolution {net['input_resolution']} != task.resolution {task.resolution}")
        backbone = preset(net.get("backbone", "tiny"))
        if not backbone.executable:
            raise ConfigError(f"backbone {backbone.name!r} is descriptor-only and cannot be trained")
        spec = NetworkSpec(
            backbone=backbone,
            frames=frames,
            mvf=mvf,
            mvf_stages=frozenset(stages),
            classes=task.num_classes,
            input_resolution=task.resolution,
        )
        return ConfigDocument(spec, task, train, protocol, ev.get("videos", 400), ev.get("seed", 7))
    except ConfigError:
        raise
    except (TypeError, ValueError, MvfError) as e:
        raise ConfigError(str(e)) from e


def load_config(path: Union[str, Path]) -> ConfigDocument:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}") from e
    return parse_config(doc)
