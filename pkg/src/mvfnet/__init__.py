"""Multi-view fusion networks: kernels, gradient checks, cost model and desk-scale training."""

from .cost import CostReport, cost_network, cost_protocol
from .errors import DomainError, MvfError, ShapeError
from .mvf import (
    MvfConfig,
    MvfWeights,
    Specialization,
    as_fixed_shift_weights,
    classify_specialization,
    init_gaussian,
    mvf_backward,
    mvf_forward,
    tsm_shift,
)
from .network import NetworkSpec, build_network, network_forward, preset
from .tensor import concat_channels, split_channels

__version__ = "0.1.0"

__all__ = [
    "CostReport", "cost_network", "cost_protocol",
    "DomainError", "MvfError", "ShapeError",
    "MvfConfig", "MvfWeights", "Specialization", "as_fixed_shift_weights", "classify_specialization",
    "init_gaussian", "mvf_backward", "mvf_forward", "tsm_shift",
    "NetworkSpec", "build_network", "network_forward", "preset",
    "concat_channels", "split_channels",
]
