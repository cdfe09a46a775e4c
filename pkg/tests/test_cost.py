import math

import pytest

from mvfnet.cost import (
    cost_conv2d,
    cost_linear,
    cost_mvf_module,
    cost_network,
    cost_pointwise,
    cost_protocol,
)
from mvfnet.mvf import MvfConfig
from mvfnet.network import MBV2_MVF_STAGES, NetworkSpec, preset


def r50(frames=8, alpha=0.5, stages=(), classes=400):
    return NetworkSpec(preset("r50"), frames=frames, mvf=MvfConfig(alpha=alpha), mvf_stages=set(stages),
                       classes=classes)


def test_unit_conv():
    assert cost_pointwise(1, 1, 1, 1, 1) == (1, 1)


def test_conv_closed_form():
    assert cost_conv2d(64, 64, 3, 56, 56, 1) == (9 * 64 * 64 * 3136, 9 * 64 * 64)
    assert cost_conv2d(64, 64, 3, 56, 56, 1)[0] == 115_605_504
    assert cost_conv2d(8, 8, 3, 4, 4, 1, groups=8) == (9 * 8 * 16, 72)
    assert cost_conv2d(2, 3, 1, 1, 1, 1, bias=True)[1] == 9


def test_fc_params():
    assert cost_linear(2048, 400, bias=False)[1] == 819_200
    assert cost_linear(2048, 400)[1] == 819_600


def test_mvf_module_closed_form():
    assert cost_mvf_module(1024, 0.0, 8, 14, 14) == (0, 0)
    assert cost_mvf_module(1024, 0.5, 8, 14, 14) == (7_225_344, 4_608)


@pytest.mark.parametrize("frames,expected", [(8, 32.88), (4, 16.44)])
def test_r50_baselines(frames, expected):
    g = cost_network(r50(frames, alpha=0.0)).total_gmacs
    assert abs(g / expected - 1) < 0.005


def test_r101_frame_scaling():
    reps = [cost_network(NetworkSpec(preset("r101"), frames=t, mvf=MvfConfig(alpha=1 / 8),
                                     mvf_stages={"res4", "res5"})) for t in (4, 8, 16)]
    for r, expected in zip(reps, (31.36, 62.72, 125.45)):
        assert abs(r.total_gmacs / expected - 1) < 0.005
    # fc MACs are per clip, every other layer scales with frames
    fc = reps[0].per_layer[-1].macs
    assert (reps[1].total_macs - fc) == 2 * (reps[0].total_macs - fc)
    assert (reps[2].total_macs - fc) == 2 * (reps[1].total_macs - fc)
    assert reps[0].total_params == reps[1].total_params == reps[2].total_params


def test_mobilenet():
    g = cost_network(NetworkSpec(preset("mobilenet_v2"), frames=4)).total_gmacs
    assert abs(g / 1.25 - 1) < 0.03
    mvf = cost_network(NetworkSpec(preset("mobilenet_v2"), frames=4, mvf_stages=MBV2_MVF_STAGES))
    assert mvf.mvf_blocks == 4 and mvf.total_macs > cost_network(NetworkSpec(preset("mobilenet_v2"), frames=4)).total_macs


def test_r50_params():
    rep = cost_network(r50(alpha=1 / 8, stages=("res4", "res5")))
    assert abs(rep.total_params_m / 24.3 - 1) < 0.005
    # block inputs: res4.0 sees 512 channels, res5.0 1024, the rest the stage width
    c1 = 5 * round(1024 / 8) + round(512 / 8) + 2 * round(2048 / 8) + round(1024 / 8)
    assert rep.mvf_params == 9 * c1 == 12_096
    assert rep.mvf_params / rep.total_params < 0.0006


def test_empty_stages_equal_plain_backbone():
    a = cost_network(r50(alpha=0.5, stages=()))
    b = cost_network(r50(alpha=0.0, stages=("res2", "res3", "res4", "res5")))
    assert a.total_macs == b.total_macs and a.total_params == b.total_params


def test_per_layer_sums():
    rep = cost_network(r50(stages=("res3", "res4")))
    assert rep.total_macs == sum(l.macs for l in rep.per_layer)
    assert rep.total_params == sum(l.params for l in rep.per_layer)
    assert all(l.macs >= 0 and l.params >= 0 for l in rep.per_layer)


def test_alpha_half_delta_magnitude():
    delta = cost_network(r50(alpha=0.5, stages=("res4", "res5"))).total_gmacs - cost_network(r50(alpha=0.0)).total_gmacs
    assert 0.04 < delta < 0.08


def test_protocol():
    rep = cost_network(r50(alpha=0.0), crops=3, clips=10)
    assert rep.views == 30
    assert math.isclose(cost_protocol(rep, 3, 10), rep.total_gmacs * 30)
    assert cost_protocol(rep, 1, 1) == rep.total_gmacs
    assert "32.9G × 30" in rep.format()
    with pytest.raises(ValueError):
        cost_protocol(rep, 0, 1)


def test_protocol_table3_row():
    rep = cost_network(r50(frames=16, alpha=0.0))
    assert round(rep.total_gmacs, 1) == 65.8
    assert math.isclose(cost_protocol(rep, 3, 2), rep.total_gmacs * 6)


def test_head_classes():
    a, b = cost_network(r50(classes=400)), cost_network(r50(classes=174))
    assert a.total_params - b.total_params == (400 - 174) * 2049


def test_to_dict():
    d = cost_network(r50(alpha=0.0), crops=3, clips=10).to_dict(per_layer=False)
    assert d["protocol"]["views"] == 30 and "per_layer" not in d
