import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvfnet.errors import DomainError, ShapeError
from mvfnet.gradcheck import gradcheck_stats, projection_terms
from mvfnet.layers import Bottleneck, MvfLayer
from mvfnet.mvf import (
    BACKWARD_SHIFT_TAPS,
    FORWARD_SHIFT_TAPS,
    MvfConfig,
    MvfWeights,
    Specialization,
    as_fixed_shift_weights,
    classify_specialization,
    init_gaussian,
    mvf_backward,
    mvf_forward,
    output_permutation,
    tsm_shift,
)


def identity_weights(c, dtype=np.float64):
    k = np.tile(np.array([0.0, 1.0, 0.0], dtype=dtype), (c, 1))
    return MvfWeights(k, k.copy(), k.copy())


def random_weights(rng, c, scale=1.0):
    return MvfWeights(*(rng.standard_normal((3, c, 3)) * scale))


def test_alpha_zero_is_identity(rng):
    x = rng.standard_normal((2, 6, 3, 4, 4))
    cfg = MvfConfig(alpha=0.0)
    tr = mvf_forward(x, cfg, MvfWeights(*(np.zeros((3, 0, 3)))))
    np.testing.assert_array_equal(tr.y, x)
    d = rng.standard_normal(x.shape)
    np.testing.assert_array_equal(mvf_backward(tr, cfg, MvfWeights(*(np.zeros((3, 0, 3)))), d).d_x, d)


def test_zero_betas(rng):
    x = rng.standard_normal((2, 4, 3, 4, 4))
    tr = mvf_forward(x, MvfConfig(alpha=0.5, beta_t=0, beta_h=0, beta_w=0), random_weights(rng, 2))
    assert not tr.o1.any()
    np.testing.assert_array_equal(tr.y[:, :2], x[:, 2:])


def test_identity_kernels_all_ones():
    x = np.ones((1, 2, 4, 4, 4))
    tr = mvf_forward(x, MvfConfig(alpha=0.5), identity_weights(1))
    np.testing.assert_array_equal(tr.o1, 3.0)
    np.testing.assert_array_equal(tr.y[:, 0], 1.0)
    np.testing.assert_array_equal(tr.y[:, 1], 3.0)


def test_forward_matches_naive_oracle(rng):
    from mvfnet.ops import Axis, conv1d_channelwise_reference
    x = rng.standard_normal((2, 6, 3, 4, 5))
    w = random_weights(rng, 3)
    cfg = MvfConfig(alpha=0.5, beta_t=0.5, beta_h=2.0, beta_w=-1.0)
    o = [conv1d_channelwise_reference(x[:, :3], k, a) for k, a in zip(w.kernels(), Axis)]
    fused = 0.5 * o[0] + 2.0 * o[1] - 1.0 * o[2]
    np.testing.assert_allclose(mvf_forward(x, cfg, w).y, np.concatenate([x[:, 3:], np.maximum(fused, 0)], 1),
                               rtol=1e-12, atol=1e-12)


def test_weight_channel_mismatch(rng):
    with pytest.raises(ShapeError):
        mvf_forward(rng.standard_normal((1, 8, 2, 2, 2)), MvfConfig(alpha=0.5), identity_weights(3))


def test_config_domain():
    with pytest.raises(DomainError):
        MvfConfig(alpha=1.2)
    with pytest.raises(DomainError):
        MvfConfig(activation="tanh")


@given(seed=st.integers(0, 2**16), c=st.integers(1, 9), alpha=st.floats(0, 1),
       act=st.sampled_from(["relu", "identity"]))
def test_shape_preserved(seed, c, alpha, act):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, c, 3, 2, 3))
    cfg = MvfConfig(alpha=alpha, activation=act)
    w = init_gaussian(cfg, c, std=1.0, seed=seed)
    assert mvf_forward(x, cfg, w).y.shape == x.shape


def test_view_additivity(rng):
    x = rng.standard_normal((2, 4, 3, 4, 4))
    w = random_weights(rng, 2)
    base = MvfConfig(alpha=0.5, activation="identity")
    one = mvf_forward(x, base, w)
    two = mvf_forward(x, base.with_betas(2.0, 1.0, 1.0), w)
    np.testing.assert_allclose(two.o1 - one.o1, one.o_t, rtol=1e-12, atol=1e-12)


def test_temporal_only_equivariant_in_space(rng):
    x = rng.standard_normal((1, 4, 4, 5, 6))
    cfg = MvfConfig(alpha=1.0, beta_t=1.0, beta_h=0.0, beta_w=0.0)
    w = random_weights(rng, 4)
    ph, pw = rng.permutation(5), rng.permutation(6)
    y = mvf_forward(x, cfg, w).y
    y_perm = mvf_forward(np.ascontiguousarray(x[:, :, :, ph][:, :, :, :, pw]), cfg, w).y
    np.testing.assert_array_equal(y_perm, y[:, :, :, ph][:, :, :, :, pw])


def test_backward_identity_kernels_center_tap(rng):
    x = rng.standard_normal((2, 4, 3, 4, 4))
    cfg = MvfConfig(alpha=0.5, activation="identity")
    w = identity_weights(2)
    tr = mvf_forward(x, cfg, w)
    d_y = rng.standard_normal(x.shape)
    g = mvf_backward(tr, cfg, w, d_y)
    d_o1 = d_y[:, 2:]
    expected = np.sum(d_o1 * x[:, :2], axis=(0, 2, 3, 4))
    for k in g.d_weights.kernels():
        np.testing.assert_allclose(k[:, 1], expected, rtol=1e-12)


@pytest.mark.parametrize("act", ["relu", "identity"])
@pytest.mark.parametrize("learnable", [False, True])
def test_mvf_gradcheck(rng, act, learnable):
    x = rng.standard_normal((2, 6, 3, 4, 4))
    ks = list(rng.standard_normal((3, 3, 3)) * 0.5)
    beta = np.array([1.0, 0.6, 1.4])
    probe = rng.standard_normal(x.shape)
    cfg = MvfConfig(alpha=0.5, activation=act, learnable_beta=learnable)
    seen = {}

    def op(x, k_t, k_h, k_w, beta):
        c = cfg.with_betas(*beta)
        w = MvfWeights(k_t, k_h, k_w)
        tr = mvf_forward(x, c, w)
        seen["mask"] = (tr.fused > 0).tobytes()
        g = mvf_backward(tr, c, w, probe)
        assert (g.d_beta is not None) == learnable
        return projection_terms(tr.y, probe), [g.d_x, *g.d_weights.kernels(), g.d_beta]

    stats = gradcheck_stats(op, [x, *ks, beta], pattern=lambda: seen["mask"])
    assert stats.checked > 400 and stats.max_rel_err < 1e-5


def test_init_gaussian():
    cfg = MvfConfig(alpha=1.0)
    a = init_gaussian(cfg, 3334, std=0.01, seed=5)
    b = init_gaussian(cfg, 3334, std=0.01, seed=5)
    for ka, kb in zip(a.kernels(), b.kernels()):
        np.testing.assert_array_equal(ka, kb)
    taps = np.concatenate([k.ravel() for k in a.kernels()])
    n = taps.size
    assert n >= 10_000
    assert abs(taps.mean()) < 4 * 0.01 / np.sqrt(n)
    assert abs(taps.std() - 0.01) < 0.05 * 0.01
    assert a.channels == 3334


@pytest.mark.parametrize("std", [0.0, -1.0])
def test_init_gaussian_rejects_std(std):
    with pytest.raises(DomainError):
        init_gaussian(MvfConfig(), 8, std=std)


def test_tsm_shift_examples():
    x = np.tile(np.arange(1.0, 5.0), (1, 4, 1)).reshape(1, 4, 4, 1, 1)
    y = tsm_shift(x, 0.5)[0, :, :, 0, 0]
    np.testing.assert_array_equal(y[0], [0, 1, 2, 3])
    np.testing.assert_array_equal(y[1], [2, 3, 4, 0])
    np.testing.assert_array_equal(y[2:], x[0, 2:, :, 0, 0])
    np.testing.assert_array_equal(tsm_shift(x, 0.0), x)


def test_tsm_shift_errors(rng):
    x = rng.standard_normal((1, 4, 3, 2, 2))
    with pytest.raises(DomainError):
        tsm_shift(x, 1.5)
    with pytest.raises(DomainError):
        tsm_shift(x, 0.25)  # one shifted channel cannot split into two halves


def test_double_shift_composition(rng):
    x = rng.standard_normal((1, 2, 6, 2, 2))
    fwd = as_fixed_shift_weights(1, 0.0)
    fwd.k_t[:] = FORWARD_SHIFT_TAPS
    bwd = as_fixed_shift_weights(1, 0.0)
    bwd.k_t[:] = BACKWARD_SHIFT_TAPS
    cfg = MvfConfig(alpha=1.0, beta_t=1, beta_h=0, beta_w=0, activation="identity")
    x1 = x[:, :1]
    y = mvf_forward(mvf_forward(x1, cfg, fwd).y, cfg, bwd).y
    np.testing.assert_array_equal(y[:, :, :-1], x1[:, :, :-1])
    assert not y[:, :, -1].any()


@given(seed=st.integers(0, 2**16), c=st.sampled_from([6, 7, 8, 16]), t=st.integers(1, 8),
       h=st.integers(1, 5), w=st.integers(1, 5), n=st.integers(1, 2))
def test_fixed_shift_equals_tsm(seed, c, t, h, w, n):
    x = np.random.default_rng(seed).standard_normal((n, c, t, h, w))
    cfg = MvfConfig(alpha=1.0, beta_t=1.0, beta_h=0.0, beta_w=0.0, activation="identity")
    assert np.array_equal(mvf_forward(x, cfg, as_fixed_shift_weights(c, 0.25)).y, tsm_shift(x, 0.25))


@given(seed=st.integers(0, 2**16), c=st.sampled_from([6, 7, 8, 16]))
def test_learnable_tsm_configuration(seed, c):
    x = np.random.default_rng(seed).standard_normal((2, c, 5, 3, 3))
    cfg = MvfConfig(alpha=0.25, beta_t=1.0, beta_h=0.0, beta_w=0.0, activation="identity")
    assert classify_specialization(cfg) is Specialization.LEARNABLE_TSM
    c1 = round(c / 4 + 1e-9)
    y = mvf_forward(x, cfg, as_fixed_shift_weights(c1, 1.0)).y
    assert np.array_equal(y, tsm_shift(x, 0.25)[:, output_permutation(c, 0.25)])


def test_fixed_shift_identity_only(rng):
    x = rng.standard_normal((1, 4, 3, 2, 2))
    cfg = MvfConfig(alpha=1.0, beta_t=1.0, beta_h=0.0, beta_w=0.0, activation="identity")
    np.testing.assert_array_equal(mvf_forward(x, cfg, as_fixed_shift_weights(4, 0.0)).y, x)


def test_fixed_shift_needs_two_channels():
    with pytest.raises(DomainError):
        as_fixed_shift_weights(1, 0.5)


def test_output_permutation():
    np.testing.assert_array_equal(output_permutation(6, 0.5), [3, 4, 5, 0, 1, 2])


@pytest.mark.parametrize("cfg,expected", [
    (MvfConfig(alpha=0.0, beta_t=3, beta_h=2, beta_w=1), Specialization.C2D),
    (MvfConfig(alpha=1.0, beta_t=1, beta_h=0, beta_w=0), Specialization.SLOWONLY_DW),
    (MvfConfig(alpha=0.25, beta_t=1, beta_h=0, beta_w=0), Specialization.LEARNABLE_TSM),
    (MvfConfig(alpha=0.5), Specialization.FULL_MVF),
    (MvfConfig(alpha=1.0), Specialization.FULL_MVF),
])
def test_classify(cfg, expected):
    assert classify_specialization(cfg) is expected


def test_slowonly_ignores_spatial_kernels(rng):
    x = rng.standard_normal((2, 5, 4, 3, 3))
    cfg = MvfConfig(alpha=1.0, beta_t=1.0, beta_h=0.0, beta_w=0.0)
    k_t = rng.standard_normal((5, 3))
    a = mvf_forward(x, cfg, MvfWeights(k_t, *rng.standard_normal((2, 5, 3)))).y
    b = mvf_forward(x, cfg, MvfWeights(k_t, *rng.standard_normal((2, 5, 3)))).y
    assert a.tobytes() == b.tobytes()


def test_block_identity_at_init(rng):
    mvf = MvfLayer(MvfConfig(alpha=0.0), 8, seed=0, dtype=np.float64)
    block = Bottleneck(8, 4, 8, 1, rng, np.float64, mvf=mvf, zero_init_residual=True)
    x = np.abs(rng.standard_normal((2, 8, 3, 5, 5)))  # block inputs follow a ReLU
    for training in (False, True):
        np.testing.assert_array_equal(block.forward(x, training), x)


@pytest.mark.parametrize("stride", [1, 2])
def test_block_keeps_frames(rng, stride):
    mvf = MvfLayer(MvfConfig(alpha=0.5), 8, seed=0, dtype=np.float64)
    block = Bottleneck(8, 4, 16, stride, rng, np.float64, mvf=mvf)
    y = block.forward(rng.standard_normal((2, 8, 5, 6, 6)), training=True)
    assert y.shape == (2, 16, 5, 6 // stride, 6 // stride)


def test_layer_without_learnable_beta_has_no_beta_param():
    assert "beta" not in MvfLayer(MvfConfig(), 8, seed=0, dtype=np.float64).params
    assert "beta" in MvfLayer(MvfConfig(learnable_beta=True), 8, seed=0, dtype=np.float64).params
