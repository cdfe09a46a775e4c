"""Gradient and specialization check suites behind the ``gradcheck`` and ``equiv`` commands."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import ops
from .errors import DomainError
from .gradcheck import gradcheck_stats, projection_terms
from .layers import Bottleneck, Layer, MvfLayer, ReLU
from .mvf import MvfConfig, MvfWeights, as_fixed_shift_weights, mvf_backward, mvf_forward, output_permutation, tsm_shift
from .network import NetworkSpec, build_network, preset
from .ops import Axis

GRAD_TOL = 1e-5
# batch statistics couple every output to every input, so no terms cancel in
# the differences and coordinates with tiny gradients sit near the rounding
# floor; a larger step with Richardson extrapolation (second step 1e-4)
# keeps both rounding and truncation well below the tolerance
NET_EPSILON = 5e-5
GRAD_TARGETS = ("ops", "mvf", "block", "tiny-net")
EQUIV_SUITES = ("tsm", "c2d", "slowonly")


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    checked: int
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_err < GRAD_TOL


@dataclass
class GradReport:
    target: str
    seed: int
    results: list[CheckResult] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((r.max_rel_err for r in self.results), default=0.0)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "seed": self.seed,
            "tolerance": GRAD_TOL,
            "max_rel_err": self.max_rel_err,
            "passed": self.passed,
            "checks": [
                {"name": r.name, "max_rel_err": r.max_rel_err, "checked": r.checked,
                 "skipped": r.skipped, "passed": r.passed}
                for r in self.results
            ],
        }


# ---------------------------------------------------------------------------
# gradient suites (double precision)


def _corrupted(op: Callable, corrupt: bool) -> Callable:
    """Negative control: scale every analytic gradient by 1.01."""
    if not corrupt:
        return op

    def wrapped(*inputs):
        loss, grads = op(*inputs)
        return loss, [None if g is None else g * 1.01 for g in grads]

    return wrapped


def _check(name, op, inputs, corrupt, seed, max_coords=None, pattern=None, epsilon=1e-6,
           richardson=False) -> CheckResult:
    stats = gradcheck_stats(_corrupted(op, corrupt), inputs, epsilon=epsilon,
                            max_coords=max_coords, seed=seed, pattern=pattern, richardson=richardson)
    return CheckResult(name, stats.max_rel_err, stats.checked, stats.skipped)


def _away_from_zero(rng, shape, margin=0.1):
    u = rng.standard_normal(shape)
    return np.sign(u) * (margin + np.abs(u))


def _ops_suite(rng, seed, corrupt) -> list[CheckResult]:
    out = []
    x = rng.standard_normal((2, 3, 4, 4, 4))
    k = rng.standard_normal((3, 3))
    probe = rng.standard_normal(x.shape)
    for axis in Axis:
        def op(x, k, axis=axis):
            y = ops.conv1d_channelwise(x, k, axis)
            gp = ops.conv1d_channelwise_backward(x, k, axis, probe)
            return projection_terms(y, probe), [gp.d_input, gp.d_weights]
        out.append(_check(f"conv1d_channelwise[{axis.name.lower()}]", op, [x, k], corrupt, seed))

    xp = rng.standard_normal((2, 3, 2, 3, 3))
    w, b = rng.standard_normal((4, 3)), rng.standard_normal(4)
    pp = rng.standard_normal((2, 4, 2, 3, 3))

    def op(x, w, b):
        dx, dw, db = ops.conv_pointwise_backward(x, w, pp, has_bias=True)
        return projection_terms(ops.conv_pointwise(x, w, b), pp), [dx, dw, db]
    out.append(_check("conv_pointwise", op, [xp, w, b], corrupt, seed))

    for stride, size in ((1, 5), (2, 6)):
        xs = rng.standard_normal((1, 2, 2, size, size))
        ws = rng.standard_normal((3, 2, 3, 3))
        o = ops.conv2d_output_size(size, stride)
        ps = rng.standard_normal((1, 3, 2, o, o))

        def op(x, w, stride=stride, ps=ps):
            dx, dw = ops.conv2d_spatial_backward(x, w, stride, ps)
            return projection_terms(ops.conv2d_spatial(x, w, stride), ps), [dx, dw]
        out.append(_check(f"conv2d_spatial[stride={stride}]", op, [xs, ws], corrupt, seed))

    xn = rng.standard_normal((2, 3, 2, 3, 3)) * 2 + 1
    gamma, beta = rng.standard_normal(3), rng.standard_normal(3)
    pn = rng.standard_normal(xn.shape)
    for training in (True, False):
        rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2, 3)

        def op(x, g, b, training=training, rm=rm, rv=rv):
            y, cache = ops.norm_affine(x, g, b, rm.copy(), rv.copy(), training)
            dx, dg, db = ops.norm_affine_backward(cache, g, pn, training)
            return projection_terms(y, pn), [dx, dg, db]
        mode = "train" if training else "eval"
        out.append(_check(f"norm_affine[{mode}]", op, [xn, gamma, beta], corrupt, seed))

    xg = rng.standard_normal((2, 3, 3, 2, 2))
    pg = rng.standard_normal((2, 3))

    def op(x):
        return projection_terms(ops.global_avg_pool(x), pg), [ops.global_avg_pool_backward(x.shape, pg)]
    out.append(_check("global_avg_pool", op, [xg], corrupt, seed))

    xa = rng.standard_normal((1, 2, 2, 4, 4))
    pa = rng.standard_normal((1, 2, 2, 2, 2))

    def op(x):
        return projection_terms(ops.avg_pool2x2(x), pa), [ops.avg_pool2x2_backward(pa)]
    out.append(_check("avg_pool2x2", op, [xa], corrupt, seed))

    f, wl, bl = rng.standard_normal((4, 5)), rng.standard_normal((3, 5)), rng.standard_normal(3)
    pl = rng.standard_normal((4, 3))

    def op(f, w, b):
        return projection_terms(ops.linear(f, w, b), pl), list(ops.linear_backward(f, w, pl))
    out.append(_check("linear", op, [f, wl, bl], corrupt, seed))

    xr = _away_from_zero(rng, (2, 3, 2, 2, 2))
    pr = rng.standard_normal(xr.shape)

    def op(x):
        return projection_terms(np.maximum(x, 0), pr), [ops.relu_backward(x, pr)]
    out.append(_check("relu", op, [xr], corrupt, seed))

    logits = rng.standard_normal((4, 5))
    labels = rng.integers(0, 5, 4)

    def op(z):
        loss, d = ops.softmax_xent(z, labels)
        return loss, [d]
    out.append(_check("softmax_xent", op, [logits], corrupt, seed))
    return out


def _mvf_suite(rng, seed, corrupt) -> list[CheckResult]:
    out = []
    x = rng.standard_normal((2, 8, 4, 4, 4))
    probe = rng.standard_normal(x.shape)
    for activation in ("relu", "identity"):
        for learnable in (False, True):
            cfg = MvfConfig(alpha=0.5, beta_t=1.0, beta_h=0.7, beta_w=1.3,
                            activation=activation, learnable_beta=learnable)
            ks = [rng.standard_normal((4, 3)) * 0.5 for _ in range(3)]
            beta = np.array(cfg.betas)
            state = {}

            def op(x, k_t, k_h, k_w, beta, cfg=cfg, state=state):
                c = cfg.with_betas(*beta)
                w = MvfWeights(k_t, k_h, k_w)
                tr = mvf_forward(x, c, w)
                state["fused"] = tr.fused
                g = mvf_backward(tr, c, w, probe)
                return projection_terms(tr.y, probe), [g.d_x, *g.d_weights.kernels(), g.d_beta]

            pattern = (lambda state=state: np.packbits(state["fused"] > 0).tobytes()) if activation == "relu" else None
            name = f"mvf[{activation}{', learnable beta' if learnable else ''}]"
            out.append(_check(name, op, [x, *ks, beta], corrupt, seed, pattern=pattern))
    return out


def _walk(layer: Layer) -> Iterator[Layer]:
    for v in vars(layer).values():
        items = v if isinstance(v, list) else [v]
        for item in items:
            if isinstance(item, tuple):
                item = item[-1]
            if isinstance(item, Layer):
                yield item
                yield from _walk(item)


def activation_pattern(root: Layer) -> bytes:
    """Which ReLU units were active in ``root``'s most recent forward pass."""
    masks = []
    for layer in _walk(root):
        if isinstance(layer, ReLU):
            masks.append(np.packbits(layer._x > 0))
        elif isinstance(layer, MvfLayer) and layer.cfg.activation == "relu":
            masks.append(np.packbits(layer._trace.fused > 0))
    return b"".join(m.tobytes() for m in masks)


def _block_suite(rng, seed, corrupt) -> list[CheckResult]:
    out = []
    for c_out, stride in ((8, 1), (16, 2)):
        mvf = MvfLayer(MvfConfig(alpha=0.5), 8, seed=rng, dtype=np.float64, std=0.5)
        block = Bottleneck(8, 4, c_out, stride, rng, np.float64, mvf=mvf)
        x = rng.standard_normal((2, 8, 3, 6, 6))
        y = block.forward(x, training=True)
        probe = rng.standard_normal(y.shape)
        names = list(block.named_tensors())
        params = block.named_tensors()

        def op(x, *ws, block=block, probe=probe, names=names):
            y = block.forward(x, training=True)
            dx = block.backward(probe)
            grads = block.named_tensors(kind="grads")
            return projection_terms(y, probe), [dx] + [grads[n] for n in names]

        out.append(_check(f"block[c_out={c_out}, stride={stride}]", op, [x] + [params[n] for n in names],
                          corrupt, seed, max_coords=64, pattern=lambda b=block: activation_pattern(b),
                          epsilon=NET_EPSILON, richardson=True))
    return out


def _tiny_suite(rng, seed, corrupt) -> list[CheckResult]:
    spec = NetworkSpec(preset("tiny"), frames=3, mvf=MvfConfig(alpha=0.5), mvf_stages={"res2", "res3"},
                       classes=4, input_resolution=16)
    net = build_network(spec, seed=seed, dtype=np.float64)
    for layer in net.mvf_layers():
        for k in ("k_t", "k_h", "k_w"):
            layer.params[k][...] = rng.standard_normal(layer.params[k].shape) * 0.5
    # the default 0.01 classifier scale shrinks every backbone gradient
    # toward the finite-difference noise floor
    net.params["fc.w"] *= 10
    x = rng.standard_normal((2, 1, 3, 16, 16))
    labels = rng.integers(0, 4, 2)
    names = list(net.parameters())
    params = net.parameters()

    def op(x, *ws):
        logits = net.forward(x, training=True)
        loss, d = ops.softmax_xent(logits, labels)
        dx = net.backward(d)
        grads = net.gradients()
        return loss, [dx] + [grads[n] for n in names]

    return [_check("tiny-net", op, [x] + [params[n] for n in names], corrupt, seed,
                   max_coords=12, pattern=lambda: activation_pattern(net), epsilon=NET_EPSILON, richardson=True)]


_SUITES = {"ops": _ops_suite, "mvf": _mvf_suite, "block": _block_suite, "tiny-net": _tiny_suite}


def run_gradcheck(target: str, seed: int = 0, corrupt: bool = False) -> GradReport:
    """Run one gradient suite; ``corrupt`` perturbs analytic gradients (negative control)."""
    if target not in _SUITES:
        raise DomainError(f"unknown gradcheck target {target!r}; choose from {GRAD_TARGETS}")
    rng = np.random.default_rng(seed)
    return GradReport(target, seed, _SUITES[target](rng, seed, corrupt))


# ---------------------------------------------------------------------------
# specialization suites


@dataclass
class EquivReport:
    which: str
    cases: int
    max_abs_dev: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.cases > 0 and self.max_abs_dev == 0.0

    def to_dict(self) -> dict:
        return {"which": self.which, "cases": self.cases, "max_abs_dev": self.max_abs_dev,
                "passed": self.passed, "details": self.details}


def _dev(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        return float("inf")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def _random_shape(rng, channels) -> tuple[int, ...]:
    return (int(rng.integers(1, 3)), int(rng.choice(channels)), int(rng.integers(1, 9)),
            int(rng.integers(1, 6)), int(rng.integers(1, 6)))


def equiv_tsm(cases: int = 100, seed: int = 0) -> EquivReport:
    """Fixed-shift MVF against the temporal-shift oracle, fraction 1/4.

    ``full``: alpha = 1, all channels in the module, shifted fraction 1/4.
    ``partial``: alpha = 1/4, the module's channels all shifted; compared
    after the known output channel permutation.
    """
    rng = np.random.default_rng(seed)
    worst = {"full": 0.0, "partial": 0.0}
    for _ in range(cases):
        x = rng.standard_normal(_random_shape(rng, (6, 7, 8, 16)))
        c = x.shape[1]
        ref = tsm_shift(x, 0.25)
        cfg = MvfConfig(alpha=1.0, beta_t=1.0, beta_h=0.0, beta_w=0.0, activation="identity")
        y = mvf_forward(x, cfg, as_fixed_shift_weights(c, 0.25)).y
        worst["full"] = max(worst["full"], _dev(y, ref))
        cfg = MvfConfig(alpha=0.25, beta_t=1.0, beta_h=0.0, beta_w=0.0, activation="identity")
        c1 = round(c * 0.25 + 1e-9)
        w = as_fixed_shift_weights(c1, 1.0) if c1 else MvfWeights(*(np.zeros((0, 3)),) * 3)
        y = mvf_forward(x, cfg, w).y
        worst["partial"] = max(worst["partial"], _dev(y, ref[:, output_permutation(c, 0.25)]))
    return EquivReport("tsm", cases, max(worst.values()), {"max_abs_dev_" + k: v for k, v in worst.items()})


def equiv_c2d(cases: int = 20, seed: int = 0) -> EquivReport:
    """alpha = 0 network logits against the same-seed network with no MVF modules."""
    task_spec = dict(frames=8, classes=8, input_resolution=32)
    mvf_net = build_network(NetworkSpec(preset("tiny"), mvf=MvfConfig(alpha=0.0),
                                        mvf_stages={"res2", "res3", "res4"}, **task_spec), seed=seed)
    c2d_net = build_network(NetworkSpec(preset("tiny"), **task_spec), seed=seed)
    rng = np.random.default_rng(seed)
    worst, identical = 0.0, 0
    for _ in range(cases):
        x = rng.standard_normal((2, 1, 8, 32, 32)).astype(np.float32)
        a, b = mvf_net.forward(x), c2d_net.forward(x)
        worst = max(worst, _dev(a, b))
        identical += int(a.tobytes() == b.tobytes())
    return EquivReport("c2d", cases, worst, {"bitwise_identical": identical})


def equiv_slowonly(cases: int = 50, seed: int = 0) -> EquivReport:
    """With beta_h = beta_w = 0 the output ignores the spatial kernels."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(cases):
        x = rng.standard_normal(_random_shape(rng, (1, 2, 5, 8)))
        c = x.shape[1]
        cfg = MvfConfig(alpha=1.0, beta_t=1.0, beta_h=0.0, beta_w=0.0,
                        activation="relu" if i % 2 else "identity")
        k_t = rng.standard_normal((c, 3))
        a = mvf_forward(x, cfg, MvfWeights(k_t, *rng.standard_normal((2, c, 3)))).y
        b = mvf_forward(x, cfg, MvfWeights(k_t, *rng.standard_normal((2, c, 3)) * 10)).y
        worst = max(worst, _dev(a, b))
    return EquivReport("slowonly", cases, worst)


_EQUIV = {"tsm": equiv_tsm, "c2d": equiv_c2d, "slowonly": equiv_slowonly}


def run_equiv(which: str, seed: int = 0) -> EquivReport:
    if which not in _EQUIV:
        raise DomainError(f"unknown equivalence suite {which!r}; choose from {EQUIV_SUITES}")
    return _EQUIV[which](seed=seed)
