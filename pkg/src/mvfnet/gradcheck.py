"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import DomainError

# op(*inputs) -> (loss, [grad or None per input]); the loss is a scalar or an
# array of terms whose sum is the loss
LossOp = Callable[..., tuple[float, Sequence[Optional[np.ndarray]]]]


class GradcheckStats(NamedTuple):
    max_rel_err: float
    checked: int
    skipped: int  # coordinates whose perturbation crossed an activation kink


def finite_diff_gradcheck(
    op: LossOp,
    inputs: Sequence[np.ndarray],
    epsilon: float = 1e-6,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``op`` must be a pure function of ``inputs`` returning a scalar loss and
    one analytic gradient per input (``None`` skips that input). Inputs are
    perturbed in place and restored. If ``max_coords`` is given, tensors with
    more coordinates are checked on a random subsample of that size.
    """
    return gradcheck_stats(op, inputs, epsilon, max_coords, seed).max_rel_err


def gradcheck_stats(
    op: LossOp,
    inputs: Sequence[np.ndarray],
    epsilon: float = 1e-6,
    max_coords: Optional[int] = None,
    seed: int = 0,
    pattern: Optional[Callable[[], bytes]] = None,
    richardson: bool = False,
) -> GradcheckStats:
    """:func:`finite_diff_gradcheck` with coverage counts.

    ``pattern``, if given, returns the activation pattern (which units are
    active) of the most recent ``op`` call. A coordinate whose two perturbed
    evaluations do not both share the unperturbed pattern straddles a kink,
    where central differences are meaningless; it is skipped and counted.

    With ``richardson`` the estimate combines steps ``epsilon`` and
    ``2 * epsilon`` as ``(4 D(eps) - D(2 eps)) / 3``, cancelling the
    second-order truncation term. That allows a larger step, which keeps
    rounding noise small on coordinates whose gradient is tiny.
    """
    if not 1e-8 <= epsilon <= 1e-4:
        raise DomainError(f"epsilon must lie in [1e-8, 1e-4], got {epsilon}")
    _, grads = op(*inputs)
    base = pattern() if pattern is not None else None
    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for x, g in zip(inputs, grads):
        if g is None:
            continue
        flat = x.reshape(-1)  # a view: x must be contiguous
        if not np.shares_memory(flat, x):
            raise ValueError("gradcheck inputs must be contiguous arrays")
        g = np.asarray(g).reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        steps = (epsilon, 2 * epsilon) if richardson else (epsilon,)
        for i in coords:
            orig = flat[i]
            diffs, same = [], True
            for h in steps:
                flat[i] = orig + h
                plus = op(*inputs)[0]
                same = same and (base is None or pattern() == base)
                flat[i] = orig - h
                minus = op(*inputs)[0]
                same = same and (base is None or pattern() == base)
                # summing term differences lets unaffected terms cancel exactly
                diffs.append(float(np.sum(np.asarray(plus) - np.asarray(minus))) / (2 * h))
            flat[i] = orig
            if not same:
                skipped += 1
                continue
            numeric = (4 * diffs[0] - diffs[1]) / 3 if richardson else diffs[0]
            analytic = float(g[i])
            denom = max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, abs(analytic - numeric) / denom)
            checked += 1
    return GradcheckStats(worst, checked, skipped)


def projection_loss(out: np.ndarray, probe: np.ndarray) -> float:
    """Scalar ``sum(out * probe)``; its gradient w.r.t. ``out`` is ``probe``."""
    return float(np.sum(out * probe))


def projection_terms(out: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """The terms of :func:`projection_loss`, for exact cancellation in differences."""
    return out * probe
