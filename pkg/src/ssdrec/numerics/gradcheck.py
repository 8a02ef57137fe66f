"""Reverse-mode gradients of a loss and their central-difference check."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import GradientTape, Tensor

LossFn = Callable[[Mapping[str, Tensor]], Tensor]


def value_and_grad(loss_fn: LossFn, params: Mapping[str, np.ndarray]) -> tuple[float, dict[str, np.ndarray]]:
    tensors = {name: Tensor(value, requires_grad=True, name=name) for name, value in params.items()}
    with GradientTape() as tape:
        loss = loss_fn(tensors)
    names = list(tensors)
    grads = tape.gradient(loss, [tensors[n] for n in names])
    return loss.item(), dict(zip(names, grads))


def grad(loss_fn: LossFn, params: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    return value_and_grad(loss_fn, params)[1]


def numerical_grad(
    loss_fn: LossFn,
    params: Mapping[str, np.ndarray],
    name: str,
    eps: float = 1e-5,
) -> np.ndarray:
    base = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    target = base[name]
    out = np.zeros_like(target)
    for idx in np.ndindex(target.shape):
        vals = []
        for sign in (1.0, -1.0):
            bumped = target.copy()
            bumped[idx] += sign * eps
            trial = {k: Tensor(v) for k, v in base.items()}
            trial[name] = Tensor(bumped)
            vals.append(loss_fn(trial).item())
        out[idx] = (vals[0] - vals[1]) / (2.0 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Norm-wise relative error; both-zero (below ``floor``) counts as exact."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    if scale < floor:
        return diff
    return diff / scale


def check_gradients(
    loss_fn: LossFn,
    params: Mapping[str, np.ndarray],
    eps: float = 1e-5,
) -> dict[str, float]:
    """Relative error per parameter between tape gradients and central differences."""
    analytic = grad(loss_fn, params)
    return {
        name: relative_error(analytic[name], numerical_grad(loss_fn, params, name, eps))
        for name in params
    }
