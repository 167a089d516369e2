"""Finite-difference gradient oracle shared by the test modules.

Central differences re-evaluate the forward path only, so the oracle is
independent of the backward implementation it checks. Near-zero gradients
need an absolute guard: at h=1e-4 in float64 the truncation floor is
O(1e-8), which swamps a pure relative comparison when the true gradient
is tiny.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from mtlid.tensor import Tensor


def central_diff(f: Callable[[], float], param: Tensor, index: int, h: float) -> float:
    """d f / d param.flat[index] by central differences; restores the value."""
    flat = param.data.reshape(-1)
    orig = flat[index]
    flat[index] = orig + h
    fp = f()
    flat[index] = orig - h
    fm = f()
    flat[index] = orig
    return (fp - fm) / (2.0 * h)


def max_grad_error(
    f: Callable[[], float],
    param: Tensor,
    rng: np.random.Generator,
    n_samples: int = 50,
    h: float = 1e-4,
    atol: float = 1e-7,
) -> float:
    """Worst (|fd - analytic| - atol) / max(|fd|, |analytic|, eps) over samples.

    A value below the relative tolerance means every sampled coordinate
    satisfies |fd - analytic| <= atol + rtol * max(|fd|, |analytic|).
    """
    assert param.grad is not None, "run backward() before checking"
    flat_grad = param.grad.reshape(-1)
    size = param.data.size
    idxs = rng.choice(size, size=min(n_samples, size), replace=False)
    worst = 0.0
    for i in idxs:
        fd = central_diff(f, param, int(i), h)
        ana = float(flat_grad[i])
        err = (abs(fd - ana) - atol) / max(abs(fd), abs(ana), 1e-12)
        worst = max(worst, err)
    return worst
