"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .autodiff import NonFiniteError, Tensor, grad


def numerical_grad(fn: Callable[[np.ndarray], float], point, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a float64 array."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(point, dtype=np.float64)
    out = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite evaluation at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return out


def relative_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)))


def finite_diff_check(fn: Callable[[Tensor], Tensor], point, h: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences of ``fn`` at ``point``.

    ``fn`` maps a Tensor to a scalar Tensor. The error per coordinate is
    ``|analytic - numeric| / (|analytic| + 1e-8)``.
    """
    x = Tensor(point, requires_grad=True)
    out = fn(x)
    (analytic,) = grad(out, [x])
    numeric = numerical_grad(lambda a: fn(Tensor(a)).item(), x.data, h)
    return relative_error(analytic, numeric)
