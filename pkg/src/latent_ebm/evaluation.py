"""Toy sample-quality metrics and independent numerical oracles.

The oracles deliberately avoid the sampler and autodiff code paths:

* :func:`quadrature_tilted_moments` integrates ``p(z) exp(-E(G(z)))`` on a grid.
* :func:`snis_expectation` reweights prior draws by ``exp(-E(G(z)))``.
* :func:`chain_stationary_moments` computes the exact stationary law of the
  *discretised* Langevin chain from its Gaussian transition kernel, so the
  O(eps) bias of the unadjusted sampler is part of the expected value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._io import atomic_write_text, csv_text
from .datasets import GAUSSIAN_SIGMA, grid_centers
from .models import BaseGenerator


@dataclass
class ModeSpec:
    centers: np.ndarray = field(default_factory=grid_centers)
    sigma: float = GAUSSIAN_SIGMA
    min_count: int = 20
    quality_radius_multiplier: float = 4.0

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if len(np.unique(self.centers, axis=0)) != len(self.centers):
            raise ValueError("mode centres must be distinct")

    @property
    def radius(self) -> float:
        return self.quality_radius_multiplier * self.sigma


@dataclass
class OracleResult:
    value: float | np.ndarray
    error: float
    method: str
    count: int
    ess: float | None = None


class OracleError(RuntimeError):
    pass


# -- mode metrics -----------------------------------------------------------------


def _nearest(samples, spec: ModeSpec) -> tuple[np.ndarray, np.ndarray]:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError(f"samples must have shape (n, 2), got {samples.shape}")
    if len(samples) == 0:
        raise ValueError("no samples")
    d2 = ((samples[:, None, :] - spec.centers[None, :, :]) ** 2).sum(-1)
    idx = d2.argmin(1)
    return idx, np.sqrt(d2[np.arange(len(samples)), idx])


def high_quality_mask(samples, spec: ModeSpec) -> np.ndarray:
    _, dist = _nearest(samples, spec)
    return dist <= spec.radius


def high_quality_fraction(samples, spec: ModeSpec | None = None) -> float:
    return float(high_quality_mask(samples, spec or ModeSpec()).mean())


def mode_counts(samples, spec: ModeSpec | None = None) -> np.ndarray:
    """High-quality samples assigned to each centre."""
    spec = spec or ModeSpec()
    idx, dist = _nearest(samples, spec)
    return np.bincount(idx[dist <= spec.radius], minlength=len(spec.centers))


def modes_captured(samples, spec: ModeSpec | None = None) -> int:
    spec = spec or ModeSpec()
    return int((mode_counts(samples, spec) >= spec.min_count).sum())


def histogram_divergence(samples, reference, bins: int = 50, bounds: tuple[float, float] = (-6.0, 6.0),
                         smoothing: float = 1e-8) -> float:
    """Symmetric KL between 2-D histograms on a shared box; out-of-box points land in edge bins."""
    samples = np.asarray(samples, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if len(samples) == 0 or len(reference) == 0:
        raise ValueError("both sample sets must be non-empty")
    lo, hi = bounds
    edges = np.linspace(lo, hi, bins + 1)

    def hist(x):
        x = np.clip(x, lo, hi)
        h, _, _ = np.histogram2d(x[:, 0], x[:, 1], bins=[edges, edges])
        h = h / h.sum() + smoothing
        return h / h.sum()

    p, q = hist(samples), hist(reference)
    return float(np.sum((p - q) * (np.log(p) - np.log(q))))


# -- oracles ----------------------------------------------------------------------


def _trapezoid_grid(lo, hi, n):
    x = np.linspace(lo, hi, n)
    w = np.full(n, x[1] - x[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return x, w


def quadrature_tilted_moments(base: BaseGenerator, energy_fn: Callable[[np.ndarray], np.ndarray],
                              lo: float = -8.0, hi: float = 8.0, n: int = 4001,
                              tail_tol: float = 1e-10) -> dict[str, OracleResult]:
    """Z, mean and variance of ``p(z) exp(-E(G(z))) / Z`` by the trapezoid rule.

    ``energy_fn`` maps latent points ``(m, d)`` to energies ``(m,)`` (i.e. already
    composed with the decoder). Works for ``d`` in {1, 2}. The error of each
    quantity is the difference against the same rule on every other grid node.
    Raises :class:`OracleError` if the integrand on the boundary carries more
    than ``tail_tol`` of the mass.
    """
    d = base.latent_dim
    if d not in (1, 2):
        raise ValueError("quadrature oracle supports latent dimension 1 or 2")
    if n % 2 == 0:
        n += 1

    def moments(step):
        x, w = _trapezoid_grid(lo, hi, (n - 1) // step + 1)
        if d == 1:
            pts, wts = x[:, None], w
        else:
            gx, gy = np.meshgrid(x, x, indexing="ij")
            pts = np.stack([gx.ravel(), gy.ravel()], 1)
            wts = np.outer(w, w).ravel()
        logf = base.log_prior(pts) - energy_fn(pts)
        f = np.exp(logf)
        z = np.sum(wts * f)
        mean = (wts * f) @ pts / z
        centred = pts - mean
        var = (wts * f) @ (centred * centred) / z
        edge = np.zeros(len(pts), dtype=bool)
        for j in range(d):
            edge |= (pts[:, j] == lo) | (pts[:, j] == hi)
        tail = f[edge].max() * (hi - lo) ** d / z
        return z, mean, var, tail

    z, mean, var, tail = moments(1)
    z2, mean2, var2, _ = moments(2)
    if tail > tail_tol:
        raise OracleError(f"integrand too large on the grid boundary (relative {tail:.2e})")
    count = n ** d
    squeeze = (lambda a: float(a[0])) if d == 1 else (lambda a: a)
    return {
        "Z": OracleResult(float(z), float(abs(z - z2)), "quadrature", count),
        "mean": OracleResult(squeeze(mean), float(np.max(np.abs(mean - mean2))), "quadrature", count),
        "variance": OracleResult(squeeze(var), float(np.max(np.abs(var - var2))), "quadrature", count),
    }


def snis_expectation(base: BaseGenerator, energy_fn: Callable[[np.ndarray], np.ndarray],
                     f: Callable[[np.ndarray], np.ndarray], n: int, rng: np.random.Generator,
                     n_boot: int = 200, min_ess: float = 100.0) -> OracleResult:
    """Self-normalised importance estimate of ``E_{p(z)exp(-E(G(z)))/Z}[f(z)]``.

    Proposal is the prior; weights are ``exp(-E(G(z)))``. The reported error is a
    bootstrap standard error over the ``n`` draws.
    """
    z = base.sample_prior(n, rng)
    logw = -np.asarray(energy_fn(z), dtype=np.float64)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    ess = float(1.0 / np.sum(w * w))
    if ess < min_ess:
        raise OracleError(f"degenerate importance weights: ESS {ess:.1f} < {min_ess}")
    fz = np.asarray(f(z), dtype=np.float64)
    if fz.shape[0] != n:
        raise ValueError("f must return one value (or row) per sample")
    value = np.tensordot(w, fz, axes=1)
    boots = []
    for _ in range(n_boot):
        idx = rng.integers(0, n, n)
        wb = w[idx]
        boots.append(np.tensordot(wb / wb.sum(), fz[idx], axes=1))
    se = np.std(np.asarray(boots), axis=0, ddof=1)
    value = float(value) if np.ndim(value) == 0 else value
    return OracleResult(value, float(np.max(se)) if np.ndim(se) else float(se), "snis", n, ess)


def chain_stationary_moments(grad_potential: Callable[[np.ndarray], np.ndarray], epsilon: float,
                             lo: float = -8.0, hi: float = 8.0, n: int = 2001) -> dict[str, float]:
    """Mean and variance of the stationary law of the 1-D unadjusted Langevin chain.

    Discretises the transition kernel ``N(y; x - eps/2 U'(x), eps)`` on a grid,
    row-normalises it, and solves ``pi K = pi``.
    """
    x = np.linspace(lo, hi, n)
    drift = x - 0.5 * epsilon * np.asarray(grad_potential(x[:, None]), dtype=np.float64).reshape(n)
    logk = -0.5 * (x[None, :] - drift[:, None]) ** 2 / epsilon
    k = np.exp(logk - logk.max(axis=1, keepdims=True))
    k /= k.sum(axis=1, keepdims=True)
    a = k.T - np.eye(n)
    a[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(a, rhs)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    mean = float(pi @ x)
    return {"mean": mean, "variance": float(pi @ (x - mean) ** 2)}


def gaussian_chain_variance(epsilon: float, curvature: float = 1.0) -> float:
    """Stationary variance of ``x' = (1 - eps*a/2) x + sqrt(eps) w`` for potential ``a x^2 / 2``."""
    rho = 1.0 - 0.5 * epsilon * curvature
    return epsilon / (1.0 - rho * rho)


# -- reporting --------------------------------------------------------------------


def sample_report(samples, spec: ModeSpec | None = None, reference=None, bins: int = 50) -> dict[str, float]:
    spec = spec or ModeSpec()
    out = {
        "n": float(len(samples)),
        "high_quality_fraction": high_quality_fraction(samples, spec),
        "modes_captured": float(modes_captured(samples, spec)),
    }
    if reference is not None:
        out["histogram_divergence"] = histogram_divergence(samples, reference, bins)
    return out


def metrics_csv(rows: Sequence[dict]) -> str:
    keys = list(dict.fromkeys(k for r in rows for k in r))
    return csv_text(keys, [[r.get(k, "") if isinstance(r.get(k, ""), str) else r[k] for k in keys] for r in rows])


def save_metrics(rows: Sequence[dict], path) -> None:
    atomic_write_text(path, metrics_csv(rows))


def format_summary(rows: Sequence[dict]) -> str:
    lines = ["== sample quality =="]
    for r in rows:
        label = r.get("label", "")
        parts = [f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items() if k != "label"]
        lines.append(f"{label:>12}: " + "  ".join(parts))
    return "\n".join(lines)
