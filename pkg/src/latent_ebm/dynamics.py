"""Unadjusted Langevin samplers and the replay buffer.

All chains share one update,

    x <- x - (eps / 2) * grad U(x) + noise_scale * sqrt(eps) * omega,

and differ only in the potential ``U``:

* latent chain: ``U(z) = E(G(z)) - log p(z)``
* observation chain: ``U(x) = E(x)``
* tilted observation chain: ``U(x) = E(x) - log p_base(x)`` (closed-form bases only)

No Metropolis correction is applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from ._io import atomic_write_text, csv_text
from .models import BaseGenerator

GradFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class LangevinConfig:
    epsilon: float = 0.01
    steps: int = 100
    noise_scale: float = 1.0
    record_trajectory: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be at least 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        self.steps = int(self.steps)


@dataclass
class LangevinResult:
    final: np.ndarray
    trajectory: np.ndarray | None = None  # (steps + 1, n, d), initial state included


class ChainDivergedError(nx.NonFiniteError):
    pass


def run_chain(grad_potential: GradFn, x0, cfg: LangevinConfig, rng: np.random.Generator | None = None,
              noise: np.ndarray | None = None) -> LangevinResult:
    """Run ``cfg.steps`` Langevin updates from ``x0`` for a potential given by its gradient.

    ``noise`` optionally injects the standard-normal draws, shape ``(steps, *x0.shape)``;
    otherwise they come from ``rng``.
    """
    x = np.array(x0, dtype=np.float64)
    if noise is not None:
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != (cfg.steps, *x.shape):
            raise ValueError(f"noise must have shape {(cfg.steps, *x.shape)}, got {noise.shape}")
    elif rng is None:
        raise ValueError("need an rng or injected noise")
    half_eps = 0.5 * cfg.epsilon
    noise_amp = cfg.noise_scale * np.sqrt(cfg.epsilon)
    traj = [x.copy()] if cfg.record_trajectory else None
    for i in range(cfg.steps):
        try:
            g = grad_potential(x)
        except nx.NonFiniteError as exc:
            raise ChainDivergedError(f"non-finite gradient at Langevin step {i}: {exc}") from exc
        if not np.all(np.isfinite(g)):
            raise ChainDivergedError(f"non-finite gradient at Langevin step {i}")
        omega = noise[i] if noise is not None else rng.standard_normal(x.shape)
        x = x - half_eps * g + noise_amp * omega
        if traj is not None:
            traj.append(x.copy())
    return LangevinResult(x, np.stack(traj) if traj is not None else None)


def energy_grad(energy, decode: Callable | None = None) -> GradFn:
    """Gradient of ``sum_rows E(decode(x))`` w.r.t. ``x`` by reverse-mode autodiff."""

    def fn(x: np.ndarray) -> np.ndarray:
        xt = nx.Tensor(x, requires_grad=True)
        h = decode(xt) if decode is not None else xt
        (g,) = nx.grad(nx.tsum(energy(h)), [xt])
        return g

    return fn


def latent_potential_grad(base: BaseGenerator, energy) -> GradFn:
    e_grad = energy_grad(energy, base.decode)
    return lambda z: e_grad(z) - base.grad_log_prior(z)


def langevin_latent(base: BaseGenerator, energy, z0, cfg: LangevinConfig,
                    rng: np.random.Generator | None = None, noise=None) -> LangevinResult:
    """Sample the latent EBM ``p(z) exp(-E(G(z))) / Z``."""
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.ndim != 2 or z0.shape[1] != base.latent_dim:
        raise ValueError(f"z0 must have shape (n, {base.latent_dim}), got {z0.shape}")
    if energy.in_dim != base.obs_dim:
        raise ValueError(f"energy expects dimension {energy.in_dim}, base decodes to {base.obs_dim}")
    return run_chain(latent_potential_grad(base, energy), z0, cfg, rng, noise)


def langevin_prior(base: BaseGenerator, z0, cfg: LangevinConfig, rng=None, noise=None) -> LangevinResult:
    """Chain targeting the prior alone (the E = 0 special case)."""
    return run_chain(lambda z: 0.0 - base.grad_log_prior(z), z0, cfg, rng, noise)


def langevin_observation(energy, x0, cfg: LangevinConfig, rng=None, noise=None) -> LangevinResult:
    """Sample the plain EBM ``exp(-E(x)) / Z`` in observation space."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 2 or x0.shape[1] != energy.in_dim:
        raise ValueError(f"x0 must have shape (n, {energy.in_dim}), got {x0.shape}")
    return run_chain(energy_grad(energy), x0, cfg, rng, noise)


def langevin_observation_tilted(base: BaseGenerator, energy, x0, cfg: LangevinConfig,
                                rng=None, noise=None) -> LangevinResult:
    """Sample ``p_base(x) exp(-E(x)) / Z`` directly in x; needs a closed-form base density."""
    if not base.has_analytic_density:
        raise ValueError("tilted observation-space chain needs a base with analytic log-density")
    e_grad = energy_grad(energy)
    return run_chain(lambda x: e_grad(x) - base.grad_log_density_x(x), x0, cfg, rng, noise)


def trajectory_csv(trajectory: np.ndarray) -> str:
    """Rows ordered step-major: for each step, one row per chain (chain = row index mod n)."""
    steps, n, d = trajectory.shape
    rows = []
    for k in range(steps):
        for x in trajectory[k]:
            rows.append([str(k), *x.tolist()])
    return csv_text(["step", *[f"coord_{j}" for j in range(d)]], rows)


def save_trajectory(trajectory: np.ndarray, path) -> None:
    atomic_write_text(path, trajectory_csv(trajectory))


class ReplayBuffer:
    """FIFO store of past chain endpoints used to initialise persistent chains.

    Mutation is single-writer; callers must not push from several threads.
    """

    def __init__(self, dim: int = 2, capacity: int = 10_000, reinit_prob: float = 0.05,
                 noise_low: float = -6.0, noise_high: float = 6.0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0.0 <= reinit_prob <= 1.0:
            raise ValueError("reinit_prob must lie in [0, 1]")
        self.dim = dim
        self.capacity = capacity
        self.reinit_prob = reinit_prob
        self.noise_low = noise_low
        self.noise_high = noise_high
        self._slots = np.zeros((capacity, dim))
        self._size = 0
        self._next = 0

    def __len__(self) -> int:
        return self._size

    @property
    def samples(self) -> np.ndarray:
        """Stored samples, oldest first."""
        if self._size < self.capacity:
            return self._slots[: self._size].copy()
        return np.roll(self._slots, -self._next, axis=0)

    def push(self, samples) -> None:
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        if samples.shape[1] != self.dim:
            raise ValueError(f"expected rows of dimension {self.dim}")
        for row in samples[-self.capacity:]:
            self._slots[self._next] = row
            self._next = (self._next + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def fresh(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.noise_low, self.noise_high, (n, self.dim))

    def init_batch(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        """Chain starting points and the boolean mask of rows drawn as fresh noise.

        An empty buffer yields all-fresh noise.
        """
        fresh = self.fresh(n, rng)
        if self._size == 0:
            return fresh, np.ones(n, dtype=bool)
        mask = rng.random(n) < self.reinit_prob
        idx = rng.integers(0, self._size, n)
        stored = self._slots[idx]
        return np.where(mask[:, None], fresh, stored), mask


def replay_buffer_ops(buffer: ReplayBuffer, action: str, payload, rng: np.random.Generator | None = None):
    if action == "push":
        buffer.push(payload)
        return None
    if action == "init_batch":
        return buffer.init_batch(int(payload), rng)
    raise ValueError(f"unknown replay buffer action {action!r}")
