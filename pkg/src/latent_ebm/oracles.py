"""Self-test that pits the library's gradients and samplers against independent oracles.

Also hosts the two negative-phase estimators whose agreement checks the
reparametrised gradient: a long-chain latent Langevin average and an importance
(SNIS) average over prior draws, both of the same per-sample quantity
``d/dt E_{theta + t v}(G(z))`` for a fixed parameter direction ``v``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .dynamics import ChainDivergedError, LangevinConfig, langevin_latent
from .evaluation import (
    OracleResult,
    chain_stationary_moments,
    gaussian_chain_variance,
    quadrature_tilted_moments,
    snis_expectation,
)
from .models import EnergyNetwork, MlpNetwork, QuadraticEnergy, VaeModel, make_base_generator

FAULTS = ("prior_sign",)
SUITE_SIZE = 8


# -- negative phase ---------------------------------------------------------------


def random_direction(energy, rng: np.random.Generator) -> list[np.ndarray]:
    """Unit-norm direction in the energy's parameter space."""
    v = [rng.standard_normal(p.data.shape) for p in energy.parameters()]
    norm = np.sqrt(sum(float(np.sum(a * a)) for a in v))
    return [a / norm for a in v]


def directional_energy_derivative(energy, direction, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Per-sample ``d/dt E_{theta + t v}(x)`` by central differences in ``t``."""
    params = energy.parameters()
    saved = [p.data for p in params]
    try:
        for p, s, v in zip(params, saved, direction):
            p.data = s + h * v
        up = energy.apply(x)
        for p, s, v in zip(params, saved, direction):
            p.data = s - h * v
        down = energy.apply(x)
    finally:
        for p, s in zip(params, saved):
            p.data = s
    return (up - down) / (2 * h)


def negative_phase_snis(base, energy, direction, n: int, rng: np.random.Generator) -> OracleResult:
    return snis_expectation(base, lambda z: energy.apply(base.decode_np(z)),
                            lambda z: directional_energy_derivative(energy, direction, base.decode_np(z)), n, rng)


def negative_phase_langevin(base, energy, direction, chains: int, cfg: LangevinConfig,
                            rng: np.random.Generator) -> OracleResult:
    """Average over ``chains`` independent prior-initialised chains run for ``cfg.steps``."""
    z = langevin_latent(base, energy, base.sample_prior(chains, rng), cfg, rng).final
    f = directional_energy_derivative(energy, direction, base.decode_np(z))
    return OracleResult(float(f.mean()), float(f.std(ddof=1) / np.sqrt(chains)), "langevin", chains)


def small_energy(rng: np.random.Generator, dim: int = 1) -> EnergyNetwork:
    return EnergyNetwork(dim, hidden=(16,), activation="tanh", rng=rng)


# -- self-test --------------------------------------------------------------------


@dataclass
class Check:
    name: str
    measured: float
    expected: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: measured={self.measured:.6g} expected={self.expected:.6g} "
                f"tolerance={self.tolerance:.3g}")


def _fd_worst(loss_fn: Callable[[], nx.Tensor], params) -> float:
    grads = nx.grad(loss_fn(), params)
    worst = 0.0
    for p, g in zip(params, grads):
        def f(a, p=p):
            saved = p.data
            p.data = a
            try:
                return loss_fn().item()
            finally:
                p.data = saved
        worst = max(worst, nx.relative_error(g, nx.numerical_grad(f, p.data, 1e-5)))
    return worst


def _check_mlp_grad(rng) -> float:
    net = MlpNetwork([8, 16, 1], "tanh", rng)
    x = rng.standard_normal((4, 8))
    return max(_fd_worst(lambda: nx.mean(net(x)), net.parameters()),
               nx.finite_diff_check(lambda t: nx.mean(net(t)), x))


def _check_elbo_grad(rng) -> float:
    vae = VaeModel(2, 2, hidden=(6,), activation="tanh", obs_noise_sigma=0.7, rng=rng)
    x, eps = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
    return _fd_worst(lambda: vae.neg_elbo(x, eps), vae.parameters())


def _check_latent_potential_grad(rng) -> float:
    vae = VaeModel(2, 2, hidden=(6,), activation="tanh", rng=rng)
    base = make_base_generator(vae)
    energy = EnergyNetwork(2, hidden=(8,), activation="tanh", rng=rng)
    z = rng.standard_normal((3, 2))

    def potential(t):
        prior = nx.tsum(nx.square(t)) * 0.5
        return nx.tsum(energy(base.decode(t))) + prior

    return nx.finite_diff_check(potential, z)


def _pooled_variance(base, energy, eps, rng, chains=4000, burn_in=1500, spacing=300, snapshots=4) -> float:
    x = np.zeros((chains, base.latent_dim))
    out = []
    x = langevin_latent(base, energy, x, LangevinConfig(eps, burn_in), rng).final
    out.append(x)
    for _ in range(snapshots - 1):
        x = langevin_latent(base, energy, x, LangevinConfig(eps, spacing), rng).final
        out.append(x)
    return float(np.concatenate(out).var())


def _zero_energy(dim: int) -> EnergyNetwork:
    e = EnergyNetwork(dim, hidden=(4,), rng=np.random.default_rng(0))
    e.net.weights[-1].data[:] = 0.0
    e.net.biases[-1].data[:] = 0.0
    return e


def verify_oracles(inject_fault: str | None = None, seed: int = 0, echo: Callable[[str], None] | None = print
                   ) -> tuple[list[Check], int]:
    """Run the suite; returns the checks and an exit code (0 all pass, 2 otherwise).

    ``inject_fault="prior_sign"`` flips the sign of the prior score used by the
    samplers, which the stationary-variance checks must catch.
    """
    if inject_fault is not None and inject_fault not in FAULTS:
        raise ValueError(f"unknown fault {inject_fault!r}; choose from {FAULTS}")
    ss = np.random.SeedSequence(seed)
    rngs = [np.random.default_rng(s) for s in ss.spawn(16)]
    base1 = make_base_generator("identity_1d")
    if inject_fault == "prior_sign":
        base1.grad_log_prior = lambda z: np.asarray(z, dtype=np.float64)
    eps = 0.01
    checks: list[Check] = []
    if echo:
        echo(f"running {SUITE_SIZE} oracle checks")

    def add(name, measured, expected, tol, relative=False):
        gap = abs(measured - expected) / (abs(expected) if relative else 1.0)
        checks.append(Check(name, measured, expected, tol, bool(np.isfinite(measured) and gap < tol)))
        if echo:
            echo(checks[-1].line())

    # gradients against central differences
    add("autodiff: random MLP grads vs finite differences (max rel err)",
        max(_check_mlp_grad(rngs[0]) for _ in range(5)), 0.0, 1e-4)
    add("ELBO grads vs finite differences (max rel err)",
        max(_check_elbo_grad(rngs[1]) for _ in range(5)), 0.0, 1e-4)
    add("latent potential grad through decoder vs finite differences (max rel err)",
        max(_check_latent_potential_grad(rngs[2]) for _ in range(5)), 0.0, 1e-4)

    # discrete-chain stationary law: kernel oracle vs closed form, then sampler vs oracle
    kernel = chain_stationary_moments(lambda x: x, eps)["variance"]
    add("kernel oracle vs closed-form chain variance (rel)", kernel, gaussian_chain_variance(eps), 1e-6, True)

    def pooled(energy, rng):
        try:
            return _pooled_variance(base1, energy, eps, rng)
        except ChainDivergedError:
            return float("inf")

    add("prior chain stationary variance (rel)", pooled(_zero_energy(1), rngs[3]),
        1.0 / (1.0 - eps / 4), 0.03, True)
    tilted = chain_stationary_moments(lambda x: 2.0 * x, eps)["variance"]
    add("tilted chain E=x^2/2 variance vs kernel oracle (rel)", pooled(QuadraticEnergy(1), rngs[4]),
        tilted, 0.05, True)

    # quadrature vs importance sampling on a random small energy
    energy = small_energy(rngs[5])
    quad = quadrature_tilted_moments(base1, energy.apply)
    snis = snis_expectation(base1, energy.apply, lambda z: z[:, 0], 40_000, rngs[6])
    add("quadrature vs SNIS tilted mean (in combined SE)",
        abs(snis.value - quad["mean"].value) / np.hypot(snis.error, quad["mean"].error), 0.0, 3.0)

    # negative phase: long-chain Langevin vs SNIS along a random parameter direction
    direction = random_direction(energy, rngs[7])
    try:
        lang = negative_phase_langevin(base1, energy, direction, 10_000, LangevinConfig(eps, 1500), rngs[8])
        ref = negative_phase_snis(base1, energy, direction, 40_000, rngs[9])
        z_score = abs(lang.value - ref.value) / np.hypot(lang.error, ref.error)
    except ChainDivergedError:
        z_score = float("inf")
    add("negative phase: Langevin vs SNIS (in combined SE)", z_score, 0.0, 3.0)

    assert len(checks) == SUITE_SIZE
    failed = [c.name for c in checks if not c.passed]
    if echo:
        echo(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
        for name in failed:
            echo(f"failing check: {name}")
    return checks, 0 if not failed else 2

