import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent_ebm.datasets import gen_25_gaussians, gen_swiss_roll, grid_centers
from latent_ebm.evaluation import (
    ModeSpec,
    OracleError,
    chain_stationary_moments,
    format_summary,
    high_quality_fraction,
    histogram_divergence,
    metrics_csv,
    mode_counts,
    modes_captured,
    quadrature_tilted_moments,
    snis_expectation,
)
from latent_ebm.models import EnergyNetwork, LinearEnergy, QuadraticEnergy, make_base_generator

SPEC = ModeSpec()


def test_centres_are_high_quality():
    assert high_quality_fraction(grid_centers(), SPEC) == 1.0


def test_far_samples_are_low_quality():
    far = grid_centers() + np.array([0.0, 100 * SPEC.sigma]) + 100.0
    assert high_quality_fraction(far, SPEC) == 0.0


def test_ground_truth_high_quality():
    ds = gen_25_gaussians(10_000, seed=0)
    assert high_quality_fraction(ds.points, SPEC) > 0.999


def test_empty_samples_rejected():
    with pytest.raises(ValueError):
        high_quality_fraction(np.zeros((0, 2)), SPEC)
    with pytest.raises(ValueError):
        modes_captured(np.zeros((0, 2)), SPEC)


def test_modes_captured_cases():
    assert modes_captured(grid_centers(), ModeSpec(min_count=1)) == 25
    near_one = np.array([2.0, 2.0]) + 0.01 * np.random.default_rng(0).standard_normal((500, 2))
    assert modes_captured(near_one, SPEC) == 1
    assert modes_captured(gen_25_gaussians(10_000, seed=1).points, SPEC) == 25


def test_mode_spec_validation():
    with pytest.raises(ValueError):
        ModeSpec(centers=[[0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError):
        ModeSpec(sigma=0.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 200))
def test_metric_monotonicity(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-5, 5, (n, 2))
    hits = mode_counts(x, SPEC).sum()
    on_mode = np.vstack([x, grid_centers()[rng.integers(25)] + 0.01])
    far = np.vstack([x, [[50.0, 50.0]]])
    assert mode_counts(on_mode, SPEC).sum() == hits + 1
    assert mode_counts(far, SPEC).sum() == hits
    assert modes_captured(x, ModeSpec(min_count=1)) <= 25


def test_histogram_divergence_cases():
    a = gen_swiss_roll(5000, seed=0).points
    assert histogram_divergence(a, a) == pytest.approx(0.0, abs=1e-12)
    b = a + 100.0
    assert histogram_divergence(a, np.random.default_rng(0).uniform(4, 5, (5000, 2))) > 1.0
    assert histogram_divergence(a, b) > 1.0


def test_histogram_noise_floor_is_small():
    a = gen_swiss_roll(10_000, seed=1).points
    b = gen_swiss_roll(10_000, seed=2).points
    floor = histogram_divergence(a, b)
    assert 0.0 < floor < 0.5


# -- quadrature oracle -----------------------------------------------------------------

BASE1 = make_base_generator("identity_1d")


def test_quadrature_untilted():
    m = quadrature_tilted_moments(BASE1, lambda z: np.zeros(len(z)))
    assert m["Z"].value == pytest.approx(1.0, abs=1e-10)
    assert m["mean"].value == pytest.approx(0.0, abs=1e-12)
    assert m["variance"].value == pytest.approx(1.0, abs=1e-10)
    assert m["Z"].method == "quadrature" and m["Z"].error < 1e-8


def test_quadrature_quadratic_tilt():
    m = quadrature_tilted_moments(BASE1, QuadraticEnergy(1).apply)
    assert m["variance"].value == pytest.approx(0.5, abs=1e-10)
    assert m["Z"].value == pytest.approx(np.sqrt(0.5), abs=1e-10)


def test_quadrature_linear_tilt():
    m = quadrature_tilted_moments(BASE1, LinearEnergy(1, weight=[-1.0]).apply, lo=-10, hi=12, n=5501)
    assert m["Z"].value == pytest.approx(1.64872, abs=1e-5)
    assert m["Z"].value == pytest.approx(np.exp(0.5), abs=1e-10)
    assert m["mean"].value == pytest.approx(1.0, abs=1e-10)


def test_quadrature_2d():
    base = make_base_generator("identity_2d")
    m = quadrature_tilted_moments(base, QuadraticEnergy(2).apply, n=801)
    np.testing.assert_allclose(m["variance"].value, [0.5, 0.5], atol=1e-8)


def test_quadrature_tail_detected():
    with pytest.raises(OracleError):
        quadrature_tilted_moments(BASE1, LinearEnergy(1, weight=[-6.0]).apply)


# -- SNIS -------------------------------------------------------------------------------


def test_snis_untilted_is_plain_monte_carlo():
    r = snis_expectation(BASE1, lambda z: np.zeros(len(z)), lambda z: z[:, 0], 20_000, np.random.default_rng(0))
    assert abs(r.value) < 3 * r.error
    assert r.ess == pytest.approx(20_000)


def test_snis_linear_tilt_mean():
    r = snis_expectation(BASE1, LinearEnergy(1, weight=[-1.0]).apply, lambda z: z[:, 0], 50_000,
                         np.random.default_rng(1))
    assert abs(r.value - 1.0) < 3 * r.error
    assert r.method == "snis" and r.ess > 100


def test_snis_degenerate_weights():
    with pytest.raises(OracleError):
        snis_expectation(BASE1, LinearEnergy(1, weight=[-40.0]).apply, lambda z: z[:, 0], 1000,
                         np.random.default_rng(2))


@pytest.mark.parametrize("k", range(10))
def test_quadrature_and_snis_agree(k):
    rng = np.random.default_rng(1000 + k)
    energy = EnergyNetwork(1, hidden=(16,), activation="tanh", rng=rng)
    quad = quadrature_tilted_moments(BASE1, energy.apply)
    mean = snis_expectation(BASE1, energy.apply, lambda z: z[:, 0], 40_000, rng)
    second = snis_expectation(BASE1, energy.apply, lambda z: z[:, 0] ** 2, 40_000, rng)
    q_second = quad["variance"].value + quad["mean"].value ** 2
    assert abs(mean.value - quad["mean"].value) < 3 * np.hypot(mean.error, quad["mean"].error)
    assert abs(second.value - q_second) < 3 * np.hypot(second.error, quad["variance"].error)


def test_chain_oracle_linear_gaussian():
    eps = 0.05
    m = chain_stationary_moments(lambda x: x, eps)
    assert m["variance"] == pytest.approx(1 / (1 - eps / 4), rel=1e-6)
    assert m["mean"] == pytest.approx(0.0, abs=1e-10)


def test_reports():
    rows = [{"label": "prior", "high_quality_fraction": 0.5, "modes_captured": 25.0}]
    assert metrics_csv(rows).splitlines()[0] == "label,high_quality_fraction,modes_captured"
    assert "prior" in format_summary(rows)
