import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latent_ebm import numerics as nx
from latent_ebm.models import (
    LOG_2PI,
    CheckpointError,
    EnergyNetwork,
    MlpNetwork,
    VaeModel,
    checkpoint_bytes,
    energy_eval,
    load_model,
    make_base_generator,
    model_to_checkpoint,
    relu_quadratic_energy,
    save_model,
    vae_elbo,
)


def tiny_vae(seed=0, sigma=1.0):
    return VaeModel(2, 2, hidden=(6,), activation="tanh", obs_noise_sigma=sigma,
                    rng=np.random.default_rng(seed))


def _zero_head(net: MlpNetwork):
    net.weights[-1].data[:] = 0.0
    net.biases[-1].data[:] = 0.0


def test_kl_zero_for_standard_posterior():
    vae = tiny_vae()
    _zero_head(vae.encoder)
    x = np.random.default_rng(1).standard_normal((5, 2))
    _, kl = vae.neg_elbo_terms(x, np.zeros((5, 2)))
    assert kl.item() == 0.0


def test_recon_constant_for_perfect_decoder():
    vae = tiny_vae(sigma=0.3)
    _zero_head(vae.decoder)
    x = np.zeros((4, 2))
    recon, _ = vae.neg_elbo_terms(x, np.random.default_rng(2).standard_normal((4, 2)))
    assert recon.item() == pytest.approx(0.5 * 2 * (LOG_2PI + np.log(0.09)), rel=0, abs=1e-14)


def test_elbo_noise_shape_checked():
    with pytest.raises(nx.GraphError):
        vae_elbo(tiny_vae(), np.zeros((3, 2)), np.zeros((2, 2)))


def _param_fd_error(loss_fn, params):
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


@pytest.mark.parametrize("seed", range(20))
def test_elbo_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    vae = tiny_vae(seed, sigma=float(rng.uniform(0.3, 1.5)))
    x = rng.standard_normal((3, 2))
    eps = rng.standard_normal((3, 2))
    assert _param_fd_error(lambda: vae_elbo(vae, x, eps), vae.parameters()) < 1e-4


@settings(max_examples=200, deadline=None)
@given(mu=st.floats(-5, 5), logvar=st.floats(-6, 6))
def test_kl_non_negative(mu, logvar):
    vae = tiny_vae()
    _zero_head(vae.encoder)
    vae.encoder.biases[-1].data[:] = [mu, mu, logvar, logvar]
    _, kl = vae.neg_elbo_terms(np.zeros((1, 2)), np.zeros((1, 2)))
    assert kl.item() >= 0.0


def test_energy_zero_head():
    e = EnergyNetwork(2, hidden=(8,), rng=np.random.default_rng(0))
    _zero_head(e.net)
    assert np.all(energy_eval(e, np.random.default_rng(1).standard_normal((6, 2))) == 0.0)


def test_energy_identical_rows():
    e = EnergyNetwork(2, hidden=(8, 8), rng=np.random.default_rng(0))
    vals = energy_eval(e, np.tile([[0.3, -1.2]], (5, 1)))
    assert np.all(vals == vals[0])


def test_exact_quadratic_network():
    e = relu_quadratic_energy(2)
    assert energy_eval(e, np.array([[3.0, 4.0]]))[0] == 12.5
    ints = np.array([[i, j] for i in range(-5, 6) for j in range(-5, 6)], dtype=float)
    np.testing.assert_array_equal(energy_eval(e, ints), 0.5 * np.sum(ints**2, 1))


def test_energy_has_no_accidental_translation_invariance():
    rng = np.random.default_rng(5)
    for _ in range(10):
        e = EnergyNetwork(2, hidden=(16, 16), rng=rng)
        x = rng.standard_normal((4, 2))
        delta = rng.standard_normal(2)
        assert np.all(energy_eval(e, x) != energy_eval(e, x + delta))


def test_energy_rejects_wrong_dimension():
    with pytest.raises(nx.GraphError):
        energy_eval(EnergyNetwork(2, hidden=(4,)), np.zeros((3, 3)))


# -- base generator -----------------------------------------------------------------


def test_identity_base():
    base = make_base_generator("identity_1d")
    assert base.decode_np(np.array([[0.7]]))[0, 0] == 0.7


@pytest.mark.parametrize("kind", ["identity_1d", "identity_2d", "vae"])
def test_prior_gradient(kind):
    base = make_base_generator(tiny_vae() if kind == "vae" else kind)
    rng = np.random.default_rng(3)
    z = rng.standard_normal((4, base.latent_dim))
    np.testing.assert_array_equal(base.grad_log_prior(z), -z)
    d = base.latent_dim
    np.testing.assert_allclose(base.log_prior(z), -0.5 * np.sum(z * z, 1) - 0.5 * d * LOG_2PI)
    for row in z:
        num = nx.numerical_grad(lambda a: base.log_prior(a[None])[0], row, 1e-5)
        assert np.max(np.abs(num - base.grad_log_prior(row))) < 1e-5


def test_vae_base_deterministic_and_frozen():
    vae = tiny_vae()
    base = make_base_generator(vae)
    z = np.random.default_rng(0).standard_normal((5, 2))
    assert base.decode_np(z).tobytes() == base.decode_np(z).tobytes()
    np.testing.assert_array_equal(base.decode_np(z), vae.decoder.apply(z))
    assert not any(p.requires_grad for p in base.parameters())
    vae.decoder.weights[0].data += 1.0
    assert not np.array_equal(base.decode_np(z), vae.decoder.apply(z))


def test_decoder_base_has_no_analytic_density():
    base = make_base_generator(tiny_vae())
    with pytest.raises(ValueError):
        base.log_density_x(np.zeros((1, 2)))


# -- checkpoints --------------------------------------------------------------------


def test_vae_checkpoint_round_trip(tmp_path):
    vae = tiny_vae(7)
    save_model(vae, tmp_path / "v.ckpt", {"seed": 7})
    back, meta = load_model(tmp_path / "v.ckpt")
    assert meta["seed"] == 7
    for a, b in zip(vae.parameters(), back.parameters()):
        assert a.data.tobytes() == b.data.tobytes()
    assert back.obs_noise_sigma == vae.obs_noise_sigma


def test_energy_checkpoint_round_trip(tmp_path):
    e = EnergyNetwork(2, hidden=(5, 3), rng=np.random.default_rng(1))
    save_model(e, tmp_path / "e.ckpt")
    back, _ = load_model(tmp_path / "e.ckpt")
    x = np.random.default_rng(2).standard_normal((4, 2))
    assert energy_eval(e, x).tobytes() == energy_eval(back, x).tobytes()


def test_checkpoint_bytes_deterministic():
    a = checkpoint_bytes(model_to_checkpoint(tiny_vae(3), {"x": 1}))
    b = checkpoint_bytes(model_to_checkpoint(tiny_vae(3), {"x": 1}))
    assert a == b and a[:4] == b"LTEB"


def test_future_version_rejected(tmp_path):
    raw = bytearray(checkpoint_bytes(model_to_checkpoint(tiny_vae())))
    raw[4:8] = (99).to_bytes(4, "little")
    (tmp_path / "f.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="unsupported version"):
        load_model(tmp_path / "f.ckpt")


def test_truncated_checkpoint(tmp_path):
    raw = checkpoint_bytes(model_to_checkpoint(tiny_vae()))
    (tmp_path / "t.ckpt").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="checksum"):
        load_model(tmp_path / "t.ckpt")


def test_corrupted_checkpoint(tmp_path):
    raw = bytearray(checkpoint_bytes(model_to_checkpoint(tiny_vae())))
    raw[40] ^= 0xFF
    (tmp_path / "c.ckpt").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="checksum"):
        load_model(tmp_path / "c.ckpt")
