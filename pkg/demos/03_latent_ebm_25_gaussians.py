"""
A latent EBM on top of a frozen VAE decoder
===========================================

Fit a VAE to the 25-Gaussians grid, freeze its decoder, then learn an energy
on decoded samples so that Langevin chains in latent space concentrate on the
modes the VAE blurs. Networks are narrow here so the script finishes in a
few minutes; the command-line defaults use 512-wide layers.
"""

import numpy as np

from latent_ebm import (EbmTrainConfig, EnergyNetwork, LangevinConfig, ModeSpec, VaeTrainConfig,
                        gen_25_gaussians, high_quality_fraction, make_base_generator, modes_captured,
                        train_latent_ebm, train_vae)
from latent_ebm.training import sample_latent_ebm

data = gen_25_gaussians(10_000, seed=0)

# 1. the base: a VAE with a small observation noise, then only its decoder is kept
vae, vae_log = train_vae(data, VaeTrainConfig(epochs=100, batch_size=128, seed=0),
                         {"hidden": (128, 128), "obs_noise_sigma": 0.1})
base = make_base_generator(vae)
print(f"VAE loss {vae_log.records[0]['loss']:.1f} -> {vae_log.records[-1]['loss']:.3f}")

spec = ModeSpec()
rng = np.random.default_rng(7)
sampler = LangevinConfig(epsilon=0.01, steps=100)
prior_x, _ = sample_latent_ebm(base, None, 5000, sampler, rng)
print(f"prior   high-quality {high_quality_fraction(prior_x, spec):.3f}  modes {modes_captured(prior_x, spec)}")

# 2. the energy is trained with negatives from short latent chains; the base stays frozen.
# The demo's narrow nets move slowly, so patience is generous and the rate is a bit higher
energy = EnergyNetwork(2, (128, 128), rng=np.random.default_rng(1))
cfg = EbmTrainConfig(steps=1000, eval_every=100, eval_samples=1000, patience=20, learning_rate=1e-3, seed=0)


def score(e, r):
    x, _ = sample_latent_ebm(base, e, cfg.eval_samples, cfg.sample_langevin, r)
    return high_quality_fraction(x, spec)


energy, ebm_log = train_latent_ebm(energy, base, data, cfg, eval_fn=score)
print(f"kept parameters from step {ebm_log.best_step}")

# 3. sampling the EBM: 100 latent Langevin steps from the prior, then decode
ebm_x, _ = sample_latent_ebm(base, energy, 5000, sampler, rng)
print(f"latent EBM high-quality {high_quality_fraction(ebm_x, spec):.3f}  modes {modes_captured(ebm_x, spec)}")
