"""Energy-based models in the latent space of frozen decoder generators."""

from .datasets import ToyDataset, gen_25_gaussians, gen_swiss_roll, load_csv, save_csv
from .dynamics import (
    LangevinConfig,
    ReplayBuffer,
    langevin_latent,
    langevin_observation,
    langevin_observation_tilted,
)
from .evaluation import ModeSpec, high_quality_fraction, histogram_divergence, modes_captured
from .models import BaseGenerator, EnergyNetwork, MlpNetwork, VaeModel, make_base_generator
from .training import EbmTrainConfig, VaeTrainConfig, train_latent_ebm, train_pixel_ebm, train_vae

__version__ = "0.1.0"
