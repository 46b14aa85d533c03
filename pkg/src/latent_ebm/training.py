"""VAE pre-training, latent-EBM maximum likelihood and the observation-space baseline.

Both EBM trainers minimise ``mean E(x+) - mean E(x-) + alpha * (mean E(x+)^2 + mean E(x-)^2)``
where ``x+`` is a data batch and ``x-`` are short-run Langevin samples. For the
latent EBM the negatives are ``G(z')`` with ``z'`` drawn by latent Langevin from
fresh prior draws; for the baseline they come from observation-space Langevin
initialised from a replay buffer.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from ._io import atomic_write_text, csv_text
from .datasets import ToyDataset
from .dynamics import LangevinConfig, ReplayBuffer, langevin_latent, langevin_observation
from .models import BaseGenerator, VaeModel

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class VaeTrainConfig:
    epochs: int = 64
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("invalid VAE training configuration")


@dataclass
class EbmTrainConfig:
    steps: int = 1000
    batch_size: int = 128
    learning_rate: float = 3e-4
    reg_coefficient: float = 0.1
    langevin: LangevinConfig = field(default_factory=lambda: LangevinConfig(0.01, 60))
    sample_langevin: LangevinConfig = field(default_factory=lambda: LangevinConfig(0.01, 100))
    eval_every: int = 50
    eval_samples: int = 2000
    patience: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.learning_rate < 0 or self.reg_coefficient < 0:
            raise ValueError("invalid EBM training configuration")
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be positive")
        if self.steps and self.eval_every > self.steps:
            raise ValueError("eval_every must not exceed steps")


@dataclass
class TrainLog:
    """Per-step records plus the step whose parameters were kept."""

    columns: tuple[str, ...]
    records: list[dict] = field(default_factory=list)
    best_step: int | None = None

    def append(self, **row) -> None:
        if self.records and row["step"] <= self.records[-1]["step"]:
            raise ValueError("log steps must increase")
        self.records.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([r.get(name, np.nan) for r in self.records], dtype=np.float64)

    def evaluations(self) -> list[tuple[int, float]]:
        return [(r["step"], r["metric"]) for r in self.records
                if r.get("metric") is not None and not math.isnan(r["metric"])]

    def to_csv(self) -> str:
        rows = []
        for r in self.records:
            rows.append([str(r["step"])] + ["" if r.get(c) is None or (isinstance(r.get(c), float) and math.isnan(r[c]))
                                            else r[c] for c in self.columns[1:]])
        return csv_text(self.columns, rows)

    def save(self, path) -> None:
        atomic_write_text(path, self.to_csv())


# -- VAE --------------------------------------------------------------------------


def train_vae(dataset: ToyDataset | np.ndarray, cfg: VaeTrainConfig | None = None,
              architecture: dict | None = None) -> tuple[VaeModel, TrainLog]:
    """Adam on the negative ELBO; one log row per epoch (epoch-mean loss).

    All randomness (init, shuffling, reparametrisation noise) flows from ``cfg.seed``.
    """
    cfg = cfg or VaeTrainConfig()
    data = dataset.points if isinstance(dataset, ToyDataset) else np.asarray(dataset, dtype=np.float64)
    if len(data) == 0:
        raise ValueError("empty dataset")
    arch = {"obs_dim": data.shape[1], **(architecture or {})}
    rng = np.random.default_rng(cfg.seed)
    model = VaeModel(rng=rng, **arch)
    params = model.parameters()
    opt = nx.adam(cfg.learning_rate)
    tlog = TrainLog(("step", "loss", "recon", "kl"))

    x0 = data[: min(len(data), 1024)]
    init_loss = model.neg_elbo(x0, np.zeros((len(x0), model.latent_dim))).item()
    tlog.append(step=0, loss=init_loss, recon=float("nan"), kl=float("nan"))

    it = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(len(data))
        tot = rec_tot = kl_tot = 0.0
        nb = 0
        for start in range(0, len(data), cfg.batch_size):
            batch = data[perm[start:start + cfg.batch_size]]
            noise = rng.standard_normal((len(batch), model.latent_dim))
            try:
                recon, kl = model.neg_elbo_terms(batch, noise)
                loss = recon + kl
                grads = nx.grad(loss, params)
            except nx.NonFiniteError as exc:
                raise TrainingDivergedError(f"VAE loss diverged at step {it}: {exc}") from exc
            nx.optimizer_apply(opt, params, grads)
            it += 1
            tot += loss.item()
            rec_tot += recon.item()
            kl_tot += kl.item()
            nb += 1
        tlog.append(step=epoch, loss=tot / nb, recon=rec_tot / nb, kl=kl_tot / nb)
        log.debug("vae epoch %d loss %.4f", epoch, tot / nb)
    tlog.best_step = cfg.epochs
    return model, tlog


# -- EBM gradient -------------------------------------------------------------------


@dataclass
class GradStep:
    grads: list[np.ndarray]
    positive: list[np.ndarray]
    negative: list[np.ndarray]
    e_pos: float
    e_neg: float
    reg: float
    negatives: np.ndarray


def phase_gradients(energy, x_pos: np.ndarray, x_neg: np.ndarray, reg_coefficient: float) -> GradStep:
    """Positive phase, negative phase, and total loss gradient w.r.t. the energy parameters."""
    params = energy.parameters()
    e_pos = energy(nx.Tensor(x_pos))
    e_neg = energy(nx.Tensor(x_neg))
    mean_pos = nx.mean(e_pos)
    mean_neg = nx.mean(e_neg)
    pos = nx.grad(mean_pos, params)
    neg = nx.grad(mean_neg, params)
    reg_value = 0.0
    total = [p - n for p, n in zip(pos, neg)]
    if reg_coefficient > 0:
        reg = (nx.mean(nx.square(e_pos)) + nx.mean(nx.square(e_neg))) * reg_coefficient
        reg_value = reg.item()
        total = [t + r for t, r in zip(total, nx.grad(reg, params))]
    return GradStep(total, pos, neg, mean_pos.item(), mean_neg.item(), reg_value, x_neg)


def ebm_grad_step(energy, base: BaseGenerator, data_batch, cfg: EbmTrainConfig,
                  rng: np.random.Generator) -> GradStep:
    """One maximum-likelihood gradient for the latent EBM.

    Negatives: ``cfg.langevin.steps`` latent Langevin steps from fresh prior draws,
    then decoded. Gradients never reach the base generator.
    """
    data_batch = np.asarray(data_batch, dtype=np.float64)
    if len(data_batch) != cfg.batch_size:
        raise ValueError(f"batch has {len(data_batch)} rows, expected {cfg.batch_size}")
    z0 = base.sample_prior(cfg.batch_size, rng)
    z_neg = langevin_latent(base, energy, z0, cfg.langevin, rng).final
    return phase_gradients(energy, data_batch, base.decode_np(z_neg), cfg.reg_coefficient)


# -- early stopping -----------------------------------------------------------------


def early_stop(metrics, patience: int) -> tuple[bool, int]:
    """Decide whether to stop given the evaluation history (higher metric is better).

    ``metrics`` is a sequence of values or of ``(step, value)`` pairs. Returns
    ``(stop, best)`` where ``best`` is the step (or index) of the first maximum;
    stop once the last ``patience`` evaluations all failed to beat the running best.
    """
    metrics = list(metrics)
    if not metrics:
        raise ValueError("need at least one evaluation")
    if patience < 1:
        raise ValueError("patience must be positive")
    pairs = metrics if isinstance(metrics[0], tuple) else list(enumerate(metrics))
    best_step, best_val = pairs[0]
    since = 0
    for step, val in pairs[1:]:
        if val > best_val:
            best_step, best_val, since = step, val, 0
        else:
            since += 1
    return since >= patience, best_step


# -- training loops -----------------------------------------------------------------

EvalFn = Callable[[object, np.random.Generator], float]


def _snapshot(params) -> list[np.ndarray]:
    return [p.data.copy() for p in params]


def _restore(params, arrays) -> None:
    for p, a in zip(params, arrays):
        p.data = a.copy()


def _check_phases(step: int, gs: GradStep) -> None:
    vals = [gs.e_pos, gs.e_neg, gs.reg]
    if not all(math.isfinite(v) for v in vals) or max(abs(gs.e_pos), abs(gs.e_neg)) > DIVERGENCE_LIMIT:
        raise TrainingDivergedError(
            f"EBM training diverged at step {step}: e_pos={gs.e_pos:.4g} e_neg={gs.e_neg:.4g} "
            f"phase gap={gs.e_neg - gs.e_pos:.4g}")
    for g in gs.grads:
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite EBM gradient at step {step}")


def _ebm_loop(energy, data: np.ndarray, cfg: EbmTrainConfig, grad_fn, eval_fn: EvalFn | None,
              frozen: list | None = None) -> TrainLog:
    tlog = TrainLog(("step", "e_pos", "e_neg", "reg", "metric"))
    if cfg.steps == 0:
        return tlog
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    rng, eval_rng = np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])
    frozen_before = _snapshot(frozen or [])
    params = energy.parameters()
    opt = nx.adam(cfg.learning_rate)
    best_params = _snapshot(params)
    evals: list[tuple[int, float]] = []
    for step in range(1, cfg.steps + 1):
        batch = data[rng.integers(0, len(data), cfg.batch_size)]
        try:
            gs = grad_fn(batch, rng)
        except nx.NonFiniteError as exc:
            raise TrainingDivergedError(f"EBM training diverged at step {step}: {exc}") from exc
        _check_phases(step, gs)
        nx.optimizer_apply(opt, params, gs.grads)
        metric = float("nan")
        if eval_fn is not None and step % cfg.eval_every == 0:
            metric = float(eval_fn(energy, eval_rng))
            evals.append((step, metric))
            stop, best = early_stop(evals, cfg.patience)
            if best == step:
                best_params = _snapshot(params)
            log.info("step %d e_pos %.4f e_neg %.4f metric %.4f", step, gs.e_pos, gs.e_neg, metric)
            tlog.append(step=step, e_pos=gs.e_pos, e_neg=gs.e_neg, reg=gs.reg, metric=metric)
            if stop:
                log.info("early stop at step %d, best step %d", step, best)
                break
        else:
            tlog.append(step=step, e_pos=gs.e_pos, e_neg=gs.e_neg, reg=gs.reg, metric=metric)
    if evals:
        _, tlog.best_step = early_stop(evals, cfg.patience)
        _restore(params, best_params)
    else:
        tlog.best_step = tlog.records[-1]["step"]
    for before, p in zip(frozen_before, frozen or []):
        if not np.array_equal(before, p.data):
            raise AssertionError("base generator parameters changed during EBM training")
    return tlog


def train_latent_ebm(energy, base: BaseGenerator, dataset, cfg: EbmTrainConfig | None = None,
                     eval_fn: EvalFn | None = None) -> tuple[object, TrainLog]:
    """Fit the latent EBM with the base frozen; keeps the parameters of the best evaluation."""
    cfg = cfg or EbmTrainConfig()
    data = dataset.points if isinstance(dataset, ToyDataset) else np.asarray(dataset, dtype=np.float64)
    if energy.in_dim != base.obs_dim:
        raise ValueError("energy input dimension must match the base generator output")
    base_params = base.parameters()
    if any(p.requires_grad for p in base_params):
        raise ValueError("base generator parameters must be frozen")
    tlog = _ebm_loop(energy, data, cfg, lambda b, r: ebm_grad_step(energy, base, b, cfg, r), eval_fn,
                     frozen=base_params)
    return energy, tlog


def train_pixel_ebm(energy, dataset, cfg: EbmTrainConfig | None = None, buffer: ReplayBuffer | None = None,
                    eval_fn: EvalFn | None = None) -> tuple[object, TrainLog]:
    """Observation-space EBM with persistent (replay-buffer) chain initialisation."""
    cfg = cfg or EbmTrainConfig()
    data = dataset.points if isinstance(dataset, ToyDataset) else np.asarray(dataset, dtype=np.float64)
    if energy.in_dim != data.shape[1]:
        raise ValueError("energy input dimension must match the data dimension")
    buffer = buffer if buffer is not None else ReplayBuffer(data.shape[1])

    def step_fn(batch, rng):
        x0, _ = buffer.init_batch(cfg.batch_size, rng)
        x_neg = langevin_observation(energy, x0, cfg.langevin, rng).final
        buffer.push(x_neg)
        return phase_gradients(energy, batch, x_neg, cfg.reg_coefficient)

    tlog = _ebm_loop(energy, data, cfg, step_fn, eval_fn)
    return energy, tlog


# -- sampling helpers ---------------------------------------------------------------


def sample_latent_ebm(base: BaseGenerator, energy, n: int, cfg: LangevinConfig, rng: np.random.Generator,
                      chunk: int = 2000) -> tuple[np.ndarray, np.ndarray]:
    """Decoded samples and their latents; chains start from the prior."""
    zs = []
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        z0 = base.sample_prior(m, rng)
        zs.append(z0 if energy is None else langevin_latent(base, energy, z0, cfg, rng).final)
    z = np.concatenate(zs)
    return base.decode_np(z), z


def sample_pixel_ebm(energy, buffer: ReplayBuffer, n: int, cfg: LangevinConfig, rng: np.random.Generator,
                     chunk: int = 2000) -> np.ndarray:
    out = []
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        x0, _ = buffer.init_batch(m, rng)
        out.append(langevin_observation(energy, x0, cfg, rng).final)
    return np.concatenate(out)


def config_dict(cfg) -> dict:
    return asdict(cfg)
