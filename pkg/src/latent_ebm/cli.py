"""``latent-ebm`` command line: gen-data, train-vae, train-ebm, sample, eval, plot, verify-oracles.

Every command resolves its configuration (defaults < ``--config`` file < flags and
``--set key=value``), writes ``<outdir>/config.resolved`` and then its outputs:

    <outdir>/config.resolved
    <outdir>/checkpoints/   vae.ckpt, ebm.ckpt, training logs
    <outdir>/samples/       data.csv, samples.csv, latents.csv, trajectory.csv
    <outdir>/metrics.csv
    <outdir>/figures/       *.svg

Exit codes: 0 success, 1 invalid usage or configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, write_matrix_csv
from .config import SEED_ENV, ConfigError, RunConfig
from .datasets import DatasetFormatError, generate, grid_centers, load_csv, save_csv
from .dynamics import ReplayBuffer, langevin_latent, langevin_prior, save_trajectory
from .evaluation import format_summary, high_quality_fraction, histogram_divergence, modes_captured, save_metrics
from .models import BaseGenerator, CheckpointError, EnergyNetwork, VaeModel, load_model, make_base_generator, save_model
from .oracles import FAULTS, verify_oracles
from .plotting import PlotStyle, plot_svg
from .training import config_dict, sample_latent_ebm, sample_pixel_ebm, train_latent_ebm, train_pixel_ebm, train_vae

log = logging.getLogger("latent_ebm")

REFERENCE_SEED_OFFSET = 1_000_003


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- argument wiring --------------------------------------------------------------

# flag name -> config key, per subcommand
FLAGS = {
    "gen-data": {"kind": "data.kind", "n": "data.n", "sigma": "data.sigma", "noise": "data.noise"},
    "train-vae": {"data": "data.path", "kind": "data.kind", "n": "data.n", "epochs": "vae.epochs",
                  "batch_size": "vae.batch_size", "lr": "vae.learning_rate", "hidden": "vae.hidden",
                  "obs_noise_sigma": "vae.obs_noise_sigma"},
    "train-ebm": {"base": "ebm.base", "data": "data.path", "kind": "data.kind", "n": "data.n",
                  "steps": "ebm.steps", "space": "ebm.space", "lr": "ebm.learning_rate",
                  "batch_size": "ebm.batch_size", "hidden": "ebm.hidden", "eval_every": "ebm.eval_every",
                  "patience": "ebm.patience"},
    "sample": {"base": "sample.base", "ebm": "sample.ebm", "n": "sample.n", "steps": "sample.steps",
               "epsilon": "sample.epsilon", "trajectories": "sample.trajectories"},
    "eval": {"samples": "eval.samples", "kind": "data.kind", "reference": "metric.reference",
             "bins": "metric.bins"},
    "plot": {"samples": "plot.samples", "trajectory": "plot.trajectory"},
    "verify-oracles": {},
}

TYPES = {"n": int, "steps": int, "epochs": int, "batch_size": int, "eval_every": int, "patience": int,
         "trajectories": int, "bins": int, "sigma": float, "noise": float, "lr": float, "epsilon": float,
         "obs_noise_sigma": float}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latent-ebm", description="Latent-space energy-based models on toy 2-D data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, flags in FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file (e.g. a previous config.resolved)")
        p.add_argument("--outdir", help="output directory")
        p.add_argument("--seed", type=int, help=f"random seed (falls back to ${SEED_ENV}, then 0)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
        for flag, key in flags.items():
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=TYPES.get(flag, str), help=f"sets {key}")
        if name == "plot":
            p.add_argument("--no-centers", action="store_true", help="omit mode-centre crosses")
        if name == "verify-oracles":
            p.add_argument("--inject-fault", choices=FAULTS, help=argparse.SUPPRESS)
    return parser


def resolve(args) -> RunConfig:
    overrides: dict[str, object] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val
    for flag, key in FLAGS[args.command].items():
        val = getattr(args, flag)
        if val is not None:
            overrides[key] = val
    if getattr(args, "no_centers", False):
        overrides["plot.centers"] = False
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.outdir is not None:
        overrides["outdir"] = args.outdir
    cfg = RunConfig.resolve(args.config, overrides)
    cfg.validate()
    return cfg


# -- helpers ----------------------------------------------------------------------


def _out(cfg: RunConfig, *parts) -> Path:
    return Path(cfg["outdir"], *parts)


def _dataset(cfg: RunConfig):
    if cfg["data.path"]:
        return load_csv(cfg["data.path"])
    return _generate(cfg, cfg.seed)


def _generate(cfg: RunConfig, seed: int):
    params = {"sigma": cfg["data.sigma"]} if cfg["data.kind"] == "gaussians25" else {"noise": cfg["data.noise"]}
    return generate(cfg["data.kind"], cfg["data.n"], seed, **params)


def _require(cfg: RunConfig, key: str) -> str:
    if not cfg[key]:
        raise ConfigError(f"{key} is required (set it with the matching flag)")
    return cfg[key]


def _load_base(path) -> BaseGenerator:
    model, _ = load_model(path)
    if not isinstance(model, VaeModel):
        raise ConfigError(f"{path} is not a VAE checkpoint")
    return make_base_generator(model)


def _load_energy(path):
    model, meta = load_model(path)
    if not isinstance(model, EnergyNetwork):
        raise ConfigError(f"{path} is not an energy checkpoint")
    return model, meta


def _quality_fn(cfg: RunConfig, data: np.ndarray):
    """Higher-is-better metric used for early stopping during EBM training."""
    if cfg["data.kind"] == "gaussians25":
        spec = cfg.mode_spec()
        return lambda x: high_quality_fraction(x, spec)
    return lambda x: -histogram_divergence(x, data, cfg["metric.bins"], cfg.bounds())


def _read_points(path) -> np.ndarray:
    return load_csv(path).points


# -- commands ---------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> None:
    ds = _generate(cfg, cfg.seed)
    save_csv(ds, _out(cfg, "samples", "data.csv"))
    print(f"wrote {len(ds.points)} {ds.kind} points to {_out(cfg, 'samples', 'data.csv')}")


def cmd_train_vae(cfg: RunConfig) -> None:
    ds = _dataset(cfg)
    model, tlog = train_vae(ds, cfg.vae_train(), cfg.vae_architecture())
    meta = {"seed": cfg.seed, "epochs": cfg["vae.epochs"], "config": config_dict(cfg.vae_train())}
    save_model(model, _out(cfg, "checkpoints", "vae.ckpt"), meta)
    tlog.save(_out(cfg, "checkpoints", "vae_log.csv"))
    print(f"vae: initial loss {tlog.records[0]['loss']:.4f}, final epoch loss {tlog.records[-1]['loss']:.4f}")


def cmd_train_ebm(cfg: RunConfig) -> None:
    data = _dataset(cfg).points
    tcfg = cfg.ebm_train()
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    init_rng = np.random.default_rng(seeds[0])
    energy = EnergyNetwork(data.shape[1], cfg.hidden("ebm"), cfg["ebm.activation"], init_rng)
    quality = _quality_fn(cfg, data)
    space = cfg["ebm.space"]
    if space == "latent":
        base = _load_base(_require(cfg, "ebm.base"))

        def eval_fn(e, rng):
            return quality(sample_latent_ebm(base, e, tcfg.eval_samples, tcfg.sample_langevin, rng)[0])

        energy, tlog = train_latent_ebm(energy, base, data, tcfg, eval_fn)
    elif space == "data":
        buffer = ReplayBuffer(data.shape[1], cfg["ebm.buffer_capacity"], cfg["ebm.reinit_prob"])

        def eval_fn(e, rng):
            return quality(sample_pixel_ebm(e, buffer, tcfg.eval_samples, tcfg.sample_langevin, rng))

        energy, tlog = train_pixel_ebm(energy, data, tcfg, buffer, eval_fn)
    else:
        raise ConfigError(f"ebm.space must be 'latent' or 'data', got {space!r}")
    meta = {"seed": cfg.seed, "steps": cfg["ebm.steps"], "best_step": tlog.best_step, "space": space,
            "config": config_dict(tcfg)}
    save_model(energy, _out(cfg, "checkpoints", "ebm.ckpt"), meta)
    tlog.save(_out(cfg, "checkpoints", "ebm_log.csv"))
    evals = tlog.evaluations()
    best = dict(evals).get(tlog.best_step) if evals else None
    print(f"ebm ({space}): {len(tlog.records)} steps, best step {tlog.best_step}"
          + (f", best metric {best:.4f}" if best is not None else ""))


def cmd_sample(cfg: RunConfig) -> None:
    base = _load_base(_require(cfg, "sample.base"))
    rng = np.random.default_rng(cfg.seed)
    n = cfg["sample.n"]
    if n < 1:
        raise ConfigError("sample.n must be positive")
    energy = _load_energy(cfg["sample.ebm"])[0] if cfg["sample.ebm"] else None
    x, z = sample_latent_ebm(base, energy, n, cfg.sample_langevin(), rng)
    header = [f"x{i}" for i in range(x.shape[1])]
    write_matrix_csv(_out(cfg, "samples", "samples.csv"), header, x)
    write_matrix_csv(_out(cfg, "samples", "latents.csv"), [f"z{i}" for i in range(z.shape[1])], z)
    k = cfg["sample.trajectories"]
    if k > 0:
        lcfg = cfg.sample_langevin(record=True)
        z0 = base.sample_prior(k, rng)
        res = langevin_prior(base, z0, lcfg, rng) if energy is None else langevin_latent(base, energy, z0, lcfg, rng)
        steps, chains, d = res.trajectory.shape
        decoded = base.decode_np(res.trajectory.reshape(-1, d)).reshape(steps, chains, -1)
        save_trajectory(decoded, _out(cfg, "samples", "trajectory.csv"))
    print(f"wrote {n} samples ({'EBM' if energy is not None else 'prior'}) to {_out(cfg, 'samples', 'samples.csv')}")


def cmd_eval(cfg: RunConfig) -> None:
    paths = [p for p in str(_require(cfg, "eval.samples")).split(",") if p]
    kind = cfg["data.kind"]
    reference = None
    if kind == "swiss_roll":
        reference = (_read_points(cfg["metric.reference"]) if cfg["metric.reference"]
                     else _generate(cfg, cfg.seed + REFERENCE_SEED_OFFSET).points)
    spec = cfg.mode_spec()
    rows = []
    for entry in paths:
        label, _, path = entry.rpartition("=")
        x = _read_points(path)
        row: dict[str, object] = {"label": label or Path(path).stem, "n": float(len(x))}
        if kind == "gaussians25":
            row["high_quality_fraction"] = high_quality_fraction(x, spec)
            row["modes_captured"] = float(modes_captured(x, spec))
        else:
            row["histogram_divergence"] = histogram_divergence(x, reference, cfg["metric.bins"], cfg.bounds())
        rows.append(row)
    if reference is not None:
        other = _generate(cfg, cfg.seed + 2 * REFERENCE_SEED_OFFSET).points
        rows.append({"label": "noise_floor", "n": float(len(other)),
                     "histogram_divergence": histogram_divergence(other, reference, cfg["metric.bins"], cfg.bounds())})
    save_metrics(rows, _out(cfg, "metrics.csv"))
    print(format_summary(rows))


def cmd_plot(cfg: RunConfig) -> None:
    samples = _read_points(cfg["plot.samples"]) if cfg["plot.samples"] else None
    trajectory = None
    if cfg["plot.trajectory"]:
        trajectory = _read_trajectory(cfg["plot.trajectory"])
    if samples is None and trajectory is None:
        raise ConfigError("plot needs --samples and/or --trajectory")
    centers = grid_centers() if cfg["plot.centers"] and cfg["data.kind"] == "gaussians25" else None
    stem = Path(cfg["plot.samples"] or cfg["plot.trajectory"]).stem
    path = _out(cfg, "figures", f"{stem}.svg")
    plot_svg(path, samples, centers, trajectory, PlotStyle(bounds=cfg.bounds()))
    print(f"wrote {path}")


def _read_trajectory(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("step,"):
        raise DatasetFormatError(f"{path}: not a trajectory CSV")
    rows = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line], dtype=np.float64)
    if rows.size == 0:
        raise DatasetFormatError(f"{path}: no data rows")
    steps = rows[:, 0].astype(int)
    n_steps = steps.max() + 1
    chains = len(rows) // n_steps
    return rows[:, 1:].reshape(n_steps, chains, -1)


def cmd_verify_oracles(cfg: RunConfig, fault: str | None) -> int:
    _, code = verify_oracles(fault, cfg.seed)
    return code


COMMANDS = {"gen-data": cmd_gen_data, "train-vae": cmd_train_vae, "train-ebm": cmd_train_ebm,
            "sample": cmd_sample, "eval": cmd_eval, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ConfigError, ValueError, OSError) as exc:
        print(f"latent-ebm: error: {exc}", file=sys.stderr)
        return 1
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        atomic_write_text(_out(cfg, "config.resolved"), cfg.resolved_text())
        if args.command == "verify-oracles":
            return cmd_verify_oracles(cfg, args.inject_fault)
        COMMANDS[args.command](cfg)
    except (ConfigError, DatasetFormatError) as exc:
        print(f"latent-ebm: error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, FileNotFoundError) as exc:
        print(f"latent-ebm: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime failure
        print(f"latent-ebm: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
