"""Run configuration: flat ``section.key=value`` text, typed by the defaults.

Precedence is defaults < config file < command-line overrides. The seed has one
extra fallback layer, the ``LTEBM_SEED`` environment variable, which sits between
the defaults and the file. ``resolved_text`` writes every key, so a resolved file
alone reproduces a run.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

from .dynamics import LangevinConfig
from .evaluation import ModeSpec
from .training import EbmTrainConfig, VaeTrainConfig

SEED_ENV = "LTEBM_SEED"
DATA_KINDS = ("gaussians25", "swiss_roll")

DEFAULTS: dict[str, object] = {
    "seed": 0,
    "outdir": "run",
    "data.kind": "gaussians25",
    "data.n": 10_000,
    "data.sigma": 0.05,
    "data.noise": 0.0,
    "data.path": "",
    "vae.hidden": "512,512",
    "vae.activation": "relu",
    "vae.latent_dim": 2,
    "vae.obs_noise_sigma": 0.1,
    "vae.epochs": 64,
    "vae.batch_size": 128,
    "vae.learning_rate": 1e-3,
    "ebm.space": "latent",
    "ebm.hidden": "512,512",
    "ebm.activation": "relu",
    "ebm.steps": 1000,
    "ebm.batch_size": 128,
    "ebm.learning_rate": 3e-4,
    "ebm.reg_coefficient": 0.1,
    "ebm.eval_every": 50,
    "ebm.eval_samples": 2000,
    "ebm.patience": 3,
    "ebm.base": "",
    "ebm.buffer_capacity": 10_000,
    "ebm.reinit_prob": 0.05,
    "langevin.epsilon": 0.01,
    "langevin.steps": 60,
    "langevin.noise_scale": 1.0,
    "sample.n": 10_000,
    "sample.epsilon": 0.01,
    "sample.steps": 100,
    "sample.noise_scale": 1.0,
    "sample.base": "",
    "sample.ebm": "",
    "sample.trajectories": 0,
    "metric.sigma": 0.05,
    "metric.min_count": 20,
    "metric.radius_multiplier": 4.0,
    "metric.bins": 50,
    "metric.bound": 6.0,
    "metric.reference": "",
    "eval.samples": "",
    "plot.samples": "",
    "plot.trajectory": "",
    "plot.centers": True,
}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "1")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_text(text: str, source: str = "<config>") -> dict[str, object]:
    out = {}
    for i, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source} line {i}: expected key=value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{source} line {i}: unknown key {key!r}")
        out[key] = _coerce(key, raw)
    return out


class RunConfig:
    """Resolved key/value mapping with typed views for each component."""

    def __init__(self, values: Mapping[str, object] | None = None):
        self.values = dict(DEFAULTS)
        for key, val in (values or {}).items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            self.values[key] = _coerce(key, _format(val)) if not isinstance(val, str) else _coerce(key, val)

    @classmethod
    def resolve(cls, path=None, overrides: Mapping[str, object] | None = None,
                env: Mapping[str, str] | None = None) -> "RunConfig":
        env = os.environ if env is None else env
        layered: dict[str, object] = {}
        if env.get(SEED_ENV):
            layered["seed"] = _coerce("seed", env[SEED_ENV])
        if path is not None:
            layered.update(parse_text(Path(path).read_text(), str(path)))
        layered.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls(layered)

    def __getitem__(self, key: str):
        return self.values[key]

    def resolved_text(self) -> str:
        return "".join(f"{k}={_format(self.values[k])}\n" for k in sorted(self.values))

    def validate(self) -> None:
        """Build every typed view once so bad values fail before any work starts."""
        if self["data.kind"] not in DATA_KINDS:
            raise ConfigError(f"data.kind must be one of {DATA_KINDS}, got {self['data.kind']!r}")
        if self["ebm.space"] not in ("latent", "data"):
            raise ConfigError(f"ebm.space must be 'latent' or 'data', got {self['ebm.space']!r}")
        if self["data.n"] < 1 or self["sample.n"] < 1 or self["metric.bound"] <= 0:
            raise ConfigError("data.n, sample.n and metric.bound must be positive")
        try:
            self.vae_train()
            self.ebm_train()
            self.sample_langevin()
            self.mode_spec()
            self.hidden("vae")
            self.hidden("ebm")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # -- typed views ----------------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.values["seed"])

    def hidden(self, section: str) -> tuple[int, ...]:
        raw = str(self.values[f"{section}.hidden"])
        try:
            sizes = tuple(int(s) for s in raw.split(",") if s.strip())
        except ValueError:
            raise ConfigError(f"{section}.hidden must be comma-separated integers, got {raw!r}") from None
        if not sizes or min(sizes) < 1:
            raise ConfigError(f"{section}.hidden must list positive widths")
        return sizes

    def vae_architecture(self) -> dict:
        return {"latent_dim": self["vae.latent_dim"], "hidden": self.hidden("vae"),
                "activation": self["vae.activation"], "obs_noise_sigma": self["vae.obs_noise_sigma"]}

    def vae_train(self) -> VaeTrainConfig:
        return VaeTrainConfig(self["vae.epochs"], self["vae.batch_size"], self["vae.learning_rate"], self.seed)

    def langevin(self) -> LangevinConfig:
        return LangevinConfig(self["langevin.epsilon"], self["langevin.steps"], self["langevin.noise_scale"])

    def sample_langevin(self, record: bool = False) -> LangevinConfig:
        return LangevinConfig(self["sample.epsilon"], self["sample.steps"], self["sample.noise_scale"], record)

    def ebm_train(self) -> EbmTrainConfig:
        steps = self["ebm.steps"]
        return EbmTrainConfig(
            steps=steps, batch_size=self["ebm.batch_size"], learning_rate=self["ebm.learning_rate"],
            reg_coefficient=self["ebm.reg_coefficient"], langevin=self.langevin(),
            sample_langevin=self.sample_langevin(), eval_every=min(self["ebm.eval_every"], max(steps, 1)),
            eval_samples=self["ebm.eval_samples"], patience=self["ebm.patience"], seed=self.seed)

    def mode_spec(self) -> ModeSpec:
        return ModeSpec(sigma=self["metric.sigma"], min_count=self["metric.min_count"],
                        quality_radius_multiplier=self["metric.radius_multiplier"])

    def bounds(self) -> tuple[float, float]:
        b = float(self["metric.bound"])
        return (-b, b)
