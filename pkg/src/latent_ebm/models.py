"""Networks, the frozen base generator, and the binary checkpoint format."""

from __future__ import annotations

import copy
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from ._io import atomic_write_bytes
from .numerics import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))

ACTIVATIONS = ("tanh", "relu", "identity")


def _activate(h: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return nx.relu(h)
    if kind == "tanh":
        return nx.tanh(h)
    return h


def _activate_np(h: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(h, 0.0)
    if kind == "tanh":
        return np.tanh(h)
    return h


class MlpNetwork:
    """Fully connected network ``layer_sizes[0] -> ... -> layer_sizes[-1]``.

    ``activations[i]`` is applied after layer ``i``; the last one is normally
    ``identity``. Weights are stored as ``(fan_in, fan_out)`` so a batch of
    row vectors multiplies on the left.
    """

    def __init__(self, layer_sizes: Sequence[int], activations: Sequence[str] | str = "relu",
                 rng: np.random.Generator | None = None, requires_grad: bool = True):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or min(layer_sizes) < 1:
            raise ValueError(f"bad layer sizes {layer_sizes}")
        n_layers = len(layer_sizes) - 1
        if isinstance(activations, str):
            activations = [activations] * (n_layers - 1) + ["identity"]
        activations = list(activations)
        if len(activations) != n_layers or any(a not in ACTIVATIONS for a in activations):
            raise ValueError(f"need {n_layers} activations from {ACTIVATIONS}, got {activations}")
        self.layer_sizes = layer_sizes
        self.activations = activations
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for i, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            bound = np.sqrt(1.0 / fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad, f"W{i}"))
            self.biases.append(Tensor(rng.uniform(-bound, bound, fan_out), requires_grad, f"b{i}"))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def named_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {f"{prefix}{p.name}": p.data for p in self.parameters()}

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for p in self.parameters():
            key = f"{prefix}{p.name}"
            if key not in arrays:
                raise CheckpointError(f"missing array {key!r}")
            if arrays[key].shape != p.shape:
                raise CheckpointError(f"shape mismatch for {key!r}: {arrays[key].shape} vs {p.shape}")
            p.data = np.array(arrays[key], dtype=np.float64)

    def frozen_copy(self) -> "MlpNetwork":
        """Deep copy whose parameters never request gradients."""
        net = copy.deepcopy(self)
        for p in net.parameters():
            p.requires_grad = False
            p.grad = None
        return net

    def _check_input(self, shape) -> None:
        if len(shape) != 2 or shape[1] != self.in_dim:
            raise nx.GraphError(f"expected input of shape (batch, {self.in_dim}), got {tuple(shape)}")

    def __call__(self, x) -> Tensor:
        x = nx.as_tensor(x)
        self._check_input(x.shape)
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = _activate(h @ w + b, act)
        return h

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Graph-free forward pass on a plain array."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x.shape)
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            h = _activate_np(h @ w.data + b.data, act)
        if not np.all(np.isfinite(h)):
            raise nx.NonFiniteError("non-finite network output")
        return h


# -- VAE ------------------------------------------------------------------------


class VaeModel:
    """Gaussian-likelihood VAE with a standard-normal prior.

    The encoder emits ``2 * latent_dim`` columns: mean first, then log-variance.
    """

    def __init__(self, obs_dim: int = 2, latent_dim: int = 2, hidden: Sequence[int] = (512, 512),
                 activation: str = "relu", obs_noise_sigma: float = 0.1,
                 rng: np.random.Generator | None = None):
        if obs_noise_sigma <= 0:
            raise ValueError("obs_noise_sigma must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.obs_dim = int(obs_dim)
        self.latent_dim = int(latent_dim)
        self.hidden = [int(h) for h in hidden]
        self.activation = activation
        self.obs_noise_sigma = float(obs_noise_sigma)
        self.encoder = MlpNetwork([self.obs_dim, *self.hidden, 2 * self.latent_dim], activation, rng)
        self.decoder = MlpNetwork([self.latent_dim, *self.hidden, self.obs_dim], activation, rng)

    def parameters(self) -> list[Tensor]:
        return self.encoder.parameters() + self.decoder.parameters()

    def encode(self, x) -> tuple[Tensor, Tensor]:
        h = self.encoder(x)
        d = self.latent_dim
        return h[:, :d], h[:, d:]

    def decode(self, z) -> Tensor:
        return self.decoder(z)

    def neg_elbo_terms(self, batch, noise) -> tuple[Tensor, Tensor]:
        """Batch-mean reconstruction NLL and KL as separate scalars."""
        x = nx.as_tensor(batch)
        noise = nx.as_tensor(noise)
        if noise.shape != (x.shape[0], self.latent_dim):
            raise nx.GraphError(f"noise must have shape {(x.shape[0], self.latent_dim)}, got {noise.shape}")
        mu, logvar = self.encode(x)
        z = mu + nx.exp(logvar * 0.5) * noise
        resid = nx.square(x - self.decode(z))
        s2 = self.obs_noise_sigma ** 2
        const = 0.5 * self.obs_dim * (LOG_2PI + np.log(s2))
        recon = nx.mean(nx.tsum(resid, axis=1)) * (0.5 / s2) + const
        kl_rows = nx.tsum(nx.square(mu) + (nx.expm1(logvar) - logvar), axis=1) * 0.5
        return recon, nx.mean(kl_rows)

    def neg_elbo(self, batch, noise) -> Tensor:
        recon, kl = self.neg_elbo_terms(batch, noise)
        return recon + kl


def vae_elbo(model: VaeModel, batch, noise) -> Tensor:
    """Negative ELBO averaged over the batch, with caller-supplied reparametrization noise."""
    return model.neg_elbo(batch, noise)


# -- energy ---------------------------------------------------------------------


class EnergyNetwork:
    """Scalar energy per input row."""

    def __init__(self, in_dim: int = 2, hidden: Sequence[int] = (512, 512), activation: str = "relu",
                 rng: np.random.Generator | None = None, net: MlpNetwork | None = None):
        if net is None:
            net = MlpNetwork([in_dim, *hidden, 1], activation, rng)
        if net.out_dim != 1:
            raise ValueError("energy network must have a single output")
        self.net = net

    @property
    def in_dim(self) -> int:
        return self.net.in_dim

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()

    def __call__(self, x) -> Tensor:
        return self.net(x)[:, 0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.net.apply(x)[:, 0]


def energy_eval(energy: EnergyNetwork, x) -> np.ndarray:
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != energy.in_dim:
        raise nx.GraphError(f"expected rows of dimension {energy.in_dim}, got shape {x.shape}")
    return energy.apply(x)


def relu_quadratic_energy(dim: int = 2, max_knot: int = 8) -> EnergyNetwork:
    """Relu MLP equal to ``||x||^2 / 2`` at every integer point with ``|x_i| <= max_knot``.

    Each coordinate gets the piecewise-linear interpolant of ``t^2 / 2`` with
    knots at the integers: slope ``1/2`` from the origin, plus one extra unit
    of slope at every knot ``k >= 1``, mirrored for negative ``t``.
    """
    knots = np.arange(max_knot, dtype=np.float64)
    per_dim = 2 * len(knots)
    net = MlpNetwork([dim, dim * per_dim, 1], ["relu", "identity"])
    w0 = np.zeros((dim, dim * per_dim))
    b0 = np.zeros(dim * per_dim)
    w1 = np.zeros((dim * per_dim, 1))
    for i in range(dim):
        for j, sign in enumerate((1.0, -1.0)):
            cols = slice(i * per_dim + j * len(knots), i * per_dim + (j + 1) * len(knots))
            w0[i, cols] = sign
            b0[cols] = -knots
            w1[cols, 0] = np.where(knots == 0, 0.5, 1.0)
    net.weights[0].data, net.biases[0].data = w0, b0
    net.weights[1].data, net.biases[1].data = w1, np.zeros(1)
    return EnergyNetwork(net=net)


class QuadraticEnergy:
    """``E(x) = scale * ||x - centre||^2 / 2`` with trainable ``scale`` and ``centre``."""

    def __init__(self, dim: int = 1, scale: float = 1.0, centre=None):
        self.in_dim = dim
        self.scale = Tensor(scale, requires_grad=True, name="scale")
        self.centre = Tensor(np.zeros(dim) if centre is None else centre, requires_grad=True, name="centre")

    def parameters(self) -> list[Tensor]:
        return [self.scale, self.centre]

    def __call__(self, x) -> Tensor:
        x = nx.as_tensor(x)
        return nx.tsum(nx.square(x - self.centre), axis=1) * 0.5 * self.scale

    def apply(self, x: np.ndarray) -> np.ndarray:
        return 0.5 * self.scale.data * np.sum((np.asarray(x) - self.centre.data) ** 2, axis=1)


class LinearEnergy:
    """``E(x) = x @ weight + bias``; one linear feature per input dimension."""

    def __init__(self, dim: int = 1, weight=None, bias: float = 0.0):
        self.in_dim = dim
        self.weight = Tensor(np.zeros(dim) if weight is None else weight, requires_grad=True, name="weight")
        self.bias = Tensor(bias, requires_grad=True, name="bias")

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]

    def __call__(self, x) -> Tensor:
        return nx.as_tensor(x) @ self.weight + self.bias

    def apply(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.weight.data + self.bias.data


# -- base generator -------------------------------------------------------------


class BaseGenerator:
    """Frozen decoder ``G`` plus standard-normal prior ``p(z)``.

    ``kind`` is ``vae_decoder`` (decode = decoder mean) or ``identity_1d`` /
    ``identity_2d`` (decode = identity, so the base density over x is the prior
    itself and is available in closed form).
    """

    def __init__(self, kind: str, latent_dim: int, decoder: MlpNetwork | None = None):
        if kind not in ("vae_decoder", "identity_1d", "identity_2d"):
            raise ValueError(f"unknown base kind {kind!r}")
        if kind == "vae_decoder" and decoder is None:
            raise ValueError("vae_decoder base needs a decoder")
        self.kind = kind
        self.latent_dim = int(latent_dim)
        self.decoder = decoder
        self.obs_dim = decoder.out_dim if decoder is not None else self.latent_dim

    @property
    def has_analytic_density(self) -> bool:
        return self.decoder is None

    def parameters(self) -> list[Tensor]:
        return self.decoder.parameters() if self.decoder is not None else []

    def decode(self, z) -> Tensor:
        if self.decoder is None:
            return nx.as_tensor(z)
        return self.decoder(z)

    def decode_np(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.decoder is None:
            return z
        return self.decoder.apply(z)

    def log_prior(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        return -0.5 * np.sum(z * z, axis=1) - 0.5 * self.latent_dim * LOG_2PI

    def grad_log_prior(self, z) -> np.ndarray:
        return -np.asarray(z, dtype=np.float64)

    def sample_prior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.latent_dim))

    def log_density_x(self, x) -> np.ndarray:
        """Closed-form base log-density over observations (identity kinds only)."""
        if not self.has_analytic_density:
            raise ValueError("base density over x is not analytic for a decoder base")
        return self.log_prior(x)

    def grad_log_density_x(self, x) -> np.ndarray:
        if not self.has_analytic_density:
            raise ValueError("base density over x is not analytic for a decoder base")
        return self.grad_log_prior(x)


def make_base_generator(source) -> BaseGenerator:
    """Build a frozen base from a trained :class:`VaeModel` or an identity spec string."""
    if isinstance(source, VaeModel):
        return BaseGenerator("vae_decoder", source.latent_dim, source.decoder.frozen_copy())
    if source == "identity_1d":
        return BaseGenerator("identity_1d", 1)
    if source == "identity_2d":
        return BaseGenerator("identity_2d", 2)
    raise ValueError(f"cannot build a base generator from {source!r}")


# -- checkpoints ----------------------------------------------------------------

MAGIC = b"LTEB"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    arrays: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _encode_body(ckpt: Checkpoint) -> bytes:
    meta = json.dumps({"kind": ckpt.kind, **ckpt.metadata}, sort_keys=True).encode("utf-8")
    parts = [struct.pack("<I", len(meta)), meta, struct.pack("<I", len(ckpt.arrays))]
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Layout: magic | u32 version | u64 body length | body | u32 CRC32 of everything before."""
    body = _encode_body(ckpt)
    head = MAGIC + struct.pack("<IQ", ckpt.format_version, len(body)) + body
    return head + struct.pack("<I", zlib.crc32(head) & 0xFFFFFFFF)


def parse_checkpoint(raw: bytes) -> Checkpoint:
    if len(raw) < 20 or raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, body_len = struct.unpack_from("<IQ", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported version {version} (this build reads {FORMAT_VERSION})")
    expected = 16 + body_len + 4
    if len(raw) != expected:
        raise CheckpointError(f"checksum error: file length {len(raw)} != expected {expected} (truncated?)")
    (crc,) = struct.unpack_from("<I", raw, expected - 4)
    if zlib.crc32(raw[: expected - 4]) & 0xFFFFFFFF != crc:
        raise CheckpointError("checksum error: CRC32 mismatch")
    pos = 16
    (meta_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    meta = json.loads(raw[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + klen].decode("utf-8")
        pos += klen
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    kind = meta.pop("kind")
    return Checkpoint(kind, arrays, meta, version)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return parse_checkpoint(Path(path).read_bytes())


def model_to_checkpoint(model, metadata: dict | None = None) -> Checkpoint:
    meta = dict(metadata or {})
    if isinstance(model, VaeModel):
        meta["architecture"] = {
            "obs_dim": model.obs_dim, "latent_dim": model.latent_dim, "hidden": model.hidden,
            "activation": model.activation, "obs_noise_sigma": model.obs_noise_sigma,
        }
        arrays = {**model.encoder.named_arrays("encoder."), **model.decoder.named_arrays("decoder.")}
        return Checkpoint("vae", arrays, meta)
    if isinstance(model, EnergyNetwork):
        meta["architecture"] = {"layer_sizes": model.net.layer_sizes, "activations": model.net.activations}
        return Checkpoint("energy", model.net.named_arrays("energy."), meta)
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def model_from_checkpoint(ckpt: Checkpoint):
    arch = ckpt.metadata.get("architecture")
    if arch is None:
        raise CheckpointError("checkpoint has no architecture record")
    if ckpt.kind == "vae":
        model = VaeModel(arch["obs_dim"], arch["latent_dim"], arch["hidden"], arch["activation"],
                         arch["obs_noise_sigma"])
        model.encoder.load_arrays(ckpt.arrays, "encoder.")
        model.decoder.load_arrays(ckpt.arrays, "decoder.")
        return model
    if ckpt.kind == "energy":
        net = MlpNetwork(arch["layer_sizes"], arch["activations"])
        net.load_arrays(ckpt.arrays, "energy.")
        return EnergyNetwork(net=net)
    raise CheckpointError(f"unknown checkpoint kind {ckpt.kind!r}")


def save_model(model, path, metadata: dict | None = None) -> None:
    save_checkpoint(model_to_checkpoint(model, metadata), path)


def load_model(path):
    ckpt = load_checkpoint(path)
    return model_from_checkpoint(ckpt), ckpt.metadata
