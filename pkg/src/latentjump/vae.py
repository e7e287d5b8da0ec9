"""Fully connected variational autoencoder over flattened grayscale frames.

The encoder emits ``[mu, log_var]``; the decoder ends in a sigmoid so that
reconstructions are Bernoulli means over ``[0, 1]`` pixels.
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ShapeError, TrainingError
from .ndmath import Adam, Mlp

PROB_CLAMP = 1e-7


@dataclass
class VaeConfig:
    latent_dim: int = 8
    encoder_hidden: tuple = (256, 128)
    decoder_hidden: tuple = (128, 256)
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


@dataclass
class LatentCode:
    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma2 = np.asarray(self.sigma2, dtype=np.float64)
        if self.mu.shape != self.sigma2.shape:
            raise ShapeError("mu and sigma2 must have the same shape")
        if not (np.all(self.sigma2 > 0) and np.all(np.isfinite(self.sigma2))):
            raise ValueError("sigma2 entries must be positive and finite")


@dataclass
class VaeModel:
    encoder: Mlp
    decoder: Mlp
    frame_shape: tuple
    bundle_id: int = 1
    final_loss: float = float("nan")
    loss_history: list = field(default_factory=list)

    def __post_init__(self):
        self.frame_shape = tuple(int(s) for s in self.frame_shape)
        if self.latent_dim < 1:
            raise ShapeError("latent dimension must be >= 1")
        if self.encoder.n_out != 2 * self.latent_dim:
            raise ShapeError("encoder output size must be twice the latent size")
        if self.encoder.n_in != self.input_dim or self.decoder.n_out != self.input_dim:
            raise ShapeError("encoder/decoder do not match the frame size")

    @classmethod
    def init(cls, frame_shape, config=VaeConfig(), bundle_id=1, rng=None):
        rng = np.random.default_rng(config.seed) if rng is None else rng
        d = int(np.prod(frame_shape))
        lat = config.latent_dim
        enc = Mlp([d, *config.encoder_hidden, 2 * lat], "tanh", "identity", rng=rng)
        dec = Mlp([lat, *config.decoder_hidden, d], "tanh", "sigmoid", rng=rng)
        return cls(enc, dec, frame_shape, bundle_id)

    @property
    def latent_dim(self):
        return self.decoder.n_in

    @property
    def input_dim(self):
        return int(np.prod(self.frame_shape))

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()

    def _flatten(self, frames):
        x = np.asarray(frames, dtype=np.float64)
        if x.shape == self.frame_shape or x.shape == (self.input_dim,):
            return x.reshape(1, -1), True
        if x.shape[1:] == self.frame_shape:
            x = x.reshape(x.shape[0], -1)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"frames of shape {x.shape} do not match model input {self.frame_shape}")
        return x, False

    def encode_batch(self, frames):
        x, _ = self._flatten(frames)
        out = self.encoder(x)
        lat = self.latent_dim
        return out[:, :lat], np.exp(out[:, lat:])

    def encode(self, frame):
        mu, s2 = self.encode_batch(frame)
        return LatentCode(mu[0], s2[0])

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ShapeError(f"latent vector must have length {self.latent_dim}")
        out = self.decoder(z)
        return out.reshape(self.frame_shape) if z.ndim == 1 else out.reshape(-1, *self.frame_shape)

    def reconstruct(self, frames):
        mu, _ = self.encode_batch(frames)
        return self.decode(mu)

    def elbo_loss(self, frames, noise):
        """Negative ELBO averaged over the batch, with gradients for every parameter.

        ``noise`` holds standard normal draws for the reparameterization
        ``z = mu + sigma * noise``.
        """
        x, _ = self._flatten(frames)
        eps = np.asarray(noise, dtype=np.float64).reshape(x.shape[0], -1)
        lat = self.latent_dim
        if eps.shape[1] != lat:
            raise ShapeError(f"noise must have length {lat}")
        n = x.shape[0]

        enc_out, enc_acts = self.encoder.forward(x, keep=True)
        mu, log_var = enc_out[:, :lat], enc_out[:, lat:]
        var = np.exp(log_var)
        std = np.exp(0.5 * log_var)
        z = mu + std * eps
        p, dec_acts = self.decoder.forward(z, keep=True)
        pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
        rec = -np.sum(x * np.log(pc) + (1.0 - x) * np.log(1.0 - pc))
        kl = 0.5 * np.sum(mu * mu + var - 1.0 - log_var)
        loss = (rec + kl) / n
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite ELBO loss {loss}")

        inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
        g_p = np.where(inside, (1.0 - x) / (1.0 - pc) - x / pc, 0.0) / n
        dec_grads, g_z = self.decoder.backward(dec_acts, g_p)
        g_mu = g_z + mu / n
        g_logvar = g_z * eps * 0.5 * std + 0.5 * (var - 1.0) / n
        enc_grads, _ = self.encoder.backward(enc_acts, np.hstack([g_mu, g_logvar]))
        return loss, enc_grads + dec_grads

    # -- serialization -------------------------------------------------
    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        enc = self.encoder.save(directory / "encoder.bin")
        dec = self.decoder.save(directory / "decoder.bin")
        man = {
            "bundle_id": self.bundle_id,
            "latent_dim": self.latent_dim,
            "frame_shape": list(self.frame_shape),
            "final_loss": repr(float(self.final_loss)),
            "encoder": enc,
            "decoder": dec,
        }
        (directory / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        man = json.loads((directory / "manifest.json").read_text())
        enc = Mlp.load(directory / man["encoder"]["file"], man["encoder"])
        dec = Mlp.load(directory / man["decoder"]["file"], man["decoder"])
        return cls(enc, dec, tuple(man["frame_shape"]), man["bundle_id"], float(man["final_loss"]))


def kl_divergence(mu, sigma2):
    """KL(N(mu, diag sigma2) || N(0, I)) in closed form."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    return 0.5 * float(np.sum(mu * mu + sigma2 - 1.0 - np.log(sigma2)))


def train_vae(frames, config=VaeConfig(), bundle_id=1):
    """Mini-batch Adam training with seeded shuffling and reparameterization noise."""
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim < 2 or x.shape[0] == 0:
        raise DataError("train_vae needs a non-empty batch of frames")
    if x.shape[0] < 32:
        raise DataError(f"train_vae needs at least 32 frames, got {x.shape[0]}")
    frame_shape = x.shape[1:] if x.ndim == 3 else (x.shape[1],)
    rng = np.random.default_rng(config.seed)
    model = VaeModel.init(frame_shape, config, bundle_id, rng=rng)
    flat = x.reshape(x.shape[0], -1)
    params = model.parameters()
    opt = Adam(params, lr=config.lr)
    n = flat.shape[0]
    history = []
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            noise = rng.standard_normal((idx.size, model.latent_dim))
            loss, grads = model.elbo_loss(flat[idx], noise)
            opt.step(params, grads)
            total += loss * idx.size
        history.append(total / n)
    model.loss_history = history
    model.final_loss = history[-1] if history else float("nan")
    return model
