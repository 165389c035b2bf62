"""Variational channel-sample generator.

A small convolutional VAE over angular-domain channels. Workflow: pre-train on
abundant (possibly mismatched) samples, fine-tune every weight on the scarce
in-cell set at a 10x smaller learning rate, then sample the decoder from the
standard-normal prior to build a large synthetic pre-training corpus. Generated
samples are rescaled to the mean Frobenius norm of the data the model last saw,
keeping downstream NMSE comparisons scale-consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .channel import ChannelSample
from .errors import DivergenceError
from .swtcan import samples_to_tensor

LOGVAR_CLIP = 10.0


@dataclass(frozen=True)
class VaeConfig:
    n_subcarriers: int = 32
    n_bs: int = 64
    latent_dim: int = 64
    kl_weight: float = 0.00025
    conv_widths: tuple[int, int] = (32, 64)
    fc_width: int = 256

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")
        if self.n_subcarriers % 4 or self.n_bs % 4:
            raise ValueError("channel dims must be divisible by 4 (two stride-2 stages)")


@dataclass
class LatentStats:
    """Encoder output: diagonal Gaussian over the latent space."""

    mu: torch.Tensor
    logvar: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise ValueError("mu and logvar must have equal shapes")


class ChannelVae(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        w1, w2 = cfg.conv_widths
        gh, gw = cfg.n_subcarriers // 4, cfg.n_bs // 4
        flat = w2 * gh * gw
        self._grid = (w2, gh, gw)

        self.enc_conv = nn.Sequential(
            nn.Conv2d(2, w1, 3, stride=2, padding=1), nn.GELU(),
            nn.Conv2d(w1, w2, 3, stride=2, padding=1), nn.GELU(),
        )
        self.enc_fc = nn.Sequential(nn.Linear(flat, cfg.fc_width), nn.GELU())
        self.mu_head = nn.Linear(cfg.fc_width, cfg.latent_dim)
        self.logvar_head = nn.Linear(cfg.fc_width, cfg.latent_dim)

        self.dec_fc = nn.Sequential(
            nn.Linear(cfg.latent_dim, cfg.fc_width), nn.GELU(),
            nn.Linear(cfg.fc_width, flat), nn.GELU(),
        )
        self.dec_conv = nn.Sequential(
            nn.ConvTranspose2d(w2, w1, 4, stride=2, padding=1), nn.GELU(),
            nn.ConvTranspose2d(w1, 2, 4, stride=2, padding=1),
        )
        # mean Frobenius norm of the most recent training data, used by generate()
        self.register_buffer("output_norm", torch.tensor(0.0))

    def encode(self, h_a: torch.Tensor) -> LatentStats:
        """h_a: complex (batch, P, N_BS) -> clipped latent statistics."""
        x = torch.stack((h_a.real, h_a.imag), dim=1)
        feats = self.enc_fc(self.enc_conv(x).flatten(1))
        mu = self.mu_head(feats)
        logvar = self.logvar_head(feats).clamp(-LOGVAR_CLIP, LOGVAR_CLIP)
        return LatentStats(mu=mu, logvar=logvar)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        w2, gh, gw = self._grid
        x = self.dec_fc(z).view(-1, w2, gh, gw)
        x = self.dec_conv(x)
        return torch.complex(x[:, 0], x[:, 1])

    def forward(self, h_a: torch.Tensor, rng: torch.Generator | None = None):
        stats = self.encode(h_a)
        z = reparameterize(stats, rng)
        return self.decode(z), stats


def reparameterize(stats: LatentStats, rng: torch.Generator | None = None) -> torch.Tensor:
    """z = mu + exp(logvar/2) * eps with eps ~ N(0, I)."""
    eps = torch.randn(stats.mu.shape, generator=rng, dtype=stats.mu.dtype)
    return stats.mu + torch.exp(0.5 * stats.logvar) * eps


def kl_divergence(stats: LatentStats) -> torch.Tensor:
    """Closed-form KL to the standard-normal prior, averaged over any batch dims."""
    kl = -0.5 * (1.0 + stats.logvar - stats.mu.square() - stats.logvar.exp()).sum(-1)
    return kl.mean()


def vae_loss(h_a: torch.Tensor, h_hat: torch.Tensor, stats: LatentStats,
             kl_weight: float) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(total, reconstruction, kl): squared Frobenius error plus weighted KL."""
    recon = (h_hat - h_a).abs().square().sum(dim=(-2, -1)).mean()
    kl = kl_divergence(stats)
    return recon + kl_weight * kl, recon, kl


@dataclass
class VaeTrainSettings:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


def _fit(model: ChannelVae, dataset, settings: VaeTrainSettings, lr: float):
    history: list[dict] = []
    if settings.epochs == 0:
        return model, history
    h = samples_to_tensor(dataset)
    with torch.no_grad():
        model.output_norm.fill_(h.abs().square().sum(dim=(-2, -1)).sqrt().mean().item())
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    n = h.shape[0]
    for epoch in range(settings.epochs):
        model.train()
        shuffle_rng = torch.Generator().manual_seed(settings.seed * 100003 + epoch)
        latent_rng = torch.Generator().manual_seed(settings.seed * 900007 + epoch)
        order = torch.randperm(n, generator=shuffle_rng)
        totals = np.zeros(3)
        for start in range(0, n, settings.batch_size):
            batch = h[order[start:start + settings.batch_size]]
            h_hat, stats = model(batch, rng=latent_rng)
            total, recon, kl = vae_loss(batch, h_hat, stats, model.cfg.kl_weight)
            if not torch.isfinite(total):
                raise DivergenceError(f"non-finite VAE loss at epoch {epoch}")
            opt.zero_grad()
            total.backward()
            opt.step()
            totals += np.array([total.item(), recon.item(), kl.item()]) * batch.shape[0]
        totals /= n
        history.append({"epoch": epoch, "loss": totals[0], "recon": totals[1], "kl": totals[2]})
    return model, history


def train_vae(model: ChannelVae, dataset, settings: VaeTrainSettings):
    """Pre-train on the abundant corpus; minimizes mean(recon + l*KL)."""
    return _fit(model, dataset, settings, settings.lr)


def finetune_vae(model: ChannelVae, small_dataset, settings: VaeTrainSettings):
    """Fine-tune every parameter on the scarce in-cell set at lr/10."""
    return _fit(model, small_dataset, settings, settings.lr / 10.0)


@torch.no_grad()
def reconstruction_error(model: ChannelVae, samples) -> float:
    """Mean squared Frobenius reconstruction error through the posterior mean."""
    model.eval()
    h = samples_to_tensor(samples)
    h_hat = model.decode(model.encode(h).mu)
    return (h_hat - h).abs().square().sum(dim=(-2, -1)).mean().item()


@torch.no_grad()
def generate(model: ChannelVae, n: int, rng: torch.Generator,
             label: str = "generated", batch_size: int = 256) -> list[ChannelSample]:
    """Sample n channels from the prior through the decoder."""
    if n == 0:
        return []
    model.eval()
    chunks = []
    for start in range(0, n, batch_size):
        z = torch.randn(min(batch_size, n - start), model.cfg.latent_dim, generator=rng)
        chunks.append(model.decode(z))
    h = torch.cat(chunks)
    if model.output_norm.item() > 0:
        mean_norm = h.abs().square().sum(dim=(-2, -1)).sqrt().mean()
        h = h * (model.output_norm / mean_norm)
    arrays = h.numpy()
    return [ChannelSample(h_a=arrays[i], scenario_label=label) for i in range(n)]
