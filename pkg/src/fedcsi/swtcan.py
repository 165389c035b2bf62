"""End-to-end channel acquisition network (swtcan).

One model owns the whole pilot-to-reconstruction chain: a learnable pilot
matrix forms the observation, a window-attention compressor maps it to a
codeword in (0,1)^L, a uniform scalar quantizer turns that into B = L*b
feedback bits (straight-through gradients in training), and a window-attention
reconstructor lifts the dequantized code back to the angular-domain channel.
Trained end to end on the normalized reconstruction error.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import DivergenceError
from .swin import SwinBlock


@dataclass(frozen=True)
class SwtcanConfig:
    """Architecture and rate parameters.

    Defaults are desk scale: P=32, 8x8 array, compression ratio 8, B=2L bits.
    """

    n_subcarriers: int = 32     # P
    n_bs: int = 64
    pilot_slots: int = 8        # M
    feedback_bits: int = 512    # B
    bits_per_element: int = 2   # b
    embed_dim: int = 32
    window_size: int = 4
    depths: tuple[int, ...] = (2, 2)
    n_heads: tuple[int, ...] = (2, 4)
    patch_size: int = 2
    mlp_ratio: float = 2.0
    use_position_bias: bool = True

    def __post_init__(self):
        if self.bits_per_element <= 0:
            raise ValueError("bits_per_element must be positive")
        if self.feedback_bits % self.bits_per_element:
            raise ValueError(
                f"feedback_bits {self.feedback_bits} not divisible by "
                f"bits_per_element {self.bits_per_element}"
            )
        if self.pilot_slots > self.n_bs:
            raise ValueError("pilot_slots must not exceed n_bs")
        if len(self.depths) != len(self.n_heads):
            raise ValueError("depths and n_heads must have the same length")
        for dims in (self.encoder_grid, self.decoder_grid):
            ws = min(self.window_size, min(dims))
            if dims[0] % ws or dims[1] % ws:
                raise ValueError(
                    f"effective window {ws} must divide the token grid {dims}"
                )
        for h in self.n_heads:
            if self.embed_dim % h:
                raise ValueError(f"embed_dim {self.embed_dim} not divisible by {h} heads")

    @property
    def code_len(self) -> int:
        return self.feedback_bits // self.bits_per_element

    @property
    def compression_ratio(self) -> float:
        return self.n_bs / self.pilot_slots

    @property
    def encoder_grid(self) -> tuple[int, int]:
        if self.n_subcarriers % self.patch_size or self.pilot_slots % self.patch_size:
            raise ValueError("patch_size must divide P and pilot_slots")
        return (self.n_subcarriers // self.patch_size, self.pilot_slots // self.patch_size)

    @property
    def decoder_grid(self) -> tuple[int, int]:
        if self.n_bs % self.patch_size:
            raise ValueError("patch_size must divide n_bs")
        return (self.n_subcarriers // self.patch_size, self.n_bs // self.patch_size)


@dataclass
class BitCodeword:
    """B feedback bits, MSB first per code element."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1 or not np.isin(self.bits, (0, 1)).all():
            raise ValueError("bits must be a flat 0/1 vector")


def quantize(code: np.ndarray, bits_per_element: int) -> BitCodeword:
    """Uniform scalar quantizer: index = floor(code * 2^b) clipped to 2^b - 1."""
    if bits_per_element <= 0:
        raise ValueError("bits_per_element must be positive")
    code = np.asarray(code, dtype=float)
    levels = 1 << bits_per_element
    idx = np.clip(np.floor(code * levels).astype(np.int64), 0, levels - 1)
    shifts = np.arange(bits_per_element - 1, -1, -1)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    return BitCodeword(bits=bits.reshape(-1).astype(np.uint8))


def dequantize(codeword: BitCodeword | np.ndarray, bits_per_element: int) -> np.ndarray:
    """Midpoint reconstruction (index + 0.5) / 2^b of the quantizer cells."""
    if bits_per_element <= 0:
        raise ValueError("bits_per_element must be positive")
    bits = codeword.bits if isinstance(codeword, BitCodeword) else np.asarray(codeword)
    if bits.size % bits_per_element:
        raise ValueError("bit count not divisible by bits_per_element")
    groups = bits.reshape(-1, bits_per_element).astype(np.int64)
    shifts = np.arange(bits_per_element - 1, -1, -1)
    idx = (groups << shifts[None, :]).sum(axis=1)
    return (idx + 0.5) / (1 << bits_per_element)


def ste_quantize(code: torch.Tensor, bits_per_element: int) -> torch.Tensor:
    """Quantize-dequantize with a straight-through (identity) gradient."""
    levels = 1 << bits_per_element
    idx = torch.clamp(torch.floor(code * levels), max=levels - 1)
    midpoints = (idx + 0.5) / levels
    return code + (midpoints - code).detach()


class PilotLayer(nn.Module):
    """Learnable pilot matrix applied as Y = H_a @ X + N.

    The complex pilot is stored as a (2, N_BS, M) real parameter. project_()
    rescales it to unit average per-element power and is called after every
    optimizer step.
    """

    def __init__(self, n_bs: int, pilot_slots: int):
        super().__init__()
        self.n_bs = n_bs
        self.pilot_slots = pilot_slots
        self.weight = nn.Parameter(torch.randn(2, n_bs, pilot_slots) / math.sqrt(2.0))
        with torch.no_grad():
            self.project_()

    @property
    def pilot(self) -> torch.Tensor:
        return torch.complex(self.weight[0], self.weight[1])

    @torch.no_grad()
    def project_(self) -> None:
        target = math.sqrt(self.n_bs * self.pilot_slots)
        self.weight.mul_(target / torch.linalg.norm(self.weight))

    def forward(
        self,
        h_a: torch.Tensor,
        snr_db: float = math.inf,
        noise_rng: torch.Generator | None = None,
    ) -> torch.Tensor:
        """h_a: complex (batch, P, N_BS) -> complex (batch, P, M)."""
        y = h_a @ self.pilot.to(h_a.dtype)
        if math.isinf(snr_db):
            return y
        if noise_rng is None:
            raise ValueError("noise_rng required when noise is enabled")
        # calibrate against the signal power of this pilot, outside the graph
        sig_power = y.detach().abs().square().mean()
        sigma = torch.sqrt(sig_power / 10.0 ** (snr_db / 10.0) / 2.0)
        real_dtype = y.real.dtype
        noise = torch.complex(
            torch.randn(y.shape, generator=noise_rng, dtype=real_dtype),
            torch.randn(y.shape, generator=noise_rng, dtype=real_dtype),
        )
        return y + sigma * noise


class Compressor(nn.Module):
    """Observation (P x M) -> codeword in (0,1)^L."""

    def __init__(self, cfg: SwtcanConfig):
        super().__init__()
        grid = cfg.encoder_grid
        self.grid = grid
        self.embed = nn.Conv2d(2, cfg.embed_dim, cfg.patch_size, stride=cfg.patch_size)
        self.blocks = _make_blocks(cfg, grid)
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.head = nn.Linear(grid[0] * grid[1] * cfg.embed_dim, cfg.code_len)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        """y: complex (batch, P, M) -> (batch, L) in (0,1)."""
        x = torch.stack((y.real, y.imag), dim=1)
        x = self.embed(x)                       # (B, C, H', W')
        x = x.flatten(2).transpose(1, 2)        # (B, tokens, C)
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        return torch.sigmoid(self.head(x.flatten(1)))


class Reconstructor(nn.Module):
    """Dequantized codeword -> angular-domain channel estimate (P x N_BS)."""

    def __init__(self, cfg: SwtcanConfig):
        super().__init__()
        grid = cfg.decoder_grid
        self.grid = grid
        self.patch_size = cfg.patch_size
        self.embed_dim = cfg.embed_dim
        self.lift = nn.Linear(cfg.code_len, grid[0] * grid[1] * cfg.embed_dim)
        self.blocks = _make_blocks(cfg, grid)
        self.norm = nn.LayerNorm(cfg.embed_dim)
        self.expand = nn.Linear(cfg.embed_dim, cfg.patch_size ** 2 * 2)

    def forward(self, code: torch.Tensor) -> torch.Tensor:
        """code: (batch, L) -> complex (batch, P, N_BS)."""
        b = code.shape[0]
        gh, gw = self.grid
        x = self.lift(code).view(b, gh * gw, self.embed_dim)
        for blk in self.blocks:
            x = blk(x)
        x = self.expand(self.norm(x))           # (B, tokens, ps*ps*2)
        ps = self.patch_size
        x = x.view(b, gh, gw, ps, ps, 2).permute(0, 5, 1, 3, 2, 4)
        x = x.reshape(b, 2, gh * ps, gw * ps)
        return torch.complex(x[:, 0], x[:, 1])

    def last_two_layer_prefixes(self) -> tuple[str, ...]:
        """Parameter prefixes of the final attention block and the expanding head."""
        return (f"blocks.{len(self.blocks) - 1}.", "norm.", "expand.")


def _make_blocks(cfg: SwtcanConfig, grid: tuple[int, int]) -> nn.ModuleList:
    blocks = []
    for depth, heads in zip(cfg.depths, cfg.n_heads):
        for j in range(depth):
            blocks.append(SwinBlock(
                cfg.embed_dim, grid, heads, cfg.window_size,
                shift=(j % 2 == 1), mlp_ratio=cfg.mlp_ratio,
                use_position_bias=cfg.use_position_bias,
            ))
    return nn.ModuleList(blocks)


class Swtcan(nn.Module):
    """Pilot + compressor + quantizer + reconstructor, end to end."""

    def __init__(self, cfg: SwtcanConfig):
        super().__init__()
        self.cfg = cfg
        self.pilot = PilotLayer(cfg.n_bs, cfg.pilot_slots)
        self.compressor = Compressor(cfg)
        self.reconstructor = Reconstructor(cfg)

    def forward(
        self,
        h_a: torch.Tensor,
        snr_db: float = math.inf,
        noise_rng: torch.Generator | None = None,
        quantized: bool = True,
    ) -> torch.Tensor:
        """Full acquisition chain; quantized=False bypasses Q for gradient probes."""
        h_a = h_a.to(self.complex_dtype)
        y = self.pilot(h_a, snr_db, noise_rng)
        code = self.compressor(y)
        if quantized:
            code = ste_quantize(code, self.cfg.bits_per_element)
        return self.reconstructor(code)

    @property
    def complex_dtype(self) -> torch.dtype:
        return torch.complex128 if self.pilot.weight.dtype == torch.float64 else torch.complex64

    def feedback_bits(self, h_a: torch.Tensor, snr_db: float = math.inf,
                      noise_rng: torch.Generator | None = None) -> BitCodeword:
        """The actual B-bit payload for one channel (batch of one)."""
        with torch.no_grad():
            y = self.pilot(h_a.to(self.complex_dtype), snr_db, noise_rng)
            code = self.compressor(y)
        return quantize(code.squeeze(0).numpy(), self.cfg.bits_per_element)


def loss_nmse(h_hat: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """Batch-mean NMSE, differentiable in h_hat. Shapes (batch, P, N_BS)."""
    ref = h.abs().square().sum(dim=(-2, -1))
    if (ref == 0).any():
        raise ValueError("reference channel with zero norm in batch")
    err = (h_hat - h).abs().square().sum(dim=(-2, -1))
    return (err / ref).mean()


@dataclass(frozen=True)
class ParamPartition:
    """Frozen/trainable split of the model's named parameters."""

    trainable_names: tuple[str, ...]
    frozen_names: tuple[str, ...]
    d: int
    total: int

    @property
    def trainable_fraction(self) -> float:
        return self.d / self.total


def partition_params(model: nn.Module, spec: str | list[str]) -> ParamPartition:
    """Split parameters into frozen and trainable sets.

    spec is "all", "none", "last-two-decoder-layers", or an explicit list of
    parameter names. Names are kept in sorted order so the flattened
    trainable vector has a stable coordinate layout.
    """
    names = sorted(name for name, _ in model.named_parameters())
    sizes = {name: p.numel() for name, p in model.named_parameters()}

    if spec == "all":
        trainable = set(names)
    elif spec == "none":
        trainable = set()
    elif spec == "last-two-decoder-layers":
        prefixes = tuple(
            "reconstructor." + p for p in model.reconstructor.last_two_layer_prefixes()
        )
        trainable = {n for n in names if n.startswith(prefixes)}
    elif isinstance(spec, (list, tuple, set)):
        unknown = set(spec) - set(names)
        if unknown:
            raise KeyError(f"unknown parameter names: {sorted(unknown)}")
        trainable = set(spec)
    else:
        raise KeyError(f"unknown partition spec {spec!r}")

    trainable_names = tuple(n for n in names if n in trainable)
    frozen_names = tuple(n for n in names if n not in trainable)
    return ParamPartition(
        trainable_names=trainable_names,
        frozen_names=frozen_names,
        d=sum(sizes[n] for n in trainable_names),
        total=sum(sizes.values()),
    )


@dataclass
class TrainSettings:
    """Pre-training hyperparameters (adaptive-moment SGD with cosine decay)."""

    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    snr_db: float = 20.0
    seed: int = 0
    cosine_decay: bool = True
    eval_noise_seed: int = 12345


def samples_to_tensor(samples, dtype: torch.dtype = torch.complex64) -> torch.Tensor:
    """Stack ChannelSamples (or raw arrays) into a complex (N, P, N_BS) tensor."""
    arrays = [getattr(s, "h_a", s) for s in samples]
    return torch.from_numpy(np.stack(arrays)).to(dtype)


@torch.no_grad()
def evaluate_nmse(model: Swtcan, samples, snr_db: float = 20.0,
                  noise_seed: int = 12345, batch_size: int = 64) -> tuple[float, float]:
    """Mean linear NMSE and its dB value over a sample set, fixed noise seed."""
    model.eval()
    h = samples_to_tensor(samples, model.complex_dtype)
    rng = torch.Generator().manual_seed(noise_seed)
    losses, counts = [], []
    for start in range(0, h.shape[0], batch_size):
        batch = h[start:start + batch_size]
        h_hat = model(batch, snr_db=snr_db, noise_rng=rng)
        losses.append(loss_nmse(h_hat, batch).item() * batch.shape[0])
        counts.append(batch.shape[0])
    linear = sum(losses) / sum(counts)
    db = 10.0 * math.log10(linear) if linear > 0 else -math.inf
    return linear, db


def train_e2e(model: Swtcan, train_set, val_set, settings: TrainSettings):
    """End-to-end training on the NMSE loss; returns (model, history).

    History holds one record per epoch with train/val NMSE in dB. The model is
    restored to its best-validation checkpoint before returning. Zero epochs
    returns the model unchanged with an empty history.
    """
    history: list[dict] = []
    if settings.epochs == 0:
        return model, history

    h_train = samples_to_tensor(train_set, model.complex_dtype)
    opt = torch.optim.Adam(model.parameters(), lr=settings.lr)
    sched = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=settings.epochs)
             if settings.cosine_decay else None)

    best_val = math.inf
    best_state = None
    n = h_train.shape[0]
    for epoch in range(settings.epochs):
        model.train()
        shuffle_rng = torch.Generator().manual_seed(settings.seed * 100003 + epoch)
        noise_rng = torch.Generator().manual_seed(settings.seed * 900007 + epoch)
        order = torch.randperm(n, generator=shuffle_rng)
        epoch_loss, seen = 0.0, 0
        for start in range(0, n, settings.batch_size):
            batch = h_train[order[start:start + settings.batch_size]]
            h_hat = model(batch, snr_db=settings.snr_db, noise_rng=noise_rng)
            loss = loss_nmse(h_hat, batch)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            model.pilot.project_()
            epoch_loss += loss.item() * batch.shape[0]
            seen += batch.shape[0]
        if sched is not None:
            sched.step()

        train_linear = epoch_loss / seen
        _, val_db = evaluate_nmse(model, val_set, settings.snr_db, settings.eval_noise_seed)
        history.append({
            "epoch": epoch,
            "train_nmse_db": 10.0 * math.log10(train_linear) if train_linear > 0 else -math.inf,
            "val_nmse_db": val_db,
        })
        if val_db < best_val:
            best_val = val_db
            best_state = copy.deepcopy(model.state_dict())

    if best_state is not None:
        model.load_state_dict(best_state)
    return model, history
