"""Window-attention building blocks: partition/reverse, W-MSA and the pre-norm block.

Blocks alternate regular and shifted windows; shifting is the standard cyclic
roll with a precomputed attention mask so tokens from wrapped-around regions
never attend to each other.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def window_partition(x: torch.Tensor, window_size: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * n_windows, window_size, window_size, C)."""
    b, h, w, c = x.shape
    x = x.view(b, h // window_size, window_size, w // window_size, window_size, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window_size, window_size, c)


def window_reverse(windows: torch.Tensor, window_size: int, h: int, w: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`, back to (B, H, W, C)."""
    b = windows.shape[0] // (h * w // window_size // window_size)
    x = windows.view(b, h // window_size, w // window_size, window_size, window_size, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden_ratio: float = 4.0):
        super().__init__()
        hidden = int(dim * hidden_ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class WindowAttention(nn.Module):
    """Multi-head self attention inside one window, optional relative position bias.

    With use_position_bias=False the layer is permutation-equivariant over the
    tokens of a window.
    """

    def __init__(self, dim: int, window_size: int, n_heads: int, use_position_bias: bool = True):
        super().__init__()
        if dim % n_heads != 0:
            raise ValueError(f"dim {dim} not divisible by n_heads {n_heads}")
        self.dim = dim
        self.window_size = window_size
        self.n_heads = n_heads
        self.scale = (dim // n_heads) ** -0.5
        self.use_position_bias = use_position_bias

        self.qkv = nn.Linear(dim, 3 * dim, bias=True)
        self.proj = nn.Linear(dim, dim)

        if use_position_bias:
            self.position_bias = nn.Parameter(
                torch.zeros((2 * window_size - 1) ** 2, n_heads)
            )
            nn.init.trunc_normal_(self.position_bias, std=0.02)
            coords = torch.stack(torch.meshgrid(
                torch.arange(window_size), torch.arange(window_size), indexing="ij"
            )).flatten(1)
            rel = coords[:, :, None] - coords[:, None, :]
            rel = rel.permute(1, 2, 0)
            rel[:, :, 0] += window_size - 1
            rel[:, :, 1] += window_size - 1
            rel[:, :, 0] *= 2 * window_size - 1
            self.register_buffer("bias_index", rel.sum(-1), persistent=False)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """x: (n_windows * B, tokens, C); mask: (n_windows, tokens, tokens) or None."""
        bw, n, c = x.shape
        qkv = self.qkv(x).reshape(bw, n, 3, self.n_heads, c // self.n_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4).unbind(0)

        attn = (q * self.scale) @ k.transpose(-2, -1)
        if self.use_position_bias:
            bias = self.position_bias[self.bias_index.view(-1)].view(n, n, -1)
            attn = attn + bias.permute(2, 0, 1).unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, self.n_heads, n, n) + mask.unsqueeze(1).unsqueeze(0)
            attn = attn.view(-1, self.n_heads, n, n)
        attn = attn.softmax(dim=-1)

        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        return self.proj(out)


class SwinBlock(nn.Module):
    """Pre-norm residual window attention + feed-forward on an (H, W) token grid."""

    def __init__(self, dim: int, resolution: tuple[int, int], n_heads: int,
                 window_size: int, shift: bool, mlp_ratio: float = 4.0,
                 use_position_bias: bool = True):
        super().__init__()
        self.resolution = resolution
        # windows larger than the grid collapse to one full-grid window
        self.window_size = min(window_size, min(resolution))
        self.shift_size = self.window_size // 2 if shift and self.window_size < min(resolution) else 0

        h, w = resolution
        if h % self.window_size or w % self.window_size:
            raise ValueError(
                f"window size {self.window_size} must divide the token grid {resolution}"
            )

        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, self.window_size, n_heads, use_position_bias)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio)

        if self.shift_size > 0:
            mask = torch.zeros(1, h, w, 1)
            slices = (slice(0, -self.window_size),
                      slice(-self.window_size, -self.shift_size),
                      slice(-self.shift_size, None))
            region = 0
            for hs in slices:
                for ws in slices:
                    mask[:, hs, ws, :] = region
                    region += 1
            mw = window_partition(mask, self.window_size).view(-1, self.window_size ** 2)
            attn_mask = mw.unsqueeze(1) - mw.unsqueeze(2)
            attn_mask = attn_mask.masked_fill(attn_mask != 0, -100.0)
            self.register_buffer("attn_mask", attn_mask, persistent=False)
        else:
            self.attn_mask = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, H*W, C) token sequence on the block's grid."""
        h, w = self.resolution
        b, n, c = x.shape
        if n != h * w:
            raise ValueError(f"expected {h * w} tokens, got {n}")

        shortcut = x
        x = self.norm1(x).view(b, h, w, c)
        if self.shift_size > 0:
            x = torch.roll(x, (-self.shift_size, -self.shift_size), dims=(1, 2))
        windows = window_partition(x, self.window_size).reshape(-1, self.window_size ** 2, c)
        windows = self.attn(windows, self.attn_mask)
        x = window_reverse(windows.reshape(-1, self.window_size, self.window_size, c),
                           self.window_size, h, w)
        if self.shift_size > 0:
            x = torch.roll(x, (self.shift_size, self.shift_size), dims=(1, 2))
        x = shortcut + x.reshape(b, n, c)
        return x + self.mlp(self.norm2(x))
