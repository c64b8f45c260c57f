from __future__ import annotations

import math

import torch
from torch import nn


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=1)
    return emb


class TimeEmbed(nn.Module):
    """Sinusoidal features followed by a two-layer MLP."""

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.mlp = nn.Sequential(nn.Linear(dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        dtype = self.mlp[0].weight.dtype
        return self.mlp(timestep_embedding(t, self.dim).to(dtype))


class StyleEmbed(nn.Module):
    """Embedding table plus linear layer, mirroring the time-embedding path."""

    def __init__(self, n_styles: int, dim: int):
        super().__init__()
        self.n_styles = n_styles
        self.table = nn.Embedding(n_styles, dim)
        self.proj = nn.Sequential(nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, style: torch.Tensor) -> torch.Tensor:
        return self.proj(self.table(style))


def zero_module(m: nn.Module) -> nn.Module:
    for p in m.parameters():
        nn.init.zeros_(p)
    return m


def as_long(x, batch: int, device=None) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=torch.long, device=device)
    if t.ndim == 0:
        t = t.expand(batch)
    return t
