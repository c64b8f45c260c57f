"""Coarse-stage networks: a strided shape encoder and the per-point colour denoiser."""
from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from ..errors import ContractError
from .layers import StyleEmbed, TimeEmbed, as_long, zero_module

GLOBAL_DIM = 64


class ShapeEncoder(nn.Module):
    """Strided convolutions over the 7-channel shape map, pooled to a 64-d feature."""

    def __init__(self, in_ch: int = 7, width: int = 16, out_dim: int = GLOBAL_DIM):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv2d(in_ch, width, 3, stride=2, padding=1),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1),
            nn.Conv2d(2 * width, out_dim, 3, stride=2, padding=1),
        ])
        self.head = nn.Linear(out_dim, out_dim)
        self.out_dim = out_dim

    def forward(self, x_shape: torch.Tensor) -> torch.Tensor:
        h = x_shape
        for conv in self.convs:
            h = F.silu(conv(h))
        return self.head(h.mean(dim=(2, 3)))


class PointDenoiser(nn.Module):
    """Shared per-point MLP predicting clean colours.

    Input per point: coordinates+normal (6), noisy colour (3) and the broadcast
    global shape feature.  A max-pooled global feature from the first layer is
    concatenated back (the only cross-point interaction).  The time embedding,
    plus the style embedding when given, is projected into every hidden layer.
    """

    def __init__(self, hidden: int = 128, emb_dim: int = 64, n_styles: int = 0,
                 global_dim: int = GLOBAL_DIM):
        super().__init__()
        self.hidden, self.emb_dim, self.n_styles = hidden, emb_dim, n_styles
        self.time = TimeEmbed(emb_dim)
        self.style = StyleEmbed(n_styles, emb_dim) if n_styles > 0 else None
        self.fc_in = nn.Linear(6 + 3 + global_dim, hidden)
        self.fc_mid = nn.Linear(2 * hidden, hidden)
        self.fc_mid2 = nn.Linear(hidden, hidden)
        self.emb_proj = nn.ModuleList([nn.Linear(emb_dim, hidden) for _ in range(3)])
        self.fc_out = zero_module(nn.Linear(hidden, 3))

    def embedding(self, t, style, batch):
        emb = self.time(as_long(t, batch))
        if style is not None:
            if self.style is None:
                raise ContractError("this network was built without style conditioning")
            s = as_long(style, batch)
            if (s < 0).any() or (s >= self.n_styles).any():
                raise ContractError(f"style label out of range [0, {self.n_styles})")
            emb = emb + self.style(s)
        return F.silu(emb)

    def forward(self, z_t, z_coord, f_g, t, style=None):
        """``z_t`` (B, 3, K), ``z_coord`` (B, 6, K), ``f_g`` (B, G) -> (B, 3, K)."""
        B, _, K = z_t.shape
        emb = self.embedding(t, style, B)
        x = torch.cat([z_coord, z_t, f_g[:, :, None].expand(B, f_g.shape[1], K)], dim=1)
        x = x.transpose(1, 2)                                         # (B, K, C)
        h = F.silu(self.fc_in(x) + self.emb_proj[0](emb)[:, None])
        g = h.max(dim=1, keepdim=True).values.expand(B, K, self.hidden)
        h = F.silu(self.fc_mid(torch.cat([h, g], dim=2)) + self.emb_proj[1](emb)[:, None])
        h = F.silu(self.fc_mid2(h) + self.emb_proj[2](emb)[:, None])
        return self.fc_out(h).transpose(1, 2)


class CoarseNet(nn.Module):
    """Shape encoder and point denoiser trained jointly."""

    def __init__(self, hidden: int = 128, emb_dim: int = 64, n_styles: int = 0,
                 encoder_width: int = 16):
        super().__init__()
        self.config = dict(hidden=hidden, emb_dim=emb_dim, n_styles=n_styles,
                           encoder_width=encoder_width)
        self.encoder = ShapeEncoder(width=encoder_width)
        self.points = PointDenoiser(hidden, emb_dim, n_styles, self.encoder.out_dim)

    def forward(self, z_t, z_coord, x_shape, t, style=None, f_g=None):
        if f_g is None:
            f_g = self.encoder(x_shape)
        return self.points(z_t, z_coord, f_g, t, style)
