"""Fine-stage UV-space denoiser: a small U-Net over 16 input channels."""
from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

from ..errors import ContractError
from .layers import TimeEmbed, as_long, zero_module

# noisy texture, shape map, coarse map, smooth map
IN_CHANNELS = {"x_t": 3, "x_shape": 7, "x_coarse": 3, "x_smooth": 3}


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, emb_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.emb = nn.Linear(emb_dim, c_out)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(x)) + self.emb(emb)[:, :, None, None]
        h = self.conv2(F.silu(h))
        return self.skip(x) + h


class UVDenoiser(nn.Module):
    """Encoder-decoder with skip connections; the time embedding enters every
    residual block.  ``channels`` gives the width per level; resolution halves
    between levels."""

    def __init__(self, channels=(16, 32, 32), emb_dim: int = 64):
        super().__init__()
        self.channels = tuple(channels)
        self.config = dict(channels=list(self.channels), emb_dim=emb_dim)
        in_ch = sum(IN_CHANNELS.values())
        self.time = TimeEmbed(emb_dim)
        self.inconv = nn.Conv2d(in_ch, self.channels[0], 3, padding=1)
        self.down = nn.ModuleList()
        prev = self.channels[0]
        for c in self.channels:
            self.down.append(ResBlock(prev, c, emb_dim))
            prev = c
        self.mid = ResBlock(prev, prev, emb_dim)
        self.up = nn.ModuleList()
        for c in reversed(self.channels):
            self.up.append(ResBlock(prev + c, c, emb_dim))
            prev = c
        self.outconv = zero_module(nn.Conv2d(prev, 3, 3, padding=1))

    @property
    def factor(self) -> int:
        return 2 ** (len(self.channels) - 1)

    def forward(self, x_t, x_shape, x_coarse, x_smooth, t):
        B, _, H, W = x_t.shape
        if H % self.factor or W % self.factor:
            raise ContractError(f"resolution {H}x{W} not divisible by {self.factor}")
        for name, block in (("x_shape", x_shape), ("x_coarse", x_coarse), ("x_smooth", x_smooth)):
            if tuple(block.shape[-2:]) != (H, W) or block.shape[1] != IN_CHANNELS[name]:
                raise ContractError(f"{name} has shape {tuple(block.shape)}, expected "
                                    f"(B, {IN_CHANNELS[name]}, {H}, {W})")
        emb = F.silu(self.time(as_long(t, B)))
        h = self.inconv(torch.cat([x_t, x_shape, x_coarse, x_smooth], dim=1))
        skips = []
        for i, block in enumerate(self.down):
            h = block(h, emb)
            skips.append(h)
            if i < len(self.down) - 1:
                h = F.avg_pool2d(h, 2)
        h = self.mid(h, emb)
        for i, block in enumerate(self.up):
            h = block(torch.cat([h, skips.pop()], dim=1), emb)
            if i < len(self.up) - 1:
                h = F.interpolate(h, scale_factor=2, mode="nearest")
        return self.outconv(F.silu(h))
