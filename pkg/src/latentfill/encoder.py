"""Encoder that projects an erased image plus mask into the extended style space.

A pyramid of norm-free residual downsampling blocks (normalization would be
skewed by the zeroed holes) feeds one small strided head per style row, with
coarse rows reading the deepest level and fine rows the shallowest.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import EqualizedConv2d, EqualizedLinear
from .config import ModelConfig


class DownBlock(nn.Module):
    """Residual block halving the resolution, no normalization."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.conv1 = EqualizedConv2d(in_channels, out_channels, 3, padding=1)
        self.conv2 = EqualizedConv2d(out_channels, out_channels, 3, padding=1)
        self.skip = EqualizedConv2d(in_channels, out_channels, 1, bias=False)

    def forward(self, x):
        y = self.skip(F.avg_pool2d(x, 2))
        x = F.leaky_relu(self.conv1(x), 0.2)
        x = F.avg_pool2d(F.leaky_relu(self.conv2(x), 0.2), 2)
        return (x + y) * (1 / math.sqrt(2))


class StyleHead(nn.Module):
    """Strided chain collapsing one pyramid level to a single style vector."""

    def __init__(self, in_channels, level_res, w_dim, hidden=64):
        super().__init__()
        convs = []
        res, ch = level_res, in_channels
        while res > 1:
            convs.append(EqualizedConv2d(ch, hidden, 3, stride=2, padding=1))
            ch = hidden
            res //= 2
        self.convs = nn.ModuleList(convs)
        self.fc = EqualizedLinear(hidden, w_dim)

    def forward(self, x):
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        return self.fc(x.flatten(1))


class InversionEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = {4: 96, 8: 64, 16: 48, 32: 32, 64: 32}
        self.stem = EqualizedConv2d(4, widths[cfg.resolution], 3, padding=1)
        self.blocks = nn.ModuleList()
        res = cfg.resolution
        while res > 4:
            self.blocks.append(DownBlock(widths[res], widths[res // 2]))
            res //= 2
        # pyramid levels deepest-first (4, 8, ...), coarse styles read deepest
        self.level_res = [4 * 2**i for i in range(len(self.blocks))]
        groups = np.array_split(np.arange(cfg.n_styles), len(self.level_res))
        self.style_level = {}
        heads = []
        for level_idx, style_ids in enumerate(groups):
            res = self.level_res[level_idx]
            for sid in style_ids:
                self.style_level[int(sid)] = res
                heads.append(StyleHead(widths[res], res, cfg.w_dim))
        self.heads = nn.ModuleList(heads)

    def forward(self, erased: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        shape = (3, cfg.resolution, cfg.resolution)
        if erased.ndim != 4 or erased.shape[1:] != shape:
            raise ValueError(f"expected erased image of shape (B, {shape}), got {tuple(erased.shape)}")
        if mask.ndim != 4 or mask.shape[1:] != (1, cfg.resolution, cfg.resolution):
            raise ValueError(f"expected mask of shape (B, 1, {cfg.resolution}, {cfg.resolution}), got {tuple(mask.shape)}")
        x = F.leaky_relu(self.stem(torch.cat([erased, mask], dim=1)), 0.2)
        levels = {}
        res = cfg.resolution
        for block in self.blocks:
            x = block(x)
            res //= 2
            levels[res] = x
        styles = [self.heads[i](levels[self.style_level[i]]) for i in range(cfg.n_styles)]
        return torch.stack(styles, dim=1)
