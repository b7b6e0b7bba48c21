"""Second-stage skip encoder and feature injection.

The skip encoder reads (first-stage composite, erased input, mask) as a
7-channel stack, downsamples through three residual blocks (48/64/96
channels, max-pool halving, batch norm + PReLU) and emits one
multiplicative and one additive map per injection resolution. Generator
features are then transformed as

    g_f <- g_f + g_f * G_mult + G_add

with sigmoid-bounded G_mult and unbounded G_add. The final projection of
both heads is zero-initialized (the multiplicative head with a strongly
negative bias) so that a fresh skip encoder is injection-neutral and
stage-2 training starts exactly at the stage-1 model's output.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig
from .masking import compose_final, erase

_NEUTRAL_MULT_BIAS = -18.0  # sigmoid(-18) ~ 1.5e-8, below any 1e-6 tolerance


def inject(g_f: torch.Tensor, maps: tuple[torch.Tensor, torch.Tensor]) -> torch.Tensor:
    """Apply the skip rule g_f + g_f * mult + add elementwise."""
    mult, add = maps
    if mult.shape != add.shape or mult.shape[-3:] != g_f.shape[-3:]:
        raise ValueError(
            f"skip map shapes {tuple(mult.shape)}/{tuple(add.shape)} do not match "
            f"features {tuple(g_f.shape)}"
        )
    return g_f + g_f * mult + add


def neutral_skip_maps(cfg: ModelConfig, batch: int, dtype=torch.float32) -> dict:
    """All-zero maps: injection becomes the identity."""
    maps = {}
    for res in cfg.injection_resolutions:
        shape = (batch, cfg.channels(res), res, res)
        maps[res] = (torch.zeros(shape, dtype=dtype), torch.zeros(shape, dtype=dtype))
    return maps


class ResidualLayer(nn.Module):
    def __init__(self, in_channels, out_channels, down=False):
        super().__init__()
        self.down = down
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.act1 = nn.PReLU(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.act2 = nn.PReLU(out_channels)
        self.skip = (
            nn.Conv2d(in_channels, out_channels, 1, bias=False)
            if in_channels != out_channels
            else nn.Identity()
        )

    def forward(self, x):
        if self.down:
            x = F.max_pool2d(x, 2)
        y = self.act1(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return self.act2(y + self.skip(x))


class ResidualBlock(nn.Module):
    """Three residual layers; the first halves the resolution."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.layers = nn.Sequential(
            ResidualLayer(in_channels, out_channels, down=True),
            ResidualLayer(out_channels, out_channels),
            ResidualLayer(out_channels, out_channels),
        )

    def forward(self, x):
        return self.layers(x)


class MapHead(nn.Module):
    """Two convolutions producing one skip map; final conv zero-initialized."""

    def __init__(self, in_channels, out_channels, bias_init=0.0):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, in_channels, 3, padding=1)
        self.act = nn.PReLU(in_channels)
        self.conv2 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.constant_(self.conv2.bias, bias_init)

    def forward(self, x):
        return self.conv2(self.act(self.conv1(x)))


class SkipEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = nn.Conv2d(7, 32, 3, padding=1)
        widths = (48, 64, 96)
        self.blocks = nn.ModuleList()
        ch = 32
        for w in widths:
            self.blocks.append(ResidualBlock(ch, w))
            ch = w
        # blocks emit resolutions R/2, R/4, R/8 = injection set, shallow-first
        self.block_res = [cfg.resolution // 2**i for i in range(1, len(widths) + 1)]
        assert sorted(self.block_res) == sorted(cfg.injection_resolutions)
        self.mult_heads = nn.ModuleDict()
        self.add_heads = nn.ModuleDict()
        for res, w in zip(self.block_res, widths):
            gen_ch = cfg.channels(res)
            self.mult_heads[str(res)] = MapHead(w, gen_ch, bias_init=_NEUTRAL_MULT_BIAS)
            self.add_heads[str(res)] = MapHead(w, gen_ch)

    def forward(self, stage1_final: torch.Tensor, erased: torch.Tensor, mask: torch.Tensor) -> dict:
        r = self.cfg.resolution
        for name, t, ch in (("stage1_final", stage1_final, 3), ("erased", erased, 3), ("mask", mask, 1)):
            if t.ndim != 4 or t.shape[1:] != (ch, r, r):
                raise ValueError(f"expected {name} of shape (B, {ch}, {r}, {r}), got {tuple(t.shape)}")
        x = self.stem(torch.cat([stage1_final, erased, mask], dim=1))
        maps = {}
        for res, block in zip(self.block_res, self.blocks):
            x = block(x)
            mult = torch.sigmoid(self.mult_heads[str(res)](x))
            add = self.add_heads[str(res)](x)
            maps[res] = (mult, add)
        return maps


def stage2_forward(generator, skip_encoder, inp, mask, w_out):
    """Full second-stage pipeline for an already-mixed style code.

    First pass without skips, compose, refine, second pass with skips,
    compose again. Returns (final image, dict of intermediates).
    """
    erased = erase(inp, mask)
    raw1, _ = generator.synthesize(w_out)
    composed1 = compose_final(inp, mask, raw1)
    maps = skip_encoder(composed1, erased, mask)
    raw2, _ = generator.synthesize(w_out, skips=maps)
    composed2 = compose_final(inp, mask, raw2)
    return composed2, {"stage1_raw": raw1, "stage1_composed": composed1, "stage2_raw": raw2, "skips": maps}
