"""Small style-based generative backbone.

A scaled-down StyleGAN2-style stack: a pixel-normalized MLP mapping network,
a synthesis network built from weight-modulated (demodulated) convolutions
with an accumulated RGB skip and a bounded output, and a residual
discriminator. The synthesis network exposes its per-resolution feature
blocks and accepts multiplicative/additive skip maps which are applied as

    x <- x + x * mult + add

right after the block that produced x. No stochastic noise layers are used,
so every forward is a pure function of (weights, inputs).
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .config import ModelConfig


class EqualizedLinear(nn.Module):
    def __init__(self, in_features, out_features, bias=True, lr_mul=1.0):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_features, in_features) / lr_mul)
        self.bias = nn.Parameter(torch.zeros(out_features)) if bias else None
        self.scale = math.sqrt(2.0 / in_features) * lr_mul

    def forward(self, x):
        return F.linear(x, self.weight * self.scale, self.bias)


class EqualizedConv2d(nn.Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0, bias=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels)) if bias else None
        self.scale = math.sqrt(2.0 / (in_channels * kernel_size**2))
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        return F.conv2d(x, self.weight * self.scale, self.bias, self.stride, self.padding)


class PixelNorm(nn.Module):
    def forward(self, x):
        return x * (x.pow(2).mean(dim=1, keepdim=True) + 1e-8).rsqrt()


class ModulatedConv2d(nn.Module):
    """3x3 (or 1x1) convolution whose weights are modulated per-sample by a
    style vector and demodulated for unit output variance.

    Computed in the unfused form (scale input channels, shared-weight conv,
    rescale output channels), which is algebraically identical to building
    per-sample weights and much cheaper at small batch sizes.
    """

    def __init__(self, in_channels, out_channels, kernel_size, w_dim, demodulate=True, up=False):
        super().__init__()
        self.out_channels = out_channels
        self.demodulate = demodulate
        self.up = up
        self.padding = kernel_size // 2
        self.affine = EqualizedLinear(w_dim, in_channels)
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.scale = math.sqrt(2.0 / (in_channels * kernel_size**2))

    def forward(self, x, w):
        style = self.affine(w) + 1.0
        weight = self.weight * self.scale
        if self.demodulate:
            w2 = weight.pow(2).sum(dim=(2, 3))  # [out, in]
            decoef = (w2 @ style.pow(2).t() + 1e-8).rsqrt().t()  # [batch, out]
        x = x * style[:, :, None, None]
        if self.up:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.conv2d(x, weight, None, padding=self.padding)
        if self.demodulate:
            x = x * decoef[:, :, None, None]
        return x + self.bias[None, :, None, None]


class ToRGB(nn.Module):
    def __init__(self, in_channels, w_dim):
        super().__init__()
        self.conv = ModulatedConv2d(in_channels, 3, 1, w_dim, demodulate=False)

    def forward(self, x, w, skip=None):
        rgb = self.conv(x, w)
        if skip is not None:
            rgb = rgb + F.interpolate(skip, scale_factor=2, mode="nearest")
        return rgb


class MappingNetwork(nn.Module):
    """4-layer MLP from z to a single style vector w."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.norm = PixelNorm()
        dims = [cfg.z_dim] + [cfg.w_dim] * cfg.mapping_layers
        self.layers = nn.ModuleList(
            EqualizedLinear(dims[i], dims[i + 1], lr_mul=0.1) for i in range(cfg.mapping_layers)
        )

    def forward(self, z):
        if z.ndim != 2 or z.shape[1] != self.cfg.z_dim:
            raise ValueError(f"expected z of shape (B, {self.cfg.z_dim}), got {tuple(z.shape)}")
        x = self.norm(z)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
        return x.unsqueeze(1).repeat(1, self.cfg.n_styles, 1)


class SynthesisBlock(nn.Module):
    def __init__(self, in_channels, out_channels, w_dim):
        super().__init__()
        self.conv_up = ModulatedConv2d(in_channels, out_channels, 3, w_dim, up=True)
        self.conv = ModulatedConv2d(out_channels, out_channels, 3, w_dim)
        self.to_rgb = ToRGB(out_channels, w_dim)

    def forward(self, x, w0, w1):
        x = F.leaky_relu(self.conv_up(x, w0), 0.2)
        x = F.leaky_relu(self.conv(x, w1), 0.2)
        return x  # caller applies optional injection before to_rgb


class SynthesisNetwork(nn.Module):
    """Feature chain 4x4 .. resolution with RGB skip accumulation."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.const = nn.Parameter(torch.randn(1, cfg.channels(4), 4, 4))
        self.conv_in = ModulatedConv2d(cfg.channels(4), cfg.channels(4), 3, cfg.w_dim)
        self.rgb_in = ToRGB(cfg.channels(4), cfg.w_dim)
        self.blocks = nn.ModuleList()
        for res in cfg.resolutions[1:]:
            self.blocks.append(SynthesisBlock(cfg.channels(res // 2), cfg.channels(res), cfg.w_dim))

    @staticmethod
    def _apply_skip(x, skips, res):
        if skips is not None and res in skips:
            mult, add = skips[res]
            if mult.shape[-3:] != x.shape[-3:]:
                raise ValueError(
                    f"skip maps at res {res} have shape {tuple(mult.shape)}, "
                    f"features are {tuple(x.shape)}"
                )
            x = x + x * mult + add
        return x

    def forward(self, ws, skips=None):
        cfg = self.cfg
        if ws.ndim != 3 or ws.shape[1] != cfg.n_styles or ws.shape[2] != cfg.w_dim:
            raise ValueError(
                f"expected styles of shape (B, {cfg.n_styles}, {cfg.w_dim}), got {tuple(ws.shape)}"
            )
        if skips is not None:
            extra = set(skips) - set(cfg.injection_resolutions)
            if extra:
                raise ValueError(f"skip maps at non-injection resolutions {sorted(extra)}")
        features = {}
        x = self.const.expand(ws.shape[0], -1, -1, -1)
        x = F.leaky_relu(self.conv_in(x, ws[:, 0]), 0.2)
        x = self._apply_skip(x, skips, 4)
        features[4] = x
        rgb = self.rgb_in(x, ws[:, 1])
        for i, block in enumerate(self.blocks):
            res = cfg.resolutions[i + 1]
            x = block(x, ws[:, 2 * i + 1], ws[:, 2 * i + 2])
            x = self._apply_skip(x, skips, res)
            features[res] = x
            rgb = block.to_rgb(x, ws[:, 2 * i + 3], skip=rgb)
        return torch.tanh(rgb), features


class Generator(nn.Module):
    """Mapping + synthesis pair; `map` broadcasts one w to all style rows."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.mapping = MappingNetwork(cfg)
        self.synthesis = SynthesisNetwork(cfg)

    def map(self, z):
        return self.mapping(z)

    def synthesize(self, ws, skips=None):
        return self.synthesis(ws, skips=skips)

    def forward(self, z):
        img, _ = self.synthesis(self.mapping(z))
        return img


class DiscriminatorBlock(nn.Module):
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


class Discriminator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.from_rgb = EqualizedConv2d(3, cfg.channels(cfg.resolution), 1)
        blocks = []
        for res in reversed(cfg.resolutions[1:]):
            blocks.append(DiscriminatorBlock(cfg.channels(res), cfg.channels(res // 2)))
        self.blocks = nn.ModuleList(blocks)
        self.conv_out = EqualizedConv2d(cfg.channels(4), cfg.channels(4), 3, padding=1)
        self.fc = EqualizedLinear(cfg.channels(4) * 16, cfg.channels(4))
        self.out = EqualizedLinear(cfg.channels(4), 1)

    def forward(self, img):
        if img.ndim != 4 or img.shape[1] != 3 or img.shape[-2:] != (self.cfg.resolution,) * 2:
            raise ValueError(
                f"expected image of shape (B, 3, {self.cfg.resolution}, {self.cfg.resolution}), "
                f"got {tuple(img.shape)}"
            )
        x = F.leaky_relu(self.from_rgb(img), 0.2)
        for block in self.blocks:
            x = block(x)
        x = F.leaky_relu(self.conv_out(x), 0.2)
        x = F.leaky_relu(self.fc(x.flatten(1)), 0.2)
        return self.out(x).squeeze(1)
