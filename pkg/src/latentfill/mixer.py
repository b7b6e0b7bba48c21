"""Mixing networks fusing encoded style codes with randomly sampled ones.

The gated mixer runs one two-layer MLP per style row on the concatenated
(encoded, random) pair, splits the result into a candidate code and gate
logits, and blends

    w_out = sigmoid(g) * w_comb + (1 - sigmoid(g)) * w_rand

elementwise. The plain variant (ablation: no gate) maps the concatenated
pair straight to the output code with a single fully connected layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import EqualizedLinear
from .config import ModelConfig


@dataclass
class MixerOutput:
    w_out: torch.Tensor
    w_comb: torch.Tensor
    gate: Optional[torch.Tensor]  # logits; None for the ungated variant


def combine(w_comb: torch.Tensor, w_rand: torch.Tensor, gate: torch.Tensor) -> torch.Tensor:
    """Elementwise convex combination driven by sigmoid(gate)."""
    if not (w_comb.shape == w_rand.shape == gate.shape):
        raise ValueError(
            f"shape mismatch: w_comb {tuple(w_comb.shape)}, "
            f"w_rand {tuple(w_rand.shape)}, gate {tuple(gate.shape)}"
        )
    alpha = torch.sigmoid(gate)
    return alpha * w_comb + (1.0 - alpha) * w_rand


class GatedMixer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.w_dim
        self.fc1 = nn.ModuleList(EqualizedLinear(2 * d, 2 * d) for _ in range(cfg.n_styles))
        self.fc2 = nn.ModuleList(EqualizedLinear(2 * d, 2 * d) for _ in range(cfg.n_styles))

    def _check(self, w_enc, w_rand):
        expected = (self.cfg.n_styles, self.cfg.w_dim)
        for name, w in (("w_enc", w_enc), ("w_rand", w_rand)):
            if w.ndim != 3 or w.shape[1:] != expected:
                raise ValueError(f"expected {name} of shape (B, {expected}), got {tuple(w.shape)}")
        if w_enc.shape[0] != w_rand.shape[0]:
            raise ValueError("w_enc and w_rand batch sizes differ")

    def forward(self, w_enc: torch.Tensor, w_rand: torch.Tensor) -> MixerOutput:
        self._check(w_enc, w_rand)
        d = self.cfg.w_dim
        combs, gates = [], []
        for i in range(self.cfg.n_styles):
            h = torch.cat([w_enc[:, i], w_rand[:, i]], dim=1)
            h = F.leaky_relu(self.fc1[i](h), 0.2)
            h = self.fc2[i](h)
            combs.append(h[:, :d])
            gates.append(h[:, d:])
        w_comb = torch.stack(combs, dim=1)
        gate = torch.stack(gates, dim=1)
        return MixerOutput(w_out=combine(w_comb, w_rand, gate), w_comb=w_comb, gate=gate)


class PlainMixer(nn.Module):
    """Ungated fusion: one fully connected layer per style row."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.w_dim
        self.fc = nn.ModuleList(EqualizedLinear(2 * d, d) for _ in range(cfg.n_styles))

    def forward(self, w_enc: torch.Tensor, w_rand: torch.Tensor) -> MixerOutput:
        GatedMixer._check(self, w_enc, w_rand)
        outs = [self.fc[i](torch.cat([w_enc[:, i], w_rand[:, i]], dim=1)) for i in range(self.cfg.n_styles)]
        w_out = torch.stack(outs, dim=1)
        return MixerOutput(w_out=w_out, w_comb=w_out, gate=None)


def build_mixer(cfg: ModelConfig, gated: bool = True) -> nn.Module:
    return GatedMixer(cfg) if gated else PlainMixer(cfg)
