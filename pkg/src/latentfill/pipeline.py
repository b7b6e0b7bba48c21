"""End-to-end inference over a trained checkpoint.

Wraps encode -> mix -> synthesize -> compose (stage 1) and the optional
skip-refined second pass (stage 2) behind one object shared by the CLI,
the evaluation harness and the HTTP service.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from .backbone import Generator
from .checkpoint import Checkpoint
from .config import ModelConfig
from .editing import DirectionVector, apply_edit
from .encoder import InversionEncoder
from .masking import compose_final, erase
from .mixer import build_mixer
from .objectives import AttributeClassifier
from .refiner import SkipEncoder
from .training import _freeze, load_classifier


@dataclass
class CompletionResult:
    final: torch.Tensor
    stage1_final: torch.Tensor
    raw: torch.Tensor
    w_enc: torch.Tensor
    w_out: torch.Tensor
    z: torch.Tensor


class InpaintPipeline:
    """Frozen-weight inference pipeline; safe for concurrent callers."""

    def __init__(self, ckpt: Checkpoint):
        if ckpt.stage not in ("stage1", "stage2"):
            raise ValueError(f"inference needs a stage1 or stage2 checkpoint, got {ckpt.stage!r}")
        self.stage = ckpt.stage
        self.model_cfg: ModelConfig = ckpt.model_cfg
        self.generator = Generator(self.model_cfg)
        ckpt.load_module("G", self.generator)
        self.encoder = InversionEncoder(self.model_cfg)
        ckpt.load_module("E", self.encoder)
        self.mixer = build_mixer(self.model_cfg, gated=bool(ckpt.extra.get("gated_mixer", True)))
        ckpt.load_module("MI", self.mixer)
        self.skip_encoder: Optional[SkipEncoder] = None
        if ckpt.has_module("S"):
            self.skip_encoder = SkipEncoder(self.model_cfg)
            ckpt.load_module("S", self.skip_encoder)
            _freeze(self.skip_encoder)
        self.phi: AttributeClassifier = load_classifier(ckpt)
        for module in (self.generator, self.encoder, self.mixer):
            _freeze(module)

    @classmethod
    def from_path(cls, path) -> "InpaintPipeline":
        return cls(Checkpoint.load(path))

    def sample_z(self, batch: int, seed: Optional[int] = None) -> torch.Tensor:
        if seed is None:
            return torch.randn(batch, self.model_cfg.z_dim)
        gen = torch.Generator().manual_seed(int(seed))
        return torch.randn(batch, self.model_cfg.z_dim, generator=gen)

    @torch.no_grad()
    def encode(self, images: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
        return self.encoder(erase(images, masks), masks)

    @torch.no_grad()
    def complete(
        self,
        images: torch.Tensor,
        masks: torch.Tensor,
        z: Optional[torch.Tensor] = None,
        seed: Optional[int] = None,
        edits: Sequence[tuple[DirectionVector, float]] = (),
        w_enc: Optional[torch.Tensor] = None,
        use_stage2: bool = True,
    ) -> CompletionResult:
        """Run the full pipeline on a batch of (image, mask) pairs."""
        if z is None:
            z = self.sample_z(images.shape[0], seed)
        erased = erase(images, masks)
        if w_enc is None:
            w_enc = self.encoder(erased, masks)
        w_rand = self.generator.map(z)
        w_out = self.mixer(w_enc, w_rand).w_out
        for direction, strength in edits:
            w_out = apply_edit(w_out, direction, strength)
        raw1, _ = self.generator.synthesize(w_out)
        stage1_final = compose_final(images, masks, raw1)
        if self.skip_encoder is not None and use_stage2:
            maps = self.skip_encoder(stage1_final, erased, masks)
            raw2, _ = self.generator.synthesize(w_out, skips=maps)
            final = compose_final(images, masks, raw2)
            raw = raw2
        else:
            final, raw = stage1_final, raw1
        return CompletionResult(final, stage1_final, raw, w_enc, w_out, z)
