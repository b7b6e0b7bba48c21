"""Diverse GAN-inversion inpainting and editing on a small frozen backbone."""

__version__ = "0.1.0"

from .checkpoint import Checkpoint
from .config import ModelConfig, TrainConfig, ablation_flags
from .masking import MaskBand, compose_final, erase, sample_mask
from .pipeline import InpaintPipeline

__all__ = [
    "Checkpoint",
    "InpaintPipeline",
    "MaskBand",
    "ModelConfig",
    "TrainConfig",
    "ablation_flags",
    "compose_final",
    "erase",
    "sample_mask",
]
