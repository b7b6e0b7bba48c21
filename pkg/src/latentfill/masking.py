"""Mask sampling, erasure and final composition.

Masks are 1xHxW tensors with values in {0,1}; 1 marks a valid (kept) pixel
and 0 an erased one. The sampler unions random rectangles and brush strokes
and rejection-samples until the erased ratio lands inside the requested
band.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image


@dataclass(frozen=True)
class MaskBand:
    """Erased-ratio bounds, 0 <= lo < hi <= 1."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo < self.hi <= 1.0):
            raise ValueError(f"invalid mask band ({self.lo}, {self.hi})")

    @property
    def label(self) -> str:
        return f"{self.lo:g},{self.hi:g}"


class MaskSamplingError(RuntimeError):
    """Raised when no mask in the band is found within the attempt cap."""


def erased_ratio(mask: torch.Tensor) -> float:
    return float(1.0 - mask.float().mean().item())


def _draw_rectangles(erased: np.ndarray, rng: np.random.Generator, k: int) -> None:
    r = erased.shape[0]
    for _ in range(k):
        w = int(rng.uniform(0.15, 0.75) * r)
        h = int(rng.uniform(0.15, 0.75) * r)
        x0 = int(rng.integers(0, max(1, r - w)))
        y0 = int(rng.integers(0, max(1, r - h)))
        erased[y0 : y0 + max(1, h), x0 : x0 + max(1, w)] = True


def _draw_strokes(erased: np.ndarray, rng: np.random.Generator, j: int) -> None:
    r = erased.shape[0]
    ys, xs = np.mgrid[0:r, 0:r]
    for _ in range(j):
        x, y = rng.uniform(0, r, size=2)
        angle = rng.uniform(0, 2 * np.pi)
        thickness = rng.uniform(0.05, 0.22) * r
        for _ in range(int(rng.integers(4, 13))):
            length = rng.uniform(0.08, 0.30) * r
            angle += rng.uniform(-0.9, 0.9)
            nx = np.clip(x + np.cos(angle) * length, 0, r - 1)
            ny = np.clip(y + np.sin(angle) * length, 0, r - 1)
            # stamp disks along the segment
            steps = max(2, int(max(abs(nx - x), abs(ny - y))))
            for t in np.linspace(0.0, 1.0, steps):
                cx, cy = x + (nx - x) * t, y + (ny - y) * t
                erased[(xs - cx) ** 2 + (ys - cy) ** 2 <= thickness**2] = True
            x, y = nx, ny


def sample_mask(
    band: MaskBand,
    resolution: int,
    seed: int,
    max_attempts: int = 1000,
) -> torch.Tensor:
    """Sample a binary mask whose erased ratio lies in `band`.

    Deterministic for a fixed (band, resolution, seed).
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        erased = np.zeros((resolution, resolution), dtype=bool)
        _draw_rectangles(erased, rng, k=int(rng.integers(1, 5)))
        _draw_strokes(erased, rng, j=int(rng.integers(0, 5)))
        ratio = erased.mean()
        if band.lo <= ratio <= band.hi:
            valid = torch.from_numpy(~erased).float().unsqueeze(0)
            return valid
    raise MaskSamplingError(
        f"no mask with erased ratio in [{band.lo}, {band.hi}] after {max_attempts} attempts"
    )


def _check_mask(img: torch.Tensor, mask: torch.Tensor) -> None:
    if mask.shape[-2:] != img.shape[-2:] or mask.shape[-3] != 1:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not broadcast over image {tuple(img.shape)}")


def erase(img: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Zero out erased pixels: M * I."""
    _check_mask(img, mask)
    return img * mask


def compose_final(inp: torch.Tensor, mask: torch.Tensor, generated: torch.Tensor) -> torch.Tensor:
    """Paste generated pixels into the hole, copying valid pixels verbatim:
    M * I + (1 - M) * I_o."""
    _check_mask(inp, mask)
    if generated.shape != inp.shape:
        raise ValueError(f"generated shape {tuple(generated.shape)} != input shape {tuple(inp.shape)}")
    return mask * inp + (1.0 - mask) * generated


def save_mask_png(mask: torch.Tensor, path: str | Path) -> None:
    """Serialize a mask as a 1-bit PNG (white = valid)."""
    arr = (mask.detach().cpu().numpy()[0] > 0.5)
    Image.fromarray(arr).convert("1").save(path)


def load_mask_png(path: str | Path) -> torch.Tensor:
    img = Image.open(path).convert("L")
    arr = np.asarray(img)
    values = np.unique(arr)
    if not np.all(np.isin(values, [0, 1, 255])):
        raise ValueError(f"mask PNG at {path} is not binary (values {values[:8]})")
    return torch.from_numpy((arr > 127) | (arr == 1)).float().unsqueeze(0)
