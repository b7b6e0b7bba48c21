"""Configuration objects and the flat key-value config file format.

Config files are plain text, one ``key = value`` per line, ``#`` comments.
Values are parsed as int, float, bool or string; CLI flags override file
values which override defaults.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path


def n_styles_for_resolution(resolution: int) -> int:
    """Number of per-layer style rows for a given output resolution."""
    if resolution < 8 or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= 8, got {resolution}")
    return 2 * int(math.log2(resolution / 4)) + 2


@dataclass
class ModelConfig:
    """Shapes shared by every network in the pipeline."""

    resolution: int = 32
    z_dim: int = 64
    w_dim: int = 128
    channel_base: int = 1024
    channel_max: int = 64
    mapping_layers: int = 4

    @property
    def n_styles(self) -> int:
        return n_styles_for_resolution(self.resolution)

    @property
    def resolutions(self) -> list[int]:
        """Synthesis resolution chain 4 .. resolution."""
        return [2 ** k for k in range(2, int(math.log2(self.resolution)) + 1)]

    @property
    def injection_resolutions(self) -> list[int]:
        """Top three internal resolutions strictly below the output."""
        below = [r for r in self.resolutions if r < self.resolution]
        return below[-3:]

    def channels(self, res: int) -> int:
        return max(8, min(self.channel_max, self.channel_base // res))


@dataclass
class TrainConfig:
    """One training run: stage, schedule, loss weights and ablation switches."""

    stage: str = "stage1"  # base_gan | stage1 | stage2
    total_steps: int = 1000
    batch_size: int = 8
    lr: float = 1e-4
    lr_halving_period: int = 0  # 0 -> total_steps // 10
    lambda_adv: float = 8e-2
    lambda_rg: float = 1.0
    lambda_rr: float = 1.0
    perceptual_weight: float = 5e-5
    mask_band_lo: float = 0.0
    mask_band_hi: float = 1.0
    r1_gamma: float = 1.0
    r1_interval: int = 8
    # Ablation switchboard; (full_recons, gated_mixer, second_stage) rows:
    # id1 (F,T,F) id2 (F,T,T) id3 (T,F,F) id4 (T,T,F) id5 (T,T,T)
    full_recons: bool = True
    gated_mixer: bool = True
    second_stage: bool = True
    seed: int = 0
    log_every: int = 25

    def halving_period(self) -> int:
        return self.lr_halving_period if self.lr_halving_period > 0 else max(1, self.total_steps // 10)


ABLATION_TABLE = {
    1: dict(full_recons=False, gated_mixer=True, second_stage=False),
    2: dict(full_recons=False, gated_mixer=True, second_stage=True),
    3: dict(full_recons=True, gated_mixer=False, second_stage=False),
    4: dict(full_recons=True, gated_mixer=True, second_stage=False),
    5: dict(full_recons=True, gated_mixer=True, second_stage=True),
}


def ablation_flags(ablation_id: int) -> dict:
    """Flag row for an ablation id (1..5)."""
    try:
        return dict(ABLATION_TABLE[ablation_id])
    except KeyError:
        raise ValueError(f"unknown ablation id {ablation_id}, expected 1..5") from None


def _parse_value(raw: str):
    raw = raw.strip()
    low = raw.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def read_config_file(path: str | Path) -> dict:
    """Parse a flat ``key = value`` config file into a dict."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    return values


def write_config_file(path: str | Path, values: dict) -> None:
    lines = [f"{key} = {value}" for key, value in values.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def config_to_dict(*configs) -> dict:
    merged = {}
    for cfg in configs:
        merged.update(dataclasses.asdict(cfg))
    return merged


def apply_overrides(cfg, overrides: dict):
    """Return a copy of a dataclass config with matching keys replaced."""
    names = {f.name for f in dataclasses.fields(cfg)}
    picked = {k: v for k, v in overrides.items() if k in names}
    return dataclasses.replace(cfg, **picked)
