"""Single-file checkpoint container.

A checkpoint is one ``.npz`` archive holding named float arrays for every
network plus a JSON metadata entry (format version, stage tag, config
snapshot, torch RNG state). Writes are atomic (temp file + rename) and
round-trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig

FORMAT_VERSION = 1
STAGES = ("base_gan", "stage1", "stage2")
_META_KEY = "__meta__"
_RNG_KEY = "__torch_rng__"


class Checkpoint:
    """Named parameter arrays plus metadata for one training stage."""

    def __init__(self, stage, model_cfg, train_cfg=None, arrays=None, rng_state=None, extra=None):
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}, expected one of {STAGES}")
        self.format_version = FORMAT_VERSION
        self.stage = stage
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.arrays: dict[str, np.ndarray] = dict(arrays or {})
        self.rng_state = rng_state
        self.extra = dict(extra or {})

    # -- module <-> array conversion ------------------------------------

    def store_module(self, prefix: str, module: torch.nn.Module) -> None:
        for name, tensor in module.state_dict().items():
            self.arrays[f"{prefix}.{name}"] = tensor.detach().cpu().numpy().copy()

    def load_module(self, prefix: str, module: torch.nn.Module) -> None:
        state = {}
        plen = len(prefix) + 1
        for key, arr in self.arrays.items():
            if key.startswith(prefix + "."):
                state[key[plen:]] = torch.from_numpy(arr.copy())
        if not state:
            raise KeyError(f"checkpoint has no arrays under prefix {prefix!r}")
        module.load_state_dict(state)

    def has_module(self, prefix: str) -> bool:
        return any(key.startswith(prefix + ".") for key in self.arrays)

    # -- serialization ---------------------------------------------------

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        meta = {
            "format_version": self.format_version,
            "stage": self.stage,
            "model_cfg": dataclasses.asdict(self.model_cfg),
            "train_cfg": dataclasses.asdict(self.train_cfg) if self.train_cfg else None,
            "extra": self.extra,
        }
        payload = dict(self.arrays)
        payload[_META_KEY] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        if self.rng_state is not None:
            payload[_RNG_KEY] = np.asarray(self.rng_state, dtype=np.uint8)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz.tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, **payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with np.load(Path(path)) as data:
            if _META_KEY not in data:
                raise ValueError(f"{path} is not a latentfill checkpoint (missing metadata)")
            meta = json.loads(bytes(data[_META_KEY].tobytes()).decode())
            if meta["format_version"] != FORMAT_VERSION:
                raise ValueError(
                    f"checkpoint format {meta['format_version']} unsupported "
                    f"(expected {FORMAT_VERSION})"
                )
            arrays = {k: data[k] for k in data.files if k not in (_META_KEY, _RNG_KEY)}
            rng = data[_RNG_KEY].copy() if _RNG_KEY in data else None
        model_cfg = ModelConfig(**meta["model_cfg"])
        train_cfg = TrainConfig(**meta["train_cfg"]) if meta["train_cfg"] else None
        ckpt = cls(meta["stage"], model_cfg, train_cfg, arrays, rng, meta.get("extra"))
        return ckpt


def capture_rng() -> np.ndarray:
    return torch.get_rng_state().numpy()


def restore_rng(state) -> None:
    torch.set_rng_state(torch.from_numpy(np.asarray(state, dtype=np.uint8)))


def module_fingerprint(module: torch.nn.Module) -> str:
    """Order-stable hash of all parameters/buffers, for freeze contracts."""
    import hashlib

    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()
