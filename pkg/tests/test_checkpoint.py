import numpy as np
import pytest
import torch

from latentfill.backbone import Generator
from latentfill.checkpoint import Checkpoint, capture_rng, module_fingerprint, restore_rng
from latentfill.config import ModelConfig, TrainConfig

CFG = ModelConfig(resolution=32)


def test_roundtrip_bit_exact(tmp_path):
    torch.manual_seed(0)
    g = Generator(CFG)
    ckpt = Checkpoint("base_gan", CFG, TrainConfig(stage="base_gan", total_steps=3), rng_state=capture_rng())
    ckpt.store_module("G", g)
    ckpt.extra["note"] = "x"
    path = ckpt.save(tmp_path / "ck.npz")
    back = Checkpoint.load(path)
    assert back.stage == "base_gan"
    assert back.format_version == 1
    assert back.model_cfg == CFG
    assert back.train_cfg.total_steps == 3
    assert back.extra["note"] == "x"
    assert set(back.arrays) == set(ckpt.arrays)
    for key in ckpt.arrays:
        assert np.array_equal(back.arrays[key], ckpt.arrays[key])
    g2 = Generator(CFG)
    back.load_module("G", g2)
    assert module_fingerprint(g) == module_fingerprint(g2)


def test_rng_state_roundtrip(tmp_path):
    torch.manual_seed(123)
    torch.randn(5)
    ckpt = Checkpoint("stage1", CFG, rng_state=capture_rng())
    path = ckpt.save(tmp_path / "rng.npz")
    expected = torch.randn(4)
    restore_rng(Checkpoint.load(path).rng_state)
    assert torch.equal(torch.randn(4), expected)


def test_unknown_stage_rejected():
    with pytest.raises(ValueError):
        Checkpoint("stage3", CFG)


def test_missing_module_prefix(tmp_path):
    ckpt = Checkpoint("stage1", CFG)
    with pytest.raises(KeyError):
        ckpt.load_module("G", Generator(CFG))


def test_version_check(tmp_path):
    ckpt = Checkpoint("stage1", CFG)
    path = ckpt.save(tmp_path / "v.npz")
    import json

    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"].tobytes()).decode())
        arrays = {k: data[k] for k in data.files}
    meta["format_version"] = 99
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)
    with pytest.raises(ValueError):
        Checkpoint.load(path)


def test_not_a_checkpoint(tmp_path):
    np.savez(tmp_path / "bad.npz", x=np.zeros(3))
    with pytest.raises(ValueError):
        Checkpoint.load(tmp_path / "bad.npz")


def test_has_module(tmp_path):
    torch.manual_seed(0)
    ckpt = Checkpoint("stage1", CFG)
    ckpt.store_module("E", torch.nn.Linear(3, 3))
    assert ckpt.has_module("E")
    assert not ckpt.has_module("S")
