import pytest

from latentfill.config import (
    ModelConfig,
    TrainConfig,
    ablation_flags,
    apply_overrides,
    n_styles_for_resolution,
    read_config_file,
    write_config_file,
)


def test_n_styles_formula():
    assert n_styles_for_resolution(32) == 8
    assert n_styles_for_resolution(64) == 10
    assert n_styles_for_resolution(256) == 14  # 14x512 at the reference scale
    with pytest.raises(ValueError):
        n_styles_for_resolution(48)


def test_model_config_chains():
    cfg = ModelConfig(resolution=64)
    assert cfg.resolutions == [4, 8, 16, 32, 64]
    assert cfg.injection_resolutions == [8, 16, 32]
    assert ModelConfig(resolution=32).injection_resolutions == [4, 8, 16]
    assert ModelConfig(resolution=256).injection_resolutions == [32, 64, 128]


def test_ablation_table_rows():
    assert ablation_flags(1) == dict(full_recons=False, gated_mixer=True, second_stage=False)
    assert ablation_flags(2) == dict(full_recons=False, gated_mixer=True, second_stage=True)
    assert ablation_flags(3) == dict(full_recons=True, gated_mixer=False, second_stage=False)
    assert ablation_flags(4) == dict(full_recons=True, gated_mixer=True, second_stage=False)
    assert ablation_flags(5) == dict(full_recons=True, gated_mixer=True, second_stage=True)
    with pytest.raises(ValueError):
        ablation_flags(6)


def test_config_file_roundtrip(tmp_path):
    path = tmp_path / "cfg.txt"
    write_config_file(path, {"total_steps": 100, "lr": 0.001, "full_recons": False, "stage": "stage1"})
    values = read_config_file(path)
    assert values == {"total_steps": 100, "lr": 0.001, "full_recons": False, "stage": "stage1"}


def test_config_file_comments_and_errors(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\nlr = 0.5  # trailing\n\nseed = 3\n")
    assert read_config_file(path) == {"lr": 0.5, "seed": 3}
    path.write_text("not a pair\n")
    with pytest.raises(ValueError):
        read_config_file(path)


def test_apply_overrides_ignores_unknown_keys():
    cfg = apply_overrides(TrainConfig(), {"lr": 0.25, "bogus": 1})
    assert cfg.lr == 0.25
    assert cfg.total_steps == TrainConfig().total_steps


def test_halving_period_default():
    cfg = TrainConfig(total_steps=1000)
    assert cfg.halving_period() == 100
    assert TrainConfig(total_steps=1000, lr_halving_period=400).halving_period() == 400
