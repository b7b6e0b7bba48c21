import numpy as np
import pytest
import torch

from latentfill.editing import DirectionBank, DirectionVector, apply_edit, learn_direction


def separable_data(seed=0, n=200, d=16, gap=6.0):
    rng = np.random.default_rng(seed)
    axis = np.zeros(d)
    axis[3] = 1.0
    pos = rng.normal(size=(n, d)) + gap * axis
    neg = rng.normal(size=(n, d)) - gap * axis
    x = np.concatenate([pos, neg])
    y = np.concatenate([np.ones(n), np.zeros(n)]).astype(int)
    return x, y


def test_learn_direction_separable():
    x, y = separable_data()
    d = learn_direction("toy", x, y)
    assert abs(np.linalg.norm(d.vector) - 1.0) < 1e-9
    preds = (x @ d.vector > np.median(x @ d.vector)).astype(int)
    # perfect separation along the learned normal
    proj = x @ d.vector
    assert (proj[y == 1].min() > proj[y == 0].max())


def test_learn_direction_label_flip_negates():
    x, y = separable_data(seed=1)
    d1 = learn_direction("toy", x, y)
    d2 = learn_direction("toy", x, 1 - y)
    assert float(np.dot(d1.vector, d2.vector)) < -0.99


def test_learn_direction_single_class_errors():
    x, _ = separable_data()
    with pytest.raises(ValueError):
        learn_direction("toy", x, np.ones(len(x), dtype=int))


def test_learn_direction_nonseparable_ok():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(100, 8))
    y = rng.integers(0, 2, size=100)
    d = learn_direction("noise", x, y)
    assert np.isfinite(d.vector).all()


def test_learn_direction_scale_invariant_sign_pattern():
    x, y = separable_data(seed=3)
    d1 = learn_direction("toy", x, y)
    d2 = learn_direction("toy", x * 10.0, y)
    s1 = np.sign(x @ d1.vector)
    s2 = np.sign((x * 10.0) @ d2.vector)
    assert np.array_equal(s1, s2)


def test_apply_edit_identity_and_roundtrip():
    torch.manual_seed(0)
    w = torch.randn(2, 8, 16, dtype=torch.float64)
    d = DirectionVector("toy", np.random.default_rng(0).normal(size=16))
    assert torch.equal(apply_edit(w, d, 0.0), w)
    back = apply_edit(apply_edit(w, d, 2.5), d, -2.5)
    assert float((back - w).abs().max()) < 1e-12


def test_apply_edit_linear_in_strength():
    w = torch.randn(1, 8, 16, dtype=torch.float64)
    d = DirectionVector("toy", np.random.default_rng(1).normal(size=16))
    lhs = apply_edit(w, d, 1.25 + 0.5)
    rhs = apply_edit(apply_edit(w, d, 1.25), d, 0.5)
    assert float((lhs - rhs).abs().max()) < 1e-12


def test_apply_edit_scoped_rows():
    w = torch.zeros(1, 4, 8)
    d = DirectionVector("toy", np.ones(8), scope="style_subset", style_indices=(1, 3))
    out = apply_edit(w, d, 1.0)
    assert float(out[0, 0].abs().sum()) == 0.0
    assert float(out[0, 2].abs().sum()) == 0.0
    assert float(out[0, 1].abs().sum()) > 0
    assert float(out[0, 3].abs().sum()) > 0


def test_apply_edit_dimension_check():
    w = torch.zeros(1, 4, 8)
    d = DirectionVector("toy", np.ones(9))
    with pytest.raises(ValueError):
        apply_edit(w, d, 1.0)


def test_direction_bank_roundtrip(tmp_path):
    bank = DirectionBank()
    bank.add(DirectionVector("hat", np.random.default_rng(0).normal(size=16), sigma=2.5))
    bank.add(DirectionVector("smile", np.random.default_rng(1).normal(size=16)))
    path = tmp_path / "directions.json"
    bank.save(path)
    back = DirectionBank.load(path)
    assert back.names() == ["hat", "smile"]
    assert np.allclose(back.get("hat").vector, bank.get("hat").vector)
    assert back.get("hat").sigma == pytest.approx(2.5)
    with pytest.raises(KeyError):
        back.get("beard")
