import math

import pytest
import torch

from latentfill.config import ModelConfig
from latentfill.mixer import GatedMixer, MixerOutput, PlainMixer, build_mixer, combine
from util import analytic_grad, finite_difference_grad, relative_error

CFG = ModelConfig(resolution=32)


def test_combine_zero_gate_is_midpoint():
    w_comb = torch.randn(2, 8, 128)
    w_rand = torch.randn(2, 8, 128)
    out = combine(w_comb, w_rand, torch.zeros(2, 8, 128))
    assert torch.allclose(out, 0.5 * w_comb + 0.5 * w_rand)


def test_combine_saturated_limits():
    w_comb = torch.randn(1, 8, 128, dtype=torch.float64)
    w_rand = torch.randn(1, 8, 128, dtype=torch.float64)
    hi = combine(w_comb, w_rand, torch.full_like(w_comb, 40.0))
    lo = combine(w_comb, w_rand, torch.full_like(w_comb, -40.0))
    assert float((hi - w_comb).abs().max()) < 1e-12
    assert float((lo - w_rand).abs().max()) < 1e-12


def test_combine_scalar_hand_value():
    # sigmoid(ln 3) = 0.75, so 0.75*2 + 0.25*0 = 1.5
    out = combine(
        torch.full((1, 1, 1), 2.0),
        torch.zeros(1, 1, 1),
        torch.full((1, 1, 1), math.log(3.0)),
    )
    assert abs(float(out) - 1.5) < 1e-6


def test_combine_convexity():
    g = torch.Generator().manual_seed(0)
    w_comb = torch.randn(4, 8, 128, generator=g)
    w_rand = torch.randn(4, 8, 128, generator=g)
    gate = torch.randn(4, 8, 128, generator=g) * 10
    out = combine(w_comb, w_rand, gate)
    lo = torch.minimum(w_comb, w_rand)
    hi = torch.maximum(w_comb, w_rand)
    assert bool(((out >= lo - 1e-6) & (out <= hi + 1e-6)).all())


def test_combine_gradients_match_finite_differences():
    g = torch.Generator().manual_seed(1)
    w_comb = torch.randn(1, 2, 3, generator=g, dtype=torch.float64)
    w_rand = torch.randn(1, 2, 3, generator=g, dtype=torch.float64)
    gate = torch.randn(1, 2, 3, generator=g, dtype=torch.float64)
    probe = torch.randn(1, 2, 3, generator=g, dtype=torch.float64)

    for name, args in {
        "w_comb": (lambda x: (combine(x, w_rand, gate) * probe).sum(), w_comb),
        "w_rand": (lambda x: (combine(w_comb, x, gate) * probe).sum(), w_rand),
        "gate": (lambda x: (combine(w_comb, w_rand, x) * probe).sum(), gate),
    }.items():
        fn, x = args
        err = relative_error(analytic_grad(fn, x), finite_difference_grad(fn, x))
        assert err < 1e-6, f"{name}: rel err {err}"


def test_combine_shape_mismatch():
    with pytest.raises(ValueError):
        combine(torch.zeros(1, 8, 128), torch.zeros(1, 8, 128), torch.zeros(1, 8, 64))


def test_mixer_internal_consistency():
    torch.manual_seed(0)
    mixer = GatedMixer(CFG)
    w_enc = torch.randn(3, CFG.n_styles, CFG.w_dim)
    w_rand = torch.randn(3, CFG.n_styles, CFG.w_dim)
    out = mixer(w_enc, w_rand)
    assert isinstance(out, MixerOutput)
    recomputed = combine(out.w_comb, w_rand, out.gate)
    assert float((out.w_out - recomputed).abs().max()) < 1e-6


def test_mixer_shapes_and_degenerate_input():
    torch.manual_seed(0)
    mixer = GatedMixer(CFG)
    w = torch.randn(2, CFG.n_styles, CFG.w_dim)
    out = mixer(w, w)
    for t in (out.w_out, out.w_comb, out.gate):
        assert t.shape == (2, CFG.n_styles, CFG.w_dim)
        assert torch.isfinite(t).all()


def test_mixer_rejects_bad_shapes():
    mixer = GatedMixer(CFG)
    good = torch.zeros(1, CFG.n_styles, CFG.w_dim)
    with pytest.raises(ValueError):
        mixer(good, torch.zeros(1, CFG.n_styles + 1, CFG.w_dim))
    with pytest.raises(ValueError):
        mixer(torch.zeros(1, CFG.n_styles, 64), good)


def test_plain_mixer_has_no_gate():
    torch.manual_seed(0)
    mixer = build_mixer(CFG, gated=False)
    assert isinstance(mixer, PlainMixer)
    w = torch.randn(2, CFG.n_styles, CFG.w_dim)
    out = mixer(w, torch.randn(2, CFG.n_styles, CFG.w_dim))
    assert out.gate is None
    assert out.w_out.shape == (2, CFG.n_styles, CFG.w_dim)
