import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from latentfill.corpus import generate_corpus
from latentfill.objectives import (
    AttributeClassifier,
    adv_value_literal,
    loss_adv,
    loss_rg,
    loss_rr,
    perceptual_distance,
    total_objective,
    train_attribute_classifier,
)
from util import analytic_grad, finite_difference_grad, relative_error


def make_phi(resolution=16, dtype=torch.float32):
    torch.manual_seed(3)
    phi = AttributeClassifier(resolution).to(dtype)
    phi.eval()
    for p in phi.parameters():
        p.requires_grad_(False)
    return phi


def test_perceptual_distance_zero_and_symmetric():
    phi = make_phi()
    a = torch.randn(2, 3, 16, 16)
    b = torch.randn(2, 3, 16, 16)
    assert float(perceptual_distance(a, a, phi)) == 0.0
    assert abs(float(perceptual_distance(a, b, phi)) - float(perceptual_distance(b, a, phi))) < 1e-7


def test_perceptual_distance_hand_computed_tiny_phi():
    # single tap, one 2-channel 1x1 conv with fixed weights on a 2x2 input
    class TinyPhi:
        def __init__(self):
            self.w = torch.tensor([[2.0], [-1.0]]).reshape(2, 1, 1, 1)

        def taps(self, x):
            return [F.conv2d(x, self.w)]

    a = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
    b = torch.tensor([[[[0.0, 1.0], [1.0, 2.0]]]])
    # features: chan0 = 2x, chan1 = -x; pixel diff a-b = [[1,1],[2,2]]
    # feature diffs: chan0 = 2*diff, chan1 = -diff; mean square over the
    # 8 feature elements = (4*d2 + d2).sum() / 8
    d2 = np.array([[1.0, 1.0], [4.0, 4.0]])
    expected = (4 * d2 + d2).sum() / 8.0
    got = float(perceptual_distance(a, b, TinyPhi()))
    assert abs(got - expected) < 1e-6


def test_loss_rg_zero_and_constant_offset():
    phi = make_phi()
    target = torch.rand(2, 3, 16, 16) * 2 - 1
    loss, pix, perc = loss_rg(target, target, phi)
    assert float(loss) == 0.0
    loss2, pix2, _ = loss_rg(target + 0.1, target, phi)
    assert abs(float(pix2) - 0.01) < 1e-7


def test_loss_rg_nonnegative():
    phi = make_phi()
    g = torch.Generator().manual_seed(0)
    for _ in range(10):
        a = torch.randn(1, 3, 16, 16, generator=g)
        b = torch.randn(1, 3, 16, 16, generator=g)
        assert float(loss_rg(a, b, phi)[0]) >= 0.0


def test_loss_rg_gradient_matches_finite_differences():
    phi = make_phi(dtype=torch.float64)
    target = torch.randn(1, 3, 16, 16, dtype=torch.float64)
    out = torch.randn(1, 3, 16, 16, dtype=torch.float64)
    fn = lambda x: loss_rg(x, target, phi)[0]
    err = relative_error(analytic_grad(fn, out), finite_difference_grad(fn, out))
    assert err < 1e-4


def test_loss_rr_hole_independence():
    phi = make_phi()
    img = torch.rand(1, 3, 16, 16) * 2 - 1
    mask = (torch.rand(1, 1, 16, 16) > 0.5).float()
    erased = img * mask
    out = torch.rand(1, 3, 16, 16) * 2 - 1
    base = float(loss_rr(out, erased, mask, phi)[0])
    perturbed = out + (1 - mask) * torch.randn(1, 3, 16, 16) * 10
    after = float(loss_rr(perturbed, erased, mask, phi)[0])
    assert abs(after - base) <= 1e-12 * max(abs(base), 1.0)


def test_loss_rr_zero_when_valid_pixels_match():
    phi = make_phi()
    img = torch.rand(1, 3, 16, 16) * 2 - 1
    mask = (torch.rand(1, 1, 16, 16) > 0.5).float()
    erased = img * mask
    hole_filled = img * mask + (1 - mask) * 0.777  # arbitrary hole content
    loss, pix, perc = loss_rr(hole_filled, erased, mask, phi)
    assert float(pix) == 0.0
    assert float(loss) == 0.0


def test_loss_rr_all_zero_mask():
    phi = make_phi()
    out = torch.randn(1, 3, 16, 16)
    mask = torch.zeros(1, 1, 16, 16)
    loss, _, _ = loss_rr(out, torch.zeros(1, 3, 16, 16), mask, phi)
    assert float(loss) == 0.0


def test_loss_adv_hand_value_at_half():
    zeros = torch.zeros(4)
    # maximized objective at D(.)=0.5 everywhere is 4*log(0.5)
    value = float(adv_value_literal(zeros, zeros, zeros))
    assert abs(value - 4 * math.log(0.5)) < 1e-6
    d_loss = float(loss_adv(zeros, zeros, zeros, "discriminator"))
    assert abs(d_loss - (-value)) < 1e-6


def test_loss_adv_saturation_optimum():
    big = torch.full((2,), 30.0)
    value = float(adv_value_literal(big, -big, -big))
    assert -1e-6 < value <= 0.0


def test_loss_adv_stable_matches_literal():
    # the literal log/sigmoid evaluation cancels catastrophically near +30,
    # so the reference is computed in 50-digit arithmetic
    import mpmath

    mpmath.mp.dps = 50

    def literal(real, fg, fr):
        sig = lambda l: 1 / (1 + mpmath.exp(-mpmath.mpf(l)))
        terms = [2 * mpmath.log(sig(real)), mpmath.log(1 - sig(fg)), mpmath.log(1 - sig(fr))]
        return float(sum(terms))

    g = torch.Generator().manual_seed(0)
    draws = [torch.empty(3).uniform_(-30, 30, generator=g).double() for _ in range(20)]
    draws += [torch.tensor([30.0, -30.0, 30.0]).double(), torch.tensor([-30.0, 30.0, -30.0]).double()]
    for logits in draws:
        real, fg, fr = (l.reshape(1) for l in logits)
        stable = -float(loss_adv(real, fg, fr, side="discriminator"))
        assert abs(stable - literal(*logits.tolist())) < 1e-10


def test_adv_value_literal_matches_stable_at_moderate_logits():
    g = torch.Generator().manual_seed(5)
    logits = [torch.empty(4).uniform_(-12, 12, generator=g).double() for _ in range(3)]
    assert abs(float(adv_value_literal(*logits) + loss_adv(*logits, side="discriminator"))) < 1e-10


def test_loss_adv_generator_side_is_fake_terms():
    g = torch.Generator().manual_seed(1)
    real, fg, fr = (torch.randn(4, generator=g).double() for _ in range(3))
    gen = loss_adv(real, fg, fr, "generator")
    expected = torch.log(1 - torch.sigmoid(fg)).mean() + torch.log(1 - torch.sigmoid(fr)).mean()
    assert abs(float(gen - expected)) < 1e-10


def test_loss_adv_gradients_match_finite_differences():
    g = torch.Generator().manual_seed(2)
    for side in ("discriminator", "generator"):
        logits = torch.randn(3, 4, generator=g, dtype=torch.float64)
        fn = lambda x: loss_adv(x[0], x[1], x[2], side)
        err = relative_error(analytic_grad(fn, logits), finite_difference_grad(fn, logits))
        assert err < 1e-6, f"{side}: {err}"


def test_loss_adv_rejects_nonfinite():
    bad = torch.tensor([float("nan")])
    with pytest.raises(FloatingPointError):
        loss_adv(bad, bad, bad, "discriminator")


def test_total_objective_values():
    assert total_objective(0.0, 0.0, 0.0) == 0.0
    # paper coefficients: 8e-2 * 1 + 1 * 1 + 1 * 1
    assert abs(total_objective(1.0, 1.0, 1.0) - 2.08) < 1e-12
    assert total_objective(1.0, 1.0, 1.0, lambda_adv=0.0) == 2.0


def test_total_objective_gradient_matches_finite_differences():
    parts = torch.randn(3, dtype=torch.float64)
    fn = lambda x: total_objective(x[0], x[1], x[2])
    err = relative_error(analytic_grad(fn, parts), finite_difference_grad(fn, parts))
    assert err < 1e-6


def test_classifier_learns_attributes():
    images, attrs = generate_corpus(512, 16, seed=0)
    clf = train_attribute_classifier(images, attrs, 16, steps=200, batch_size=32, seed=0)
    logits, _ = clf(torch.as_tensor(images))
    hat_acc = float(((logits[:, 0] > 0).numpy() == (attrs["hat"] > 0.5)).mean())
    smile_acc = float(((logits[:, 1] > 0).numpy() == (attrs["smile"] > 0)).mean())
    assert hat_acc > 0.9
    assert smile_acc > 0.9
