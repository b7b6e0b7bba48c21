"""Loss terms and the perceptual feature network.

The perceptual network is a small convolutional classifier trained on the
corpus attribute-prediction task; its three post-pooling feature maps serve
as perceptual taps and its 64-wide penultimate layer doubles as the
evaluation embedding. Reconstruction losses combine a mean-squared pixel
term with a weighted perceptual term; the adversarial objective keeps the
written weight of 2 on the real-image term and is evaluated in softplus
form for numerical stability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

#: weight of the perceptual term inside both reconstruction losses
PERCEPTUAL_WEIGHT = 5e-5


class AttributeClassifier(nn.Module):
    """Predicts corpus attributes; also the perceptual/evaluation extractor.

    Heads: binary logits for hat and smile, regression for background hue
    (as a point on the unit circle), face aspect, eye spacing and hair tone.
    """

    feature_dim = 64

    def __init__(self, resolution: int):
        super().__init__()
        self.resolution = resolution
        self.conv1 = nn.Conv2d(3, 24, 3, padding=1)
        self.conv2 = nn.Conv2d(24, 48, 3, padding=1)
        self.conv3 = nn.Conv2d(48, 64, 3, padding=1)
        side = resolution // 8
        self.fc = nn.Linear(64 * side * side, self.feature_dim)
        self.class_head = nn.Linear(self.feature_dim, 2)  # hat, smile
        self.reg_head = nn.Linear(self.feature_dim, 5)  # cos/sin hue, aspect, spacing, hair

    def taps(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Outputs of the three pooling stages."""
        t1 = F.max_pool2d(F.leaky_relu(self.conv1(x), 0.2), 2)
        t2 = F.max_pool2d(F.leaky_relu(self.conv2(t1), 0.2), 2)
        t3 = F.max_pool2d(F.leaky_relu(self.conv3(t2), 0.2), 2)
        return [t1, t2, t3]

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Penultimate embedding used by the evaluation metrics."""
        t3 = self.taps(x)[-1]
        return F.leaky_relu(self.fc(t3.flatten(1)), 0.2)

    def forward(self, x: torch.Tensor):
        feats = self.features(x)
        return self.class_head(feats), self.reg_head(feats)


def classifier_targets(attrs: dict, device=None) -> tuple[torch.Tensor, torch.Tensor]:
    """(binary targets [hat, smile01], regression targets) from corpus attrs."""
    hat = torch.as_tensor(attrs["hat"], dtype=torch.float32)
    smile01 = torch.as_tensor((attrs["smile"] + 1.0) / 2.0, dtype=torch.float32)
    hue = torch.as_tensor(attrs["bg_hue"], dtype=torch.float32) * 2 * math.pi
    reg = torch.stack(
        [
            torch.cos(hue),
            torch.sin(hue),
            torch.as_tensor(attrs["face_aspect"], dtype=torch.float32),
            torch.as_tensor(attrs["eye_spacing"], dtype=torch.float32),
            torch.as_tensor(attrs["hair_tone"], dtype=torch.float32),
        ],
        dim=1,
    )
    binary = torch.stack([hat, smile01], dim=1)
    if device is not None:
        binary, reg = binary.to(device), reg.to(device)
    return binary, reg


def train_attribute_classifier(
    images, attrs, resolution: int, steps: int = 400, batch_size: int = 64, lr: float = 2e-3, seed: int = 0
) -> AttributeClassifier:
    """Fit the attribute classifier on a rendered corpus."""
    torch.manual_seed(seed)
    clf = AttributeClassifier(resolution)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    imgs = torch.as_tensor(images)
    binary, reg = classifier_targets(attrs)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        idx = torch.randint(0, imgs.shape[0], (batch_size,), generator=gen)
        logits, regs = clf(imgs[idx])
        loss = F.binary_cross_entropy_with_logits(logits, binary[idx]) + F.mse_loss(regs, reg[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    clf.eval()
    for p in clf.parameters():
        p.requires_grad_(False)
    return clf


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, phi: AttributeClassifier) -> torch.Tensor:
    """Sum over tap layers of the mean squared feature difference."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    total = None
    for fa, fb in zip(phi.taps(a), phi.taps(b)):
        term = F.mse_loss(fa, fb)
        total = term if total is None else total + term
    return total


def loss_rg(out: torch.Tensor, target: torch.Tensor, phi, perceptual_weight: float = PERCEPTUAL_WEIGHT):
    """Full-image reconstruction: pixel MSE + weighted perceptual distance.

    Returns (loss, pixel term, perceptual term).
    """
    if out.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(out.shape)} vs {tuple(target.shape)}")
    pixel = F.mse_loss(out, target)
    perc = perceptual_distance(out, target, phi)
    return pixel + perceptual_weight * perc, pixel, perc


def loss_rr(out, erased_input, mask, phi, perceptual_weight: float = PERCEPTUAL_WEIGHT):
    """Valid-pixel reconstruction: the mask is applied before both terms."""
    masked_out = out * mask
    return loss_rg(masked_out, erased_input, phi, perceptual_weight)


def _finite(*logits):
    for l in logits:
        if l is not None and not torch.isfinite(l).all():
            raise FloatingPointError("non-finite discriminator logit")


def loss_adv(d_real, d_fake_g, d_fake_r, side: str) -> torch.Tensor:
    """Adversarial loss, softplus form.

    The maximized quantity is 2*log D(real) + log(1-D(fake_g)) + log(1-D(fake_r));
    the discriminator side returns its negation (for minimization), the
    generator side returns the two saturating fake terms. `d_fake_g` may be
    None when the full-reconstruction path is disabled.
    """
    _finite(d_real, d_fake_g, d_fake_r)
    # threshold above torch's default of 20 keeps softplus exact out to
    # logits of +-40 instead of switching to the linear approximation
    sp = lambda x: F.softplus(x, threshold=40)
    if side == "discriminator":
        loss = 2.0 * sp(-d_real).mean() + sp(d_fake_r).mean()
        if d_fake_g is not None:
            loss = loss + sp(d_fake_g).mean()
        return loss
    if side == "generator":
        loss = -sp(d_fake_r).mean()
        if d_fake_g is not None:
            loss = loss - sp(d_fake_g).mean()
        return loss
    raise ValueError(f"side must be 'discriminator' or 'generator', got {side!r}")


def adv_value_literal(d_real, d_fake_g, d_fake_r) -> torch.Tensor:
    """The maximized objective written with explicit logs and sigmoids."""
    value = 2.0 * torch.log(torch.sigmoid(d_real)).mean() + torch.log(1 - torch.sigmoid(d_fake_r)).mean()
    if d_fake_g is not None:
        value = value + torch.log(1 - torch.sigmoid(d_fake_g)).mean()
    return value


def total_objective(l_adv, l_rg, l_rr, lambda_adv=8e-2, lambda_rg=1.0, lambda_rr=1.0):
    """Weighted sum lambda_a*adv + lambda_r1*rg + lambda_r2*rr."""
    return lambda_adv * l_adv + lambda_rg * l_rg + lambda_rr * l_rr


@dataclass
class LossBreakdown:
    """Per-step scalar record of every loss term."""

    l_rg: float = 0.0
    l_rr: float = 0.0
    l_adv_d: float = 0.0
    l_adv_g: float = 0.0
    total: float = 0.0
    parts: dict = field(default_factory=dict)

    def as_record(self) -> dict:
        rec = {
            "l_rg": self.l_rg,
            "l_rr": self.l_rr,
            "l_adv_d": self.l_adv_d,
            "l_adv_g": self.l_adv_g,
            "total": self.total,
        }
        rec.update(self.parts)
        return rec
