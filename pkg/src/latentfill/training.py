"""Training loops: base GAN pretraining, dual-path stage 1, stage-2 fine-tune.

Stage 1 trains the encoder, mixing network and discriminator against a
frozen generator using generated data only: every batch is synthesized from
a random z_g, erased, and reconstructed twice — once re-using the mapping
of z_g (full-image reconstruction) and once with a fresh z_r (valid pixels
only). With ``full_recons`` disabled the run reproduces the real-image
ablation regime instead: corpus images, the fresh-z path alone.

Stage 2 freezes everything but the skip encoder and the discriminator and
fine-tunes with the same objective on the skip-injected second pass.

All loops are deterministic functions of (config, seed) on a single worker.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import Discriminator, Generator
from .checkpoint import Checkpoint, capture_rng
from .config import ModelConfig, TrainConfig
from .encoder import InversionEncoder
from .masking import MaskBand, compose_final, erase, sample_mask
from .mixer import build_mixer
from .objectives import (
    AttributeClassifier,
    LossBreakdown,
    loss_adv,
    loss_rg,
    loss_rr,
    total_objective,
)
from .refiner import SkipEncoder


class TrainingDiverged(RuntimeError):
    def __init__(self, step, message, last_checkpoint=None):
        super().__init__(f"training diverged at step {step}: {message}")
        self.step = step
        self.last_checkpoint = last_checkpoint


@dataclass
class StepOutcome:
    step: int
    lr: float
    loss: LossBreakdown
    grad_norms: dict = field(default_factory=dict)


class TrainLogger:
    """Line-delimited JSON training log."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def log(self, outcome: StepOutcome) -> None:
        if not self.path:
            return
        record = {"step": outcome.step, "lr": outcome.lr}
        record.update(outcome.loss.as_record())
        record.update({f"grad_{k}": v for k, v in outcome.grad_norms.items()})
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record) + "\n")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Base rate halved after every `halving_period` steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return cfg.lr * 2.0 ** (-(step // cfg.halving_period()))


def _set_lr(optimizer, lr):
    for group in optimizer.param_groups:
        group["lr"] = lr


def _grad_norm(module) -> float:
    total = 0.0
    for p in module.parameters():
        if p.grad is not None:
            total += float(p.grad.detach().pow(2).sum())
    return math.sqrt(total)


def _freeze(module):
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def _check_finite(step, named_losses, last_checkpoint=None):
    for name, value in named_losses.items():
        if value is not None and not torch.isfinite(value).all():
            raise TrainingDiverged(step, f"{name} is not finite", last_checkpoint)


def sample_mask_batch(band: MaskBand, resolution: int, batch: int, rng: np.random.Generator):
    seeds = rng.integers(0, 2**63 - 1, size=batch)
    masks = [sample_mask(band, resolution, int(s)) for s in seeds]
    return torch.stack(masks)


# ---------------------------------------------------------------------------
# base GAN
# ---------------------------------------------------------------------------


def pretrain_base_gan(
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    images: np.ndarray,
    classifier: AttributeClassifier | None = None,
    log_path=None,
) -> Checkpoint:
    """Train the style backbone on corpus images with logistic loss + R1.

    The returned checkpoint has stage ``base_gan`` and carries G, D and,
    when given, the attribute classifier.
    """
    torch.manual_seed(cfg.seed)
    generator = Generator(model_cfg)
    discriminator = Discriminator(model_cfg)
    opt_g = torch.optim.Adam(generator.parameters(), lr=cfg.lr, betas=(0.0, 0.99))
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=cfg.lr, betas=(0.0, 0.99))
    zgen = torch.Generator().manual_seed(cfg.seed + 1)
    batch_rng = np.random.default_rng(cfg.seed + 2)
    reals_all = torch.as_tensor(images)
    logger = TrainLogger(log_path)

    for step in range(cfg.total_steps):
        lr = lr_schedule(step, cfg)
        _set_lr(opt_g, lr)
        _set_lr(opt_d, lr)

        idx = torch.as_tensor(batch_rng.integers(0, reals_all.shape[0], size=cfg.batch_size))
        reals = reals_all[idx]
        z = torch.randn(cfg.batch_size, model_cfg.z_dim, generator=zgen)

        # discriminator
        fakes = generator(z)
        d_real = discriminator(reals)
        d_fake = discriminator(fakes.detach())
        d_loss = F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
        if cfg.r1_interval and step % cfg.r1_interval == 0:
            reals_rq = reals.detach().requires_grad_(True)
            d_real_rq = discriminator(reals_rq)
            (grad,) = torch.autograd.grad(d_real_rq.sum(), reals_rq, create_graph=True)
            r1 = grad.pow(2).sum(dim=(1, 2, 3)).mean()
            d_loss = d_loss + 0.5 * cfg.r1_gamma * r1 * cfg.r1_interval
        opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        opt_d.step()

        # generator (non-saturating logistic)
        d_fake2 = discriminator(fakes)
        g_loss = F.softplus(-d_fake2).mean()
        opt_g.zero_grad(set_to_none=True)
        opt_d.zero_grad(set_to_none=True)
        g_loss.backward()
        opt_g.step()

        _check_finite(step, {"d_loss": d_loss, "g_loss": g_loss})
        if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
            breakdown = LossBreakdown(
                l_adv_d=float(d_loss), l_adv_g=float(g_loss), total=float(d_loss + g_loss)
            )
            logger.log(StepOutcome(step, lr, breakdown, {"G": _grad_norm(generator), "D": _grad_norm(discriminator)}))

    ckpt = Checkpoint("base_gan", model_cfg, cfg, rng_state=capture_rng())
    ckpt.store_module("G", generator)
    ckpt.store_module("D", discriminator)
    if classifier is not None:
        ckpt.store_module("PHI", classifier)
        ckpt.extra["classifier_resolution"] = classifier.resolution
    return ckpt


# ---------------------------------------------------------------------------
# stage 1
# ---------------------------------------------------------------------------


def load_classifier(ckpt: Checkpoint) -> AttributeClassifier:
    clf = AttributeClassifier(ckpt.model_cfg.resolution)
    ckpt.load_module("PHI", clf)
    return _freeze(clf)


class Stage1Trainer:
    """Holds networks and optimizers for the dual-path stage-1 regime."""

    def __init__(
        self,
        model_cfg: ModelConfig,
        cfg: TrainConfig,
        base_ckpt: Checkpoint,
        corpus_images: np.ndarray | None = None,
    ):
        if not cfg.full_recons and corpus_images is None:
            raise ValueError("the real-image regime (full_recons=False) needs corpus images")
        self.model_cfg = model_cfg
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.encoder = InversionEncoder(model_cfg)
        self.mixer = build_mixer(model_cfg, gated=cfg.gated_mixer)
        self.generator = Generator(model_cfg)
        base_ckpt.load_module("G", self.generator)
        _freeze(self.generator)
        self.discriminator = Discriminator(model_cfg)
        base_ckpt.load_module("D", self.discriminator)
        self.phi = load_classifier(base_ckpt)
        self.corpus = torch.as_tensor(corpus_images) if corpus_images is not None else None

        self.opt_em = torch.optim.Adam(
            list(self.encoder.parameters()) + list(self.mixer.parameters()), lr=cfg.lr
        )
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=cfg.lr, betas=(0.0, 0.99))
        self.zgen = torch.Generator().manual_seed(cfg.seed + 11)
        self.mask_rng = np.random.default_rng(cfg.seed + 12)
        self.real_rng = np.random.default_rng(cfg.seed + 13)
        self.band = MaskBand(cfg.mask_band_lo, cfg.mask_band_hi)
        self.step_count = 0

    # -- batch construction -------------------------------------------------

    def _generated_batch(self, fixed=None):
        """(target image, its mapped styles) under the generated-data closure."""
        if fixed is not None:
            z_g, mask = fixed
        else:
            z_g = torch.randn(self.cfg.batch_size, self.model_cfg.z_dim, generator=self.zgen)
            mask = sample_mask_batch(self.band, self.model_cfg.resolution, self.cfg.batch_size, self.mask_rng)
        with torch.no_grad():
            w_g = self.generator.map(z_g)
            img, _ = self.generator.synthesize(w_g)
        return img, w_g, mask

    def _real_batch(self):
        idx = torch.as_tensor(self.real_rng.integers(0, self.corpus.shape[0], size=self.cfg.batch_size))
        img = self.corpus[idx]
        mask = sample_mask_batch(self.band, self.model_cfg.resolution, self.cfg.batch_size, self.mask_rng)
        return img, None, mask

    # -- one optimization step ----------------------------------------------

    def step(self, fixed=None) -> StepOutcome:
        cfg = self.cfg
        lr = lr_schedule(self.step_count, cfg)
        _set_lr(self.opt_em, lr)
        _set_lr(self.opt_d, lr)

        if cfg.full_recons:
            img, w_g, mask = self._generated_batch(fixed)
        else:
            img, w_g, mask = self._real_batch()
        erased = erase(img, mask)
        w_enc = self.encoder(erased, mask)

        parts = {}
        if cfg.full_recons:
            mix_a = self.mixer(w_enc, w_g)
            out_a, _ = self.generator.synthesize(mix_a.w_out)
            l_rg, rg_pix, rg_perc = loss_rg(out_a, img, self.phi, cfg.perceptual_weight)
            final_a = compose_final(img, mask, out_a)
            parts.update({"rg_pixel": float(rg_pix), "rg_perceptual": float(rg_perc)})
        else:
            l_rg, final_a = img.new_zeros(()), None

        with torch.no_grad():
            z_r = torch.randn(cfg.batch_size, self.model_cfg.z_dim, generator=self.zgen)
            w_r = self.generator.map(z_r)
        mix_b = self.mixer(w_enc, w_r)
        out_b, _ = self.generator.synthesize(mix_b.w_out)
        l_rr, rr_pix, rr_perc = loss_rr(out_b, erased, mask, self.phi, cfg.perceptual_weight)
        final_b = compose_final(img, mask, out_b)
        parts.update({"rr_pixel": float(rr_pix), "rr_perceptual": float(rr_perc)})

        # encoder + mixer side (discriminator grads polluted here, zeroed below)
        d_fake_a = self.discriminator(final_a) if final_a is not None else None
        d_fake_b = self.discriminator(final_b)
        l_adv_g = loss_adv(None, d_fake_a, d_fake_b, "generator")
        total = total_objective(l_adv_g, l_rg, l_rr, cfg.lambda_adv, cfg.lambda_rg, cfg.lambda_rr)
        self.opt_em.zero_grad(set_to_none=True)
        total.backward()
        em_norm = _grad_norm(self.encoder) + _grad_norm(self.mixer)
        self.opt_em.step()

        # discriminator side, on the same fakes (values only)
        d_real = self.discriminator(img)
        l_adv_d = loss_adv(
            d_real, d_fake_a.detach() if d_fake_a is not None else None, d_fake_b.detach(), "discriminator"
        )
        self.opt_d.zero_grad(set_to_none=True)
        (cfg.lambda_adv * l_adv_d).backward()
        d_norm = _grad_norm(self.discriminator)
        self.opt_d.step()

        _check_finite(self.step_count, {"l_rg": l_rg, "l_rr": l_rr, "l_adv_d": l_adv_d, "l_adv_g": l_adv_g})
        breakdown = LossBreakdown(
            l_rg=float(l_rg),
            l_rr=float(l_rr),
            l_adv_d=float(l_adv_d),
            l_adv_g=float(l_adv_g),
            total=float(total),
            parts=parts,
        )
        outcome = StepOutcome(self.step_count, lr, breakdown, {"EM": em_norm, "D": d_norm})
        self.step_count += 1
        return outcome

    def checkpoint(self) -> Checkpoint:
        ckpt = Checkpoint("stage1", self.model_cfg, self.cfg, rng_state=capture_rng())
        ckpt.store_module("G", self.generator)
        ckpt.store_module("D", self.discriminator)
        ckpt.store_module("E", self.encoder)
        ckpt.store_module("MI", self.mixer)
        ckpt.store_module("PHI", self.phi)
        ckpt.extra["gated_mixer"] = self.cfg.gated_mixer
        return ckpt


def train_stage1(
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    base_ckpt: Checkpoint,
    corpus_images: np.ndarray | None = None,
    log_path=None,
) -> Checkpoint:
    trainer = Stage1Trainer(model_cfg, cfg, base_ckpt, corpus_images)
    logger = TrainLogger(log_path)
    for step in range(cfg.total_steps):
        outcome = trainer.step()
        if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
            logger.log(outcome)
    return trainer.checkpoint()


# ---------------------------------------------------------------------------
# stage 2
# ---------------------------------------------------------------------------


class Stage2Trainer:
    """Trains the skip encoder (and discriminator) on top of a frozen stage 1."""

    def __init__(self, model_cfg: ModelConfig, cfg: TrainConfig, stage1_ckpt: Checkpoint):
        if stage1_ckpt.stage != "stage1":
            raise ValueError(f"stage-2 training needs a stage1 checkpoint, got {stage1_ckpt.stage!r}")
        self.model_cfg = model_cfg
        self.cfg = cfg
        torch.manual_seed(cfg.seed)
        self.skip_encoder = SkipEncoder(model_cfg)
        self.generator = Generator(model_cfg)
        stage1_ckpt.load_module("G", self.generator)
        _freeze(self.generator)
        self.encoder = InversionEncoder(model_cfg)
        stage1_ckpt.load_module("E", self.encoder)
        _freeze(self.encoder)
        gated = bool(stage1_ckpt.extra.get("gated_mixer", True))
        self.mixer = build_mixer(model_cfg, gated=gated)
        stage1_ckpt.load_module("MI", self.mixer)
        _freeze(self.mixer)
        self.discriminator = Discriminator(model_cfg)
        stage1_ckpt.load_module("D", self.discriminator)
        self.phi = load_classifier(stage1_ckpt)
        self.gated = gated

        self.opt_s = torch.optim.Adam(self.skip_encoder.parameters(), lr=cfg.lr)
        self.opt_d = torch.optim.Adam(self.discriminator.parameters(), lr=cfg.lr, betas=(0.0, 0.99))
        self.zgen = torch.Generator().manual_seed(cfg.seed + 21)
        self.mask_rng = np.random.default_rng(cfg.seed + 22)
        self.band = MaskBand(cfg.mask_band_lo, cfg.mask_band_hi)
        self.step_count = 0

    def _second_pass(self, img, mask, erased, w_out):
        with torch.no_grad():
            raw1, _ = self.generator.synthesize(w_out)
            composed1 = compose_final(img, mask, raw1)
        maps = self.skip_encoder(composed1, erased, mask)
        raw2, _ = self.generator.synthesize(w_out, skips=maps)
        return raw2

    def step(self) -> StepOutcome:
        cfg = self.cfg
        lr = lr_schedule(self.step_count, cfg)
        _set_lr(self.opt_s, lr)
        _set_lr(self.opt_d, lr)

        with torch.no_grad():
            z_g = torch.randn(cfg.batch_size, self.model_cfg.z_dim, generator=self.zgen)
            w_g = self.generator.map(z_g)
            img, _ = self.generator.synthesize(w_g)
            mask = sample_mask_batch(self.band, self.model_cfg.resolution, cfg.batch_size, self.mask_rng)
            erased = erase(img, mask)
            w_enc = self.encoder(erased, mask)
            w_out_a = self.mixer(w_enc, w_g).w_out
            z_r = torch.randn(cfg.batch_size, self.model_cfg.z_dim, generator=self.zgen)
            w_out_b = self.mixer(w_enc, self.generator.map(z_r)).w_out

        raw2_a = self._second_pass(img, mask, erased, w_out_a)
        l_rg, rg_pix, rg_perc = loss_rg(raw2_a, img, self.phi, cfg.perceptual_weight)
        final_a = compose_final(img, mask, raw2_a)

        raw2_b = self._second_pass(img, mask, erased, w_out_b)
        l_rr, rr_pix, rr_perc = loss_rr(raw2_b, erased, mask, self.phi, cfg.perceptual_weight)
        final_b = compose_final(img, mask, raw2_b)

        d_fake_a = self.discriminator(final_a)
        d_fake_b = self.discriminator(final_b)
        l_adv_g = loss_adv(None, d_fake_a, d_fake_b, "generator")
        total = total_objective(l_adv_g, l_rg, l_rr, cfg.lambda_adv, cfg.lambda_rg, cfg.lambda_rr)
        self.opt_s.zero_grad(set_to_none=True)
        total.backward()
        s_norm = _grad_norm(self.skip_encoder)
        self.opt_s.step()

        d_real = self.discriminator(img)
        l_adv_d = loss_adv(d_real, d_fake_a.detach(), d_fake_b.detach(), "discriminator")
        self.opt_d.zero_grad(set_to_none=True)
        (cfg.lambda_adv * l_adv_d).backward()
        d_norm = _grad_norm(self.discriminator)
        self.opt_d.step()

        _check_finite(self.step_count, {"l_rg": l_rg, "l_rr": l_rr, "l_adv_d": l_adv_d, "l_adv_g": l_adv_g})
        breakdown = LossBreakdown(
            l_rg=float(l_rg),
            l_rr=float(l_rr),
            l_adv_d=float(l_adv_d),
            l_adv_g=float(l_adv_g),
            total=float(total),
            parts={
                "rg_pixel": float(rg_pix),
                "rg_perceptual": float(rg_perc),
                "rr_pixel": float(rr_pix),
                "rr_perceptual": float(rr_perc),
            },
        )
        outcome = StepOutcome(self.step_count, lr, breakdown, {"S": s_norm, "D": d_norm})
        self.step_count += 1
        return outcome

    def checkpoint(self) -> Checkpoint:
        ckpt = Checkpoint("stage2", self.model_cfg, self.cfg, rng_state=capture_rng())
        ckpt.store_module("G", self.generator)
        ckpt.store_module("D", self.discriminator)
        ckpt.store_module("E", self.encoder)
        ckpt.store_module("MI", self.mixer)
        ckpt.store_module("S", self.skip_encoder)
        ckpt.store_module("PHI", self.phi)
        ckpt.extra["gated_mixer"] = self.gated
        return ckpt


def train_stage2(
    model_cfg: ModelConfig, cfg: TrainConfig, stage1_ckpt: Checkpoint, log_path=None
) -> Checkpoint:
    trainer = Stage2Trainer(model_cfg, cfg, stage1_ckpt)
    logger = TrainLogger(log_path)
    for step in range(cfg.total_steps):
        outcome = trainer.step()
        if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
            logger.log(outcome)
    return trainer.checkpoint()
