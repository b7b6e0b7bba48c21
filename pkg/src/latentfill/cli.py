"""Command-line entry point.

Subcommands cover corpus generation, base-GAN pretraining, both training
stages, the five ablation variants, evaluation, one-shot inpainting,
editing and the HTTP service. Every run prints its resolved configuration
and seed first; training runs write a config snapshot, a JSONL loss log and
their checkpoint into the run directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np
import torch

from . import corpus as corpus_mod
from .checkpoint import Checkpoint
from .config import (
    ModelConfig,
    TrainConfig,
    ablation_flags,
    apply_overrides,
    config_to_dict,
    read_config_file,
    write_config_file,
)
from .editing import DirectionBank, build_directions
from .evaluation import evaluate_pipeline
from .masking import MaskBand, load_mask_png
from .objectives import train_attribute_classifier
from .pipeline import InpaintPipeline
from .training import pretrain_base_gan, train_stage1, train_stage2

DEFAULT_BANDS = "0,0.4;0.4,1"


def _parse_band(text: str) -> MaskBand:
    try:
        lo, hi = (float(p) for p in text.split(","))
        return MaskBand(lo, hi)
    except Exception as exc:
        raise argparse.ArgumentTypeError(f"expected 'lo,hi' with 0 <= lo < hi <= 1, got {text!r}") from exc


def _parse_bands(text: str) -> list[MaskBand]:
    return [_parse_band(part) for part in text.split(";") if part]


def _load_file_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "config", None):
        overrides.update(read_config_file(args.config))
    for key, value in vars(args).items():
        if key in ("func", "config") or value is None:
            continue
        overrides[key.replace("-", "_")] = value
    return overrides


def _resolve_configs(args, model_cfg=None) -> tuple[ModelConfig, TrainConfig]:
    overrides = _load_file_overrides(args)
    if "steps" in overrides:
        overrides["total_steps"] = overrides.pop("steps")
    if "mask_band" in overrides:
        band = _parse_band(str(overrides.pop("mask_band")))
        overrides["mask_band_lo"], overrides["mask_band_hi"] = band.lo, band.hi
    model_cfg = apply_overrides(model_cfg or ModelConfig(), overrides)
    train_cfg = apply_overrides(TrainConfig(), overrides)
    return model_cfg, train_cfg


def _announce(model_cfg, train_cfg=None, **extras):
    print("resolved config:")
    merged = config_to_dict(model_cfg) if train_cfg is None else config_to_dict(model_cfg, train_cfg)
    merged.update(extras)
    for key in sorted(merged):
        print(f"  {key} = {merged[key]}")


def _run_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _snapshot(out: Path, model_cfg, train_cfg, **extras):
    values = config_to_dict(model_cfg, train_cfg)
    values.update(extras)
    write_config_file(out / "config.txt", values)


def _load_image(path, resolution) -> torch.Tensor:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("RGB"))
    if arr.shape[:2] != (resolution, resolution):
        raise SystemExit(f"error: expected a {resolution}x{resolution} image, got {arr.shape[1]}x{arr.shape[0]}")
    return torch.from_numpy(corpus_mod.uint8_to_image(arr))


def _save_image(img: torch.Tensor, path) -> None:
    from PIL import Image

    Image.fromarray(corpus_mod.image_to_uint8(img.numpy())).save(path)


def _directions_for(checkpoint_path, override) -> DirectionBank:
    path = Path(override) if override else Path(checkpoint_path).parent / "directions.json"
    if not path.exists():
        raise SystemExit(f"error: directions file {path} not found (pass --directions)")
    return DirectionBank.load(path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_corpus(args) -> int:
    model_cfg = ModelConfig(resolution=args.resolution)
    _announce(model_cfg, n=args.n, seed=args.seed, out=args.out)
    images, attrs = corpus_mod.generate_corpus(args.n, args.resolution, args.seed)
    corpus_mod.write_corpus(args.out, images, attrs)
    print(f"wrote {args.n} images and attributes.csv to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    images, attrs = corpus_mod.load_corpus(args.corpus)
    resolution = images.shape[-1]
    model_cfg, train_cfg = _resolve_configs(args, ModelConfig(resolution=resolution))
    train_cfg = dataclasses.replace(train_cfg, stage="base_gan")
    _announce(model_cfg, train_cfg, corpus=args.corpus, classifier_steps=args.classifier_steps)
    out = _run_dir(args)
    _snapshot(out, model_cfg, train_cfg, corpus=args.corpus)
    classifier = train_attribute_classifier(
        images, attrs, resolution, steps=args.classifier_steps, seed=train_cfg.seed
    )
    ckpt = pretrain_base_gan(model_cfg, train_cfg, images, classifier, log_path=out / "train.log.jsonl")
    path = ckpt.save(out / "base_gan.npz")
    bank = build_directions(_frozen_generator(ckpt), classifier, n=args.direction_samples, seed=train_cfg.seed)
    bank.save(out / "directions.json")
    print(f"saved checkpoint to {path}")
    print(f"saved directions to {out / 'directions.json'}")
    return 0


def _frozen_generator(ckpt):
    from .backbone import Generator
    from .training import _freeze

    generator = Generator(ckpt.model_cfg)
    ckpt.load_module("G", generator)
    return _freeze(generator)


def _copy_directions(src_ckpt_path, out: Path):
    src = Path(src_ckpt_path).parent / "directions.json"
    if src.exists() and src != out / "directions.json":
        (out / "directions.json").write_text(src.read_text())


def cmd_train_stage1(args) -> int:
    base = Checkpoint.load(args.base)
    model_cfg, train_cfg = _resolve_configs(args, base.model_cfg)
    train_cfg = dataclasses.replace(train_cfg, stage="stage1")
    _announce(model_cfg, train_cfg, base=args.base)
    out = _run_dir(args)
    _snapshot(out, model_cfg, train_cfg, base=args.base)
    corpus_images = None
    if not train_cfg.full_recons:
        if not args.corpus:
            raise SystemExit("error: --corpus is required when full_recons is disabled")
        corpus_images, _ = corpus_mod.load_corpus(args.corpus)
    ckpt = train_stage1(model_cfg, train_cfg, base, corpus_images, log_path=out / "train.log.jsonl")
    path = ckpt.save(out / "stage1.npz")
    _copy_directions(args.base, out)
    print(f"saved checkpoint to {path}")
    return 0


def cmd_train_stage2(args) -> int:
    stage1 = Checkpoint.load(args.stage1)
    model_cfg, train_cfg = _resolve_configs(args, stage1.model_cfg)
    train_cfg = dataclasses.replace(train_cfg, stage="stage2")
    _announce(model_cfg, train_cfg, stage1=args.stage1)
    out = _run_dir(args)
    _snapshot(out, model_cfg, train_cfg, stage1=args.stage1)
    ckpt = train_stage2(model_cfg, train_cfg, stage1, log_path=out / "train.log.jsonl")
    path = ckpt.save(out / "stage2.npz")
    _copy_directions(args.stage1, out)
    print(f"saved checkpoint to {path}")
    return 0


def cmd_ablation(args) -> int:
    flags = ablation_flags(args.id)
    base = Checkpoint.load(args.base)
    model_cfg, train_cfg = _resolve_configs(args, base.model_cfg)
    train_cfg = dataclasses.replace(train_cfg, stage="stage1", **flags)
    _announce(model_cfg, train_cfg, base=args.base, ablation_id=args.id)
    out = _run_dir(args)
    _snapshot(out, model_cfg, train_cfg, base=args.base, ablation_id=args.id)
    corpus_images = None
    if not train_cfg.full_recons:
        if not args.corpus:
            raise SystemExit("error: --corpus is required for ablation ids 1 and 2 (real-image regime)")
        corpus_images, _ = corpus_mod.load_corpus(args.corpus)
    ckpt = train_stage1(model_cfg, train_cfg, base, corpus_images, log_path=out / "train.log.jsonl")
    path = ckpt.save(out / f"ablation{args.id}_stage1.npz")
    print(f"saved stage1 checkpoint to {path}")
    if flags["second_stage"]:
        stage2_cfg = dataclasses.replace(
            train_cfg, stage="stage2", total_steps=args.stage2_steps or train_cfg.total_steps
        )
        ckpt2 = train_stage2(model_cfg, stage2_cfg, ckpt, log_path=out / "train2.log.jsonl")
        path2 = ckpt2.save(out / f"ablation{args.id}_stage2.npz")
        print(f"saved stage2 checkpoint to {path2}")
    _copy_directions(args.base, out)
    return 0


def cmd_eval(args) -> int:
    pipeline = InpaintPipeline.from_path(args.checkpoint)
    images, _ = corpus_mod.load_corpus(args.corpus)
    model_cfg = pipeline.model_cfg
    _announce(model_cfg, checkpoint=args.checkpoint, n=args.n, bands=args.bands, seed=args.seed)
    if images.shape[-1] != model_cfg.resolution:
        raise SystemExit("error: corpus resolution does not match the checkpoint")
    eval_images = torch.as_tensor(images[: args.n])
    report = evaluate_pipeline(pipeline, eval_images, bands=_parse_bands(args.bands), seed=args.seed)
    print(report.to_text())
    if args.out:
        out = _run_dir(args)
        report.save(out / "metrics.txt")
        print(f"wrote {out / 'metrics.txt'}")
    return 0


def cmd_inpaint(args) -> int:
    pipeline = InpaintPipeline.from_path(args.checkpoint)
    _announce(pipeline.model_cfg, checkpoint=args.checkpoint, image=args.image, mask=args.mask, seed=args.seed)
    image = _load_image(args.image, pipeline.model_cfg.resolution)
    mask = load_mask_png(args.mask)
    result = pipeline.complete(image[None], mask[None], seed=args.seed)
    _save_image(result.final[0], args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_edit(args) -> int:
    pipeline = InpaintPipeline.from_path(args.checkpoint)
    bank = _directions_for(args.checkpoint, args.directions)
    _announce(
        pipeline.model_cfg,
        checkpoint=args.checkpoint,
        direction=args.direction,
        strength=args.strength,
        seed=args.seed,
    )
    if args.direction not in bank:
        raise SystemExit(f"error: unknown direction {args.direction!r}; known: {bank.names()}")
    image = _load_image(args.image, pipeline.model_cfg.resolution)
    mask = load_mask_png(args.mask)
    result = pipeline.complete(
        image[None], mask[None], seed=args.seed, edits=[(bank.get(args.direction), args.strength)]
    )
    _save_image(result.final[0], args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    pipeline = InpaintPipeline.from_path(args.checkpoint)
    bank = _directions_for(args.checkpoint, args.directions)
    _announce(pipeline.model_cfg, checkpoint=args.checkpoint, host=args.host, port=args.port)
    app = create_app(
        pipeline,
        bank,
        session_cap=args.session_cap,
        persist_path=args.persist,
        checkpoint_path=str(args.checkpoint),
    )
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_train_flags(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--steps", type=int, help="total optimization steps")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--mask-band", dest="mask_band", help="erased-ratio band 'lo,hi'")
    p.add_argument("--out", required=True, help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentfill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="render the schematic-face corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("pretrain", help="train the base GAN and attribute classifier")
    p.add_argument("--corpus", required=True)
    p.add_argument("--classifier-steps", type=int, default=400, dest="classifier_steps")
    p.add_argument("--direction-samples", type=int, default=4000, dest="direction_samples")
    _add_train_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-stage1", help="train encoder + mixing network")
    p.add_argument("--base", required=True, help="base_gan checkpoint")
    p.add_argument("--corpus", help="needed when full_recons is disabled")
    p.add_argument("--full-recons", dest="full_recons", action="store_true", default=None)
    p.add_argument("--no-full-recons", dest="full_recons", action="store_false")
    p.add_argument("--gated-mixer", dest="gated_mixer", action="store_true", default=None)
    p.add_argument("--no-gated-mixer", dest="gated_mixer", action="store_false")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="train the skip encoder on a frozen stage 1")
    p.add_argument("--stage1", required=True, help="stage1 checkpoint")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("ablation", help="run one of the five ablation variants")
    p.add_argument("--id", type=int, required=True, choices=range(1, 6))
    p.add_argument("--base", required=True)
    p.add_argument("--corpus", help="needed for ids 1 and 2")
    p.add_argument("--stage2-steps", type=int, dest="stage2_steps")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("eval", help="metrics report for a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True, help="held-out corpus directory")
    p.add_argument("--bands", default=DEFAULT_BANDS, help="semicolon-separated erased-ratio bands")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inpaint", help="complete one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("edit", help="inpaint with a semantic edit")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--direction", required=True)
    p.add_argument("--strength", type=float, required=True)
    p.add_argument("--directions", help="directions file (default: next to checkpoint)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("serve", help="run the HTTP inference service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--directions")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--session-cap", type=int, default=64, dest="session_cap")
    p.add_argument("--persist", help="session persistence file")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
