"""Procedural schematic-face corpus.

Each image is rendered from six recorded parameters (background hue, face
aspect, eye spacing, smile sign, hat presence, hair tone) so that attribute
labels are available for free to the perceptual classifier, the editing
directions and the discriminative metrics. Generation is seed-deterministic
and writes 8-bit PNGs plus a sidecar ``attributes.csv``.
"""

from __future__ import annotations

import colorsys
import csv
from pathlib import Path

import numpy as np
from PIL import Image

ATTRIBUTE_NAMES = ("bg_hue", "face_aspect", "eye_spacing", "smile", "hat", "hair_tone")

_SKIN = np.array([0.94, 0.78, 0.62])
_EYE = np.array([0.08, 0.08, 0.10])
_MOUTH = np.array([0.62, 0.16, 0.18])
_HAIR_BASE = np.array([0.62, 0.45, 0.30])
_HAT = np.array([0.13, 0.14, 0.22])


def sample_attributes(rng: np.random.Generator) -> dict:
    """Draw one attribute vector; `smile` is +-1, `hat` is 0/1."""
    return {
        "bg_hue": float(rng.uniform(0.0, 1.0)),
        "face_aspect": float(rng.uniform(0.72, 1.02)),
        "eye_spacing": float(rng.uniform(0.30, 0.58)),
        "smile": float(rng.choice([-1.0, 1.0])),
        "hat": float(rng.integers(0, 2)),
        "hair_tone": float(rng.uniform(0.15, 0.95)),
    }


def render_face(attrs: dict, resolution: int) -> np.ndarray:
    """Render one face as a float32 3xHxW image in [-1, 1]."""
    r = resolution
    ys, xs = np.mgrid[0:r, 0:r]
    # normalized coords in [-1, 1], y grows downward
    x = (xs + 0.5) / r * 2 - 1
    y = (ys + 0.5) / r * 2 - 1

    img = np.empty((r, r, 3), dtype=np.float64)
    img[:] = colorsys.hsv_to_rgb(attrs["bg_hue"], 0.40, 0.85)

    ry = 0.62
    rx = ry * attrs["face_aspect"]
    cy = 0.08
    head = (x / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0
    img[head] = _SKIN

    hair_rim = (x / (rx * 1.10)) ** 2 + ((y - cy) / (ry * 1.10)) ** 2 <= 1.0
    hair = hair_rim & (y < cy - 0.28 * ry)
    img[hair] = _HAIR_BASE * attrs["hair_tone"]

    half = attrs["eye_spacing"] * rx / 2
    eye_y = cy - 0.12
    for ex in (-half, half):
        eye = (x - ex) ** 2 + (y - eye_y) ** 2 <= 0.072 ** 2
        img[eye] = _EYE

    # mouth: parabola, corners raised for smile=+1, lowered for -1
    s = attrs["smile"]
    mw = 0.30 * rx / 0.55
    my = cy + 0.34 * ry
    yc = my + 0.07 * s - 0.14 * s * (x / mw) ** 2
    mouth = (np.abs(y - yc) < 0.045) & (np.abs(x) < mw) & head
    img[mouth] = _MOUTH

    if attrs["hat"] >= 0.5:
        top = cy - ry
        band = (np.abs(x) < rx * 1.18) & (y > top + 0.02) & (y < top + 0.18)
        crown = (np.abs(x) < rx * 0.70) & (y > top - 0.22) & (y < top + 0.02)
        img[band | crown] = _HAT

    chw = np.transpose(img, (2, 0, 1)).astype(np.float32)
    return chw * 2.0 - 1.0


def generate_corpus(n: int, resolution: int, seed: int = 0):
    """Render `n` faces; returns (images [n,3,H,W] float32, attrs dict of arrays)."""
    rng = np.random.default_rng(seed)
    images = np.empty((n, 3, resolution, resolution), dtype=np.float32)
    attrs = {name: np.empty(n, dtype=np.float64) for name in ATTRIBUTE_NAMES}
    for i in range(n):
        a = sample_attributes(rng)
        images[i] = render_face(a, resolution)
        for name in ATTRIBUTE_NAMES:
            attrs[name][i] = a[name]
    return images, attrs


def image_to_uint8(img: np.ndarray) -> np.ndarray:
    """[-1,1] CxHxW float -> HxWxC uint8."""
    hwc = np.transpose(np.clip(img, -1.0, 1.0), (1, 2, 0))
    return np.round((hwc + 1.0) * 127.5).astype(np.uint8)


def uint8_to_image(arr: np.ndarray) -> np.ndarray:
    """HxWxC uint8 -> [-1,1] CxHxW float32."""
    chw = np.transpose(arr.astype(np.float32), (2, 0, 1))
    return chw / 127.5 - 1.0


def write_corpus(out_dir: str | Path, images: np.ndarray, attrs: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(images.shape[0]):
        name = f"face_{i:05d}.png"
        Image.fromarray(image_to_uint8(images[i])).save(out_dir / name)
        names.append(name)
    with open(out_dir / "attributes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("filename",) + ATTRIBUTE_NAMES)
        for i, name in enumerate(names):
            writer.writerow([name] + [repr(attrs[a][i]) for a in ATTRIBUTE_NAMES])


def load_corpus(corpus_dir: str | Path):
    """Read a corpus directory back into (images, attrs) arrays."""
    corpus_dir = Path(corpus_dir)
    rows = list(csv.DictReader(open(corpus_dir / "attributes.csv")))
    if not rows:
        raise ValueError(f"empty corpus at {corpus_dir}")
    images = []
    attrs = {name: np.empty(len(rows)) for name in ATTRIBUTE_NAMES}
    for i, row in enumerate(rows):
        arr = np.asarray(Image.open(corpus_dir / row["filename"]).convert("RGB"))
        images.append(uint8_to_image(arr))
        for name in ATTRIBUTE_NAMES:
            attrs[name][i] = float(row[name])
    return np.stack(images), attrs
