"""Linear semantic directions in the style space.

Directions are unit normals of attribute-separating hyperplanes fitted on
(style vector, label) pairs, applied as additive shifts to the mixer's
output code. Because the final composition re-imposes valid input pixels,
edits show up only inside erased regions unless composition is skipped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.svm import LinearSVC


@dataclass
class DirectionVector:
    """Named unit-norm edit direction; scope selects affected style rows."""

    name: str
    vector: np.ndarray
    scope: str = "all_styles"  # or "style_subset"
    style_indices: tuple = ()
    sigma: float = 1.0  # std of training w projected on the direction

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        norm = np.linalg.norm(self.vector)
        if not np.isfinite(norm) or norm == 0:
            raise ValueError(f"direction {self.name!r} has invalid norm {norm}")
        self.vector = self.vector / norm


def learn_direction(attribute_name: str, samples, labels) -> DirectionVector:
    """Fit the unit normal of a linear separating hyperplane.

    `samples` is an (n, d_w) array of single style rows, `labels` binary.
    Non-separable data is fine (the best-fit normal is returned); a single
    class is an error.
    """
    x = np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if x.ndim != 2:
        raise ValueError(f"expected samples of shape (n, d_w), got {x.shape}")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError(f"need two classes to fit a direction, got {classes}")
    svm = LinearSVC(dual=False, C=1.0, max_iter=10000)
    svm.fit(x, y)
    direction = DirectionVector(attribute_name, svm.coef_[0])
    direction.sigma = float(np.std(x @ direction.vector))
    return direction


def apply_edit(w_out: torch.Tensor, direction: DirectionVector, strength: float) -> torch.Tensor:
    """Shift the rows in the direction's scope by strength * vector."""
    if w_out.shape[-1] != direction.vector.shape[0]:
        raise ValueError(
            f"direction dim {direction.vector.shape[0]} does not match style width {w_out.shape[-1]}"
        )
    vec = torch.as_tensor(direction.vector, dtype=w_out.dtype, device=w_out.device)
    if direction.scope == "all_styles":
        return w_out + strength * vec
    edited = w_out.clone()
    for idx in direction.style_indices:
        edited[..., idx, :] = edited[..., idx, :] + strength * vec
    return edited


class DirectionBank:
    """Named directions persisted as one JSON file."""

    def __init__(self, directions=()):
        self.directions = {d.name: d for d in directions}

    def __contains__(self, name):
        return name in self.directions

    def names(self):
        return sorted(self.directions)

    def get(self, name: str) -> DirectionVector:
        try:
            return self.directions[name]
        except KeyError:
            raise KeyError(f"unknown direction {name!r}; known: {self.names()}") from None

    def add(self, direction: DirectionVector):
        self.directions[direction.name] = direction

    def save(self, path) -> None:
        payload = {
            name: {
                "vector": d.vector.tolist(),
                "scope": d.scope,
                "style_indices": list(d.style_indices),
                "sigma": d.sigma,
            }
            for name, d in self.directions.items()
        }
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path) -> "DirectionBank":
        payload = json.loads(Path(path).read_text())
        bank = cls()
        for name, rec in payload.items():
            bank.add(
                DirectionVector(
                    name,
                    np.asarray(rec["vector"]),
                    rec.get("scope", "all_styles"),
                    tuple(rec.get("style_indices", ())),
                    rec.get("sigma", 1.0),
                )
            )
        return bank


def label_styles_with_classifier(generator, classifier, n: int, seed: int = 0, batch: int = 64):
    """Sample (w row, attribute label) pairs by classifying generated images.

    Returns (w_rows [n, d_w], dict of binary label arrays for hat/smile).
    """
    gen = torch.Generator().manual_seed(seed)
    rows, hats, smiles = [], [], []
    done = 0
    with torch.no_grad():
        while done < n:
            b = min(batch, n - done)
            z = torch.randn(b, generator.cfg.z_dim, generator=gen)
            ws = generator.map(z)
            img, _ = generator.synthesize(ws)
            logits, _ = classifier(img)
            rows.append(ws[:, 0].cpu().numpy())
            hats.append((logits[:, 0] > 0).cpu().numpy())
            smiles.append((logits[:, 1] > 0).cpu().numpy())
            done += b
    return np.concatenate(rows), {
        "hat": np.concatenate(hats).astype(int),
        "smile": np.concatenate(smiles).astype(int),
    }


def build_directions(generator, classifier, attributes=("hat", "smile"), n: int = 5000, seed: int = 0) -> DirectionBank:
    """Learn one direction per requested binary attribute."""
    rows, labels = label_styles_with_classifier(generator, classifier, n, seed)
    bank = DirectionBank()
    for name in attributes:
        bank.add(learn_direction(name, rows, labels[name]))
    return bank
