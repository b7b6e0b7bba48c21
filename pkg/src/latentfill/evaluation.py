"""Evaluation metrics: FID, paired diversity, U-IDS/P-IDS, difficulty sweeps.

Embeddings come from the frozen attribute classifier's 64-wide penultimate
layer; its fingerprint is pinned into every report's config hash. The FID
covariance square root uses an eigendecomposition of the symmetrized
product with negative eigenvalues clipped at zero (warning above 1e-6).
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from sklearn.preprocessing import StandardScaler
from sklearn.svm import LinearSVC

from .masking import MaskBand, sample_mask
from .objectives import AttributeClassifier, perceptual_distance


class FeatureSetError(ValueError):
    """Feature matrix violates a metric precondition."""


def extract_features(classifier: AttributeClassifier, images: torch.Tensor, batch: int = 128) -> np.ndarray:
    """Embed images with the frozen evaluation extractor; returns (n, 64)."""
    feats = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch):
            feats.append(classifier.features(images[i : i + batch]).cpu().numpy())
    return np.concatenate(feats).astype(np.float64)


def _check_feature_set(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise FeatureSetError(f"{name} must be 2-D (n, d), got shape {x.shape}")
    n, d = x.shape
    if n < d + 1:
        raise FeatureSetError(f"{name} needs at least d+1={d + 1} samples for covariance metrics, got {n}")
    if not np.isfinite(x).all():
        raise FeatureSetError(f"{name} contains non-finite values")
    return x


def _sqrt_eigvals(mat: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric PSD matrix, clipped at zero, square-rooted."""
    sym = (mat + mat.T) / 2.0
    eigvals, eigvecs = np.linalg.eigh(sym)
    if eigvals.min() < -1e-6:
        warnings.warn(f"covariance square root clipped eigenvalue {eigvals.min():.3e} to 0")
    return np.sqrt(np.clip(eigvals, 0.0, None)), eigvecs


def fid(a: np.ndarray, b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    a = _check_feature_set(a, "a")
    b = _check_feature_set(b, "b")
    if a.shape[1] != b.shape[1]:
        raise FeatureSetError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    # sqrt(cov_a) via eigendecomposition, then sqrt of the symmetrized product
    sq, vecs = _sqrt_eigvals(cov_a)
    root_a = (vecs * sq) @ vecs.T
    prod = root_a @ cov_b @ root_a
    tr_sqrt = _sqrt_eigvals(prod)[0].sum()
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return value


def ids_scores(real: np.ndarray, fake: np.ndarray, paired: bool = True) -> tuple[float, float]:
    """Linear separability scores (unpaired error rate, paired win rate).

    Fits a linear max-margin classifier on real-vs-fake embeddings. U-IDS is
    its training misclassification rate; P-IDS is the fraction of pairs
    where the fake scores more real than its paired real (ties count 1/2).
    """
    real = _check_feature_set(real, "real")
    fake = _check_feature_set(fake, "fake")
    if paired and real.shape[0] != fake.shape[0]:
        raise FeatureSetError("paired mode needs equal counts")
    stacked = np.concatenate([real, fake])
    if np.allclose(stacked.std(axis=0), 0.0):
        raise FeatureSetError("degenerate features: zero variance everywhere")
    labels = np.concatenate([np.ones(real.shape[0]), np.zeros(fake.shape[0])])
    scaler = StandardScaler().fit(stacked)
    xs = scaler.transform(stacked)
    svm = LinearSVC(dual=False, C=1.0, max_iter=10000)
    svm.fit(xs, labels)
    u_ids = float(np.mean(svm.predict(xs) != labels))
    p_ids = float("nan")
    if paired:
        scores_real = svm.decision_function(scaler.transform(real))
        scores_fake = svm.decision_function(scaler.transform(fake))
        wins = (scores_fake > scores_real).astype(np.float64)
        wins += 0.5 * (scores_fake == scores_real)
        p_ids = float(wins.mean())
    return u_ids, p_ids


def diversity_lpips(pipeline, images: torch.Tensor, masks: torch.Tensor, seed: int = 0) -> float:
    """Mean perceptual distance between two independent completions per input."""
    z1 = pipeline.sample_z(images.shape[0], seed=seed)
    z2 = pipeline.sample_z(images.shape[0], seed=seed + 1)
    first = pipeline.complete(images, masks, z=z1).final
    second = pipeline.complete(images, masks, z=z2).final
    return float(perceptual_distance(first, second, pipeline.phi))


@dataclass
class BandReport:
    band: str
    fid: float
    lpips_diversity: float
    n: int


@dataclass
class MetricsReport:
    fid: float = float("nan")
    lpips_diversity: float = float("nan")
    u_ids: float = float("nan")
    p_ids: float = float("nan")
    n_real: int = 0
    n_fake: int = 0
    config_hash: str = ""
    bands: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["# latentfill metrics report"]
        for key in ("fid", "lpips_diversity", "u_ids", "p_ids"):
            lines.append(f"{key} = {getattr(self, key):.8g}")
        lines.append(f"n_real = {self.n_real}")
        lines.append(f"n_fake = {self.n_fake}")
        lines.append(f"config_hash = {self.config_hash}")
        for label, sub in self.bands.items():
            lines.append("")
            lines.append(f"[band {label}]")
            lines.append(f"fid = {sub.fid:.8g}")
            lines.append(f"lpips_diversity = {sub.lpips_diversity:.8g}")
            lines.append(f"n = {sub.n}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        report = cls()
        section = None
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[band ") and line.endswith("]"):
                section = line[len("[band ") : -1]
                report.bands[section] = BandReport(section, float("nan"), float("nan"), 0)
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if section is None:
                if key in ("n_real", "n_fake"):
                    setattr(report, key, int(raw))
                elif key == "config_hash":
                    report.config_hash = raw
                else:
                    setattr(report, key, float(raw))
            else:
                sub = report.bands[section]
                if key == "n":
                    sub.n = int(raw)
                else:
                    setattr(sub, key, float(raw))
        return report


def extractor_hash(classifier: AttributeClassifier) -> str:
    h = hashlib.sha256()
    for name, t in sorted(classifier.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def evaluate_pipeline(
    pipeline,
    eval_images: torch.Tensor,
    bands: list[MaskBand] | None = None,
    seed: int = 0,
    masks: torch.Tensor | None = None,
) -> MetricsReport:
    """Headline metrics over held-out images (plus optional per-band sweeps)."""
    n = eval_images.shape[0]
    if masks is None:
        rng = np.random.default_rng(seed)
        masks = torch.stack(
            [
                sample_mask(MaskBand(0.0, 1.0), pipeline.model_cfg.resolution, int(s))
                for s in rng.integers(0, 2**63 - 1, size=n)
            ]
        )
    completions = pipeline.complete(eval_images, masks, z=pipeline.sample_z(n, seed=seed + 1)).final
    real_feats = extract_features(pipeline.phi, eval_images)
    fake_feats = extract_features(pipeline.phi, completions)
    u_ids, p_ids = ids_scores(real_feats, fake_feats, paired=True)
    report = MetricsReport(
        fid=fid(real_feats, fake_feats),
        lpips_diversity=diversity_lpips(pipeline, eval_images, masks, seed=seed + 2),
        u_ids=u_ids,
        p_ids=p_ids,
        n_real=n,
        n_fake=n,
        config_hash=extractor_hash(pipeline.phi),
    )
    if bands:
        sweep = difficulty_sweep(pipeline, bands, n, eval_images, seed=seed + 3)
        report.bands = sweep.bands
    return report


def difficulty_sweep(
    pipeline,
    bands: list[MaskBand],
    n_per_band: int,
    eval_images: torch.Tensor,
    seed: int = 0,
) -> MetricsReport:
    """Per-band FID and diversity over held-out inputs."""
    if eval_images.shape[0] < n_per_band:
        raise FeatureSetError(f"need {n_per_band} held-out images, got {eval_images.shape[0]}")
    d = AttributeClassifier.feature_dim
    if n_per_band < d + 1:
        raise FeatureSetError(f"n_per_band={n_per_band} below the covariance constraint d+1={d + 1}")
    images = eval_images[:n_per_band]
    real_feats = extract_features(pipeline.phi, images)
    report = MetricsReport(n_real=n_per_band, n_fake=n_per_band, config_hash=extractor_hash(pipeline.phi))
    rng = np.random.default_rng(seed)
    for band_idx, band in enumerate(bands):
        masks = torch.stack(
            [
                sample_mask(band, pipeline.model_cfg.resolution, int(s))
                for s in rng.integers(0, 2**63 - 1, size=n_per_band)
            ]
        )
        completions = pipeline.complete(images, masks, z=pipeline.sample_z(n_per_band, seed=seed + band_idx)).final
        fake_feats = extract_features(pipeline.phi, completions)
        report.bands[band.label] = BandReport(
            band=band.label,
            fid=fid(real_feats, fake_feats),
            lpips_diversity=diversity_lpips(pipeline, images, masks, seed=seed + 100 + band_idx),
            n=n_per_band,
        )
    return report
