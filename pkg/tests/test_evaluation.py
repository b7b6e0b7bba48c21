import numpy as np
import pytest
import torch

from latentfill.evaluation import (
    BandReport,
    FeatureSetError,
    MetricsReport,
    extract_features,
    fid,
    ids_scores,
)
from latentfill.objectives import AttributeClassifier


def test_fid_identical_sets_zero():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 8))
    assert abs(fid(x, x)) < 1e-6


def test_fid_1d_gaussian_mean_shift():
    # closed form: (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2 = 1
    rng = np.random.default_rng(42)
    a = rng.normal(0.0, 1.0, size=(50000, 1))
    b = rng.normal(1.0, 1.0, size=(50000, 1))
    assert abs(fid(a, b) - 1.0) < 1e-2


def test_fid_1d_gaussian_scale():
    rng = np.random.default_rng(43)
    a = rng.normal(0.0, 1.0, size=(50000, 1))
    b = rng.normal(0.0, 2.0, size=(50000, 1))
    assert abs(fid(a, b) - 1.0) < 1e-2


def test_fid_symmetry_and_translation_invariance():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(300, 6))
    b = rng.normal(size=(300, 6)) @ np.diag([1, 2, 1, 0.5, 1, 3]) + 0.3
    assert abs(fid(a, b) - fid(b, a)) < 1e-8
    shift = rng.normal(size=6) * 5
    assert abs(fid(a + shift, b + shift) - fid(a, b)) < 1e-8


def test_fid_nonnegative():
    rng = np.random.default_rng(7)
    for _ in range(5):
        a = rng.normal(size=(120, 4))
        b = rng.normal(size=(120, 4)) * rng.uniform(0.5, 2)
        assert fid(a, b) >= -1e-9


def test_fid_rejects_small_sets():
    rng = np.random.default_rng(2)
    with pytest.raises(FeatureSetError):
        fid(rng.normal(size=(8, 8)), rng.normal(size=(100, 8)))


def test_ids_duplicated_sets_half():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(400, 16))
    u, p = ids_scores(x, x.copy(), paired=True)
    assert 0.45 <= u <= 0.5
    assert abs(p - 0.5) < 1e-12  # exact ties count one half


def test_ids_separable_clusters():
    rng = np.random.default_rng(4)
    real = rng.normal(size=(300, 8)) + 20
    fake = rng.normal(size=(300, 8)) - 20
    u, p = ids_scores(real, fake, paired=True)
    assert u == 0.0
    assert p == 0.0


def test_ids_label_swap_symmetric():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(200, 8))
    b = rng.normal(size=(200, 8)) + 0.5
    u_ab, _ = ids_scores(a, b)
    u_ba, _ = ids_scores(b, a)
    assert abs(u_ab - u_ba) < 0.02


def test_ids_bounds():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(150, 8))
    b = rng.normal(size=(150, 8)) + 1.0
    u, p = ids_scores(a, b)
    assert 0.0 <= u <= 0.5 + 1e-9
    assert 0.0 <= p <= 1.0


def test_ids_rejects_degenerate_and_unequal_paired():
    zeros = np.zeros((100, 4))
    with pytest.raises(FeatureSetError):
        ids_scores(zeros, zeros, paired=False)
    rng = np.random.default_rng(8)
    with pytest.raises(FeatureSetError):
        ids_scores(rng.normal(size=(100, 4)), rng.normal(size=(90, 4)), paired=True)


def test_extract_features_shape():
    torch.manual_seed(0)
    clf = AttributeClassifier(16).eval()
    feats = extract_features(clf, torch.rand(70, 3, 16, 16) * 2 - 1, batch=32)
    assert feats.shape == (70, 64)
    assert np.isfinite(feats).all()


def test_metrics_report_roundtrip():
    report = MetricsReport(
        fid=12.5, lpips_diversity=0.031, u_ids=0.21, p_ids=0.05, n_real=500, n_fake=500, config_hash="abc"
    )
    report.bands["0,0.4"] = BandReport("0,0.4", 8.25, 0.02, 500)
    report.bands["0.4,1"] = BandReport("0.4,1", 19.5, 0.05, 500)
    back = MetricsReport.from_text(report.to_text())
    assert back.fid == pytest.approx(report.fid)
    assert back.u_ids == pytest.approx(report.u_ids)
    assert back.config_hash == "abc"
    assert set(back.bands) == {"0,0.4", "0.4,1"}
    assert back.bands["0.4,1"].fid == pytest.approx(19.5)
    assert back.bands["0.4,1"].n == 500
