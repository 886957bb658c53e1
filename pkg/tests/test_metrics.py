import math

import numpy as np
import pytest

from inrstream.metrics import (
    TrialReport,
    aggregate,
    compression_factor,
    gaussian_window,
    psnr,
    raw_image_bytes,
    ssim,
    summarize,
)


def brute_ssim(a, b, data_range=1.0):
    """Window-by-window SSIM straight from the definition."""
    g = gaussian_window()
    w = np.outer(g, g)
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    h, wd, ch = a.shape
    for c in range(ch):
        for i in range(h - 10):
            for j in range(wd - 10):
                pa, pb = a[i:i + 11, j:j + 11, c], b[i:i + 11, j:j + 11, c]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_identical_is_inf():
    img = np.random.default_rng(0).uniform(size=(4, 4, 3))
    assert psnr(img, img) == math.inf


def test_psnr_uniform_error():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
    assert psnr(a, a + 0.01) == pytest.approx(40.0)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2, 3)), np.zeros((2, 2)))


def test_ssim_identical_is_one():
    img = np.random.default_rng(0).uniform(size=(16, 20, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_images():
    a = np.full((12, 12, 3), 0.4)
    assert ssim(a, a.copy()) == pytest.approx(1.0)


def test_ssim_matches_brute_force():
    rng = np.random.default_rng(1)
    a = rng.uniform(size=(15, 14, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert ssim(a, b) == pytest.approx(brute_ssim(a, b), abs=1e-10)


def test_ssim_matches_skimage():
    metrics = pytest.importorskip("skimage.metrics")
    rng = np.random.default_rng(2)
    a = rng.uniform(size=(32, 24, 3))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    ref = metrics.structural_similarity(
        a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0, channel_axis=-1
    )
    assert ssim(a, b) == pytest.approx(ref, abs=1e-6)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 12, 3)), np.zeros((10, 12, 3)))


def test_compression_factor_examples():
    assert compression_factor(1000, 500) == 2.0
    assert compression_factor(raw_image_bytes(512, 512), 267_276) == pytest.approx(2.94, abs=0.005)
    with pytest.raises(ValueError):
        compression_factor(1000, 0)


def test_aggregate_two_runs():
    reports = [TrialReport("siren", 0, 100, 30.0), TrialReport("siren", 1, 100, 32.0)]
    agg = aggregate(reports)
    assert agg["psnr"].mean == 31.0
    assert agg["psnr"].std == 1.0
    assert str(agg["psnr"]) == "31.00 ± 1.00"


def test_aggregate_single_run_has_zero_std():
    agg = aggregate([TrialReport("spinr", 0, 100, 28.0)])
    assert agg["psnr"].std == 0.0 and agg["psnr"].n == 1


def test_aggregate_sample_std_option():
    reports = [TrialReport("siren", s, 100, p) for s, p in enumerate([30.0, 32.0])]
    assert aggregate(reports, ddof=1)["psnr"].std == pytest.approx(math.sqrt(2))


def test_aggregate_excludes_infinite_psnr():
    reports = [TrialReport("siren", 0, 100, math.inf), TrialReport("siren", 1, 100, 30.0)]
    s = aggregate(reports)["psnr"]
    assert s.mean == 30.0 and s.excluded == 1


def test_aggregate_attacks_and_mixed_methods():
    reports = [
        TrialReport("siren", 0, 100, 30.0, attacks={"L@5": 20.0}),
        TrialReport("siren", 1, 100, 31.0, attacks={"L@5": 22.0}),
    ]
    assert aggregate(reports)["attack:L@5"].mean == 21.0
    with pytest.raises(ValueError):
        aggregate(reports + [TrialReport("spinr", 0, 100, 30.0)])
    with pytest.raises(ValueError):
        aggregate([])


def test_trial_report_validation():
    with pytest.raises(ValueError):
        TrialReport("siren", 0, 100, -1.0)
    with pytest.raises(ValueError):
        TrialReport("siren", 0, 100, 30.0, ssim=1.5)
    assert TrialReport("siren", 0, 100, math.inf).to_dict()["psnr"] == "inf"


def test_summarize_all_infinite():
    s = summarize([math.inf, math.inf])
    assert s.n == 0 and s.excluded == 2 and math.isnan(s.mean)
