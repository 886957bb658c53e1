"""Fidelity and compression metrics, plus multi-run aggregation."""

import math
from dataclasses import dataclass, field, asdict

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b):
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give ``inf``."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r * r) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x, g):
    # separable correlation over axes 0 and 1, keeping only full windows
    win = np.lib.stride_tricks.sliding_window_view(x, len(g), axis=0)
    x = win @ g
    win = np.lib.stride_tricks.sliding_window_view(x, len(g), axis=1)
    return win @ g


def ssim(a, b, data_range=1.0):
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Statistics use Gaussian-weighted (population) moments; only windows that
    lie entirely inside the image contribute. Multi-channel inputs are
    averaged over channels and then over window positions.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def raw_image_bytes(height, width, channels=3):
    """Size of the 8-bit uncompressed raster."""
    return height * width * channels


def compression_factor(image_bytes, model_bytes):
    if image_bytes <= 0 or model_bytes <= 0:
        raise ValueError("image and model sizes must be positive")
    return image_bytes / model_bytes


@dataclass
class TrialReport:
    method: str
    seed: int
    n_params: int
    psnr: float
    ssim: float = float("nan")
    cf: float = float("nan")
    attacks: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.psnr > 0:
            raise ValueError(f"psnr must be positive, got {self.psnr}")
        if not math.isnan(self.ssim) and not -1.0 <= self.ssim <= 1.0 + 1e-12:
            raise ValueError(f"ssim out of range: {self.ssim}")
        if not math.isnan(self.cf) and not self.cf > 0:
            raise ValueError(f"cf must be positive, got {self.cf}")

    def to_dict(self):
        d = asdict(self)
        # json has no inf literal
        for k in ("psnr", "ssim", "cf"):
            if isinstance(d[k], float) and not math.isfinite(d[k]):
                d[k] = str(d[k])
        return d


@dataclass
class Summary:
    mean: float
    std: float
    n: int
    excluded: int = 0

    def __str__(self):
        return f"{self.mean:.2f} ± {self.std:.2f}"


def summarize(values, ddof=0):
    """Mean and std of the finite entries; infinities are counted, not used."""
    vals = np.asarray(values, dtype=np.float64)
    finite = vals[np.isfinite(vals)]
    excluded = int(vals.size - finite.size)
    if finite.size == 0:
        return Summary(math.nan, math.nan, 0, excluded)
    std = float(np.std(finite, ddof=ddof)) if finite.size > ddof else 0.0
    return Summary(float(np.mean(finite)), std, int(finite.size), excluded)


def aggregate(reports, ddof=0):
    """Per-metric mean and std across runs of one method.

    Uses the population std (``ddof=0``) unless told otherwise. Attack
    entries are aggregated under ``"attack:<name>"`` keys.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty list of reports")
    methods = {r.method for r in reports}
    if len(methods) != 1:
        raise ValueError(f"reports mix methods: {sorted(methods)}")
    out = {
        "psnr": summarize([r.psnr for r in reports], ddof),
        "ssim": summarize([r.ssim for r in reports], ddof),
        "cf": summarize([r.cf for r in reports], ddof),
        "n_params": summarize([r.n_params for r in reports], ddof),
    }
    keys = sorted({k for r in reports for k in r.attacks})
    for k in keys:
        out[f"attack:{k}"] = summarize([r.attacks[k] for r in reports if k in r.attacks], ddof)
    return out
