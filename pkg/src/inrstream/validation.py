"""Input checks shared by the estimator and the CLI."""

import numpy as np
from sklearn.utils.validation import check_array


def check_coords(X, dtype=np.float64):
    """2-D coordinates as an ``(n, 2)`` float array."""
    X = check_array(X, dtype=dtype, ensure_2d=True)
    if X.shape[1] != 2:
        raise ValueError(f"expected (n_samples, 2) coordinates, got {X.shape}")
    return X


def check_rgb(y, n_samples=None, dtype=np.float64):
    y = check_array(y, dtype=dtype, ensure_2d=True)
    if y.shape[1] != 3:
        raise ValueError(f"expected (n_samples, 3) RGB targets, got {y.shape}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(f"{y.shape[0]} targets for {n_samples} coordinates")
    return y


def check_image(image, min_size=1):
    """An ``(H, W, 3)`` finite float array."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if min(image.shape[:2]) < min_size:
        raise ValueError(f"image {image.shape[:2]} smaller than {min_size} pixels")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    return image
