"""scikit-learn style wrapper around the trainers.

The estimator treats an image as a regression problem from ``(x, y)``
coordinates in ``[-1, 1]^2`` to RGB values, so it slots into sklearn tooling
(``get_params``, ``clone``, parameter grids) while exposing image helpers.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .metrics import psnr
from .models import CoordGrid, ModelSpec, render
from .nn import forward
from .trainer import StageSchedule, TrainConfig, fit_points, fit_spinr_points
from .validation import check_coords, check_image, check_rgb


class ImplicitImageRegressor(RegressorMixin, BaseEstimator):
    """Fit a SIREN or Fourier-feature network to one signal.

    Parameters
    ----------
    family : {"siren", "fourier"}, default="siren"
    method : {"joint", "staged"}, default="joint"
        ``"joint"`` trains all layers together; ``"staged"`` trains one layer
        at a time so every prefix of the network decodes on its own.
    width, depth : int
        Hidden width and number of hidden layers.
    omega0 : float, default=30.0
        Sine frequency scale (SIREN only).
    fourier_m, fourier_sigma : int, float
        Number and scale of random Fourier frequencies (Fourier only).
    steps : int, default=2000
        Total optimizer steps; staged training splits them across stages.
    lr : float or None
        Adam learning rate; ``None`` picks the per-family default.
    dtype : str, default="float32"
    random_state : int, default=0

    Attributes
    ----------
    spec_ : ModelSpec
    params_ : ParamSet
    loss_curve_ : ndarray of shape (steps,)
    schedule_ : StageSchedule or None
    n_features_in_ : int
    """

    def __init__(self, family="siren", method="joint", width=128, depth=4, omega0=30.0,
                 fourier_m=128, fourier_sigma=10.0, steps=2000, lr=None, dtype="float32",
                 random_state=0):
        self.family = family
        self.method = method
        self.width = width
        self.depth = depth
        self.omega0 = omega0
        self.fourier_m = fourier_m
        self.fourier_sigma = fourier_sigma
        self.steps = steps
        self.lr = lr
        self.dtype = dtype
        self.random_state = random_state

    def _spec(self):
        return ModelSpec(self.family, int(self.width), int(self.depth), float(self.omega0),
                         int(self.fourier_m), float(self.fourier_sigma))

    def _config(self):
        return TrainConfig(total_steps=int(self.steps), lr=self.lr, seed=int(self.random_state),
                           dtype=self.dtype)

    def fit(self, X, y):
        if self.method not in ("joint", "staged"):
            raise ValueError(f"method must be 'joint' or 'staged', got {self.method!r}")
        X = check_coords(X)
        y = check_rgb(y, X.shape[0])
        self.spec_ = self._spec()
        config = self._config()
        if self.method == "staged":
            self.params_, self.loss_curve_, self.schedule_ = fit_spinr_points(self.spec_, X, y, config)
        else:
            self.params_, self.loss_curve_ = fit_points(self.spec_, X, y, config)
            self.schedule_ = None
        self.n_features_in_ = 2
        return self

    def fit_image(self, image):
        """Fit to an ``(H, W, 3)`` image on its pixel-center grid."""
        image = check_image(image)
        grid = CoordGrid(*image.shape[:2])
        return self.fit(grid.coords, image.reshape(-1, 3))

    def predict(self, X, stage=None):
        """Raw RGB predictions; ``stage`` restricts a staged model to its first stages."""
        check_is_fitted(self, "params_")
        X = check_coords(X)
        return forward(self.params_, X, self._active(stage))

    def render(self, height, width, stage=None, clip=True):
        check_is_fitted(self, "params_")
        img = render(self.params_, CoordGrid(height, width), self._active(stage))
        return np.clip(img, 0, 1) if clip else img

    def score(self, X, y, sample_weight=None):
        """PSNR (dB) of clipped predictions against ``y``."""
        y = check_rgb(y)
        return psnr(np.clip(self.predict(X), 0, 1), y)

    def _active(self, stage):
        if stage is None:
            return None
        return StageSchedule.even(self.spec_.hidden_layers, 0).active(stage)

    @property
    def n_params_(self):
        check_is_fitted(self, "params_")
        return self.params_.n_params()
