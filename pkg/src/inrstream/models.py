"""SIREN and Fourier-feature coordinate networks.

Layer naming follows the staged-training convention: ``L0`` lifts the
(encoded) coordinate into the hidden width, ``L1 .. Ln`` are the hidden
layers and ``L_{n+1}`` maps back to RGB.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .nn import DenseLayer, ParamSet, forward, fourier_encode
from .rng import make_rng

FAMILIES = ("siren", "fourier")

__all__ = [
    "ModelSpec",
    "CoordGrid",
    "build_model",
    "coord_grid",
    "fourier_encode",
    "render",
    "render_loop",
]


@dataclass(frozen=True)
class ModelSpec:
    family: str = "siren"
    width: int = 128
    hidden_layers: int = 4
    omega0: float = 30.0
    fourier_m: int = 128
    fourier_sigma: float = 10.0
    output_dim: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.width < 1 or self.hidden_layers < 1:
            raise ValueError("width and hidden_layers must be >= 1")
        if self.family == "siren" and not self.omega0 > 0:
            raise ValueError("omega0 must be positive")
        if self.family == "fourier" and (self.fourier_m < 1 or self.fourier_sigma < 0):
            raise ValueError("fourier_m must be >= 1 and fourier_sigma >= 0")

    @property
    def n_layers(self):
        return self.hidden_layers + 2

    @property
    def output_index(self):
        return self.hidden_layers + 1

    @property
    def input_dim(self):
        return 2 * self.fourier_m if self.family == "fourier" else 2

    def layer_shapes(self):
        """``(out_dim, in_dim)`` for L0 .. L_out."""
        h = self.width
        return [(h, self.input_dim)] + [(h, h)] * self.hidden_layers + [(self.output_dim, h)]

    def n_params(self, include_encoding=True):
        n = sum(o * (i + 1) for o, i in self.layer_shapes())
        if include_encoding and self.family == "fourier":
            n += self.fourier_m * 2
        return n

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CoordGrid:
    """Pixel-center coordinates in ``[-1, 1]^2``, row-major, ``(x, y)`` order."""

    height: int
    width: int
    flip_rows: bool = False

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("grid dimensions must be positive")

    @property
    def coords(self):
        return coord_grid(self.height, self.width, self.flip_rows)

    def __len__(self):
        return self.height * self.width


def coord_grid(height, width, flip_rows=False, dtype=np.float64):
    """Return an ``(H*W, 2)`` array; pixel (i, j) maps to
    ``(2(j+0.5)/W - 1, 2(i+0.5)/H - 1)``."""
    ys = 2 * (np.arange(height) + 0.5) / height - 1
    if flip_rows:
        ys = ys[::-1]
    xs = 2 * (np.arange(width) + 0.5) / width - 1
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(dtype)


def build_model(spec, seed, dtype=np.float64):
    """Initialize a ParamSet for ``spec`` from the ``init`` rng stream.

    SIREN: L0 weights ~ U(+-1/in), later weights ~ U(+-sqrt(6/in)/omega0).
    Fourier: B ~ N(0, sigma^2) and left frozen, then fan-in uniform
    U(+-1/sqrt(in)) weights. Biases use U(+-1/sqrt(in)) in both families.
    """
    rng = make_rng(seed, "init")
    encoding = None
    if spec.family == "fourier":
        encoding = rng.normal(0.0, spec.fourier_sigma, size=(spec.fourier_m, 2))

    shapes = spec.layer_shapes()
    layers = []
    for i, (fan_out, fan_in) in enumerate(shapes):
        last = i == len(shapes) - 1
        if spec.family == "siren":
            bound = 1.0 / fan_in if i == 0 else np.sqrt(6.0 / fan_in) / spec.omega0
            act = "identity" if last else "sine"
        else:
            bound = 1.0 / np.sqrt(fan_in)
            act = "identity" if last else "relu"
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-1.0 / np.sqrt(fan_in), 1.0 / np.sqrt(fan_in), size=fan_out)
        layers.append(DenseLayer(w.astype(dtype), b.astype(dtype), act, float(spec.omega0)))
    return ParamSet(layers, None if encoding is None else encoding.astype(dtype))


def render(model, grid, active=None):
    """Evaluate the model on every grid point, returning raw ``(H, W, 3)`` values."""
    out = forward(model, grid.coords, active)
    return out.reshape(grid.height, grid.width, -1)


def render_loop(model, grid, active=None):
    """Pixel-by-pixel reference for :func:`render`; slow, used in tests."""
    coords = grid.coords
    out = np.empty((len(coords), model.layers[-1].out_dim), dtype=model.dtype)
    for p, xy in enumerate(coords):
        out[p] = forward(model, xy, active)
    return out.reshape(grid.height, grid.width, -1)
