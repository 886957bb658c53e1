"""Dense network engine: layers, forward pass, reverse-mode gradients, Adam.

Batches are row-major: an input of shape ``(n_samples, in_dim)`` maps to
``(n_samples, out_dim)``. A 1-D input is treated as a single sample.
"""

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("sine", "relu", "identity")


class ContractError(ValueError):
    """Raised when shapes or layer selections do not compose."""


class TrainingDiverged(FloatingPointError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


@dataclass
class DenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    omega0: float = 30.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ContractError(
                f"weight {self.weight.shape} and bias {self.bias.shape} do not agree"
            )
        if self.activation == "sine" and not self.omega0 > 0:
            raise ContractError("sine activation needs omega0 > 0")

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    @property
    def size(self):
        return self.weight.size + self.bias.size

    def copy(self):
        return DenseLayer(self.weight.copy(), self.bias.copy(), self.activation, self.omega0)


@dataclass
class ParamSet:
    """Ordered layers ``L0 .. L_out`` plus an optional frozen encoding matrix."""

    layers: list
    encoding: np.ndarray = None

    def __post_init__(self):
        if not self.layers:
            raise ContractError("a ParamSet needs at least one layer")
        first_in = self.layers[0].in_dim
        if self.encoding is not None and first_in != 2 * self.encoding.shape[0]:
            raise ContractError(
                f"L0 expects {first_in} inputs but the encoding yields {2 * self.encoding.shape[0]}"
            )
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ContractError(f"L{i} out_dim {a.out_dim} != L{i + 1} in_dim {b.in_dim}")

    def __len__(self):
        return len(self.layers)

    @property
    def output_index(self):
        return len(self.layers) - 1

    @property
    def input_dim(self):
        return 2 if self.encoding is not None else self.layers[0].in_dim

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def n_params(self, include_encoding=True):
        n = sum(layer.size for layer in self.layers)
        if include_encoding and self.encoding is not None:
            n += self.encoding.size
        return n

    def copy(self):
        enc = None if self.encoding is None else self.encoding.copy()
        return ParamSet([layer.copy() for layer in self.layers], enc)

    def astype(self, dtype):
        out = self.copy()
        for layer in out.layers:
            layer.weight = layer.weight.astype(dtype)
            layer.bias = layer.bias.astype(dtype)
        if out.encoding is not None:
            out.encoding = out.encoding.astype(dtype)
        return out

    def zeros_like(self):
        return ParamSet(
            [DenseLayer(np.zeros_like(l.weight), np.zeros_like(l.bias), l.activation, l.omega0)
             for l in self.layers],
            None if self.encoding is None else np.zeros_like(self.encoding),
        )

    def flat(self):
        """Concatenate every layer's weights and biases (encoding excluded)."""
        return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in self.layers])

    def equals(self, other):
        """Bit-exact equality, dtype included."""
        if len(self) != len(other):
            return False
        if (self.encoding is None) != (other.encoding is None):
            return False
        if self.encoding is not None and not _same_bits(self.encoding, other.encoding):
            return False
        return all(
            a.activation == b.activation
            and (a.activation != "sine" or a.omega0 == b.omega0)
            and _same_bits(a.weight, b.weight)
            and _same_bits(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


def _same_bits(a, b):
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


def _activate(layer, z):
    if layer.activation == "sine":
        return np.sin(layer.omega0 * z)
    if layer.activation == "relu":
        return np.maximum(z, 0)
    return z


def _activation_grad(layer, z, upstream):
    if layer.activation == "sine":
        return upstream * (layer.omega0 * np.cos(layer.omega0 * z))
    if layer.activation == "relu":
        return upstream * (z > 0)
    return upstream


def layer_forward(layer, x):
    x = np.asarray(x)
    if x.shape[-1] != layer.in_dim:
        raise ContractError(f"input has {x.shape[-1]} features, layer expects {layer.in_dim}")
    return _activate(layer, x @ layer.weight.T + layer.bias)


def fourier_encode(encoding, x):
    """``[sin(2*pi*B x); cos(2*pi*B x)]`` with the sine block first."""
    x = np.asarray(x)
    proj = 2 * np.pi * (x @ encoding.T)
    return np.concatenate([np.sin(proj), np.cos(proj)], axis=-1)


def check_active(model, active):
    """Normalize ``active`` to a sorted tuple and verify it composes.

    ``None`` selects every layer. Otherwise the set must contain L0 and the
    output layer, and each selected layer must accept the previous one's output.
    """
    if active is None:
        return tuple(range(len(model)))
    idx = tuple(sorted(set(int(i) for i in active)))
    if not idx or idx[0] != 0 or idx[-1] != model.output_index:
        raise ContractError(f"active set {idx} must start at L0 and end at L{model.output_index}")
    for a, b in zip(idx, idx[1:]):
        if model.layers[a].out_dim != model.layers[b].in_dim:
            raise ContractError(f"L{a} -> L{b} does not compose")
    return idx


def encode_input(model, x):
    x = np.asarray(x, dtype=model.dtype)
    if x.shape[-1] != model.input_dim:
        raise ContractError(f"input has {x.shape[-1]} features, model expects {model.input_dim}")
    if model.encoding is not None:
        return fourier_encode(model.encoding, x)
    return x


def forward(model, x, active=None):
    """Evaluate the layers in ``active`` (ascending) on ``x``."""
    idx = check_active(model, active)
    a = encode_input(model, x)
    for i in idx:
        a = layer_forward(model.layers[i], a)
    return a


def backward(model, x, y, active=None, trainable=None):
    """Loss and exact gradients of the summed squared error.

    Returns ``(loss, grads)`` where ``grads`` is a ParamSet shaped like
    ``model``. Layers outside ``trainable`` (default: all active layers)
    get zero gradients and backpropagation stops below the lowest
    trainable layer.
    """
    idx = check_active(model, active)
    train = set(idx) if trainable is None else set(trainable)
    if not train <= set(idx):
        raise ContractError(f"trainable layers {sorted(train)} are not all active")
    x = encode_input(model, x)
    y = np.asarray(y, dtype=model.dtype)
    if x.shape[0] == 0:
        raise ContractError("empty batch")

    inputs, pre = [], []
    a = x
    for i in idx:
        layer = model.layers[i]
        inputs.append(a)
        z = a @ layer.weight.T + layer.bias
        pre.append(z)
        a = _activate(layer, z)
    if a.shape != y.shape:
        raise ContractError(f"prediction {a.shape} vs target {y.shape}")

    resid = a - y
    loss = float(np.sum(resid * resid))
    grads = model.zeros_like()
    if not train:
        return loss, grads
    lowest = min(train)
    delta = 2 * resid
    for k in range(len(idx) - 1, -1, -1):
        i = idx[k]
        layer = model.layers[i]
        delta = _activation_grad(layer, pre[k], delta)
        if i in train:
            grads.layers[i].weight = delta.T @ inputs[k]
            grads.layers[i].bias = delta.sum(axis=0)
        if i == lowest:
            break
        delta = delta @ layer.weight
    return loss, grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.layers]
        state.v = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.layers]
        return state


def adam_step(params, grads, state, trainable=None):
    """One bias-corrected Adam update, applied in place.

    Only layers in ``trainable`` (default: all) are touched. Returns
    ``(params, state)`` for chaining.
    """
    layers = range(len(params)) if trainable is None else sorted(trainable)
    for i in layers:
        g = grads.layers[i]
        if not (np.all(np.isfinite(g.weight)) and np.all(np.isfinite(g.bias))):
            raise TrainingDiverged(f"non-finite gradient in L{i}", step=state.t)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for i in layers:
        layer, g = params.layers[i], grads.layers[i]
        for name, k in (("weight", 0), ("bias", 1)):
            gk = getattr(g, name)
            m, v = state.m[i][k], state.v[i][k]
            m *= b1
            m += (1 - b1) * gk
            v *= b2
            v += (1 - b2) * (gk * gk)
            p = getattr(layer, name)
            p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
