"""Parameter-space attacks and repeated-trial evaluation.

All attacks return a perturbed copy; the input model is never modified.
"""

from dataclasses import dataclass, field

import numpy as np

from .metrics import psnr, ssim, summarize
from .models import CoordGrid, render
from .rng import make_rng

ATTACK_KINDS = ("param_noise", "lose_neurons", "corrupt_layer")


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    value: float = 0
    trials: int = 10
    seed: int = 0
    mode: str = "incoming"

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"kind must be one of {ATTACK_KINDS}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.value < 0:
            raise ValueError("attack magnitude must be non-negative")
        if self.kind != "param_noise" and int(self.value) != self.value:
            raise ValueError(f"{self.kind} needs an integer value")

    @property
    def label(self):
        if self.kind == "param_noise":
            return f"noise@{self.value:g}"
        if self.kind == "lose_neurons":
            return f"L@{int(self.value)}"
        return f"corrupt@L{int(self.value)}"


def hidden_neurons(model):
    """``(layer_index, unit)`` for every unit of L1 .. Ln."""
    return [(i, u) for i in range(1, model.output_index) for u in range(model.layers[i].out_dim)]


def add_param_noise(model, sigma, rng):
    """Add N(0, sigma^2) to every weight and bias; the encoding matrix is left alone."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    out = model.copy()
    if sigma == 0:
        return out
    for layer in out.layers:
        layer.weight += rng.normal(0.0, sigma, size=layer.weight.shape).astype(layer.weight.dtype)
        layer.bias += rng.normal(0.0, sigma, size=layer.bias.shape).astype(layer.bias.dtype)
    return out


def lose_neurons(model, k, rng, mode="incoming"):
    """Silence ``k`` distinct hidden units drawn uniformly from all hidden layers.

    ``mode="incoming"`` zeroes the unit's weight row and bias, so it emits
    ``activation(0)``; ``"outgoing"`` zeroes its column in the next layer;
    ``"both"`` does both.
    """
    pool = hidden_neurons(model)
    if not 0 <= k <= len(pool):
        raise ValueError(f"k={k} outside [0, {len(pool)}] hidden neurons")
    if mode not in ("incoming", "outgoing", "both"):
        raise ValueError(f"unknown mode {mode!r}")
    out = model.copy()
    if k == 0:
        return out
    for j in rng.choice(len(pool), size=k, replace=False):
        i, u = pool[j]
        if mode in ("incoming", "both"):
            out.layers[i].weight[u, :] = 0
            out.layers[i].bias[u] = 0
        if mode in ("outgoing", "both"):
            out.layers[i + 1].weight[:, u] = 0
    return out


def corrupt_layer(model, index):
    """Zero every weight and bias of one layer, as if its chunk were lost and zero-filled."""
    if not 0 <= index < len(model):
        raise ValueError(f"layer index {index} out of range")
    out = model.copy()
    out.layers[index].weight[...] = 0
    out.layers[index].bias[...] = 0
    return out


def apply_attack(model, attack, rng):
    if attack.kind == "param_noise":
        return add_param_noise(model, attack.value, rng)
    if attack.kind == "lose_neurons":
        return lose_neurons(model, int(attack.value), rng, attack.mode)
    return corrupt_layer(model, int(attack.value))


@dataclass
class AttackResult:
    attack: AttackSpec
    base_psnr: float
    base_ssim: float
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    @property
    def mean_psnr(self):
        return summarize(self.psnr).mean

    @property
    def mean_ssim(self):
        return summarize(self.ssim).mean

    @property
    def psnr_drop(self):
        return self.base_psnr - self.mean_psnr

    def to_dict(self):
        return {
            "attack": self.attack.label,
            "trials": self.attack.trials,
            "seed": self.attack.seed,
            "base_psnr": self.base_psnr,
            "base_ssim": self.base_ssim,
            "psnr": list(self.psnr),
            "ssim": list(self.ssim),
            "mean_psnr": self.mean_psnr,
            "std_psnr": summarize(self.psnr).std,
            "mean_ssim": self.mean_ssim,
        }


def _quality(model, grid, image, with_ssim):
    img = np.clip(render(model, grid), 0, 1)
    s = ssim(img, image) if with_ssim else float("nan")
    return psnr(img, image), s


def run_trials(model, image, attack, with_ssim=True):
    """Apply ``attack`` ``attack.trials`` times, each from its own rng substream."""
    image = np.asarray(image)
    grid = CoordGrid(*image.shape[:2])
    with_ssim = with_ssim and min(image.shape[:2]) >= 11
    base = _quality(model, grid, image, with_ssim)
    result = AttackResult(attack, *base)
    for t in range(attack.trials):
        rng = make_rng(attack.seed, "attack", t)
        p, s = _quality(apply_attack(model, attack, rng), grid, image, with_ssim)
        result.psnr.append(p)
        result.ssim.append(s)
    return result
