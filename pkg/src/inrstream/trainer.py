"""Full-batch fitting of coordinate networks to a single image.

Two procedures are provided:

* :func:`fit` trains every layer jointly for ``total_steps`` Adam steps.
* :func:`fit_spinr` trains layer by layer. Stage 1 fits the shortest
  network ``L_out . L0``; stage ``s > 1`` freezes everything, trains only
  the hidden layer ``L_{s-1}`` placed between the already trained prefix and
  the output layer, then keeps it in the forward path for later stages.
  Every intermediate network is therefore a usable decoder on its own.
"""

from dataclasses import dataclass, field

import numpy as np

from .metrics import psnr
from .models import CoordGrid, build_model, render
from .nn import AdamState, ParamSet, TrainingDiverged, adam_step, backward, encode_input, layer_forward

DEFAULT_LR = {"siren": 1e-4, "fourier": 1e-3}


@dataclass
class TrainConfig:
    total_steps: int = 2000
    lr: float = None
    seed: int = 0
    dtype: str = "float32"
    eval_every: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.lr is not None and not self.lr > 0:
            raise ValueError("lr must be positive")

    def learning_rate(self, family):
        return DEFAULT_LR[family] if self.lr is None else self.lr

    def adam(self, params, family):
        return AdamState.for_params(
            params, lr=self.learning_rate(family), beta1=self.beta1, beta2=self.beta2, eps=self.eps
        )


@dataclass(frozen=True)
class StageSchedule:
    """Per-stage trainable layer and step budget for staged training.

    ``budgets[s-1]`` steps are spent in stage ``s``. Stage 1 trains
    ``{L0, L_out}``; stage ``s > 1`` trains ``{L_{s-1}}``.
    """

    hidden_layers: int
    budgets: tuple

    def __post_init__(self):
        if len(self.budgets) != self.hidden_layers + 1:
            raise ValueError(
                f"need {self.hidden_layers + 1} stage budgets, got {len(self.budgets)}"
            )
        if any(b < 0 for b in self.budgets):
            raise ValueError("stage budgets must be non-negative")

    @classmethod
    def even(cls, hidden_layers, total_steps):
        """Split ``total_steps`` equally; the remainder goes to the last stage."""
        n_stages = hidden_layers + 1
        per = total_steps // n_stages
        budgets = [per] * n_stages
        budgets[-1] += total_steps - per * n_stages
        return cls(hidden_layers, tuple(budgets))

    @property
    def n_stages(self):
        return self.hidden_layers + 1

    @property
    def total_steps(self):
        return sum(self.budgets)

    def trainable(self, stage):
        out = self.hidden_layers + 1
        return (0, out) if stage == 1 else (stage - 1,)

    def active(self, stage):
        """Forward path after ``stage``: the prefix ``L0 .. L_{stage-1}`` plus the output layer."""
        return tuple(range(stage)) + (self.hidden_layers + 1,)


@dataclass
class FitResult:
    params: ParamSet
    loss_curve: np.ndarray
    psnr_curve: list = field(default_factory=list)


@dataclass
class SpinrResult(FitResult):
    schedule: StageSchedule = None
    stage_renders: list = field(default_factory=list)
    stage_psnr: list = field(default_factory=list)


def l2_loss(pred, target):
    """Summed squared error over pixels and channels, with its gradient."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    resid = pred - target
    return float(np.sum(resid * resid)), 2 * resid


def _check_target(image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    return image


def _run_steps(model, x, y, trainable, state, steps, curve, offset=0, monitor=None):
    for k in range(steps):
        loss, grads = backward(model, x, y, trainable=trainable)
        if not np.isfinite(loss):
            raise TrainingDiverged("non-finite loss", step=offset + k)
        curve.append(loss)
        adam_step(model, grads, state, trainable)
        if monitor is not None:
            monitor(offset + k + 1)


def _start_model(spec, config, init):
    dtype = np.dtype(config.dtype)
    return init.astype(dtype) if init is not None else build_model(spec, config.seed, dtype)


def fit_points(spec, x, y, config=None, init=None, monitor=None):
    """Joint training on arbitrary coordinate/target pairs.

    ``monitor(step, model)`` is called after every update when given.
    """
    config = config or TrainConfig()
    model = _start_model(spec, config, init)
    y = np.asarray(y, dtype=model.dtype)
    curve = []
    hook = None if monitor is None else (lambda step: monitor(step, model))
    state = config.adam(model, spec.family)
    _run_steps(model, x, y, None, state, config.total_steps, curve, monitor=hook)
    return model, np.asarray(curve)


def fit(spec, image, config=None, init=None):
    """Train all layers (the Fourier matrix excepted) for ``config.total_steps``."""
    config = config or TrainConfig()
    image = _check_target(image)
    grid = CoordGrid(*image.shape[:2])
    psnrs = []

    def monitor(step, model):
        if step % config.eval_every == 0:
            psnrs.append((step, psnr(np.clip(render(model, grid), 0, 1), image)))

    model, curve = fit_points(spec, grid.coords, image.reshape(-1, 3), config, init,
                              monitor if config.eval_every else None)
    return FitResult(model, curve, psnrs)


def _prefix_features(model, x, upto):
    """Encoded input pushed through ``L0 .. L_{upto-1}``."""
    a = encode_input(model, x)
    for i in range(upto):
        a = layer_forward(model.layers[i], a)
    return a


def fit_spinr_points(spec, x, y, config=None, schedule=None, init=None, on_stage=None):
    """Staged training on coordinate/target pairs.

    Frozen prefix activations are computed once per stage, so stage ``s``
    only evaluates ``L_{s-1}`` and the output layer per step. The
    optimizer state is rebuilt at each stage boundary. ``on_stage(stage,
    model)`` runs after each stage.
    """
    config = config or TrainConfig()
    schedule = schedule or StageSchedule.even(spec.hidden_layers, config.total_steps)
    if schedule.hidden_layers != spec.hidden_layers:
        raise ValueError("schedule does not match the model depth")
    model = _start_model(spec, config, init)
    y = np.asarray(y, dtype=model.dtype)
    out = model.output_index
    curve = []
    for stage, budget in enumerate(schedule.budgets, start=1):
        if stage == 1:
            sub = ParamSet([model.layers[0], model.layers[out]], model.encoding)
            feats = x
            trainable = (0, 1)
        else:
            sub = ParamSet([model.layers[stage - 1], model.layers[out]])
            feats = _prefix_features(model, x, stage - 1)
            trainable = (0,)
        state = config.adam(sub, spec.family)
        _run_steps(sub, feats, y, trainable, state, budget, curve, offset=len(curve))
        if on_stage is not None:
            on_stage(stage, model)
    return model, np.asarray(curve), schedule


def fit_spinr(spec, image, config=None, schedule=None, init=None):
    """Staged training on an image; also returns the render after each stage."""
    image = _check_target(image)
    grid = CoordGrid(*image.shape[:2])
    renders, psnrs = [], []

    def on_stage(stage, model):
        img = render(model, grid, sched.active(stage))
        renders.append(img)
        psnrs.append(psnr(np.clip(img, 0, 1), image))

    config = config or TrainConfig()
    sched = schedule or StageSchedule.even(spec.hidden_layers, config.total_steps)
    model, curve, sched = fit_spinr_points(spec, grid.coords, image.reshape(-1, 3), config,
                                           sched, init, on_stage)
    return SpinrResult(model, curve, schedule=sched, stage_renders=renders, stage_psnr=psnrs)
