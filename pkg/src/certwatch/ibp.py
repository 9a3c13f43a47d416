"""Interval bound propagation, worst-case losses, certification and the IBP curriculum."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import tensor as T
from .model import LOGIT_CLAMP, DetectorModel, check_frames
from .tensor import Tensor

if TYPE_CHECKING:
    from .confidence import GateConfig

MODES = ("two_sided", "one_sided")


@dataclass
class IntervalTensor:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape:
            raise ValueError(f"bound shapes differ: {self.lower.shape} vs {self.upper.shape}")

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    @property
    def radius(self) -> np.ndarray:
        return (self.upper - self.lower) / 2

    def contains(self, values: np.ndarray, slack: float = 0.0) -> np.ndarray:
        return (values >= self.lower - slack) & (values <= self.upper + slack)


@dataclass
class IntervalOutput:
    logits: IntervalTensor  # [N, 2]
    local_logits: IntervalTensor  # [N, H', W'] before the logsig
    features: IntervalTensor  # [N, 16] after the reduction layer

    @property
    def local_map(self) -> IntervalTensor:
        return IntervalTensor(T._stable_sigmoid(self.local_logits.lower), T._stable_sigmoid(self.local_logits.upper))


@dataclass(frozen=True)
class IBPConfig:
    eps: float = 0.025
    mode: str = "one_sided"
    ibp_weight: float = 0.5

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.ibp_weight <= 1:
            raise ValueError(f"ibp_weight must lie in [0, 1], got {self.ibp_weight}")


# propagation ----------------------------------------------------------------


def _affine(lo: Tensor, hi: Tensor, fn, fn_abs) -> tuple[Tensor, Tensor]:
    mu = (lo + hi) * 0.5
    r = (hi - lo) * 0.5
    mu2, r2 = fn(mu), fn_abs(r)
    return mu2 - r2, mu2 + r2


def _conv_bounds(model: DetectorModel, name: str, lo, hi, stride: int, pad: int):
    w, b = model.params[f"{name}.weight"], model.params[f"{name}.bias"]
    return _affine(lo, hi, lambda z: T.conv2d(z, w, b, stride, pad), lambda z: T.conv2d(z, T.tabs(w), None, stride, pad))


def _linear_bounds(lo, hi, w, b):
    return _affine(lo, hi, lambda z: T.linear(z, w, b), lambda z: T.linear(z, T.tabs(w)))


def interval_graph(model: DetectorModel, lower, upper) -> tuple[Tensor, ...]:
    """Differentiable bounds ``(logit_lo, logit_hi, local_lo, local_hi, feat_lo, feat_hi)``.

    Dropout never applies here.  Bounds are for the pre-logsig local map.
    """
    from .model import CONV_LAYERS

    lo, hi = T.as_tensor(lower), T.as_tensor(upper)
    slope = model.config.leaky_slope
    for i, (_, _, stride, pad) in enumerate(CONV_LAYERS, start=1):
        lo, hi = _conv_bounds(model, f"conv{i}", lo, hi, stride, pad)
        lo, hi = T.leaky_relu(lo, slope), T.leaky_relu(hi, slope)
    if model.config.reduction == "fc":
        n = lo.shape[0]
        flo, fhi = _linear_bounds(
            T.reshape(lo, (n, -1)), T.reshape(hi, (n, -1)), model.params["reduce.weight"], model.params["reduce.bias"]
        )
    else:
        flo = T.pool2d(lo, model.config.reduction, global_pool=True)
        fhi = T.pool2d(hi, model.config.reduction, global_pool=True)
    llo, lhi = _linear_bounds(flo, fhi, model.params["head.weight"], model.params["head.bias"])
    mlo, mhi = _conv_bounds(model, "local", lo, hi, 1, 0)
    n, _, h, w = mlo.shape
    return llo, lhi, T.reshape(mlo, (n, h, w)), T.reshape(mhi, (n, h, w)), flo, fhi


def input_interval(frames: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    return np.clip(frames - eps, 0.0, 1.0), np.clip(frames + eps, 0.0, 1.0)


def interval_forward(model: DetectorModel, frames, eps: float, dtype=np.float64, batch_size: int = 32) -> IntervalOutput:
    """Bounds on logits and local map for every input within ``eps`` (L-inf) of ``frames``.

    Evaluated in float64 by default so the bounds also cover float32
    rounding of the ordinary forward pass.
    """
    frames = check_frames(frames)
    single = frames.ndim == 3
    batch = (frames[None] if single else frames).astype(dtype)
    lo_in, hi_in = input_interval(batch, eps)
    parts = []
    with T.no_grad():
        for i in range(0, len(batch), batch_size):
            parts.append([t.data for t in interval_graph(model, lo_in[i : i + batch_size], hi_in[i : i + batch_size])])
    cat = [np.concatenate([p[k] for p in parts]) for k in range(6)]
    if single:
        cat = [c[0] for c in cat]
    return IntervalOutput(IntervalTensor(cat[0], cat[1]), IntervalTensor(cat[2], cat[3]), IntervalTensor(cat[4], cat[5]))


# worst case -------------------------------------------------------------------


def worst_case_logits(interval: IntervalTensor, true_class, mode: str = "two_sided") -> np.ndarray:
    """True class at its lower bound, other class at its upper bound.

    In ``one_sided`` mode only cheat frames (class 1) are pushed to the worst
    case; clean frames get the interval centre.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    lo, hi = np.atleast_2d(interval.lower), np.atleast_2d(interval.upper)
    y = np.atleast_1d(np.asarray(true_class))
    onehot = np.eye(2, dtype=bool)[y]
    worst = np.where(onehot, lo, hi)
    if mode == "one_sided":
        worst = np.where((y == 1)[:, None], worst, (lo + hi) / 2)
    return worst[0] if np.ndim(interval.lower) == 1 else worst


def worst_case_graph(clean_logits: Tensor, clean_local: Tensor, bounds, y: np.ndarray, mode: str):
    """Differentiable worst-case logits and pre-logsig local map for training.

    Cheat cells take the lower local bound and clean cells the upper one.
    In one-sided mode clean frames keep their clean outputs, so only cheat
    frames contribute a worst-case term.
    """
    llo, lhi, mlo, mhi = bounds[:4]
    onehot = np.eye(2, dtype=bool)[y]
    cheat = (y == 1)
    worst_logits = T.where(onehot, llo, lhi)
    worst_local = T.where(cheat[:, None, None], mlo, mhi)
    if mode == "one_sided":
        worst_logits = T.where(cheat[:, None], worst_logits, clean_logits)
        worst_local = T.where(cheat[:, None, None], worst_local, clean_local)
    return worst_logits, worst_local


def ibp_training_loss(clean_loss, worst_loss, ibp_weight: float):
    if not 0 <= ibp_weight <= 1:
        raise ValueError(f"ibp_weight must lie in [0, 1], got {ibp_weight}")
    return clean_loss * (1.0 - ibp_weight) + worst_loss * ibp_weight


# certification ---------------------------------------------------------------------


def certify(model: DetectorModel, frames, eps: float, gate: "GateConfig | None" = None) -> np.ndarray:
    """Boolean per frame: no input within ``eps`` can make it non-cheat.

    Without a gate this checks the worst-case logits of the deterministic
    head.  With a gate it additionally requires every one of the gate's
    dropout passes to stay on the cheat class and (evidential heads) the
    uncertainty to stay below ``u_max``, so a certified frame remains a
    confident detection under any such perturbation.
    """
    from .confidence import dropout_masks

    bounds = interval_forward(model, frames, eps)
    lo, hi = np.atleast_2d(bounds.logits.lower), np.atleast_2d(bounds.logits.upper)
    ok = lo[:, 1] > hi[:, 0]
    if gate is None or not gate.enabled:
        return ok
    if gate.dropout_p > 0 and gate.T > 0:
        masks = dropout_masks(gate.T, gate.dropout_p, gate.rng_seed).astype(np.float64)
        w = model.params["head.weight"].data.astype(np.float64)
        b = model.params["head.bias"].data.astype(np.float64)
        f = bounds.features
        flo, fhi = np.atleast_2d(f.lower), np.atleast_2d(f.upper)
        mu = (flo + fhi) / 2
        r = (fhi - flo) / 2
        for m in masks:
            c = (mu * m) @ w + b
            rad = (r * m) @ np.abs(w)
            ok &= (c[:, 1] - rad[:, 1]) > (c[:, 0] + rad[:, 0])
    if model.config.head_mode == "evidential":
        min_evidence = np.exp(np.clip(lo, -LOGIT_CLAMP, LOGIT_CLAMP)).sum(axis=1)
        ok &= min_evidence > 2.0 / gate.u_max - 2.0
    return ok


def certified_fraction(model: DetectorModel, cheat_frames, eps: float, gate: "GateConfig | None" = None) -> float:
    frames = check_frames(cheat_frames)
    if frames.ndim == 3:
        frames = frames[None]
    if len(frames) == 0:
        raise ValueError("certified_fraction needs at least one cheat frame")
    return float(certify(model, frames, eps, gate).mean())


# curriculum -------------------------------------------------------------------------


@dataclass(frozen=True)
class CurriculumState:
    epoch: int
    kl_weight: float
    ibp_weight: float
    eps: float
    lr: float


def _ramp(x: float, x0: float, x1: float, y0: float, y1: float) -> float:
    if x <= x0:
        return y0
    if x >= x1:
        return y1
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def schedule(
    epoch: int,
    total_epochs: int = 1000,
    eps_max: float = 0.025,
    ibp_weight_max: float = 0.5,
    base_lr: float = 1e-4,
    eps_min: float = 1e-8,
    lr_decay_epoch: float | None = 150,
    lr_decay: float = 0.1,
) -> CurriculumState:
    """Curriculum for uncertainty-loss + IBP training.

    Milestones are defined on a 1000-epoch run and scale linearly with
    ``total_epochs``: KL weight 0 -> 1 over [0, 150]; IBP weight 0 -> 0.5
    over [200, 300]; eps held at 1e-8 until 250 then ramped to ``eps_max``
    by 500; constant afterwards.  The learning rate drops by ``lr_decay``
    for the 100 epochs following ``lr_decay_epoch`` and is back at
    ``base_lr`` for the eps ramp.
    """
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    s = total_epochs / 1000.0
    e = float(epoch)
    lr = base_lr
    if lr_decay_epoch is not None and lr_decay_epoch * s <= e < (lr_decay_epoch + 100) * s:
        lr = base_lr * lr_decay
    return CurriculumState(
        epoch=epoch,
        kl_weight=min(e / (150 * s), 1.0),
        ibp_weight=_ramp(e, 200 * s, 300 * s, 0.0, ibp_weight_max),
        eps=_ramp(e, 250 * s, 500 * s, eps_min, eps_max),
        lr=lr,
    )
