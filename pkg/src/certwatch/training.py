"""Mini-batch training for every supported loss / IBP combination."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import ibp
from . import losses as L
from . import tensor as T
from .model import DetectorModel
from .optim import Adam
from .rng import derive_seed, make_rng

LOSSES = ("ce_global", "ce_combined", "mse_combined", "ul_combined")
IBP_MODES = ("none", "one_sided", "two_sided")


class TrainingError(RuntimeError):
    pass


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce_combined"
    ibp: str = "none"
    epochs: int = 60
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    eps: float = 0.025  # final IBP radius
    ibp_weight: float = 0.5  # final IBP weight
    lr_decay: float = 0.1
    lr_decay_at: float = 0.6  # fraction of epochs, runs without IBP
    lr_decay_epoch: float | None = 150  # curriculum runs, on the 1000-epoch scale
    kl_ramp: float = 150  # epochs on the 1000-epoch scale

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise UsageError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.ibp not in IBP_MODES:
            raise UsageError(f"unknown ibp mode {self.ibp!r}; expected one of {IBP_MODES}")
        if self.ibp != "none" and self.loss not in ("mse_combined", "ul_combined"):
            raise UsageError(f"IBP is only supported with mse_combined or ul_combined, not {self.loss}")
        if self.epochs < 1 or self.batch_size < 1:
            raise UsageError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise UsageError("lr must be positive")
        if not 0 <= self.eps <= 0.1:
            raise UsageError(f"eps must lie in [0, 0.1], got {self.eps}")
        if not 0 <= self.ibp_weight <= 1:
            raise UsageError(f"ibp_weight must lie in [0, 1], got {self.ibp_weight}")

    @property
    def head_mode(self) -> str:
        return "evidential" if self.loss == "ul_combined" else "softmax"

    def state(self, epoch: int) -> ibp.CurriculumState:
        """Per-epoch weights, radius and learning rate."""
        s = self.epochs / 1000.0
        if self.ibp != "none":
            st = ibp.schedule(epoch, self.epochs, self.eps, self.ibp_weight, self.lr,
                              lr_decay_epoch=self.lr_decay_epoch, lr_decay=self.lr_decay)
            return ibp.CurriculumState(epoch, min(epoch / (self.kl_ramp * s), 1.0), st.ibp_weight, st.eps, st.lr)
        lr = self.lr * (self.lr_decay if epoch >= self.lr_decay_at * self.epochs else 1.0)
        return ibp.CurriculumState(epoch, min(epoch / (self.kl_ramp * s), 1.0), 0.0, 0.0, lr)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    global_: float
    local: float
    kl_term: float
    worst: float | None
    lr: float
    eps: float
    ibp_weight: float
    kl_weight: float


@dataclass
class TrainHistory:
    config: TrainConfig
    epochs: list[EpochRecord] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"config": asdict(self.config), "epochs": [asdict(e) for e in self.epochs]}


def objective(loss: str, logits, local_pre, y: np.ndarray, kl_weight: float):
    """Loss tensor for a batch: ``(combined, global, local, kl_term)``."""
    local_map = T.sigmoid(local_pre)
    if loss == "ul_combined":
        g, kl = L.evidential_loss(logits, y, kl_weight)
        l = L.mse_local(local_map, y)
        return L.ul_combined(g, l), g, l, kl
    probs = T.softmax(logits, axis=1)
    if loss == "mse_combined":
        g, l, c = L.mse_losses(probs, local_map, y)
        return c, g, l, None
    g = L.ce_global(probs[:, 1], y)
    if loss == "ce_global":
        return g, g, None, None
    l = L.ce_local(local_map, y)
    return L.ce_combined(g, l), g, l, None


def batch_loss(model: DetectorModel, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
               state: ibp.CurriculumState, dropout_seed: int):
    logits, local_pre = model.logits_and_local(T.Tensor(x), training=True, rng_seed=dropout_seed)
    clean, g, l, kl = objective(cfg.loss, logits, local_pre, y, state.kl_weight)
    parts = {
        "global_": float(g.data),
        "local": float(l.data) if l is not None else 0.0,
        "kl_term": float(kl.data) if kl is not None else 0.0,
        "worst": None,
    }
    if cfg.ibp == "none" or state.ibp_weight == 0:
        return clean, parts
    lo, hi = ibp.input_interval(x, state.eps)
    bounds = ibp.interval_graph(model, lo, hi)
    # one-sided clean rows reuse the dropout-free forward so both terms see the same network
    ref_logits, ref_local = model.logits_and_local(T.Tensor(x), training=False)
    wl, wm = ibp.worst_case_graph(ref_logits, ref_local, bounds, y, cfg.ibp)
    worst, *_ = objective(cfg.loss, wl, wm, y, state.kl_weight)
    parts["worst"] = float(worst.data)
    return ibp.ibp_training_loss(clean, worst, state.ibp_weight), parts


def train(model: DetectorModel, frames: np.ndarray, labels: np.ndarray, cfg: TrainConfig,
          log: Callable[[EpochRecord], None] | None = None) -> TrainHistory:
    """Train ``model`` in place with Adam; returns per-epoch mean losses.

    Aborts with :class:`TrainingError` on a non-finite loss.
    """
    if model.config.head_mode != cfg.head_mode:
        raise UsageError(f"{cfg.loss} needs a {cfg.head_mode} head, model has {model.config.head_mode}")
    frames = np.asarray(frames, dtype=np.float32)
    labels = np.asarray(labels).astype(int)
    if len(frames) != len(labels) or len(frames) == 0:
        raise UsageError(f"{len(frames)} frames for {len(labels)} labels")
    opt = Adam(model.parameters(), lr=cfg.lr)
    order_rng = make_rng(cfg.seed, "batch-order")
    history = TrainHistory(cfg)
    for epoch in range(cfg.epochs):
        state = cfg.state(epoch)
        opt.lr = state.lr
        order = order_rng.permutation(len(frames))
        sums: dict[str, float] = {"loss": 0.0, "global_": 0.0, "local": 0.0, "kl_term": 0.0, "worst": 0.0}
        n_batches = 0
        has_worst = False
        for b, start in enumerate(range(0, len(frames), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            loss, parts = batch_loss(model, frames[idx], labels[idx], cfg, state,
                                     derive_seed(cfg.seed, "dropout", epoch, b))
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss ({value}) at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss"] += value
            for k in ("global_", "local", "kl_term"):
                sums[k] += parts[k]
            if parts["worst"] is not None:
                sums["worst"] += parts["worst"]
                has_worst = True
            n_batches += 1
        rec = EpochRecord(
            epoch=epoch,
            loss=sums["loss"] / n_batches,
            global_=sums["global_"] / n_batches,
            local=sums["local"] / n_batches,
            kl_term=sums["kl_term"] / n_batches,
            worst=sums["worst"] / n_batches if has_worst else None,
            lr=state.lr,
            eps=state.eps,
            ibp_weight=state.ibp_weight,
            kl_weight=state.kl_weight,
        )
        history.epochs.append(rec)
        if log is not None:
            log(rec)
    return history
