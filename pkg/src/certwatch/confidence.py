"""Variation ratio, evidential uncertainty, confident gating and LR drift checks."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import LOGIT_CLAMP, DetectorModel, check_frames, evidential_terms
from .tensor import dropout_mask

DEFAULT_T = 64
DEFAULT_U_MAX = 0.5
DRIFT_THRESHOLD = 0.5
FIELD_WINDOW = 500


@dataclass
class ConfidenceReport:
    vr: float
    T: int
    f_x: int
    c_star: int
    u: float | None = None
    belief: tuple[float, float] | None = None
    predicted: int | None = None

    def __post_init__(self):
        if not 0 <= self.f_x <= self.T:
            raise ValueError(f"modal count {self.f_x} outside [0, {self.T}]")


def dropout_masks(T: int, dropout_p: float, rng_seed: int, width: int = 16) -> np.ndarray:
    """The ``T`` inverted-dropout masks used by the Monte-Carlo passes.

    They depend only on ``(T, dropout_p, rng_seed)``, so every frame sees the
    same masks and the passes can be reproduced by the certifier.
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    return dropout_mask((T, width), dropout_p, rng_seed, "mc-dropout")


def mc_cheat_votes(model: DetectorModel, frames, T: int = DEFAULT_T, dropout_p: float | None = None,
                   rng_seed: int = 0, batch_size: int = 32) -> np.ndarray:
    """Number of the ``T`` dropout passes predicting cheat, per frame.

    The convolutional trunk is deterministic, so it runs once per frame and
    only the masked head is repeated.
    """
    p = model.config.dropout_p if dropout_p is None else dropout_p
    frames = check_frames(frames)
    if frames.ndim == 3:
        frames = frames[None]
    masks = dropout_masks(T, p, rng_seed)
    feats = model.features(frames, batch_size=batch_size)
    w = model.params["head.weight"].data
    b = model.params["head.bias"].data
    logits = (feats[None, :, :] * masks[:, None, :]) @ w + b  # [T, N, 2]
    return (logits[..., 1] > logits[..., 0]).sum(axis=0)


def _vr_from_votes(votes: np.ndarray, T: int):
    votes = np.asarray(votes)
    f_x = np.maximum(votes, T - votes)
    c_star = (votes > T - votes).astype(int)
    return 1.0 - f_x / T, f_x, c_star


def variation_ratio(model: DetectorModel, frame, T: int = DEFAULT_T, dropout_p: float | None = None,
                    rng_seed: int = 0) -> tuple[float, int, int]:
    """``(vr, f_x, c_star)`` over ``T`` stochastic passes of one frame.

    Ties go to the clean class.
    """
    if T < 1:
        raise ValueError(f"T must be at least 1, got {T}")
    votes = mc_cheat_votes(model, frame, T, dropout_p, rng_seed)
    vr, f_x, c_star = _vr_from_votes(votes, T)
    return float(vr[0]), int(f_x[0]), int(c_star[0])


def evidence_belief_uncertainty(logits):
    """``(e, alpha, b, u)`` from two-class logits (clamped to +-15)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise ValueError("non-finite logits")
    return evidential_terms(logits)


def likelihood_ratio(alpha) -> np.ndarray | float:
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 1):
        raise ValueError("Dirichlet parameters must be at least 1")
    out = alpha.max(axis=-1) / alpha.min(axis=-1)
    return float(out) if out.ndim == 0 else out


def confident_gate(report: ConfidenceReport, u_max: float = DEFAULT_U_MAX) -> bool:
    if report.vr != 0:
        return False
    return report.u is None or report.u < u_max


@dataclass(frozen=True)
class GateConfig:
    T: int = DEFAULT_T
    dropout_p: float = 0.15
    rng_seed: int = 0
    u_max: float = DEFAULT_U_MAX
    enabled: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be at least 1, got {self.T}")
        if not 0 < self.u_max <= 1:
            raise ValueError(f"u_max must lie in (0, 1], got {self.u_max}")


@dataclass
class Assessment:
    """Batched gate inputs and outcome."""

    logits: np.ndarray
    predicted: np.ndarray
    vr: np.ndarray
    f_x: np.ndarray
    c_star: np.ndarray
    u: np.ndarray | None
    belief: np.ndarray | None
    confident: np.ndarray
    T: int

    @property
    def confident_positive(self) -> np.ndarray:
        return self.confident & (self.predicted == 1)

    def report(self, i: int) -> ConfidenceReport:
        return ConfidenceReport(
            vr=float(self.vr[i]),
            T=self.T,
            f_x=int(self.f_x[i]),
            c_star=int(self.c_star[i]),
            u=None if self.u is None else float(self.u[i]),
            belief=None if self.belief is None else (float(self.belief[i, 0]), float(self.belief[i, 1])),
            predicted=int(self.predicted[i]),
        )


def assess(model: DetectorModel, frames, gate: GateConfig | None = None, batch_size: int = 32) -> Assessment:
    """Deterministic prediction plus the confidence gate for every frame.

    With ``gate.enabled`` false every frame counts as confident.
    """
    gate = gate or GateConfig(dropout_p=model.config.dropout_p)
    frames = check_frames(frames)
    if frames.ndim == 3:
        frames = frames[None]
    logits = model.predict(frames, batch_size=batch_size).logits
    predicted = (logits[:, 1] > logits[:, 0]).astype(int)
    u = belief = None
    if model.config.head_mode == "evidential":
        _, _, belief, u = evidential_terms(logits)
    if gate.enabled:
        votes = mc_cheat_votes(model, frames, gate.T, gate.dropout_p, gate.rng_seed, batch_size)
        vr, f_x, c_star = _vr_from_votes(votes, gate.T)
        confident = vr == 0
        if u is not None:
            confident &= u < gate.u_max
    else:
        n = len(frames)
        vr, f_x, c_star = np.zeros(n), np.full(n, gate.T), predicted.copy()
        confident = np.ones(n, dtype=bool)
    return Assessment(logits, predicted, vr, f_x, c_star, u, belief, confident, gate.T)


# likelihood-ratio drift ---------------------------------------------------------


@dataclass
class LRBaselines:
    lr_total: float
    lr_pos: float | None
    lr_neg: float | None
    n_pos: int
    n_neg: int
    source: str

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def baselines_from_logits(logits, source: str) -> LRBaselines:
    """Mean LR over all, predicted-positive and predicted-negative frames."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if len(logits) == 0:
        raise ValueError("no frames to compute likelihood-ratio baselines from")
    alpha = 1.0 + np.exp(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP))
    lr = likelihood_ratio(alpha)
    lr = np.atleast_1d(lr)
    pos = logits[:, 1] > logits[:, 0]
    return LRBaselines(
        lr_total=float(lr.mean()),
        lr_pos=float(lr[pos].mean()) if pos.any() else None,
        lr_neg=float(lr[~pos].mean()) if (~pos).any() else None,
        n_pos=int(pos.sum()),
        n_neg=int((~pos).sum()),
        source=source,
    )


def compute_lr_baselines(model: DetectorModel, frames, source_tag: str) -> LRBaselines:
    frames = check_frames(frames)
    if frames.ndim == 3:
        frames = frames[None]
    if len(frames) == 0:
        raise ValueError("no frames to compute likelihood-ratio baselines from")
    return baselines_from_logits(model.predict(frames).logits, source_tag)


RATIO_DIRECTIONS = ("field_over_train", "train_over_field")


@dataclass
class DriftVerdict:
    ratio_total: float
    ratio_pos: float | None
    ratio_neg: float | None
    threshold: float
    retrain: bool
    direction: str = "field_over_train"

    @property
    def min_ratio(self) -> float:
        return min(r for r in (self.ratio_total, self.ratio_pos, self.ratio_neg) if r is not None)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def drift_check(train: LRBaselines, field: LRBaselines, threshold: float = DRIFT_THRESHOLD,
                direction: str = "field_over_train") -> DriftVerdict:
    """Compare field LR baselines with training ones.

    By default each ratio is field / train, so a ratio below ``threshold``
    means the field LR has lost at least that share of its training value;
    retrain when the smallest available ratio is below ``threshold``.
    ``direction="train_over_field"`` inverts every ratio (same decision rule).
    """
    if direction not in RATIO_DIRECTIONS:
        raise ValueError(f"direction must be one of {RATIO_DIRECTIONS}, got {direction!r}")
    if field.n_pos + field.n_neg == 0:
        raise ValueError("field baselines cover zero frames")

    def ratio(t, f):
        if t is None or f is None:
            return None
        return f / t if direction == "field_over_train" else t / f

    ratios = (
        ratio(train.lr_total, field.lr_total),
        ratio(train.lr_pos, field.lr_pos),
        ratio(train.lr_neg, field.lr_neg),
    )
    available = [r for r in ratios if r is not None]
    return DriftVerdict(*ratios, threshold=threshold, retrain=bool(min(available) < threshold), direction=direction)


def retrain_from_ratios(ratios, threshold: float = DRIFT_THRESHOLD) -> bool:
    available = [r for r in ratios if r is not None]
    if not available:
        raise ValueError("no ratios available")
    return bool(min(available) < threshold)


class FieldMonitor:
    """Keeps the logits of the most recent ``window`` field frames."""

    def __init__(self, train: LRBaselines, window: int = FIELD_WINDOW, threshold: float = DRIFT_THRESHOLD,
                 direction: str = "field_over_train"):
        if window < 1:
            raise ValueError("window must be positive")
        self.train = train
        self.threshold = threshold
        self.direction = direction
        self._logits: deque[np.ndarray] = deque(maxlen=window)

    def __len__(self) -> int:
        return len(self._logits)

    def observe(self, logits) -> None:
        for row in np.atleast_2d(np.asarray(logits, dtype=np.float64)):
            self._logits.append(row)

    def field_baselines(self) -> LRBaselines:
        return baselines_from_logits(np.array(self._logits), "field")

    def verdict(self) -> DriftVerdict:
        return drift_check(self.train, self.field_baselines(), self.threshold, self.direction)
