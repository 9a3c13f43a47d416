"""White-box evasion attacks on cheat frames and their effect on confident detections.

Every attack pushes a cheat frame towards the clean class by ascending the
cross-entropy of the cheat label on the global logits.  The local head is
never attacked directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .confidence import GateConfig, assess
from .container import read_container, write_container
from .model import DetectorModel, check_frames
from .rng import make_rng
from .tensor import Tensor

KINDS = ("fgsm", "pgd", "universal")
EPS_MAX = 0.1
OVERSHOOT = 1.02
BUDGET_SLACK = 1e-6


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    eps: float
    steps: int = 10
    step_size: float | None = None  # defaults to eps / 4
    rng_seed: int = 0
    random_start: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}; expected one of {KINDS}")
        if not 0 <= self.eps <= EPS_MAX:
            raise AttackError(f"eps must lie in [0, {EPS_MAX}], got {self.eps}")
        if self.steps < 1:
            raise AttackError(f"steps must be at least 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0:
            raise AttackError(f"step_size must be positive, got {self.step_size}")

    @property
    def effective_step_size(self) -> float:
        return self.eps / 4 if self.step_size is None else self.step_size


def _batch(frames) -> tuple[np.ndarray, bool]:
    frames = check_frames(frames)
    single = frames.ndim == 3
    return (frames[None] if single else frames).astype(np.float32), single


def evasion_gradient(model: DetectorModel, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame cheat-label cross-entropy and its input gradient."""
    x = Tensor(frames, requires_grad=True)
    with model.frozen():
        logits, _ = model.logits_and_local(x, training=False)
        per_frame = -T.log_softmax(logits, axis=1)[:, 1]
        per_frame.sum().backward()
    return per_frame.data, x.grad


def evasion_loss(model: DetectorModel, frames) -> np.ndarray:
    batch, _ = _batch(frames)
    logits = model.predict(batch).logits.astype(np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    return -(z[:, 1] - np.log(np.exp(z).sum(axis=1)))


def fgsm(model: DetectorModel, frame, eps: float) -> np.ndarray:
    if eps < 0:
        raise AttackError(f"eps must be non-negative, got {eps}")
    x, single = _batch(frame)
    if eps == 0:
        out = x.copy()
    else:
        _, g = evasion_gradient(model, x)
        out = np.clip(x + np.float32(eps) * np.sign(g), 0.0, 1.0)
    return out[0] if single else out


def _project(x: np.ndarray, origin: np.ndarray, eps: float) -> np.ndarray:
    e = np.float32(eps)
    return np.clip(np.clip(x, origin - e, origin + e), 0.0, 1.0)


def pgd_madry(model: DetectorModel, frame, eps: float, steps: int = 10, step_size: float | None = None,
              rng_seed: int = 0, random_start: bool = True) -> np.ndarray:
    """Projected signed-gradient ascent from a uniform random start in the eps-ball."""
    if eps < 0:
        raise AttackError(f"eps must be non-negative, got {eps}")
    if steps < 1:
        raise AttackError(f"steps must be at least 1, got {steps}")
    origin, single = _batch(frame)
    if eps == 0:
        return origin[0].copy() if single else origin.copy()
    step_size = eps / 4 if step_size is None else step_size
    if step_size <= 0:
        raise AttackError(f"step_size must be positive, got {step_size}")
    x = origin.copy()
    if random_start:
        noise = make_rng(rng_seed, "pgd-start").uniform(-eps, eps, size=origin.shape).astype(np.float32)
        x = _project(x + noise, origin, eps)
    for _ in range(steps):
        _, g = evasion_gradient(model, x)
        x = _project(x + np.float32(step_size) * np.sign(g), origin, eps)
    return x[0] if single else x


# universal perturbation ----------------------------------------------------


@dataclass
class UniversalPerturbation:
    delta: np.ndarray  # [3, H, W]
    eps: float
    construction_flip_rate: float

    def apply(self, frames) -> np.ndarray:
        batch, single = _batch(frames)
        if batch.shape[1:] != self.delta.shape:
            raise AttackError(f"perturbation shape {self.delta.shape} does not match frames {batch.shape[1:]}")
        out = np.clip(batch + self.delta, 0.0, 1.0)
        return out[0] if single else out

    def flip_rate(self, model: DetectorModel, frames) -> float:
        """Fraction of ``frames`` not predicted cheat once perturbed."""
        out = model.predict(self.apply(frames))
        return float(np.mean(out.logits[:, 1] <= out.logits[:, 0]))

    def save(self, path) -> None:
        write_container(
            path,
            {"kind": "universal_perturbation", "eps": self.eps, "construction_flip_rate": self.construction_flip_rate},
            {"delta": self.delta.astype(np.float32)},
        )

    @classmethod
    def load(cls, path) -> "UniversalPerturbation":
        meta, tensors = read_container(path)
        if meta.get("kind") != "universal_perturbation" or "delta" not in tensors:
            raise AttackError(f"{path}: not a universal perturbation file")
        return cls(tensors["delta"], float(meta["eps"]), float(meta["construction_flip_rate"]))


def _margin_and_grad(model: DetectorModel, frame: np.ndarray) -> tuple[float, np.ndarray]:
    x = Tensor(frame[None], requires_grad=True)
    with model.frozen():
        logits, _ = model.logits_and_local(x, training=False)
        margin = logits[:, 1] - logits[:, 0]
        margin.sum().backward()
    return float(margin.data[0]), x.grad[0]


def build_universal(model: DetectorModel, training_cheat_frames, eps: float, passes: int = 5,
                    rng_seed: int = 0, overshoot: float = OVERSHOOT) -> UniversalPerturbation:
    """One delta for all frames, accumulated from binary DeepFool steps.

    Each pass visits the frames in a fresh shuffled order; frames still
    detected under the current delta contribute a minimal margin-flipping
    step, after which delta is clipped back to the eps-ball.
    """
    if eps < 0:
        raise AttackError(f"eps must be non-negative, got {eps}")
    frames, _ = _batch(training_cheat_frames)
    if len(frames) == 0:
        raise AttackError("build_universal needs at least one cheat frame")
    delta = np.zeros(frames.shape[1:], dtype=np.float32)
    if eps > 0:
        rng = make_rng(rng_seed, "universal-order")
        for _ in range(passes):
            for i in rng.permutation(len(frames)):
                x = np.clip(frames[i] + delta, 0.0, 1.0)
                f, g = _margin_and_grad(model, x)
                if f <= 0:
                    continue
                norm2 = float(np.sum(g.astype(np.float64) ** 2))
                if norm2 == 0:
                    continue
                step = -(overshoot * f / norm2) * g
                delta = np.clip(delta + step.astype(np.float32), -eps, eps).astype(np.float32)
    pert = UniversalPerturbation(delta, float(eps), 0.0)
    pert.construction_flip_rate = pert.flip_rate(model, frames)
    return pert


# evaluation ---------------------------------------------------------------------


def run_attack(model: DetectorModel, frames, spec: AttackSpec, universal: UniversalPerturbation | None = None,
               batch_size: int = 32) -> np.ndarray:
    batch, single = _batch(frames)
    if spec.kind == "universal":
        if universal is None:
            raise AttackError("a universal attack needs a precomputed perturbation")
        if universal.eps > spec.eps + BUDGET_SLACK:
            raise AttackError(f"perturbation built for eps={universal.eps} exceeds the budget {spec.eps}")
        out = universal.apply(batch)
    else:
        parts = []
        for i in range(0, len(batch), batch_size):
            chunk = batch[i : i + batch_size]
            if spec.kind == "fgsm":
                parts.append(fgsm(model, chunk, spec.eps))
            else:
                seed = make_rng(spec.rng_seed, "pgd-chunk", i).integers(2**63)
                parts.append(pgd_madry(model, chunk, spec.eps, spec.steps, spec.effective_step_size,
                                       int(seed), spec.random_start))
        out = np.concatenate(parts)
    check_budget(batch, out, spec.eps)
    return out[0] if single else out


def check_budget(original: np.ndarray, adversarial: np.ndarray, eps: float) -> None:
    worst = float(np.max(np.abs(adversarial.astype(np.float64) - original))) if original.size else 0.0
    if worst > eps + BUDGET_SLACK:
        raise AttackError(f"attack exceeded its budget: max change {worst:.3g} > eps {eps}")
    if adversarial.size and (adversarial.min() < 0 or adversarial.max() > 1):
        raise AttackError("attack produced pixels outside [0, 1]")


@dataclass
class AttackResult:
    kind: str
    eps: float
    n_frames: int
    tp: int
    tp_attack: int
    ratio: float | None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def evaluate_attack(model: DetectorModel, cheat_test_frames, spec: AttackSpec, gate: GateConfig | None = None,
                    universal: UniversalPerturbation | None = None) -> AttackResult:
    """TP_attack / TP over ground-truth cheat frames.

    TP counts confident positives on the clean frames, TP_attack confident
    positives on attacked versions of the same frames.  The ratio is
    ``None`` when TP is zero and is not clamped.
    """
    frames, _ = _batch(cheat_test_frames)
    if len(frames) == 0:
        raise AttackError("no cheat frames to attack")
    gate = gate or GateConfig(dropout_p=model.config.dropout_p)
    tp = int(assess(model, frames, gate).confident_positive.sum())
    attacked = run_attack(model, frames, spec, universal)
    tp_attack = int(assess(model, attacked, gate).confident_positive.sum())
    return AttackResult(spec.kind, spec.eps, len(frames), tp, tp_attack, tp_attack / tp if tp else None)
