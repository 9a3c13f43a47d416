"""Training objectives for the two heads.

All functions take :class:`~certwatch.tensor.Tensor` predictions (numpy
arrays are accepted and wrapped) and binary frame labels ``y`` (1 = cheat),
and return scalar tensors so they can be differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .special import digamma, lgamma, trigamma
from .tensor import Tensor

PROB_CLAMP = 1e-7
SMOOTH_CHEAT = 0.9
SMOOTH_CLEAN = 0.1
LOGIT_CLAMP = 15.0


@dataclass
class LossBreakdown:
    global_: float
    local: float
    combined: float
    kl_term: float = 0.0


def _labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y).reshape(-1)
    if y.size == 0:
        raise ValueError("empty batch")
    if not np.isin(y, (0, 1)).all():
        raise ValueError(f"labels must be binary, got {np.unique(y)}")
    if n is not None and y.size != n:
        raise ValueError(f"{y.size} labels for {n} predictions")
    return y


def smoothed_labels(y) -> np.ndarray:
    return np.where(np.asarray(y) == 1, SMOOTH_CHEAT, SMOOTH_CLEAN)


def _bce(p: Tensor, target: np.ndarray) -> Tensor:
    p = T.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    target = target.astype(p.dtype)
    return -(T.log(p) * target + T.log(1.0 - p) * (1.0 - target))


def ce_global(p, y) -> Tensor:
    """Binary cross-entropy of per-frame cheat probabilities."""
    p = T.as_tensor(p)
    y = _labels(y, p.shape[0] if p.ndim else None)
    return _bce(T.reshape(p, (y.size,)), y).mean()


def ce_local(local_maps, y) -> Tensor:
    """Cross-entropy of every local-map cell against the frame's smoothed label."""
    maps = T.as_tensor(local_maps)
    if maps.ndim == 2:
        maps = T.reshape(maps, (1, *maps.shape))
    if maps.data.size == 0 or maps.ndim != 3 or maps.shape[1] * maps.shape[2] == 0:
        raise ValueError(f"local maps must be a non-empty [N,H,W] array, got shape {maps.shape}")
    y = _labels(y, maps.shape[0])
    target = smoothed_labels(y)[:, None, None]
    return _bce(maps, np.broadcast_to(target, maps.shape)).mean()


def ce_combined(global_loss, local_loss):
    return 0.5 * (global_loss + local_loss)


def mse_global(probs, y) -> Tensor:
    """Squared error of two-class probabilities ``[N, 2]`` against one-hot labels."""
    probs = T.as_tensor(probs)
    y = _labels(y, probs.shape[0])
    onehot = np.eye(2, dtype=probs.dtype)[y]
    return ((probs - onehot) ** 2).mean()


def mse_local(local_maps, y) -> Tensor:
    maps = T.as_tensor(local_maps)
    if maps.ndim == 2:
        maps = T.reshape(maps, (1, *maps.shape))
    y = _labels(y, maps.shape[0])
    target = smoothed_labels(y).astype(maps.dtype)[:, None, None]
    return ((maps - target) ** 2).mean()


def mse_losses(probs, local_maps, y) -> tuple[Tensor, Tensor, Tensor]:
    g, l = mse_global(probs, y), mse_local(local_maps, y)
    return g, l, g + l


def dirichlet_kl_uniform(alpha) -> Tensor:
    """KL( Dir(alpha) || Dir(1, ..., 1) ) per row of ``alpha`` ``[N, K]``."""
    alpha = T.as_tensor(alpha)
    a = alpha.data.astype(np.float64)
    k = a.shape[-1]
    s = a.sum(axis=-1)
    kl = (
        lgamma(s)
        - lgamma(float(k))
        - lgamma(a).sum(axis=-1)
        + ((a - 1.0) * (digamma(a) - digamma(s)[..., None])).sum(axis=-1)
    )

    def backward(g):
        da = (a - 1.0) * trigamma(a) - ((s - k) * trigamma(s))[..., None]
        return ((g[..., None] * da).astype(alpha.dtype),)

    return Tensor._result(kl.astype(alpha.dtype), (alpha,), backward)


def evidential_loss(logits, y, kl_weight: float) -> tuple[Tensor, Tensor]:
    """MSE-based Dirichlet uncertainty loss with a KL regulariser.

    Evidence is ``exp`` of the (clamped) logits.  Returns ``(UL_global,
    kl_term)``; the KL term is already included in ``UL_global``.
    """
    logits = T.as_tensor(logits)
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("non-finite logits")
    y = _labels(y, logits.shape[0])
    onehot = np.eye(2, dtype=logits.dtype)[y]
    alpha = T.exp(T.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)) + 1.0
    strength = alpha.sum(axis=1, keepdims=True)
    p = alpha / strength
    err = ((p - onehot) ** 2).sum(axis=1)
    var = (p * (1.0 - p) / (strength + 1.0)).sum(axis=1)
    alpha_tilde = alpha * (1.0 - onehot) + onehot
    kl_term = dirichlet_kl_uniform(alpha_tilde).mean() * float(kl_weight)
    return (err + var).mean() + kl_term, kl_term


def ul_combined(ul_global, mse_local_loss):
    return ul_global + mse_local_loss
