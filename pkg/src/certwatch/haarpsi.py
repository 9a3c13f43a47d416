"""Haar wavelet-based perceptual similarity index (HaarPSI) for RGB frames.

Constants and preprocessing follow the published reference implementation:
C = 30, alpha = 4.2, three Haar scales on luminance, YIQ chroma, 2x2 mean
subsampling and MATLAB-style "same" convolution on images scaled to 0..255.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

C = 30.0
ALPHA = 4.2
SCALES = 3


def _conv_same(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # scipy centres even kernels differently from MATLAB; rotating both in and out matches it
    out = signal.convolve2d(np.rot90(data, 2), np.rot90(kernel, 2), mode="same")
    return np.rot90(out, 2)


def _subsample(img: np.ndarray) -> np.ndarray:
    return _conv_same(img, np.full((2, 2), 0.25))[::2, ::2]


def _haar(img: np.ndarray) -> np.ndarray:
    """Coefficients ``[H, W, 2 * SCALES]``: horizontal scales then vertical scales."""
    out = np.zeros((*img.shape, 2 * SCALES))
    for s in range(1, SCALES + 1):
        f = 2.0**-s * np.ones((2**s, 2**s))
        f[: f.shape[0] // 2] *= -1
        out[..., s - 1] = _conv_same(img, f)
        out[..., s - 1 + SCALES] = _conv_same(img, f.T)
    return out


def _sigmoid(x, a):
    return 1.0 / (1.0 + np.exp(-a * x))


def _logit(x, a):
    return np.log(x / (1.0 - x)) / a


def _yiq(img: np.ndarray):
    r, g, b = img
    y = 0.299 * r + 0.587 * g + 0.114 * b
    i = 0.596 * r - 0.274 * g - 0.322 * b
    q = 0.211 * r - 0.523 * g + 0.312 * b
    return y, i, q


def haarpsi_maps(reference: np.ndarray, distorted: np.ndarray, subsample: bool = True,
                 c: float = C, alpha: float = ALPHA):
    """Local similarity and weight maps, each ``[H', W', 3]``."""
    reference = np.asarray(reference, dtype=np.float64)
    distorted = np.asarray(distorted, dtype=np.float64)
    if reference.shape != distorted.shape:
        raise ValueError(f"image shapes differ: {reference.shape} vs {distorted.shape}")
    if reference.ndim != 3 or reference.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] images, got {reference.shape}")
    ref = _yiq(reference * 255.0)
    dis = _yiq(distorted * 255.0)
    if subsample:
        ref = tuple(_subsample(ch) for ch in ref)
        dis = tuple(_subsample(ch) for ch in dis)
    cr, cd = _haar(ref[0]), _haar(dis[0])
    box = np.full((2, 2), 0.25)

    sims = np.zeros((*ref[0].shape, 3))
    weights = np.zeros_like(sims)
    for o in range(2):
        top = 2 + o * SCALES
        weights[..., o] = np.maximum(np.abs(cr[..., top]), np.abs(cd[..., top]))
        mr = np.abs(cr[..., [o * SCALES, 1 + o * SCALES]])
        md = np.abs(cd[..., [o * SCALES, 1 + o * SCALES]])
        sims[..., o] = ((2 * mr * md + c) / (mr**2 + md**2 + c)).sum(axis=-1) / 2
    chroma = []
    for k in (1, 2):
        a, b = np.abs(_conv_same(ref[k], box)), np.abs(_conv_same(dis[k], box))
        chroma.append((2 * a * b + c) / (a**2 + b**2 + c))
    sims[..., 2] = (chroma[0] + chroma[1]) / 2
    weights[..., 2] = (weights[..., 0] + weights[..., 1]) / 2
    return sims, weights


def haarpsi(reference: np.ndarray, distorted: np.ndarray, subsample: bool = True,
            c: float = C, alpha: float = ALPHA) -> float:
    """Similarity score in [0, 1] between two ``[3, H, W]`` images with values in [0, 1]."""
    reference = np.asarray(reference, dtype=np.float64)
    distorted = np.asarray(distorted, dtype=np.float64)
    if reference.shape != distorted.shape:
        raise ValueError(f"image shapes differ: {reference.shape} vs {distorted.shape}")
    if np.array_equal(reference, distorted):
        return 1.0
    sims, weights = haarpsi_maps(reference, distorted, subsample, c, alpha)
    total = weights.sum()
    if total == 0:  # flat images: fall back to an unweighted mean
        weights, total = np.ones_like(weights), weights.size
    pooled = (_sigmoid(sims, alpha) * weights).sum() / total
    score = _logit(pooled, alpha) ** 2
    return float(np.clip(score, 0.0, 1.0))


def mean_haarpsi(references: np.ndarray, distorted: np.ndarray) -> float:
    if len(references) != len(distorted) or len(references) == 0:
        raise ValueError("need matching, non-empty image batches")
    return float(np.mean([haarpsi(r, d) for r, d in zip(references, distorted)]))
