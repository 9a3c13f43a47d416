"""Log-gamma, digamma and trigamma for positive real arguments.

``lgamma`` uses the Lanczos approximation (g = 7, nine coefficients) and
``digamma`` its analytic derivative; both fall back to the reflection
formula below 0.5.  ``trigamma`` uses upward recurrence followed by the
asymptotic series.  All evaluate in float64.
"""

from __future__ import annotations

import numpy as np

_G = 7.0
_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)


def _lanczos_parts(x: np.ndarray):
    z = x - 1.0
    k = np.arange(1, len(_COEF))
    denom = z[..., None] + k
    a = _COEF[0] + (_COEF[1:] / denom).sum(axis=-1)
    da = -(_COEF[1:] / denom**2).sum(axis=-1)
    t = z + _G + 0.5
    return z, a, da, t


def lgamma(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    reflect = x < 0.5
    xr = np.where(reflect, 1.0 - x, x)
    z, a, _, t = _lanczos_parts(xr)
    val = _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(a)
    if np.any(reflect):
        val = np.where(reflect, np.log(np.pi / np.abs(np.sin(np.pi * x))) - val, val)
    return val


def digamma(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    reflect = x < 0.5
    xr = np.where(reflect, 1.0 - x, x)
    z, a, da, t = _lanczos_parts(xr)
    val = np.log(t) + (z + 0.5) / t - 1.0 + da / a
    if np.any(reflect):
        val = np.where(reflect, val - np.pi / np.tan(np.pi * x), val)
    return val


def trigamma(x) -> np.ndarray:
    x = np.array(x, dtype=np.float64, copy=True)
    if np.any(x <= 0):
        raise ValueError("trigamma is only implemented for positive arguments")
    acc = np.zeros_like(x)
    while True:
        small = x < 6.0
        if not np.any(small):
            break
        acc = acc + np.where(small, 1.0 / x**2, 0.0)
        x = np.where(small, x + 1.0, x)
    inv = 1.0 / x
    inv2 = inv * inv
    series = inv + 0.5 * inv2 + inv * inv2 * (1 / 6 - inv2 * (1 / 30 - inv2 * (1 / 42 - inv2 / 30)))
    return acc + series
