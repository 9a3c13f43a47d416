"""Independent reference computations used by the test suite.

Loop implementations here deliberately share no code with ``certwatch``:
they follow the textbook definitions element by element.
"""

from __future__ import annotations

import numpy as np

from certwatch import tensor as T


def conv2d_loop(x, kernels, bias, stride, padding):
    n, c_in, h, w = x.shape
    c_out, _, k, _ = kernels.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, ho, wo))
    for b in range(n):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if bias is None else float(bias[o])
                    for c in range(c_in):
                        for di in range(k):
                            for dj in range(k):
                                r = i * stride + di - padding
                                s = j * stride + dj - padding
                                if 0 <= r < h and 0 <= s < w:
                                    acc += float(x[b, c, r, s]) * float(kernels[o, c, di, dj])
                    out[b, o, i, j] = acc
    return out


def pool_loop(x, kind, global_pool, size):
    n, c, h, w = x.shape
    reduce = max if kind == "max" else (lambda vals: sum(vals) / len(vals))
    if global_pool:
        out = np.zeros((n, c))
        for b in range(n):
            for ch in range(c):
                out[b, ch] = reduce([float(v) for v in x[b, ch].ravel()])
        return out
    ho, wo = h // size, w // size
    out = np.zeros((n, c, ho, wo))
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    vals = [float(x[b, ch, i * size + di, j * size + dj]) for di in range(size) for dj in range(size)]
                    out[b, ch, i, j] = reduce(vals)
    return out


def linear_loop(x, weight, bias):
    n, d_in = x.shape
    d_out = weight.shape[1]
    out = np.zeros((n, d_out))
    for b in range(n):
        for j in range(d_out):
            acc = 0.0 if bias is None else float(bias[j])
            for i in range(d_in):
                acc += float(x[b, i]) * float(weight[i, j])
            out[b, j] = acc
    return out


def gradcheck(fn, arrays, h: float = 1e-3, seed: int = 0) -> float:
    """Relative error between autograd and central finite differences.

    ``fn`` maps float64 tensors to a scalar tensor.  The error is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`` in the
    Euclidean norm over every coordinate of every input.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [T.Tensor(a, requires_grad=True, dtype=np.float64) for a in arrays]
    out = fn(*tensors)
    out.backward()
    analytic = np.concatenate([(t.grad if t.grad is not None else np.zeros_like(t.data)).ravel() for t in tensors])
    numeric = []
    for idx, a in enumerate(arrays):
        g = np.zeros_like(a)
        for pos in np.ndindex(a.shape):
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[idx][pos] += h
            minus[idx][pos] -= h
            with T.no_grad():
                fp = fn(*[T.Tensor(x, dtype=np.float64) for x in plus]).item()
                fm = fn(*[T.Tensor(x, dtype=np.float64) for x in minus]).item()
            g[pos] = (fp - fm) / (2 * h)
        numeric.append(g.ravel())
    numeric = np.concatenate(numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-8)
    return float(np.linalg.norm(analytic - numeric) / denom)


def away_from_zero(rng, shape, margin: float = 0.05):
    """Normal samples pushed off the origin so kinks sit far from the probe step."""
    z = rng.standard_normal(shape)
    return z + np.sign(z) * margin
