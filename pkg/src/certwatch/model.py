"""Dual-head cheat detector.

Four strided convolutions (48 5x5/3, 48 5x5/3, 32 3x3/2, 16 3x3/2), each
followed by a leaky ReLU, feed two heads:

* global head: reduction (fully connected, max pool or average pool) to a
  16-vector, optional dropout, 16x2 linear layer, softmax (or evidential
  outputs);
* local head: a single 1x1 convolution over the 16 channels followed by a
  logsig, giving a per-cell cheat probability map.
"""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .container import ContainerError, read_container, write_container
from .rng import make_rng
from .tensor import Parameter, Tensor

# (out_channels, kernel, stride, padding)
CONV_LAYERS = ((48, 5, 3, 2), (48, 5, 3, 2), (32, 3, 2, 1), (16, 3, 2, 1))
FEATURES = 16
LOGIT_CLAMP = 15.0
MIN_INPUT = 36
REDUCTIONS = ("fc", "max", "avg")
HEAD_MODES = ("softmax", "evidential")


class ConfigError(ValueError):
    pass


class ShapeMismatchError(ContainerError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    input_height: int = 108
    input_width: int = 192
    reduction: str = "avg"
    head_mode: str = "softmax"
    dropout_p: float = 0.15
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"reduction must be one of {REDUCTIONS}, got {self.reduction!r}")
        if self.head_mode not in HEAD_MODES:
            raise ConfigError(f"head_mode must be one of {HEAD_MODES}, got {self.head_mode!r}")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.input_height < MIN_INPUT or self.input_width < MIN_INPUT:
            raise ConfigError(
                f"input {self.input_height}x{self.input_width} too small for the stride schedule "
                f"(need at least {MIN_INPUT} pixels per axis)"
            )

    @property
    def local_map_shape(self) -> tuple[int, int]:
        h, w = self.input_height, self.input_width
        for _, k, s, p in CONV_LAYERS:
            h, w = T.conv_output_size(h, k, s, p), T.conv_output_size(w, k, s, p)
        return h, w


@dataclass
class DetectorOutput:
    """Detector result for one frame or a batch (leading axis N)."""

    logits: np.ndarray
    p_cheat: np.ndarray
    local_map: np.ndarray
    evidence: np.ndarray | None = None
    alpha: np.ndarray | None = None
    belief: np.ndarray | None = None
    uncertainty: np.ndarray | None = None

    @property
    def predicted(self) -> np.ndarray:
        """1 where the global head favours the cheat class."""
        return (self.logits[..., 1] > self.logits[..., 0]).astype(np.int64)


def evidential_terms(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Evidence, alpha, belief and uncertainty for logits of shape ``[..., 2]``."""
    z = np.clip(np.asarray(logits, dtype=np.float64), -LOGIT_CLAMP, LOGIT_CLAMP)
    e = np.exp(z)
    alpha = 1.0 + e
    strength = alpha.sum(axis=-1, keepdims=True)
    belief = e / strength
    u = 2.0 / strength[..., 0]
    return e, alpha, belief, u


def check_frames(frames: np.ndarray) -> np.ndarray:
    frames = np.asarray(frames)
    if frames.ndim not in (3, 4) or frames.shape[-3] != 3:
        raise T.ShapeError(f"expected RGB frames [3,H,W] or [N,3,H,W], got shape {frames.shape}")
    if frames.size == 0:
        return frames
    lo, hi = float(frames.min()), float(frames.max())
    if lo < 0.0 or hi > 1.0 or not np.isfinite(lo + hi):
        raise ValueError(f"pixel values must lie in [0, 1], got range [{lo}, {hi}]")
    return frames


class DetectorModel:
    def __init__(self, config: DetectorConfig, params: dict[str, Parameter]):
        self.config = config
        self.params = params

    # structure ------------------------------------------------------------
    @staticmethod
    def layer_shapes(config: DetectorConfig) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        c_in = 3
        for i, (c_out, k, _, _) in enumerate(CONV_LAYERS, start=1):
            shapes[f"conv{i}.weight"] = (c_out, c_in, k, k)
            shapes[f"conv{i}.bias"] = (c_out,)
            c_in = c_out
        if config.reduction == "fc":
            h, w = config.local_map_shape
            shapes["reduce.weight"] = (FEATURES * h * w, FEATURES)
            shapes["reduce.bias"] = (FEATURES,)
        shapes["head.weight"] = (FEATURES, 2)
        shapes["head.bias"] = (2,)
        shapes["local.weight"] = (1, FEATURES, 1, 1)
        shapes["local.bias"] = (1,)
        return shapes

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    @contextlib.contextmanager
    def frozen(self) -> Iterator["DetectorModel"]:
        """Treat weights as constants, e.g. when only input gradients are wanted."""
        for p in self.params.values():
            p.requires_grad = False
        try:
            yield self
        finally:
            for p in self.params.values():
                p.requires_grad = True

    # graph pieces --------------------------------------------------------
    def feature_map(self, x: Tensor) -> Tensor:
        slope = self.config.leaky_slope
        for i, (_, _, stride, pad) in enumerate(CONV_LAYERS, start=1):
            x = T.conv2d(x, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"], stride, pad)
            x = T.leaky_relu(x, slope)
        return x

    def reduce(self, feat: Tensor) -> Tensor:
        if self.config.reduction == "fc":
            flat = T.reshape(feat, (feat.shape[0], -1))
            return T.linear(flat, self.params["reduce.weight"], self.params["reduce.bias"])
        return T.pool2d(feat, self.config.reduction, global_pool=True)

    def head(self, h: Tensor) -> Tensor:
        return T.linear(h, self.params["head.weight"], self.params["head.bias"])

    def local_logits(self, feat: Tensor) -> Tensor:
        z = T.conv2d(feat, self.params["local.weight"], self.params["local.bias"], 1, 0)
        return T.reshape(z, (z.shape[0], z.shape[2], z.shape[3]))

    def logits_and_local(self, x, training: bool = False, rng_seed: int = 0) -> tuple[Tensor, Tensor]:
        """Batched graph: global logits ``[N, 2]`` and pre-logsig local map ``[N, H', W']``."""
        x = T.as_tensor(x)
        feat = self.feature_map(x)
        h = self.reduce(feat)
        h = T.dropout(h, self.config.dropout_p, rng_seed, training=training)
        return self.head(h), self.local_logits(feat)

    # numpy-facing API ----------------------------------------------------
    def forward(self, frame, training: bool = False, rng_seed: int = 0) -> DetectorOutput:
        frames = check_frames(frame)
        single = frames.ndim == 3
        batch = frames[None] if single else frames
        with T.no_grad():
            logits, local = self.logits_and_local(Tensor(batch.astype(np.float32, copy=False)), training, rng_seed)
        out = self.outputs_from_logits(logits.data, local.data)
        if single:
            out = DetectorOutput(**{k: (None if v is None else v[0]) for k, v in vars(out).items()})
        return out

    def predict(self, frames, batch_size: int = 32) -> DetectorOutput:
        frames = check_frames(frames)
        parts = [self.forward(frames[i : i + batch_size]) for i in range(0, len(frames), batch_size)]
        return DetectorOutput(
            **{
                k: (None if getattr(parts[0], k) is None else np.concatenate([getattr(p, k) for p in parts]))
                for k in vars(parts[0])
            }
        )

    def features(self, frames, batch_size: int = 32) -> np.ndarray:
        """Reduced 16-vectors ``[N, 16]`` before dropout, eval mode."""
        frames = check_frames(frames)
        if frames.ndim == 3:
            frames = frames[None]
        out = []
        with T.no_grad():
            for i in range(0, len(frames), batch_size):
                x = Tensor(frames[i : i + batch_size].astype(np.float32, copy=False))
                out.append(self.reduce(self.feature_map(x)).data)
        return np.concatenate(out)

    def outputs_from_logits(self, logits: np.ndarray, local_pre: np.ndarray) -> DetectorOutput:
        local_map = T._stable_sigmoid(local_pre)
        if self.config.head_mode == "softmax":
            z = logits - logits.max(axis=-1, keepdims=True)
            e = np.exp(z)
            return DetectorOutput(logits, (e[..., 1] / e.sum(axis=-1)).astype(np.float32), local_map)
        e, alpha, belief, u = evidential_terms(logits)
        p = e[..., 1] / e.sum(axis=-1)
        return DetectorOutput(logits, p, local_map, e, alpha, belief, u)

    # persistence ---------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}


def build_detector(config: DetectorConfig, rng_seed: int = 0) -> DetectorModel:
    """Fresh detector with He-uniform (fan-in) weights and zero biases."""
    params: dict[str, Parameter] = {}
    for index, (name, shape) in enumerate(DetectorModel.layer_shapes(config).items()):
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            data = make_rng(rng_seed, index).uniform(-bound, bound, size=shape).astype(np.float32)
        params[name] = Parameter(data, name)
    return DetectorModel(config, params)


def save_weights(model: DetectorModel, path) -> None:
    write_container(path, {"kind": "detector", "config": asdict(model.config)}, model.state_dict())


def load_weights(path) -> DetectorModel:
    meta, tensors = read_container(path)
    if meta.get("kind") != "detector" or "config" not in meta:
        raise ContainerError(f"{path}: not a detector weights file (kind={meta.get('kind')!r})")
    config = DetectorConfig(**meta["config"])
    expected = DetectorModel.layer_shapes(config)
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))
        extra = sorted(set(tensors) - set(expected))
        raise ShapeMismatchError(f"{path}: layer set mismatch (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ShapeMismatchError(f"{path}: shape mismatch for {name}: file {tensors[name].shape}, expected {shape}")
    return DetectorModel(config, {name: Parameter(tensors[name], name) for name in expected})
