"""Procedural game-like frames with wallhack/ESP overlays.

A scene is a layered rendering: sky/wall gradient, noise-textured ground,
rectangular structures and humanoid silhouettes.  Some silhouettes stand
behind structures ("occluded") and are invisible in the clean frame; the
overlays reveal them, like a real visual hack.  Each cheat frame has a
clean twin rendered from the same scene, and the two differ only inside
the overlay mask.

Overlay levels:

* ``minimal``: one small marker above every occluded entity;
* ``medium``: 1-px bounding box and a text-like glyph block per entity;
* ``full``: recoloured filled silhouettes, health bar and weapon glyph.

Style ``B`` is a different cheat program: cool palette, corner brackets and
silhouette contours instead of boxes and fills.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .rng import derive_seed, make_rng

LEVELS = ("full", "medium", "minimal")
STYLES = ("A", "B")
SPLITS = ("train", "val", "test")
MANIFEST_VERSION = 1
MIN_DIM = 36

# overlay palettes, RGB in [0, 1]
PALETTES = {
    "A": {"marker": (0.92, 0.08, 0.10), "box": (0.95, 0.10, 0.75), "glyph": (1.0, 1.0, 1.0),
          "fill": (0.95, 0.15, 0.15), "health": (0.15, 0.95, 0.20), "weapon": (1.0, 0.85, 0.10)},
    "B": {"marker": (0.10, 0.95, 0.95), "box": (0.10, 0.95, 0.95), "glyph": (0.70, 0.85, 1.0),
          "fill": (0.10, 0.95, 0.95), "health": (0.30, 0.45, 1.0), "weapon": (0.85, 0.95, 1.0)},
}


class DatasetError(RuntimeError):
    pass


class DatasetValidationError(DatasetError):
    """Dataset files exist but fail integrity or format checks."""


@dataclass(frozen=True)
class SceneSpec:
    width: int = 192
    height: int = 108
    rng_seed: int = 0
    n_entities: int = 3
    style: str = "A"
    texture_density: float = 0.5
    min_occluded: int = 0

    def __post_init__(self):
        if self.width < MIN_DIM or self.height < MIN_DIM:
            raise ValueError(f"scene {self.width}x{self.height} too small (minimum {MIN_DIM} per axis)")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")
        if self.n_entities < 0 or self.min_occluded > self.n_entities:
            raise ValueError("invalid entity counts")


@dataclass(frozen=True)
class Entity:
    x0: int
    y0: int
    x1: int  # exclusive
    y1: int
    occluded: bool

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


@dataclass
class Scene:
    image: np.ndarray  # [3, H, W] float32, 8-bit quantised
    entities: list[Entity]
    silhouettes: list[np.ndarray] = field(default_factory=list)  # per-entity boolean masks


def quantize(img: np.ndarray) -> np.ndarray:
    return (np.round(np.clip(img, 0, 1) * 255) / 255).astype(np.float32)


def _value_noise(rng, h, w, cells) -> np.ndarray:
    gh, gw = max(2, h // cells + 2), max(2, w // cells + 2)
    grid = rng.random((gh, gw))
    ys = np.linspace(0, gh - 1.001, h)
    xs = np.linspace(0, gw - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    a = grid[y0][:, x0]
    b = grid[y0][:, x0 + 1]
    c = grid[y0 + 1][:, x0]
    d = grid[y0 + 1][:, x0 + 1]
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy


def _muted(rng, base: float, spread: float) -> np.ndarray:
    # low-saturation colour: a grey level plus a small tint
    return np.clip(base + rng.uniform(-spread, spread, size=3), 0.05, 0.9)


def _silhouette(ent: Entity) -> np.ndarray:
    """Local boolean mask of a humanoid: head disc over a body block."""
    h, w = ent.height, ent.width
    mask = np.zeros((h, w), dtype=bool)
    head = max(3, w // 2 + 1)
    yy, xx = np.mgrid[0:head, 0:w]
    cx, r = (w - 1) / 2, head / 2
    mask[:head] = (yy - (head - 1) / 2) ** 2 + (xx - cx) ** 2 <= r * r
    shoulder = max(1, w // 6)
    mask[head:, :] = True
    mask[head : head + 2, :shoulder] = False
    mask[head : head + 2, w - shoulder :] = False
    return mask


# vivid but legitimate scene content: pickups, flashes, signs (before lighting)
PROP_COLORS = np.array(
    [(0.85, 0.12, 0.10), (0.95, 0.85, 0.15), (0.85, 0.20, 0.70), (1.0, 0.55, 0.05),
     (0.95, 0.95, 0.95), (0.20, 0.80, 0.25), (0.25, 0.55, 0.95)]
)


def _prop_shape(rng) -> np.ndarray:
    kind = int(rng.integers(4))
    size = int(rng.integers(3, 7))
    if kind == 0:  # disc
        yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2
        return yy**2 + xx**2 <= (size / 2) ** 2
    if kind == 1:  # square
        return np.ones((size, size), dtype=bool)
    if kind == 2:  # plus
        m = np.zeros((size, size), dtype=bool)
        m[size // 2, :] = m[:, size // 2] = True
        return m
    return np.ones((2, size + 3), dtype=bool)  # bar


def _draw_props(img: np.ndarray, rng, horizon: int) -> None:
    h, w = img.shape[:2]
    for _ in range(int(rng.integers(1, 5))):
        shape = _prop_shape(rng)
        sh, sw = shape.shape
        y = int(rng.integers(max(0, horizon - 10), h - sh))
        x = int(rng.integers(0, w - sw))
        # props are lit by the scene, overlays are not: dim and shade top to bottom
        color = PROP_COLORS[int(rng.integers(len(PROP_COLORS)))] * rng.uniform(0.55, 0.8)
        shade = np.linspace(1.0, 0.75, sh)[:, None, None] * np.ones((1, sw, 1))
        img[y : y + sh, x : x + sw][shape] = (color * shade)[shape]


def _draw_hud(img: np.ndarray, rng_seed: int) -> None:
    """Legit player HUD: crosshair, own health bar, ammo counter."""
    h, w = img.shape[:2]
    cy, cx = h // 2, w // 2
    img[cy, cx - 3 : cx + 4] = 0.95
    img[cy - 3 : cy + 4, cx] = 0.95
    img[cy, cx] = img[cy - 1, cx] * 0.5
    fill = int(make_rng(rng_seed, 2).integers(6, 25))
    img[h - 5 : h - 3, 3 : 3 + fill] = (0.15, 0.85, 0.20)
    ammo = _glyphs(rng_seed, 2)
    gh, gw = ammo.shape
    img[h - 3 - gh : h - 3, w - 3 - gw : w - 3][ammo] = 0.95


def render_scene(spec: SceneSpec) -> Scene:
    rng = make_rng(spec.rng_seed, 0)
    h, w = spec.height, spec.width
    img = np.zeros((h, w, 3), dtype=np.float64)

    horizon = int(h * rng.uniform(0.35, 0.55))
    top, bottom = _muted(rng, 0.6, 0.12), _muted(rng, 0.45, 0.1)
    t = np.linspace(0, 1, horizon)[:, None, None]
    img[:horizon] = top * (1 - t) + bottom * t

    ground = _muted(rng, 0.35, 0.08)
    coarse = _value_noise(rng, h - horizon, w, 12)
    fine = rng.random((h - horizon, w))
    amp = 0.25 * spec.texture_density
    tex = (coarse - 0.5) * amp + (fine - 0.5) * amp * 0.5
    img[horizon:] = ground + tex[..., None]

    n_occ = max(spec.min_occluded, int((rng.random(spec.n_entities) < 0.5).sum()))
    n_occ = min(n_occ, spec.n_entities)

    # structures standing on the ground; the first n_occ are large enough to hide someone
    structures: list[tuple[int, int, int, int]] = []
    n_big = max(n_occ, 1)
    for i in range(n_big + int(rng.integers(1, 4))):
        if i < n_big:
            sw = int(rng.integers(16, max(17, w // 5)))
            sh = int(rng.integers(26, max(27, h // 2)))
        else:
            sw = int(rng.integers(8, max(9, w // 6)))
            sh = int(rng.integers(6, max(7, h // 4)))
        sw, sh = min(sw, w - 2), min(sh, h - 2)
        base = int(rng.integers(max(horizon + 4, sh), h))
        x0 = int(rng.integers(0, w - sw))
        structures.append((x0, base - sh, x0 + sw, base))

    entities: list[Entity] = []
    for i in range(spec.n_entities):
        ew = int(rng.integers(6, 10))
        eh = int(rng.integers(16, 23))
        occluded = i < n_occ
        if occluded:
            sx0, sy0, sx1, sy1 = structures[i]
            ew, eh = min(ew, sx1 - sx0 - 2), min(eh, sy1 - sy0 - 2)
            ex0 = int(rng.integers(sx0 + 1, sx1 - ew))
            ey0 = int(rng.integers(sy0 + 1, sy1 - eh))
        else:
            ex0 = int(rng.integers(1, w - ew - 1))
            ey0 = int(rng.integers(max(6, horizon - eh // 2), max(7, h - eh - 1)))
        entities.append(Entity(ex0, ey0, ex0 + ew, ey0 + eh, occluded))

    silhouettes = [_silhouette(e) for e in entities]

    def draw_entity(idx: int) -> None:
        e, sil = entities[idx], silhouettes[idx]
        col = _muted(rng, 0.22, 0.06)
        shade = np.linspace(1.0, 0.8, e.height)[:, None, None]
        region = img[e.y0 : e.y1, e.x0 : e.x1]
        region[sil] = (col * shade * np.ones((1, e.width, 1)))[sil]

    for idx, e in enumerate(entities):
        if e.occluded:
            draw_entity(idx)
    for sx0, sy0, sx1, sy1 in structures:
        col = _muted(rng, 0.5, 0.1)
        shade = np.linspace(1.05, 0.8, sy1 - sy0)[:, None, None]
        img[sy0:sy1, sx0:sx1] = col * shade
        img[sy0:sy1, sx0] *= 0.8
    for idx, e in enumerate(entities):
        if not e.occluded:
            draw_entity(idx)
    _draw_props(img, make_rng(spec.rng_seed, 1), horizon)
    _draw_hud(img, spec.rng_seed)

    return Scene(quantize(img.transpose(2, 0, 1)), entities, silhouettes)


# overlays -----------------------------------------------------------------


def _paint(canvas, mask, y, x, local_mask, color, opacity: float = 1.0):
    """Blend ``color`` into ``local_mask`` at (y, x), clipped to the frame."""
    h, w = canvas.shape[1:]
    lh, lw = local_mask.shape
    y0, x0 = max(y, 0), max(x, 0)
    y1, x1 = min(y + lh, h), min(x + lw, w)
    if y0 >= y1 or x0 >= x1:
        return
    sub = local_mask[y0 - y : y1 - y, x0 - x : x1 - x]
    for c in range(3):
        region = canvas[c, y0:y1, x0:x1]
        region[sub] = (1 - opacity) * region[sub] + opacity * color[c]
    mask[y0:y1, x0:x1] |= sub


def _marker(style: str) -> np.ndarray:
    if style == "A":  # downward triangle, 9 wide
        rows = [np.abs(np.arange(9) - 4) <= 4 - r for r in range(5)]
        return np.array(rows, dtype=bool)
    r = np.abs(np.arange(7) - 3)  # diamond, 7 wide
    return (r[:, None] + r[None, :]) <= 3


def _glyphs(rng_seed: int, n_chars: int) -> np.ndarray:
    """A row of 3x3 pseudo-characters separated by one blank column."""
    rng = make_rng(rng_seed, 7)
    block = np.zeros((3, 4 * n_chars - 1), dtype=bool)
    for i in range(n_chars):
        ch = rng.random((3, 3)) < 0.6
        ch[1, 1] = True
        block[:, 4 * i : 4 * i + 3] = ch
    return block


def _outline(h: int, w: int, thickness: int = 1) -> np.ndarray:
    m = np.ones((h, w), dtype=bool)
    m[thickness:-thickness, thickness:-thickness] = False
    return m


def _brackets(h: int, w: int, arm: int = 4, thickness: int = 2) -> np.ndarray:
    """Corner brackets of a box: only the ``arm``-long ends of each side."""
    m = _outline(h, w, thickness)
    m[arm : h - arm, :] &= np.zeros(w, dtype=bool)
    keep_cols = np.zeros(w, dtype=bool)
    keep_cols[:arm] = keep_cols[w - arm :] = True
    m[:thickness] &= keep_cols
    m[h - thickness :] &= keep_cols
    return m


def _contour(sil: np.ndarray) -> np.ndarray:
    """One-pixel outer contour of a silhouette, in a mask padded by one pixel."""
    pad = np.pad(sil, 1)
    grown = pad.copy()
    grown[1:] |= pad[:-1]
    grown[:-1] |= pad[1:]
    grown[:, 1:] |= pad[:, :-1]
    grown[:, :-1] |= pad[:, 1:]
    return grown & ~pad


def apply_overlay(scene: Scene, level: str, style: str = "A",
                  opacity: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(cheat_image, overlay_mask)`` for a rendered scene.

    Style A draws boxes and filled silhouettes in warm colours; style B is a
    different program drawing corner brackets and silhouette contours in
    cool colours.
    """
    if level not in LEVELS:
        raise ValueError(f"unknown overlay level {level!r}")
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}")
    if not 0 < opacity <= 1:
        raise ValueError(f"opacity must lie in (0, 1], got {opacity}")
    pal = PALETTES[style]
    canvas = scene.image.astype(np.float64).copy()
    mask = np.zeros(scene.image.shape[1:], dtype=bool)
    for idx, e in enumerate(scene.entities):
        if level == "minimal":
            if e.occluded:
                mk = _marker(style)
                top = max(0, e.y0 - mk.shape[0] - 1)
                _paint(canvas, mask, top, e.x0 + e.width // 2 - mk.shape[1] // 2, mk, pal["marker"], opacity)
        elif level == "medium":
            if style == "A":
                frame = _outline(e.height + 2, e.width + 2)
            else:
                frame = _brackets(e.height + 2, e.width + 2)
            _paint(canvas, mask, e.y0 - 1, e.x0 - 1, frame, pal["box"], opacity)
            _paint(canvas, mask, e.y0 - 5, e.x0 - 1, _glyphs(idx, 3), pal["glyph"], opacity)
        elif style == "A":
            _paint(canvas, mask, e.y0, e.x0, scene.silhouettes[idx], pal["fill"], opacity)
            bar = np.ones((2, max(4, e.width + 2)), dtype=bool)
            _paint(canvas, mask, e.y0 - 3, e.x0 - 1, bar, pal["health"], opacity)
            _paint(canvas, mask, e.y0 + e.height // 2, e.x1 + 1, np.ones((3, 6), dtype=bool), pal["weapon"], opacity)
        else:
            _paint(canvas, mask, e.y0 - 1, e.x0 - 1, _contour(scene.silhouettes[idx]), pal["fill"], opacity)
            _paint(canvas, mask, e.y0, e.x0 - 4, np.ones((e.height, 2), dtype=bool), pal["health"], opacity)
            _paint(canvas, mask, e.y1 + 2, e.x0 - 1, _glyphs(idx + 11, 2), pal["weapon"], opacity)
    return quantize(canvas), mask


# dataset ------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    counts: dict = field(default_factory=lambda: {"train": 400, "val": 100, "test": 200})
    levels: tuple = LEVELS
    style: str = "A"
    seed: int = 0
    width: int = 192
    height: int = 108
    entities: tuple = (2, 4)
    texture_density: float = 0.5
    overlay_opacity: float = 1.0

    def __post_init__(self):
        for split, n in self.counts.items():
            if split not in SPLITS:
                raise ValueError(f"unknown split {split!r}")
            if int(n) < 1:
                raise ValueError(f"split {split} needs at least one record, got {n}")
        for level in self.levels:
            if level not in LEVELS:
                raise ValueError(f"unknown overlay level {level!r}")
        if self.style not in STYLES:
            raise ValueError(f"unknown style {self.style!r}")
        if not 0 < self.overlay_opacity <= 1:
            raise ValueError(f"overlay_opacity must lie in (0, 1], got {self.overlay_opacity}")

    def snapshot(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        d["entities"] = list(self.entities)
        return d


def _ppm_bytes(img: np.ndarray) -> bytes:
    arr = np.round(img.transpose(1, 2, 0) * 255).astype(np.uint8)
    h, w = arr.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + arr.tobytes()


def _pgm_bytes(mask: np.ndarray) -> bytes:
    h, w = mask.shape
    return b"P5\n%d %d\n255\n" % (w, h) + (mask.astype(np.uint8) * 255).tobytes()


def read_pnm(path) -> np.ndarray:
    """Read binary PPM (P6) / PGM (P5) into ``[C, H, W]`` float32 in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    channels = {b"P6": 3, b"P5": 1}.get(magic)
    if channels is None or maxval != 255:
        raise DatasetValidationError(f"{path}: unsupported image format {magic!r} / maxval {maxval}")
    body = raw[pos : pos + w * h * channels]
    if len(body) != w * h * channels:
        raise DatasetValidationError(f"{path}: truncated image data")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, channels)
    return (arr.transpose(2, 0, 1) / 255.0).astype(np.float32)


def _write_new(path: Path, data: bytes, written: set) -> str:
    if path in written:
        raise DatasetError(f"duplicate output path {path}")
    written.add(path)
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def build_dataset(config: DatasetConfig, out_dir) -> dict:
    """Render every split to ``out_dir`` and write ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for split in config.counts:
            (out / split).mkdir(exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create dataset directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise DatasetError(f"dataset directory {out} is not writable")

    records = []
    written: set[Path] = set()
    scene_id = 0
    pair_id = 0
    lo, hi = config.entities
    for split in SPLITS:
        if split not in config.counts:
            continue
        n = int(config.counts[split])
        n_cheat = n // 2
        for i in range(n - n_cheat):
            paired = i < n_cheat
            scene_seed = derive_seed(config.seed, scene_id)
            n_ent = int(make_rng(scene_seed, 99).integers(lo, hi + 1))
            spec = SceneSpec(config.width, config.height, scene_seed, n_ent, config.style,
                             config.texture_density, min_occluded=1)
            scene = render_scene(spec)
            stem = f"{split}/{scene_id:06d}"
            base = {"split": split, "scene_id": scene_id, "pair_id": pair_id if paired else None}
            digest = _write_new(out / f"{stem}_clean.ppm", _ppm_bytes(scene.image), written)
            records.append({**base, "image_path": f"{stem}_clean.ppm", "label": 0,
                            "overlay_level": None, "mask_path": None, "sha256": digest})
            if paired:
                level = config.levels[i % len(config.levels)]
                cheat, mask = apply_overlay(scene, level, config.style, config.overlay_opacity)
                digest = _write_new(out / f"{stem}_cheat.ppm", _ppm_bytes(cheat), written)
                _write_new(out / f"{stem}_mask.pgm", _pgm_bytes(mask), written)
                records.append({**base, "image_path": f"{stem}_cheat.ppm", "label": 1,
                                "overlay_level": level, "mask_path": f"{stem}_mask.pgm", "sha256": digest})
                pair_id += 1
            scene_id += 1

    manifest = {"version": MANIFEST_VERSION, "generator": config.snapshot(), "records": records}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


# loading ------------------------------------------------------------------

_RECORD_KEYS = {"image_path", "label", "split", "scene_id", "pair_id", "sha256"}


def read_manifest(manifest_path) -> dict:
    path = Path(manifest_path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetValidationError(f"malformed manifest {path}: {exc}") from None
    if not isinstance(manifest, dict) or not isinstance(manifest.get("records"), list):
        raise DatasetValidationError(f"malformed manifest {path}: missing 'records' list")
    if manifest.get("version") != MANIFEST_VERSION:
        raise DatasetValidationError(f"malformed manifest {path}: unsupported version {manifest.get('version')!r}")
    for i, rec in enumerate(manifest["records"]):
        missing = _RECORD_KEYS - set(rec)
        if missing:
            raise DatasetValidationError(f"malformed manifest {path}: record {i} lacks {sorted(missing)}")
        if rec["label"] not in (0, 1):
            raise DatasetValidationError(f"malformed manifest {path}: record {i} has label {rec['label']!r}")
    manifest["_root"] = str(path.parent)
    return manifest


def load_dataset(manifest_path, split: str | None = None, level: str | None = None,
                 verify: bool = True) -> Iterator[tuple[np.ndarray, int, dict]]:
    """Yield ``(frame, label, record)`` in manifest order."""
    manifest = read_manifest(manifest_path)
    root = Path(manifest["_root"])
    for rec in manifest["records"]:
        if split is not None and rec["split"] != split:
            continue
        if level is not None and rec["label"] == 1 and rec["overlay_level"] != level:
            continue
        path = root / rec["image_path"]
        if not path.exists():
            raise DatasetError(f"missing image file {path}")
        if verify and hashlib.sha256(path.read_bytes()).hexdigest() != rec["sha256"]:
            raise DatasetValidationError(f"checksum mismatch for {path}")
        yield read_pnm(path), int(rec["label"]), rec


def load_arrays(manifest_path, split: str | None = None, level: str | None = None):
    """Stack a split into ``(frames [N,3,H,W], labels [N], records)``."""
    items = list(load_dataset(manifest_path, split, level))
    if not items:
        raise DatasetError(f"no records for split={split!r} level={level!r} in {manifest_path}")
    frames = np.stack([f for f, _, _ in items])
    labels = np.array([l for _, l, _ in items], dtype=np.int64)
    return frames, labels, [r for _, _, r in items]


CHEAT_DIR_NAMES = {"cheat", "cheating", "hack", "hacked", "1"}
CLEAN_DIR_NAMES = {"clean", "legit", "nocheat", "no_cheat", "0"}
_IMAGE_EXT = {".png", ".jpg", ".jpeg", ".bmp", ".ppm"}


def load_image_folder(root) -> Iterator[tuple[np.ndarray, int, dict]]:
    """Read a folder-of-images dataset whose labels come from directory names.

    Any directory named like ``cheat``/``clean`` (case-insensitive) below
    ``root`` labels the images it contains; the nearest enclosing name wins.
    Non-PPM formats need Pillow.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"not a directory: {root}")
    for path in sorted(p for p in root.rglob("*") if p.suffix.lower() in _IMAGE_EXT):
        label = None
        for part in reversed(path.relative_to(root).parts[:-1]):
            name = part.lower()
            if name in CHEAT_DIR_NAMES:
                label = 1
            elif name in CLEAN_DIR_NAMES:
                label = 0
            if label is not None:
                break
        if label is None:
            continue
        if path.suffix.lower() == ".ppm":
            frame = read_pnm(path)
        else:
            try:
                from PIL import Image
            except ImportError:
                raise DatasetError("reading PNG/JPEG datasets requires Pillow (pip install certwatch[images])") from None
            with Image.open(path) as im:
                frame = (np.asarray(im.convert("RGB")).transpose(2, 0, 1) / 255.0).astype(np.float32)
        yield frame, label, {"image_path": str(path.relative_to(root)), "label": label}
