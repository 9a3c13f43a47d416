"""End-to-end steps shared by the CLI and the acceptance suite.

Each step takes plain arguments, returns a results dict ready for
:func:`certwatch.report.make_report`, and never embeds timestamps.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import attacks as A
from . import plotting
from .confidence import GateConfig, assess, compute_lr_baselines, drift_check
from .datagen import DatasetConfig, build_dataset, load_arrays
from .haarpsi import haarpsi
from .ibp import certified_fraction
from .metrics import deployable, derive_metrics, tabulate
from .model import DetectorConfig, DetectorModel, build_detector, save_weights
from .training import TrainConfig, train

DEFAULT_EPS_GRID = (0.0, 0.0125, 0.025, 0.05, 0.1)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("CERTWATCH_THREADS", "1")))
    except ValueError:
        return 1


def parallel_map(fn, items) -> list:
    """Ordered map over ``items`` using up to ``CERTWATCH_THREADS`` threads."""
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _r(x, nd: int = 6):
    return None if x is None else round(float(x), nd)


def directory_digest(root) -> str:
    """sha256 over relative paths and contents of every file below ``root``."""
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(str(p.relative_to(root)).encode())
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


# data / training -------------------------------------------------------------


def gen_data(config: DatasetConfig, out_dir) -> dict:
    manifest = build_dataset(config, out_dir)
    counts = {}
    for rec in manifest["records"]:
        key = f"{rec['split']}/{rec['label']}"
        counts[key] = counts.get(key, 0) + 1
    return {"dataset": config.snapshot(), "records": len(manifest["records"]), "counts": counts,
            "digest": directory_digest(out_dir)}


def train_model(data_dir, train_cfg: TrainConfig, detector_cfg: DetectorConfig | None = None,
                out_dir=None, log=None) -> tuple[DetectorModel, dict]:
    detector_cfg = detector_cfg or DetectorConfig(head_mode=train_cfg.head_mode)
    frames, labels, _ = load_arrays(data_dir, "train")
    detector_cfg = replace(detector_cfg, input_height=frames.shape[2], input_width=frames.shape[3])
    model = build_detector(detector_cfg, train_cfg.seed)
    history = train(model, frames, labels, train_cfg, log)
    hist = history.as_dict()
    results = {
        "detector": asdict(detector_cfg),
        "train": hist["config"],
        "epochs": hist["epochs"],
        "initial_loss": hist["epochs"][0]["loss"],
        "final_loss": hist["epochs"][-1]["loss"],
        "n_frames": int(len(frames)),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_weights(model, out / "weights.vcd")
        results["weights_sha256"] = hashlib.sha256((out / "weights.vcd").read_bytes()).hexdigest()
        plotting.loss_curves(hist, out / "loss_curves.png")
    return model, results


# evaluation ---------------------------------------------------------------------


def evaluate(model: DetectorModel, data_dir, split: str = "test", gate: GateConfig | None = None,
             train_split: str | None = "train") -> dict:
    gate = gate or GateConfig(dropout_p=model.config.dropout_p)
    frames, labels, records = load_arrays(data_dir, split)
    a = assess(model, frames, gate)
    table = tabulate(a.predicted, labels, a.confident)
    # gate soundness, re-checked on every run: reported detections are confident ones
    if table.confident.TP + table.confident.FP != int(a.confident_positive.sum()):
        raise AssertionError("reported detections disagree with the confident gate")
    levels = {}
    lv = np.array([r.get("overlay_level") or "" for r in records])
    for level in sorted(set(lv) - {""}):
        sel = lv == level
        levels[level] = _r((a.predicted[sel] == labels[sel]).mean())
    results = {
        "split": split,
        "n_frames": int(len(frames)),
        "gate": asdict(gate),
        "confusion": table.as_dict(),
        "metrics": derive_metrics(table).as_dict(),
        "ungated_accuracy": _r((a.predicted == labels).mean()),
        "ungated_tp": int(((a.predicted == 1) & (labels == 1)).sum()),
        "ungated_fp": int(((a.predicted == 1) & (labels == 0)).sum()),
        "level_recall": levels,
        "deployable": deployable(table),
        "lr_baselines": {"eval": _round_dict(compute_lr_baselines(model, frames, "field").as_dict())},
    }
    results["metrics"] = {k: _r(v) for k, v in results["metrics"].items()}
    if train_split is not None:
        tr, _, _ = load_arrays(data_dir, train_split)
        results["lr_baselines"]["train"] = _round_dict(compute_lr_baselines(model, tr, "train").as_dict())
    return results


def _round_dict(d: dict) -> dict:
    return {k: (_r(v) if isinstance(v, float) else v) for k, v in d.items()}


def cheat_frames(data_dir, split: str) -> np.ndarray:
    frames, labels, _ = load_arrays(data_dir, split)
    return frames[labels == 1]


def attack_sweep(model: DetectorModel, data_dir, attacks=("universal", "fgsm", "pgd"), eps_grid=DEFAULT_EPS_GRID,
                 split: str = "test", gate: GateConfig | None = None, steps: int = 10, step_size_frac: float = 0.25,
                 passes: int = 5, seed: int = 0, out_dir=None) -> dict:
    """TP_attack/TP and mean HaarPSI for every (attack, eps) cell."""
    gate = gate or GateConfig(dropout_p=model.config.dropout_p)
    frames = cheat_frames(data_dir, split)
    train_cheats = cheat_frames(data_dir, "train") if "universal" in attacks else None
    cells = []
    perturbations = {}
    for eps in eps_grid:
        for kind in attacks:
            spec = A.AttackSpec(kind, float(eps), steps=steps,
                                step_size=(eps * step_size_frac if eps > 0 else None), rng_seed=seed)
            universal = None
            if kind == "universal":
                universal = A.build_universal(model, train_cheats, float(eps), passes, rng_seed=seed)
                perturbations[eps] = universal
            res = A.evaluate_attack(model, frames, spec, gate, universal)
            attacked = A.run_attack(model, frames, spec, universal)
            scores = parallel_map(lambda pair: haarpsi(*pair), zip(frames, attacked))
            cells.append({
                "attack": kind,
                "eps": float(eps),
                "tp": res.tp,
                "tp_attack": res.tp_attack,
                "ratio": _r(res.ratio),
                "n_frames": res.n_frames,
                "haarpsi": _r(np.mean(scores)),
                "construction_flip_rate": _r(universal.construction_flip_rate) if universal else None,
            })
    if out_dir is not None:
        out = Path(out_dir)
        for eps, pert in perturbations.items():
            if eps > 0:
                pert.save(out / f"universal_eps{eps:g}.vcd")
    return {"split": split, "gate": asdict(gate), "cells": cells}


def certify_sweep(model: DetectorModel, data_dir, eps_grid=DEFAULT_EPS_GRID, split: str = "test",
                  gate: GateConfig | None = None) -> dict:
    gate = gate or GateConfig(dropout_p=model.config.dropout_p)
    frames = cheat_frames(data_dir, split)
    cells = [
        {
            "eps": float(eps),
            "certified_fraction": _r(certified_fraction(model, frames, float(eps))),
            "gated_certified_fraction": _r(certified_fraction(model, frames, float(eps), gate)),
        }
        for eps in eps_grid
    ]
    return {"split": split, "gate": asdict(gate), "n_frames": int(len(frames)), "cells": cells}


def drift(model: DetectorModel, train_data, field_data, field_split: str = "test", window: int = 500,
          threshold: float = 0.5, direction: str = "field_over_train") -> dict:
    train_frames, _, _ = load_arrays(train_data, "train")
    field_frames, _, _ = load_arrays(field_data, field_split)
    field_frames = field_frames[-window:]
    tr = compute_lr_baselines(model, train_frames, "train")
    fi = compute_lr_baselines(model, field_frames, "field")
    verdict = drift_check(tr, fi, threshold, direction)
    return {
        "field_split": field_split,
        "window": window,
        "train": _round_dict(tr.as_dict()),
        "field": _round_dict(fi.as_dict()),
        "verdict": _round_dict(verdict.as_dict()),
    }


def summary_rows(reports: list[dict]) -> list[dict]:
    """Table rows (confident/non-confident counts, attack ratios, IBP bound) per model."""
    by_model: dict[str, dict] = {}
    for rep in reports:
        res = rep["results"]
        name = res.get("model") or rep.get("config", {}).get("model") or rep["config_hash"]
        row = by_model.setdefault(name, {"loss": name, "attack": {}, "ibp_bound": None, "eps": None})
        if rep["kind"] == "eval":
            row["confident"] = res["confusion"]["confident"]
            row["non_confident"] = res["confusion"]["non_confident"]
        elif rep["kind"] == "attack":
            target = rep["config"].get("table_eps", 0.0125)
            row["eps"] = target
            for c in res["cells"]:
                if abs(c["eps"] - target) < 1e-12:
                    row["attack"][{"pgd": "iterative"}.get(c["attack"], c["attack"])] = c["ratio"]
        elif rep["kind"] == "cert":
            target = rep["config"].get("table_eps", 0.0125)
            for c in res["cells"]:
                if abs(c["eps"] - target) < 1e-12:
                    row["ibp_bound"] = c["certified_fraction"]
    return [by_model[k] for k in sorted(by_model)]
