"""Matplotlib figures written next to the reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    for ax in fig.axes:
        if ax.get_legend_handles_labels()[0]:
            path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def loss_curves(history: dict, path) -> Path:
    epochs = [e["epoch"] for e in history["epochs"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [e["loss"] for e in history["epochs"]], label="total")
    ax.plot(epochs, [e["global_"] for e in history["epochs"]], label="global", alpha=0.7)
    ax.plot(epochs, [e["local"] for e in history["epochs"]], label="local", alpha=0.7)
    worst = [(e["epoch"], e["worst"]) for e in history["epochs"] if e["worst"] is not None]
    if worst:
        ax.plot(*zip(*worst), label="worst case", linestyle="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    return _save(fig, path)


def attack_curves(cells: list[dict], path, cert_cells: list[dict] | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for attack in sorted({c["attack"] for c in cells}):
        pts = sorted((c["eps"], c["ratio"]) for c in cells if c["attack"] == attack and c["ratio"] is not None)
        if pts:
            ax.plot(*zip(*pts), marker="o", label=attack)
    if cert_cells:
        pts = sorted((c["eps"], c["certified_fraction"]) for c in cert_cells)
        ax.plot(*zip(*pts), marker="s", linestyle=":", label="certified")
    ax.set_xlabel("eps (L-inf)")
    ax.set_ylabel("TP_attack / TP")
    ax.set_ylim(0, 1.05)
    return _save(fig, path)


def haarpsi_curve(cells: list[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for attack in sorted({c["attack"] for c in cells}):
        pts = sorted((c["eps"], c["haarpsi"]) for c in cells if c["attack"] == attack and c.get("haarpsi") is not None)
        if pts:
            ax.plot(*zip(*pts), marker="o", label=attack)
    ax.set_xlabel("eps (L-inf)")
    ax.set_ylabel("mean HaarPSI")
    ax.set_ylim(0, 1.05)
    return _save(fig, path)
