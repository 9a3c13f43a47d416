"""Report serialization: canonical JSON, flat CSV, schema validation and sidecars."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from importlib import resources
from pathlib import Path

import jsonschema

REPORT_VERSION = 1
CSV_FIELDS = ("model", "attack", "eps", "tp", "tp_attack", "ratio", "haarpsi", "certified_fraction",
              "config_hash", "seed")


class ReportError(RuntimeError):
    pass


class ReportValidationError(ReportError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_report(kind: str, config: dict, results: dict) -> dict:
    return {
        "version": REPORT_VERSION,
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "seed": config.get("seed"),
        "results": results,
    }


def write_report(report: dict, path, fmt: str = "json") -> Path:
    """Write ``report`` as canonical JSON or as a flat CSV of its result cells."""
    path = Path(path)
    if fmt == "json":
        text = canonical_json(report)
    elif fmt == "csv":
        text = to_csv(report)
    else:
        raise ReportError(f"unknown report format {fmt!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"cannot write report {path}: {exc}") from None
    return path


def write_sidecar(path, started: float, extra: dict | None = None) -> Path:
    """Timestamps and wall time live next to the report, never inside it."""
    side = Path(path).with_suffix(".meta.json")
    meta = {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_seconds": round(time.time() - started, 3),
        **(extra or {}),
    }
    side.write_text(canonical_json(meta), encoding="utf-8")
    return side


def read_report(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ReportError(f"report not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ReportError(f"malformed report {path}: {exc}") from None


def csv_rows(report: dict) -> list[dict]:
    """One row per (model, attack, eps) cell found in the report."""
    kind, results = report.get("kind"), report.get("results", {})
    base = {"config_hash": report.get("config_hash"), "seed": report.get("seed")}
    model = results.get("model", "")
    rows = []
    if kind == "attack":
        for cell in results.get("cells", []):
            rows.append({**base, "model": model, "attack": cell["attack"], "eps": cell["eps"], "tp": cell["tp"],
                         "tp_attack": cell["tp_attack"], "ratio": cell["ratio"], "haarpsi": cell.get("haarpsi")})
    elif kind == "cert":
        for cell in results.get("cells", []):
            rows.append({**base, "model": model, "attack": "ibp_bound", "eps": cell["eps"],
                         "certified_fraction": cell["certified_fraction"]})
    elif kind == "summary":
        for row in results.get("rows", []):
            for name, value in sorted(row.get("attack", {}).items()):
                rows.append({**base, "model": row["loss"], "attack": name, "eps": row.get("eps"), "ratio": value})
            if row.get("ibp_bound") is not None:
                rows.append({**base, "model": row["loss"], "attack": "ibp_bound", "eps": row.get("eps"),
                             "certified_fraction": row["ibp_bound"]})
    return rows


def to_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in csv_rows(report):
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in CSV_FIELDS})
    return buf.getvalue()


def load_schema() -> dict:
    return json.loads(resources.files("certwatch").joinpath("schemas/report.schema.json").read_text())


def validate_report(report: dict) -> None:
    """Raise :class:`ReportValidationError` unless ``report`` matches the published schema."""
    try:
        jsonschema.validate(report, load_schema())
    except jsonschema.ValidationError as exc:
        raise ReportValidationError(f"report does not match schema: {exc.message}") from None
