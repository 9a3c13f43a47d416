"""Command line: gen-data, train, eval, attack, cert, drift, report.

Values resolve as built-in defaults < ``--config`` JSON file < flags; the
resolved config is echoed to ``<out>/<subcommand>.config.json`` and embedded
in every report.  Exit codes: 0 success, 1 usage, 2 runtime, 3 validation.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import pipeline, plotting
from .attacks import KINDS, AttackError
from .confidence import RATIO_DIRECTIONS, GateConfig
from .container import BadMagicError, ContainerError, TruncatedFileError, UnsupportedVersionError
from .datagen import LEVELS, STYLES, DatasetConfig, DatasetError, DatasetValidationError
from .model import ConfigError, DetectorConfig, load_weights
from .report import (ReportError, ReportValidationError, canonical_json, make_report, read_report,
                     validate_report, write_report, write_sidecar)
from .training import IBP_MODES, LOSSES, TrainConfig, TrainingError, UsageError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2, 3

DEFAULTS = {
    "gen-data": {"seed": 0, "style": "A", "counts": {"train": 400, "val": 100, "test": 200},
                 "levels": list(LEVELS), "width": 192, "height": 108, "texture_density": 0.5},
    "train": {"seed": 0, "loss": "ce_combined", "ibp": "none", "eps": 0.025, "ibp_weight": 0.5, "epochs": 60,
              "batch_size": 8, "lr": 1e-3, "reduction": "avg", "dropout_p": 0.15, "paper_schedule": False,
              "lr_decay_at": 0.6, "lr_decay_epoch": 150, "model": None},
    "eval": {"seed": 0, "split": "test", "T": 64, "dropout_p": None, "u_max": 0.5, "gate": True, "model": None},
    "attack": {"seed": 0, "split": "test", "attacks": ["universal", "fgsm", "pgd"],
               "eps_grid": list(pipeline.DEFAULT_EPS_GRID), "steps": 10, "step_size_frac": 0.25, "passes": 5,
               "T": 64, "dropout_p": None, "u_max": 0.5, "gate": True, "table_eps": 0.0125, "model": None},
    "cert": {"seed": 0, "split": "test", "eps_grid": list(pipeline.DEFAULT_EPS_GRID), "T": 64, "dropout_p": None,
             "u_max": 0.5, "gate": True, "table_eps": 0.0125, "model": None},
    "drift": {"seed": 0, "field_split": "test", "window": 500, "threshold": 0.5,
              "direction": "field_over_train", "model": None},
    "report": {"seed": 0, "inputs": [], "formats": ["json", "csv"]},
}
REQUIRED = {
    "gen-data": ("out",),
    "train": ("data", "out"),
    "eval": ("data", "weights", "out"),
    "attack": ("data", "weights", "out"),
    "cert": ("data", "weights", "out"),
    "drift": ("weights", "train_data", "field_data", "out"),
    "report": ("inputs", "out"),
}
PAPER_SCHEDULE = {"epochs": 1000, "batch_size": 6, "lr": 1e-4}


class CliUsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliUsageError(f"{self.prog}: {message}")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _counts(text: str) -> dict:
    out = {}
    for part in _names(text):
        key, _, value = part.partition("=")
        out[key] = int(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file with option values (flags override it)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")

    gate = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    gate.add_argument("--T", type=int, help="dropout passes for the variation ratio")
    gate.add_argument("--dropout-p", dest="dropout_p", type=float)
    gate.add_argument("--u-max", dest="u_max", type=float)
    gate.add_argument("--no-gate", dest="gate", action="store_false", help="count every frame as confident")
    gate.add_argument("--model", help="model label used in reports")

    parser = _Parser(prog="certwatch", description=__doc__.splitlines()[0], parents=[common],
                     argument_default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="render a synthetic dataset", argument_default=argparse.SUPPRESS)
    p.add_argument("--style", choices=STYLES)
    p.add_argument("--counts", type=_counts, help="e.g. train=400,val=100,test=200")
    p.add_argument("--levels", type=_names)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--texture-density", dest="texture_density", type=float)

    p = sub.add_parser("train", parents=[common], help="train a detector", argument_default=argparse.SUPPRESS)
    p.add_argument("--data")
    p.add_argument("--loss", choices=LOSSES)
    p.add_argument("--ibp", choices=IBP_MODES)
    p.add_argument("--eps", type=float, help="final IBP radius")
    p.add_argument("--ibp-weight", dest="ibp_weight", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--reduction", choices=("avg", "max", "fc"))
    p.add_argument("--dropout-p", dest="dropout_p", type=float)
    p.add_argument("--lr-decay-at", dest="lr_decay_at", type=float)
    p.add_argument("--lr-decay-epoch", dest="lr_decay_epoch", type=float)
    p.add_argument("--paper-schedule", dest="paper_schedule", action="store_true",
                   help="1000 epochs, batch 6, lr 1e-4")
    p.add_argument("--model")

    p = sub.add_parser("eval", parents=[common, gate], help="confusion tables and metrics",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--data")
    p.add_argument("--weights")
    p.add_argument("--split")

    p = sub.add_parser("attack", parents=[common, gate], help="attack sweep", argument_default=argparse.SUPPRESS)
    p.add_argument("--data")
    p.add_argument("--weights")
    p.add_argument("--split")
    p.add_argument("--attacks", type=_names, help=f"comma list from {KINDS}")
    p.add_argument("--eps-grid", dest="eps_grid", type=_floats)
    p.add_argument("--steps", type=int)
    p.add_argument("--step-size-frac", dest="step_size_frac", type=float)
    p.add_argument("--passes", type=int)
    p.add_argument("--table-eps", dest="table_eps", type=float)

    p = sub.add_parser("cert", parents=[common, gate], help="certified fraction sweep",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--data")
    p.add_argument("--weights")
    p.add_argument("--split")
    p.add_argument("--eps-grid", dest="eps_grid", type=_floats)
    p.add_argument("--table-eps", dest="table_eps", type=float)

    p = sub.add_parser("drift", parents=[common], help="likelihood-ratio drift verdict",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--weights")
    p.add_argument("--train-data", dest="train_data")
    p.add_argument("--field-data", dest="field_data")
    p.add_argument("--field-split", dest="field_split")
    p.add_argument("--window", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--direction", choices=RATIO_DIRECTIONS)
    p.add_argument("--model")

    p = sub.add_parser("report", parents=[common], help="collate reports into a summary table",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("inputs", nargs="*")
    p.add_argument("--formats", type=_names)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    command = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    cfg = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise CliUsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise CliUsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        unknown = set(file_cfg) - set(cfg) - {"out", "data", "weights", "train_data", "field_data", "inputs"}
        if unknown:
            raise CliUsageError(f"unknown keys in {args.config}: {sorted(unknown)}")
        cfg.update(file_cfg)
    if command == "train" and (flags.get("paper_schedule") or cfg.get("paper_schedule")):
        cfg.update(PAPER_SCHEDULE)
    cfg.update(flags)
    missing = [k for k in REQUIRED[command] if not cfg.get(k)]
    if missing:
        raise CliUsageError(f"{command}: missing required option(s) {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def _checked(factory, **kwargs):
    # config objects validate themselves; bad values are a usage problem, not a crash
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as exc:
        raise CliUsageError(str(exc)) from None


def _gate(cfg: dict, model) -> GateConfig:
    p = cfg["dropout_p"] if cfg.get("dropout_p") is not None else model.config.dropout_p
    return _checked(GateConfig, T=cfg["T"], dropout_p=p, rng_seed=cfg["seed"], u_max=cfg["u_max"],
                    enabled=cfg["gate"])


def _label(cfg: dict) -> str:
    if cfg.get("model"):
        return cfg["model"]
    return Path(cfg["weights"]).parent.name or Path(cfg["weights"]).stem


def _identity(cfg: dict) -> dict:
    # where a run writes is not part of what it computed
    return {k: v for k, v in cfg.items() if k != "out"}


def _emit(out: Path, kind: str, cfg: dict, results: dict, started: float, csv: bool = False) -> dict:
    report = make_report(kind, _identity(cfg), results)
    validate_report(report)
    write_report(report, out / f"{kind}.json")
    if csv:
        write_report(report, out / f"{kind}.csv", "csv")
    write_sidecar(out / f"{kind}.json", started)
    return report


def run(cfg: dict, command: str) -> int:
    started = time.time()
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.config.json").write_text(canonical_json(cfg))

    if command == "gen-data":
        ds = _checked(DatasetConfig, counts=cfg["counts"], levels=tuple(cfg["levels"]), style=cfg["style"],
                      seed=cfg["seed"], width=cfg["width"], height=cfg["height"],
                      texture_density=cfg["texture_density"])
        results = pipeline.gen_data(ds, out / "data")
        _emit(out, "gen-data", cfg, results, started)
        return EXIT_OK

    if command == "train":
        tcfg = _checked(TrainConfig, loss=cfg["loss"], ibp=cfg["ibp"], epochs=cfg["epochs"],
                        batch_size=cfg["batch_size"], lr=cfg["lr"], seed=cfg["seed"], eps=cfg["eps"],
                        ibp_weight=cfg["ibp_weight"], lr_decay_at=cfg["lr_decay_at"],
                        lr_decay_epoch=cfg["lr_decay_epoch"])
        dcfg = _checked(DetectorConfig, reduction=cfg["reduction"], head_mode=tcfg.head_mode,
                        dropout_p=cfg["dropout_p"])

        def log(rec):
            print(f"epoch {rec.epoch:4d} loss {rec.loss:.4f} lr {rec.lr:.2e} eps {rec.eps:.4g}", file=sys.stderr)

        _, results = pipeline.train_model(cfg["data"], tcfg, dcfg, out, log)
        results["model"] = cfg["model"] or (cfg["loss"] + ("" if cfg["ibp"] == "none" else f"+ibp_{cfg['ibp']}"))
        _emit(out, "train", cfg, results, started)
        return EXIT_OK

    if command == "report":
        reports = [read_report(p) for p in cfg["inputs"]]
        for rep in reports:
            validate_report(rep)
        results = {"rows": pipeline.summary_rows(reports), "n_inputs": len(reports)}
        report = make_report("summary", _identity(cfg), results)
        validate_report(report)
        if "json" in cfg["formats"]:
            write_report(report, out / "summary.json")
        if "csv" in cfg["formats"]:
            write_report(report, out / "summary.csv", "csv")
        write_sidecar(out / "summary.json", started)
        attack_cells = [dict(c, attack=f"{r['results'].get('model', '')}:{c['attack']}")
                        for r in reports if r["kind"] == "attack" for c in r["results"]["cells"]]
        if attack_cells:
            plotting.attack_curves(attack_cells, out / "summary_attacks.png")
            plotting.haarpsi_curve(attack_cells, out / "summary_haarpsi.png")
        return EXIT_OK

    model = load_weights(cfg["weights"])
    if command == "eval":
        results = pipeline.evaluate(model, cfg["data"], cfg["split"], _gate(cfg, model))
        results["model"] = _label(cfg)
        _emit(out, "eval", cfg, results, started)
    elif command == "attack":
        for kind in cfg["attacks"]:
            if kind not in KINDS:
                raise CliUsageError(f"unknown attack {kind!r}; expected one of {KINDS}")
        results = pipeline.attack_sweep(model, cfg["data"], cfg["attacks"], cfg["eps_grid"], cfg["split"],
                                        _gate(cfg, model), cfg["steps"], cfg["step_size_frac"], cfg["passes"],
                                        cfg["seed"], out)
        results["model"] = _label(cfg)
        _emit(out, "attack", cfg, results, started, csv=True)
        plotting.attack_curves(results["cells"], out / "attack_ratio.png")
        plotting.haarpsi_curve(results["cells"], out / "attack_haarpsi.png")
    elif command == "cert":
        results = pipeline.certify_sweep(model, cfg["data"], cfg["eps_grid"], cfg["split"], _gate(cfg, model))
        results["model"] = _label(cfg)
        _emit(out, "cert", cfg, results, started, csv=True)
    elif command == "drift":
        results = pipeline.drift(model, cfg["train_data"], cfg["field_data"], cfg["field_split"], cfg["window"],
                                 cfg["threshold"], cfg["direction"])
        results["model"] = _label(cfg)
        _emit(out, "drift", cfg, results, started)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        cfg = resolve_config(args)
        return run(cfg, args.command)
    except (CliUsageError, UsageError, ConfigError, AttackError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetValidationError, BadMagicError, UnsupportedVersionError, TruncatedFileError,
            ReportValidationError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DatasetError, ContainerError, ReportError, TrainingError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
