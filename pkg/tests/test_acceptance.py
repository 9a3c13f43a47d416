"""Acceptance gate: one PASS/FAIL line per criterion.

Trained detectors and rendered datasets are cached under the pytest cache,
keyed by a digest of the package sources and the run configuration, so a
second run only re-evaluates.  Delete ``.pytest_cache`` to retrain.
"""

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pytest

import certwatch
from certwatch import tensor as T
from certwatch.attacks import AttackSpec, build_universal, evaluate_attack, run_attack
from certwatch.cli import EXIT_OK, main
from certwatch.confidence import GateConfig, assess, compute_lr_baselines, drift_check
from certwatch.datagen import DatasetConfig, build_dataset, load_arrays
from certwatch.haarpsi import haarpsi, mean_haarpsi
from certwatch.ibp import certify, interval_forward
from certwatch.metrics import Counts, derive_metrics
from certwatch.model import DetectorConfig, build_detector, load_weights, save_weights
from certwatch.rng import make_rng
from certwatch.training import TrainConfig, train

from gradcases import CASES
from oracles import conv2d_loop, gradcheck, linear_loop, pool_loop

pytestmark = pytest.mark.slow

SEEDS = (0, 1, 2)
TABLE_EPS = 0.0125


def verdict(capsys, n: int, passed: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {n:2d} {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, detail


def _source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(certwatch.__file__).parent.rglob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


class Store:
    """Datasets and trained weights reused across criteria and across runs."""

    def __init__(self, root: Path):
        self.root = root
        self.src = _source_digest()
        self._arrays = {}
        self._models = {}

    def _key(self, payload: dict) -> str:
        blob = json.dumps({"src": self.src, **payload}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def dataset(self, style: str = "A") -> Path:
        cfg = DatasetConfig(style=style, seed=0 if style == "A" else 100)
        path = self.root / f"data-{style}-{self._key(cfg.snapshot())}"
        if not (path / "manifest.json").exists():
            build_dataset(cfg, path)
        return path

    def arrays(self, split: str, style: str = "A"):
        if (split, style) not in self._arrays:
            self._arrays[split, style] = load_arrays(self.dataset(style), split)
        return self._arrays[split, style]

    def model(self, loss: str, ibp: str = "none", seed: int = 0, reduction: str = "avg"):
        tcfg = TrainConfig(loss=loss, ibp=ibp, seed=seed)
        dcfg = DetectorConfig(reduction=reduction, head_mode=tcfg.head_mode)
        path = self.root / f"model-{loss}-{ibp}-{reduction}-{seed}-{self._key({'t': repr(tcfg), 'd': repr(dcfg)})}.vcd"
        if path not in self._models:
            if not path.exists():
                frames, labels, _ = self.arrays("train")
                model = build_detector(dcfg, seed)
                train(model, frames, labels, tcfg)
                save_weights(model, path)
            self._models[path] = load_weights(path)
        return self._models[path]


@pytest.fixture(scope="module")
def store(request):
    return Store(Path(request.config.cache.mkdir("certwatch-acceptance")))


def _accuracy(model, frames, labels) -> float:
    return float(np.mean(model.predict(frames).predicted == labels))


def _counts(model, frames, labels, gate=None):
    a = assess(model, frames, gate or GateConfig(dropout_p=model.config.dropout_p))
    pos = a.predicted == 1
    return {
        "conf_tp": int((pos & a.confident & (labels == 1)).sum()),
        "conf_fp": int((pos & a.confident & (labels == 0)).sum()),
        "tp": int((pos & (labels == 1)).sum()),
    }


def test_criterion_01_gradients(capsys):
    start = time.time()
    worst = {}
    for name, make in sorted(CASES.items()):
        worst[name] = max(gradcheck(*make(np.random.default_rng([i, 1001]))) for i in range(100))
    elapsed = time.time() - start
    name = max(worst, key=worst.get)
    ok = worst[name] < 1e-3 and elapsed < 120
    verdict(capsys, 1, ok, f"{len(worst)} ops/losses x 100 instances, worst rel. err {worst[name]:.2e} ({name}), "
                           f"{elapsed:.0f}s")


def test_criterion_02_loop_oracles(capsys):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(50):
        k = int(rng.integers(1, 6))
        stride, pad = int(rng.integers(1, 4)), int(rng.integers(0, 3))
        x = rng.standard_normal((2, int(rng.integers(1, 4)), int(rng.integers(k, 12)), int(rng.integers(k, 12))))
        x = x.astype(np.float32)
        w = rng.standard_normal((int(rng.integers(1, 5)), x.shape[1], k, k)).astype(np.float32)
        b = rng.standard_normal(w.shape[0]).astype(np.float32)
        worst = max(worst, np.abs(T.conv2d(x, w, b, stride, pad).data - conv2d_loop(x, w, b, stride, pad)).max())
        size = int(rng.integers(1, min(x.shape[2:]) + 1))
        for kind in ("avg", "max"):
            for glob in (True, False):
                got = T.pool2d(x, kind, glob, size).data
                worst = max(worst, np.abs(got - pool_loop(x, kind, glob, size)).max())
        lw = rng.standard_normal((x.shape[1] * 3, 4)).astype(np.float32)
        lx = rng.standard_normal((3, x.shape[1] * 3)).astype(np.float32)
        lb = rng.standard_normal(4).astype(np.float32)
        worst = max(worst, np.abs(T.linear(lx, lw, lb).data - linear_loop(lx, lw, lb)).max())
    verdict(capsys, 2, worst < 1e-5, f"50 random conv/pool/linear instances, max abs diff {worst:.2e}")


def test_criterion_03_ibp_soundness(store, capsys):
    model = store.model("ul_combined", "one_sided")
    frames, _, _ = store.arrays("test")
    picks = frames[make_rng(3, "ibp-frames").choice(len(frames), 20, replace=False)]
    violations, checked = 0, 0
    for eps in (0.0125, 0.025, 0.05):
        for i, x in enumerate(picks):
            bounds = interval_forward(model, x, eps)
            rng = make_rng(3, "ibp-samples", i, int(eps * 1e4))
            delta = rng.uniform(-eps, eps, (1000,) + x.shape)
            delta[:100] = np.sign(delta[:100]) * eps
            batch = np.clip(x.astype(np.float64) + delta, 0.0, 1.0)
            with T.no_grad():
                for j in range(0, 1000, 100):
                    logits, local = model.logits_and_local(T.Tensor(batch[j : j + 100], dtype=np.float64))
                    violations += int((~bounds.logits.contains(logits.data, 1e-5)).any(axis=1).sum())
                    violations += int((~bounds.local_logits.contains(local.data, 1e-5)).any(axis=(1, 2)).sum())
                    checked += 100
    # eps=0 collapse, compared with the ordinary forward pass at the precision the bounds were computed in
    collapse = 0.0
    for dtype in (np.float32, np.float64):
        zero = interval_forward(model, picks, 0.0, dtype=dtype)
        with T.no_grad():
            logits, local = model.logits_and_local(T.Tensor(picks, dtype=dtype))
        for iv, ref in ((zero.logits, logits.data), (zero.local_logits, local.data)):
            collapse = max(collapse, np.abs(iv.lower - ref).max(), np.abs(iv.upper - ref).max())
    ok = violations == 0 and collapse < 1e-6
    verdict(capsys, 3, ok, f"{violations} violations in {checked} perturbed forwards; eps=0 collapse {collapse:.1e}")


def test_criterion_04_certified_vs_attack(store, capsys):
    start = time.time()
    model = store.model("ul_combined", "one_sided")
    frames, labels, _ = store.arrays("test")
    cheats = frames[labels == 1]
    train_frames, train_labels, _ = store.arrays("train")
    gate = GateConfig(dropout_p=model.config.dropout_p)
    problems, lines = [], []
    for eps in (TABLE_EPS, 0.025):
        cert = certify(model, cheats, eps, gate)
        frac = float(cert.mean())
        universal = build_universal(model, train_frames[train_labels == 1], eps)
        ratios = {}
        for kind in ("universal", "fgsm", "pgd"):
            res = evaluate_attack(model, cheats, AttackSpec(kind, eps), gate, universal if kind == "universal" else None)
            ratios[kind] = res.ratio
            if res.ratio is None or frac > res.ratio + 1e-12:
                problems.append(f"{kind}@{eps}")
        adv = run_attack(model, cheats, AttackSpec("pgd", eps))
        flipped = int((cert & (model.predict(adv).predicted != 1)).sum())
        if flipped:
            problems.append(f"{flipped} certified frames flipped @{eps}")
        lines.append(f"eps {eps}: cert {frac:.3f} <= " + "/".join(f"{k} {v:.3f}" for k, v in ratios.items())
                     + f", flipped {flipped}")
    elapsed = time.time() - start
    ok = not problems and elapsed < 600
    verdict(capsys, 4, ok, "; ".join(lines) + f"; {elapsed:.0f}s" + (f"; problems {problems}" if problems else ""))


def test_criterion_05_learnability(store, capsys):
    frames, labels, _ = store.arrays("test")
    acc = {r: [_accuracy(store.model("ce_combined", seed=s, reduction=r), frames, labels) for s in SEEDS]
           for r in ("avg", "fc", "max")}
    mean = {r: float(np.mean(v)) for r, v in acc.items()}
    ok = min(acc["avg"]) >= 0.90 and mean["avg"] >= mean["fc"] and mean["avg"] >= mean["max"]
    detail = ", ".join(f"{r} {['%.3f' % a for a in v]} mean {mean[r]:.4f}" for r, v in acc.items())
    verdict(capsys, 5, ok, detail)


def test_criterion_06_overlay_levels(store, capsys):
    model = store.model("ce_combined")
    frames, labels, records = store.arrays("test")
    pred = model.predict(frames).predicted
    level = np.array([r.get("overlay_level") or "" for r in records])
    acc = {lv: float(np.mean(pred[level == lv] == 1)) for lv in ("minimal", "medium", "full")}
    verdict(capsys, 6, acc["minimal"] <= acc["medium"],
            ", ".join(f"{k} {v:.3f} (n={int((level == k).sum())})" for k, v in acc.items()))


def test_criterion_07_confidence_gating(store, capsys):
    frames, labels, _ = store.arrays("test")
    rows = []
    ok = True
    for s in SEEDS:
        c = _counts(store.model("ul_combined", seed=s), frames, labels)
        ok &= c["conf_fp"] == 0 and c["conf_tp"] >= 0.5 * c["tp"]
        rows.append(f"seed {s}: confident TP {c['conf_tp']} FP {c['conf_fp']}, ungated TP {c['tp']}")
    verdict(capsys, 7, ok, "; ".join(rows))


def test_criterion_08_metric_anchors(capsys):
    m = derive_metrics(Counts(TP=434, FN=1056, FP=96, TN=1394))
    got = (round(m.sensitivity, 4), round(m.precision, 4), round(m.accuracy, 4))
    p = derive_metrics(Counts(TP=519, FN=752, FP=0, TN=1457)).precision
    verdict(capsys, 8, got == (0.2913, 0.8189, 0.6134) and p == 1.0,
            f"sensitivity/precision/accuracy {got}, zero-FP precision {p}")


def test_criterion_09_drift(store, capsys):
    a_train, _, _ = store.arrays("train")
    a_field, _, _ = store.arrays("test")
    b_field, _, _ = store.arrays("test", "B")
    models = {s: store.model("ul_combined", seed=s) for s in SEEDS}
    start = time.time()
    rows, ok = [], True
    for s, model in models.items():
        base = compute_lr_baselines(model, a_train, "train")
        same = drift_check(base, compute_lr_baselines(model, a_field[-500:], "field"))
        shifted = drift_check(base, compute_lr_baselines(model, b_field[-500:], "field"))
        ok &= (not same.retrain) and shifted.retrain
        rows.append(f"seed {s}: A->A min ratio {same.min_ratio:.2f} retrain={same.retrain}, "
                    f"A->B min ratio {shifted.min_ratio:.2f} retrain={shifted.retrain}")
    elapsed = time.time() - start
    verdict(capsys, 9, ok and elapsed < 600, "; ".join(rows) + f"; {elapsed:.0f}s")


def _table_ratios(store, model) -> dict:
    frames, labels, _ = store.arrays("test")
    train_frames, train_labels, _ = store.arrays("train")
    cheats = frames[labels == 1]
    gate = GateConfig(dropout_p=model.config.dropout_p)
    universal = build_universal(model, train_frames[train_labels == 1], TABLE_EPS)
    return {k: evaluate_attack(model, cheats, AttackSpec(k, TABLE_EPS), gate,
                               universal if k == "universal" else None).ratio for k in ("universal", "fgsm", "pgd")}


def test_criterion_10_attack_ordering(store, capsys):
    plain = _table_ratios(store, store.model("mse_combined"))
    robust = _table_ratios(store, store.model("ul_combined", "one_sided"))
    ordered = plain["pgd"] <= plain["fgsm"] <= plain["universal"]
    gain = robust["pgd"] - plain["pgd"]
    fmt = lambda r: "/".join(f"{v:.3f}" for v in r.values())  # noqa: E731
    verdict(capsys, 10, ordered and gain >= 0.15,
            f"MSE universal/fgsm/pgd {fmt(plain)}; UL+one-sided {fmt(robust)}; pgd gain {gain:+.3f}")


def test_criterion_11_one_sided_asymmetry(store, capsys):
    frames, labels, _ = store.arrays("test")
    rows, ok = [], True
    for s in SEEDS:
        one = _counts(store.model("mse_combined", "one_sided", s), frames, labels)["conf_fp"]
        two = _counts(store.model("mse_combined", "two_sided", s), frames, labels)["conf_fp"]
        ok &= one <= two
        rows.append(f"seed {s}: one-sided FP {one}, two-sided FP {two}")
    verdict(capsys, 11, ok, "; ".join(rows))


def test_criterion_12_haarpsi(store, capsys):
    frames, _, _ = store.arrays("test")
    suite = frames[:10].astype(np.float64)
    identity = min(haarpsi(x, x) for x in suite)
    scores = []
    for amp in (0.0125, 0.05, 0.125):
        noise = make_rng(12, "haarpsi-suite", int(amp * 1e4)).uniform(-amp, amp, suite.shape)
        scores.append(mean_haarpsi(suite, np.clip(suite + noise, 0, 1)))
    ok = abs(identity - 1.0) <= 1e-6 and scores[0] > scores[1] > scores[2]
    verdict(capsys, 12, ok, f"identity {identity:.7f}; mean scores {[round(s, 4) for s in scores]}")


def test_criterion_13_reproducibility(tmp_path, monkeypatch, capsys):
    def pipeline(root: Path) -> dict:
        # the same command lines, run from two different working directories
        root.mkdir()
        monkeypatch.chdir(root)
        small = ["--counts", "train=24,val=4,test=12", "--width", "96", "--height", "54"]
        data, weights = "gen/data", "train/weights.vcd"
        codes = [
            main(["gen-data", "--seed", "5", "--out", "gen", *small]),
            main(["train", "--seed", "5", "--data", data, "--epochs", "3", "--out", "train"]),
            main(["eval", "--seed", "5", "--data", data, "--weights", weights, "--T", "16", "--out", "ev"]),
            main(["attack", "--seed", "5", "--data", data, "--weights", weights, "--T", "16", "--eps-grid", "0.0125",
                  "--passes", "2", "--out", "at"]),
        ]
        assert codes == [EXIT_OK] * 4
        files = ["gen/gen-data.json", "train/train.json", "train/weights.vcd", "ev/eval.json", "at/attack.json",
                 "at/attack.csv"]
        return {f: (root / f).read_bytes() for f in files}

    a, b = pipeline(tmp_path / "a"), pipeline(tmp_path / "b")
    differ = [f for f in a if a[f] != b[f]]
    verdict(capsys, 13, not differ, f"{len(a)} artifacts compared, differing: {differ or 'none'}")
