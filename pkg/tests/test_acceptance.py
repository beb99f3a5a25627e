"""End-to-end acceptance criteria.

Each test prints one ``PASS`` or ``FAIL`` line, then asserts. Run with
``pytest tests/test_acceptance.py -v`` to see the lines in the terminal summary.
"""

import statistics
import time

import numpy as np
import pytest

from mbcrnet.checks import model_check, primitive_checks
from mbcrnet.cli import main
from mbcrnet.data import balance_classes, make_folds, preprocess_records
from mbcrnet.model import build_model, load_checkpoint, mini_spec, paper_spec, save_checkpoint
from mbcrnet.synth import SynthConfig, generate
from mbcrnet.tensor import Tensor, conv2d
from mbcrnet.train import Metrics, TrainConfig, crossval, evaluate, lead_ablation, model_inputs, train
from oracles import conv2d_loops

_LINES = []


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is None:
        return
    reporter.write_line("")
    reporter.write_sep("=", "acceptance criteria")
    for line in _LINES:
        reporter.write_line(line)


def verdict(number, name, ok, detail, started):
    line = f"{'PASS' if ok else 'FAIL'} [{number}] {name}: {detail} ({time.perf_counter() - started:.1f} s)"
    _LINES.append(line)
    print(line)
    assert ok, line


def inversion_set(n, seed):
    records = generate(SynthConfig(seed=seed, n_records=n, abnormality="lead_localized_inversion"))
    ids, X, y, rejected = preprocess_records(records)
    assert not rejected
    return ids, X, y


# Expected output sizes for the full-size profile, one trace entry per layer.
PAPER_TABLE = {
    "conv1": (8, 8, 976),
    "block1.branch": (8, 8, 464), "block1.residual": (8, 8, 464),
    "block2.branch": (16, 8, 208), "block2.residual": (16, 8, 208),
    "block3.branch": (32, 8, 80), "block3.residual": (32, 8, 80),
    "block4.branch": (64, 8, 16), "block4.residual": (64, 8, 16),
    "fc1": (1000,), "fc2": (2,),
}
PAPER_HEAD = {"T": {"head": (64, 1, 16)}, "L": {"head": (64, 8, 1)}, "F": {}}


def test_1_shape_conformance():
    t0 = time.perf_counter()
    x = np.random.default_rng(0).normal(size=(1, 8, 2000))
    mismatches = []
    for variant in "TLF":
        trace = dict(build_model(paper_spec(variant), 0).shape_trace(x))
        expected = {**PAPER_TABLE, **PAPER_HEAD[variant]}
        if trace != expected:
            mismatches.append(variant)
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 60
    verdict(1, "shape conformance", ok, f"mismatching variants {mismatches or 'none'}", t0)


@pytest.mark.slow
def test_2_gradient_suite():
    t0 = time.perf_counter()
    errors = primitive_checks(seed=0, h=1e-5)
    for variant in "TLF":
        errors[f"model.mini.{variant}"] = model_check(variant, seed=0, h=1e-5)
    worst_name = max(errors, key=errors.get)
    elapsed = time.perf_counter() - t0
    ok = errors[worst_name] < 1e-4 and elapsed < 600
    verdict(2, "gradient suite", ok,
            f"{len(errors)} checks, max rel err {errors[worst_name]:.2e} at {worst_name}", t0)


def random_conv_case(rng):
    n, c, o = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    h, w = int(rng.integers(1, 5)), int(rng.integers(1, 25))
    kh, kw = int(rng.integers(1, h + 1)), int(rng.integers(1, min(w, 7) + 1))
    if rng.random() < 0.35:
        padding, stride = "same", (1, 1)
    else:
        padding, stride = "valid", (int(rng.integers(1, 3)), int(rng.integers(1, 4)))
    return rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, kh, kw)), stride, padding


def test_3_convolution_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        x, k, stride, padding = random_conv_case(rng)
        got = conv2d(Tensor(x), Tensor(k), stride, padding).data
        want = conv2d_loops(x, k, stride, padding)
        assert got.shape == want.shape
        worst = max(worst, float(np.max(np.abs(got - want))))
    verdict(3, "convolution oracle", worst <= 1e-12, f"200 cases, max abs diff {worst:.1e}", t0)


def overfit_run(seed):
    ids, X, y = inversion_set(32, seed)
    spec = mini_spec("L")
    inputs = model_inputs(X, spec)
    model, trace = train(build_model(spec, seed), inputs, y, TrainConfig(epochs=200, seed=seed))
    return evaluate(model, inputs, y).acc, trace


def test_4_overfit():
    t0 = time.perf_counter()
    acc, trace = overfit_run(0)
    acc2, trace2 = overfit_run(0)
    deterministic = acc == acc2 and trace == trace2
    elapsed = time.perf_counter() - t0
    ok = acc >= 0.95 and deterministic and elapsed < 2 * 300
    verdict(4, "overfit 32 samples", ok,
            f"train acc {acc:.3f} after 200 epochs, deterministic={deterministic}", t0)


@pytest.mark.slow
def test_5_fusion_benefit():
    t0 = time.perf_counter()
    margins, rows = [], []
    for seed in range(3):
        ids, X, y = inversion_set(400, seed)
        result = lead_ablation(ids, X, y, TrainConfig(epochs=20, n_folds=5, seed=seed, variant="L"))
        lead, best = result.best_lead
        margins.append(result.fused_acc - best)
        rows.append(f"seed {seed}: fused {result.fused_acc:.3f} vs {lead} {best:.3f}")
    median = statistics.median(margins)
    elapsed = time.perf_counter() - t0
    ok = median >= -0.02 and elapsed < 1800
    verdict(5, "fusion benefit", ok, f"median margin {100 * median:+.1f} pts; " + "; ".join(rows), t0)


def test_6_crossval_protocol():
    t0 = time.perf_counter()
    raw = generate(SynthConfig(seed=5, n_records=137, class_balance=0.4))
    ids = [r.id for r in raw]
    labels = [r.label for r in raw]
    failures = 0
    for seed in range(100):
        kept_ids, kept_labels = balance_classes(ids, labels, seed)
        plan = make_folds(kept_ids, kept_labels, seed, 10)
        label_of = dict(zip(kept_ids, kept_labels))
        tests = [plan.test_ids(f) for f in range(10)]
        flat = [i for t in tests for i in t]
        partition = len(flat) == len(set(flat)) == len(kept_ids) and set(flat) == set(kept_ids)
        counts = [sum(label_of[i] for i in t) for t in tests]
        balanced = all(abs((len(t) - c) - c) <= 1 for t, c in zip(tests, counts))
        failures += not (partition and balanced)
    ids_cv, X, y = inversion_set(40, 3)
    result = crossval(ids_cv, X, y, TrainConfig(epochs=1, n_folds=10, batch_size=16))
    leaks = sum(bool(set(f.train_ids) & set(f.test_ids)) for f in result.folds)
    covered = sorted(i for f in result.folds for i in f.test_ids) == sorted(ids_cv)
    ok = failures == 0 and leaks == 0 and covered
    verdict(6, "cross-validation protocol", ok,
            f"{failures}/100 seeds violate invariants, {leaks} leaking folds", t0)


def test_7_pipeline_determinism(tmp_path):
    t0 = time.perf_counter()
    out = str(tmp_path)
    assert main(["synth", "--n", "24", "--seed", "11", "--out", out]) == 0
    names = ["cache.mbcr", "rejections.txt", "model.mbcr", "loss_trace.txt", "train_report.txt"]
    snapshots = []
    for _ in range(2):
        assert main(["preprocess", "--out", out]) == 0
        assert main(["train", "--out", out, "--epochs", "2", "--batch-size", "8", "--seed", "4"]) == 0
        snapshots.append({name: (tmp_path / name).read_bytes() for name in names})
    differing = [name for name in names if snapshots[0][name] != snapshots[1][name]]
    verdict(7, "pipeline determinism", not differing, f"differing artifacts: {differing or 'none'}", t0)


def test_8_checkpoint_roundtrip(tmp_path):
    t0 = time.perf_counter()
    ids, X, y = inversion_set(40, 8)
    spec = mini_spec("T")
    inputs = model_inputs(X, spec)
    model, _ = train(build_model(spec, 1), inputs, y, TrainConfig(epochs=3, batch_size=8, seed=1))
    path = tmp_path / "m.mbcr"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    before, after = evaluate(model, inputs, y), evaluate(loaded, inputs, y)
    same_probs = loaded.forward(inputs).tobytes() == model.forward(inputs).tobytes()
    verdict(8, "checkpoint round-trip", before == after and same_probs, f"{before} vs {after}", t0)


def recount(pred, label):
    tp = tn = fp = fn = 0
    for p, t in zip(pred, label):
        if p == 1 and t == 1:
            tp += 1
        elif p == 0 and t == 0:
            tn += 1
        elif p == 1:
            fp += 1
        else:
            fn += 1
    acc = (tp + tn) / len(pred)
    se = tp / (tp + fn) if tp + fn else None
    return (tp, tn, fp, fn), acc, se


def test_9_metrics_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(9)
    bad = 0
    for trial in range(1000):
        n = int(rng.integers(1, 60))
        pred = rng.integers(0, 2, size=n)
        label = np.zeros(n, dtype=int) if trial % 10 == 0 else rng.integers(0, 2, size=n)
        m = Metrics.from_predictions(pred, label)
        counts, acc, se = recount(pred.tolist(), label.tolist())
        ok = (m.tp, m.tn, m.fp, m.fn) == counts and m.acc == acc
        ok &= np.isnan(m.se) if se is None else m.se == se
        bad += not ok
    verdict(9, "metrics correctness", bad == 0, f"{bad}/1000 disagreements (100 with no positives)", t0)
