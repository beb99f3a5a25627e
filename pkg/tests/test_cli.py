import json
import subprocess
import sys

import numpy as np
import pytest

from mbcrnet.cli import main
from mbcrnet.data import load_cache, read_manifest, write_manifest, write_record
from mbcrnet.synth import SynthConfig, generate


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """A 40-record synthetic corpus plus one 7 s record, preprocessed."""
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--n", "40", "--seed", "7", "--out", str(root),
                 "--abnormality", "lead_localized_inversion"]) == 0
    short = generate(SynthConfig(seed=99, n_records=1, duration_s=7.0))[0]
    short.id = "short7s"
    write_record(short, root / "records" / "short7s.ecg")
    lines = (root / "manifest.txt").read_text().splitlines() + ["records/short7s.ecg"]
    write_manifest(lines, root / "manifest.txt")
    assert main(["preprocess", "--out", str(root)]) == 0
    return root


def test_synth_outputs_and_rerun(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--n", 40, "--seed", 7, "--balance", 0.5, "--out", tmp_path / "a")
    assert code == 0 and "20 normal, 20 abnormal" in out
    run(capsys, "synth", "--n", 40, "--seed", 7, "--out", tmp_path / "b")
    files_a = sorted((tmp_path / "a" / "records").iterdir())
    assert len(files_a) == 40 and len(read_manifest(tmp_path / "a" / "manifest.txt")) == 40
    for fa in files_a:
        assert fa.read_bytes() == (tmp_path / "b" / "records" / fa.name).read_bytes()
    assert (tmp_path / "a" / "manifest.txt").read_bytes() == (tmp_path / "b" / "manifest.txt").read_bytes()


def test_preprocess_rejects_short_and_is_stable(corpus, tmp_path, capsys):
    assert (corpus / "rejections.txt").read_text() == "short7s\ttoo short\n"
    ids, X, y = load_cache(corpus / "cache.mbcr")
    assert len(ids) == 40 and X.shape == (40, 8, 2000)
    code, out, _ = run(capsys, "preprocess", "--manifest", corpus / "manifest.txt",
                       "--cache", tmp_path / "again.mbcr")
    assert code == 0 and "rejected 1" in out
    assert (tmp_path / "again.mbcr").read_bytes() == (corpus / "cache.mbcr").read_bytes()


def test_train_then_eval_agree(corpus, tmp_path, capsys):
    args = ["--cache", corpus / "cache.mbcr", "--out", tmp_path, "--epochs", 2, "--batch-size", 16]
    code, train_out, _ = run(capsys, "train", *args)
    assert code == 0
    assert (tmp_path / "model.mbcr").exists()
    assert len((tmp_path / "loss_trace.txt").read_text().splitlines()) == 2
    report = (tmp_path / "train_report.txt").read_text()
    assert report.startswith("# config ")
    assert json.loads(report.splitlines()[0][len("# config "):])["epochs"] == 2
    code, eval_out, _ = run(capsys, "eval", *args)
    assert code == 0 and eval_out == train_out
    assert "acc=" in eval_out and "se=" in eval_out


def test_crossval_command(corpus, tmp_path, capsys):
    code, out, _ = run(capsys, "crossval", "--cache", corpus / "cache.mbcr", "--out", tmp_path,
                       "--variant", "L", "--profile", "mini", "--folds", 2, "--epochs", 1)
    assert code == 0
    rows = [line.split()[0] for line in out.splitlines()]
    assert rows == ["Fold", "Fold-1", "Fold-2", "Average"]
    metrics = (tmp_path / "crossval_metrics.txt").read_text()
    assert "L.mean.acc=" in metrics


def test_gradcheck_command(capsys):
    code, out, _ = run(capsys, "gradcheck", "--variant", "T")
    assert code == 0
    assert "model.mini.T" in out and "FAIL" not in out


def test_bad_checkpoint_names_file(corpus, tmp_path, capsys):
    bad = tmp_path / "broken.mbcr"
    bad.write_bytes(b"garbage")
    code, _, err = run(capsys, "eval", "--cache", corpus / "cache.mbcr", "--checkpoint", bad)
    assert code != 0
    assert err.startswith("error: container:") and "broken.mbcr" in err


def test_missing_manifest(tmp_path, capsys):
    code, _, err = run(capsys, "preprocess", "--out", tmp_path)
    assert code == 1 and err.startswith("error: io:") and "manifest" in err


def test_config_file_then_flags(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 6, "seed": 3, "balance": 0.5}))
    code, out, _ = run(capsys, "synth", "--config", cfg, "--out", tmp_path / "x")
    assert code == 0 and "wrote 6 records" in out
    code, out, _ = run(capsys, "synth", "--config", cfg, "--n", 4, "--out", tmp_path / "y")
    assert "wrote 4 records" in out
    assert sorted(p.name for p in (tmp_path / "x" / "records").iterdir())[0].startswith("synth3_")


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nope": 1}))
    code, _, err = run(capsys, "synth", "--config", cfg, "--out", tmp_path)
    assert code == 1 and err.startswith("error: config:") and "nope" in err


def test_bad_record_reports_line(tmp_path, capsys):
    (tmp_path / "r.ecg").write_text("r,250,1,2,x\nII\n1\nabc\n")
    write_manifest(["r.ecg"], tmp_path / "manifest.txt")
    code, _, err = run(capsys, "preprocess", "--out", tmp_path)
    assert code == 1 and err.startswith("error: record:") and "line 4" in err


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mbcrnet.cli", "synth", "--n", "2", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "wrote 2 records" in proc.stdout
    assert np.all([p.suffix == ".ecg" for p in (tmp_path / "records").iterdir()])
