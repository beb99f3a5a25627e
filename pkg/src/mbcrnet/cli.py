"""``mbcrnet`` command line: synth, preprocess, train, eval, crossval, ablation, gradcheck.

Settings come from built-in defaults, then an optional flat JSON file
(``--config``), then command-line flags. Every failure prints one line
``error: <kind>: <message>`` to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import container
from .checks import model_check, primitive_checks
from .data import (
    RecordFormatError, load_cache, preprocess_records, read_manifest, read_record, save_cache,
    write_manifest, write_record,
)
from .model import build_model, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate
from .train import (
    Metrics, TrainConfig, TrainingError, crossval, crossval_keyvalues, evaluate,
    format_ablation_table, format_crossval_table, lead_ablation, model_inputs, train,
)

logger = logging.getLogger("mbcrnet")

DEFAULTS: Dict[str, object] = {
    "seed": 0,
    "variant": "L",
    "lead": None,
    "profile": "mini",
    "folds": 10,
    "out": ".",
    "manifest": None,
    "cache": None,
    "checkpoint": None,
    "report": None,
    # synth
    "n": 100,
    "balance": 0.5,
    "n_leads": 8,
    "sample_rate_hz": 500,
    "duration_s": 10.0,
    "noise_std": 0.05,
    "abnormality": "both",
    # training
    "optimizer": "adam",
    "learning_rate": 1e-3,
    "batch_size": 32,
    "epochs": 10,
    "dropout_rate": 0.5,
    # gradcheck
    "gradcheck_h": 1e-5,
    "gradcheck_tol": 1e-4,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def resolve_config(args: argparse.Namespace) -> Dict[str, object]:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("config", f"{args.config}: {exc}") from None
        unknown = sorted(set(loaded) - set(DEFAULTS))
        if unknown:
            raise CliError("config", f"{args.config}: unknown keys {', '.join(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _path(cfg, key: str, default_name: str) -> Path:
    value = cfg.get(key)
    return Path(value) if value else Path(cfg["out"]) / default_name


def _train_config(cfg, variant: Optional[str] = None) -> TrainConfig:
    variant = variant or cfg["variant"]
    return TrainConfig(
        optimizer=cfg["optimizer"], learning_rate=float(cfg["learning_rate"]),
        batch_size=int(cfg["batch_size"]), epochs=int(cfg["epochs"]),
        dropout_rate=float(cfg["dropout_rate"]), seed=int(cfg["seed"]),
        variant=variant, profile=cfg["profile"], lead=cfg["lead"], n_folds=int(cfg["folds"]),
    )


def _echo(cfg) -> str:
    return "# config " + json.dumps(cfg, sort_keys=True) + "\n"


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _metrics_lines(m: Metrics) -> str:
    return (
        f"tp={m.tp}\ntn={m.tn}\nfp={m.fp}\nfn={m.fn}\n"
        f"acc={m.acc!r}\nse={m.se!r}\n"
    )


def _load_data(cfg):
    cache = _path(cfg, "cache", "cache.mbcr")
    if cache.exists():
        return load_cache(cache)
    manifest = _path(cfg, "manifest", "manifest.txt")
    if not manifest.exists():
        raise CliError("io", f"neither cache {cache} nor manifest {manifest} exists")
    ids, X, y, _ = preprocess_records(read_record(p) for p in read_manifest(manifest))
    return ids, X, y


# ------------------------------------------------------------------ commands


def cmd_synth(cfg) -> int:
    out = Path(cfg["out"])
    config = SynthConfig(
        seed=int(cfg["seed"]), n_records=int(cfg["n"]), n_leads=int(cfg["n_leads"]),
        sample_rate_hz=int(cfg["sample_rate_hz"]), duration_s=float(cfg["duration_s"]),
        class_balance=float(cfg["balance"]), noise_std=float(cfg["noise_std"]),
        abnormality=cfg["abnormality"],
    )
    records = generate(config)
    try:
        (out / "records").mkdir(parents=True, exist_ok=True)
        rel = []
        for rec in records:
            write_record(rec, out / "records" / f"{rec.id}.ecg")
            rel.append(f"records/{rec.id}.ecg")
        write_manifest(rel, _path(cfg, "manifest", "manifest.txt"))
    except OSError as exc:
        raise CliError("io", f"cannot write to {out}: {exc.strerror}") from None
    n_abn = sum(r.label for r in records)
    print(f"wrote {len(records)} records: {len(records) - n_abn} normal, {n_abn} abnormal")
    return 0


def cmd_preprocess(cfg) -> int:
    manifest = _path(cfg, "manifest", "manifest.txt")
    if not manifest.exists():
        raise CliError("io", f"manifest {manifest} not found")
    records = [read_record(p) for p in read_manifest(manifest)]
    ids, X, y, rejected = preprocess_records(records)
    cache = _path(cfg, "cache", "cache.mbcr")
    cache.parent.mkdir(parents=True, exist_ok=True)
    save_cache(cache, ids, X, y)
    _write(cache.parent / "rejections.txt", "".join(f"{rid}\t{why}\n" for rid, why in rejected))
    print(f"cached {len(ids)} records ({int(np.sum(y == 0))} normal, {int(np.sum(y == 1))} abnormal); "
          f"rejected {len(rejected)}")
    return 0


def cmd_train(cfg) -> int:
    ids, X, y = _load_data(cfg)
    tc = _train_config(cfg)
    spec = tc.model_spec()
    inputs = model_inputs(X, spec, tc.lead)
    model = build_model(spec, tc.seed)
    model, trace = train(model, inputs, y, tc)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, _path(cfg, "checkpoint", "model.mbcr"))
    _write(out / "loss_trace.txt", "".join(f"{i + 1}\t{v!r}\n" for i, v in enumerate(trace)))
    metrics = evaluate(model, inputs, y)
    report = _metrics_lines(metrics)
    _write(_path(cfg, "report", "train_report.txt"), _echo(cfg) + report)
    print(report, end="")
    return 0


def cmd_eval(cfg) -> int:
    ckpt = _path(cfg, "checkpoint", "model.mbcr")
    model = load_checkpoint(ckpt)
    ids, X, y = _load_data(cfg)
    metrics = evaluate(model, model_inputs(X, model.spec, cfg["lead"]), y)
    print(_metrics_lines(metrics), end="")
    return 0


def cmd_crossval(cfg) -> int:
    ids, X, y = _load_data(cfg)
    results = [crossval(ids, X, y, _train_config(cfg, v)) for v in str(cfg["variant"]).split(",")]
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    table = format_crossval_table(results)
    _write(_path(cfg, "report", "crossval_report.txt"), _echo(cfg) + table)
    kv = crossval_keyvalues(results)
    _write(out / "crossval_metrics.txt", "".join(f"{k}={kv[k]}\n" for k in sorted(kv)))
    print(table, end="")
    return 0


def cmd_ablation(cfg) -> int:
    ids, X, y = _load_data(cfg)
    result = lead_ablation(ids, X, y, _train_config(cfg))
    table = format_ablation_table(result)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write(_path(cfg, "report", "ablation_report.txt"), _echo(cfg) + table)
    print(table, end="")
    return 0


def cmd_gradcheck(cfg, variants: List[str]) -> int:
    h, tol = float(cfg["gradcheck_h"]), float(cfg["gradcheck_tol"])
    results = primitive_checks(int(cfg["seed"]), h)
    for v in variants:
        results[f"model.mini.{v}"] = model_check(v, int(cfg["seed"]), h)
    worst = 0.0
    for name, err in results.items():
        status = "ok" if err < tol else "FAIL"
        print(f"{name:<28} {err:.3e} {status}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {tol:g}, h={h:g})")
    return 0 if worst < tol else 1


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", help="T, L, F or single (crossval accepts a comma list)")
    common.add_argument("--lead", help="lead used by single-lead models")
    common.add_argument("--profile", choices=("paper", "mini"))
    common.add_argument("--folds", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--manifest")
    common.add_argument("--cache")
    common.add_argument("--checkpoint")
    common.add_argument("--report")
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", dest="batch_size", type=int)
    common.add_argument("--learning-rate", dest="learning_rate", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="mbcrnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth", parents=[common], help="generate synthetic records")
    synth.add_argument("--n", type=int)
    synth.add_argument("--balance", type=float)
    synth.add_argument("--n-leads", dest="n_leads", type=int)
    synth.add_argument("--abnormality", choices=("irregular_rhythm", "lead_localized_inversion", "both"))
    synth.add_argument("--noise-std", dest="noise_std", type=float)
    sub.add_parser("preprocess", parents=[common], help="filter, decimate, window and cache records")
    sub.add_parser("train", parents=[common], help="train on the cache and write a checkpoint")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the cache")
    sub.add_parser("crossval", parents=[common], help="k-fold cross-validation report")
    sub.add_parser("ablation", parents=[common], help="single-lead vs fused comparison")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    return parser


def _limit_threads():
    limit = os.environ.get("MBCR_THREADS")
    if not limit:
        return None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(limit))


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limiter = _limit_threads()
    try:
        cfg = resolve_config(args)
        if args.command == "gradcheck":
            variants = [args.variant] if args.variant else ["T", "L", "F"]
            return cmd_gradcheck(cfg, variants)
        commands = {
            "synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train,
            "eval": cmd_eval, "crossval": cmd_crossval, "ablation": cmd_ablation,
        }
        return commands[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
    except container.ContainerError as exc:
        print(f"error: container: {exc}", file=sys.stderr)
    except RecordFormatError as exc:
        print(f"error: record: {exc}", file=sys.stderr)
    except TrainingError as exc:
        print(f"error: training: {exc}", file=sys.stderr)
    except (ValueError, KeyError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()
    return 1


if __name__ == "__main__":
    sys.exit(main())
