"""Optimizers, the training loop, metrics and cross-validation drivers."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import FoldPlan, fit_length, make_folds
from .model import CANONICAL_LEADS, Model, ModelSpec, build_model, profile_spec, save_checkpoint
from .tensor import Tensor, backward, softmax

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    dropout_rate: float = 0.5
    seed: int = 0
    variant: str = "L"
    profile: str = "mini"
    lead: Optional[str] = None
    n_folds: int = 10
    checkpoint: Optional[str] = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def model_spec(self) -> ModelSpec:
        return profile_spec(self.profile, self.variant, dropout_rate=self.dropout_rate)


# --------------------------------------------------------------- optimizers


def adam_step(params, grads, state, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
    """One in-place Adam update of the arrays in ``params``.

    ``state`` holds ``t`` and per-parameter ``m``/``v`` lists; pass ``{}``
    on the first call. Returns ``(params, state)``.
    """
    b1, b2 = betas
    if not state:
        state.update(t=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    state["t"] += 1
    t = state["t"]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state: dict = {}

    def step(self):
        adam_step(
            [p.data for p in self.params], [p.grad for p in self.params],
            self.state, self.lr, self.betas, self.eps,
        )


class SGD:
    def __init__(self, params: Sequence[Tensor], lr=1e-2):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            p.data -= self.lr * p.grad


def make_optimizer(config: TrainConfig, params):
    if config.optimizer == "sgd":
        return SGD(params, config.learning_rate)
    return Adam(params, config.learning_rate, config.betas, config.adam_eps)


# ----------------------------------------------------------------- training


def _check_inputs(model: Model, X: np.ndarray, y: np.ndarray) -> None:
    expected = (model.spec.n_leads, model.spec.time_len)
    if X.ndim != 3 or X.shape[1:] != expected:
        raise ValueError(f"expected inputs [N,{expected[0]},{expected[1]}], got {list(X.shape)}")
    if len(y) != len(X):
        raise ValueError(f"{len(X)} inputs but {len(y)} labels")
    if not np.all(np.isfinite(X)):
        raise ValueError("inputs contain NaN or infinite values")


def train(
    model: Model,
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    callback: Optional[Callable[[int, float], None]] = None,
) -> Tuple[Model, List[float]]:
    """Mini-batch training; returns the model and the mean loss per epoch."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _check_inputs(model, X, y)
    params = model.parameters()
    opt = make_optimizer(config, params)
    rng = np.random.default_rng(config.seed)
    trace = []
    step = 0
    n = len(X)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, _ = model.loss(X[idx], y[idx], mode="train", seed=[config.seed, step])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"loss diverged at epoch {epoch + 1}, step {step}")
            backward(loss, params)
            if not all(np.all(np.isfinite(p.grad)) for p in params):
                raise TrainingError(f"non-finite gradient at epoch {epoch + 1}, step {step}")
            opt.step()
            total += value * len(idx)
            step += 1
        trace.append(total / n)
        logger.debug("epoch %d loss %.6f", epoch + 1, trace[-1])
        if callback is not None:
            callback(epoch, trace[-1])
    if config.checkpoint:
        save_checkpoint(model, config.checkpoint)
    return model, trace


def predict_proba(model: Model, X: np.ndarray, batch_size: int = 64) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = [model.forward(X[i : i + batch_size], mode="eval") for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.empty((0, model.spec.n_classes))


def decide(probs: np.ndarray) -> np.ndarray:
    """Abnormal only when its probability strictly exceeds the normal one."""
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


# ------------------------------------------------------------------ metrics


@dataclass(frozen=True)
class Metrics:
    """Confusion counts with abnormal (label 1) as the positive class."""

    tp: int
    tn: int
    fp: int
    fn: int

    @classmethod
    def from_predictions(cls, predictions, labels) -> "Metrics":
        p = np.asarray(predictions).astype(bool)
        t = np.asarray(labels).astype(bool)
        if p.shape != t.shape:
            raise ValueError("predictions and labels differ in length")
        return cls(
            tp=int(np.sum(p & t)), tn=int(np.sum(~p & ~t)),
            fp=int(np.sum(p & ~t)), fn=int(np.sum(~p & t)),
        )

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def acc(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def se(self) -> float:
        positives = self.tp + self.fn
        return self.tp / positives if positives else float("nan")


def evaluate(model: Model, X: np.ndarray, y: np.ndarray) -> Metrics:
    if len(X) == 0:
        raise ValueError("empty test set")
    return Metrics.from_predictions(decide(predict_proba(model, X)), y)


# ---------------------------------------------------------- cross-validation


def model_inputs(X: np.ndarray, spec: ModelSpec, lead: Optional[str] = None) -> np.ndarray:
    """Select the lead(s) a model consumes and fit the time axis to the spec."""
    if spec.n_leads == 1:
        lead = lead or "V5"
        X = X[:, [CANONICAL_LEADS.index(lead)], :]
    return fit_length(X, spec.time_len)


@dataclass
class FoldResult:
    fold: int
    metrics: Metrics
    train_ids: List[str]
    test_ids: List[str]
    loss_trace: List[float]


@dataclass
class CrossvalResult:
    variant: str
    plan: FoldPlan
    folds: List[FoldResult] = field(default_factory=list)

    @property
    def mean_acc(self) -> float:
        return float(np.mean([f.metrics.acc for f in self.folds]))

    @property
    def mean_se(self) -> float:
        return float(np.mean([f.metrics.se for f in self.folds]))


def fit_model(spec: ModelSpec, X, y, config: TrainConfig, seed: int):
    model = build_model(spec, seed)
    cfg = TrainConfig(**{**config.__dict__, "seed": seed, "checkpoint": None})
    return train(model, X, y, cfg)


def crossval(ids: Sequence[str], X: np.ndarray, y: np.ndarray, config: TrainConfig) -> CrossvalResult:
    """Train on all folds but one and test on the held-out fold, for every fold."""
    spec = config.model_spec()
    inputs = model_inputs(X, spec, config.lead)
    plan = make_folds(ids, y, config.seed, config.n_folds)
    result = CrossvalResult(config.variant, plan)
    ids = list(ids)
    for fold in range(config.n_folds):
        train_mask, test_mask = plan.masks(ids, fold)
        train_ids = [i for i, keep in zip(ids, train_mask) if keep]
        test_ids = [i for i, keep in zip(ids, test_mask) if keep]
        if set(train_ids) & set(test_ids):
            raise RuntimeError(f"fold {fold + 1}: test ids leak into training set")
        model, trace = fit_model(spec, inputs[train_mask], y[train_mask], config, config.seed + fold)
        metrics = evaluate(model, inputs[test_mask], y[test_mask])
        logger.info("fold %d: acc %.4f se %.4f", fold + 1, metrics.acc, metrics.se)
        result.folds.append(FoldResult(fold, metrics, train_ids, test_ids, trace))
    return result


@dataclass
class AblationResult:
    lead_acc: Dict[str, float]
    fused_acc: float
    fused_variant: str

    @property
    def best_lead(self) -> Tuple[str, float]:
        name = max(self.lead_acc, key=lambda k: self.lead_acc[k])
        return name, self.lead_acc[name]

    @property
    def mean_single(self) -> float:
        return float(np.mean(list(self.lead_acc.values())))


def lead_ablation(
    ids: Sequence[str], X: np.ndarray, y: np.ndarray, config: TrainConfig, test_fold: int = 0
) -> AblationResult:
    """Eight single-lead models and one fused model on the same hold-out fold."""
    plan = make_folds(ids, y, config.seed, config.n_folds)
    train_mask, test_mask = plan.masks(list(ids), test_fold)
    fused_spec = config.model_spec()
    fused_in = model_inputs(X, fused_spec)
    model, _ = fit_model(fused_spec, fused_in[train_mask], y[train_mask], config, config.seed)
    fused_acc = evaluate(model, fused_in[test_mask], y[test_mask]).acc
    single_spec = profile_spec(config.profile, "single", dropout_rate=config.dropout_rate)
    lead_acc = {}
    for lead in CANONICAL_LEADS:
        inputs = model_inputs(X, single_spec, lead)
        model, _ = fit_model(single_spec, inputs[train_mask], y[train_mask], config, config.seed)
        lead_acc[lead] = evaluate(model, inputs[test_mask], y[test_mask]).acc
        logger.info("lead %s: acc %.4f", lead, lead_acc[lead])
    return AblationResult(lead_acc, fused_acc, config.variant)


# ------------------------------------------------------------------ reports


def _pct(v: float) -> str:
    return "nan" if math.isnan(v) else f"{100 * v:.2f}%"


def format_crossval_table(results: Sequence[CrossvalResult]) -> str:
    """Per-fold ACC/Se rows plus an Average row, one column pair per variant."""
    header = ["Fold"] + [f"{r.variant}-{m}" for r in results for m in ("ACC", "Se")]
    rows = [header]
    n = max(len(r.folds) for r in results)
    for i in range(n):
        row = [f"Fold-{i + 1}"]
        for r in results:
            m = r.folds[i].metrics
            row += [_pct(m.acc), _pct(m.se)]
        rows.append(row)
    rows.append(["Average"] + [v for r in results for v in (_pct(r.mean_acc), _pct(r.mean_se))])
    widths = [max(len(row[c]) for row in rows) for c in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows) + "\n"


def crossval_keyvalues(results: Sequence[CrossvalResult]) -> Dict[str, str]:
    out = {}
    for r in results:
        for f in r.folds:
            m = f.metrics
            prefix = f"{r.variant}.fold{f.fold + 1}"
            out.update({
                f"{prefix}.acc": repr(m.acc), f"{prefix}.se": repr(m.se),
                f"{prefix}.tp": str(m.tp), f"{prefix}.tn": str(m.tn),
                f"{prefix}.fp": str(m.fp), f"{prefix}.fn": str(m.fn),
            })
        out[f"{r.variant}.mean.acc"] = repr(r.mean_acc)
        out[f"{r.variant}.mean.se"] = repr(r.mean_se)
    return out


def format_ablation_table(result: AblationResult) -> str:
    lines = ["Model      ACC"]
    for lead, acc in result.lead_acc.items():
        lines.append(f"{lead:<10} {_pct(acc)}")
    lines.append(f"{'single-avg':<10} {_pct(result.mean_single)}")
    lines.append(f"{'MBCRNet-' + result.fused_variant:<10} {_pct(result.fused_acc)}")
    return "\n".join(lines) + "\n"
