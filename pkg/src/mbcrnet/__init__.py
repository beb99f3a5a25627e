"""Multi-branch convolution + residual networks for multi-lead ECG classification."""

from .data import EcgRecord, FoldPlan, make_folds, parse_record, preprocess_records
from .estimator import EcgPreprocessor, MBCRNetClassifier
from .model import Model, ModelSpec, build_model, load_checkpoint, mini_spec, paper_spec, param_count, save_checkpoint
from .synth import SynthConfig, generate
from .tensor import Tensor, backward, gradcheck
from .train import Metrics, TrainConfig, crossval, evaluate, lead_ablation, train

__version__ = "0.1.0"

__all__ = [
    "EcgPreprocessor", "EcgRecord", "FoldPlan", "MBCRNetClassifier", "Metrics", "Model",
    "ModelSpec", "SynthConfig", "Tensor", "TrainConfig", "backward", "build_model", "crossval",
    "evaluate", "generate", "gradcheck", "lead_ablation", "load_checkpoint", "make_folds",
    "mini_spec", "paper_spec", "param_count", "parse_record", "preprocess_records",
    "save_checkpoint", "train",
]
