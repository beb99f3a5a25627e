"""MBCRNet assembly: Conv1, four double-branch residual blocks, a fusion
head and a two-layer classifier."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from . import container
from .layers import UNIT_ORDERS, ConvUnit, DbcrnBlock, Dense, FusionHead
from .tensor import ShapeError, Tensor, dropout, relu, reshape, softmax, softmax_xent

VARIANTS = ("T", "L", "F", "single")

CANONICAL_LEADS = ("II", "III", "V1", "V2", "V3", "V4", "V5", "V6")


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of an MBCRNet layer stack.

    ``variant="single"`` is the one-lead network: the ``F`` head with
    ``n_leads`` forced to 1.
    """

    variant: str = "L"
    n_leads: int = 8
    time_len: int = 2000
    kernel_len: int = 50
    conv1_depth: int = 8
    block_depths: Tuple[int, ...] = (8, 16, 32, 64)
    fc_hidden: int = 1000
    n_classes: int = 2
    dropout_rate: float = 0.5
    unit_order: str = "conv-bn-relu"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "single" and self.n_leads != 1:
            object.__setattr__(self, "n_leads", 1)
        object.__setattr__(self, "block_depths", tuple(int(d) for d in self.block_depths))
        if len(self.block_depths) != 4:
            raise ValueError("block_depths must list 4 channel counts")
        if self.unit_order not in UNIT_ORDERS:
            raise ValueError(f"unit_order must be one of {UNIT_ORDERS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def head_variant(self) -> str:
        return "F" if self.variant == "single" else self.variant

    def time_chain(self) -> List[int]:
        """Time extents ``[input, conv1, block1..block4]``.

        Raises ShapeError naming the first stage whose input is shorter than
        the kernel.
        """
        chain = [self.time_len]
        for stage in ("conv1", "block1", "block2", "block3", "block4"):
            t = chain[-1]
            if t < self.kernel_len:
                raise ShapeError(
                    f"infeasible spec at {stage}: time extent {t} < kernel_len {self.kernel_len}"
                )
            chain.append((t - self.kernel_len) // 2 + 1)
        return chain

    def to_meta(self) -> Dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            out[f"spec.{f.name}"] = repr(value) if isinstance(value, float) else str(value)
        return out

    @classmethod
    def from_meta(cls, meta: Dict[str, str]) -> "ModelSpec":
        kwargs = {}
        for f in dataclasses.fields(cls):
            raw = meta.get(f"spec.{f.name}")
            if raw is None:
                continue
            default = f.default
            if isinstance(default, tuple):
                kwargs[f.name] = tuple(int(v) for v in raw.split(","))
            elif isinstance(default, bool):
                kwargs[f.name] = raw == "True"
            elif isinstance(default, int):
                kwargs[f.name] = int(raw)
            elif isinstance(default, float):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


def paper_spec(variant: str = "L", **overrides) -> ModelSpec:
    """The full-size configuration: 8 x 2000 input, 1 x 50 kernels."""
    return ModelSpec(variant=variant, **overrides)


def mini_spec(variant: str = "L", **overrides) -> ModelSpec:
    """Desk-scale configuration for tests and demos (time chain 200->98->47->22->9->3)."""
    params = dict(time_len=200, kernel_len=5, conv1_depth=4, block_depths=(4, 8, 8, 8), fc_hidden=32)
    params.update(overrides)
    return ModelSpec(variant=variant, **params)


PROFILES = {"paper": paper_spec, "mini": mini_spec}


def profile_spec(profile: str, variant: str = "L", **overrides) -> ModelSpec:
    try:
        factory = PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}") from None
    return factory(variant, **overrides)


class Model:
    """A built MBCRNet. Use :func:`build_model` rather than the constructor."""

    def __init__(self, spec: ModelSpec, rng_seed: int = 0):
        chain = spec.time_chain()
        self.spec = spec
        rng = np.random.default_rng(rng_seed)
        common = dict(order=spec.unit_order, eps=spec.bn_eps, momentum=spec.bn_momentum)
        self.conv1 = ConvUnit(
            1, spec.conv1_depth, (1, spec.kernel_len), (1, 2), "valid", rng, **common
        )
        self.blocks: List[DbcrnBlock] = []
        cin = spec.conv1_depth
        for depth in spec.block_depths:
            self.blocks.append(DbcrnBlock(cin, depth, spec.kernel_len, rng, **common))
            cin = depth
        self.head = FusionHead(spec.head_variant, cin, spec.n_leads, chain[-1], rng, **common)
        self.fc1 = Dense(self.head.out_features, spec.fc_hidden, rng)
        self.fc2 = Dense(spec.fc_hidden, spec.n_classes, rng)

    # -- parameters

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        yield from self.conv1.named_parameters("conv1.")
        for i, block in enumerate(self.blocks, start=1):
            yield from block.named_parameters(f"block{i}.")
        yield from self.head.named_parameters("head.")
        yield from self.fc1.named_parameters("fc1.")
        yield from self.fc2.named_parameters("fc2.")

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        yield from self.conv1.named_buffers("conv1.")
        for i, block in enumerate(self.blocks, start=1):
            yield from block.named_buffers(f"block{i}.")
        yield from self.head.named_buffers("head.")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trunk_parameters(self) -> List[Tuple[str, Tensor]]:
        return [(n, p) for n, p in self.named_parameters() if n.startswith(("conv1.", "block"))]

    # -- forward

    def _as_input(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        expected = (self.spec.n_leads, self.spec.time_len)
        if x.data.ndim != 3 or x.shape[1:] != expected:
            raise ShapeError(
                f"expected batch [N,{expected[0]},{expected[1]}], got {list(x.shape)}"
            )
        return reshape(x, (x.shape[0], 1) + expected)

    def features(self, batch, mode: str = "eval", trace: Optional[list] = None) -> Tensor:
        """Trunk + fusion head output, flattened to ``[N, F]``."""
        h = self.conv1(self._as_input(batch), mode)
        _record(trace, "conv1", h)
        for i, block in enumerate(self.blocks, start=1):
            s = block.branch_sum(h, mode)
            _record(trace, f"block{i}.branch", s)
            h = block.residual(s, mode)
            _record(trace, f"block{i}.residual", h)
        fused = self.head.fuse(h, mode)
        if self.head.conv is not None:
            _record(trace, "head", fused)
        return reshape(fused, (fused.shape[0], -1))

    def logits(self, batch, mode: str = "eval", seed: Optional[int] = None,
               trace: Optional[list] = None) -> Tensor:
        z = self.features(batch, mode, trace)
        h = relu(self.fc1(z))
        _record(trace, "fc1", h)
        h = dropout(h, self.spec.dropout_rate, mode, seed)
        out = self.fc2(h)
        _record(trace, "fc2", out)
        return out

    def loss(self, batch, labels, mode: str = "train", seed: Optional[int] = None):
        return softmax_xent(self.logits(batch, mode, seed), labels)

    def forward(self, batch, mode: str = "eval", seed: Optional[int] = None) -> np.ndarray:
        """Class probabilities ``[N, n_classes]``."""
        return softmax(self.logits(batch, mode, seed).data)

    __call__ = forward

    def shape_trace(self, batch, mode: str = "eval") -> List[Tuple[str, Tuple[int, ...]]]:
        trace: list = []
        self.logits(batch, mode, trace=trace)
        return trace

    # -- persistence

    def state(self) -> List[Tuple[str, np.ndarray]]:
        items = [(name, p.data) for name, p in self.named_parameters()]
        items += [(name, buf) for name, buf in self.named_buffers()]
        return items

    def load_state(self, tensors: Dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            p.data = _checked(tensors, name, p.data.shape).copy()
        for name, buf in self.named_buffers():
            buf[...] = _checked(tensors, name, buf.shape)


def _record(trace, name: str, t: Tensor) -> None:
    if trace is not None:
        trace.append((name, tuple(t.shape[1:])))


def _checked(tensors, name, shape):
    if name not in tensors:
        raise container.ContainerError(f"checkpoint lacks tensor {name!r}")
    arr = tensors[name]
    if arr.shape != shape:
        raise container.ContainerError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
    return arr


def build_model(spec: ModelSpec, rng_seed: int = 0) -> Model:
    """Wire the full layer stack; He-normal weights drawn in layer order."""
    return Model(spec, rng_seed)


def param_count(model) -> int:
    """Scalar trainable parameters; running statistics are excluded."""
    if hasattr(model, "named_parameters"):
        return int(sum(p.size for _, p in model.named_parameters()))
    return int(sum(p.size for p in model))


def save_checkpoint(model: Model, path, extra_meta: Optional[Dict[str, object]] = None) -> None:
    meta = {"kind": "checkpoint", **model.spec.to_meta(), **(extra_meta or {})}
    container.save(path, meta, model.state())


def load_checkpoint(path) -> Model:
    meta, tensors = container.load(path)
    if meta.get("kind") != "checkpoint":
        raise container.ContainerError(f"{path}: not a model checkpoint")
    model = Model(ModelSpec.from_meta(meta))
    model.load_state(tensors)
    return model
