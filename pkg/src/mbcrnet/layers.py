"""Layer units: the Conv-BN-ReLU unit, the double-branch residual block and
the lead-fusion heads."""

from __future__ import annotations

from typing import Iterator, List, Optional, Tuple

import numpy as np

from .tensor import ShapeError, Tensor, add, batchnorm, conv2d, dense, flatten, relu

UNIT_ORDERS = ("conv-bn-relu", "conv-relu-bn")


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class ConvUnit:
    """Convolution followed by batch normalization and ReLU.

    ``order="conv-relu-bn"`` swaps the last two stages.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: Tuple[int, int],
        stride: Tuple[int, int] = (1, 1),
        padding: str = "valid",
        rng: Optional[np.random.Generator] = None,
        order: str = "conv-bn-relu",
        eps: float = 1e-5,
        momentum: float = 0.1,
    ):
        if order not in UNIT_ORDERS:
            raise ValueError(f"unit order must be one of {UNIT_ORDERS}, got {order!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        kh, kw = kernel_size
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = (kh, kw)
        self.stride = tuple(stride)
        self.padding = padding
        self.order = order
        self.eps = eps
        self.momentum = momentum
        shape = (out_channels, in_channels, kh, kw)
        self.kernel = Tensor(he_normal(rng, shape, in_channels * kh * kw), requires_grad=True)
        self.gamma = Tensor(np.ones(out_channels), requires_grad=True)
        self.beta = Tensor(np.zeros(out_channels), requires_grad=True)
        self.running_mean = np.zeros(out_channels)
        self.running_var = np.ones(out_channels)

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        z = conv2d(x, self.kernel, self.stride, self.padding)
        if self.order == "conv-bn-relu":
            return relu(self._bn(z, mode))
        return self._bn(relu(z), mode)

    def _bn(self, z: Tensor, mode: str) -> Tensor:
        return batchnorm(
            z, self.gamma, self.beta, self.running_mean, self.running_var,
            mode=mode, eps=self.eps, momentum=self.momentum,
        )

    def output_extent(self, h: int, w: int) -> Tuple[int, int]:
        if self.padding == "same":
            return h, w
        kh, kw = self.kernel_size
        return (h - kh) // self.stride[0] + 1, (w - kw) // self.stride[1] + 1

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        yield prefix + "kernel", self.kernel
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        yield prefix + "running_mean", self.running_mean
        yield prefix + "running_var", self.running_var


class DbcrnBlock:
    """Double-branch convolution stage followed by an identity-shortcut stage.

    Each branch is a stride-2 valid unit then a stride-1 same unit; the two
    branch outputs are summed into ``s`` and the block returns
    ``s + res2(res1(s))``.
    """

    def __init__(
        self,
        in_channels: int,
        depth: int,
        kernel_len: int,
        rng: np.random.Generator,
        order: str = "conv-bn-relu",
        eps: float = 1e-5,
        momentum: float = 0.1,
    ):
        self.in_channels = in_channels
        self.depth = depth
        self.kernel_len = kernel_len

        def unit(cin, stride, padding):
            return ConvUnit(cin, depth, (1, kernel_len), stride, padding, rng, order, eps, momentum)

        self.branch_a = [unit(in_channels, (1, 2), "valid"), unit(depth, (1, 1), "same")]
        self.branch_b = [unit(in_channels, (1, 2), "valid"), unit(depth, (1, 1), "same")]
        self.res_conv_1 = unit(depth, (1, 1), "same")
        self.res_conv_2 = unit(depth, (1, 1), "same")

    def branch_sum(self, x: Tensor, mode: str = "train") -> Tensor:
        a = self.branch_a[1](self.branch_a[0](x, mode), mode)
        b = self.branch_b[1](self.branch_b[0](x, mode), mode)
        return add(a, b)

    def residual(self, s: Tensor, mode: str = "train") -> Tensor:
        return add(s, self.res_conv_2(self.res_conv_1(s, mode), mode))

    def __call__(self, x: Tensor, mode: str = "train") -> Tensor:
        return self.residual(self.branch_sum(x, mode), mode)

    def output_extent(self, h: int, w: int) -> Tuple[int, int]:
        return self.branch_a[0].output_extent(h, w)

    def units(self) -> List[Tuple[str, ConvUnit]]:
        return [
            ("branch_a.0", self.branch_a[0]),
            ("branch_a.1", self.branch_a[1]),
            ("branch_b.0", self.branch_b[0]),
            ("branch_b.1", self.branch_b[1]),
            ("res_conv_1", self.res_conv_1),
            ("res_conv_2", self.res_conv_2),
        ]

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, u in self.units():
            yield from u.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, u in self.units():
            yield from u.named_buffers(f"{prefix}{name}.")


class FusionHead:
    """Combines per-lead features ``[N,C,leads,time]`` and flattens them.

    ``T`` convolves across all leads at each time step, ``L`` across the
    whole time axis of each lead, ``F`` passes features straight through.
    """

    def __init__(
        self,
        variant: str,
        channels: int,
        n_leads: int,
        time_len: int,
        rng: np.random.Generator,
        order: str = "conv-bn-relu",
        eps: float = 1e-5,
        momentum: float = 0.1,
    ):
        if variant not in ("T", "L", "F"):
            raise ValueError(f"fusion variant must be T, L or F, got {variant!r}")
        self.variant = variant
        self.channels = channels
        self.n_leads = n_leads
        self.time_len = time_len
        if variant == "T":
            kernel = (n_leads, 1)
        elif variant == "L":
            kernel = (1, time_len)
        self.conv = (
            None if variant == "F"
            else ConvUnit(channels, channels, kernel, (1, 1), "valid", rng, order, eps, momentum)
        )

    @property
    def out_features(self) -> int:
        if self.variant == "T":
            return self.channels * self.time_len
        if self.variant == "L":
            return self.channels * self.n_leads
        return self.channels * self.n_leads * self.time_len

    def fuse(self, features: Tensor, mode: str = "train") -> Tensor:
        expected = (self.channels, self.n_leads, self.time_len)
        if features.shape[1:] != expected:
            raise ShapeError(
                f"fusion head {self.variant} expects features [N,{expected[0]},{expected[1]},"
                f"{expected[2]}], got {list(features.shape)}"
            )
        return features if self.conv is None else self.conv(features, mode)

    def __call__(self, features: Tensor, mode: str = "train") -> Tensor:
        return flatten(self.fuse(features, mode))

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        if self.conv is not None:
            yield from self.conv.named_parameters(prefix + "conv.")

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        if self.conv is not None:
            yield from self.conv.named_buffers(prefix + "conv.")


class Dense:
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Tensor(
            he_normal(rng, (out_features, in_features), in_features), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias
