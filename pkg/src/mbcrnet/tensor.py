"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op records a node linking its output to its inputs together with a
closure that maps the upstream gradient to input gradients. ``backward``
orders those nodes on a :class:`Tape` and replays them in reverse.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import as_strided

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence, float, int]


class ShapeError(ValueError):
    """Raised when operand extents are incompatible."""


class Tensor:
    """An n-dimensional float64 array that can carry a gradient.

    Args:
        data: Array-like contents, copied to a contiguous float64 array.
        requires_grad: Whether ``backward`` should deliver a gradient here.
        name: Optional label, used by checkpoints and error messages.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: str = ""):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def _result(data: np.ndarray, parents: Tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


class Tape:
    """Topologically ordered record of the ops that produced a scalar.

    Built from the graph hanging off ``loss``; ``nodes[i]``'s inputs are
    always leaves or outputs of ``nodes[j]`` with ``j < i``.
    """

    def __init__(self, loss: Tensor):
        self.loss = loss
        self.nodes = self._order(loss)

    @staticmethod
    def _order(root: Tensor) -> list:
        order: list = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return [n for n in order if n._backward is not None]

    def backward(self) -> dict:
        """Propagate d(loss)/d(.) and return a map ``id(tensor) -> grad``."""
        grads = {id(self.loss): np.ones_like(self.loss.data)}
        for node in reversed(self.nodes):
            upstream = grads.pop(id(node), None)
            if upstream is None:
                continue
            for parent, g in zip(node._parents, node._backward(upstream)):
                if g is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        return grads


def backward(loss: Tensor, leaves: Optional[Iterable[Tensor]] = None) -> None:
    """Fill ``.grad`` on every leaf reachable from the scalar ``loss``.

    Gradients overwrite any previous ``.grad``. Tensors passed in
    ``leaves`` that the loss does not depend on receive zeros.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape(loss)
    grads = tape.backward()
    reached = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in reached:
            continue
        reached.add(id(t))
        if t._backward is None and t.requires_grad:
            t.grad = grads.get(id(t), np.zeros_like(t.data))
        stack.extend(p for p in t._parents if p.requires_grad)
    for leaf in leaves or ():
        if id(leaf) not in reached:
            leaf.grad = np.zeros_like(leaf.data)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return _result(np.where(active, x.data, 0.0), (x,), lambda g: (g * active,))


def tsum(x: Tensor) -> Tensor:
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis but the first."""
    return reshape(x, (x.shape[0], -1))


# -------------------------------------------------------------- convolution


def _same_pad(k: int) -> Tuple[int, int]:
    p = k - 1
    return p // 2, p - p // 2


def conv2d(
    x: Tensor,
    kernel: Tensor,
    stride: Tuple[int, int] = (1, 1),
    padding: str = "valid",
) -> Tensor:
    """Cross-correlate ``x[N,C,H,W]`` with ``kernel[O,C,kh,kw]`` (no bias).

    ``same`` zero-pads ``k-1`` per axis, floor half before and the rest
    after, and needs stride 1 on any axis with ``k > 1``.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    sh, sw = stride
    if c != ck:
        raise ShapeError(f"channel mismatch: input has {c}, kernel expects {ck}")
    if sh < 1 or sw < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if padding == "valid":
        pads = ((0, 0), (0, 0))
    elif padding == "same":
        if (kh > 1 and sh != 1) or (kw > 1 and sw != 1):
            raise ShapeError("same padding needs stride 1 along the padded axis")
        pads = (_same_pad(kh), _same_pad(kw))
    else:
        raise ValueError(f"unknown padding {padding!r}")
    hp, wp = h + sum(pads[0]), w + sum(pads[1])
    if kh > hp or kw > wp:
        raise ShapeError(f"kernel exceeds input: kernel {kh}x{kw}, padded input {hp}x{wp}")

    (pt, pb), (pl, pr) = pads
    if pt or pb or pl or pr:
        xp = np.zeros((n, c, hp, wp))
        xp[:, :, pt : pt + h, pl : pl + w] = x.data
    else:
        xp = x.data
    ho, wo = (hp - kh) // sh + 1, (wp - kw) // sw + 1
    s0, s1, s2, s3 = xp.strides
    cols = as_strided(xp, (n, ho, wo, c, kh, kw), (s0, s2 * sh, s3 * sw, s1, s2, s3), writeable=False)
    cols2d = cols.reshape(n * ho * wo, c * kh * kw)
    k2d = kernel.data.reshape(o, c * kh * kw)
    out = np.ascontiguousarray((cols2d @ k2d.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def backward_fn(g):
        g2d = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        dk = (g2d.T @ cols2d).reshape(kernel.shape) if kernel.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (g2d @ k2d).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros((n, c, hp, wp))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            dx = np.ascontiguousarray(dxp[:, :, pt : pt + h, pl : pl + w])
        return dx, dk

    return _result(out, (x, kernel), backward_fn)


# ------------------------------------------------------------ normalization


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    mode: str = "train",
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel normalization of ``x[N,C,H,W]`` over ``(N,H,W)``.

    In train mode the batch statistics (population variance) are used and
    ``running_mean``/``running_var`` are updated in place.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have length {c}")
    m = n * h * w
    if m == 0:
        raise ShapeError("empty normalization axis")
    axes = (0, 2, 3)
    if mode == "train":
        mean = x.data.mean(axis=axes)
        centered = x.data - mean[None, :, None, None]
        var = (centered * centered).mean(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    elif mode == "eval":
        centered = x.data - running_mean[None, :, None, None]
        var = running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward_fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data[None, :, None, None]
        if mode == "train":
            dx = (inv_std / m)[None, :, None, None] * (
                m * dxhat
                - dxhat.sum(axis=axes)[None, :, None, None]
                - xhat * (dxhat * xhat).sum(axis=axes)[None, :, None, None]
            )
        else:
            dx = dxhat * inv_std[None, :, None, None]
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), backward_fn)


# ----------------------------------------------------------------- dense etc


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for ``x[N,F_in]``, ``weight[F_out,F_in]``."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError(f"dense expects 2-D input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense: input has {x.shape[1]} features, weight expects {weight.shape[1]}")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"dense: bias must have length {weight.shape[0]}")
    out = x.data @ weight.data.T + bias.data

    def backward_fn(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return _result(out, (x, weight, bias), backward_fn)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits: Tensor, labels: ArrayLike) -> Tuple[Tensor, Tensor]:
    """Mean cross-entropy of ``logits[N,K]`` against integer ``labels``.

    Returns ``(loss, probs)``; ``probs`` carries no gradient.
    """
    if logits.data.ndim != 2:
        raise ShapeError(f"softmax_xent expects [N,K] logits, got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer) or np.any((labels < 0) | (labels >= k)):
        raise ValueError(f"labels must be integers in [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    probs = np.exp(log_probs)
    loss = -log_probs[np.arange(n), labels].mean()
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), labels] = 1.0

    def backward_fn(g):
        return (g * (probs - onehot) / n,)

    return _result(np.array(loss), (logits,), backward_fn), Tensor(probs)


def dropout(x: Tensor, rate: float, mode: str = "train", seed: Optional[int] = None) -> Tensor:
    """Inverted dropout; identity in eval mode or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    rng = np.random.default_rng(seed)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------- gradcheck


def numeric_grad(fn: Callable[[], Tensor], point: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn()`` w.r.t. every element of ``point``."""
    flat = point.data.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = fn().item()
        flat[i] = orig - h
        f_minus = fn().item()
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * h)
    return out.reshape(point.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradcheck(
    function: Callable,
    point: Union[Tensor, Sequence[Tensor]],
    h: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences.

    ``function(point)`` must return a scalar tensor. ``point`` may be a
    single tensor or a list of tensors (e.g. all model parameters), in
    which case every element of every tensor is checked.
    """
    points = [point] if isinstance(point, Tensor) else list(point)
    for p in points:
        p.requires_grad = True
    loss = function(point)
    backward(loss, leaves=points)
    worst = 0.0
    for p in points:
        analytic = p.grad.copy()
        numeric = numeric_grad(lambda: function(point), p, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst
