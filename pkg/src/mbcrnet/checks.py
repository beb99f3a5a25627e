"""Finite-difference gradient checks over every layer type and whole models."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from .layers import ConvUnit, DbcrnBlock, FusionHead
from .model import build_model, mini_spec
from .tensor import (
    Tensor, add, batchnorm, conv2d, dense, dropout, gradcheck, mul, relu, softmax_xent, tsum,
)


def _probe(rng: np.random.Generator, f: Callable[..., Tensor]) -> Callable[..., Tensor]:
    """Wrap ``f`` so its output is contracted with fixed random weights."""
    weights = {}

    def g(*args):
        out = f(*args)
        if out.shape not in weights:
            weights[out.shape] = Tensor(rng.normal(size=out.shape))
        return tsum(mul(out, weights[out.shape]))

    return g


def primitive_checks(seed: int = 0, h: float = 1e-5) -> Dict[str, float]:
    """Max relative gradient error per op/argument, at random points."""
    rng = np.random.default_rng(seed)

    def T(*shape):
        return Tensor(rng.normal(size=shape))

    x, k = T(2, 3, 4, 16), T(4, 3, 2, 5)
    gamma, beta = Tensor(rng.uniform(0.5, 1.5, 3)), T(3)
    rm, rv = rng.normal(size=3), rng.uniform(0.5, 2.0, 3)
    xd, w, b = T(4, 6), T(5, 6), T(5)
    logits, labels = T(4, 3), np.array([0, 2, 1, 1])
    results: Dict[str, float] = {}

    def check(name, fn, point):
        results[name] = gradcheck(_probe(rng, fn), point, h)

    check("conv2d.valid.input", lambda t: conv2d(t, k, (1, 2), "valid"), x)
    check("conv2d.valid.kernel", lambda t: conv2d(x, t, (1, 2), "valid"), k)
    check("conv2d.same.input", lambda t: conv2d(t, k, (1, 1), "same"), x)
    check("conv2d.same.kernel", lambda t: conv2d(x, t, (1, 1), "same"), k)
    check("conv2d.strided2d.input", lambda t: conv2d(t, k, (2, 3), "valid"), x)
    check("batchnorm.train.input", lambda t: batchnorm(t, gamma, beta, rm.copy(), rv.copy()), x)
    check("batchnorm.train.gamma", lambda t: batchnorm(x, t, beta, rm.copy(), rv.copy()), gamma)
    check("batchnorm.train.beta", lambda t: batchnorm(x, gamma, t, rm.copy(), rv.copy()), beta)
    check("batchnorm.eval.input", lambda t: batchnorm(t, gamma, beta, rm, rv, mode="eval"), x)
    check("relu", relu, x)
    check("add", lambda t: add(t, x), x)
    check("dense.input", lambda t: dense(t, w, b), xd)
    check("dense.weight", lambda t: dense(xd, t, b), w)
    check("dense.bias", lambda t: dense(xd, w, t), b)
    results["softmax_xent"] = gradcheck(lambda t: softmax_xent(t, labels)[0], logits, h)
    check("dropout.train", lambda t: dropout(t, 0.5, "train", seed=3), xd)

    unit = ConvUnit(3, 4, (1, 5), (1, 2), "valid", rng)
    check("conv_unit", lambda t: unit(t, "train"), x)
    swapped = ConvUnit(3, 4, (1, 5), (1, 1), "same", rng, order="conv-relu-bn")
    check("conv_unit.conv-relu-bn", lambda t: swapped(t, "train"), x)
    block = DbcrnBlock(3, 4, 3, rng)
    xb = T(2, 3, 2, 20)
    check("dbcrn_block.input", lambda t: block(t, "train"), xb)
    check("dbcrn_block.params", lambda ps: block(xb, "train"), [p for _, p in block.named_parameters()])
    feats = T(2, 4, 3, 5)
    for variant in ("T", "L", "F"):
        head = FusionHead(variant, 4, 3, 5, rng)
        check(f"fusion.{variant}", lambda t: head(t, "train"), feats)
    return results


def model_check(variant: str, seed: int = 0, h: float = 1e-5, batch: int = 2) -> float:
    """Max relative error over every parameter of a mini-profile model.

    Batchnorm runs on batch statistics and dropout is disabled so the loss
    is a deterministic function of the parameters.
    """
    model = build_model(mini_spec(variant, dropout_rate=0.0), seed)
    rng = np.random.default_rng(100 + seed)
    x = rng.normal(size=(batch, model.spec.n_leads, model.spec.time_len))
    y = np.arange(batch) % 2
    return gradcheck(lambda ps: model.loss(x, y, mode="train")[0], model.parameters(), h)
