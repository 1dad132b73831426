"""Fusion heads that map per-view encoder outputs to class scores.

Three interchangeable heads, all trained end-to-end with the encoders:

- fc:  concatenate views, append a constant 1, one relu hidden layer of
  width k' = c * k, then a linear output layer.
- fm:  per output, a second-order factorized model on the concatenated
  vector: squared norm of a rank-k projection plus a linear term with
  bias. Expands to a full pairwise interaction sum (diagonal included)
  whose weight matrix has rank k.
- mvm: per output, each view (with a constant 1 appended) is projected
  to k factors; the factor vectors are multiplied elementwise across
  views and summed, which expands to a sum over all cross-view index
  tuples up to full order.

Inverted dropout on the per-view encoder outputs sits between the
encoders and the head; the appended constant coordinates are added
inside the heads and are therefore never dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .kernel import DTYPE, Rng, ShapeError, relu

INIT_SCALE = 0.08


@dataclass
class DropoutConfig:
    fraction: float = 0.1
    train_mode: bool = False


def dropout(x: np.ndarray, config: DropoutConfig, rng: Optional[Rng] = None):
    """Inverted dropout: zero entries with prob ``fraction``, scale survivors.

    Identity in eval mode. Returns (out, keep_mask); keep_mask is None
    when nothing was dropped (needed by :func:`dropout_backward`).
    """
    if not 0.0 <= config.fraction < 1.0:
        raise ValueError(f"dropout fraction must be in [0, 1), got {config.fraction}")
    if not config.train_mode or config.fraction == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an Rng")
    keep = rng.random(x.shape) >= config.fraction
    return x * keep / (1.0 - config.fraction), keep


def dropout_backward(grad: np.ndarray, keep_mask, fraction: float):
    if keep_mask is None:
        return grad
    return grad * keep_mask / (1.0 - fraction)


@dataclass
class FcParams:
    """Hidden layer W1 (k', d+1) over the bias-augmented concat, output W2 (c, k')."""

    W1: np.ndarray
    W2: np.ndarray

    @classmethod
    def init(cls, d: int, k: int, c: int, rng: Rng, scale: float = INIT_SCALE):
        k_prime = c * k
        return cls(W1=rng.uniform(-scale, scale, (k_prime, d + 1)),
                   W2=rng.uniform(-scale, scale, (c, k_prime)))

    def arrays(self):
        return [("W1", self.W1), ("W2", self.W2)]


@dataclass
class FmParams:
    """Factor tensor U (c, k, d) and linear weights w (c, d+1); last w column is the bias."""

    U: np.ndarray
    w: np.ndarray

    @classmethod
    def init(cls, d: int, k: int, c: int, rng: Rng, scale: float = INIT_SCALE):
        return cls(U=rng.uniform(-scale, scale, (c, k, d)),
                   w=rng.uniform(-scale, scale, (c, d + 1)))

    def arrays(self):
        return [("U", self.U), ("w", self.w)]


@dataclass
class MvmParams:
    """One factor matrix per view, each (c, k, view_dim + 1). Needs >= 2 views."""

    factors: List[np.ndarray]

    @classmethod
    def init(cls, view_dims: Sequence[int], k: int, c: int, rng: Rng,
             scale: float = INIT_SCALE):
        if len(view_dims) < 2:
            raise ValueError(
                f"the multi-view-product head needs at least 2 views, got {len(view_dims)}"
            )
        return cls(factors=[rng.uniform(-scale, scale, (c, k, d + 1))
                            for d in view_dims])

    def arrays(self):
        return [(f"U{i}", f) for i, f in enumerate(self.factors)]


HeadParams = Union[FcParams, FmParams, MvmParams]


def make_head(kind: str, view_dims: Sequence[int], k: int, c: int,
              rng: Rng) -> HeadParams:
    d = int(sum(view_dims))
    if kind == "fc":
        return FcParams.init(d, k, c, rng)
    if kind == "fm":
        return FmParams.init(d, k, c, rng)
    if kind == "mvm":
        return MvmParams.init(view_dims, k, c, rng)
    raise ValueError(f"unknown head kind {kind!r}; expected fc, fm, or mvm")


def _append_one(h: np.ndarray) -> np.ndarray:
    return np.concatenate([h, np.ones((h.shape[0], 1), dtype=DTYPE)], axis=1)


def fc_forward(params: FcParams, h: np.ndarray):
    """h: (n, d) fused vector. Returns (y, cache) with y of shape (n, c)."""
    if h.shape[1] + 1 != params.W1.shape[1]:
        raise ShapeError(f"input width {h.shape[1]} does not match "
                         f"W1 {params.W1.shape}")
    hb = _append_one(h)
    pre = hb @ params.W1.T
    q = relu(pre)
    y = q @ params.W2.T
    return y, (hb, pre, q)


def fc_backward(params: FcParams, cache, grad_y: np.ndarray):
    hb, pre, q = cache
    dW2 = grad_y.T @ q
    dq = grad_y @ params.W2
    dpre = dq * (pre > 0.0)
    dW1 = dpre.T @ hb
    dh = (dpre @ params.W1)[:, :-1]
    return FcParams(W1=dW1, W2=dW2), dh


def fm_forward(params: FmParams, h: np.ndarray):
    """h: (n, d) fused vector. Returns (y, cache) with y of shape (n, c).

    Per output a: y_a = || U_a h ||^2 + w_a . [h; 1].
    """
    c, k, d = params.U.shape
    if h.shape[1] != d:
        raise ShapeError(f"input width {h.shape[1]} does not match factors "
                         f"{params.U.shape}")
    hb = _append_one(h)
    q = np.einsum("nd,ckd->nck", h, params.U)
    y = (q * q).sum(axis=2) + hb @ params.w.T
    return y, (h, hb, q)


def fm_backward(params: FmParams, cache, grad_y: np.ndarray):
    h, hb, q = cache
    dq = 2.0 * q * grad_y[:, :, None]
    dU = np.einsum("nck,nd->ckd", dq, h)
    dw = grad_y.T @ hb
    dh = np.einsum("nck,ckd->nd", dq, params.U) + grad_y @ params.w[:, :-1]
    return FmParams(U=dU, w=dw), dh


def mvm_forward(params: MvmParams, views: Sequence[np.ndarray]):
    """views: per-view (n, dim_p) arrays. Returns (y, cache), y (n, c).

    Per output a: project each bias-augmented view to k factors, multiply
    the factor vectors elementwise across views, sum over factors.
    """
    if len(views) != len(params.factors):
        raise ShapeError(f"{len(views)} views but {len(params.factors)} factor "
                         "matrices")
    hbs = []
    qs = []
    for p, (h, U) in enumerate(zip(views, params.factors)):
        if h.shape[1] + 1 != U.shape[2]:
            raise ShapeError(f"view {p} width {h.shape[1]} does not match "
                             f"factors {U.shape}")
        hb = _append_one(h)
        hbs.append(hb)
        qs.append(np.einsum("nd,ckd->nck", hb, U))
    prod = qs[0].copy()
    for q in qs[1:]:
        prod *= q
    y = prod.sum(axis=2)
    return y, (hbs, qs)


def mvm_backward(params: MvmParams, cache, grad_y: np.ndarray):
    hbs, qs = cache
    m = len(qs)
    n, c, k = qs[0].shape
    ones = np.ones((n, c, k), dtype=DTYPE)
    prefix = [ones]
    for p in range(1, m):
        prefix.append(prefix[-1] * qs[p - 1])
    suffix = [ones] * m
    for p in range(m - 2, -1, -1):
        suffix[p] = suffix[p + 1] * qs[p + 1]
    d_factors = []
    d_views = []
    gy = grad_y[:, :, None]
    for p in range(m):
        dq = gy * (prefix[p] * suffix[p])
        d_factors.append(np.einsum("nck,nd->ckd", dq, hbs[p]))
        dhb = np.einsum("nck,ckd->nd", dq, params.factors[p])
        d_views.append(dhb[:, :-1])
    return MvmParams(factors=d_factors), d_views


def head_forward(params: HeadParams, views: Sequence[np.ndarray]):
    """Uniform interface over the three heads: per-view inputs -> (y, cache)."""
    if isinstance(params, MvmParams):
        y, cache = mvm_forward(params, views)
        return y, ("mvm", cache, None)
    dims = [v.shape[1] for v in views]
    h = np.concatenate(list(views), axis=1)
    if isinstance(params, FcParams):
        y, cache = fc_forward(params, h)
        return y, ("fc", cache, dims)
    if isinstance(params, FmParams):
        y, cache = fm_forward(params, h)
        return y, ("fm", cache, dims)
    raise TypeError(f"unknown head params type {type(params).__name__}")


def head_backward(params: HeadParams, cache, grad_y: np.ndarray):
    """Returns (param grads, per-view input grads)."""
    kind, inner, dims = cache
    if kind == "mvm":
        return mvm_backward(params, inner, grad_y)
    if kind == "fc":
        grads, dh = fc_backward(params, inner, grad_y)
    elif kind == "fm":
        grads, dh = fm_backward(params, inner, grad_y)
    else:
        raise ValueError(f"corrupt head cache kind {kind!r}")
    splits = np.cumsum(dims)[:-1]
    return grads, list(np.split(dh, splits, axis=1))


fusion_backward = head_backward


def param_count(head: str, m: int, d: int, k: int, c: int) -> int:
    """Closed-form parameter count of a fusion head.

    Args:
        head: fc | fm | mvm.
        m: number of views.
        d: total fused width (sum of per-view encoder output dims).
        k: factor count (fc uses hidden width k' = c * k).
        c: number of outputs.
    """
    if head == "mvm":
        return c * k * (d + m)
    if head == "fm":
        return c * k * d + c * (d + 1)
    if head == "fc":
        k_prime = c * k
        return c * k_prime + k_prime * (d + 1)
    raise ValueError(f"unknown head kind {head!r}")


def count_params(params: HeadParams) -> int:
    """Number of scalar parameters actually held by a constructed head."""
    return int(sum(arr.size for _, arr in params.arrays()))
