"""Shared float64 numeric kernel: matrix product, activations, losses, RNG.

Every other module builds on these primitives. Arrays are plain numpy
float64 throughout and ops are pure functions. All randomness in the
project flows through :class:`Rng`, a thin wrapper over a single
documented, platform-independent generator (PCG64), so a seed fully
determines every downstream draw.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64

# sigmoid saturates numerically around |x| ~ 37 in float64; clamping the
# exponent argument well past that keeps exp() from overflowing without
# changing any representable output.
_EXP_LIMIT = 60.0
_PROB_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not match the operation's contract."""


class NumericsError(FloatingPointError):
    """A value that must be finite is NaN or infinite."""


def matmul(a, b):
    """Matrix product of two 2-d arrays with explicit shape validation.

    Raises ShapeError naming both shapes on any mismatch.
    """
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul needs 2-d operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    x = np.asarray(x, dtype=DTYPE)
    return 1.0 / (1.0 + np.exp(np.clip(-x, -_EXP_LIMIT, _EXP_LIMIT)))


def sigmoid_grad(x):
    """Derivative of sigmoid evaluated at x."""
    s = sigmoid(x)
    return s * (1.0 - s)


def tanh(x):
    return np.tanh(np.asarray(x, dtype=DTYPE))


def tanh_grad(x):
    t = np.tanh(np.asarray(x, dtype=DTYPE))
    return 1.0 - t * t


def relu(x):
    return np.maximum(np.asarray(x, dtype=DTYPE), 0.0)


def relu_grad(x):
    """Derivative of relu; the subgradient at exactly 0 is taken as 0."""
    x = np.asarray(x, dtype=DTYPE)
    return (x > 0.0).astype(DTYPE)


def softmax(logits):
    """Row-wise softmax of a 2-d array, shifted by the row max for stability."""
    logits = np.asarray(logits, dtype=DTYPE)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def binary_cross_entropy(logits, labels):
    """Fused softmax + cross-entropy over a batch of raw class scores.

    Args:
        logits: (n, c) raw head outputs.
        labels: (n,) integer class indices in [0, c).

    Returns:
        (loss, grad): mean loss over the batch and its gradient with
        respect to ``logits`` (same shape). Probabilities are clamped to
        [1e-12, 1 - 1e-12] before the log.
    """
    logits = np.asarray(logits, dtype=DTYPE)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be 2-d, got shape {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    p = softmax(logits)
    rows = np.arange(n)
    p_true = np.clip(p[rows, labels], _PROB_FLOOR, 1.0 - _PROB_FLOOR)
    loss = float(-np.mean(np.log(p_true)))
    grad = p.copy()
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def squared_error(pred, target):
    """Mean squared error over a batch of scalar predictions.

    Args:
        pred: (n,) or (n, 1) predictions.
        target: (n,) regression targets.

    Returns:
        (loss, grad) with grad shaped like ``pred``.
    """
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    flat = pred.reshape(-1)
    if target.shape != flat.shape:
        raise ShapeError(
            f"target shape {target.shape} does not match predictions {pred.shape}"
        )
    diff = flat - target
    n = flat.shape[0]
    loss = float(np.mean(diff * diff))
    grad = (2.0 * diff / n).reshape(pred.shape)
    return loss, grad


def assert_finite(arr, name="array"):
    """Raise NumericsError if ``arr`` holds any NaN or infinity."""
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name} contains non-finite values")


class Rng:
    """Seeded deterministic random source.

    Backed by numpy's PCG64 bit generator. The same seed yields the same
    draw sequence on every platform and in every process, which is what
    makes whole training runs byte-for-byte reproducible. ``child(key)``
    derives an independent stream that is itself a pure function of
    (seed, key), used for e.g. per-cell seeds in grid sweeps.
    """

    def __init__(self, seed: int, _seq=None):
        self.seed = int(seed)
        if _seq is None:
            _seq = np.random.SeedSequence(self.seed)
        self._seq = _seq
        self._gen = np.random.Generator(np.random.PCG64(_seq))

    def child(self, *keys: int) -> "Rng":
        seq = np.random.SeedSequence(
            entropy=self._seq.entropy,
            spawn_key=tuple(self._seq.spawn_key) + tuple(int(k) for k in keys),
        )
        return Rng(self.seed, _seq=seq)

    def uniform(self, low, high, size=None):
        # size=None yields a bare float from numpy, which has no astype
        out = self._gen.uniform(low, high, size)
        return float(out) if size is None else out.astype(DTYPE, copy=False)

    def normal(self, loc=0.0, scale=1.0, size=None):
        out = self._gen.normal(loc, scale, size)
        return float(out) if size is None else out.astype(DTYPE, copy=False)

    def random(self, size=None):
        return self._gen.random(size, dtype=DTYPE)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int):
        return self._gen.permutation(n)
