"""Finite-difference verification of every hand-derived gradient.

Each check builds a tiny, seeded instance, computes analytic parameter
gradients of a scalar loss, then re-derives every gradient element by
central differences, f'(x) ~ (f(x+h) - f(x-h)) / 2h with h = 1e-6, and
reports the worst relative error. Run via the ``gradcheck`` CLI command
or directly from tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .encoder import (BiGruParams, EncoderConfig, SequenceBatch,
                      encode_sequence, encode_sequence_backward)
from .fusion import (FcParams, FmParams, MvmParams, fc_backward, fc_forward,
                     fm_backward, fm_forward, mvm_backward, mvm_forward)
from .kernel import Rng, binary_cross_entropy
from .model import (Model, ModelConfig, init_model, model_backward,
                    model_forward, named_params)

FD_STEP = 1e-6
TOLERANCE = 1e-4
# Relative error denominator floor: below this magnitude the comparison is
# effectively absolute, which keeps finite-difference rounding noise from
# dominating near-zero gradients.
_REL_FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def fd_gradient(f: Callable[[], float], arr: np.ndarray,
                step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of f() w.r.t. every element of arr."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        old = arr[ix]
        arr[ix] = old + step
        f_plus = f()
        arr[ix] = old - step
        f_minus = f()
        arr[ix] = old
        grad[ix] = (f_plus - f_minus) / (2.0 * step)
        it.iternext()
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), _REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _random_batch(rng: Rng, n: int, t_max: int, d_x: int) -> SequenceBatch:
    lengths = rng.integers(1, t_max + 1, size=n)
    lengths[0] = t_max
    seqs = [rng.normal(0.0, 1.0, (int(L), d_x)) for L in lengths]
    return SequenceBatch.from_sequences(seqs)


def check_encoder(seed: int = 0) -> CheckResult:
    """Bidirectional encoder gradients under a fixed linear readout."""
    rng = Rng(seed)
    config = EncoderConfig(d_x=3, d_h=4, bidirectional=True)
    params = BiGruParams.init(config, rng)
    batch = _random_batch(rng, n=3, t_max=8, d_x=config.d_x)
    coeffs = rng.normal(0.0, 1.0, (batch.n, config.out_dim))

    def loss() -> float:
        h, _ = encode_sequence(params, batch, config)
        return float(np.sum(coeffs * h))

    h, cache = encode_sequence(params, batch, config)
    grads, _ = encode_sequence_backward(params, cache, coeffs)
    worst = 0.0
    for (_, analytic), (_, arr) in zip(grads.arrays(), params.arrays()):
        worst = max(worst, max_relative_error(analytic, fd_gradient(loss, arr)))
    return CheckResult(name="encoder", max_rel_err=worst)


def _check_head(name: str, seed: int = 0) -> CheckResult:
    rng = Rng(seed)
    n, k, c = 5, 3, 2
    view_dims = (4, 3, 2)
    views = [rng.normal(0.0, 1.0, (n, d)) for d in view_dims]
    coeffs = rng.normal(0.0, 1.0, (n, c))
    d = sum(view_dims)
    h = np.concatenate(views, axis=1)
    if name == "fc":
        params = FcParams.init(d, k, c, rng)
        forward = lambda: fc_forward(params, h)[0]
        y, cache = fc_forward(params, h)
        grads, _ = fc_backward(params, cache, coeffs)
    elif name == "fm":
        params = FmParams.init(d, k, c, rng)
        forward = lambda: fm_forward(params, h)[0]
        y, cache = fm_forward(params, h)
        grads, _ = fm_backward(params, cache, coeffs)
    else:
        params = MvmParams.init(view_dims, k, c, rng)
        forward = lambda: mvm_forward(params, views)[0]
        y, cache = mvm_forward(params, views)
        grads, _ = mvm_backward(params, cache, coeffs)

    def loss() -> float:
        return float(np.sum(coeffs * forward()))

    worst = 0.0
    for (_, analytic), (_, arr) in zip(grads.arrays(), params.arrays()):
        worst = max(worst, max_relative_error(analytic, fd_gradient(loss, arr)))
    return CheckResult(name=f"head_{name}", max_rel_err=worst)


def check_end_to_end(seed: int = 0, corrupt: bool = False) -> CheckResult:
    """Full model loss gradient (encoders through head), dropout disabled."""
    rng = Rng(seed)
    config = ModelConfig(view_names=("a", "b", "c"), view_dims=(3, 2, 2),
                         d_h=3, k=2, head="mvm", dropout_fraction=0.0)
    model = init_model(config, rng)
    # Redraw weights at a larger scale: at training-time init scale the
    # product head attenuates encoder gradients to ~1e-8, below what
    # central differences can resolve at this step size.
    for _, arr in named_params(model):
        arr[...] = rng.uniform(-0.5, 0.5, arr.shape)
    batches = [_random_batch(rng, n=4, t_max=6, d_x=d) for d in config.view_dims]
    labels = np.array(rng.integers(0, 2, size=4))

    def loss() -> float:
        y, _ = model_forward(model, batches, train_mode=False)
        loss_val, _ = binary_cross_entropy(y, labels)
        return loss_val

    y, cache = model_forward(model, batches, train_mode=False)
    _, grad_y = binary_cross_entropy(y, labels)
    grads = model_backward(model, cache, grad_y)
    if corrupt:
        first = next(iter(grads))
        grads[first] = grads[first] + 0.01
    worst = 0.0
    for pname, arr in named_params(model):
        worst = max(worst, max_relative_error(grads[pname],
                                              fd_gradient(loss, arr)))
    return CheckResult(name="end_to_end", max_rel_err=worst)


def run_suite(seed: int = 0, corrupt: bool = False) -> List[CheckResult]:
    """All gradient checks; ``corrupt`` injects a known error (negative control)."""
    return [
        check_encoder(seed),
        _check_head("fc", seed),
        _check_head("fm", seed),
        _check_head("mvm", seed),
        check_end_to_end(seed, corrupt=corrupt),
    ]


def format_table(results: Sequence[CheckResult]) -> str:
    lines = [f"{'check':<12} {'max_rel_err':>12} {'tol':>8} {'status':>8}"]
    for r in results:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<12} {r.max_rel_err:>12.3e} "
                     f"{r.tolerance:>8.0e} {status:>8}")
    return "\n".join(lines)
