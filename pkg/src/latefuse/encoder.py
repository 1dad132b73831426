"""Recurrent sequence encoders applied independently to each input view.

A view's variable-length feature sequence is summarized by a gated
recurrent cell unrolled over time, optionally in both directions. The
final hidden state of the forward pass (taken at each sample's last real
timestep) and of the reverse pass (taken at the first timestep) are
concatenated into a fixed-size vector per sample.

Cells carry no bias terms: with all-zero weights both gates sit at 0.5
and the candidate state at 0. Initial hidden state is the zero vector.
Padding is handled by masked unrolling: at padded timesteps the hidden
state is carried through unchanged, so padding content can never reach
the output (bit-identical under any finite padding values).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .kernel import DTYPE, Rng, ShapeError, sigmoid

INIT_SCALE = 0.08

GRU_FIELDS = ("W_r", "U_r", "W_z", "U_z", "W", "U")


@dataclass
class EncoderConfig:
    d_x: int
    d_h: int
    bidirectional: bool = True

    @property
    def out_dim(self) -> int:
        return 2 * self.d_h if self.bidirectional else self.d_h


@dataclass
class GruParams:
    """Weights of one gated recurrent cell (no biases).

    W_r/W_z/W map the input (d_h, d_x); U_r/U_z/U map the previous hidden
    state (d_h, d_h). r is the reset gate, z the update gate, and W/U feed
    the candidate state.
    """

    W_r: np.ndarray
    U_r: np.ndarray
    W_z: np.ndarray
    U_z: np.ndarray
    W: np.ndarray
    U: np.ndarray

    @property
    def d_x(self) -> int:
        return self.W_r.shape[1]

    @property
    def d_h(self) -> int:
        return self.W_r.shape[0]

    @classmethod
    def init(cls, d_x: int, d_h: int, rng: Rng, scale: float = INIT_SCALE):
        """Uniform(-scale, scale) weights, drawn in fixed field order."""
        mats = {}
        for name in GRU_FIELDS:
            cols = d_x if name.startswith("W") else d_h
            mats[name] = rng.uniform(-scale, scale, (d_h, cols))
        return cls(**mats)

    @classmethod
    def zeros(cls, d_x: int, d_h: int):
        return cls(
            W_r=np.zeros((d_h, d_x), dtype=DTYPE),
            U_r=np.zeros((d_h, d_h), dtype=DTYPE),
            W_z=np.zeros((d_h, d_x), dtype=DTYPE),
            U_z=np.zeros((d_h, d_h), dtype=DTYPE),
            W=np.zeros((d_h, d_x), dtype=DTYPE),
            U=np.zeros((d_h, d_h), dtype=DTYPE),
        )

    def arrays(self):
        return [(name, getattr(self, name)) for name in GRU_FIELDS]


@dataclass
class RnnParams:
    """Weights of the plain (ungated) recurrent cell; testing/ablation only."""

    W: np.ndarray
    U: np.ndarray

    @classmethod
    def init(cls, d_x: int, d_h: int, rng: Rng, scale: float = INIT_SCALE):
        return cls(W=rng.uniform(-scale, scale, (d_h, d_x)),
                   U=rng.uniform(-scale, scale, (d_h, d_h)))


def simple_rnn_cell(params: RnnParams, x: np.ndarray, h_prev: np.ndarray):
    """One step of the ungated cell: tanh(W x + U h_prev), batched over rows."""
    return np.tanh(x @ params.W.T + h_prev @ params.U.T)


@dataclass
class GruCellCache:
    x: np.ndarray
    h_prev: np.ndarray
    r: np.ndarray
    z: np.ndarray
    rh: np.ndarray
    h_tilde: np.ndarray


def gru_cell_forward(params: GruParams, x: np.ndarray, h_prev: np.ndarray):
    """One gated-cell step over a batch.

    Args:
        params: cell weights.
        x: (n, d_x) inputs at this timestep.
        h_prev: (n, d_h) previous hidden state.

    Returns:
        (h, cache): new hidden state (n, d_h) and the intermediates
        needed by :func:`gru_cell_backward`.
    """
    x = np.asarray(x, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    if x.ndim != 2 or h_prev.ndim != 2:
        raise ShapeError(f"expected 2-d batches, got {x.shape} and {h_prev.shape}")
    if x.shape[1] != params.d_x or h_prev.shape[1] != params.d_h:
        raise ShapeError(
            f"input shapes {x.shape}/{h_prev.shape} do not match cell dims "
            f"(d_x={params.d_x}, d_h={params.d_h})"
        )
    r = sigmoid(x @ params.W_r.T + h_prev @ params.U_r.T)
    z = sigmoid(x @ params.W_z.T + h_prev @ params.U_z.T)
    rh = r * h_prev
    h_tilde = np.tanh(x @ params.W.T + rh @ params.U.T)
    h = z * h_prev + (1.0 - z) * h_tilde
    return h, GruCellCache(x=x, h_prev=h_prev, r=r, z=z, rh=rh, h_tilde=h_tilde)


def gru_cell_backward(params: GruParams, cache: GruCellCache, grad_h: np.ndarray):
    """Backward pass of one cell step.

    Args:
        params: the same weights used in the forward step.
        cache: intermediates from :func:`gru_cell_forward`.
        grad_h: (n, d_h) loss gradient w.r.t. the step's output.

    Returns:
        (grads, dx, dh_prev): per-weight gradients as a GruParams, plus
        gradients w.r.t. the step input and the previous hidden state.
    """
    if cache.h_prev.shape[1] != params.d_h or cache.x.shape[1] != params.d_x:
        raise ShapeError("cache does not match cell dims; was it produced by "
                         "these params?")
    g = np.asarray(grad_h, dtype=DTYPE)
    if g.shape != cache.h_prev.shape:
        raise ShapeError(f"grad shape {g.shape} does not match state "
                         f"{cache.h_prev.shape}")
    h_prev, r, z, rh, h_tilde = cache.h_prev, cache.r, cache.z, cache.rh, cache.h_tilde

    dz = g * (h_prev - h_tilde)
    dh_tilde = g * (1.0 - z)
    dh_prev = g * z

    dpre_c = dh_tilde * (1.0 - h_tilde * h_tilde)
    dW = dpre_c.T @ cache.x
    dU = dpre_c.T @ rh
    drh = dpre_c @ params.U
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r

    dpre_z = dz * z * (1.0 - z)
    dW_z = dpre_z.T @ cache.x
    dU_z = dpre_z.T @ h_prev
    dh_prev = dh_prev + dpre_z @ params.U_z

    dpre_r = dr * r * (1.0 - r)
    dW_r = dpre_r.T @ cache.x
    dU_r = dpre_r.T @ h_prev
    dh_prev = dh_prev + dpre_r @ params.U_r

    dx = dpre_c @ params.W + dpre_z @ params.W_z + dpre_r @ params.W_r
    grads = GruParams(W_r=dW_r, U_r=dU_r, W_z=dW_z, U_z=dU_z, W=dW, U=dU)
    return grads, dx, dh_prev


@dataclass
class SequenceBatch:
    """Padded batch of variable-length sequences for one view.

    values: (n, T, d_x) float64, padded past each sample's length.
    mask:   (n, T) bool, True at real timesteps.
    lengths: (n,) int, number of real timesteps per sample (>= 1).
    """

    values: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_sequences(cls, seqs: List[np.ndarray]) -> "SequenceBatch":
        if not seqs:
            raise ValueError("cannot batch zero sequences")
        d = seqs[0].shape[1]
        lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
        if lengths.min() < 1:
            raise ValueError("cannot batch a zero-length sequence")
        t_max = int(lengths.max())
        values = np.zeros((len(seqs), t_max, d), dtype=DTYPE)
        mask = np.zeros((len(seqs), t_max), dtype=bool)
        for i, s in enumerate(seqs):
            if s.shape[1] != d:
                raise ShapeError(f"sequence {i} has width {s.shape[1]}, expected {d}")
            values[i, : s.shape[0]] = s
            mask[i, : s.shape[0]] = True
        return cls(values=values, mask=mask, lengths=lengths)

    def take(self, idx) -> "SequenceBatch":
        """Row subset, trimmed to the subset's longest sequence."""
        lengths = self.lengths[idx]
        t = int(lengths.max())
        return SequenceBatch(
            values=self.values[idx][:, :t],
            mask=self.mask[idx][:, :t],
            lengths=lengths,
        )


@dataclass
class BiGruParams:
    """Forward-direction cell plus, when bidirectional, a reverse-direction cell."""

    fwd: GruParams
    bwd: Optional[GruParams] = None

    @classmethod
    def init(cls, config: EncoderConfig, rng: Rng):
        fwd = GruParams.init(config.d_x, config.d_h, rng)
        bwd = GruParams.init(config.d_x, config.d_h, rng) if config.bidirectional else None
        return cls(fwd=fwd, bwd=bwd)

    def arrays(self):
        out = [("f." + name, arr) for name, arr in self.fwd.arrays()]
        if self.bwd is not None:
            out += [("b." + name, arr) for name, arr in self.bwd.arrays()]
        return out


@dataclass
class _DirectionSteps:
    # Per-timestep intermediates in visit order; h_prev is the state as
    # carried into the step (after masking of earlier steps).
    ts: List[int]
    h_prev: List[np.ndarray]
    r: List[np.ndarray]
    z: List[np.ndarray]
    rh: List[np.ndarray]
    h_tilde: List[np.ndarray]


@dataclass
class EncodeCache:
    batch: SequenceBatch
    fwd_steps: _DirectionSteps
    bwd_steps: Optional[_DirectionSteps]
    config: EncoderConfig


def _direction_forward(p: GruParams, values, mask, reverse: bool):
    n, t_max, _ = values.shape
    d_h = p.d_h
    flat = values.reshape(n * t_max, -1)
    # Input-side projections for all timesteps at once; only the
    # recurrent terms need the step loop.
    xr = (flat @ p.W_r.T).reshape(n, t_max, d_h)
    xz = (flat @ p.W_z.T).reshape(n, t_max, d_h)
    xc = (flat @ p.W.T).reshape(n, t_max, d_h)
    h = np.zeros((n, d_h), dtype=DTYPE)
    order = range(t_max - 1, -1, -1) if reverse else range(t_max)
    steps = _DirectionSteps(ts=[], h_prev=[], r=[], z=[], rh=[], h_tilde=[])
    for t in order:
        m = mask[:, t, None]
        r = sigmoid(xr[:, t] + h @ p.U_r.T)
        z = sigmoid(xz[:, t] + h @ p.U_z.T)
        rh = r * h
        h_tilde = np.tanh(xc[:, t] + rh @ p.U.T)
        h_new = z * h + (1.0 - z) * h_tilde
        steps.ts.append(t)
        steps.h_prev.append(h)
        steps.r.append(r)
        steps.z.append(z)
        steps.rh.append(rh)
        steps.h_tilde.append(h_tilde)
        h = np.where(m, h_new, h)
    return h, steps


def _direction_backward(p: GruParams, values, mask, steps: _DirectionSteps,
                        grad_final, need_dx: bool):
    n, t_max, d_x = values.shape
    d_h = p.d_h
    dpre_r = np.zeros((n, t_max, d_h), dtype=DTYPE)
    dpre_z = np.zeros((n, t_max, d_h), dtype=DTYPE)
    dpre_c = np.zeros((n, t_max, d_h), dtype=DTYPE)
    dU_r = np.zeros((d_h, d_h), dtype=DTYPE)
    dU_z = np.zeros((d_h, d_h), dtype=DTYPE)
    dU = np.zeros((d_h, d_h), dtype=DTYPE)
    g = np.array(grad_final, dtype=DTYPE, copy=True)
    for i in range(len(steps.ts) - 1, -1, -1):
        t = steps.ts[i]
        m = mask[:, t, None]
        h_prev = steps.h_prev[i]
        r, z, rh, h_tilde = steps.r[i], steps.z[i], steps.rh[i], steps.h_tilde[i]
        gc = np.where(m, g, 0.0)

        dz = gc * (h_prev - h_tilde)
        dh_tilde = gc * (1.0 - z)
        dh_prev = gc * z

        dc = dh_tilde * (1.0 - h_tilde * h_tilde)
        dU += dc.T @ rh
        drh = dc @ p.U
        dr = drh * h_prev
        dh_prev = dh_prev + drh * r

        dzp = dz * z * (1.0 - z)
        dU_z += dzp.T @ h_prev
        dh_prev = dh_prev + dzp @ p.U_z

        drp = dr * r * (1.0 - r)
        dU_r += drp.T @ h_prev
        dh_prev = dh_prev + drp @ p.U_r

        dpre_c[:, t] = dc
        dpre_z[:, t] = dzp
        dpre_r[:, t] = drp
        g = dh_prev + np.where(m, 0.0, g)

    flat = values.reshape(n * t_max, d_x)
    grads = GruParams(
        W_r=dpre_r.reshape(n * t_max, d_h).T @ flat,
        U_r=dU_r,
        W_z=dpre_z.reshape(n * t_max, d_h).T @ flat,
        U_z=dU_z,
        W=dpre_c.reshape(n * t_max, d_h).T @ flat,
        U=dU,
    )
    dx = None
    if need_dx:
        dx = (
            dpre_r.reshape(n * t_max, d_h) @ p.W_r
            + dpre_z.reshape(n * t_max, d_h) @ p.W_z
            + dpre_c.reshape(n * t_max, d_h) @ p.W
        ).reshape(n, t_max, d_x)
    return grads, dx


def encode_sequence(params: BiGruParams, batch: SequenceBatch,
                    config: EncoderConfig):
    """Encode a padded batch into one fixed-size vector per sample.

    The forward direction is unrolled left to right and its state frozen
    past each sample's length; the reverse direction is unrolled right to
    left, staying at zero until it enters the sample's real range. Output
    is the forward final state, concatenated with the reverse state at
    timestep 0 when bidirectional.

    Returns:
        (h, cache) with h of shape (n, config.out_dim).
    """
    if batch.lengths.min() < 1:
        raise ValueError("encode_sequence requires every sample length >= 1")
    if batch.values.shape[2] != config.d_x or params.fwd.d_x != config.d_x:
        raise ShapeError(
            f"batch width {batch.values.shape[2]} does not match d_x={config.d_x}"
        )
    if params.fwd.d_h != config.d_h:
        raise ShapeError(f"params d_h={params.fwd.d_h} != config d_h={config.d_h}")
    h_f, steps_f = _direction_forward(params.fwd, batch.values, batch.mask,
                                      reverse=False)
    if config.bidirectional:
        if params.bwd is None:
            raise ShapeError("bidirectional config but params.bwd is missing")
        h_b, steps_b = _direction_forward(params.bwd, batch.values, batch.mask,
                                          reverse=True)
        h = np.concatenate([h_f, h_b], axis=1)
    else:
        steps_b = None
        h = h_f
    return h, EncodeCache(batch=batch, fwd_steps=steps_f, bwd_steps=steps_b,
                          config=config)


def encode_sequence_backward(params: BiGruParams, cache: EncodeCache,
                             grad_out: np.ndarray, need_input_grads: bool = False):
    """Backward pass of :func:`encode_sequence`.

    Args:
        grad_out: (n, out_dim) gradient w.r.t. the encoder output.
        need_input_grads: also compute the gradient w.r.t. the padded
            input values (skipped in training, where inputs are data).

    Returns:
        (grads, d_values): BiGruParams-shaped gradients and, if requested,
        an (n, T, d_x) input gradient (else None).
    """
    d_h = cache.config.d_h
    grad_out = np.asarray(grad_out, dtype=DTYPE)
    if grad_out.shape != (cache.batch.n, cache.config.out_dim):
        raise ShapeError(
            f"grad shape {grad_out.shape} does not match encoder output "
            f"({cache.batch.n}, {cache.config.out_dim})"
        )
    values, mask = cache.batch.values, cache.batch.mask
    g_f = grad_out[:, :d_h]
    grads_f, dx_f = _direction_backward(params.fwd, values, mask,
                                        cache.fwd_steps, g_f, need_input_grads)
    if cache.config.bidirectional:
        g_b = grad_out[:, d_h:]
        grads_b, dx_b = _direction_backward(params.bwd, values, mask,
                                            cache.bwd_steps, g_b, need_input_grads)
        dx = None
        if need_input_grads:
            dx = dx_f + dx_b
        return BiGruParams(fwd=grads_f, bwd=grads_b), dx
    return BiGruParams(fwd=grads_f, bwd=None), dx_f
