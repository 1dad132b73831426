import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latefuse.encoder import (
    BiGruParams,
    EncoderConfig,
    GruParams,
    RnnParams,
    SequenceBatch,
    encode_sequence,
    encode_sequence_backward,
    gru_cell_backward,
    gru_cell_forward,
    simple_rnn_cell,
)
from latefuse.kernel import Rng, ShapeError
from oracles import encode_ref, gru_cell_ref


def params_as_lists(p: GruParams):
    return {name: arr.tolist() for name, arr in p.arrays()}


def random_cell(np_rng, d_x, d_h, scale=0.5):
    p = GruParams.zeros(d_x, d_h)
    for _, arr in p.arrays():
        arr[...] = np_rng.uniform(-scale, scale, arr.shape)
    return p


class TestGruCell:
    def test_zero_params_halve_the_state(self):
        # all-zero weights: both gates sit at 0.5 and the candidate at 0,
        # so the new state is exactly half the previous one
        p = GruParams.zeros(3, 2)
        h_prev = np.array([[1.0, -2.0], [0.0, 4.0]])
        x = np.ones((2, 3))
        h, _ = gru_cell_forward(p, x, h_prev)
        np.testing.assert_array_equal(h, 0.5 * h_prev)

    def test_zero_state_stays_zero_under_zero_params(self):
        p = GruParams.zeros(2, 3)
        h = np.zeros((1, 3))
        for _ in range(4):
            h, _ = gru_cell_forward(p, np.ones((1, 2)), h)
        np.testing.assert_array_equal(h, np.zeros((1, 3)))

    def test_matches_scalar_reference(self, np_rng):
        for _ in range(10):
            d_x, d_h = np_rng.integers(1, 5, size=2)
            p = random_cell(np_rng, d_x, d_h)
            x = np_rng.normal(size=(1, d_x))
            h_prev = np_rng.normal(size=(1, d_h))
            h, _ = gru_cell_forward(p, x, h_prev)
            want = gru_cell_ref(params_as_lists(p), x[0].tolist(),
                                h_prev[0].tolist())
            np.testing.assert_allclose(h[0], want, rtol=1e-12)

    def test_backward_matches_finite_differences(self, np_rng):
        d_x, d_h, n = 3, 2, 4
        p = random_cell(np_rng, d_x, d_h)
        x = np_rng.normal(size=(n, d_x))
        h_prev = np_rng.normal(size=(n, d_h))
        g = np_rng.normal(size=(n, d_h))
        _, cache = gru_cell_forward(p, x, h_prev)
        grads, dx, dh_prev = gru_cell_backward(p, cache, g)

        step = 1e-6

        def loss():
            h, _ = gru_cell_forward(p, x, h_prev)
            return float((h * g).sum())

        for arr, got in [(x, dx), (h_prev, dh_prev)] + [
            (getattr(p, name), getattr(grads, name))
            for name, _ in p.arrays()
        ]:
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                i = it.multi_index
                orig = arr[i]
                arr[i] = orig + step
                hi = loss()
                arr[i] = orig - step
                lo = loss()
                arr[i] = orig
                want = (hi - lo) / (2 * step)
                assert got[i] == pytest.approx(want, rel=1e-4, abs=1e-8)
                it.iternext()

    def test_rejects_mismatched_state_width(self):
        p = GruParams.zeros(3, 2)
        with pytest.raises(ShapeError):
            gru_cell_forward(p, np.zeros((1, 3)), np.zeros((1, 5)))


def test_simple_rnn_hand_value():
    p = RnnParams(W=np.array([[0.25]]), U=np.array([[0.5]]))
    h = simple_rnn_cell(p, np.array([[1.0]]), np.array([[0.5]]))
    # pre-activation 0.25 + 0.25 = 0.5
    assert h[0, 0] == pytest.approx(math.tanh(0.5), abs=1e-15)
    assert h[0, 0] == pytest.approx(0.46211715726000974, abs=1e-15)


class TestSequenceBatch:
    def test_pads_and_masks(self):
        seqs = [np.ones((3, 2)), 2 * np.ones((1, 2))]
        b = SequenceBatch.from_sequences(seqs)
        assert b.values.shape == (2, 3, 2)
        np.testing.assert_array_equal(b.lengths, [3, 1])
        np.testing.assert_array_equal(
            b.mask, [[True, True, True], [True, False, False]]
        )
        assert np.all(b.values[1, 1:] == 0)

    def test_rejects_empty_sequence(self):
        with pytest.raises(ValueError):
            SequenceBatch.from_sequences([np.ones((0, 2))])

    def test_take_trims_padding(self):
        seqs = [np.ones((5, 1)), np.ones((2, 1)), np.ones((1, 1))]
        b = SequenceBatch.from_sequences(seqs).take(np.array([1, 2]))
        assert b.values.shape == (2, 2, 1)
        np.testing.assert_array_equal(b.lengths, [2, 1])


def make_batch(np_rng, n, t_max, d_x):
    lengths = np_rng.integers(1, t_max + 1, size=n)
    lengths[0] = t_max
    seqs = [np_rng.normal(size=(t, d_x)) for t in lengths]
    return seqs, SequenceBatch.from_sequences(seqs)


class TestEncode:
    def test_matches_scalar_reference(self, np_rng):
        d_x, d_h = 3, 2
        cfg = EncoderConfig(d_x=d_x, d_h=d_h, bidirectional=True)
        params = BiGruParams(fwd=random_cell(np_rng, d_x, d_h),
                             bwd=random_cell(np_rng, d_x, d_h))
        seqs, batch = make_batch(np_rng, 5, 6, d_x)
        h, _ = encode_sequence(params, batch, cfg)
        for i, seq in enumerate(seqs):
            want = encode_ref(params_as_lists(params.fwd),
                              params_as_lists(params.bwd),
                              seq.tolist())
            np.testing.assert_allclose(h[i], want, rtol=1e-10, atol=1e-12)

    def test_unidirectional_matches_reference(self, np_rng):
        cfg = EncoderConfig(d_x=2, d_h=3, bidirectional=False)
        params = BiGruParams(fwd=random_cell(np_rng, 2, 3), bwd=None)
        seqs, batch = make_batch(np_rng, 4, 5, 2)
        h, _ = encode_sequence(params, batch, cfg)
        assert h.shape == (4, 3)
        for i, seq in enumerate(seqs):
            want = encode_ref(params_as_lists(params.fwd), None, seq.tolist())
            np.testing.assert_allclose(h[i], want, rtol=1e-10, atol=1e-12)

    def test_batch_equals_single(self, np_rng):
        cfg = EncoderConfig(d_x=2, d_h=2, bidirectional=True)
        params = BiGruParams.init(cfg, Rng(5))
        seqs, batch = make_batch(np_rng, 6, 7, 2)
        h, _ = encode_sequence(params, batch, cfg)
        for i, seq in enumerate(seqs):
            alone = SequenceBatch.from_sequences([seq])
            h1, _ = encode_sequence(params, alone, cfg)
            np.testing.assert_allclose(h[i], h1[0], rtol=1e-12, atol=1e-14)

    def test_padding_content_is_inert(self, np_rng):
        # garbage written into masked-out slots must not change a single bit
        cfg = EncoderConfig(d_x=3, d_h=4, bidirectional=True)
        params = BiGruParams.init(cfg, Rng(11))
        _, batch = make_batch(np_rng, 8, 9, 3)
        h_clean, _ = encode_sequence(params, batch, cfg)
        dirty = batch.values.copy()
        dirty[~batch.mask] = 1e6
        poked = SequenceBatch(values=dirty, mask=batch.mask,
                              lengths=batch.lengths)
        h_dirty, _ = encode_sequence(params, poked, cfg)
        assert np.array_equal(h_clean, h_dirty)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_state_stays_inside_unit_box(self, seed):
        # the state is a running convex mix of 0 and tanh outputs
        r = np.random.default_rng(seed)
        cfg = EncoderConfig(d_x=2, d_h=3, bidirectional=True)
        params = BiGruParams(fwd=random_cell(r, 2, 3, scale=3.0),
                             bwd=random_cell(r, 2, 3, scale=3.0))
        _, batch = make_batch(r, 4, 6, 2)
        h, _ = encode_sequence(params, batch, cfg)
        assert np.all(np.abs(h) < 1.0)

    def test_out_dim(self):
        assert EncoderConfig(5, 4, bidirectional=True).out_dim == 8
        assert EncoderConfig(5, 4, bidirectional=False).out_dim == 4

    def test_rejects_width_mismatch(self, np_rng):
        cfg = EncoderConfig(d_x=3, d_h=2, bidirectional=True)
        params = BiGruParams.init(cfg, Rng(0))
        _, batch = make_batch(np_rng, 2, 3, 4)
        with pytest.raises(ShapeError):
            encode_sequence(params, batch, cfg)

    def test_backward_param_grads_match_finite_differences(self, np_rng):
        cfg = EncoderConfig(d_x=2, d_h=2, bidirectional=True)
        params = BiGruParams(fwd=random_cell(np_rng, 2, 2),
                             bwd=random_cell(np_rng, 2, 2))
        _, batch = make_batch(np_rng, 3, 4, 2)
        g = np_rng.normal(size=(3, cfg.out_dim))
        _, cache = encode_sequence(params, batch, cfg)
        grads, _ = encode_sequence_backward(params, cache, g)

        step = 1e-6
        for (name, arr), (gname, got) in zip(params.arrays(), grads.arrays()):
            assert name == gname
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                i = it.multi_index
                orig = arr[i]
                arr[i] = orig + step
                hi = float((encode_sequence(params, batch, cfg)[0] * g).sum())
                arr[i] = orig - step
                lo = float((encode_sequence(params, batch, cfg)[0] * g).sum())
                arr[i] = orig
                want = (hi - lo) / (2 * step)
                assert got[i] == pytest.approx(want, rel=1e-4, abs=1e-8)
                it.iternext()
