"""Gated fusion, utility gaps, responsibility targets, and gate loss."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventfuse import gating
from eventfuse import tensor as T
from eventfuse.errors import DataError
from eventfuse.gradcheck import grad_check
from eventfuse.model import ModelConfig
from eventfuse.tensor import ShapeError, Tape, Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def make_gate(f=8, seed=0, zero=False):
    g = gating.GateMLP(f, rng(seed))
    if zero:
        for _, p in g.named_parameters():
            p.data[...] = 0.0
    return g


class TestGateWeights:
    def test_zero_mlp_gives_exact_half(self):
        gate = make_gate(zero=True)
        t = Tensor(rng(1).standard_normal((1, 8)))
        s = Tensor(rng(2).standard_normal((1, 8)))
        text_w, ts_w = gating.gate_weights(t, s, gate, 1.0)
        np.testing.assert_array_equal(text_w.data, np.full((1, 8), 0.5))
        assert gating.openness(text_w).item() == 0.5

    def test_log3_difference_gives_three_quarters(self):
        gate = make_gate(zero=True)
        joint = Tensor(np.zeros((1, 16)))
        logits = gate(joint)  # zeros
        # closed form check on the softmax identity itself
        diff = math.log(3.0)
        assert abs(sigmoid(diff) - 0.75) < 1e-12
        # and through the tensor path
        text_w = T.sigmoid(Tensor([[diff]]))
        assert abs(text_w.data[0, 0] - 0.75) < 1e-12

    @given(st.integers(0, 1000))
    @settings(max_examples=30, deadline=None)
    def test_weights_sum_to_one(self, seed):
        gate = make_gate(seed=seed % 7)
        t = Tensor(rng(seed).standard_normal((1, 8)))
        s = Tensor(rng(seed + 1).standard_normal((1, 8)))
        text_w, ts_w = gating.gate_weights(t, s, gate, 1.0)
        np.testing.assert_allclose(text_w.data + ts_w.data, np.ones((1, 8)), atol=1e-12)
        assert np.all(text_w.data > 0) and np.all(text_w.data < 1)


class TestFuse:
    def test_endpoints(self):
        t = Tensor(rng(1).standard_normal((1, 6)))
        s = Tensor(rng(2).standard_normal((1, 6)))
        ones = Tensor(np.ones((1, 6)))
        zeros = Tensor(np.zeros((1, 6)))
        np.testing.assert_array_equal(gating.fuse(t, s, ones, zeros).data, t.data)
        np.testing.assert_array_equal(gating.fuse(t, s, zeros, ones).data, s.data)

    def test_identical_inputs_gate_free(self):
        t = Tensor(rng(3).standard_normal((1, 6)))
        w = Tensor(rng(4).random((1, 6)))
        wc = Tensor(1.0 - w.data)
        np.testing.assert_allclose(gating.fuse(t, t, w, wc).data, t.data, atol=1e-15)

    def test_half_mix(self):
        t = Tensor(rng(5).standard_normal((1, 6)))
        s = Tensor(rng(6).standard_normal((1, 6)))
        half = Tensor(np.full((1, 6), 0.5))
        np.testing.assert_allclose(
            gating.fuse(t, s, half, half).data, (t.data + s.data) / 2, atol=1e-15
        )

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gating.fuse(
                Tensor(np.ones((1, 4))), Tensor(np.ones((1, 6))),
                Tensor(np.ones((1, 4))), Tensor(np.ones((1, 4))),
            )


class TestUtilityGap:
    def _decoder(self):
        w = Tensor(rng(7).standard_normal((3, 6)))

        def decode(ctx):
            return T.matmul(w, T.transpose(ctx))  # (3, 1) toy forecast

        return decode

    def test_same_context_gives_bitwise_zero(self):
        decode = self._decoder()
        s = Tensor(rng(8).standard_normal((1, 6)))
        y = Tensor(rng(9).standard_normal((3, 1)))
        _, _, gap = gating.granger_utility(s, s, y, decode)
        assert gap == 0.0

    def test_arithmetic(self):
        # loss_ts 0.5, loss_full 0.2 -> gap 0.3; reversed -> -0.3
        assert 0.5 - 0.2 == pytest.approx(0.3)
        decode = self._decoder()
        z = Tensor(rng(10).standard_normal((1, 6)))
        s = Tensor(rng(11).standard_normal((1, 6)))
        y = Tensor(rng(12).standard_normal((3, 1)))
        loss_full, loss_ts, gap = gating.granger_utility(z, s, y, decode)
        assert gap == pytest.approx(loss_ts.item() - loss_full.item(), abs=1e-15)


class TestResponsibility:
    def test_all_zero_gaps(self):
        r = gating.responsibility(np.zeros(5), gain=1.0, min_scale=1e-6, clip_limit=6.0)
        np.testing.assert_array_equal(r, np.full(5, 0.5))

    def test_symmetric_pair_closed_form(self):
        r = gating.responsibility([2.0, -2.0], gain=1.0, min_scale=1e-6, clip_limit=6.0)
        np.testing.assert_allclose(r, [sigmoid(1.0), sigmoid(-1.0)], atol=1e-12)
        assert abs(r[0] - 0.7310585786300049) < 1e-12

    def test_clip_saturates(self):
        # one huge gap among many small ones: scaled value 50/mean|gap| >> 6
        gaps = [50.0] + [0.001] * 99
        r = gating.responsibility(gaps, gain=1.0, min_scale=1e-6, clip_limit=6.0)
        assert abs(r[0] - sigmoid(6.0)) < 1e-12
        assert abs(r[0] - 0.9975273768433653) < 1e-9

    def test_bounds_always_hold(self):
        for seed in range(20):
            gaps = rng(seed).standard_normal(17) * 10.0 ** float(rng(seed + 1).integers(-8, 3))
            r = gating.responsibility(gaps, 1.0, 1e-6, 6.0)
            assert np.all(r >= sigmoid(-6.0) - 1e-15)
            assert np.all(r <= sigmoid(6.0) + 1e-15)

    def test_monotone_in_gap(self):
        gaps = np.sort(rng(3).standard_normal(9))
        r = gating.responsibility(gaps, 1.0, 1e-6, 6.0)
        assert np.all(np.diff(r) >= 0)

    def test_exact_invariance_power_of_two_rescale(self):
        gaps = rng(4).standard_normal(8)
        base = gating.responsibility(gaps, 1.0, 1e-6, 6.0)
        np.testing.assert_array_equal(
            gating.responsibility(gaps * 4.0, 1.0, 1e-6, 6.0), base
        )
        np.testing.assert_array_equal(
            gating.responsibility(gaps * 0.25, 1.0, 1e-6, 6.0), base
        )

    def test_invariance_general_rescale(self):
        gaps = rng(5).standard_normal(8)
        base = gating.responsibility(gaps, 1.0, 1e-6, 6.0)
        np.testing.assert_allclose(
            gating.responsibility(gaps * 3.0, 1.0, 1e-6, 6.0), base, atol=1e-12
        )

    def test_empty_batch_rejected(self):
        with pytest.raises(DataError):
            gating.responsibility([], 1.0, 1e-6, 6.0)


class TestGateLoss:
    def test_perfect_match_zero(self):
        alphas = [Tensor(0.4), Tensor(0.7)]
        assert gating.gate_loss(alphas, [0.4, 0.7]).item() == pytest.approx(0.0, abs=1e-15)

    def test_quarter(self):
        assert gating.gate_loss([Tensor(0.5)], [1.0]).item() == pytest.approx(0.25)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            gating.gate_loss([Tensor(0.5)], [0.5, 0.5])

    def test_gradient_through_gate_mlp(self):
        gate = make_gate(f=6, seed=13)
        joints = [Tensor(rng(20 + i).standard_normal((1, 12))) for i in range(2)]
        targets = np.array([0.8, 0.3])

        def loss():
            opens = []
            for joint in joints:
                text_w, _ = gating.gate_weights_from_joint(joint, gate, 1.0)
                opens.append(gating.openness(text_w))
            return gating.gate_loss(opens, targets)

        names, params = zip(*gate.named_parameters())
        report = grad_check(loss, list(params), tol=1e-4, names=list(names))
        assert report.passed, str(report)

    def test_gate_loss_gradient_reaches_only_gate_mlp(self):
        """Tape inspection: the distillation loss moves the gate MLP and
        nothing upstream of the detached joint."""
        gate = make_gate(f=6, seed=14)
        t = Tensor(rng(30).standard_normal((1, 6)), requires_grad=True)
        s = Tensor(rng(31).standard_normal((1, 6)), requires_grad=True)
        with Tape() as tape:
            text_w, _ = gating.gate_weights(t, s, gate, 1.0)
            loss = gating.gate_loss([gating.openness(text_w)], [0.9])
            tape.backward(loss)
        assert tape.grad(t) is None
        assert tape.grad(s) is None
        gate_grads = [tape.grad(p) for _, p in gate.named_parameters()]
        assert any(g is not None and np.any(g != 0) for g in gate_grads)
