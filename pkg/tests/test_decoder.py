"""Horizon decoder: context expansion, transformer stack, regression head."""

import numpy as np
import pytest

from eventfuse import tensor as T
from eventfuse.blocks import positional_encoding_matrix
from eventfuse.decoder import DecoderConfig, HorizonDecoder
from eventfuse.errors import ConfigError
from eventfuse.gradcheck import grad_check
from eventfuse.tensor import Tensor


def rng(seed=0):
    return np.random.default_rng(seed)


def make_decoder(horizon=4, d_dec=8, blocks=1, heads=2, fusion=6, seed=0):
    cfg = DecoderConfig(
        n_blocks=blocks, n_head=heads, d_dec=d_dec, head_layers=1,
        horizon=horizon, d_y=1,
    )
    return HorizonDecoder(fusion, cfg, rng(seed))


class TestExpandContext:
    def test_zero_context_zero_win_leaves_pe(self):
        dec = make_decoder()
        dec.w_in.weight.data[...] = 0.0
        dec.w_in.bias.data[...] = 0.0
        out = dec.expand(Tensor(np.zeros((1, 6))))
        np.testing.assert_array_equal(out.data, positional_encoding_matrix(4, 8))

    def test_single_step_horizon(self):
        dec = make_decoder(horizon=1)
        assert dec.expand(Tensor(rng(1).standard_normal((1, 6)))).shape == (1, 8)

    def test_row_differences_independent_of_context(self):
        dec = make_decoder()
        pe = positional_encoding_matrix(4, 8)
        for seed in range(3):
            out = dec.expand(Tensor(rng(seed).standard_normal((1, 6)))).data
            for h1 in range(4):
                for h2 in range(4):
                    np.testing.assert_allclose(
                        out[h1] - out[h2], pe[h1] - pe[h2], atol=1e-12
                    )


class TestDecode:
    @pytest.mark.parametrize("horizon", [1, 35, 70, 140])
    def test_shape_across_horizons(self, horizon):
        dec = make_decoder(horizon=horizon)
        hid = dec.decode(dec.expand(Tensor(rng(2).standard_normal((1, 6)))))
        assert hid.shape == (horizon, 8)

    def test_zero_weight_blocks_pass_through_norms(self):
        dec = make_decoder()
        block = dec.blocks[0]
        for _, p in block.attn.named_parameters():
            p.data[...] = 0.0
        for lin in (block.ff1, block.ff2):
            lin.weight.data[...] = 0.0
            lin.bias.data[...] = 0.0
        x = Tensor(rng(3).standard_normal((4, 8)))
        np.testing.assert_allclose(
            dec.decode(x).data, block.ln2(block.ln1(x)).data, atol=1e-14
        )

    def test_gradient_check_one_block(self):
        dec = make_decoder(horizon=3)
        z = Tensor(rng(4).standard_normal((1, 6)), requires_grad=True)
        y = Tensor(rng(5).standard_normal((3, 1)))
        params = dict(dec.named_parameters())
        names, tensors = zip(*params.items())
        report = grad_check(
            lambda: T.mse(dec(z), y), [z] + list(tensors), tol=1e-4,
            names=["z"] + list(names), sample=3, rng=rng(6),
        )
        assert report.passed, str(report)


class TestRegress:
    def test_zero_head_returns_bias(self):
        dec = make_decoder()
        for layer in dec.head.layers:
            layer.weight.data[...] = 0.0
            layer.bias.data[...] = 0.0
        dec.w_out.weight.data[...] = 0.0
        dec.w_out.bias.data[...] = 1.5
        out = dec.regress(Tensor(rng(7).standard_normal((4, 8))))
        np.testing.assert_array_equal(out.data, np.full((4, 1), 1.5))

    def test_output_shape(self):
        dec = make_decoder()
        assert dec.regress(Tensor(rng(8).standard_normal((4, 8)))).shape == (4, 1)

    def test_row_permutation_equivariance(self):
        dec = make_decoder()
        hid = rng(9).standard_normal((4, 8))
        perm = rng(10).permutation(4)
        base = dec.regress(Tensor(hid)).data
        permuted = dec.regress(Tensor(hid[perm])).data
        np.testing.assert_allclose(permuted, base[perm], atol=1e-14)


class TestEndToEnd:
    def test_bitwise_deterministic(self):
        z = Tensor(rng(11).standard_normal((1, 6)))
        out1 = make_decoder(seed=5)(z).data
        out2 = make_decoder(seed=5)(z).data
        np.testing.assert_array_equal(out1, out2)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            DecoderConfig(n_blocks=1, n_head=3, d_dec=8, horizon=4)
        with pytest.raises(ConfigError):
            DecoderConfig(n_blocks=0, n_head=2, d_dec=8, horizon=4)

    def test_fuse_decode_regress_pipeline_gradient(self):
        """Full micro pipeline (fusion context -> decode -> regress -> loss)
        against central differences."""
        from eventfuse import gating

        dec = make_decoder(horizon=3, d_dec=16, heads=2, fusion=16, seed=12)
        t = Tensor(rng(13).standard_normal((1, 16)), requires_grad=True)
        s = Tensor(rng(14).standard_normal((1, 16)), requires_grad=True)
        w = Tensor(rng(15).random((1, 16)), requires_grad=False)
        y = Tensor(rng(16).standard_normal((3, 1)))

        def loss():
            fused = gating.fuse(t, s, w, T.sub(Tensor(np.ones((1, 16))), w))
            return T.add(T.mse(dec(fused), y), T.mae(dec(fused), y))

        names, tensors = zip(*dec.named_parameters())
        report = grad_check(
            loss, [t, s] + list(tensors), tol=1e-4,
            names=["t", "s"] + list(names), sample=3, rng=rng(17),
        )
        assert report.passed, str(report)
