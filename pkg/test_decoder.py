"""
Decoder block tests: HDConv, MCAG, APM, MSCCM, MEAB and the decoding stages
"""

import numpy as np
import pytest

from config.macmd_config import HDCONV_DILATIONS, REFERENCE_CHANNELS
from src.decoder.apm import (
    ApmBlock, apm_align, apm_fuse, apm_macs, apm_modulate, apm_param_count, apm_scale_weights,
)
from src.decoder.hdconv import HDConvLayer, cyclic_permutation, hdconv_macs, hdconv_param_count
from src.decoder.mcag import McagBlock, mcag_macs, mcag_param_count
from src.decoder.meab import MeabBlock, meab_macs, meab_param_count
from src.decoder.msccm import (
    ChannelMixCore, MsccmBlock, channel_mix, channel_mix_param_count, fold, msccm_align, msccm_macs,
    msccm_param_count, msccm_restore, qshift, unfold,
)
from src.decoder.seghead import (
    FusionBlock, SegHeadBlock, fusion_param_count, seghead_param_count,
)
from src.numerics import functional as F
from src.numerics.params import ParamStore
from src.numerics.rng import make_rng
from src.numerics.tensor import Tensor, backward
from src.utils.errors import ConfigError, ShapeError

REFERENCE_SIZES = [(56, 56), (28, 28), (14, 14), (7, 7)]


def pyramid(rng, channels, size):
    return [Tensor(rng.standard_normal((2, c, size >> i, size >> i))) for i, c in enumerate(channels)]


def direct_hdconv(x, weights, biases, dilations):
    """Dilated direct convolution per branch, then output quarter j takes sub-group (b + j) % 4 of branch b"""
    n, _, h, w = x.shape
    quarter = weights[0].shape[0]
    sub = quarter // 4
    out = np.zeros((n, 4 * quarter, h, w))
    for j in range(4):
        for b in range(4):
            d = dilations[b]
            padded = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (d, d), (d, d)))
            for s in range(sub):
                source = ((b + j) % 4) * sub + s
                target = j * quarter + b * sub + s
                acc = np.full((n, h, w), float(biases[b][source]))
                for u in range(3):
                    for v in range(3):
                        window = padded[:, :, u * d:u * d + h, v * d:v * d + w]
                        acc += np.einsum("c,nchw->nhw", weights[b][source, :, u, v].astype(np.float64), window)
                out[:, target] = acc
    return out


class TestHDConv:
    def test_permutation_for_sixteen_channels(self):
        expected = [0, 5, 10, 15, 1, 6, 11, 12, 2, 7, 8, 13, 3, 4, 9, 14]
        np.testing.assert_array_equal(cyclic_permutation(16), expected)

    def test_permutation_is_bijective(self):
        index = cyclic_permutation(64)
        np.testing.assert_array_equal(np.sort(index), np.arange(64))

    def test_each_quarter_draws_from_every_branch(self):
        index = cyclic_permutation(64)
        for quarter in index.reshape(4, 16):
            assert sorted(set(quarter // 16)) == [0, 1, 2, 3]

    def test_matches_branch_convolutions(self, rng, store64):
        layer = HDConvLayer(store64, "hd", 8, 16)
        x = Tensor(rng.standard_normal((2, 8, 9, 9)))
        raw = np.concatenate([
            F.conv2d(x, branch.weight, branch.bias, dilation=d, padding=d).data
            for branch, d in zip(layer.branches, HDCONV_DILATIONS)
        ], axis=1)
        np.testing.assert_allclose(layer(x).data, raw[:, layer.permutation], atol=1e-12)

    @pytest.mark.parametrize("case", range(50))
    def test_matches_direct_oracle(self, case):
        draw = make_rng(case, "hdconv.oracle")
        in_channels = int(draw.integers(1, 33))
        out_channels = int(draw.choice([16, 32]))
        dilations = tuple(int(d) for d in draw.choice(np.arange(1, 7), size=4, replace=False))
        batch, height, width = int(draw.integers(1, 4)), int(draw.integers(1, 17)), int(draw.integers(1, 17))

        layer = HDConvLayer(ParamStore(seed=case, dtype=np.float32), "hd", in_channels, out_channels,
                            dilations=dilations)
        for branch in layer.branches:
            branch.bias.data[...] = draw.standard_normal(branch.bias.shape)
        x = draw.standard_normal((batch, in_channels, height, width)).astype(np.float32)

        expected = direct_hdconv(x, [br.weight.data for br in layer.branches],
                                 [br.bias.data for br in layer.branches], dilations)
        got = layer(Tensor(x)).data
        assert got.dtype == np.float32
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-5)

    def test_dilations_must_be_four_positive(self, store64):
        with pytest.raises(ConfigError):
            HDConvLayer(store64, "hd", 16, 16, dilations=(1, 2, 3))
        with pytest.raises(ConfigError):
            HDConvLayer(store64, "hd", 16, 16, dilations=(0, 1, 2, 3))

    def test_dilations_and_shape(self, rng, store64):
        layer = HDConvLayer(store64, "hd", 16, 32)
        assert layer.dilations == (1, 2, 3, 5)
        assert layer(Tensor(rng.standard_normal((1, 16, 7, 11)))).shape == (1, 32, 7, 11)

    def test_impulse_support_reaches_five(self, rng, store64):
        layer = HDConvLayer(store64, "hd", 4, 16, bias=False)
        x = np.zeros((1, 4, 17, 17))
        x[0, :, 8, 8] = 1.0
        out = np.abs(layer(Tensor(x)).data).sum(axis=(0, 1))
        rows, cols = np.nonzero(out)
        assert rows.min() == 3 and rows.max() == 13
        assert cols.min() == 3 and cols.max() == 13

    def test_output_channels_must_be_multiple_of_sixteen(self, store64):
        with pytest.raises(ConfigError):
            HDConvLayer(store64, "hd", 16, 8)
        with pytest.raises(ConfigError):
            hdconv_param_count(16, 24)

    def test_counts(self, store64):
        assert hdconv_param_count(512, 512, with_bias=False) == 2_359_296
        assert hdconv_param_count(16, 16) == 2_320
        assert hdconv_param_count(64, 64, with_bias=False) == 36_864
        assert hdconv_macs(16, 16, 4, 4) == 9 * 16 * 16 * 16
        layer = HDConvLayer(store64, "hd", 16, 16)
        assert layer.num_parameters() == hdconv_param_count(16, 16)


class TestMCAG:
    def test_zero_attention_gives_half_gate(self, rng, store64):
        block = McagBlock(store64, "mcag", 16)
        block.attn_conv.weight.data[...] = 0.0
        x = Tensor(rng.standard_normal((2, 16, 6, 6)))
        x1, alpha = block.gate(x)
        np.testing.assert_allclose(alpha.data, 0.5)
        np.testing.assert_allclose(block(x).data, 0.5 * x1.data, atol=1e-12)

    def test_gate_is_shared_across_channels(self, rng, store64):
        block = McagBlock(store64, "mcag", 16)
        x = Tensor(rng.standard_normal((2, 16, 6, 6)))
        x1, alpha = block.gate(x)
        out = block(x).data
        assert alpha.shape == (2, 1, 6, 6)
        assert np.all((alpha.data > 0) & (alpha.data < 1))
        np.testing.assert_allclose(out, x1.data * alpha.data, atol=1e-12)

    def test_wrong_channels(self, store64):
        block = McagBlock(store64, "mcag", 16)
        with pytest.raises(ShapeError, match="mcag"):
            block(Tensor(np.zeros((1, 32, 4, 4))))

    def test_counts(self, store64):
        assert mcag_param_count(64) == 37_123
        assert sum(mcag_param_count(c) for c in REFERENCE_CHANNELS) == 3_469_324
        assert sum(mcag_macs(c, h, w) for c, (h, w) in zip(REFERENCE_CHANNELS, REFERENCE_SIZES)) == 527_838_976
        assert McagBlock(store64, "mcag", 16).num_parameters() == mcag_param_count(16)


class TestAPM:
    CHANNELS = (16, 16, 32, 32)

    def test_scale_weights_sum_to_one(self, rng, store64):
        block = ApmBlock(store64, "apm", self.CHANNELS, 16)
        aligned = apm_align(pyramid(rng, self.CHANNELS, 8), block)
        assert [a.shape for a in aligned] == [(2, 16, 8, 8)] * 4
        weights = apm_scale_weights(aligned, block).data
        assert weights.shape == (2, 4, 8, 8)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)

    def test_scale_weights_follow_stage_order(self, rng, store64):
        block = ApmBlock(store64, "apm", self.CHANNELS, 16)
        aligned = [Tensor(rng.standard_normal((2, 16, 8, 8))) for _ in range(4)]
        order = [2, 0, 3, 1]
        weights = apm_scale_weights(aligned, block).data
        permuted = apm_scale_weights([aligned[i] for i in order], block).data
        np.testing.assert_allclose(permuted, weights[:, order], atol=1e-12)
        np.testing.assert_allclose(apm_fuse([aligned[i] for i in order], block).data,
                                   apm_fuse(aligned, block).data, atol=1e-12)

    def test_single_scale_fusion_is_identity(self, rng, store64):
        block = ApmBlock(store64, "apm", self.CHANNELS, 16)
        x = Tensor(rng.standard_normal((2, 16, 8, 8)))
        np.testing.assert_allclose(apm_fuse([x], block).data, x.data, atol=1e-12)

    def test_zero_inputs_give_zero_context(self, store64):
        block = ApmBlock(store64, "apm", self.CHANNELS, 16)
        features = [Tensor(np.zeros((2, c, 8 >> i, 8 >> i))) for i, c in enumerate(self.CHANNELS)]
        y = block(features)
        assert y.shape == (2, 16, 8, 8)
        np.testing.assert_array_equal(y.data, 0.0)

    def test_modulation_shapes_must_match(self, rng, store64):
        block = ApmBlock(store64, "apm", self.CHANNELS, 16)
        fused = Tensor(rng.standard_normal((1, 16, 8, 8)))
        with pytest.raises(ShapeError):
            apm_modulate([Tensor(rng.standard_normal((1, 16, 4, 4)))], fused, block)

    def test_levels_must_halve(self, rng, store64):
        block = ApmBlock(store64, "apm", self.CHANNELS, 16)
        features = pyramid(rng, self.CHANNELS, 8)
        features[2] = Tensor(rng.standard_normal((2, 32, 3, 3)))
        with pytest.raises(ShapeError, match="not half"):
            block(features)

    def test_width_must_divide_by_eight(self, store64):
        with pytest.raises(ConfigError):
            ApmBlock(store64, "apm", self.CHANNELS, 12)

    def test_counts(self, store64):
        assert apm_param_count(REFERENCE_CHANNELS, 64) == 71_121
        assert apm_macs(REFERENCE_CHANNELS, 64, REFERENCE_SIZES) == 82_790_400
        block = ApmBlock(store64, "apm", self.CHANNELS, 16)
        assert block.num_parameters() == apm_param_count(self.CHANNELS, 16)


class TestMSCCM:
    def test_qshift_hand_case(self):
        x = np.tile(np.array([1.0, 2.0, 3.0]), (1, 4, 1, 1))
        out = qshift(Tensor(x)).data
        np.testing.assert_array_equal(out[0, 0, 0], [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(out[0, 1, 0], [2.0, 3.0, 0.0])
        # one row: vertical shifts only see the zero fill
        np.testing.assert_array_equal(out[0, 2:], 0.0)

    def test_qshift_vertical(self):
        x = np.arange(12, dtype=np.float64).reshape(1, 4, 3, 1)
        out = qshift(Tensor(x)).data
        np.testing.assert_array_equal(out[0, 2, :, 0], [0.0, 6.0, 7.0])
        np.testing.assert_array_equal(out[0, 3, :, 0], [10.0, 11.0, 0.0])

    def test_qshift_needs_four_groups(self):
        with pytest.raises(ShapeError):
            qshift(Tensor(np.zeros((1, 6, 3, 3))))

    def test_unfold_fold_round_trip(self, rng):
        x = Tensor(rng.standard_normal((2, 8, 3, 5)))
        tokens = unfold(x)
        assert tokens.shape == (2, 15, 8)
        np.testing.assert_array_equal(tokens.data[1, 7], x.data[1, :, 1, 2])
        np.testing.assert_array_equal(fold(tokens, (3, 5)).data, x.data)
        with pytest.raises(ShapeError):
            fold(tokens, (4, 4))

    def test_channel_mix_is_zero_at_init(self, rng, store64):
        core = ChannelMixCore(store64, "mix", 8)
        tokens = Tensor(rng.standard_normal((12, 8)))
        out = channel_mix(tokens, core, (3, 4))
        assert out.shape == (12, 8)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_value_weight_receives_gradient_at_init(self, rng, store64):
        core = ChannelMixCore(store64, "mix", 8)
        tokens = Tensor(rng.standard_normal((2, 12, 8)))
        backward(channel_mix(tokens, core, (3, 4)).sum(), store64)
        assert np.abs(core.value.weight.grad).max() > 0
        np.testing.assert_array_equal(core.key.weight.grad, 0.0)

    def test_token_width_must_divide_by_four(self, store64):
        with pytest.raises(ShapeError):
            ChannelMixCore(store64, "mix", 6)

    def test_identity_at_init(self, rng, store64):
        block = MsccmBlock(store64, "msccm", (16, 16, 16))
        for proj in block.in_projs + block.out_projs:
            proj.weight.data[...] = np.eye(16).reshape(16, 16, 1, 1)
        features = pyramid(rng, (16, 16, 16), 8)
        out = block(features)
        assert [o.shape for o in out] == [f.shape for f in features]
        np.testing.assert_allclose(out[0].data, features[0].data, rtol=0, atol=1e-12)

    def test_stage_sizes_must_nest(self, rng, store64):
        block = MsccmBlock(store64, "msccm", (16, 16, 32))
        features = pyramid(rng, (16, 16, 32), 8)
        features[1] = Tensor(rng.standard_normal((2, 16, 3, 3)))
        with pytest.raises(ShapeError, match="nest"):
            block(features)

    @pytest.mark.slow
    def test_reference_shapes(self, rng):
        store = ParamStore(seed=0, dtype=np.float32)
        block = MsccmBlock(store, "msccm", (64, 128, 320))
        features = [Tensor(rng.standard_normal((1, c, s, s)).astype(np.float32))
                    for c, s in zip((64, 128, 320), (56, 28, 14))]
        x_cat = msccm_align(features, block)
        assert x_cat.shape == (1, 192, 56, 56)
        restored = msccm_restore(x_cat, block, [(56, 56), (28, 28), (14, 14)])
        assert [r.shape for r in restored] == [(1, 64, 56, 56), (1, 128, 28, 28), (1, 320, 14, 14)]

    def test_small_shapes(self, rng, store64):
        block = MsccmBlock(store64, "msccm", (16, 32, 48))
        features = pyramid(rng, (16, 32, 48), 8)
        assert msccm_align(features, block).shape == (2, 48, 8, 8)
        assert [o.shape for o in block(features)] == [(2, 16, 8, 8), (2, 32, 4, 4), (2, 48, 2, 2)]
        with pytest.raises(ShapeError):
            msccm_restore(Tensor(np.zeros((2, 40, 8, 8))), block, [(8, 8), (4, 4), (2, 2)])

    def test_counts(self, store64):
        assert channel_mix_param_count(192) == 185_088
        assert msccm_param_count((64, 128, 320)) == 251_328
        assert msccm_macs((64, 128, 320), 56, 56) == 783_548_416
        block = MsccmBlock(store64, "msccm", (16, 32, 48))
        assert block.num_parameters() == msccm_param_count((16, 32, 48))


class TestMEAB:
    def test_zero_input_gives_zero_output(self, store64):
        block = MeabBlock(store64, "meab", 16, reduction=4)
        y = block(Tensor(np.zeros((2, 16, 4, 4))))
        assert y.shape == (2, 16, 4, 4)
        np.testing.assert_array_equal(y.data, 0.0)

    def test_gate_shapes_and_ranges(self, rng, store64):
        block = MeabBlock(store64, "meab", 16, reduction=4)
        u = block.features(Tensor(rng.standard_normal((2, 16, 5, 5))))
        channel = block.channel_gate(u).data
        spatial = block.spatial_gate(u).data
        assert channel.shape == (2, 16, 1, 1)
        assert spatial.shape == (2, 1, 5, 5)
        assert np.all((channel > 0) & (channel < 1))
        assert np.all((spatial > 0) & (spatial < 1))

    def test_reduction_must_divide(self, store64):
        with pytest.raises(ConfigError):
            MeabBlock(store64, "meab", 16, reduction=3)

    def test_wrong_channels(self, store64):
        block = MeabBlock(store64, "meab", 16, reduction=4)
        with pytest.raises(ShapeError, match="meab"):
            block(Tensor(np.zeros((1, 8, 4, 4))))

    def test_counts(self, store64):
        assert meab_param_count(16, 4) == 4_951
        assert meab_param_count(512, 16) == 4_755_075
        assert meab_macs(512, 7, 7, 16) == pytest.approx(231.25e6, rel=1e-3)
        assert MeabBlock(store64, "meab", 16, reduction=4).num_parameters() == 4_951


class TestDecodingStages:
    def test_seghead_doubles_resolution(self, rng, store64):
        head = SegHeadBlock(store64, "head", 8, 4, scale=2)
        assert head(Tensor(rng.standard_normal((2, 8, 3, 5)))).shape == (2, 4, 6, 10)

    def test_seghead_explicit_size(self, rng, store64):
        head = SegHeadBlock(store64, "head", 8, 4, scale=4)
        assert head(Tensor(rng.standard_normal((1, 8, 4, 4))), (16, 12)).shape == (1, 4, 16, 12)

    def test_seghead_output_is_non_negative(self, rng, store64):
        head = SegHeadBlock(store64, "head", 8, 4)
        assert head(Tensor(rng.standard_normal((2, 8, 4, 4)))).data.min() >= 0.0

    def test_seghead_rejects_wrong_channels(self, store64):
        head = SegHeadBlock(store64, "head", 8, 4)
        with pytest.raises(ShapeError, match="head"):
            head(Tensor(np.zeros((1, 6, 4, 4))))

    def test_fusion(self, rng, store64):
        fusion = FusionBlock(store64, "fusion", 32, 16)
        assert fusion(Tensor(rng.standard_normal((2, 32, 4, 4)))).shape == (2, 16, 4, 4)
        assert fusion.num_parameters() == fusion_param_count(32, 16)
        assert fusion_param_count(128, 64) == 45_440

    def test_seghead_count_matches_store(self, store64):
        head = SegHeadBlock(store64, "head", 8, 4)
        assert head.num_parameters() == seghead_param_count(8, 4)
