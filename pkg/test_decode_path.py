"""
Full network tests: encoder pyramid, MACMD wiring, profiler and ablation counts
"""

import numpy as np
import pytest

from config.macmd_config import REFERENCE_CHANNELS, REFERENCE_INPUT_SIZE, TOY_CHANNELS
from src.decoder.encoder import FeaturePyramid, PyramidEncoder, encoder_param_count
from src.decoder.macmd import MacmdModel, ModelConfig, macmd_forward
from src.decoder.meab import meab_param_count
from src.decoder.msccm import msccm_param_count
from src.decoder.profiler import format_profile, profile, stored_counts
from src.numerics.params import ParamStore
from src.numerics.tensor import Tensor, no_grad
from src.pipeline.ablation import ABLATION_TOGGLES, ablation_configs, ablation_profile
from src.utils.errors import ConfigError, ShapeError

SMALL = (16, 16, 32, 32)


@pytest.fixture
def image(rng):
    return Tensor(rng.random((2, 3, 64, 64)).astype(np.float32))


class TestEncoder:
    def test_toy_pyramid_shapes(self, image, store32):
        encoder = PyramidEncoder(store32, "encoder", TOY_CHANNELS)
        levels = encoder(image).levels
        assert [x.shape for x in levels] == [(2, 32, 16, 16), (2, 64, 8, 8), (2, 128, 4, 4), (2, 256, 2, 2)]

    def test_size_must_be_multiple_of_32(self, rng, store32):
        encoder = PyramidEncoder(store32, "encoder", SMALL)
        with pytest.raises(ShapeError, match="multiple of 32"):
            encoder(Tensor(rng.random((1, 3, 48, 48))))

    def test_pyramid_levels_must_halve(self, rng):
        levels = [Tensor(rng.random((1, 4, s, s))) for s in (8, 4, 3, 1)]
        with pytest.raises(ShapeError):
            FeaturePyramid(*levels)

    def test_count_matches_store(self, store32):
        encoder = PyramidEncoder(store32, "encoder", SMALL)
        assert encoder.num_parameters() == encoder_param_count(SMALL)


class TestModel:
    def test_output_shapes(self, image):
        model = MacmdModel(ModelConfig(channels=TOY_CHANNELS, num_classes=3))
        maps = model(image)
        assert len(maps) == 3
        assert all(p.shape == (2, 3, 64, 64) for p in maps)

    def test_binary_model_has_one_channel(self, image):
        model = MacmdModel(ModelConfig(channels=SMALL, num_classes=1, meab_reduction=4))
        assert all(p.shape == (2, 1, 64, 64) for p in model(image))

    def test_same_seed_same_outputs(self, image):
        cfg = ModelConfig(channels=SMALL, num_classes=3, meab_reduction=4, seed=5)
        first = MacmdModel(cfg)(image)
        second = MacmdModel(cfg)(image)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.data, b.data)

    def test_different_seed_differs(self, image):
        a = MacmdModel(ModelConfig(channels=SMALL, meab_reduction=4, seed=1))(image)[0]
        b = MacmdModel(ModelConfig(channels=SMALL, meab_reduction=4, seed=2))(image)[0]
        assert not np.array_equal(a.data, b.data)

    def test_zero_weights_give_zero_logits(self, image):
        model = MacmdModel(ModelConfig(channels=SMALL, num_classes=3, meab_reduction=4))
        for param in model.store:
            if param.name.endswith(".weight"):
                param.value.data[...] = 0.0
        for p in model(image):
            np.testing.assert_array_equal(p.data, 0.0)

    def test_eval_mode_is_batch_independent(self, image):
        model = MacmdModel(ModelConfig(channels=SMALL, meab_reduction=4)).eval()
        with no_grad():
            pair = model(image)[0].data
            single = model(Tensor(image.data[:1]))[0].data
        np.testing.assert_allclose(pair[:1], single, rtol=1e-5, atol=1e-6)

    def test_wrong_input_size(self, rng):
        model = MacmdModel(ModelConfig(channels=SMALL, meab_reduction=4))
        with pytest.raises(ShapeError):
            model(Tensor(rng.random((1, 3, 40, 64))))

    def test_decoder_checks_pyramid_widths(self, rng):
        model = MacmdModel(ModelConfig(channels=SMALL, meab_reduction=4))
        levels = [Tensor(rng.random((1, c, s, s))) for c, s in zip((16, 16, 16, 32), (8, 4, 2, 1))]
        with pytest.raises(ShapeError, match="level 3"):
            macmd_forward(FeaturePyramid(*levels), model)

    @pytest.mark.parametrize("toggles", ABLATION_TOGGLES)
    def test_every_ablation_runs(self, image, toggles):
        a, m, e = toggles
        cfg = ModelConfig(channels=SMALL, num_classes=2, meab_reduction=4,
                          use_mcag_apm=a, use_msccm=m, use_meab=e)
        model = MacmdModel(cfg)
        assert all(p.shape == (2, 2, 64, 64) for p in model(image))
        table = profile(cfg, 64)
        counts = stored_counts(model)
        for row in counts.index:
            assert counts[row] == table.loc[row, "params"], row

    def test_shared_store(self):
        store = ParamStore(seed=0, dtype=np.float64)
        model = MacmdModel(ModelConfig(channels=SMALL, meab_reduction=4), store=store)
        assert model.store is store
        assert store.dtype == np.float64


class TestModelConfig:
    def test_rejects_odd_first_width(self):
        with pytest.raises(ConfigError):
            ModelConfig(channels=(15, 16, 32, 32), use_mcag_apm=False, use_meab=False, use_msccm=False)

    def test_hdconv_widths_need_sixteen(self):
        with pytest.raises(ConfigError, match="MCAG"):
            ModelConfig(channels=(16, 24, 32, 32))

    def test_meab_reduction_must_divide(self):
        with pytest.raises(ConfigError, match="MEAB"):
            ModelConfig(channels=SMALL, meab_reduction=5)

    def test_needs_four_widths(self):
        with pytest.raises(ConfigError):
            ModelConfig(channels=(16, 32, 64))

    def test_labels(self):
        assert ModelConfig(channels=SMALL, meab_reduction=4).modules_label == "MCAG+APM+MSCCM+MEAB"
        cfg = ModelConfig(channels=SMALL, meab_reduction=4, use_mcag_apm=False, use_msccm=False, use_meab=False)
        assert cfg.modules_label == "baseline"


class TestProfiler:
    @pytest.fixture
    def reference(self):
        cfg = ModelConfig(channels=REFERENCE_CHANNELS, num_classes=9, meab_reduction=16)
        return profile(cfg, REFERENCE_INPUT_SIZE)

    def test_reference_scale_rows(self, reference):
        assert reference.loc["mcag", "params"] == 3_469_324
        assert reference.loc["mcag", "macs"] == 527_838_976
        assert reference.loc["apm", "params"] == 71_121
        assert reference.loc["apm", "macs"] == 82_790_400
        assert reference.loc["msccm", "params"] == 251_328
        assert reference.loc["msccm", "macs"] == 783_548_416
        assert reference.loc["meab", "params"] == 4_755_075
        assert reference.loc["meab", "macs"] == pytest.approx(231.25e6, rel=1e-3)
        assert reference.loc["fusion", "params"] == 45_440

    def test_totals_are_sums(self, reference):
        modules = ["mcag", "apm", "msccm", "meab", "seghead", "fusion"]
        assert reference.loc["decoder", "params"] == reference.loc[modules, "params"].sum()
        assert reference.loc["total", "macs"] == reference.loc["decoder", "macs"] + reference.loc["encoder", "macs"]
        assert reference.loc["total", "params_pct"] == pytest.approx(100.0)

    def test_input_size_must_be_multiple_of_32(self):
        with pytest.raises(ShapeError):
            profile(ModelConfig(channels=SMALL, meab_reduction=4), 100)

    def test_format_has_header_and_rows(self, reference):
        lines = format_profile(reference).splitlines()
        assert lines[0].split("\t") == ["module", "params", "macs", "params_pct", "macs_pct"]
        assert len(lines) == len(reference) + 1
        assert lines[-1].startswith("total\t")


class TestAblation:
    def test_six_configurations(self):
        configs = ablation_configs(ModelConfig(channels=SMALL, meab_reduction=4))
        assert len(configs) == 6
        assert len({c.modules_label for c in configs}) == 6

    def test_module_deltas(self):
        table = ablation_profile(ModelConfig(channels=REFERENCE_CHANNELS, num_classes=9, meab_reduction=16),
                                 REFERENCE_INPUT_SIZE)
        full = table.loc["MCAG+APM+MSCCM+MEAB", "decoder_params"]
        assert full - table.loc["MCAG+APM+MSCCM", "decoder_params"] == meab_param_count(512, 16)
        assert full - table.loc["MCAG+APM+MEAB", "decoder_params"] == msccm_param_count((64, 128, 320))
        assert (table["total_params"] - table["decoder_params"]).nunique() == 1
