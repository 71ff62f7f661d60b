"""
Pipeline tests: synthetic data, greymaps, dataset batching, AdamW, checkpoints, training, evaluation and the CLI
"""

import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from config.macmd_config import CHECKPOINT_MAGIC, MANIFEST_NAME, TOY_CHANNELS
from main import cli
from src.numerics.params import ParamKind, ParamStore
from src.pipeline.checkpoint import (
    checkpoint_io, decode_records, encode_records, load_checkpoint, save_checkpoint,
)
from src.pipeline.dataset import SegDataset, to_network_input
from src.pipeline.evaluator import evaluate, load_model, predict
from src.pipeline.optimizer import AdamW, adamw_step, cosine_lr
from src.pipeline.pgm import read_pgm, write_pgm
from src.pipeline.synthetic import SyntheticSpec, gen_dataset, render_sample, shape_mask
from src.pipeline.train_config import TrainConfig, history_path, sidecar_path
from src.pipeline.trainer import Trainer
from src.utils.errors import AutogradError, CheckpointError, ConfigError, DataError

SMALL = (16, 16, 32, 32)


def small_config(checkpoint, **overrides) -> TrainConfig:
    settings = dict(checkpoint=str(checkpoint), epochs=2, batch_size=2, num_classes=3, channels=SMALL,
                    image_size=32, meab_reduction=4, seed=7)
    settings.update(overrides)
    return TrainConfig(**settings)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    gen_dataset(SyntheticSpec(count=4, image_size=32, num_classes=3, seed=7), out, progress=False)
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("run")
    config = small_config(out / "model.ckpt")
    result = Trainer(config, data_dir).run()
    return config, result


class TestSynthetic:
    def test_same_spec_same_bytes(self, tmp_path):
        spec = SyntheticSpec(count=4, image_size=64, num_classes=3, seed=7)
        gen_dataset(spec, tmp_path / "a", progress=False)
        gen_dataset(spec, tmp_path / "b", n_jobs=2, progress=False)
        names = sorted(p.name for p in (tmp_path / "a").iterdir())
        assert len(names) == 9
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_different_seed_differs(self):
        a, _ = render_sample(SyntheticSpec(seed=1), 0)
        b, _ = render_sample(SyntheticSpec(seed=2), 0)
        assert not np.array_equal(a, b)

    def test_manifest_counts(self, data_dir):
        manifest = pd.read_csv(data_dir / MANIFEST_NAME, sep="\t")
        assert list(manifest.columns) == ["index", "image", "mask", "count_0", "count_1", "count_2"]
        assert (manifest[["count_0", "count_1", "count_2"]].sum(axis=1) == 32 * 32).all()
        for row in manifest.itertuples():
            mask = read_pgm(data_dir / row.mask)
            assert int(mask.max()) < 3
            assert int((mask == 1).sum()) == row.count_1

    def test_shapes(self):
        ellipse = shape_mask("ellipse", 9, (4, 4), (2, 3))
        assert ellipse[4, 1] and ellipse[4, 7] and not ellipse[4, 0]
        rectangle = shape_mask("rectangle", 9, (4, 4), (1, 2))
        assert rectangle.sum() == 3 * 5
        with pytest.raises(ConfigError):
            shape_mask("triangle", 9, (4, 4), (1, 1))

    def test_spec_validation(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(count=0)
        with pytest.raises(ConfigError):
            SyntheticSpec(num_classes=1)
        with pytest.raises(ConfigError):
            SyntheticSpec(min_shapes=3, max_shapes=2)

    def test_class_bound(self, tmp_path):
        with pytest.raises(DataError):
            gen_dataset(SyntheticSpec(count=1, num_classes=300), tmp_path, progress=False)


class TestPgm:
    def test_round_trip(self, tmp_path, rng):
        array = rng.integers(0, 256, (5, 7)).astype(np.uint8)
        path = write_pgm(tmp_path / "x.pgm", array)
        assert path.read_bytes().startswith(b"P5")
        np.testing.assert_array_equal(read_pgm(path), array)

    def test_rejects_non_uint8(self, tmp_path):
        with pytest.raises(DataError):
            write_pgm(tmp_path / "x.pgm", np.zeros((3, 3), dtype=np.int32))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="missing"):
            read_pgm(tmp_path / "absent.pgm")


class TestDataset:
    def test_loads_manifest(self, data_dir):
        dataset = SegDataset(data_dir)
        assert len(dataset) == 4
        assert dataset.num_classes == 3
        assert dataset.image_size == (32, 32)

    def test_network_input(self):
        grey = np.array([[0, 255], [51, 102]], dtype=np.uint8)
        image = to_network_input(grey)
        assert image.shape == (3, 2, 2)
        np.testing.assert_allclose(image[1], [[0.0, 1.0], [0.2, 0.4]], atol=1e-7)

    def test_split_is_deterministic_and_disjoint(self, data_dir):
        dataset = SegDataset(data_dir)
        train, val = dataset.split(0.25, seed=7)
        assert len(train) == 3 and len(val) == 1
        assert not set(train) & set(val)
        again = dataset.split(0.25, seed=7)
        np.testing.assert_array_equal(train, again[0])
        assert len(dataset.split(0.0, seed=7)[1]) == 0

    def test_batches(self, data_dir):
        dataset = SegDataset(data_dir)
        sizes = [len(b) for b in dataset.batches(range(4), 3)]
        assert sizes == [3, 1]
        batch = next(dataset.batches(range(4), 4))
        assert batch.images.shape == (4, 3, 32, 32)
        assert batch.masks.shape == (4, 32, 32)

    def test_flip(self, data_dir):
        dataset = SegDataset(data_dir)
        plain = dataset.batch([0])
        flipped = dataset.batch([0], flips=[True])
        np.testing.assert_array_equal(flipped.masks[0], plain.masks[0][:, ::-1])
        np.testing.assert_array_equal(flipped.images[0], plain.images[0][:, :, ::-1])

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            SegDataset(tmp_path)

    def test_mask_value_beyond_classes(self, tmp_path):
        write_pgm(tmp_path / "img.pgm", np.zeros((4, 4), dtype=np.uint8))
        write_pgm(tmp_path / "msk.pgm", np.full((4, 4), 5, dtype=np.uint8))
        pd.DataFrame([{"index": 0, "image": "img.pgm", "mask": "msk.pgm", "count_0": 0, "count_1": 0}]).to_csv(
            tmp_path / MANIFEST_NAME, sep="\t", index=False)
        with pytest.raises(DataError, match="mask value 5"):
            SegDataset(tmp_path)


def single_param_store(value: float, grad: float) -> ParamStore:
    store = ParamStore(seed=0, dtype=np.float64)
    store.create("w", (1,), ParamKind.BIAS, fill=value)
    store["w"].value.grad = np.array([grad])
    return store


class TestOptimizer:
    def test_weight_decay_only(self):
        store = single_param_store(1.0, 0.0)
        adamw_step(store, {}, t=1, lr=0.1, weight_decay=0.01)
        assert store["w"].value.data[0] == pytest.approx(0.999)

    def test_first_step_moves_by_lr(self):
        store = single_param_store(1.0, 1.0)
        adamw_step(store, {}, t=1, lr=0.1, weight_decay=0.0)
        assert store["w"].value.data[0] == pytest.approx(0.9, abs=1e-6)

    def test_zero_gradient_without_decay_is_unchanged(self):
        store = single_param_store(0.3, 0.0)
        adamw_step(store, {}, t=1, lr=0.1, weight_decay=0.0)
        assert store["w"].value.data[0] == 0.3

    def test_missing_gradient(self):
        store = ParamStore(seed=0)
        store.create("w", (2,), ParamKind.BIAS)
        with pytest.raises(AutogradError):
            AdamW(store).step(0.1)

    def test_step_counter(self):
        store = single_param_store(1.0, 1.0)
        optimizer = AdamW(store, weight_decay=0.0)
        optimizer.step(0.1)
        store["w"].value.grad = np.array([1.0])
        optimizer.step(0.1)
        assert optimizer.t == 2
        assert store["w"].value.data[0] == pytest.approx(0.8, abs=1e-6)

    def test_cosine_schedule(self):
        assert cosine_lr(0, 10, 1e-3, 1e-6) == pytest.approx(1e-3)
        assert cosine_lr(9, 10, 1e-3, 1e-6) == pytest.approx(1e-6)
        values = [cosine_lr(s, 10, 1e-3, 1e-6) for s in range(10)]
        assert all(a >= b for a, b in zip(values, values[1:]))
        assert cosine_lr(0, 1, 1e-3, 1e-6) == pytest.approx(1e-3)
        with pytest.raises(ConfigError):
            cosine_lr(-1, 10, 1e-3, 1e-6)


def populated_store(seed: int) -> ParamStore:
    store = ParamStore(seed=seed)
    store.create("encoder.conv.weight", (4, 3, 3, 3), ParamKind.WEIGHT, fan_in=27)
    store.create("encoder.conv.bias", (4,), ParamKind.BIAS)
    store.create_norm_state("encoder.bn", 4)
    return store


class TestCheckpoint:
    def test_empty_store(self, tmp_path):
        path = save_checkpoint(ParamStore(), tmp_path / "empty.ckpt")
        payload = path.read_bytes()
        assert len(payload) == 12
        assert payload[:8] == CHECKPOINT_MAGIC

    def test_round_trip_is_bitwise(self, tmp_path):
        source = populated_store(1)
        source["encoder.conv.bias"].value.data[...] = [0.5, -1.25, 3.0, 1e-7]
        source.norm_states()["encoder.bn"].running_var[...] = 2.5
        path = save_checkpoint(source, tmp_path / "a.ckpt")
        target = load_checkpoint(populated_store(2), path)
        for (name, a), (_, b) in zip(source.state_records(), target.state_records()):
            np.testing.assert_array_equal(a, b, err_msg=name)

    def test_bad_magic(self):
        payload = bytearray(encode_records([("x", np.zeros(2))]))
        payload[0:1] = b"X"
        with pytest.raises(CheckpointError, match="magic"):
            decode_records(bytes(payload))

    def test_truncated(self):
        payload = encode_records([("x", np.arange(6.0).reshape(2, 3))])
        with pytest.raises(CheckpointError, match="truncated"):
            decode_records(payload[:-4])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError, match="trailing"):
            decode_records(encode_records([]) + b"\x00")

    def test_duplicate_names(self):
        with pytest.raises(CheckpointError, match="duplicate"):
            encode_records([("x", np.zeros(1)), ("x", np.zeros(1))])

    def test_renamed_tensor_is_named(self, tmp_path):
        records = populated_store(1).state_records()
        records[1] = ("encoder.conv.offset", records[1][1])
        path = tmp_path / "renamed.ckpt"
        path.write_bytes(encode_records(records))
        with pytest.raises(CheckpointError, match="encoder.conv.offset"):
            load_checkpoint(populated_store(1), path)

    def test_shape_mismatch(self, tmp_path):
        records = populated_store(1).state_records()
        records[1] = (records[1][0], np.zeros(5, dtype=np.float32))
        path = tmp_path / "shape.ckpt"
        path.write_bytes(encode_records(records))
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(populated_store(1), path)

    def test_io_direction(self, tmp_path):
        store = populated_store(1)
        path = checkpoint_io(store, tmp_path / "io.ckpt", "write")
        assert checkpoint_io(populated_store(3), path, "read").state_records()[0][0] == "encoder.conv.weight"
        with pytest.raises(ValueError):
            checkpoint_io(store, path, "append")


class TestTrainConfig:
    def test_yaml_round_trip(self, tmp_path):
        config = small_config(tmp_path / "m.ckpt", alpha=0.5, hflip=True)
        config.to_yaml(tmp_path / "cfg.yaml")
        assert TrainConfig.from_yaml(tmp_path / "cfg.yaml") == config

    def test_unknown_key(self, tmp_path):
        (tmp_path / "cfg.yaml").write_text("epochs: 3\nmomentum: 0.9\n")
        with pytest.raises(ConfigError, match="momentum"):
            TrainConfig.from_yaml(tmp_path / "cfg.yaml")

    def test_default_loss_weights(self, tmp_path):
        assert small_config(tmp_path / "m.ckpt").loss_weights().alpha == 0.4
        assert small_config(tmp_path / "m.ckpt", num_classes=2).loss_weights().alpha == 1.0

    @pytest.mark.parametrize("overrides", [
        {"lr": 0.0}, {"epochs": 0}, {"batch_size": 0}, {"image_size": 48}, {"val_fraction": 1.0},
        {"alpha": -1.0}, {"channels": (16, 16, 32, 40)},
    ])
    def test_invalid(self, tmp_path, overrides):
        with pytest.raises(ConfigError):
            small_config(tmp_path / "m.ckpt", **overrides)


class TestTraining:
    def test_run_writes_artifacts(self, trained):
        config, result = trained
        assert Path(config.checkpoint).exists()
        assert sidecar_path(config.checkpoint).exists()
        assert history_path(config.checkpoint).exists()
        assert list(result.history["epoch"]) == [1, 2]
        assert math.isfinite(result.final_loss)
        assert 1 <= result.best_epoch <= 2

    def test_rerun_is_bitwise_identical(self, tmp_path, data_dir, trained):
        _, first = trained
        second = Trainer(small_config(tmp_path / "again.ckpt"), data_dir).run()
        assert second.final_loss == first.final_loss
        pd.testing.assert_frame_equal(second.history, first.history)

    def test_validation_split(self, tmp_path, data_dir):
        result = Trainer(small_config(tmp_path / "val.ckpt", epochs=1, val_fraction=0.25), data_dir).run()
        assert "val_dsc" in result.history.columns

    def test_class_mismatch(self, tmp_path, data_dir):
        with pytest.raises(DataError, match="classes"):
            Trainer(small_config(tmp_path / "m.ckpt", num_classes=5), data_dir)

    def test_size_mismatch(self, tmp_path, data_dir):
        with pytest.raises(DataError):
            Trainer(small_config(tmp_path / "m.ckpt", image_size=64), data_dir)

    @pytest.mark.slow
    def test_loss_falls_on_one_image(self, tmp_path):
        gen_dataset(SyntheticSpec(count=1, image_size=32, seed=3), tmp_path / "one", progress=False)
        config = small_config(tmp_path / "one.ckpt", epochs=40, batch_size=1, lr=3e-3)
        history = Trainer(config, tmp_path / "one").run().history
        assert history["loss"].iloc[-1] < 0.5 * history["loss"].iloc[0]


@pytest.mark.slow
class TestOverfit:
    """Sixteen 64x64 images, toy widths, 300 epochs of AdamW with a cosine schedule"""

    @pytest.fixture(scope="class")
    def runs(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("overfit")
        gen_dataset(SyntheticSpec(count=16, image_size=64, num_classes=3, seed=7), out / "data", progress=False)

        def train(name):
            config = TrainConfig(checkpoint=str(out / f"{name}.ckpt"), seed=7, epochs=300, batch_size=8,
                                 lr=1e-3, num_classes=3, channels=TOY_CHANNELS, image_size=64)
            return Trainer(config, out / "data").run()

        return train("first"), train("second")

    def test_memorizes_training_set(self, runs):
        first, _ = runs
        assert first.history["train_dsc"].iloc[-1] >= 0.95

    def test_rerun_is_bitwise_identical(self, runs):
        first, second = runs
        assert second.final_loss == first.final_loss
        np.testing.assert_array_equal(second.history["loss"].to_numpy(), first.history["loss"].to_numpy())


class TestEvaluation:
    def test_reload_matches_saved_weights(self, trained):
        config, _ = trained
        model, loaded = load_model(config.checkpoint)
        assert loaded == config
        assert model.config.channels == SMALL

    def test_report(self, tmp_path, trained, data_dir):
        config, _ = trained
        report = evaluate(config.checkpoint, data_dir, tmp_path / "report.tsv")
        assert 0.0 <= report.metrics.mean_dsc <= 1.0
        assert len(report.per_image) == 4
        table = pd.read_csv(tmp_path / "report.tsv", sep="\t")
        assert list(table["class"]) == ["0", "1", "2", "mean_dsc", "acc"]
        assert (tmp_path / "report.images.tsv").exists()

    def test_class_mismatch(self, tmp_path, trained):
        config, _ = trained
        gen_dataset(SyntheticSpec(count=1, image_size=32, num_classes=2), tmp_path, progress=False)
        with pytest.raises(DataError, match="classes"):
            evaluate(config.checkpoint, tmp_path)

    def test_missing_sidecar(self, tmp_path, data_dir):
        with pytest.raises(CheckpointError):
            evaluate(tmp_path / "nothing.ckpt", data_dir)

    def test_predict(self, tmp_path, trained, data_dir):
        config, _ = trained
        labels = predict(config.checkpoint, data_dir / "img_00000.pgm", tmp_path / "pred.pgm",
                         tmp_path / "overlay.png")
        assert labels.shape == (32, 32)
        np.testing.assert_array_equal(read_pgm(tmp_path / "pred.pgm"), labels)
        assert labels.max() < 3
        assert (tmp_path / "overlay.png").exists()

    def test_predict_rejects_odd_size(self, tmp_path, trained):
        config, _ = trained
        write_pgm(tmp_path / "odd.pgm", np.zeros((30, 32), dtype=np.uint8))
        with pytest.raises(DataError):
            predict(config.checkpoint, tmp_path / "odd.pgm", tmp_path / "pred.pgm")


class TestCli:
    @pytest.fixture
    def runner(self):
        return CliRunner()

    def test_gen_train_eval_predict(self, runner, tmp_path):
        data = tmp_path / "data"
        ckpt = tmp_path / "cli.ckpt"
        result = runner.invoke(cli, ["gen-data", "--out", str(data), "--count", "2", "--size", "32"])
        assert result.exit_code == 0, result.output
        assert (data / MANIFEST_NAME).exists()

        result = runner.invoke(cli, ["train", "--data", str(data), "--out", str(ckpt), "--epochs", "1",
                                     "--batch-size", "2", "--channels", "16,16,32,32", "--meab-reduction", "4",
                                     "--plot"])
        assert result.exit_code == 0, result.output
        assert Path(f"{ckpt}.history.png").exists()

        result = runner.invoke(cli, ["eval", "--ckpt", str(ckpt), "--data", str(data),
                                     "--report", str(tmp_path / "report.tsv")])
        assert result.exit_code == 0, result.output
        assert "Mean DSC" in result.output

        result = runner.invoke(cli, ["predict", "--ckpt", str(ckpt), "--image", str(data / "img_00000.pgm"),
                                     "--out", str(tmp_path / "pred.pgm")])
        assert result.exit_code == 0, result.output

    def test_missing_checkpoint_exit_code(self, runner, tmp_path, data_dir):
        result = runner.invoke(cli, ["eval", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(data_dir)])
        assert result.exit_code == 4

    def test_data_error_exit_code(self, runner, tmp_path, trained):
        config, _ = trained
        gen_dataset(SyntheticSpec(count=1, image_size=32, num_classes=2), tmp_path, progress=False)
        result = runner.invoke(cli, ["eval", "--ckpt", config.checkpoint, "--data", str(tmp_path)])
        assert result.exit_code == 3

    def test_bad_channels_is_usage_error(self, runner, data_dir, tmp_path):
        result = runner.invoke(cli, ["train", "--data", str(data_dir), "--out", str(tmp_path / "m.ckpt"),
                                     "--channels", "16,16,32"])
        assert result.exit_code == 2

    def test_config_error_is_usage_error(self, runner, data_dir, tmp_path):
        result = runner.invoke(cli, ["train", "--data", str(data_dir), "--out", str(tmp_path / "m.ckpt"),
                                     "--lr", "-1"])
        assert result.exit_code == 2

    @pytest.mark.parametrize("flag", ["--paper-scale", "--reference-scale"])
    def test_params_full_width_counts(self, runner, flag):
        result = runner.invoke(cli, ["params", flag])
        assert result.exit_code == 0, result.output
        assert "mcag\t3469324\t527838976" in result.output

    def test_params_verify(self, runner):
        result = runner.invoke(cli, ["params", "--channels", "16,16,32,32", "--meab-reduction", "4", "--verify"])
        assert result.exit_code == 0, result.output
        assert "match" in result.output

    def test_ablate_profile_only(self, runner):
        result = runner.invoke(cli, ["ablate", "--channels", "16,24,32,32", "--input-size", "64"])
        assert result.exit_code == 2
        result = runner.invoke(cli, ["ablate", "--channels", "32,64,128,256", "--input-size", "64"])
        assert result.exit_code == 0, result.output
        assert "MCAG+APM+MSCCM+MEAB" in result.output

    def test_gradcheck_single(self, runner):
        result = runner.invoke(cli, ["gradcheck", "--module", "conv2d"])
        assert result.exit_code == 0, result.output

    def test_gradcheck_unknown(self, runner):
        result = runner.invoke(cli, ["gradcheck", "--module", "nonsense"])
        assert result.exit_code == 2
