"""
MACMD Segmentation Toolkit - Main Entry Point
Command line for data generation, training, evaluation, prediction, gradient checks and profiling
"""

import functools
import sys
from pathlib import Path

import click

sys.path.insert(0, str(Path(__file__).parent))

from config.macmd_config import (
    DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS, DEFAULT_IMAGE_SIZE, DEFAULT_SEED, DEFAULT_VAL_FRACTION,
    EXIT_CHECKPOINT_ERROR, EXIT_DATA_ERROR, LEARNING_RATE, LOG_LEVEL, MEAB_REDUCTION,
    REFERENCE_CHANNELS, REFERENCE_INPUT_SIZE, SYNTH_DEFAULT_CLASSES, SYNTH_DEFAULT_COUNT, SYNTH_NOISE_LEVEL,
    TOY_CHANNELS,
)
from src.utils.errors import CheckpointError, ConfigError, DataError
from src.utils.log import setup_logging


def parse_channels(ctx, param, value):
    if value is None:
        return None
    try:
        channels = tuple(int(part) for part in value.split(","))
    except ValueError:
        raise click.BadParameter(f"expected four comma-separated integers, got {value!r}")
    if len(channels) != 4:
        raise click.BadParameter(f"expected four widths C1..C4, got {len(channels)}")
    return channels


def handle_errors(command):
    """Map toolkit errors to the documented exit codes"""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ConfigError as err:
            raise click.UsageError(str(err))
        except DataError as err:
            click.echo(f"❌ Data error: {err}", err=True)
            sys.exit(EXIT_DATA_ERROR)
        except CheckpointError as err:
            click.echo(f"❌ Checkpoint error: {err}", err=True)
            sys.exit(EXIT_CHECKPOINT_ERROR)

    return wrapper


@click.group()
@click.option("--log-level", default=LOG_LEVEL, show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
@click.option("--log-json", is_flag=True, help="Emit JSON log records")
def cli(log_level, log_json):
    """MACMD segmentation decoder toolkit"""
    setup_logging(log_level, json_format=log_json)


@cli.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--count", default=SYNTH_DEFAULT_COUNT, show_default=True)
@click.option("--size", default=DEFAULT_IMAGE_SIZE, show_default=True)
@click.option("--classes", default=SYNTH_DEFAULT_CLASSES, show_default=True)
@click.option("--seed", default=DEFAULT_SEED, show_default=True)
@click.option("--noise", default=SYNTH_NOISE_LEVEL, show_default=True)
@click.option("--jobs", default=1, show_default=True, help="joblib workers")
@handle_errors
def gen_data_command(out_dir, count, size, classes, seed, noise, jobs):
    """Render a seeded synthetic shapes dataset"""
    from src.pipeline.synthetic import SyntheticSpec, gen_dataset, print_dataset_summary

    spec = SyntheticSpec(count=count, image_size=size, num_classes=classes, noise_level=noise, seed=seed)
    manifest = gen_dataset(spec, out_dir, n_jobs=jobs)
    print_dataset_summary(manifest)


@cli.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--epochs", default=DEFAULT_EPOCHS, show_default=True)
@click.option("--batch-size", default=DEFAULT_BATCH_SIZE, show_default=True)
@click.option("--lr", default=LEARNING_RATE, show_default=True)
@click.option("--alpha", type=float, default=None, help="CE weight (default by class count)")
@click.option("--beta", type=float, default=None, help="Dice weight (default by class count)")
@click.option("--seed", default=DEFAULT_SEED, show_default=True)
@click.option("--size", type=int, default=None, help="Image side (default: the dataset's)")
@click.option("--classes", type=int, default=None, help="K (default: the dataset's)")
@click.option("--channels", callback=parse_channels, default=",".join(map(str, TOY_CHANNELS)),
              show_default=True)
@click.option("--meab-reduction", default=MEAB_REDUCTION, show_default=True)
@click.option("--val-fraction", default=DEFAULT_VAL_FRACTION, show_default=True)
@click.option("--hflip", is_flag=True, help="Seeded horizontal-flip augmentation")
@click.option("--plot", is_flag=True, help="Save loss/DSC curves next to the checkpoint")
@handle_errors
def train_command(data_dir, checkpoint, epochs, batch_size, lr, alpha, beta, seed, size, classes,
                  channels, meab_reduction, val_fraction, hflip, plot):
    """Train a model on a gen-data directory"""
    from src.pipeline.dataset import SegDataset
    from src.pipeline.train_config import TrainConfig
    from src.pipeline.trainer import Trainer
    from src.reporting.report_generator import plot_history

    dataset = SegDataset(data_dir)
    # a two-label dataset trains the multi-class path unless --classes 1 asks for sigmoid
    config = TrainConfig(
        checkpoint=checkpoint, seed=seed, epochs=epochs, batch_size=batch_size, lr=lr,
        alpha=alpha, beta=beta, num_classes=classes or dataset.num_classes, channels=channels,
        image_size=size or dataset.image_size[0], meab_reduction=meab_reduction,
        val_fraction=val_fraction, hflip=hflip,
    )
    trainer = Trainer(config, data_dir, dataset=dataset)
    result = trainer.run()
    trainer.print_training_summary(result)
    if plot:
        plot_history(result.history, Path(f"{checkpoint}.history.png"))


@cli.command("eval")
@click.option("--ckpt", "checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", required=True, type=click.Path(file_okay=False))
@click.option("--report", "report_path", default=None, type=click.Path(dir_okay=False))
@click.option("--batch-size", default=DEFAULT_BATCH_SIZE, show_default=True)
@handle_errors
def eval_command(checkpoint, data_dir, report_path, batch_size):
    """Score the final prediction of a checkpoint on a dataset"""
    from src.objective.metrics import print_metrics
    from src.pipeline.evaluator import evaluate

    report = evaluate(checkpoint, data_dir, report_path, batch_size)
    print_metrics(report.metrics, title=f"EVALUATION - {Path(checkpoint).name}")
    if report.report_path is not None:
        print(f"💾 Report: {report.report_path}")


@cli.command("predict")
@click.option("--ckpt", "checkpoint", required=True, type=click.Path(dir_okay=False))
@click.option("--image", "image_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--overlay", "overlay_path", default=None, type=click.Path(dir_okay=False))
@handle_errors
def predict_command(checkpoint, image_path, out_path, overlay_path):
    """Segment one PGM image into a label-map PGM"""
    from src.pipeline.evaluator import predict

    labels = predict(checkpoint, image_path, out_path, overlay_path)
    present = sorted(int(v) for v in set(labels.reshape(-1).tolist()))
    print(f"✅ Wrote {out_path} ({labels.shape[0]}x{labels.shape[1]}, labels {present})")


@cli.command("gradcheck")
@click.option("--module", "modules", multiple=True, help="Check name (repeatable; default all)")
@handle_errors
def gradcheck_command(modules):
    """Finite-difference gradient checks in double precision"""
    from src.pipeline.gradcheck_suite import print_suite_results, run_suite

    results = run_suite(list(modules) or None)
    print_suite_results(results)
    if not results["passed"].all():
        sys.exit(1)


@cli.command("params")
@click.option("--paper-scale", "--reference-scale", "paper_scale", is_flag=True,
              help=f"Use channels {REFERENCE_CHANNELS}")
@click.option("--input-size", type=int, default=None,
              help=f"Square input side (default {REFERENCE_INPUT_SIZE} with --paper-scale, else {DEFAULT_IMAGE_SIZE})")
@click.option("--channels", callback=parse_channels, default=None)
@click.option("--classes", default=SYNTH_DEFAULT_CLASSES, show_default=True)
@click.option("--meab-reduction", default=MEAB_REDUCTION, show_default=True)
@click.option("--mcag-apm/--no-mcag-apm", default=True)
@click.option("--msccm/--no-msccm", default=True)
@click.option("--meab/--no-meab", default=True)
@click.option("--verify", is_flag=True, help="Instantiate the model and compare stored counts")
@handle_errors
def params_command(paper_scale, input_size, channels, classes, meab_reduction, mcag_apm, msccm,
                   meab, verify):
    """Analytic per-module parameter and MAC profile"""
    from src.decoder.macmd import MacmdModel, ModelConfig
    from src.decoder.profiler import print_profile, profile, stored_counts

    channels = channels or (REFERENCE_CHANNELS if paper_scale else TOY_CHANNELS)
    input_size = input_size or (REFERENCE_INPUT_SIZE if paper_scale else DEFAULT_IMAGE_SIZE)
    cfg = ModelConfig(channels=channels, num_classes=classes, meab_reduction=meab_reduction,
                      use_mcag_apm=mcag_apm, use_msccm=msccm, use_meab=meab)
    table = profile(cfg, input_size)
    print_profile(table, cfg, input_size)

    if verify:
        stored = stored_counts(MacmdModel(cfg))
        mismatched = [name for name in stored.index if int(stored[name]) != int(table.loc[name, "params"])]
        if mismatched:
            click.echo(f"❌ Stored counts differ from the profile for {mismatched}", err=True)
            sys.exit(1)
        print("✅ Stored parameter counts match the profile for every row")


@cli.command("ablate")
@click.option("--channels", callback=parse_channels, default=",".join(map(str, TOY_CHANNELS)),
              show_default=True)
@click.option("--input-size", default=DEFAULT_IMAGE_SIZE, show_default=True)
@click.option("--classes", default=SYNTH_DEFAULT_CLASSES, show_default=True)
@click.option("--data", "data_dir", default=None, type=click.Path(exists=True, file_okay=False),
              help="Also train and evaluate every combination on this dataset")
@click.option("--out", "out_dir", default="ablation", show_default=True, type=click.Path(file_okay=False))
@click.option("--epochs", default=20, show_default=True)
@click.option("--seed", default=DEFAULT_SEED, show_default=True)
@handle_errors
def ablate_command(channels, input_size, classes, data_dir, out_dir, epochs, seed):
    """Profile (and optionally train) the six decoder module combinations"""
    from src.decoder.macmd import ModelConfig
    from src.pipeline.ablation import ablation_profile, print_ablation, run_ablation
    from src.pipeline.dataset import SegDataset
    from src.pipeline.train_config import TrainConfig

    base = ModelConfig(channels=channels, num_classes=classes, seed=seed)
    print_ablation(ablation_profile(base, input_size), title=f"ABLATION PROFILE ({input_size}x{input_size})")

    if data_dir is not None:
        dataset = SegDataset(data_dir)
        config = TrainConfig(checkpoint=str(Path(out_dir) / "base.ckpt"), seed=seed, epochs=epochs,
                             num_classes=dataset.num_classes, channels=channels,
                             image_size=dataset.image_size[0])
        print_ablation(run_ablation(config, data_dir, out_dir), title="ABLATION TRAINING")


if __name__ == "__main__":
    cli()
