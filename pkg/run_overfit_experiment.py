"""
Overfit Experiment
Sixteen synthetic 64x64 images, toy channels, 300 epochs: the model should memorize them
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from config.macmd_config import DEFAULT_BATCH_SIZE, DEFAULT_SEED, LEARNING_RATE, TOY_CHANNELS
from src.objective.metrics import print_metrics
from src.pipeline.evaluator import evaluate
from src.pipeline.synthetic import SyntheticSpec, gen_dataset, print_dataset_summary
from src.pipeline.train_config import TrainConfig
from src.pipeline.trainer import Trainer
from src.reporting.report_generator import plot_history
from src.utils.log import setup_logging

TARGET_DSC = 0.95


def run_overfit_experiment(out_dir: str = "results/overfit", epochs: int = 300):
    """Generate the dataset, train, re-evaluate from disk and plot the curves"""
    setup_logging("WARNING")

    print("=" * 70)
    print("OVERFIT EXPERIMENT")
    print("=" * 70)

    out = Path(out_dir)
    data_dir = out / "data"
    spec = SyntheticSpec(count=16, image_size=64, num_classes=3, seed=DEFAULT_SEED)
    manifest = gen_dataset(spec, data_dir)
    print_dataset_summary(manifest)

    config = TrainConfig(checkpoint=str(out / "overfit.ckpt"), seed=DEFAULT_SEED, epochs=epochs,
                         batch_size=DEFAULT_BATCH_SIZE, lr=LEARNING_RATE, num_classes=3,
                         channels=TOY_CHANNELS, image_size=64)
    trainer = Trainer(config, data_dir)
    result = trainer.run()
    trainer.print_training_summary(result)
    plot_history(result.history, out / "overfit_history.png")

    report = evaluate(config.checkpoint, data_dir, out / "report.tsv")
    print_metrics(report.metrics, title="OVERFIT - RELOADED CHECKPOINT")

    final_dsc = float(result.history["train_dsc"].iloc[-1])
    print("\n" + "=" * 70)
    if final_dsc >= TARGET_DSC:
        print(f"✅ Final train DSC {final_dsc:.4f} >= {TARGET_DSC}")
    else:
        print(f"⚠️  Final train DSC {final_dsc:.4f} below {TARGET_DSC}")
    print(f"📉 Final loss: {result.final_loss!r} (rerun with seed {DEFAULT_SEED} to compare bitwise)")
    print("=" * 70)
    return result


if __name__ == "__main__":
    run_overfit_experiment(*sys.argv[1:2])
