"""
Module Ablation
Profile totals and optional short training runs for the decoder module combinations
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Tuple

import pandas as pd

from src.decoder.macmd import ModelConfig
from src.decoder.profiler import profile
from src.pipeline.evaluator import evaluate
from src.pipeline.train_config import TrainConfig
from src.pipeline.trainer import Trainer

logger = logging.getLogger(__name__)

# (use_mcag_apm, use_msccm, use_meab)
ABLATION_TOGGLES: List[Tuple[bool, bool, bool]] = [
    (True, False, False),
    (True, False, True),
    (False, True, False),
    (True, True, False),
    (False, True, True),
    (True, True, True),
]


def ablation_configs(base: ModelConfig) -> List[ModelConfig]:
    return [replace(base, use_mcag_apm=a, use_msccm=m, use_meab=e) for a, m, e in ABLATION_TOGGLES]


def ablation_profile(base: ModelConfig, input_size: int) -> pd.DataFrame:
    """
    Decoder and total counts for every module combination

    Returns:
        pd.DataFrame: indexed by modules label; decoder/total params and MACs
    """
    rows = []
    for cfg in ablation_configs(base):
        table = profile(cfg, input_size)
        rows.append({
            "modules": cfg.modules_label,
            "decoder_params": int(table.loc["decoder", "params"]),
            "decoder_macs": int(table.loc["decoder", "macs"]),
            "total_params": int(table.loc["total", "params"]),
            "total_macs": int(table.loc["total", "macs"]),
        })
    return pd.DataFrame(rows).set_index("modules")


def run_ablation(base: TrainConfig, data_dir, out_dir, epochs: Optional[int] = None) -> pd.DataFrame:
    """
    Train each combination briefly and score p1 on the same dataset

    Args:
        base: Training configuration shared by every run
        data_dir: gen-data directory
        out_dir: Receives one checkpoint (plus sidecar and history) per combination
        epochs: Overrides base.epochs

    Returns:
        pd.DataFrame: modules, final_loss, mean_dsc, mean_hd95
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for use_mcag_apm, use_msccm, use_meab in ABLATION_TOGGLES:
        config = replace(base, use_mcag_apm=use_mcag_apm, use_msccm=use_msccm, use_meab=use_meab,
                         epochs=epochs or base.epochs)
        label = config.model_config().modules_label
        config.checkpoint = str(out_dir / f"{label.replace('+', '_').lower()}.ckpt")
        logger.info(f"Ablation run {label} -> {config.checkpoint}")

        result = Trainer(config, data_dir).run()
        report = evaluate(config.checkpoint, data_dir)
        rows.append({"modules": label, "final_loss": result.final_loss,
                     "mean_dsc": report.metrics.mean_dsc, "mean_hd95": report.metrics.mean_hd95})
    return pd.DataFrame(rows).set_index("modules")


def print_ablation(table: pd.DataFrame, title: str = "MODULE ABLATION"):
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70)
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    print("=" * 70)
