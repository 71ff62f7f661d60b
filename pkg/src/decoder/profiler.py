"""
Profiler Module
Analytic per-module parameter and multiply-accumulate counts
"""

from typing import Dict, Tuple

import pandas as pd

from src.decoder.apm import apm_macs, apm_param_count
from src.decoder.encoder import encoder_macs, encoder_param_count
from src.decoder.macmd import MacmdModel, ModelConfig
from src.decoder.mcag import mcag_macs, mcag_param_count
from src.decoder.meab import meab_macs, meab_param_count
from src.decoder.msccm import msccm_macs, msccm_param_count
from src.decoder.seghead import fusion_macs, fusion_param_count, seghead_macs, seghead_param_count
from src.numerics.layers import Conv2d
from src.utils.errors import ShapeError

DECODER_ROWS = ("mcag", "apm", "msccm", "meab", "seghead", "fusion")

# Parameter-name prefixes owned by each profile row
ROW_PREFIXES: Dict[str, Tuple[str, ...]] = {
    "encoder": ("encoder.",),
    "mcag": ("decoder.mcag",),
    "apm": ("decoder.apm.",),
    "msccm": ("decoder.msccm.",),
    "meab": ("decoder.meab.",),
    "seghead": ("decoder.seghead", "decoder.pred"),
    "fusion": ("decoder.fusion.",),
}


def _module_counts(cfg: ModelConfig, height: int, width: int) -> Dict[str, Tuple[int, int]]:
    c1, c2, c3, c4 = cfg.channels
    k = cfg.num_classes
    sizes = [(height // s, width // s) for s in (4, 8, 16, 32)]
    (h1, w1), (h2, w2), (h3, w3), (h4, w4) = sizes

    counts = {
        "encoder": (encoder_param_count(cfg.channels, cfg.in_channels),
                    encoder_macs(cfg.channels, height, width, cfg.in_channels)),
        "mcag": (0, 0), "apm": (0, 0), "msccm": (0, 0), "meab": (0, 0),
    }
    if cfg.use_mcag_apm:
        counts["mcag"] = (sum(mcag_param_count(c) for c in cfg.channels),
                          sum(mcag_macs(c, h, w) for c, (h, w) in zip(cfg.channels, sizes)))
        counts["apm"] = (apm_param_count(cfg.channels, c1), apm_macs(cfg.channels, c1, sizes))
    if cfg.use_msccm:
        counts["msccm"] = (msccm_param_count((c1, c2, c3)), msccm_macs((c1, c2, c3), h1, w1))
    if cfg.use_meab:
        counts["meab"] = (meab_param_count(c4, cfg.meab_reduction),
                          meab_macs(c4, h4, w4, cfg.meab_reduction))

    heads = [(c4, c3, h3, w3), (2 * c3, c2, h2, w2), (2 * c2, c1, h1, w1), (c1, c1 // 2, height, width)]
    preds = [(c2, h2, w2), (c1, h1, w1), (c1 // 2, height, width)]
    counts["seghead"] = (
        sum(seghead_param_count(ci, co) for ci, co, _, _ in heads)
        + sum(Conv2d.param_count(ci, k) for ci, _, _ in preds),
        sum(seghead_macs(ci, co, h, w) for ci, co, h, w in heads)
        + sum(Conv2d.mac_count(ci, k, 1, h, w) for ci, h, w in preds),
    )
    counts["fusion"] = (fusion_param_count(2 * c1, c1), fusion_macs(2 * c1, c1, h1, w1))
    return counts


def profile(cfg: ModelConfig, input_size: int) -> pd.DataFrame:
    """
    Analytic profile of a model configuration (nothing is executed)

    Convolution MACs are Cout*(Cin/groups)*kh*kw*H'*W', linear MACs T*Din*Dout;
    normalization, activations and resampling count zero.

    Args:
        cfg: Model configuration
        input_size: Square input side, a multiple of 32

    Returns:
        pd.DataFrame: Rows per module plus 'decoder' and 'total';
        columns params, macs, params_pct, macs_pct
    """
    if input_size <= 0 or input_size % 32:
        raise ShapeError(f"profile input size {input_size} must be a positive multiple of 32")
    counts = _module_counts(cfg, input_size, input_size)

    rows = [{"module": name, "params": p, "macs": m} for name, (p, m) in counts.items()]
    decoder_params = sum(counts[name][0] for name in DECODER_ROWS)
    decoder_macs = sum(counts[name][1] for name in DECODER_ROWS)
    rows.append({"module": "decoder", "params": decoder_params, "macs": decoder_macs})
    rows.append({"module": "total", "params": decoder_params + counts["encoder"][0],
                 "macs": decoder_macs + counts["encoder"][1]})

    table = pd.DataFrame(rows).set_index("module")
    total_params, total_macs = table.loc["total", "params"], table.loc["total", "macs"]
    table["params_pct"] = 100.0 * table["params"] / total_params
    table["macs_pct"] = 100.0 * table["macs"] / total_macs
    return table


def stored_counts(model: MacmdModel) -> pd.Series:
    """Actual stored parameter elements per profile row"""
    store = model.store
    values = {name: sum(store.num_elements(prefix) for prefix in prefixes)
              for name, prefixes in ROW_PREFIXES.items()}
    values["decoder"] = store.num_elements("decoder.")
    values["total"] = store.num_elements()
    return pd.Series(values, name="params")


def format_profile(table: pd.DataFrame) -> str:
    """Tab-separated rows: module, params, MACs, params %, MACs %"""
    lines = ["module\tparams\tmacs\tparams_pct\tmacs_pct"]
    for name, row in table.iterrows():
        lines.append(f"{name}\t{int(row['params'])}\t{int(row['macs'])}\t"
                     f"{row['params_pct']:.2f}\t{row['macs_pct']:.2f}")
    return "\n".join(lines)


def print_profile(table: pd.DataFrame, cfg: ModelConfig, input_size: int):
    print("\n" + "=" * 70)
    print("MACMD PROFILE")
    print("=" * 70)
    print(f"Channels: {cfg.channels} | Classes: {cfg.num_classes} | Input: {input_size}x{input_size}")
    print(f"Modules: {cfg.modules_label}")
    print()
    print(format_profile(table))
    print()
    print(f"Total: {table.loc['total', 'params'] / 1e6:.3f}M params, "
          f"{table.loc['total', 'macs'] / 1e9:.3f} GMac")
    print("=" * 70)
