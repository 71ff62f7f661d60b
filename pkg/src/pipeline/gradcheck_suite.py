"""
Gradient-Check Suite
Named double-precision finite-difference checks for every operation and block
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.decoder.apm import ApmBlock
from src.decoder.hdconv import HDConvLayer
from src.decoder.macmd import MacmdModel, ModelConfig
from src.decoder.mcag import McagBlock
from src.decoder.meab import MeabBlock
from src.decoder.msccm import MsccmBlock
from src.decoder.seghead import SegHeadBlock
from src.numerics import functional as F
from src.numerics.gradcheck import grad_check_params
from src.numerics.params import NormState, ParamStore
from src.numerics.rng import make_rng
from src.numerics.tensor import Tensor, concat
from src.objective.losses import LossWeights, ce_loss, dice_loss, total_loss
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

PRIMITIVE_TOLERANCE = 1e-6
LOSS_TOLERANCE = 1e-5
MODULE_TOLERANCE = 1e-4
MODULE_COORDS = 48
FULL_MODEL_COORDS = 32
# primitives and losses are checked on every coordinate
# exact for ops linear in each single coordinate; only round-off remains
LINEAR_STEP = 1e-3
SMOOTH_STEP = 1e-5
SUITE_SEED = 2024


@dataclass
class GradCheck:
    name: str
    run: Callable[[], float]
    threshold: float


class _Inputs:
    """Seeded float64 leaves and fixed projection weights for one check"""

    def __init__(self, name: str):
        self.rng = make_rng(SUITE_SEED, f"gradcheck.{name}")

    def leaf(self, *shape, offset: float = 0.0) -> Tensor:
        return Tensor(self.rng.standard_normal(shape) + offset, requires_grad=True)

    def weights_like(self, out: Tensor) -> np.ndarray:
        return self.rng.standard_normal(out.shape)


def _projected(out: Tensor, weights: np.ndarray) -> Tensor:
    return (out * weights).sum()


def _store_leaves(store: ParamStore) -> List[Tensor]:
    return [p.value for p in store]


def _check_module(name: str, build: Callable[[ParamStore], Callable[..., Tensor]],
                  shapes: Sequence[tuple], max_coords: int = MODULE_COORDS) -> float:
    inputs = _Inputs(name)
    store = ParamStore(seed=SUITE_SEED, dtype=np.float64)
    forward = build(store)
    leaves = [inputs.leaf(*shape) for shape in shapes]
    projection = inputs.weights_like(forward(*leaves))
    return grad_check_params(lambda: _projected(forward(*leaves), projection),
                             leaves + _store_leaves(store), max_coords=max_coords, coord_seed=SUITE_SEED)


# ---------------------------------------------------------------------- #
#  Primitive operations                                                  #
# ---------------------------------------------------------------------- #

def check_conv2d() -> float:
    inputs = _Inputs("conv2d")
    x, w, b = inputs.leaf(2, 3, 8, 8), inputs.leaf(4, 3, 3, 3), inputs.leaf(4)
    r = inputs.weights_like(F.conv2d(x, w, b, dilation=2, padding=2))
    return grad_check_params(lambda: _projected(F.conv2d(x, w, b, dilation=2, padding=2), r), [x, w, b],
                             h=LINEAR_STEP)


def check_depthwise_conv2d() -> float:
    inputs = _Inputs("depthwise_conv2d")
    x, w = inputs.leaf(1, 4, 7, 7), inputs.leaf(4, 1, 3, 3)
    r = inputs.weights_like(F.conv2d(x, w, stride=2, padding=1, groups=4))
    return grad_check_params(lambda: _projected(F.conv2d(x, w, stride=2, padding=1, groups=4), r), [x, w],
                             h=LINEAR_STEP)


def check_batch_norm() -> float:
    inputs = _Inputs("batch_norm")
    x, gain, bias = inputs.leaf(2, 3, 3, 3), inputs.leaf(3), inputs.leaf(3)
    state = NormState.fresh(3, dtype=np.float64)
    r = inputs.weights_like(x)
    return grad_check_params(lambda: _projected(F.batch_norm(x, gain, bias, state), r), [x, gain, bias],
                             h=SMOOTH_STEP)


def check_layer_norm() -> float:
    inputs = _Inputs("layer_norm")
    x, gain, bias = inputs.leaf(4, 6), inputs.leaf(6), inputs.leaf(6)
    r = inputs.weights_like(x)
    return grad_check_params(lambda: _projected(F.layer_norm(x, gain, bias), r), [x, gain, bias],
                             h=SMOOTH_STEP)


def check_bilinear_upsample() -> float:
    inputs = _Inputs("bilinear_upsample")
    x = inputs.leaf(1, 2, 4, 5)
    r = inputs.weights_like(F.bilinear_upsample(x, 9, 10))
    return grad_check_params(lambda: _projected(F.bilinear_upsample(x, 9, 10), r), [x],
                             h=LINEAR_STEP)


def check_softmax() -> float:
    inputs = _Inputs("softmax")
    x = inputs.leaf(1, 5, 2, 2)
    r = inputs.weights_like(x)
    return grad_check_params(lambda: _projected(F.softmax(x, axis=1), r), [x],
                             h=SMOOTH_STEP)


def check_linear() -> float:
    inputs = _Inputs("linear")
    x, w, b = inputs.leaf(5, 6), inputs.leaf(3, 6), inputs.leaf(3)
    r = inputs.weights_like(F.linear(x, w, b))
    return grad_check_params(lambda: _projected(F.linear(x, w, b), r), [x, w, b],
                             h=LINEAR_STEP)


def check_activations() -> float:
    inputs = _Inputs("activations")
    x = inputs.leaf(2, 3, 3, 3)
    # relu and squared_relu kinks sit at 0; keep inputs away from it
    x.data += np.where(x.data >= 0, 0.1, -0.1)
    # all three terms increase with x; positive weights keep every gradient off zero
    r = 0.5 + np.abs(inputs.weights_like(x))

    def loss():
        total = _projected(F.sigmoid(x), r)
        total = total + _projected(F.relu(x), r)
        return total + _projected(F.squared_relu(x), r)

    return grad_check_params(loss, [x], h=SMOOTH_STEP)


# ---------------------------------------------------------------------- #
#  Decoder blocks                                                        #
# ---------------------------------------------------------------------- #

def check_hdconv() -> float:
    return _check_module("hdconv", lambda s: HDConvLayer(s, "hdconv", 16, 16), [(1, 16, 8, 8)])


def check_mcag() -> float:
    return _check_module("mcag", lambda s: McagBlock(s, "mcag", 16), [(2, 16, 6, 6)])


def check_apm() -> float:
    def build(store):
        block = ApmBlock(store, "apm", (16, 16, 32, 32), 16)
        return lambda *xs: block(list(xs))

    return _check_module("apm", build, [(2, 16, 8, 8), (2, 16, 4, 4), (2, 32, 2, 2), (2, 32, 1, 1)])


def check_msccm() -> float:
    def build(store):
        block = MsccmBlock(store, "msccm", (16, 16, 32))
        # a zero W_v would hide the mixing path from the check
        rng = make_rng(SUITE_SEED, "gradcheck.msccm.value")
        block.mix.value.weight.data = 0.1 * rng.standard_normal(block.mix.value.weight.shape)
        return lambda *xs: concat_outputs(block(list(xs)))

    return _check_module("msccm", build, [(2, 16, 8, 8), (2, 16, 4, 4), (2, 32, 2, 2)])


def concat_outputs(outputs: Sequence[Tensor]) -> Tensor:
    return concat([o.reshape(o.shape[0], -1) for o in outputs], axis=1)


def check_meab() -> float:
    return _check_module("meab", lambda s: MeabBlock(s, "meab", 16, reduction=4), [(2, 16, 6, 6)])


def check_seghead() -> float:
    return _check_module("seghead", lambda s: SegHeadBlock(s, "seghead", 8, 4, scale=2), [(2, 8, 4, 4)])


# ---------------------------------------------------------------------- #
#  Losses and the whole model                                            #
# ---------------------------------------------------------------------- #

def _labels(name: str, shape: tuple, classes: int) -> np.ndarray:
    return make_rng(SUITE_SEED, f"gradcheck.{name}.labels").integers(0, classes, size=shape)


def check_ce_loss() -> float:
    logits = _Inputs("ce_loss").leaf(2, 3, 4, 4)
    labels = _labels("ce_loss", (2, 4, 4), 3)
    return grad_check_params(lambda: ce_loss(logits, labels), [logits],
                             h=SMOOTH_STEP)


def check_dice_loss() -> float:
    logits = _Inputs("dice_loss").leaf(2, 3, 4, 4)
    labels = _labels("dice_loss", (2, 4, 4), 3)
    return grad_check_params(lambda: dice_loss(logits, labels), [logits],
                             h=SMOOTH_STEP)


def check_full_model() -> float:
    config = ModelConfig(channels=(16, 16, 32, 32), num_classes=3, meab_reduction=4, seed=SUITE_SEED)
    model = MacmdModel(config, dtype=np.float64)
    image = Tensor(make_rng(SUITE_SEED, "gradcheck.full_model").random((1, 3, 64, 64)), requires_grad=True)
    labels = _labels("full_model", (1, 64, 64), 3)
    weights = LossWeights.for_classes(3)
    return grad_check_params(lambda: total_loss(model(image), labels, weights),
                             [image] + _store_leaves(model.store), max_coords=FULL_MODEL_COORDS,
                             coord_seed=SUITE_SEED)


CHECKS: Dict[str, GradCheck] = {
    check.name: check for check in [
        GradCheck("conv2d", check_conv2d, PRIMITIVE_TOLERANCE),
        GradCheck("depthwise_conv2d", check_depthwise_conv2d, PRIMITIVE_TOLERANCE),
        GradCheck("batch_norm", check_batch_norm, PRIMITIVE_TOLERANCE),
        GradCheck("layer_norm", check_layer_norm, PRIMITIVE_TOLERANCE),
        GradCheck("bilinear_upsample", check_bilinear_upsample, PRIMITIVE_TOLERANCE),
        GradCheck("softmax", check_softmax, PRIMITIVE_TOLERANCE),
        GradCheck("linear", check_linear, PRIMITIVE_TOLERANCE),
        GradCheck("activations", check_activations, PRIMITIVE_TOLERANCE),
        GradCheck("hdconv", check_hdconv, MODULE_TOLERANCE),
        GradCheck("mcag", check_mcag, MODULE_TOLERANCE),
        GradCheck("apm", check_apm, MODULE_TOLERANCE),
        GradCheck("msccm", check_msccm, MODULE_TOLERANCE),
        GradCheck("meab", check_meab, MODULE_TOLERANCE),
        GradCheck("seghead", check_seghead, MODULE_TOLERANCE),
        GradCheck("ce_loss", check_ce_loss, LOSS_TOLERANCE),
        GradCheck("dice_loss", check_dice_loss, LOSS_TOLERANCE),
        GradCheck("full_model", check_full_model, MODULE_TOLERANCE),
    ]
}


def run_suite(names: Optional[Sequence[str]] = None, progress: bool = True) -> pd.DataFrame:
    """
    Run the named checks (all by default)

    Returns:
        pd.DataFrame: check, max_rel_error, threshold, passed, seconds
    """
    selected = list(CHECKS) if not names else list(names)
    unknown = [n for n in selected if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown gradient checks {unknown}; available: {sorted(CHECKS)}")

    rows = []
    iterator = tqdm(selected, desc="Gradient checks", unit="check") if progress else selected
    for name in iterator:
        check = CHECKS[name]
        start = time.time()
        error = check.run()
        rows.append({"check": name, "max_rel_error": error, "threshold": check.threshold,
                     "passed": bool(error < check.threshold), "seconds": time.time() - start})
        logger.debug(f"gradcheck {name}: {error:.3e} (threshold {check.threshold:g})")
    return pd.DataFrame(rows)


def print_suite_results(results: pd.DataFrame):
    print("\n" + "=" * 70)
    print("GRADIENT CHECK SUITE")
    print("=" * 70)
    for row in results.itertuples(index=False):
        status = "✅" if row.passed else "❌"
        print(f"  {status} {row.check:<18} max rel err {row.max_rel_error:.3e} "
              f"(< {row.threshold:g})  {row.seconds:.2f}s")
    print(f"\nPassed: {int(results['passed'].sum())}/{len(results)} | "
          f"Total time: {results['seconds'].sum():.1f}s")
    print("=" * 70)
