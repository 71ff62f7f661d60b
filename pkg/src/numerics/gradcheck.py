"""
Gradient Checker
Central finite differences against the analytic reverse-mode gradient
"""

import logging
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from config.macmd_config import GRADCHECK_STEP
from src.numerics.rng import make_rng
from src.numerics.tensor import Tensor, backward, no_grad
from src.utils.errors import AutogradError, ShapeError

logger = logging.getLogger(__name__)

RELATIVE_FLOOR = 1e-8


def _scalar(out: Tensor) -> float:
    if not isinstance(out, Tensor) or out.data.size != 1:
        shape = out.shape if isinstance(out, Tensor) else type(out).__name__
        raise ShapeError(f"grad_check needs a scalar-valued function, got output {shape}")
    return float(out.data.reshape(-1)[0])


def grad_check_params(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                      h: float = GRADCHECK_STEP, max_coords: Optional[int] = None,
                      coord_seed: int = 0) -> float:
    """
    Compare analytic and numeric gradients of a scalar loss w.r.t. leaf tensors

    The tensors are perturbed in place one coordinate at a time and restored.
    Callers are responsible for running in double precision.

    Args:
        loss_fn: Recomputes the scalar loss from the current tensor values
        tensors: Leaf tensors with requires_grad=True
        h: Finite-difference step
        max_coords: Check a seeded uniform sample of this many coordinates
        coord_seed: Seed of the coordinate sample

    Returns:
        float: Max relative error |a - n| / max(|a|, |n|, 1e-8)
    """
    for t in tensors:
        if not t.requires_grad:
            raise AutogradError("grad_check: every checked tensor must require gradients")
        t.data = np.ascontiguousarray(t.data)
        t.grad = None

    out = loss_fn()
    _scalar(out)
    backward(out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    coords: List[Tuple[int, int]] = [(i, j) for i, t in enumerate(tensors) for j in range(t.data.size)]
    if max_coords is not None and len(coords) > max_coords:
        # uniform sample, independent of the analytic values
        keep = np.sort(make_rng(coord_seed, "gradcheck.coords").choice(len(coords), max_coords, replace=False))
        coords = [coords[k] for k in keep]

    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = tensors[i].data.reshape(-1)
            original = flat[j]
            flat[j] = original + h
            plus = _scalar(loss_fn())
            flat[j] = original - h
            minus = _scalar(loss_fn())
            flat[j] = original

            numeric = (plus - minus) / (2.0 * h)
            exact = float(analytic[i].reshape(-1)[j])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), RELATIVE_FLOOR)
            worst = max(worst, error)

    for t in tensors:
        t.grad = None
    logger.debug(f"grad_check over {len(coords)} coordinates: max relative error {worst:.3e}")
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = GRADCHECK_STEP,
               max_coords: Optional[int] = None, coord_seed: int = 0) -> float:
    """
    Max relative error between d f / d x and its central-difference estimate

    Args:
        f: Tensor -> scalar Tensor
        x: Point of evaluation (converted to float64)
        h: Finite-difference step
        max_coords: Optional size of a seeded coordinate sample
        coord_seed: Seed of that sample

    Returns:
        float: Max relative error over the checked coordinates
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    point = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
    return grad_check_params(lambda: f(point), [point], h=h, max_coords=max_coords,
                             coord_seed=coord_seed)
