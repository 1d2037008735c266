"""Central finite-difference verification of analytic gradients.

Meant for 64-bit stores and tiny models.  The caller runs one analytic
forward+backward so that every block's gradient buffer is populated, then
hands over a forward-only loss closure; the checker perturbs parameters
coordinate by coordinate and compares.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .params import ParameterStore

ZERO_FLOOR = 1e-8


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric))
    if scale < ZERO_FLOOR:
        return 0.0
    return abs(analytic - numeric) / scale


def finite_difference_check(
    store: ParameterStore,
    loss_fn: Callable[[], float],
    names: list[str] | None = None,
    delta: float = 1e-5,
    max_coords_per_block: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Max relative error per block between store gradients and central FD.

    max_coords_per_block caps how many coordinates get probed (sampled with
    rng, which is then required); None probes every coordinate.
    """
    report: dict[str, float] = {}
    for name in names if names is not None else store.names():
        param = store[name]
        flat_value = param.value.reshape(-1)
        flat_grad = param.grad.reshape(-1)
        n = flat_value.size
        if max_coords_per_block is not None and n > max_coords_per_block:
            if rng is None:
                raise ValueError("coordinate sampling requires an rng")
            coords = rng.choice(n, size=max_coords_per_block, replace=False)
        else:
            coords = range(n)
        worst = 0.0
        for i in coords:
            original = flat_value[i]
            flat_value[i] = original + delta
            lp = float(loss_fn())
            flat_value[i] = original - delta
            lm = float(loss_fn())
            flat_value[i] = original
            numeric = (lp - lm) / (2.0 * delta)
            worst = max(worst, relative_error(float(flat_grad[i]), numeric))
        report[name] = worst
    return report
