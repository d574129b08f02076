"""Univariate stepping-out slice sampler on a bounded log-range."""

from typing import Callable, Optional

import numpy as np

from errors import InvalidStateError
from priors import PriorConfig


def slice_sample_log_range(logphi: float, target: Callable[[float], float],
                           prior: PriorConfig, rng: np.random.Generator,
                           max_stepout: Optional[int] = None,
                           log_bounds: Optional[tuple] = None) -> float:
    """
    One slice-sampling update of log(phi) with stepping out and shrinkage.

    The bracket starts at width ``prior.slice_w0`` placed uniformly around the
    current point, is stepped out at most ``max_stepout`` times in total, and
    is clipped to the log bounds. Points outside the bounds have zero density.

    Args:
        logphi: Current value
        target: Unnormalized log density of log(phi)
        prior: Supplies width, step-out budget and bounds
        rng: Random generator
        max_stepout: Overrides ``prior.slice_max_stepout`` (burn-in budget)
        log_bounds: Overrides ``prior.log_bounds``

    Returns:
        New value of log(phi)
    """
    lo, hi = log_bounds if log_bounds is not None else prior.log_bounds
    budget = prior.slice_max_stepout if max_stepout is None else max_stepout

    def logf(x: float) -> float:
        if x < lo or x > hi:
            return -np.inf
        return target(x)

    f0 = logf(logphi)
    if not np.isfinite(f0):
        raise InvalidStateError(f"slice target is not finite at log(phi)={logphi:.6g}")

    log_y = f0 + np.log(rng.uniform())
    w = prior.slice_w0
    left = logphi - w * rng.uniform()
    right = left + w

    # Neal's step-out split: J steps to the left, K to the right
    J = int(np.floor(budget * rng.uniform()))
    K = budget - 1 - J
    while J > 0 and left > lo and logf(left) > log_y:
        left -= w
        J -= 1
    while K > 0 and right < hi and logf(right) > log_y:
        right += w
        K -= 1
    left = max(left, lo)
    right = min(right, hi)

    while True:
        x = rng.uniform(left, right)
        if logf(x) > log_y:
            return float(x)
        if x < logphi:
            left = x
        else:
            right = x
        if right - left < 1e-12:
            return float(logphi)
