"""Stretched-exponential fits and model-free 1/e times for coherence decays.

Model: |L(t)| = exp(-t/T2' - (t/T2)^n). T2' = inf means no exponential part.
"""
import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import optimize

from config.settings import settings
from models.spin_models import CoherenceTrace, DecayFit
from utils.exceptions import InvalidArgumentError
from utils.logging_config import logger

MIN_SAMPLES = 8
NON_DECAYING_DROP = 1e-3


def stretched_exponential(t, t2: float, exponent: float, t2_prime: float = math.inf):
    t = np.asarray(t, dtype=float)
    rate = 0.0 if math.isinf(t2_prime) else 1.0 / t2_prime
    return np.exp(-rate * t - (t / t2) ** exponent)


def _model(t, log_t2, exponent, rate):
    return np.exp(-rate * t - (t / np.exp(log_t2)) ** exponent)


def smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Centred moving average; window 1 leaves the data untouched"""
    if window is None or window <= 1:
        return np.asarray(values, dtype=float)
    return pd.Series(values, dtype=float).rolling(int(window), center=True, min_periods=1).mean().to_numpy()


def one_over_e_time(times: Sequence[float], magnitude: Sequence[float], smooth_window: int = 1) -> float:
    """First downward crossing of 1/e, linearly interpolated; inf if never reached"""
    times = np.asarray(times, dtype=float)
    values = smooth(np.asarray(magnitude, dtype=float), smooth_window)
    level = math.exp(-1.0)
    below = np.flatnonzero(values < level)
    if below.size == 0:
        return math.inf
    k = int(below[0])
    if k == 0:
        return float(times[0])
    t0, t1 = times[k - 1], times[k]
    v0, v1 = values[k - 1], values[k]
    return float(t0 + (v0 - level) * (t1 - t0) / (v0 - v1))


def _unpack(trace: Union[CoherenceTrace, np.ndarray], values: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(trace, CoherenceTrace):
        return np.asarray(trace.times, dtype=float), np.abs(trace.values)
    if values is None:
        raise InvalidArgumentError("pass a CoherenceTrace or both times and values")
    return np.asarray(trace, dtype=float), np.abs(np.asarray(values))


def _grid_search(t: np.ndarray, y: np.ndarray, t_min: float, t_max: float, points: int):
    bounds = settings.get_fit_config()["exponent_bounds"]
    log_t2_grid = np.linspace(math.log(t_min), math.log(10.0 * t_max), points)
    exponent_grid = np.linspace(bounds[0] + 0.1, bounds[1], points)
    rate_grid = np.concatenate([[0.0], np.logspace(math.log10(0.01 / t_max), math.log10(10.0 / t_max), points // 2)])

    best, best_cost = None, math.inf
    for rate in rate_grid:
        decay = np.exp(-rate * t)
        for exponent in exponent_grid:
            # broadcasting over the T2 grid
            scaled = (t[np.newaxis, :] / np.exp(log_t2_grid)[:, np.newaxis]) ** exponent
            residual = decay[np.newaxis, :] * np.exp(-scaled) - y[np.newaxis, :]
            cost = np.sum(residual ** 2, axis=1)
            k = int(np.argmin(cost))
            if cost[k] < best_cost:
                best_cost = float(cost[k])
                best = (float(log_t2_grid[k]), float(exponent), float(rate))
    return best


def fit_decay(trace: Union[CoherenceTrace, np.ndarray], values: Optional[np.ndarray] = None,
              smooth_window: int = 1) -> DecayFit:
    """Least-squares stretched-exponential fit of |L| plus the 1/e crossing.

    A coarse log grid over (T2, n, 1/T2') seeds a bounded curve_fit
    refinement with n in (0.5, 4]. Traces that hardly decay return
    T2 = inf with a ``non_decaying`` flag.
    """
    t, y = _unpack(trace, values)
    if t.shape != y.shape or t.ndim != 1:
        raise InvalidArgumentError("times and values must be 1-D arrays of equal length")
    if len(t) < MIN_SAMPLES:
        raise InvalidArgumentError(f"need at least {MIN_SAMPLES} samples, got {len(t)}")

    flags = []
    one_over_e = one_over_e_time(t, y, smooth_window)
    if math.isinf(one_over_e):
        flags.append("one_over_e_undefined")

    if 1.0 - float(np.min(smooth(y, smooth_window))) < NON_DECAYING_DROP:
        flags.append("non_decaying")
        residual = float(np.sqrt(np.mean((y - 1.0) ** 2)))
        logger.warning("Trace does not decay over the sampled window; reporting T2 = inf")
        return DecayFit(t2=math.inf, t2_prime=math.inf, exponent=2.0, residual=residual,
                        one_over_e=one_over_e, method="none", flags=flags)

    config = settings.get_fit_config()
    positive = t[t > 0]
    t_min, t_max = float(positive.min()), float(t.max())
    seed = _grid_search(t, y, t_min, t_max, config["grid_points"])
    low_n, high_n = config["exponent_bounds"]
    lower = [math.log(t_min) - 3.0, low_n + 1e-6, 0.0]
    upper = [math.log(t_max) + 6.0, high_n, 100.0 / t_max]
    start = [min(max(s, lo), hi) for s, lo, hi in zip(seed, lower, upper)]

    method = "grid+curve_fit"
    try:
        params, _ = optimize.curve_fit(_model, t, y, p0=start, bounds=(lower, upper), max_nfev=10000)
    except (RuntimeError, ValueError) as e:
        logger.warning(f"curve_fit refinement failed ({e}); keeping the grid estimate")
        params, method = np.asarray(start), "grid"
        flags.append("refinement_failed")

    log_t2, exponent, rate = (float(p) for p in params)
    residual = float(np.sqrt(np.mean((_model(t, log_t2, exponent, rate) - y) ** 2)))
    t2_prime = math.inf if rate <= 1e-9 / t_max else 1.0 / rate
    fit = DecayFit(t2=math.exp(log_t2), t2_prime=t2_prime, exponent=exponent, residual=residual,
                   one_over_e=one_over_e, method=method, flags=flags)
    logger.debug(f"Fitted T2={fit.t2:.4g} s, n={fit.exponent:.3f}, T2'={fit.t2_prime:.4g} s")
    return fit
