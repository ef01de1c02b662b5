"""
Zero-inflated Poisson kernels and constant-parameter maximum likelihood

The distribution mixes a point mass at zero (weight p) with Poisson(mu).
Every likelihood is evaluated in log space with log-gamma factorials.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln, xlogy

from config import EM_TOL, EM_MAX_ITER, P_UPPER, MU_LOWER
from exceptions import ParameterDomainError, DegenerateSampleError, NonConvergenceError, DomainError

ArrayLike = Union[float, int, np.ndarray, Sequence[float]]

# Starting p is kept away from both ends of [0, 1]
P_START_FLOOR = 1e-4


@dataclass(frozen=True)
class ZipParams:
    p: float
    mu: float

    def __post_init__(self):
        check_zip_arrays(self.p, self.mu)


class HistoricalSeries:
    """Past outbreak-free counts for one location"""

    def __init__(self, counts: Sequence[int]):
        values = np.asarray(counts)
        if values.ndim != 1 or values.size < 2:
            raise DomainError("a historical series needs at least 2 counts")
        if not np.all(np.isfinite(values)) or np.any(values < 0) or np.any(values != np.round(values)):
            raise DomainError("historical counts must be non-negative integers")
        self.counts = values.astype(np.int64)

    def __len__(self) -> int:
        return self.counts.size


def check_zip_arrays(p: ArrayLike, mu: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Validate ZIP parameters elementwise; returns float arrays"""
    p_arr = np.asarray(p, dtype=float)
    mu_arr = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(p_arr)) or np.any(p_arr < 0) or np.any(p_arr >= P_UPPER):
        raise ParameterDomainError(f"structural-zero probability must lie in [0, {P_UPPER})")
    if not np.all(np.isfinite(mu_arr)) or np.any(mu_arr <= MU_LOWER):
        raise ParameterDomainError(f"Poisson mean must be finite and above {MU_LOWER}")
    return p_arr, mu_arr


def _log_p(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def zero_log_prob(p: ArrayLike, mu: ArrayLike) -> np.ndarray:
    """log(p + (1 - p) exp(-mu)), exact -mu when p = 0"""
    p = np.asarray(p, dtype=float)
    return np.logaddexp(_log_p(p), np.log1p(-p) - np.asarray(mu, dtype=float))


def zip_log_pmf_array(y: ArrayLike, p: ArrayLike, mu: ArrayLike) -> np.ndarray:
    p_arr, mu_arr = check_zip_arrays(p, mu)
    y_arr = np.asarray(y)
    if np.any(y_arr < 0):
        raise ParameterDomainError("counts must be non-negative")
    positive = np.log1p(-p_arr) + xlogy(y_arr, mu_arr) - mu_arr - gammaln(y_arr + 1.0)
    return np.where(y_arr == 0, zero_log_prob(p_arr, mu_arr), positive)


def zip_log_pmf(y: int, params: ZipParams) -> float:
    return float(zip_log_pmf_array(y, params.p, params.mu))


def zip_moments(params: ZipParams) -> Tuple[float, float]:
    p, mu = params.p, params.mu
    mean = (1.0 - p) * mu
    variance = mean + p * (1.0 - p) * mu * mu
    return mean, variance


def zip_sample_array(p: ArrayLike, mu: ArrayLike, rng: np.random.Generator) -> np.ndarray:
    """One uniform draw then one Poisson draw per cell, so stream use depends only on shape"""
    p_arr, mu_arr = check_zip_arrays(p, mu)
    shape = np.broadcast(p_arr, mu_arr).shape
    structural = rng.random(shape) < p_arr
    counts = rng.poisson(np.broadcast_to(mu_arr, shape))
    return np.where(structural, 0, counts).astype(np.int64)


def zip_sample(params: ZipParams, rng: np.random.Generator) -> int:
    if rng.random() < params.p:
        return 0
    return int(rng.poisson(params.mu))


def zip_loglik(counts: ArrayLike, params: ZipParams) -> float:
    return float(np.sum(zip_log_pmf_array(counts, params.p, params.mu)))


def _start_params(y: np.ndarray) -> Tuple[float, float]:
    positive = y[y > 0]
    mu0 = float(positive.mean())
    zero_fraction = float(np.mean(y == 0))
    poisson_zero = np.exp(-mu0)
    p0 = (zero_fraction - poisson_zero) / (1.0 - poisson_zero)
    return float(np.clip(p0, P_START_FLOOR, 1.0 - P_START_FLOOR)), mu0


def zip_fit_em(series: HistoricalSeries, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER,
               loglik_trace: Optional[List[float]] = None) -> Tuple[ZipParams, int]:
    """
    Fit constant (p, mu) to one location's history by EM.

    Returns the fitted parameters and the number of EM iterations. Raises
    DegenerateSampleError when every count is zero and NonConvergenceError
    (carrying the last iterate) when max_iter is exhausted. When loglik_trace
    is given, the observed-data log-likelihood of every iterate is appended.
    """
    y = series.counts.astype(float)
    if not np.any(y > 0):
        raise DegenerateSampleError("all historical counts are zero: p and mu are unidentifiable")
    if max_iter < 1:
        raise ParameterDomainError("max_iter must be positive")

    zeros = y == 0
    total = y.sum()
    p, mu = _start_params(y)
    loglik = zip_loglik(y, ZipParams(p, mu))
    if loglik_trace is not None:
        loglik_trace.append(loglik)

    for iteration in range(1, max_iter + 1):
        # E-step: posterior that each zero is structural
        posterior = np.zeros_like(y)
        if p > 0:
            posterior[zeros] = np.exp(np.log(p) - zero_log_prob(p, mu))
        # M-step
        p = float(posterior.mean())
        mu = float(total / np.sum(1.0 - posterior))
        params = ZipParams(p, mu)
        new_loglik = zip_loglik(y, params)
        if loglik_trace is not None:
            loglik_trace.append(new_loglik)
        if abs(new_loglik - loglik) < tol * max(1.0, abs(loglik)):
            return params, iteration
        loglik = new_loglik

    raise NonConvergenceError(f"ZIP EM did not converge within {max_iter} iterations",
                              params=params, iterations=max_iter)
