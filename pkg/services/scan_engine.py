"""
Expectation-based space-time scan

Scores every window (zone x duration 1..D, anchored at the present) with the
zero-inflated Poisson log-likelihood ratio, whose relative risk comes from
EM, or with the closed-form expectation-based Poisson comparator, and keeps
the maximum together with the top ranked windows.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import chain
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln, xlogy

from config import EM_TOL, EM_MAX_ITER, EM_NEWTON_STEPS, DEFAULT_TOP_K
from exceptions import DomainError, ParameterDomainError
from models import StatisticKind, Window, WindowScore, ScanResult
from services.grids import CountGrid, BaselineGrid
from services.zip_model import check_zip_arrays, zero_log_prob, zip_log_pmf_array
from services.zone_builder import Zone, ZoneSet
from utils.helpers import chunk_bounds
from utils.logger import log_scan_step

__all__ = [
    "CountGrid", "BaselineGrid", "EMEstimate", "WindowLayout", "WindowArrays", "ScanEngine",
    "zip_em_qhat", "zip_window_lambda", "poisson_window_score", "score_windows", "scan",
]

Cells = Union[Sequence[Tuple[float, float, float]], Tuple[np.ndarray, np.ndarray, np.ndarray]]


def _as_cells(cells: Cells) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(cells, tuple) and len(cells) == 3 and all(isinstance(c, np.ndarray) for c in cells):
        y, p, mu = cells
    else:
        table = np.asarray(cells, dtype=float).reshape(-1, 3)
        y, p, mu = table[:, 0], table[:, 1], table[:, 2]
    if y.size == 0:
        raise DomainError("a window needs at least one cell")
    if np.any(y < 0):
        raise ParameterDomainError("counts must be non-negative")
    p, mu = check_zip_arrays(p, mu)
    return y.astype(float), p, mu


@dataclass
class EMEstimate:
    q_hat: float
    deltas: np.ndarray
    iterations: int
    converged: bool
    loglik_trace: List[float] = field(default_factory=list)


def _window_loglik(y: np.ndarray, p: np.ndarray, mu: np.ndarray, q: float) -> float:
    return float(np.sum(zip_log_pmf_array(y, p, q * mu)))


def zip_em_qhat(cells: Cells, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER) -> EMEstimate:
    """
    Relative risk of a single window by EM, starting from q = 1.

    Positive-count cells keep a structural-zero posterior of 0; zero cells
    are updated each iteration. Stops when the incomplete-data
    log-likelihood changes by less than tol * max(1, |previous|), then
    polishes q with a few safeguarded Newton steps.
    """
    y, p, mu = _as_cells(cells)
    zeros = y == 0
    deltas = np.zeros_like(y)
    q = 1.0
    loglik = _window_loglik(y, p, mu, q)
    trace = [loglik]
    with np.errstate(divide="ignore"):
        log_p = np.log(p[zeros])
    if not np.any(y > 0):
        deltas[zeros] = np.exp(log_p - zero_log_prob(p[zeros], mu[zeros]))
        return EMEstimate(1.0, deltas, 0, True, trace)

    total = y.sum()
    for iteration in range(1, max_iter + 1):
        # E-step
        deltas[zeros] = np.exp(log_p - zero_log_prob(p[zeros], q * mu[zeros]))
        # M-step
        q = max(1.0, total / np.sum(mu * (1.0 - deltas)))
        new_loglik = _window_loglik(y, p, mu, q)
        trace.append(new_loglik)
        done = abs(new_loglik - loglik) < tol * max(1.0, abs(loglik))
        loglik = new_loglik
        if done:
            break
    else:
        return EMEstimate(q, deltas, max_iter, False, trace)

    q = _newton_polish(y, p, mu, q, loglik, trace)
    deltas[zeros] = np.exp(log_p - zero_log_prob(p[zeros], q * mu[zeros]))
    return EMEstimate(q, deltas, iteration, True, trace)


def _newton_polish(y: np.ndarray, p: np.ndarray, mu: np.ndarray, q: float, loglik: float,
                   trace: List[float], steps: int = EM_NEWTON_STEPS) -> float:
    """Newton steps on the observed log-likelihood in q, each kept only if it does not lower it"""
    zeros = y == 0
    total = y.sum()
    mu_positive = mu[~zeros].sum()
    p0, mu0 = p[zeros], mu[zeros]
    for _ in range(steps):
        # 1 - delta on the zero cells
        keep = np.exp(np.log1p(-p0) - q * mu0 - zero_log_prob(p0, q * mu0))
        gradient = total / q - mu_positive - np.sum(mu0 * keep)
        curvature = -total / q ** 2 + np.sum(mu0 ** 2 * keep * (1.0 - keep))
        if not curvature < 0.0:
            break
        q_new = max(1.0, q - gradient / curvature)
        if q_new == q:
            break
        new_loglik = _window_loglik(y, p, mu, q_new)
        if not new_loglik >= loglik:
            break
        q, loglik = q_new, new_loglik
        trace.append(loglik)
    return q


def zip_window_lambda(cells: Cells, q_hat: float) -> float:
    """Log-likelihood ratio over the window's own cells; cells outside cancel"""
    if q_hat < 1:
        raise ParameterDomainError("relative risk must be at least 1")
    if q_hat == 1:
        return 0.0
    y, p, mu = _as_cells(cells)
    return float(np.sum(zip_log_pmf_array(y, p, q_hat * mu) - zip_log_pmf_array(y, p, mu)))


def _unit_risk_where_flat(q, llr):
    """lambda = 0 exactly when q = 1, also for q a rounding error above 1"""
    flat = ~(llr > 0.0)
    return np.where(flat, 1.0, q), np.where(flat, 0.0, llr)


def _poisson_llr(total_y, total_mu):
    q = np.maximum(1.0, total_y / total_mu)
    with np.errstate(divide="ignore", invalid="ignore"):
        llr = np.where(q > 1.0, xlogy(total_y, q) - (q - 1.0) * total_mu, 0.0)
    return _unit_risk_where_flat(q, llr)


def poisson_window_score(cells: Cells) -> WindowScore:
    y, _, mu = _as_cells(cells)
    q, llr = _poisson_llr(y.sum(), mu.sum())
    return WindowScore(q_hat=float(q), llr=float(llr), em_iterations=0, converged=True)


class WindowLayout:
    """
    Data-independent bookkeeping for all windows of a zone set.

    Window index = zone * max_duration + (duration - 1), zones in ZoneSet
    order. Location-member pairs are stored zone by zone so per-zone sums
    are a single reduceat.
    """

    def __init__(self, zones: Sequence[Zone], max_duration: int, zone_offset: int = 0):
        if len(zones) == 0:
            raise DomainError("no zones to scan")
        if max_duration < 1:
            raise DomainError("max_duration must be at least 1")
        self.zones = list(zones)
        self.max_duration = max_duration
        self.zone_offset = zone_offset
        sizes = np.array([len(z) for z in self.zones], dtype=np.int64)
        self.pair_zone = np.repeat(np.arange(len(self.zones)), sizes)
        self.pair_loc = np.fromiter(chain.from_iterable(z.members for z in self.zones),
                                    dtype=np.int64, count=int(sizes.sum()))
        self.zone_starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))

    @property
    def n_zones(self) -> int:
        return len(self.zones)

    @property
    def n_windows(self) -> int:
        return self.n_zones * self.max_duration

    def split(self, parts: int) -> List["WindowLayout"]:
        if parts <= 1:
            return [self]
        return [WindowLayout(self.zones[a:b], self.max_duration, self.zone_offset + a)
                for a, b in chunk_bounds(self.n_zones, parts)]

    def window_sums(self, values: np.ndarray) -> np.ndarray:
        """Per-window totals of an n x T cell array, durations accumulated by prefix sums"""
        per_pair = np.cumsum(values[self.pair_loc, :self.max_duration], axis=1)
        return np.add.reduceat(per_pair, self.zone_starts, axis=0).ravel()

    def zero_entries(self, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(window, location, time) for every zero cell of every window"""
        D = self.max_duration
        pair, t = np.nonzero(y[self.pair_loc, :D] == 0)
        reps = D - t
        source = np.repeat(np.arange(pair.size), reps)
        first = np.repeat(np.cumsum(reps) - reps, reps)
        duration = t[source] + 1 + (np.arange(source.size) - first)
        window = self.pair_zone[pair[source]] * D + duration - 1
        return window, self.pair_loc[pair[source]], t[source]


@dataclass
class WindowArrays:
    q_hat: np.ndarray
    llr: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray

    @classmethod
    def concatenate(cls, parts: Sequence["WindowArrays"]) -> "WindowArrays":
        return cls(*(np.concatenate([getattr(part, name) for part in parts])
                     for name in ("q_hat", "llr", "iterations", "converged")))


def _newton_polish_windows(q, loglik_q, total_y, mu_positive, window, entry_mu, entry_log1m,
                           zero_terms, loglik, eligible, steps: int = EM_NEWTON_STEPS) -> np.ndarray:
    """Vectorized form of _newton_polish over every converged window with a positive count"""
    W = q.size
    eligible = eligible & (total_y > 0)
    for _ in range(steps):
        q_entries = q[window]
        keep = np.exp(entry_log1m - q_entries * entry_mu - zero_terms(q_entries))
        gradient = total_y / q - mu_positive - np.bincount(window, entry_mu * keep, minlength=W)
        curvature = -total_y / q ** 2 + np.bincount(window, entry_mu ** 2 * keep * (1.0 - keep), minlength=W)
        step = eligible & (curvature < 0.0)
        if not step.any():
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            q_try = np.where(step, np.maximum(1.0, q - gradient / curvature), q)
        current = loglik(q_try)
        accept = step & (q_try != q) & (current >= loglik_q)
        q = np.where(accept, q_try, q)
        loglik_q = np.where(accept, current, loglik_q)
        eligible = accept
    return q


def _zip_window_arrays(y: np.ndarray, p: np.ndarray, mu: np.ndarray, layout: WindowLayout,
                       tol: float, max_iter: int) -> WindowArrays:
    W = layout.n_windows
    total_y = layout.window_sums(y.astype(float))
    positive = y > 0
    mu_positive = layout.window_sums(np.where(positive, mu, 0.0))
    constant = layout.window_sums(np.where(
        positive, np.log1p(-p) + xlogy(y, mu) - gammaln(y + 1.0), 0.0))

    window, loc, t = layout.zero_entries(y)
    entry_mu = mu[loc, t]
    entry_log1m = np.log1p(-p[loc, t])
    with np.errstate(divide="ignore"):
        entry_log_p = np.log(p[loc, t])

    def zero_terms(q_entries, mask=slice(None)):
        return np.logaddexp(entry_log_p[mask], entry_log1m[mask] - q_entries * entry_mu[mask])

    def loglik(q):
        with np.errstate(divide="ignore"):
            log_q = np.log(q)
        return (constant + total_y * log_q - q * mu_positive
                + np.bincount(window, zero_terms(q[window]), minlength=W))

    q = np.ones(W)
    iterations = np.zeros(W, dtype=np.int64)
    converged = total_y == 0
    active = ~converged
    previous = loglik(q)

    for iteration in range(1, max_iter + 1):
        if not active.any():
            break
        mask = active[window]
        ew = window[mask]
        q_entries = q[ew]
        # E-step, kept as 1 - delta to avoid cancellation in the denominator
        keep = np.exp(entry_log1m[mask] - q_entries * entry_mu[mask] - zero_terms(q_entries, mask))
        denominator = mu_positive + np.bincount(ew, entry_mu[mask] * keep, minlength=W)
        # M-step
        q_new = q.copy()
        q_new[active] = np.maximum(1.0, total_y[active] / denominator[active])
        current = loglik(q_new)
        iterations[active] = iteration
        done = active & (np.abs(current - previous) < tol * np.maximum(1.0, np.abs(previous)))
        q = q_new
        previous = np.where(active, current, previous)
        converged |= done
        active &= ~done

    q = _newton_polish_windows(q, previous, total_y, mu_positive, window, entry_mu, entry_log1m,
                               zero_terms, loglik, converged)
    with np.errstate(divide="ignore"):
        log_q = np.log(q)
    llr = (total_y * log_q - (q - 1.0) * mu_positive
           + np.bincount(window, zero_terms(q[window]) - zero_terms(1.0), minlength=W))
    q, llr = _unit_risk_where_flat(q, np.where(q > 1.0, llr, 0.0))
    return WindowArrays(q, llr, iterations, converged)


def score_windows(counts: CountGrid, baselines: BaselineGrid, layout: WindowLayout,
                  kind: StatisticKind = StatisticKind.EB_ZIP,
                  tol: float = EM_TOL, max_iter: int = EM_MAX_ITER) -> WindowArrays:
    """Per-window (q_hat, llr, EM iterations, converged) over one layout"""
    if kind == StatisticKind.EB_POISSON:
        total_y = layout.window_sums(counts.y.astype(float))
        total_mu = layout.window_sums(baselines.mu)
        q, llr = _poisson_llr(total_y, total_mu)
        W = layout.n_windows
        return WindowArrays(q, llr, np.zeros(W, dtype=np.int64), np.ones(W, dtype=bool))
    return _zip_window_arrays(counts.y, baselines.p, baselines.mu, layout, tol, max_iter)


class ScanEngine:
    """Scan configuration bound to one zone set; the window layout is built once"""

    def __init__(self, zones: ZoneSet, max_duration: int, kind: StatisticKind = StatisticKind.EB_ZIP,
                 top_k: int = DEFAULT_TOP_K, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER,
                 threads: int = 1):
        if top_k < 1:
            raise DomainError("top_k must be positive")
        self.zones = zones
        self.max_duration = max_duration
        self.kind = StatisticKind(kind)
        self.top_k = top_k
        self.tol = tol
        self.max_iter = max_iter
        self.threads = max(1, int(threads))
        self.layout = WindowLayout(zones.zones, max_duration)
        self._parts = self.layout.split(self.threads)
        self.last_elapsed = 0.0

    def _check_inputs(self, counts: CountGrid, baselines: BaselineGrid):
        baselines.check_aligned(counts)
        if not 1 <= self.max_duration <= counts.T:
            raise DomainError(f"max_duration {self.max_duration} must lie in [1, {counts.T}]")
        self.zones.check_locations(counts.n)

    def score(self, counts: CountGrid, baselines: BaselineGrid) -> WindowArrays:
        self._check_inputs(counts, baselines)
        if len(self._parts) == 1:
            return score_windows(counts, baselines, self.layout, self.kind, self.tol, self.max_iter)
        with ThreadPoolExecutor(max_workers=len(self._parts)) as pool:
            parts = list(pool.map(
                lambda part: score_windows(counts, baselines, part, self.kind, self.tol, self.max_iter),
                self._parts))
        return WindowArrays.concatenate(parts)

    def _window_score(self, arrays: WindowArrays, index: int) -> WindowScore:
        zone_index, duration = divmod(int(index), self.max_duration)
        return WindowScore(
            window=Window(zone_index=zone_index, members=self.zones[zone_index].members,
                          duration=duration + 1),
            q_hat=float(arrays.q_hat[index]),
            llr=float(arrays.llr[index]),
            em_iterations=int(arrays.iterations[index]),
            converged=bool(arrays.converged[index]),
        )

    def scan(self, counts: CountGrid, baselines: BaselineGrid) -> ScanResult:
        started = time.perf_counter()
        arrays = self.score(counts, baselines)
        W = arrays.llr.size
        zone_index, duration = np.divmod(np.arange(W), self.max_duration)
        # lambda desc, then shorter duration, then zone canonical order
        order = np.lexsort((zone_index, duration, -arrays.llr))
        ranked = [self._window_score(arrays, i) for i in order[:self.top_k]]
        nonconverged = int(np.sum(~arrays.converged))
        self.last_elapsed = time.perf_counter() - started
        if nonconverged:
            log_scan_step("em_not_converged", {"windows": nonconverged})
        return ScanResult(
            statistic=ranked[0].llr,
            mlc=ranked[0],
            ranked=ranked,
            kind=self.kind,
            n_zones=len(self.zones),
            n_windows=W,
            nonconverged_windows=nonconverged,
        )


def scan(counts: CountGrid, baselines: BaselineGrid, zones: ZoneSet, max_duration: int,
         kind: StatisticKind = StatisticKind.EB_ZIP, top_k: int = DEFAULT_TOP_K,
         tol: float = EM_TOL, max_iter: int = EM_MAX_ITER, threads: int = 1) -> ScanResult:
    return ScanEngine(zones, max_duration, kind, top_k, tol, max_iter, threads).scan(counts, baselines)
