"""
Hypothesis testing for the scan statistic

Monte Carlo replication under the null, Gumbel tail approximation fitted by
the method of moments, and empirical P-values from past statistic values.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import betabinom, gumbel_r

from config import GUMBEL_P_FLOOR, EM_TOL, EM_MAX_ITER
from exceptions import DegenerateReplicatesError, DomainError
from models import GumbelParams, PValueMethod, PValueReport, ReplicateSet, ScanResult, StatisticKind
from services.grids import BaselineGrid, CountGrid
from services.scan_engine import ScanEngine
from services.zip_model import zip_sample_array
from services.zone_builder import ZoneSet
from utils.helpers import STREAM_REPLICATE, derive_rng
from utils.logger import log_replication


def simulate_null_grid(baselines: BaselineGrid, rng: np.random.Generator) -> CountGrid:
    """Every cell drawn independently from ZIP(p_it, mu_it)"""
    return CountGrid(zip_sample_array(baselines.p, baselines.mu, rng), baselines.location_ids)


def _rank_pvalue(observed: float, reference: Sequence[float]) -> float:
    values = np.asarray(reference, dtype=float)
    if values.size < 1:
        raise DomainError("P-values need at least one reference value")
    if observed <= 0.0:
        # no window above baseline: nothing to rank
        return 1.0
    exceed = int(np.sum(values > observed))
    return (1 + exceed) / (1 + values.size)


def _zero_fraction(values: Sequence[float]) -> float:
    return float(np.mean(np.asarray(values, dtype=float) == 0.0))


def monte_carlo_pvalue(observed: float, replicates: ReplicateSet) -> PValueReport:
    return PValueReport(
        observed=observed,
        method=PValueMethod.MONTE_CARLO,
        p_value=_rank_pvalue(observed, replicates.values),
        reference_size=replicates.size,
        zero_fraction=_zero_fraction(replicates.values),
    )


def empirical_pvalue(observed: float, history: Sequence[float]) -> PValueReport:
    """Same rank arithmetic as the Monte Carlo P-value, over past statistic values"""
    return PValueReport(
        observed=observed,
        method=PValueMethod.EMPIRICAL,
        p_value=_rank_pvalue(observed, history),
        reference_size=len(history),
        zero_fraction=_zero_fraction(history),
    )


def gumbel_fit(replicates: ReplicateSet) -> GumbelParams:
    """Method-of-moments Gumbel fit: scale = s*sqrt(6)/pi, location = m - gamma*scale"""
    values = np.asarray(replicates.values, dtype=float)
    if values.size < 2:
        raise DegenerateReplicatesError("a Gumbel fit needs at least 2 replicates")
    s = float(np.std(values, ddof=1))
    if not s > 0:
        raise DegenerateReplicatesError("replicates have zero variance")
    scale = s * np.sqrt(6.0) / np.pi
    return GumbelParams(location=float(np.mean(values) - np.euler_gamma * scale), scale=float(scale))


def gumbel_pvalue(observed: float, params: GumbelParams, reference_size: int = 0,
                  zero_fraction: Optional[float] = None) -> PValueReport:
    tail = float(gumbel_r.sf(observed, loc=params.location, scale=params.scale))
    return PValueReport(
        observed=observed,
        method=PValueMethod.GUMBEL,
        p_value=min(1.0, max(GUMBEL_P_FLOOR, tail)),
        reference_size=reference_size,
        zero_fraction=zero_fraction,
        gumbel=params,
    )


class PValueCalculator:
    """Reference distribution prepared once, then applied to any number of observed values"""

    def __init__(self, method: PValueMethod, reference: Sequence[float]):
        self.method = PValueMethod(method)
        self.reference = [float(v) for v in reference]
        self.gumbel = None
        if self.method == PValueMethod.GUMBEL:
            self.gumbel = gumbel_fit(ReplicateSet(values=self.reference))

    def __call__(self, observed: float) -> PValueReport:
        if self.method == PValueMethod.MONTE_CARLO:
            return monte_carlo_pvalue(observed, ReplicateSet(values=self.reference))
        if self.method == PValueMethod.EMPIRICAL:
            return empirical_pvalue(observed, self.reference)
        return gumbel_pvalue(observed, self.gumbel, len(self.reference), _zero_fraction(self.reference))


def cluster_pvalues(result: ScanResult, calculator: PValueCalculator) -> List[PValueReport]:
    """
    One report per ranked window, all against the same reference maxima.
    Secondary clusters are therefore tested conservatively.
    """
    return [calculator(score.llr) for score in result.ranked]


def shared_reference_envelope(alpha: float, reference_size: int, trials: int,
                              coverage: float = 0.99) -> Tuple[int, int]:
    """
    Central envelope for the number of rank P-values below alpha among
    `trials` null statistics scored against one shared reference set.

    A statistic is rejected when it beats the k-th largest reference value,
    k being the number of levels (1 + e) / (1 + R) below alpha. The null
    mass above that order statistic is Beta(k, R + 1 - k), so the count is
    beta-binomial and wider than Binomial(trials, alpha).
    """
    if not 0.0 < alpha < 1.0 or not 0.0 < coverage < 1.0:
        raise DomainError("alpha and coverage must lie in (0, 1)")
    if reference_size < 1 or trials < 1:
        raise DomainError("the envelope needs a reference set and at least one trial")
    levels = (1 + np.arange(reference_size + 1)) / (1 + reference_size)
    k = int(np.sum(levels < alpha))
    if k == 0:
        return 0, 0
    tail = (1.0 - coverage) / 2.0
    low, high = betabinom.ppf([tail, 1.0 - tail], trials, k, reference_size + 1 - k)
    return int(low), int(high)


class ReplicationRunner:
    def __init__(self, baselines: BaselineGrid, zones: ZoneSet, max_duration: int,
                 kind: StatisticKind = StatisticKind.EB_ZIP, tol: float = EM_TOL,
                 max_iter: int = EM_MAX_ITER, threads: int = 1):
        self.baselines = baselines
        self.engine = ScanEngine(zones, max_duration, kind, top_k=1, tol=tol, max_iter=max_iter)
        self.threads = max(1, int(threads))

    def replicate(self, master_seed: int, index: int) -> float:
        grid = simulate_null_grid(self.baselines, derive_rng(master_seed, STREAM_REPLICATE, index))
        return self.engine.scan(grid, self.baselines).statistic

    def run(self, R: int, master_seed: int) -> ReplicateSet:
        if R < 1:
            raise DomainError("at least one replicate is required")
        indices = list(range(R))
        log_replication("start", {"replicates": R, "kind": self.engine.kind.value, "threads": self.threads})
        if self.threads == 1:
            values = [self.replicate(master_seed, j) for j in indices]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                values = list(pool.map(lambda j: self.replicate(master_seed, j), indices))
        log_replication("done", {"replicates": R, "zero_fraction": _zero_fraction(values)})
        return ReplicateSet(values=values, master_seed=master_seed,
                            kind=self.engine.kind, replicate_indices=indices)


def run_replication(baselines: BaselineGrid, zones: ZoneSet, max_duration: int,
                    kind: StatisticKind, R: int, master_seed: int, threads: int = 1) -> ReplicateSet:
    return ReplicationRunner(baselines, zones, max_duration, kind, threads=threads).run(R, master_seed)
