"""
Simulation study harness

Outbreaks follow the hotspot model: inside the true zone, during the
outbreak weeks, the Poisson mean is multiplied by q while the
structural-zero probability is left alone. Each dataset is scanned week by
week from the first outbreak week, and detection timeliness plus spatial
precision, recall and F are recorded at the first week with P < alpha.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import SCENARIO_LEVELS
from exceptions import DomainError, DegenerateSampleError
from models import DetectionMetrics, ExperimentConfig, Scenario, StatisticKind
from services.baseline_service import BaselineEstimator
from services.grids import BaselineGrid, CountGrid
from services.inference import PValueCalculator, shared_reference_envelope
from services.scan_engine import ScanEngine
from services.zip_model import zip_sample_array
from services.zone_builder import DistanceMatrix, Zone, ZoneSet, knn_zones
from utils.helpers import (STREAM_DATASET, STREAM_GEOMETRY, STREAM_NULL_DATASET,
                           STREAM_OUTBREAK_ZONE, derive_rng)
from utils.logger import log_experiment_step

PERCENTILES = (5, 50, 95)


def place_locations(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform on the unit square"""
    return rng.random((n, 2))


def outbreak_zone(dist: DistanceMatrix, size: int, rng: np.random.Generator) -> Zone:
    """Random center plus its size - 1 nearest neighbors, so the truth is itself a k-NN zone"""
    if not 1 <= size <= dist.n:
        raise DomainError(f"outbreak size must lie in [1, {dist.n}]")
    center = int(rng.integers(dist.n))
    return Zone(dist.neighbor_order()[center, :size].tolist())


def generate_scenario_data(s: Scenario, rng: np.random.Generator,
                           truth: Optional[Zone] = None) -> CountGrid:
    """
    Counts for pre-outbreak plus outbreak weeks, column 0 = last outbreak week.
    With q = 1 the draws are exactly those of a pure null grid of the same shape.
    """
    if s.q > 1.0 and truth is None:
        raise DomainError("an outbreak scenario needs a true zone")
    mu = np.full((s.n_locations, s.total_weeks), s.mu)
    if truth is not None and s.q > 1.0:
        rows = np.array(truth.members)
        if rows.max() >= s.n_locations:
            raise DomainError("true zone references unknown locations")
        mu[np.ix_(rows, np.arange(s.outbreak_weeks))] *= s.q
    return CountGrid(zip_sample_array(np.full(mu.shape, s.p), mu, rng))


def spatial_precision_recall(detected: Zone, truth: Zone) -> Tuple[float, float]:
    if len(detected) == 0 or len(truth) == 0:
        raise DomainError("precision and recall need non-empty zones")
    hits = len(set(detected.members) & set(truth.members))
    return hits / len(detected), hits / len(truth)


def harmonic_f(precision: float, recall: float) -> float:
    """Standard harmonic mean of precision and recall, 0 when either is 0"""
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise DomainError("precision and recall must lie in [0, 1]")
    if precision == 0.0 or recall == 0.0:
        return 0.0
    return 2.0 / (1.0 / precision + 1.0 / recall)


def mlc_f_score(zone: Zone, truth: Zone) -> float:
    return harmonic_f(*spatial_precision_recall(zone, truth))


def detect(pvalues: Sequence[float], zones: Sequence[Zone], alpha: float,
           truth: Optional[Zone]) -> DetectionMetrics:
    """First week with P < alpha, with accuracy of that week's most likely cluster"""
    for week, (pvalue, zone) in enumerate(zip(pvalues, zones), start=1):
        if pvalue < alpha:
            if truth is None:
                return DetectionMetrics(detection_week=week, detected_zone=list(zone.members),
                                        pvalues=list(pvalues))
            precision, recall = spatial_precision_recall(zone, truth)
            return DetectionMetrics(detection_week=week, precision=precision, recall=recall,
                                    f_score=harmonic_f(precision, recall),
                                    detected_zone=list(zone.members), pvalues=list(pvalues))
    return DetectionMetrics(pvalues=list(pvalues))


def scenario_grid(mus: Sequence[float] = SCENARIO_LEVELS["mu"], ps: Sequence[float] = SCENARIO_LEVELS["p"],
                  qs: Sequence[float] = SCENARIO_LEVELS["q"],
                  sizes: Sequence[int] = SCENARIO_LEVELS["outbreak_size"], **common) -> List[Scenario]:
    """Full factorial of baseline mean, zero probability, relative risk and outbreak size"""
    return [Scenario(mu=mu, p=p, q=q, outbreak_size=size, **common)
            for mu, p, q, size in product(mus, ps, qs, sizes)]


@dataclass
class ExperimentResult:
    weekly: pd.DataFrame
    summary: pd.DataFrame
    detections: pd.DataFrame
    false_positive: pd.DataFrame


@dataclass
class _DatasetTrace:
    truth: Optional[Zone]
    pvalues: Dict[StatisticKind, List[float]]
    zones: Dict[StatisticKind, List[Zone]]


def format_pvalues(pvalues: Sequence[float]) -> str:
    """Week-ordered P-values as one `;`-separated cell, full precision"""
    return ";".join(format(float(p), ".17g") for p in pvalues)


def _percentile_columns(prefix: str, values: Sequence[float]) -> Dict[str, float]:
    clean = np.asarray([v for v in values if v is not None and not np.isnan(v)], dtype=float)
    return {f"{prefix}_p{q}": (float(np.percentile(clean, q)) if clean.size else np.nan) for q in PERCENTILES}


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._coordinates: Dict[int, np.ndarray] = {}
        self._distances: Dict[int, DistanceMatrix] = {}
        self._zones: Dict[Tuple[int, int], ZoneSet] = {}
        self._engines: Dict[Tuple, ScanEngine] = {}
        self._references: Dict[Tuple, Dict[StatisticKind, PValueCalculator]] = {}

    # ---------- shared geometry, zones and engines ----------

    def coordinates(self, n: int) -> np.ndarray:
        if n not in self._coordinates:
            self._coordinates[n] = place_locations(n, derive_rng(self.config.master_seed, STREAM_GEOMETRY, n))
        return self._coordinates[n]

    def distances(self, n: int) -> DistanceMatrix:
        if n not in self._distances:
            self._distances[n] = DistanceMatrix.from_coordinates(self.coordinates(n))
        return self._distances[n]

    def zones(self, s: Scenario) -> ZoneSet:
        key = (s.n_locations, s.k_max)
        if key not in self._zones:
            self._zones[key] = knn_zones(self.distances(s.n_locations), s.k_max)
        return self._zones[key]

    def engine(self, s: Scenario, method: StatisticKind) -> ScanEngine:
        key = (s.n_locations, s.k_max, s.max_duration, method)
        if key not in self._engines:
            self._engines[key] = ScanEngine(self.zones(s), s.max_duration, method, top_k=1)
        return self._engines[key]

    def prepare(self, s: Scenario):
        """Build every cached object a scenario needs before worker threads start"""
        self.zones(s)
        for method in self.config.methods:
            self.engine(s, method)

    # ---------- data ----------

    def truth(self, s: Scenario, dataset: int) -> Optional[Zone]:
        if s.outbreak_zone is not None:
            return Zone(s.outbreak_zone)
        if s.is_null:
            return None
        rng = derive_rng(self.config.master_seed, STREAM_OUTBREAK_ZONE, s.seed, dataset)
        return outbreak_zone(self.distances(s.n_locations), s.outbreak_size, rng)

    def dataset(self, s: Scenario, dataset: int) -> Tuple[CountGrid, Optional[Zone]]:
        """Full simulated series of one dataset and its true zone"""
        truth = self.truth(s, dataset)
        rng = derive_rng(self.config.master_seed, STREAM_DATASET, s.seed, dataset)
        return generate_scenario_data(s, rng, truth), truth

    def scan_inputs(self, s: Scenario, dataset: int = 0) -> Tuple[CountGrid, BaselineGrid, np.ndarray]:
        """Counts at the last outbreak week, baselines and coordinates, as a scan would see them"""
        data, _ = self.dataset(s, dataset)
        return data.as_of(0, s.max_duration), self.baselines(s, data), self.coordinates(s.n_locations)

    def baselines(self, s: Scenario, data: CountGrid) -> BaselineGrid:
        """Known truth, or per-location fits on the pre-outbreak weeks"""
        if not self.config.estimate_baselines:
            return BaselineGrid.constant(s.n_locations, s.max_duration, s.p, s.mu)
        if s.pre_weeks < 2:
            raise DomainError("baseline estimation needs at least 2 pre-outbreak weeks")
        history = data.as_of(s.outbreak_weeks, s.pre_weeks)
        try:
            return BaselineEstimator().fit(history, s.max_duration)
        except DegenerateSampleError:
            return BaselineGrid.constant(s.n_locations, s.max_duration, s.p, s.mu)

    # ---------- null reference ----------

    def _null_statistics(self, s: Scenario, index: int) -> Dict[StatisticKind, float]:
        rng = derive_rng(self.config.master_seed, STREAM_NULL_DATASET,
                         s.n_locations, s.max_duration, index)
        if self.config.estimate_baselines:
            null = s.model_copy(update={"q": 1.0, "outbreak_zone": None})
            data = generate_scenario_data(null, rng)
            grid = data.as_of(0, s.max_duration)
            baselines = self.baselines(s, data)
        else:
            baselines = BaselineGrid.constant(s.n_locations, s.max_duration, s.p, s.mu)
            grid = CountGrid(zip_sample_array(baselines.p, baselines.mu, rng))
        return {m: self.engine(s, m).scan(grid, baselines).statistic for m in self.config.methods}

    def reference(self, s: Scenario) -> Dict[StatisticKind, PValueCalculator]:
        key = (s.n_locations, s.k_max, s.max_duration, s.p, s.mu,
               s.pre_weeks, s.outbreak_weeks, self.config.estimate_baselines)
        if key not in self._references:
            log_experiment_step("null_reference", {"p": s.p, "mu": s.mu, "replicates": self.config.replicates})
            stats = self._map(lambda j: self._null_statistics(s, j), range(self.config.replicates))
            self._references[key] = {m: PValueCalculator(self.config.pvalue, [row[m] for row in stats])
                                     for m in self.config.methods}
        return self._references[key]

    # ---------- outbreaks ----------

    def run_dataset(self, s: Scenario, dataset: int) -> _DatasetTrace:
        data, truth = self.dataset(s, dataset)
        baselines = self.baselines(s, data)
        calculators = self.reference(s)
        trace = _DatasetTrace(truth, {m: [] for m in self.config.methods}, {m: [] for m in self.config.methods})
        for week in range(1, s.outbreak_weeks + 1):
            view = data.as_of(s.outbreak_weeks - week, s.max_duration)
            for method in self.config.methods:
                result = self.engine(s, method).scan(view, baselines)
                trace.pvalues[method].append(calculators[method](result.statistic).p_value)
                trace.zones[method].append(Zone(result.mlc.window.members))
        return trace

    def _map(self, fn, items) -> list:
        items = list(items)
        if self.config.threads == 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
            return list(pool.map(fn, items))

    def run_scenario(self, s: Scenario) -> List[_DatasetTrace]:
        self.prepare(s)
        self.reference(s)
        log_experiment_step("scenario_start", {"scenario": s.label(), "datasets": self.config.outbreaks_per_scenario})
        return self._map(lambda b: self.run_dataset(s, b), range(self.config.outbreaks_per_scenario))

    def run(self) -> ExperimentResult:
        detection_rows, weekly_rows, summary_rows, fp_rows = [], [], [], []
        for s in self.config.scenarios:
            traces = self.run_scenario(s)
            keys = {"scenario": s.label(), "n_locations": s.n_locations, "p": s.p, "mu": s.mu,
                    "q": s.q, "outbreak_size": s.outbreak_size}
            for method, alpha in product(self.config.methods, self.config.alphas):
                metrics = [detect(t.pvalues[method], t.zones[method], alpha, t.truth) for t in traces]
                group = {**keys, "method": method.value, "alpha": alpha}
                for dataset, m in enumerate(metrics):
                    detection_rows.append({**group, "dataset": dataset, "detection_week": m.detection_week,
                                           "precision": m.precision, "recall": m.recall, "f_score": m.f_score,
                                           "pvalues": format_pvalues(m.pvalues)})
                weeks = [m.detection_week for m in metrics]
                for week in range(1, s.outbreak_weeks + 1):
                    at_week = [m for m in metrics if m.detection_week == week]
                    detected_by = [t for t, m in zip(traces, metrics) if t.truth is not None
                                   and m.detection_week is not None and m.detection_week <= week]
                    weekly_rows.append({
                        **group, "week": week, "n_datasets": len(metrics),
                        "detected_in_week": len(at_week),
                        "detected_fraction": sum(1 for w in weeks if w is not None and w <= week) / len(metrics),
                        **_percentile_columns("precision", [m.precision for m in at_week]),
                        **_percentile_columns("recall", [m.recall for m in at_week]),
                        **_percentile_columns("f_score", [m.f_score for m in at_week]),
                        **_percentile_columns("mlc_f_score", [mlc_f_score(t.zones[method][week - 1], t.truth)
                                                              for t in detected_by]),
                    })
                detected = [m for m in metrics if m.detection_week is not None]
                summary_rows.append({
                    **group, "n_datasets": len(metrics),
                    "detected_fraction": len(detected) / len(metrics),
                    "median_detection_week": float(np.median([m.detection_week for m in detected])) if detected else np.nan,
                    **_percentile_columns("precision", [m.precision for m in detected]),
                    **_percentile_columns("recall", [m.recall for m in detected]),
                    **_percentile_columns("f_score", [m.f_score for m in detected]),
                })
                if s.is_null:
                    low, high = shared_reference_envelope(alpha, self.config.replicates, len(metrics))
                    fp_rows.append({
                        **group, "n_datasets": len(metrics),
                        "fp_first_week_low": low / len(metrics), "fp_first_week_high": high / len(metrics),
                        "fp_first_week": float(np.mean([t.pvalues[method][0] < alpha for t in traces])),
                        "fp_any_week": len(detected) / len(metrics),
                    })
        log_experiment_step("experiment_complete", {"scenarios": len(self.config.scenarios),
                                                    "rows": len(detection_rows)})
        return ExperimentResult(
            weekly=pd.DataFrame(weekly_rows),
            summary=pd.DataFrame(summary_rows),
            detections=pd.DataFrame(detection_rows),
            false_positive=pd.DataFrame(fp_rows),
        )


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    return ExperimentRunner(config).run()
