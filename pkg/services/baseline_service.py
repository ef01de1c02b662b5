"""
Baseline estimation from historical, outbreak-free counts.

Each location gets a constant ZIP fit; the fitted (p, mu) is repeated over
the periods under surveillance.
"""

from typing import Dict, Tuple

import numpy as np

from config import EM_TOL, EM_MAX_ITER
from exceptions import DegenerateSampleError, NonConvergenceError
from services.grids import CountGrid, BaselineGrid
from services.zip_model import HistoricalSeries, ZipParams, zip_fit_em
from utils.logger import log_warning


class BaselineEstimator:
    def __init__(self, tol: float = EM_TOL, max_iter: int = EM_MAX_ITER):
        self.tol = tol
        self.max_iter = max_iter
        self.diagnostics: Dict[str, Dict] = {}

    def _fit_one(self, counts: np.ndarray) -> Tuple[ZipParams, int]:
        try:
            return zip_fit_em(HistoricalSeries(counts), self.tol, self.max_iter)
        except NonConvergenceError as e:
            log_warning("baseline EM did not converge, keeping last iterate", {"iterations": e.iterations})
            return e.params, e.iterations

    def fit(self, history: CountGrid, periods: int) -> BaselineGrid:
        """Fit every location; all-zero histories fall back to the pooled fit"""
        self.diagnostics = {}
        pooled = None
        p = np.empty(history.n)
        mu = np.empty(history.n)
        for i, location in enumerate(history.location_ids):
            try:
                params, iterations = self._fit_one(history.y[i])
                self.diagnostics[location] = {"iterations": iterations, "pooled": False}
            except DegenerateSampleError:
                if pooled is None:
                    pooled, _ = self._fit_one(history.y.ravel())
                log_warning("all-zero history, using pooled baseline", {"location": location})
                params = pooled
                self.diagnostics[location] = {"iterations": 0, "pooled": True}
            p[i], mu[i] = params.p, params.mu
        return BaselineGrid(np.repeat(p[:, None], periods, axis=1),
                            np.repeat(mu[:, None], periods, axis=1),
                            history.location_ids)


def fit_baselines(history: CountGrid, periods: int) -> BaselineGrid:
    return BaselineEstimator().fit(history, periods)
