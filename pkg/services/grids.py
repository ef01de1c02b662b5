"""
Count and baseline grids

Column 0 of every grid is the most recent period (t = 1); time runs backwards
with the column index.
"""

from typing import List, Optional, Sequence

import numpy as np

from exceptions import DomainError
from services.zip_model import check_zip_arrays


def _default_ids(n: int) -> List[str]:
    return [str(i) for i in range(n)]


class CountGrid:
    def __init__(self, y, location_ids: Optional[Sequence[str]] = None):
        counts = np.asarray(y)
        if counts.ndim != 2 or counts.shape[1] < 1 or counts.shape[0] < 1:
            raise DomainError("a count grid needs at least one location and one period")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise DomainError("counts must be non-negative integers")
        self.y = counts.astype(np.int64)
        self.location_ids = list(location_ids) if location_ids is not None else _default_ids(counts.shape[0])
        if len(self.location_ids) != self.n:
            raise DomainError("location id count does not match the grid")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    def as_of(self, lag: int, periods: int) -> "CountGrid":
        """Grid as it looked `lag` periods ago, keeping `periods` periods"""
        if lag < 0 or periods < 1 or lag + periods > self.T:
            raise DomainError(f"cannot take {periods} periods at lag {lag} from {self.T}")
        return CountGrid(self.y[:, lag:lag + periods], self.location_ids)

    def __eq__(self, other) -> bool:
        return (isinstance(other, CountGrid) and self.location_ids == other.location_ids
                and np.array_equal(self.y, other.y))


class BaselineGrid:
    def __init__(self, p, mu, location_ids: Optional[Sequence[str]] = None):
        p_arr, mu_arr = check_zip_arrays(p, mu)
        if p_arr.ndim != 2 or p_arr.shape != mu_arr.shape:
            raise DomainError("p and mu must be matching n x T arrays")
        self.p = p_arr
        self.mu = mu_arr
        self.location_ids = list(location_ids) if location_ids is not None else _default_ids(p_arr.shape[0])
        if len(self.location_ids) != self.n:
            raise DomainError("location id count does not match the grid")

    @classmethod
    def constant(cls, n: int, T: int, p: float, mu: float,
                 location_ids: Optional[Sequence[str]] = None) -> "BaselineGrid":
        return cls(np.full((n, T), float(p)), np.full((n, T), float(mu)), location_ids)

    @property
    def n(self) -> int:
        return self.p.shape[0]

    @property
    def T(self) -> int:
        return self.p.shape[1]

    def as_of(self, lag: int, periods: int) -> "BaselineGrid":
        if lag < 0 or periods < 1 or lag + periods > self.T:
            raise DomainError(f"cannot take {periods} periods at lag {lag} from {self.T}")
        return BaselineGrid(self.p[:, lag:lag + periods], self.mu[:, lag:lag + periods], self.location_ids)

    def check_aligned(self, counts: CountGrid):
        if (self.n, self.T) != (counts.n, counts.T):
            raise DomainError(f"baselines are {self.n}x{self.T} but counts are {counts.n}x{counts.T}")
