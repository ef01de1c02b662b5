"""
Input files for the scan CLI

Counts and baselines are long-format CSV, one row per (location, time) cell.
Time is counted backwards: time 1 is the most recent period and becomes
column 0 of the grid. Location order is the order of first appearance in the
counts file; every other file is reordered to it.
"""

import io
import json
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from exceptions import IngestError, LocationMismatchError, ParameterDomainError
from models import ReplicateSet
from services.grids import BaselineGrid, CountGrid
from services.zone_builder import AdjacencyRelation, DistanceMatrix
from utils.helpers import ensure_directory_exists
from utils.logger import log_ingest

COUNT_COLUMNS = ["location_id", "time", "count"]
BASELINE_COLUMNS = ["location_id", "time", "p", "mu"]
COORDINATE_COLUMNS = ["location_id", "x", "y"]
ADJACENCY_COLUMNS = ["location_id", "neighbor_id"]


def _line(row_index: int) -> int:
    # header is line 1
    return int(row_index) + 2


class FileProcessor:
    def __init__(self):
        self.supported_formats = ['.csv', '.txt', '.json']
        self.encodings = ['utf-8', 'latin-1']

    def read_table(self, path: str, kind: str, lower_header: bool = True) -> pd.DataFrame:
        """Read a delimited file as strings, keeping row positions aligned with file lines"""
        if not os.path.exists(path):
            raise IngestError(f"{kind} file not found", path)
        file_ext = os.path.splitext(path)[1].lower()
        if file_ext not in self.supported_formats:
            raise IngestError(f"Unsupported file format: {file_ext}", path)

        with open(path, 'rb') as f:
            content = f.read()
        for encoding in self.encodings:
            try:
                text_content = content.decode(encoding)
                break
            except UnicodeDecodeError:
                continue
        else:
            raise IngestError("Could not decode file with any supported encoding", path)

        try:
            df = pd.read_csv(io.StringIO(text_content), dtype=str, keep_default_na=False,
                             skip_blank_lines=False, skipinitialspace=True)
        except pd.errors.EmptyDataError:
            raise IngestError(f"empty {kind} file", path)
        except pd.errors.ParserError as e:
            raise IngestError(f"malformed row: {e}", path)

        df.columns = df.columns.str.strip()
        if lower_header:
            df.columns = df.columns.str.lower()
        return df

    def validate_structure(self, df: pd.DataFrame, required_columns: Sequence[str]) -> Dict[str, Any]:
        """Validate header and cells, returning the first offending line if any"""
        validation = {
            'valid': True,
            'errors': [],
            'row_count': len(df),
            'columns': list(df.columns),
            'first_bad_line': None,
        }
        missing_columns = [col for col in required_columns if col not in df.columns]
        if missing_columns:
            validation['valid'] = False
            validation['errors'].append(f"Missing required columns: {missing_columns}")
            return validation

        cells = df[list(required_columns)]
        bad = cells.isna().any(axis=1) | (cells.apply(lambda col: col.str.strip()) == "").any(axis=1)
        if bad.any():
            validation['valid'] = False
            validation['first_bad_line'] = _line(int(np.flatnonzero(bad.to_numpy())[0]))
            validation['errors'].append("malformed row: missing field")
        return validation

    def _load(self, path: str, kind: str, required_columns: Sequence[str]) -> pd.DataFrame:
        df = self.read_table(path, kind)
        validation = self.validate_structure(df, required_columns)
        if not validation['valid']:
            raise IngestError("; ".join(validation['errors']), path, validation['first_bad_line'])
        df = df[list(required_columns)].apply(lambda col: col.str.strip())
        if df.empty:
            raise IngestError(f"no rows in {kind} file", path)
        return df.reset_index(drop=True)

    def _numeric(self, df: pd.DataFrame, column: str, path: str, integer: bool) -> pd.Series:
        values = pd.to_numeric(df[column], errors='coerce')
        bad = values.isna() | ~np.isfinite(values.to_numpy(dtype=float))
        if integer:
            bad |= values.fillna(0) != values.fillna(0).round()
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise IngestError(f"malformed row: {column} '{df[column].iloc[row]}' is not "
                              f"{'an integer' if integer else 'a number'}", path, _line(row))
        if integer:
            return values.astype(np.int64)
        # to_numeric can be an ulp off; astype rounds correctly
        return df[column].astype(float)

    def _cells(self, df: pd.DataFrame, path: str) -> Tuple[pd.Series, List[str], int]:
        """Validated time column, location order and T for a long-format cell file"""
        times = self._numeric(df, "time", path, integer=True)
        if (times < 1).any():
            row = int(np.flatnonzero((times < 1).to_numpy())[0])
            raise IngestError("malformed row: time must be a positive integer (1 = most recent)", path, _line(row))
        duplicated = pd.DataFrame({"location_id": df["location_id"], "time": times}).duplicated(keep='first')
        if duplicated.any():
            row = int(np.flatnonzero(duplicated.to_numpy())[0])
            raise IngestError(f"duplicate cell ({df['location_id'].iloc[row]}, {times.iloc[row]})",
                              path, _line(row))
        locations = list(pd.unique(df["location_id"]))
        T = int(times.max())
        expected = len(locations) * T
        if len(df) != expected:
            present = set(zip(df["location_id"], times))
            for location in locations:
                for t in range(1, T + 1):
                    if (location, t) not in present:
                        raise IngestError(f"missing cell ({location}, {t})", path)
        return times, locations, T

    def _pivot(self, df: pd.DataFrame, times: pd.Series, column, locations: List[str], T: int) -> np.ndarray:
        frame = pd.DataFrame({"location_id": df["location_id"], "time": times, "value": column})
        table = frame.pivot(index="location_id", columns="time", values="value")
        return table.reindex(index=locations, columns=range(1, T + 1)).to_numpy()

    # ---------- counts and baselines ----------

    def ingest_counts(self, path: str) -> CountGrid:
        df = self._load(path, "counts", COUNT_COLUMNS)
        counts = self._numeric(df, "count", path, integer=True)
        if (counts < 0).any():
            row = int(np.flatnonzero((counts < 0).to_numpy())[0])
            raise IngestError("negative count", path, _line(row))
        times, locations, T = self._cells(df, path)
        grid = CountGrid(self._pivot(df, times, counts, locations, T).astype(np.int64), locations)
        log_ingest(path, "counts", len(df))
        return grid

    def ingest_baselines(self, path: str, counts: Optional[CountGrid] = None) -> BaselineGrid:
        """Baselines in the counts' location order, restricted to the counts' periods"""
        df = self._load(path, "baselines", BASELINE_COLUMNS)
        p = self._numeric(df, "p", path, integer=False)
        mu = self._numeric(df, "mu", path, integer=False)
        bad_p = (p < 0) | (p >= 1)
        if bad_p.any():
            row = int(np.flatnonzero(bad_p.to_numpy())[0])
            raise ParameterDomainError(f"{path}:{_line(row)}: p = {p.iloc[row]} must lie in [0, 1)")
        bad_mu = mu <= 0
        if bad_mu.any():
            row = int(np.flatnonzero(bad_mu.to_numpy())[0])
            raise ParameterDomainError(f"{path}:{_line(row)}: mu = {mu.iloc[row]} must be positive")
        times, locations, T = self._cells(df, path)
        if counts is not None:
            self.check_locations(locations, counts.location_ids, path)
            if T < counts.T:
                raise IngestError(f"baselines cover {T} periods but counts cover {counts.T}", path)
            locations, T = counts.location_ids, counts.T
            keep = times <= T
            df, times, p, mu = df[keep], times[keep], p[keep], mu[keep]
        grid = BaselineGrid(self._pivot(df, times, p, locations, T).astype(float),
                            self._pivot(df, times, mu, locations, T).astype(float), locations)
        log_ingest(path, "baselines", len(df))
        return grid

    def check_locations(self, found: Sequence[str], expected: Sequence[str], path: str):
        missing = [loc for loc in expected if loc not in set(found)]
        extra = [loc for loc in found if loc not in set(expected)]
        if missing or extra:
            raise LocationMismatchError(
                f"location set differs from counts (missing: {missing[:5]}, unexpected: {extra[:5]})", path)

    # ---------- geometry ----------

    def ingest_geometry(self, path: str, location_ids: Optional[Sequence[str]] = None
                        ) -> Tuple[DistanceMatrix, List[str]]:
        """
        Either `location_id,x,y` coordinates (Euclidean distances) or a labeled
        n x n matrix: header `location_id,<id_1>,...,<id_n>`, one row per location.
        """
        df = self.read_table(path, "geometry", lower_header=False)
        if all(col in df.columns.str.lower() for col in COORDINATE_COLUMNS):
            dist, ids = self._coordinates(path)
        else:
            dist, ids = self._matrix(df, path)
        if location_ids is not None:
            self.check_locations(ids, location_ids, path)
            order = [ids.index(loc) for loc in location_ids]
            dist = DistanceMatrix(dist.d[np.ix_(order, order)])
            ids = list(location_ids)
        log_ingest(path, "geometry", dist.n)
        return dist, ids

    def _coordinates(self, path: str) -> Tuple[DistanceMatrix, List[str]]:
        df = self._load(path, "geometry", COORDINATE_COLUMNS)
        if df["location_id"].duplicated().any():
            row = int(np.flatnonzero(df["location_id"].duplicated().to_numpy())[0])
            raise IngestError(f"duplicate location {df['location_id'].iloc[row]}", path, _line(row))
        coords = np.column_stack([self._numeric(df, "x", path, integer=False),
                                  self._numeric(df, "y", path, integer=False)])
        try:
            return DistanceMatrix.from_coordinates(coords), list(df["location_id"])
        except ValueError as e:
            raise IngestError(str(e), path)

    def _matrix(self, df: pd.DataFrame, path: str) -> Tuple[DistanceMatrix, List[str]]:
        if "location_id" not in df.columns:
            raise IngestError("geometry needs `location_id,x,y` or a labeled distance matrix", path)
        df = df.apply(lambda col: col.str.strip())
        ids = list(df["location_id"])
        columns = [c for c in df.columns if c != "location_id"]
        if sorted(columns) != sorted(ids) or len(ids) != len(set(ids)):
            raise IngestError("distance matrix header must list the same locations as its rows", path)
        values = np.column_stack([self._numeric(df, c, path, integer=False) for c in ids])
        try:
            return DistanceMatrix(values), ids
        except ValueError as e:
            raise IngestError(str(e), path)

    def ingest_adjacency(self, path: str, location_ids: Sequence[str]) -> AdjacencyRelation:
        """Undirected edge list `location_id,neighbor_id`"""
        df = self._load(path, "adjacency", ADJACENCY_COLUMNS)
        index = {loc: i for i, loc in enumerate(location_ids)}
        edges = []
        for row, (a, b) in enumerate(zip(df["location_id"], df["neighbor_id"])):
            if a not in index or b not in index:
                raise LocationMismatchError(f"edge ({a}, {b}) names an unknown location", path, _line(row))
            if a == b:
                raise IngestError(f"self-loop at {a}", path, _line(row))
            edges.append((index[a], index[b]))
        log_ingest(path, "adjacency", len(df))
        return AdjacencyRelation.from_edges(len(location_ids), edges)

    # ---------- empirical history ----------

    def ingest_history(self, path: str, window: Optional[int] = None) -> List[float]:
        """ReplicateSet JSON or a CSV with a `statistic` column; `window` keeps the newest values"""
        if not os.path.exists(path):
            raise IngestError("history file not found", path)
        if path.lower().endswith(".json"):
            try:
                with open(path, 'r', encoding='utf-8') as f:
                    values = ReplicateSet.model_validate(json.load(f)).values
            except (json.JSONDecodeError, ValidationError) as e:
                raise IngestError(f"invalid replicate set: {e}", path)
        else:
            df = self._load(path, "history", ["statistic"])
            values = self._numeric(df, "statistic", path, integer=False).tolist()
            if any(v < 0 for v in values):
                raise IngestError("scan statistics are non-negative", path)
        if window is not None:
            values = values[-window:]
        log_ingest(path, "history", len(values))
        return [float(v) for v in values]

    # ---------- writers ----------

    def counts_table(self, grid: CountGrid) -> pd.DataFrame:
        return pd.DataFrame({
            "location_id": np.repeat(grid.location_ids, grid.T),
            "time": np.tile(np.arange(1, grid.T + 1), grid.n),
            "count": grid.y.ravel(),
        })

    def write_counts(self, grid: CountGrid, path: str) -> str:
        ensure_directory_exists(path)
        self.counts_table(grid).to_csv(path, index=False)
        return path

    def baselines_table(self, grid: BaselineGrid) -> pd.DataFrame:
        return pd.DataFrame({
            "location_id": np.repeat(grid.location_ids, grid.T),
            "time": np.tile(np.arange(1, grid.T + 1), grid.n),
            "p": grid.p.ravel(),
            "mu": grid.mu.ravel(),
        })

    def write_baselines(self, grid: BaselineGrid, path: str) -> str:
        ensure_directory_exists(path)
        self.baselines_table(grid).to_csv(path, index=False, float_format="%.17g")
        return path

    def write_coordinates(self, coords: np.ndarray, location_ids: Sequence[str], path: str) -> str:
        coords = np.asarray(coords, dtype=float)
        ensure_directory_exists(path)
        frame = pd.DataFrame({"location_id": list(location_ids), "x": coords[:, 0], "y": coords[:, 1]})
        frame.to_csv(path, index=False, float_format="%.17g")
        return path


def ingest_counts(path: str) -> CountGrid:
    return FileProcessor().ingest_counts(path)


def ingest_baselines(path: str, counts: Optional[CountGrid] = None) -> BaselineGrid:
    return FileProcessor().ingest_baselines(path, counts)


def ingest_geometry(path: str, location_ids: Optional[Sequence[str]] = None) -> Tuple[DistanceMatrix, List[str]]:
    return FileProcessor().ingest_geometry(path, location_ids)
