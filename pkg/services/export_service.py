"""
Export service for scan reports, replicate histories and experiment tables

Reports are one JSON document per run (sorted keys, 2-space indent) so two
identical runs diff clean; tables are plain CSV for plotting elsewhere.
"""

import json
import os
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from models import PValueReport, ReplicateSet, RunConfig, ScanResult, WindowScore
from services.sim_harness import ExperimentResult
from services.zone_builder import ZoneSet
from utils.helpers import convert_numpy_types, ensure_directory_exists

EXPERIMENT_TABLES = ("weekly", "summary", "detections", "false_positive")


class ExportService:
    """Builds and writes every machine-readable output of the CLI"""

    def __init__(self, location_ids: Optional[Sequence[str]] = None):
        self.location_ids = list(location_ids) if location_ids is not None else None

    def _external(self, members: Sequence[int]) -> List[str]:
        if self.location_ids is None:
            return [str(m) for m in members]
        return [self.location_ids[m] for m in members]

    def cluster_entry(self, score: WindowScore, pvalue: Optional[PValueReport] = None) -> Dict[str, Any]:
        window = score.window
        entry = {
            "zone_index": window.zone_index,
            "members": list(window.members),
            "locations": self._external(window.members),
            "duration": window.duration,
            "q_hat": score.q_hat,
            "llr": score.llr,
            "em_iterations": score.em_iterations,
            "converged": score.converged,
        }
        if pvalue is not None:
            entry["p_value"] = pvalue.p_value
        return entry

    def scan_report(self, result: ScanResult, pvalues: Sequence[PValueReport], config: RunConfig,
                    elapsed: Optional[float] = None) -> Dict[str, Any]:
        """λ*, MLC, secondary clusters with P-values, diagnostics and the config echo"""
        primary = pvalues[0]
        report = {
            "statistic_kind": result.kind.value,
            "lambda_star": result.statistic,
            "mlc": self.cluster_entry(result.mlc, primary),
            "clusters": [self.cluster_entry(score, pv) for score, pv in zip(result.ranked, pvalues)],
            "pvalue": primary.model_dump(mode="json"),
            "alpha": config.alpha,
            "null_rejected": primary.p_value < config.alpha,
            "n_zones": result.n_zones,
            "n_windows": result.n_windows,
            "em": {"nonconverged_windows": result.nonconverged_windows},
            "seed": config.seed,
            "config": config.echo(),
            # internal index i is external id locations[i]
            "locations": list(self.location_ids or []),
        }
        if elapsed is not None:
            report["elapsed_seconds"] = elapsed
        return convert_numpy_types(report)

    def to_json(self, document: Dict[str, Any]) -> str:
        return json.dumps(convert_numpy_types(document), sort_keys=True, indent=2) + "\n"

    def write_json(self, document: Dict[str, Any], path: str) -> str:
        ensure_directory_exists(path)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.to_json(document))
        return path

    def write_replicates(self, replicates: ReplicateSet, path: str) -> str:
        """Reusable as empirical history for `scan --pvalue empirical`"""
        return self.write_json(replicates.model_dump(mode="json"), path)

    def zones_table(self, zones: ZoneSet) -> pd.DataFrame:
        return pd.DataFrame({
            "zone_index": range(len(zones)),
            "size": [len(zone) for zone in zones],
            "members": [";".join(self._external(zone.members)) for zone in zones],
        })

    def write_table(self, frame: pd.DataFrame, path: str) -> str:
        ensure_directory_exists(path)
        frame.to_csv(path, index=False, float_format="%.10g")
        return path

    def write_experiment(self, result: ExperimentResult, directory: str) -> List[str]:
        """One CSV per table inside `directory`"""
        os.makedirs(directory, exist_ok=True)
        return [self.write_table(getattr(result, name), os.path.join(directory, f"{name}.csv"))
                for name in EXPERIMENT_TABLES]
