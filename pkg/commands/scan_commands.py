import time
from typing import Dict, List, Optional, Sequence

import click
from pydantic import ValidationError

from exceptions import ScanStatisticError
from models import PValueMethod, RunConfig, StatisticKind, ZoneConfig, ZoneMethod
from services.export_service import ExportService
from services.file_processor import FileProcessor
from services.inference import PValueCalculator, cluster_pvalues, run_replication
from services.scan_engine import ScanEngine
from services.zone_builder import DistanceMatrix, ZoneSet, adjacency_from_knn, build_zones
from utils.helpers import ensure_directory_exists
from utils.logger import log_error, log_scan_step

file_processor = FileProcessor()

STATISTICS = [kind.value for kind in StatisticKind]
ZONE_METHODS = [method.value for method in ZoneMethod]
PVALUE_METHODS = [method.value for method in PValueMethod]


def fail(error: Exception, context: Dict) -> int:
    """One line on stderr, full context in the log, exit code 1"""
    click.echo(f"Error: {error}", err=True)
    log_error(str(error), context)
    return 1


def emit(text: str, out: Optional[str]):
    if out:
        ensure_directory_exists(out)
        with open(out, 'w', encoding='utf-8') as f:
            f.write(text)
    else:
        click.echo(text, nl=False)


def zone_options(f):
    """Zone family flags shared by scan, zones and calibrate"""
    decorators = [
        click.option("--geometry", "geometry_path", required=True, type=click.Path(),
                     help="`location_id,x,y` coordinates or a labeled distance matrix"),
        click.option("--zones", "zone_method", type=click.Choice(ZONE_METHODS), default=ZoneMethod.KNN.value,
                     show_default=True, help="Zone family"),
        click.option("--kmax", "k_max", type=int, default=None,
                     help="Largest neighbor count for k-NN zones (default: half of all locations)"),
        click.option("--max-size", type=int, default=None, help="Largest flexible zone"),
        click.option("--adjacency-k", type=int, default=None,
                     help="Flexible zones: symmetrized k-NN adjacency"),
        click.option("--adjacency", "adjacency_path", type=click.Path(), default=None,
                     help="Flexible zones: `location_id,neighbor_id` edge list"),
    ]
    for decorator in reversed(decorators):
        f = decorator(f)
    return f


def build_zone_set(config: ZoneConfig, dist: DistanceMatrix, location_ids: Sequence[str]) -> ZoneSet:
    adj = None
    if config.zone_method == ZoneMethod.FLEX:
        if config.adjacency_path:
            adj = file_processor.ingest_adjacency(config.adjacency_path, location_ids)
        else:
            adj = adjacency_from_knn(dist, config.adjacency_k)
    zones = build_zones(dist, config.zone_method.value, k_max=config.k_max,
                        max_size=config.max_size, adj=adj)
    log_scan_step("zones_built", {"method": config.zone_method.value, "zones": len(zones)})
    return zones


def reference_values(config: RunConfig, baselines, zones: ZoneSet, max_duration: int) -> List[float]:
    """History for empirical P-values, otherwise fresh null replicates"""
    if config.pvalue == PValueMethod.EMPIRICAL:
        return file_processor.ingest_history(config.history_path, config.history_window)
    replicates = run_replication(baselines, zones, max_duration, config.statistic,
                                 config.replicates, config.seed, config.threads)
    return replicates.values


@click.command('scan', short_help="Scan observed counts for the most likely space-time cluster")
@click.option("--counts", "counts_path", required=True, type=click.Path(),
              help="`location_id,time,count` file, time 1 = most recent")
@click.option("--baselines", "baselines_path", required=True, type=click.Path(),
              help="`location_id,time,p,mu` file")
@zone_options
@click.option("--statistic", type=click.Choice(STATISTICS), default=StatisticKind.EB_ZIP.value, show_default=True)
@click.option("--max-duration", type=int, default=None, help="Longest window (default: all periods)")
@click.option("--pvalue", type=click.Choice(PVALUE_METHODS), default=PValueMethod.MONTE_CARLO.value,
              show_default=True)
@click.option("--replicates", type=int, default=999, show_default=True, help="Null replicates R")
@click.option("--history", "history_path", type=click.Path(), default=None,
              help="Past statistic values for empirical P-values (JSON replicate set or CSV)")
@click.option("--history-window", type=int, default=None, help="Keep only the newest N history values")
@click.option("--alpha", type=float, default=0.05, show_default=True, help="Exit code 2 when P < alpha")
@click.option("--top-k", type=int, default=10, show_default=True, help="Ranked clusters in the report")
@click.option("--seed", type=int, default=None, help="Master seed, required for replicate-based P-values")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None, help="Report path (default: stdout)")
@click.option("--no-timing", is_flag=True, help="Leave wall-clock time out of the report")
def scan_command(counts_path, baselines_path, geometry_path, zone_method, k_max, max_size, adjacency_k,
                 adjacency_path, statistic, max_duration, pvalue, replicates, history_path, history_window,
                 alpha, top_k, seed, threads, out_path, no_timing):
    '''
    Scan counts for the most likely cluster and test it

    \b
    Example usage:
    \tebzip scan --counts counts.csv --baselines baselines.csv --geometry coords.csv --seed 1
    \tebzip scan ... --pvalue empirical --history calibrate.json --history-window 10

    Exit code 0 when the null is kept, 2 when P < alpha, 1 on error.
    '''
    context = {"command": "scan", "counts": counts_path}
    try:
        started = time.perf_counter()
        config = RunConfig(
            statistic=statistic, zone_method=zone_method, k_max=k_max, max_size=max_size,
            adjacency_k=adjacency_k, adjacency_path=adjacency_path, max_duration=max_duration,
            pvalue=pvalue, replicates=replicates, history_path=history_path,
            history_window=history_window, alpha=alpha, top_k=top_k, seed=seed, threads=threads,
            counts_path=counts_path, baselines_path=baselines_path, geometry_path=geometry_path,
            out_path=out_path,
        )
        counts = file_processor.ingest_counts(counts_path)
        baselines = file_processor.ingest_baselines(baselines_path, counts)
        dist, location_ids = file_processor.ingest_geometry(geometry_path, counts.location_ids)
        zones = build_zone_set(config, dist, location_ids)
        D = config.max_duration or counts.T

        engine = ScanEngine(zones, D, config.statistic, top_k=config.top_k, threads=config.threads)
        result = engine.scan(counts, baselines)
        log_scan_step("observed", {"lambda_star": result.statistic, "windows": result.n_windows,
                                   "nonconverged": result.nonconverged_windows})

        calculator = PValueCalculator(config.pvalue, reference_values(config, baselines, zones, D))
        pvalues = cluster_pvalues(result, calculator)

        elapsed = time.perf_counter() - started
        log_scan_step("done", {"p_value": pvalues[0].p_value, "elapsed_seconds": elapsed})
        exporter = ExportService(counts.location_ids)
        report = exporter.scan_report(result, pvalues, config, None if no_timing else elapsed)
        emit(exporter.to_json(report), out_path)
        return 2 if pvalues[0].p_value < config.alpha else 0
    except (ScanStatisticError, ValidationError, ValueError, OSError) as e:
        return fail(e, context)


@click.command('zones', short_help="Enumerate candidate zones")
@zone_options
@click.option("--out", "out_path", type=click.Path(), default=None, help="CSV path (default: stdout)")
def zones_command(geometry_path, zone_method, k_max, max_size, adjacency_k, adjacency_path, out_path):
    '''
    List the candidate zones in canonical order (size, then members)
    '''
    context = {"command": "zones", "geometry": geometry_path}
    try:
        config = ZoneConfig(zone_method=zone_method, k_max=k_max, max_size=max_size,
                            adjacency_k=adjacency_k, adjacency_path=adjacency_path,
                            geometry_path=geometry_path)
        dist, location_ids = file_processor.ingest_geometry(geometry_path)
        zones = build_zone_set(config, dist, location_ids)
        table = ExportService(location_ids).zones_table(zones)
        emit(table.to_csv(index=False), out_path)
        return 0
    except (ScanStatisticError, ValidationError, ValueError, OSError) as e:
        return fail(e, context)
