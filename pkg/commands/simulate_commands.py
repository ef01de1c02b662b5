import json
import os

import click
from pydantic import ValidationError

from config import DESK_DEFAULTS, FULL_DEFAULTS
from exceptions import IngestError, ScanStatisticError
from models import ExperimentConfig, RunConfig, Scenario, StatisticKind
from services.export_service import ExportService
from services.file_processor import FileProcessor
from services.inference import run_replication
from services.sim_harness import ExperimentRunner, run_experiment, scenario_grid
from commands.scan_commands import STATISTICS, build_zone_set, fail, zone_options
from utils.logger import log_experiment_step, log_replication

file_processor = FileProcessor()

SCALES = {"desk": DESK_DEFAULTS, "full": FULL_DEFAULTS}


def load_experiment(path: str, scale: str) -> ExperimentConfig:
    """
    Experiment file: ExperimentConfig fields as JSON. A `grid` object
    (mus, ps, qs, sizes plus shared Scenario fields) may replace `scenarios`.
    """
    if not os.path.exists(path):
        raise IngestError("experiment file not found", path)
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise IngestError(f"invalid JSON: {e}", path)
    if "grid" in data:
        data["scenarios"] = [s.model_dump() for s in scenario_grid(**data.pop("grid"))]
    return ExperimentConfig.model_validate({**SCALES[scale], **data})


def write_scenario_grid(runner: ExperimentRunner, scenario: Scenario, directory: str):
    counts, baselines, coords = runner.scan_inputs(scenario)
    file_processor.write_counts(counts, os.path.join(directory, "counts.csv"))
    file_processor.write_baselines(baselines, os.path.join(directory, "baselines.csv"))
    file_processor.write_coordinates(coords, counts.location_ids, os.path.join(directory, "coords.csv"))
    log_experiment_step("grid_written", {"scenario": scenario.label(), "directory": directory})


@click.command('simulate', short_help="Run a simulated outbreak detection experiment")
@click.option("--config", "config_path", required=True, type=click.Path(), help="Experiment JSON file")
@click.option("--scale", type=click.Choice(list(SCALES)), default="desk", show_default=True,
              help="Default outbreak and replicate counts when the file leaves them out")
@click.option("--seed", type=int, default=None, help="Override the master seed")
@click.option("--threads", type=int, default=None, help="Override the thread count")
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Directory for the CSV tables")
@click.option("--write-grid", is_flag=True,
              help="Also write each scenario's first dataset as scan-ready counts, baselines and coordinates")
def simulate_command(config_path, scale, seed, threads, out_dir, write_grid):
    '''
    Simulate outbreaks and record detection timeliness and spatial accuracy

    \b
    Writes weekly.csv, summary.csv, detections.csv and false_positive.csv
    plus experiment.json, the validated configuration. With --write-grid,
    grids/<scenario>/ holds counts.csv, baselines.csv and coords.csv of the
    first dataset at its last outbreak week.
    '''
    context = {"command": "simulate", "config": config_path}
    try:
        experiment = load_experiment(config_path, scale)
        overrides = {k: v for k, v in {"master_seed": seed, "threads": threads}.items() if v is not None}
        if overrides:
            experiment = ExperimentConfig.model_validate({**experiment.model_dump(), **overrides})
        log_experiment_step("start", {"scenarios": len(experiment.scenarios), "scale": scale})
        result = run_experiment(experiment)
        exporter = ExportService()
        exporter.write_experiment(result, out_dir)
        exporter.write_json(experiment.model_dump(mode="json", exclude={"threads"}),
                            os.path.join(out_dir, "experiment.json"))
        if write_grid:
            runner = ExperimentRunner(experiment)
            for s in experiment.scenarios:
                write_scenario_grid(runner, s, os.path.join(out_dir, "grids", s.label()))
        return 0
    except (ScanStatisticError, ValidationError, ValueError, OSError) as e:
        return fail(e, context)


@click.command('calibrate', short_help="Build a reusable history of null scan statistics")
@click.option("--baselines", "baselines_path", required=True, type=click.Path(),
              help="`location_id,time,p,mu` file")
@zone_options
@click.option("--statistic", type=click.Choice(STATISTICS), default=StatisticKind.EB_ZIP.value, show_default=True)
@click.option("--max-duration", type=int, default=None, help="Longest window (default: all periods)")
@click.option("--replicates", type=int, required=True, help="Null replicates R")
@click.option("--seed", type=int, required=True, help="Master seed")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(), help="Replicate set JSON")
def calibrate_command(baselines_path, geometry_path, zone_method, k_max, max_size, adjacency_k,
                      adjacency_path, statistic, max_duration, replicates, seed, threads, out_path):
    '''
    Simulate R null datasets from the baselines and store their scan statistics

    The output feeds `scan --pvalue empirical --history`.
    '''
    context = {"command": "calibrate", "baselines": baselines_path}
    try:
        config = RunConfig(
            statistic=statistic, zone_method=zone_method, k_max=k_max, max_size=max_size,
            adjacency_k=adjacency_k, adjacency_path=adjacency_path, max_duration=max_duration,
            replicates=replicates, seed=seed, threads=threads, baselines_path=baselines_path,
            geometry_path=geometry_path, out_path=out_path,
        )
        baselines = file_processor.ingest_baselines(baselines_path)
        dist, location_ids = file_processor.ingest_geometry(geometry_path, baselines.location_ids)
        zones = build_zone_set(config, dist, location_ids)
        D = config.max_duration or baselines.T
        if D > baselines.T:
            raise ValueError(f"max_duration {D} exceeds the {baselines.T} baseline periods")
        replicates_set = run_replication(baselines.as_of(0, D), zones, D, config.statistic,
                                         config.replicates, config.seed, config.threads)
        ExportService().write_replicates(replicates_set, out_path)
        log_replication("written", {"path": out_path, "replicates": replicates_set.size})
        return 0
    except (ScanStatisticError, ValidationError, ValueError, OSError) as e:
        return fail(e, context)
