import click
from pydantic import ValidationError

from exceptions import ScanStatisticError
from services.baseline_service import BaselineEstimator
from services.file_processor import FileProcessor
from commands.scan_commands import emit, fail

file_processor = FileProcessor()


@click.command('fit', short_help="Fit per-location ZIP baselines to historical counts")
@click.option("--history", "history_path", required=True, type=click.Path(),
              help="Outbreak-free `location_id,time,count` file")
@click.option("--periods", type=int, required=True, help="Periods under surveillance to fill")
@click.option("--out", "out_path", type=click.Path(), default=None, help="Baselines CSV (default: stdout)")
def fit_command(history_path, periods, out_path):
    '''
    Estimate (p, mu) for each location by EM and repeat it over the surveillance periods
    '''
    context = {"command": "fit", "history": history_path}
    try:
        if periods < 1:
            raise ValueError("periods must be positive")
        history = file_processor.ingest_counts(history_path)
        baselines = BaselineEstimator().fit(history, periods)
        if out_path:
            file_processor.write_baselines(baselines, out_path)
        else:
            emit(file_processor.baselines_table(baselines).to_csv(index=False, float_format="%.17g"), None)
        return 0
    except (ScanStatisticError, ValidationError, ValueError, OSError) as e:
        return fail(e, context)
