import logging
import json
import os
from config import LOG_LEVEL, LOG_FILE

handlers = [logging.StreamHandler()]
if LOG_FILE:
    os.makedirs(os.path.dirname(os.path.abspath(LOG_FILE)), exist_ok=True)
    handlers.append(logging.FileHandler(LOG_FILE))

# Configure logging (stream handler writes to stderr, stdout stays clean)
logging.basicConfig(
    level=getattr(logging, str(LOG_LEVEL).upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=handlers
)

logger = logging.getLogger('ebzip')


def _dump(data: dict) -> str:
    return json.dumps(data, sort_keys=True, default=str)


def log_ingest(path: str, kind: str, rows: int):
    """Log a parsed input file"""
    logger.info(f"File ingested: {path} ({kind}) - {rows} rows")


def log_scan_step(step: str, data: dict):
    """Log scan engine steps"""
    logger.info(f"Scan step: {step} - {_dump(data)}")


def log_replication(stage: str, data: dict):
    """Log Monte Carlo replication progress"""
    logger.info(f"Replication: {stage} - {_dump(data)}")


def log_experiment_step(step: str, data: dict):
    """Log simulation harness steps"""
    logger.info(f"Experiment step: {step} - {_dump(data)}")


def log_warning(message: str, context: dict = None):
    context_str = _dump(context) if context else ""
    logger.warning(f"{message} - Context: {context_str}")


def log_error(error: str, context: dict = None):
    """Log errors"""
    context_str = _dump(context) if context else ""
    logger.error(f"Error: {error} - Context: {context_str}")
