import os
from typing import Any, Tuple

import numpy as np

# Sub-stream tags keep replicate, dataset and placement draws apart
STREAM_REPLICATE = 1
STREAM_DATASET = 2
STREAM_GEOMETRY = 3
STREAM_OUTBREAK_ZONE = 4
STREAM_NULL_DATASET = 5


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (master_seed, *keys), whatever thread draws from it"""
    if master_seed is None:
        raise ValueError("A master seed is required for any stochastic path")
    sequence = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(sequence)


def convert_numpy_types(obj: Any) -> Any:
    """Convert numpy types to Python native types for JSON serialization"""
    if isinstance(obj, np.integer):
        return int(obj)
    elif isinstance(obj, np.floating):
        return float(obj)
    elif isinstance(obj, np.bool_):
        return bool(obj)
    elif isinstance(obj, np.ndarray):
        return obj.tolist()
    elif isinstance(obj, dict):
        return {key: convert_numpy_types(value) for key, value in obj.items()}
    elif isinstance(obj, (list, tuple)):
        return [convert_numpy_types(item) for item in obj]
    return obj


def ensure_directory_exists(path: str):
    """Ensure the parent directory of an output path exists"""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def chunk_bounds(total: int, parts: int) -> Tuple[Tuple[int, int], ...]:
    """Split range(total) into at most `parts` contiguous (start, stop) blocks"""
    parts = max(1, min(int(parts), total)) if total else 1
    edges = np.linspace(0, total, parts + 1).round().astype(int)
    return tuple((int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a)
