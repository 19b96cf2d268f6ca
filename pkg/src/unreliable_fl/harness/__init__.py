from .config import Cell, ConfigError, ExperimentConfig, config_id, fingerprint, load_config
from .runner import CSV_COLUMNS, read_store, run_experiment, run_replicate
from .summary import emit, load_table, render, summarize

__all__ = [
    "CSV_COLUMNS",
    "Cell",
    "ConfigError",
    "ExperimentConfig",
    "config_id",
    "emit",
    "fingerprint",
    "load_config",
    "load_table",
    "read_store",
    "render",
    "run_experiment",
    "run_replicate",
    "summarize",
]
