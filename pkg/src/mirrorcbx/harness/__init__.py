"""Configuration loading, experiment orchestration and the command line."""
from .config import ExperimentConfig, config_schema, load_config, parse_config, set_path
from .runner import CSV_COLUMNS, execute_run, run_experiment, sweep, traces_to_csv, write_outputs

__all__ = ["ExperimentConfig", "config_schema", "load_config", "parse_config", "set_path",
           "CSV_COLUMNS", "execute_run", "run_experiment", "sweep", "traces_to_csv", "write_outputs"]
