"""Data ingestion, configuration, experiment orchestration and the CLI."""

from .config import ConfigError, ExperimentConfig, load_config
from .data import DataError, load_csv, synth_dataset
from .experiment import recompute_verdicts, run, spectral

__all__ = ["ConfigError", "DataError", "ExperimentConfig", "load_config", "load_csv",
           "recompute_verdicts", "run", "spectral", "synth_dataset"]
