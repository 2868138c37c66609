"""Experiment configuration, presets, persistence and plot scripts."""

from .config import ConfigError, ExperimentConfig, parse_config
from .experiments import ExperimentResult, run_experiment, summarize
from .plots import emit_plot
from .records import RecordWriter, SnapshotError, read_records, restore, snapshot, state_hash
