"""
Experiment harness: configuration files, dataset ingestion, result files,
end-to-end experiments, the derivative-analysis checks and the CLI.
"""

__all__ = (
    "ConfigError",
    "ExperimentConfig",
    "IdxFormatError",
    "downsample",
    "gen_blobs",
    "idx_summary",
    "load_config",
    "load_idx",
    "read_dump",
    "read_pgm",
    "run_experiment",
    "verify_appendix",
    "write_dump",
    "write_pgm",
)

from .config import ConfigError, ExperimentConfig, load_config
from .data_loader import IdxFormatError, downsample, gen_blobs, idx_summary, load_idx
from .experiments import run_experiment
from .persistence import read_dump, read_pgm, write_dump, write_pgm
from .verification import verify_appendix
