"""
hgd-lab config shapes.
======================

TypedDict descriptions of the YAML documents the CLI consumes.

# Exposed Components
-----------------

- `LabABC`: Base of every config shape.
- `ExperimentConfig`: Top-level experiment config.
- `PathsConfig`: Data and artifact roots.
- `EnsembleMember`: One member of an ensemble evaluation.
"""

from hgdlab.abc.base import LabABC
from hgdlab.abc.experiment import EnsembleMember
from hgdlab.abc.experiment import ExperimentConfig
from hgdlab.abc.experiment import PathsConfig
from hgdlab.abc.experiment import StageName

__all__ = ["EnsembleMember", "ExperimentConfig", "LabABC", "PathsConfig", "StageName"]
