"""
hgd-lab core.
=============

🔩 Orchestration components behind the ``hgdlab`` command.

# Overview
--------

Config checking against the per-stage schemas, the run environment (roots,
device, seeding), the stage runners and figure regeneration.

# Exposed Components
-----------------

- `LabCoreObject`: Base class bound to a `LabClient`.
- `ConfigChecker`: YAML loading, ``--key value`` overrides and schema validation.
- `ValidationIssue`: One schema violation.
- `LabEnvironment`: Data/artifact roots, device and seed of a run.
- `StageRunner`: Executes the nine pipeline stages.
- `StageResult`: Artifact, manifest and summary of one stage run.
- `FigureReproducer`: Redraws analysis figures from stored artifacts.
"""

from hgdlab.core.base import LabCoreObject
from hgdlab.core.config import ConfigChecker
from hgdlab.core.config import STAGE_SCHEMAS
from hgdlab.core.config import ValidationIssue
from hgdlab.core.environment import LabEnvironment
from hgdlab.core.environment import seed_everything
from hgdlab.core.figures import FigureReproducer
from hgdlab.core.runner import StageResult
from hgdlab.core.runner import StageRunner

__all__ = [
    "ConfigChecker",
    "FigureReproducer",
    "LabCoreObject",
    "LabEnvironment",
    "STAGE_SCHEMAS",
    "StageResult",
    "StageRunner",
    "ValidationIssue",
    "seed_everything",
]
