"""
hgd-lab.
========

A desk-scale laboratory for denoisers that defend image classifiers against
adversarial examples by matching high-level representations.

# Overview
--------

The package trains small classifiers, forges FGSM-family adversarial corpora,
trains pixel-guided and representation-guided denoisers, and evaluates them
under white-box and black-box attacks. Every stage is driven by a YAML config
and publishes content-addressed artifacts with a run manifest.

# Exposed Components
-----------------

- `LabClient`: Entry point that loads configs and runs stages.
- `StageResult`: Outcome of one stage run.
- `BaseLabError`: Root of the error taxonomy.
- `UniversalLogger`: Console/file logger.
- `Table`, `Chart`: Result builders used by reports.

# Integration Notes
-----------------

Domain code lives in `hgdlab.lab`; it can be used without the CLI.
"""

from hgdlab._about import __version__
from hgdlab.client import LabClient
from hgdlab.core import StageResult
from hgdlab.internal import BaseLabError
from hgdlab.internal import UniversalLogger
from hgdlab.results import Chart
from hgdlab.results import Table

__all__ = [
    "BaseLabError",
    "Chart",
    "LabClient",
    "StageResult",
    "Table",
    "UniversalLogger",
    "__version__",
]
