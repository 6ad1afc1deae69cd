"""
hgd-lab internal.
=================

Components shared by every part of the lab: error taxonomy, logging and the
content-addressed artifact store.

# Exposed Components
-----------------

- `BaseLabError` and its configuration / numeric / io subclasses.
- `ArtifactStore`: SQLite-indexed, content-addressed artifact directories.
- `UniversalLogger`: console/file/buffer logger with metric lines.
"""

from hgdlab.internal.errors import BaseLabError
from hgdlab.internal.errors import LabConfigurationError
from hgdlab.internal.errors import LabDegenerateFitError
from hgdlab.internal.errors import LabIOError
from hgdlab.internal.errors import LabMissingArtifactError
from hgdlab.internal.errors import LabMissingFiguresError
from hgdlab.internal.errors import LabNumericError
from hgdlab.internal.errors import LabProtocolViolationError
from hgdlab.internal.errors import LabSchemaError
from hgdlab.internal.errors import LabShapeError
from hgdlab.internal.errors import LabTrainingDivergedError
from hgdlab.internal.errors import LabUnknownStageError
from hgdlab.internal.logger import LogLevel
from hgdlab.internal.logger import UniversalLogger
from hgdlab.internal.store import ArtifactStore

__all__ = [
    "ArtifactStore",
    "BaseLabError",
    "LabConfigurationError",
    "LabDegenerateFitError",
    "LabIOError",
    "LabMissingArtifactError",
    "LabMissingFiguresError",
    "LabNumericError",
    "LabProtocolViolationError",
    "LabSchemaError",
    "LabShapeError",
    "LabTrainingDivergedError",
    "LabUnknownStageError",
    "LogLevel",
    "UniversalLogger",
]
