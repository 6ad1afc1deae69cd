import typing

ErrorCategory = typing.Literal["configuration", "numeric", "io"]

EXIT_CODES: dict[str, int] = {"configuration": 2, "numeric": 3, "io": 4}


class BaseLabError(Exception):
    """Base class for all hgd-lab errors."""

    category: typing.ClassVar[ErrorCategory] = "configuration"
    prefix: typing.ClassVar[str] = "configuration:"

    def __str__(self) -> str:
        message = super().__str__()
        if message.startswith(self.prefix):
            return message
        return f"{self.prefix} {message}"

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.category]


class LabConfigurationError(BaseLabError):
    """Raised when a config, registry entry or argument is invalid."""

    pass


class LabShapeError(LabConfigurationError):
    """Raised when tensor shapes do not match the declared contract."""

    prefix = "configuration: shape"


class LabSchemaError(LabConfigurationError):
    """Raised when an experiment config violates its stage schema."""

    prefix = "configuration: schema"

    def __init__(self, issues: typing.Sequence[typing.Any]) -> None:
        self.issues = list(issues)
        super().__init__("; ".join(f"{i.name}: {i.message}" for i in self.issues))


class LabUnknownStageError(LabConfigurationError):
    """Raised when the CLI is asked for a stage that does not exist."""

    prefix = "configuration: unknown stage"


class LabMissingArtifactError(LabConfigurationError):
    """Raised when a config references an artifact that is not on disk."""

    prefix = "configuration: missing artifact"


class LabProtocolViolationError(LabConfigurationError):
    """
    Raised when a corpus protocol breaks the white/black-box separation,
    e.g. the holdout model appears among the train-split sources.
    """

    prefix = "configuration: protocol violation"


class LabNumericError(BaseLabError):
    """Raised when a loss or gradient becomes non-finite."""

    category = "numeric"
    prefix = "numeric:"


class LabTrainingDivergedError(LabNumericError):
    """Raised when training produces a non-finite loss."""

    def __init__(self, epoch: int, batch: int | None = None, loss: float | None = None) -> None:
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        where = f"epoch {epoch}" if batch is None else f"epoch {epoch}, batch {batch}"
        super().__init__(f"training diverged at {where} (loss={loss})")


class LabDegenerateFitError(LabNumericError):
    """Raised when a slope fit has no adversarial perturbation to fit against."""

    pass


class LabIOError(BaseLabError):
    """Raised when reading or writing an artifact fails."""

    category = "io"
    prefix = "io:"


class LabMissingFiguresError(LabIOError):
    """Raised when figure regeneration lacks the analysis artifacts it needs."""

    def __init__(self, missing: typing.Sequence[str]) -> None:
        self.missing = list(missing)
        super().__init__("missing analysis artifacts: " + ", ".join(self.missing))
