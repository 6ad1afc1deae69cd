import pathlib
import typing

import hgdlab.abc as lab_abc
import hgdlab.core.config as lab_core_config
import hgdlab.core.environment as lab_core_environment
import hgdlab.core.figures as lab_core_figures
import hgdlab.core.runner as lab_core_runner
import hgdlab.internal.errors as lab_errors
import hgdlab.internal.logger as lab_logger
import hgdlab.internal.store as lab_store


class ClientParams(typing.TypedDict, total=False):
    """
    A typed dictionary for passing client parameters.

    Attributes
    ----------
    logger : UniversalLogger, optional
        The logger instance for capturing client activity.
    """

    logger: lab_logger.UniversalLogger


class LabClient:
    """
    Entry point that ties config checking, the run environment and the stage
    runner together.

    Usage:
        client = LabClient()
        result = client.run("configs/desk/evaluate.yaml", ["--seed", "7"])
    """

    def __init__(self, **kwargs: typing.Unpack[ClientParams]) -> None:
        self.logger: lab_logger.UniversalLogger = kwargs.get(
            "logger", lab_logger.UniversalLogger(name="hgdlab", level=lab_logger.LogLevel.STANDARD)
        )
        self.logger.log("Starting lab client initialization", "debug")
        self.environment: lab_core_environment.LabEnvironment | None = None
        self.checker = lab_core_config.ConfigChecker(client=self)
        self.runner = lab_core_runner.StageRunner(client=self)
        self.logger.log("Lab client initialization complete", "debug")

    def configure(self, config: typing.Mapping[str, typing.Any]) -> lab_core_environment.LabEnvironment:
        """Build the environment of a resolved config and make it current."""
        self.environment = lab_core_environment.LabEnvironment(
            client=self,
            data_root=config["paths"]["data_root"],
            artifact_root=config["paths"]["artifact_root"],
            seed=config["seed"],
            device=config["device"],
        )
        self.logger.level = lab_logger.LogLevel(config["log_level"])
        return self.environment

    def load_config(
        self, config_path: pathlib.Path | str, overrides: typing.Sequence[str] = (), stage: str | None = None
    ) -> lab_abc.ExperimentConfig:
        """Parse, override and resolve a config file; `stage` must match the file's stage when given."""
        raw = self.checker.load(config_path)
        if stage is not None:
            declared = raw.setdefault("stage", stage)
            if declared != stage:
                raise lab_errors.LabConfigurationError(f"{config_path} is a {declared!r} config, not {stage!r}")
        return self.checker.resolve(self.checker.apply_overrides(raw, overrides))

    def run_config(self, config: lab_abc.ExperimentConfig) -> lab_core_runner.StageResult:
        self.configure(config)
        result = self.runner.run(config)
        self.logger.log(f"{result.stage} published {result.artifact}", "info")
        return result

    def run(
        self, config_path: pathlib.Path | str, overrides: typing.Sequence[str] = (), stage: str | None = None
    ) -> lab_core_runner.StageResult:
        """
        Run the stage a config file describes.

        Parameters
        ----------
        config_path : pathlib.Path | str
            YAML experiment config.
        overrides : Sequence[str]
            ``--key value`` tokens applied on top of the file.
        stage : str, optional
            Stage named on the command line.
        """
        return self.run_config(self.load_config(config_path, overrides, stage))

    def reproduce_figures(self, artifact_root: pathlib.Path | str | None = None) -> list[pathlib.Path]:
        """Redraw the analysis figures of an artifact root."""
        environment = lab_core_environment.LabEnvironment(
            client=self, artifact_root=artifact_root if artifact_root is not None else "artifacts"
        )
        if artifact_root is not None:
            environment.artifact_root = pathlib.Path(artifact_root)
        if not (environment.artifact_root / lab_store.INDEX_FILE).is_file():
            raise lab_errors.LabMissingFiguresError([f"artifact index under {environment.artifact_root}"])
        return lab_core_figures.FigureReproducer(self, environment.store).reproduce()
