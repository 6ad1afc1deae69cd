import typing

import hgdlab.abc.base as lab_abc_base

StageName = typing.Literal[
    "train-classifier",
    "forge-corpus",
    "train-denoiser",
    "evaluate",
    "transfer",
    "class-split",
    "analyze-amplification",
    "analyze-noise",
    "ensemble-eval",
]


class PathsConfig(lab_abc_base.LabABC):
    """
    Filesystem roots of one run.

    Attributes
    ----------
    data_root : str
        Directory holding on-disk datasets such as CIFAR-10.
    artifact_root : str
        Root of the artifact store. ``HGDLAB_ARTIFACT_ROOT`` overrides it.
    """

    data_root: str
    artifact_root: str


class ExperimentConfig(lab_abc_base.LabABC):
    """
    Top-level experiment config as parsed from YAML.

    Attributes
    ----------
    stage : StageName
        Pipeline stage to run.
    seed : int
        Root of every random stream in the run.
    device : str
        ``cpu``, ``cuda`` or ``auto``.
    progress : bool
        Show tqdm progress bars.
    log_level : str
        One of the ``LogLevel`` values.
    paths : PathsConfig
        Data and artifact roots.
    params : dict
        Stage parameters, validated against the stage schema.
    """

    stage: StageName
    seed: int
    device: str
    progress: bool
    log_level: str
    paths: PathsConfig
    params: dict[str, typing.Any]


class EnsembleMember(lab_abc_base.LabABC):
    """One defended model of an ``ensemble-eval`` run."""

    name: str
    classifier: str
    denoiser: str | None
