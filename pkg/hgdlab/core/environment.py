import os
import pathlib
import random
import typing

import numpy as np
import torch

import hgdlab.core.base as lab_core_base
import hgdlab.internal.errors as lab_errors
import hgdlab.internal.store as lab_store

if typing.TYPE_CHECKING:
    import hgdlab.client as lab_client

ARTIFACT_ROOT_ENV = "HGDLAB_ARTIFACT_ROOT"


class Environment(typing.TypedDict, total=False):
    data_root: pathlib.Path | str
    artifact_root: pathlib.Path | str
    seed: int
    device: str


def seed_everything(seed: int) -> None:
    """Seed the global ``random``, numpy and torch generators."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def resolve_device(name: str) -> torch.device:
    """Map ``cpu`` / ``cuda`` / ``auto`` to a torch device."""
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    if name.startswith("cuda") and not torch.cuda.is_available():
        raise lab_errors.LabConfigurationError(f"device {name!r} requested but CUDA is not available")
    try:
        return torch.device(name)
    except RuntimeError as err:
        raise lab_errors.LabConfigurationError(f"unknown device {name!r}") from err


class LabEnvironment(lab_core_base.LabCoreObject):
    """
    Resolved filesystem roots, device and seed of one run.

    The artifact root comes from ``HGDLAB_ARTIFACT_ROOT`` when it is set,
    otherwise from the config. The store is opened lazily.
    """

    def __init__(
        self,
        client: "lab_client.LabClient",
        **kwargs: typing.Unpack[Environment],
    ) -> None:
        super().__init__(client)
        self.data_root = pathlib.Path(kwargs.get("data_root", "data"))
        self.client.logger.log(f"Data root {self.data_root}", "debug")

        override = os.environ.get(ARTIFACT_ROOT_ENV)
        if override:
            self.client.logger.log(f"{ARTIFACT_ROOT_ENV} overrides the artifact root", "debug")
        self.artifact_root = pathlib.Path(override or kwargs.get("artifact_root", "artifacts"))
        self.client.logger.log(f"Artifact root {self.artifact_root}", "debug")

        self.seed: int = int(kwargs.get("seed", 0))
        self.device: torch.device = resolve_device(kwargs.get("device", "cpu"))
        self.client.logger.log(f"Device {self.device}, seed {self.seed}", "debug")
        self._store: lab_store.ArtifactStore | None = None

    @property
    def store(self) -> lab_store.ArtifactStore:
        if self._store is None:
            self._store = lab_store.ArtifactStore(self.artifact_root, logger=self.client.logger)
        return self._store

    def seed_everything(self) -> None:
        seed_everything(self.seed)
        self.client.logger.log(f"Global generators seeded with {self.seed}", "debug")

    def generator(self, *stream: int) -> torch.Generator:
        """A torch generator seeded from the run seed and a stream id."""
        seed = int(np.random.SeedSequence([self.seed, *stream]).generate_state(1)[0])
        return torch.Generator().manual_seed(seed)
