"""
Tests for the run environment: device, seeds and artifact root.
"""
import pathlib

import pytest
import torch

from hgdlab.client import LabClient
from hgdlab.core.environment import ARTIFACT_ROOT_ENV, LabEnvironment, resolve_device, seed_everything
from hgdlab.internal.errors import LabConfigurationError


@pytest.fixture
def client(quiet_logger):
    return LabClient(logger=quiet_logger)


@pytest.mark.unit
class TestResolveDevice:
    def test_cpu(self):
        assert resolve_device("cpu") == torch.device("cpu")

    def test_auto(self):
        assert resolve_device("auto").type in ("cpu", "cuda")

    def test_cuda_without_cuda(self, mocker):
        mocker.patch("torch.cuda.is_available", return_value=False)
        with pytest.raises(LabConfigurationError, match="CUDA"):
            resolve_device("cuda")

    def test_unknown(self):
        with pytest.raises(LabConfigurationError):
            resolve_device("abacus")


@pytest.mark.unit
class TestLabEnvironment:
    def test_roots_from_arguments(self, client, temp_dir, monkeypatch):
        monkeypatch.delenv(ARTIFACT_ROOT_ENV, raising=False)
        environment = LabEnvironment(client, data_root=temp_dir / "data", artifact_root=temp_dir / "out")
        assert environment.data_root == temp_dir / "data"
        assert environment.artifact_root == temp_dir / "out"

    def test_env_var_overrides_artifact_root(self, client, temp_dir, monkeypatch):
        monkeypatch.setenv(ARTIFACT_ROOT_ENV, str(temp_dir / "env"))
        environment = LabEnvironment(client, artifact_root=temp_dir / "config")
        assert environment.artifact_root == pathlib.Path(temp_dir / "env")

    def test_store_is_opened_under_the_root(self, client, temp_dir, monkeypatch):
        monkeypatch.delenv(ARTIFACT_ROOT_ENV, raising=False)
        environment = LabEnvironment(client, artifact_root=temp_dir)
        assert environment.store is environment.store
        assert environment.store.root == temp_dir

    def test_generators_follow_seed_and_stream(self, client):
        environment = LabEnvironment(client, seed=5)
        first = torch.rand(4, generator=environment.generator(1))
        assert torch.equal(first, torch.rand(4, generator=environment.generator(1)))
        assert not torch.equal(first, torch.rand(4, generator=environment.generator(2)))
        assert not torch.equal(first, torch.rand(4, generator=LabEnvironment(client, seed=6).generator(1)))

    def test_seed_everything(self):
        seed_everything(11)
        first = torch.rand(3)
        seed_everything(11)
        assert torch.equal(first, torch.rand(3))
