"""
Shared fixtures and utilities for hgd-lab tests.
"""
import pathlib
import shutil
import tempfile
from unittest.mock import MagicMock

import pytest
import torch

from hgdlab.internal.logger import LogLevel, UniversalLogger
from hgdlab.lab.classifiers import ClassifierHandle, build_classifier
from hgdlab.lab.corpus import CorpusProtocol
from hgdlab.lab.data import CleanDataset, ImageBatch, load_dataset


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    tmpdir = tempfile.mkdtemp()
    yield pathlib.Path(tmpdir)
    shutil.rmtree(tmpdir)


@pytest.fixture
def mock_logger():
    """Create a mock logger; `stage` still works as a context manager."""
    return MagicMock(spec=UniversalLogger)


@pytest.fixture
def quiet_logger():
    """A real logger that emits nothing."""
    return UniversalLogger(name="test", level=LogLevel.NO_ERROR, enable_colors=False)


@pytest.fixture
def patterns() -> CleanDataset:
    """Small 4-class grating dataset with 8x8 RGB images."""
    return load_dataset(
        "synthetic-patterns",
        seed=0,
        options={"num_classes": 4, "image_size": 8, "train_size": 96, "test_size": 48},
    )


@pytest.fixture
def blobs() -> CleanDataset:
    """Linearly separable two-class dataset of 1x4x4 images."""
    return load_dataset("synthetic-blobs", seed=0)


@pytest.fixture
def image_batch(patterns) -> ImageBatch:
    return ImageBatch(patterns.test_images[:16], patterns.test_labels[:16])


@pytest.fixture
def tiny_classifiers(patterns) -> dict[str, ClassifierHandle]:
    """Three untrained source models plus a holdout, all on the patterns shape."""
    torch.manual_seed(0)
    shape, classes = patterns.input_shape, patterns.num_classes
    return {
        "A": build_classifier("vgg4", shape, classes, handle_id="A", width=4),
        "B": build_classifier("resnet8", shape, classes, handle_id="B", width=4),
        "C": build_classifier("linear", shape, classes, handle_id="C"),
        "H": build_classifier("allconv", shape, classes, handle_id="H", width=4),
    }


@pytest.fixture
def tiny_protocol() -> CorpusProtocol:
    """Desk protocol shrunk to a handful of images per split."""
    return CorpusProtocol.desk_default(
        sources=["A", "B", "C"],
        holdout="H",
        train_count=8,
        val_count=4,
        test_count=4,
        epsilon_range=(1, 16),
        test_epsilons=(4, 16),
    )


# Helper functions

def linear_probe(weight: torch.Tensor, handle_id: str = "probe") -> ClassifierHandle:
    """Linear classifier on 1x2x2 inputs with fixed weights and zero bias."""
    handle = build_classifier("linear", (1, 2, 2), weight.shape[0], handle_id=handle_id)
    head = handle.network.head
    with torch.no_grad():
        head.weight.copy_(weight)
        head.bias.zero_()
    return handle
