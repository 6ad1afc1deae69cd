"""
Image batches and the clean datasets the lab trains and attacks on.

Pixels always live in [0, 1] with layout (batch, channels, height, width).
"""

import dataclasses
import math
import pathlib
import typing

import numpy as np
import torch

import hgdlab.internal.errors as lab_errors

PIXEL_TOLERANCE = 1e-6


@dataclasses.dataclass
class ImageBatch:
    """
    A batch of images with optional labels and free-form provenance.

    Attributes
    ----------
    pixels : torch.Tensor
        Float tensor of shape (N, C, H, W) with values in [0, 1].
    labels : torch.Tensor | None
        Integer class ids of shape (N,).
    provenance : dict
        Source dataset, attack applied, ε and similar metadata.
    """

    pixels: torch.Tensor
    labels: torch.Tensor | None = None
    provenance: dict[str, typing.Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.pixels.dim() != 4:
            raise lab_errors.LabShapeError(
                f"pixels must have shape (N, C, H, W), got {tuple(self.pixels.shape)}"
            )
        if self.pixels.numel() and (
            float(self.pixels.min()) < -PIXEL_TOLERANCE
            or float(self.pixels.max()) > 1.0 + PIXEL_TOLERANCE
        ):
            raise lab_errors.LabConfigurationError("pixel values must lie in [0, 1]")
        if self.labels is not None and self.labels.shape != (self.pixels.shape[0],):
            raise lab_errors.LabShapeError(
                f"labels shape {tuple(self.labels.shape)} does not match batch of {len(self)}"
            )

    def __len__(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return typing.cast(tuple[int, int, int], tuple(self.pixels.shape[1:]))

    def check_labels(self, num_classes: int) -> None:
        """Raise if any label falls outside [0, num_classes)."""
        if self.labels is None or not len(self):
            return
        if int(self.labels.min()) < 0 or int(self.labels.max()) >= num_classes:
            raise lab_errors.LabConfigurationError(
                f"labels must lie in [0, {num_classes}), got range "
                f"[{int(self.labels.min())}, {int(self.labels.max())}]"
            )

    def with_pixels(self, pixels: torch.Tensor, **provenance: typing.Any) -> "ImageBatch":
        """Same labels, new pixels, provenance extended with the given fields."""
        return ImageBatch(pixels, self.labels, {**self.provenance, **provenance})

    def chunks(self, batch_size: int) -> typing.Iterator["ImageBatch"]:
        for start in range(0, len(self), batch_size):
            stop = start + batch_size
            labels = None if self.labels is None else self.labels[start:stop]
            yield ImageBatch(self.pixels[start:stop], labels, dict(self.provenance))


@dataclasses.dataclass
class CleanDataset:
    """Train and test images of one dataset, already scaled to [0, 1]."""

    dataset_id: str
    train_images: torch.Tensor
    train_labels: torch.Tensor
    test_images: torch.Tensor
    test_labels: torch.Tensor
    num_classes: int

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return typing.cast(tuple[int, int, int], tuple(self.train_images.shape[1:]))

    def train_batch(self) -> ImageBatch:
        return ImageBatch(self.train_images, self.train_labels, {"dataset": self.dataset_id})

    def test_batch(self) -> ImageBatch:
        return ImageBatch(self.test_images, self.test_labels, {"dataset": self.dataset_id})

    def restrict_classes(self, classes: typing.Sequence[int]) -> "CleanDataset":
        """
        Keep only images whose label is in `classes`.

        Labels keep their original ids so a classifier trained on every class
        can still be evaluated on the subset.
        """
        keep = torch.tensor(sorted(classes), dtype=torch.long)
        train_mask = torch.isin(self.train_labels, keep)
        test_mask = torch.isin(self.test_labels, keep)
        return CleanDataset(
            dataset_id=f"{self.dataset_id}[{','.join(str(c) for c in keep.tolist())}]",
            train_images=self.train_images[train_mask],
            train_labels=self.train_labels[train_mask],
            test_images=self.test_images[test_mask],
            test_labels=self.test_labels[test_mask],
            num_classes=self.num_classes,
        )


DatasetLoader = typing.Callable[[pathlib.Path, int, dict[str, typing.Any]], CleanDataset]


def _load_cifar10(
    data_root: pathlib.Path, seed: int, options: dict[str, typing.Any]
) -> CleanDataset:
    import torchvision

    try:
        train = torchvision.datasets.CIFAR10(root=str(data_root), train=True, download=False)
        test = torchvision.datasets.CIFAR10(root=str(data_root), train=False, download=False)
    except RuntimeError as err:
        raise lab_errors.LabConfigurationError(
            f"dataset cifar10 is not available under {data_root}: {err}"
        ) from err

    def to_tensor(array: np.ndarray) -> torch.Tensor:
        return torch.from_numpy(array).permute(0, 3, 1, 2).float().div(255.0)

    train_images, train_labels = to_tensor(train.data), torch.tensor(train.targets)
    test_images, test_labels = to_tensor(test.data), torch.tensor(test.targets)
    train_size = options.get("train_size")
    test_size = options.get("test_size")
    if train_size:
        train_images, train_labels = train_images[:train_size], train_labels[:train_size]
    if test_size:
        test_images, test_labels = test_images[:test_size], test_labels[:test_size]
    return CleanDataset("cifar10", train_images, train_labels, test_images, test_labels, 10)


def _pattern_images(
    labels: np.ndarray, num_classes: int, image_size: int, rng: np.random.Generator
) -> np.ndarray:
    # Oriented colour gratings, one orientation and tint per class, random phase.
    coords = np.arange(image_size, dtype=np.float64) / image_size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    angles = math.pi * np.arange(num_classes) / num_classes
    tints = 0.6 + 0.4 * np.stack(
        [np.cos(angles), np.cos(angles + 2.1), np.cos(angles + 4.2)], axis=1
    )
    images = np.empty((len(labels), 3, image_size, image_size), dtype=np.float64)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=len(labels))
    for index, (label, phase) in enumerate(zip(labels, phases)):
        wave = np.cos(
            2.0 * math.pi * 3.0 * (xx * math.cos(angles[label]) + yy * math.sin(angles[label]))
            + phase
        )
        images[index] = 0.5 + 0.3 * tints[label][:, None, None] * wave[None]
    images += rng.normal(0.0, 0.05, size=images.shape)
    return np.clip(images, 0.0, 1.0).astype(np.float32)


def _load_synthetic_patterns(
    data_root: pathlib.Path, seed: int, options: dict[str, typing.Any]
) -> CleanDataset:
    num_classes = int(options.get("num_classes", 10))
    image_size = int(options.get("image_size", 32))
    train_size = int(options.get("train_size", 3000))
    test_size = int(options.get("test_size", 1000))
    rng = np.random.default_rng(seed)
    train_labels = rng.integers(0, num_classes, size=train_size)
    test_labels = rng.integers(0, num_classes, size=test_size)
    return CleanDataset(
        "synthetic-patterns",
        torch.from_numpy(_pattern_images(train_labels, num_classes, image_size, rng)),
        torch.from_numpy(train_labels).long(),
        torch.from_numpy(_pattern_images(test_labels, num_classes, image_size, rng)),
        torch.from_numpy(test_labels).long(),
        num_classes,
    )


def _load_synthetic_blobs(
    data_root: pathlib.Path, seed: int, options: dict[str, typing.Any]
) -> CleanDataset:
    # Two classes separated along a fixed ±1 direction; separable by construction.
    channels, side = int(options.get("channels", 1)), int(options.get("image_size", 4))
    train_size = int(options.get("train_size", 200))
    test_size = int(options.get("test_size", 100))
    separation = float(options.get("separation", 0.1))
    noise = float(options.get("noise", 0.02))
    rng = np.random.default_rng(seed)
    direction = rng.choice([-1.0, 1.0], size=(channels, side, side))

    def draw(count: int) -> tuple[torch.Tensor, torch.Tensor]:
        labels = rng.integers(0, 2, size=count)
        signs = (2.0 * labels - 1.0)[:, None, None, None]
        images = 0.5 + separation * signs * direction[None] + rng.normal(
            0.0, noise, size=(count, channels, side, side)
        )
        return (
            torch.from_numpy(np.clip(images, 0.0, 1.0).astype(np.float32)),
            torch.from_numpy(labels).long(),
        )

    train_images, train_labels = draw(train_size)
    test_images, test_labels = draw(test_size)
    return CleanDataset(
        "synthetic-blobs", train_images, train_labels, test_images, test_labels, 2
    )


def _load_npz(path: pathlib.Path, options: dict[str, typing.Any]) -> CleanDataset:
    if not path.is_file():
        raise lab_errors.LabConfigurationError(f"dataset archive not found: {path}")
    with np.load(path) as archive:
        arrays = {key: archive[key] for key in ("x_train", "y_train", "x_test", "y_test")}

    def to_tensor(array: np.ndarray) -> torch.Tensor:
        tensor = torch.from_numpy(array)
        return tensor.float().div(255.0) if array.dtype == np.uint8 else tensor.float()

    num_classes = int(options.get("num_classes", int(arrays["y_train"].max()) + 1))
    return CleanDataset(
        f"npz:{path.name}",
        to_tensor(arrays["x_train"]),
        torch.from_numpy(arrays["y_train"]).long(),
        to_tensor(arrays["x_test"]),
        torch.from_numpy(arrays["y_test"]).long(),
        num_classes,
    )


DATASETS: dict[str, DatasetLoader] = {
    "cifar10": _load_cifar10,
    "synthetic-patterns": _load_synthetic_patterns,
    "synthetic-blobs": _load_synthetic_blobs,
}


def load_dataset(
    dataset_id: str,
    data_root: pathlib.Path | str = "data",
    seed: int = 0,
    options: dict[str, typing.Any] | None = None,
) -> CleanDataset:
    """
    Load a registered dataset or an ``npz:<path>`` archive.

    Raises
    ------
    LabConfigurationError
        If the id is unknown, the data is missing on disk or the dataset is empty.
    """
    options = dict(options or {})
    data_root = pathlib.Path(data_root)
    if dataset_id.startswith("npz:"):
        archive = pathlib.Path(dataset_id[4:])
        dataset = _load_npz(archive if archive.is_absolute() else data_root / archive, options)
    elif dataset_id in DATASETS:
        dataset = DATASETS[dataset_id](data_root, seed, options)
    else:
        known = ", ".join(sorted(DATASETS))
        raise lab_errors.LabConfigurationError(
            f"unknown dataset {dataset_id!r}; known: {known}, npz:<path>"
        )
    if len(dataset.train_labels) == 0:
        raise lab_errors.LabConfigurationError(f"dataset {dataset_id!r} has no training images")
    return dataset
