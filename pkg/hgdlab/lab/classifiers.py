"""
Desk-scale target classifiers with named layer taps.

Every architecture is a `TappedNetwork`: an ordered list of named stages whose
last stage is always ``"features"`` (the representation fed to global average
pooling), followed by a linear head whose output is the ``"logits"`` tap.
"""

import copy
import dataclasses
import pathlib
import typing

import torch
import torch.nn.functional as F
import tqdm
from torch import nn

import hgdlab.internal.errors as lab_errors
import hgdlab.internal.logger as lab_logger
import hgdlab.lab.attacks as lab_attacks
import hgdlab.lab.checkpoints as lab_checkpoints
import hgdlab.lab.data as lab_data

LabelSource = typing.Literal["given", "predicted", "target"]
PixelsLike = typing.Union[lab_data.ImageBatch, torch.Tensor]

FEATURES_TAP = "features"
LOGITS_TAP = "logits"


class TappedNetwork(nn.Module):
    """
    Named stages, optional global average pooling and a linear head.

    Parameters
    ----------
    stages : list[tuple[str, nn.Module]]
        Ordered stages; the last one must be named ``"features"``.
    head : nn.Module
        Maps the pooled (or flattened) features to logits.
    pool : bool
        Global-average-pool the features before the head.
    """

    def __init__(self, stages: list[tuple[str, nn.Module]], head: nn.Module, pool: bool) -> None:
        super().__init__()
        names = [name for name, _ in stages]
        if not names or names[-1] != FEATURES_TAP or len(set(names)) != len(names):
            raise lab_errors.LabConfigurationError(
                f"stage names must be unique and end with {FEATURES_TAP!r}, got {names}"
            )
        self.stage_names = names
        self.stages = nn.ModuleList(module for _, module in stages)
        self.head = head
        self.pool = pool

    @property
    def layer_names(self) -> list[str]:
        return [*self.stage_names, LOGITS_TAP]

    def forward_taps(
        self, x: torch.Tensor, names: typing.Collection[str] | None = None
    ) -> dict[str, torch.Tensor]:
        wanted = set(self.layer_names if names is None else names)
        taps: dict[str, torch.Tensor] = {}
        hidden = x
        for name, stage in zip(self.stage_names, self.stages):
            hidden = stage(hidden)
            if name in wanted:
                taps[name] = hidden
        pooled = hidden.mean(dim=(2, 3)) if self.pool else hidden.flatten(1)
        taps[LOGITS_TAP] = self.head(pooled)
        return taps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_taps(x, (LOGITS_TAP,))[LOGITS_TAP]


def _conv_bn_relu(in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1) -> list[nn.Module]:
    return [
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2, bias=False),
        nn.BatchNorm2d(out_ch),
        nn.ReLU(inplace=True),
    ]


class BasicResidualBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, stride: int = 1) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut: nn.Module = nn.Identity()
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch)
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


def build_linear(shape: tuple[int, int, int], num_classes: int, **_: typing.Any) -> TappedNetwork:
    # "features" is the flattened image itself, so the features tap is the identity map.
    channels, height, width = shape
    return TappedNetwork(
        [(FEATURES_TAP, nn.Flatten())], nn.Linear(channels * height * width, num_classes), pool=False
    )


def build_vgg4(
    shape: tuple[int, int, int], num_classes: int, width: int = 32, **_: typing.Any
) -> TappedNetwork:
    channels, side = shape[0], shape[1]
    widths = [width, 2 * width, 4 * width, 4 * width]
    names = ["block1", "block2", "block3", FEATURES_TAP]
    stages: list[tuple[str, nn.Module]] = []
    in_ch = channels
    for index, (name, out_ch) in enumerate(zip(names, widths)):
        layers = _conv_bn_relu(in_ch, out_ch) + _conv_bn_relu(out_ch, out_ch)
        if index < len(names) - 1 and side >= 2:
            layers.append(nn.MaxPool2d(2))
            side //= 2
        stages.append((name, nn.Sequential(*layers)))
        in_ch = out_ch
    return TappedNetwork(stages, nn.Linear(in_ch, num_classes), pool=True)


def build_resnet8(
    shape: tuple[int, int, int], num_classes: int, width: int = 16, **_: typing.Any
) -> TappedNetwork:
    stages: list[tuple[str, nn.Module]] = [
        ("block1", nn.Sequential(*_conv_bn_relu(shape[0], width), BasicResidualBlock(width, width))),
        ("block2", BasicResidualBlock(width, 2 * width, stride=2)),
        (FEATURES_TAP, BasicResidualBlock(2 * width, 4 * width, stride=2)),
    ]
    return TappedNetwork(stages, nn.Linear(4 * width, num_classes), pool=True)


def build_widecnn(
    shape: tuple[int, int, int], num_classes: int, width: int = 48, **_: typing.Any
) -> TappedNetwork:
    stages: list[tuple[str, nn.Module]] = [
        ("block1", nn.Sequential(*_conv_bn_relu(shape[0], width, kernel=5), nn.MaxPool2d(2))),
        ("block2", nn.Sequential(*_conv_bn_relu(width, 2 * width, kernel=5), nn.MaxPool2d(2))),
        (FEATURES_TAP, nn.Sequential(*_conv_bn_relu(2 * width, 2 * width, kernel=3))),
    ]
    return TappedNetwork(stages, nn.Linear(2 * width, num_classes), pool=True)


def build_allconv(
    shape: tuple[int, int, int], num_classes: int, width: int = 32, **_: typing.Any
) -> TappedNetwork:
    stages: list[tuple[str, nn.Module]] = [
        ("block1", nn.Sequential(*_conv_bn_relu(shape[0], width), *_conv_bn_relu(width, width, stride=2))),
        ("block2", nn.Sequential(*_conv_bn_relu(width, 2 * width), *_conv_bn_relu(2 * width, 2 * width, stride=2))),
        (FEATURES_TAP, nn.Sequential(*_conv_bn_relu(2 * width, 2 * width), *_conv_bn_relu(2 * width, 2 * width, kernel=1))),
    ]
    return TappedNetwork(stages, nn.Linear(2 * width, num_classes), pool=True)


ARCHITECTURES: dict[str, typing.Callable[..., TappedNetwork]] = {
    "linear": build_linear,
    "vgg4": build_vgg4,
    "resnet8": build_resnet8,
    "widecnn": build_widecnn,
    "allconv": build_allconv,
}


def _as_pixels(batch: PixelsLike) -> torch.Tensor:
    return batch.pixels if isinstance(batch, lab_data.ImageBatch) else batch


@dataclasses.dataclass(eq=False)
class ClassifierHandle:
    """
    A trained classifier, frozen and in inference mode.

    Handles are immutable once built: parameters do not require gradients and
    batch normalization uses its stored statistics, so concurrent read-only
    use is safe.
    """

    handle_id: str
    architecture_id: str
    num_classes: int
    input_shape: tuple[int, int, int]
    network: TappedNetwork
    arch_options: dict[str, typing.Any] = dataclasses.field(default_factory=dict)
    metadata: dict[str, typing.Any] = dataclasses.field(default_factory=dict)

    def __post_init__(self) -> None:
        self.input_shape = typing.cast(tuple[int, int, int], tuple(self.input_shape))
        self.network.eval()
        for parameter in self.network.parameters():
            parameter.requires_grad_(False)

    @property
    def layer_names(self) -> list[str]:
        return self.network.layer_names

    @property
    def device(self) -> torch.device:
        return next(self.network.parameters()).device

    def _check(self, pixels: torch.Tensor) -> torch.Tensor:
        if pixels.dim() != 4 or tuple(pixels.shape[1:]) != self.input_shape:
            raise lab_errors.LabShapeError(
                f"classifier {self.handle_id} expects (N, {', '.join(map(str, self.input_shape))}), "
                f"got {tuple(pixels.shape)}"
            )
        return pixels.to(self.device)

    def logits(self, batch: PixelsLike) -> torch.Tensor:
        """Differentiable logits with respect to the input pixels."""
        return self.network(self._check(_as_pixels(batch)))

    def taps(self, batch: PixelsLike, names: typing.Collection[str]) -> dict[str, torch.Tensor]:
        """Differentiable activations at several taps in one forward pass."""
        unknown = [name for name in names if name not in self.layer_names]
        if unknown:
            raise lab_errors.LabConfigurationError(
                f"unknown layer {unknown[0]!r} for {self.handle_id}; valid: {', '.join(self.layer_names)}"
            )
        return self.network.forward_taps(self._check(_as_pixels(batch)), names)

    @torch.no_grad()
    def predict(self, batch: PixelsLike) -> tuple[torch.Tensor, torch.Tensor]:
        """Logits and argmax classes; ties resolve to the smallest class index."""
        logits = self.logits(batch)
        return logits, logits.argmax(dim=1)

    @torch.no_grad()
    def probabilities(self, batch: PixelsLike) -> torch.Tensor:
        return torch.softmax(self.logits(batch), dim=1)

    @torch.no_grad()
    def tap(self, batch: PixelsLike, layer_name: str) -> torch.Tensor:
        return self.taps(batch, (layer_name,))[layer_name]

    def input_gradient(
        self,
        batch: PixelsLike,
        label_source: LabelSource = "predicted",
        target_labels: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """
        Gradient of the mean cross-entropy with respect to the pixels.

        Parameters
        ----------
        label_source : {"given", "predicted", "target"}
            Labels to score against: the batch labels, the model's own
            predictions, or `target_labels`.
        """
        pixels = self._check(_as_pixels(batch)).detach().clone().requires_grad_(True)
        logits = self.network(pixels)
        if label_source == "given":
            if not isinstance(batch, lab_data.ImageBatch) or batch.labels is None:
                raise lab_errors.LabConfigurationError("label_source='given' needs a labelled batch")
            labels = batch.labels.to(self.device)
        elif label_source == "predicted":
            labels = logits.detach().argmax(dim=1)
        elif label_source == "target":
            if target_labels is None:
                raise lab_errors.LabConfigurationError("label_source='target' needs target_labels")
            labels = target_labels.to(self.device)
        else:
            raise lab_errors.LabConfigurationError(f"unknown label source {label_source!r}")
        loss = F.cross_entropy(logits, labels)
        if not torch.isfinite(loss):
            raise lab_errors.LabNumericError(f"non-finite cross-entropy on {self.handle_id}")
        (gradient,) = torch.autograd.grad(loss, pixels)
        return gradient

    def to(self, device: str | torch.device) -> "ClassifierHandle":
        self.network.to(device)
        return self

    def save(self, path: pathlib.Path) -> pathlib.Path:
        return lab_checkpoints.save_checkpoint(
            path,
            "classifier",
            self.network.state_dict(),
            handle_id=self.handle_id,
            architecture_id=self.architecture_id,
            num_classes=self.num_classes,
            input_shape=list(self.input_shape),
            layer_names=self.layer_names,
            arch_options=dict(self.arch_options),
            metadata=dict(self.metadata),
        )

    @classmethod
    def load(cls, path: pathlib.Path, handle_id: str | None = None) -> "ClassifierHandle":
        payload = lab_checkpoints.load_checkpoint(path, "classifier")
        handle = build_classifier(
            payload["architecture_id"],
            tuple(payload["input_shape"]),
            payload["num_classes"],
            handle_id=handle_id or payload["handle_id"],
            **payload["arch_options"],
        )
        handle.network.load_state_dict(payload["state_dict"])
        handle.metadata = dict(payload["metadata"])
        if handle.layer_names != list(payload["layer_names"]):
            raise lab_errors.LabConfigurationError(
                f"{path}: stored taps {payload['layer_names']} differ from {handle.layer_names}"
            )
        return handle


def build_classifier(
    architecture_id: str,
    input_shape: tuple[int, int, int],
    num_classes: int,
    handle_id: str | None = None,
    **arch_options: typing.Any,
) -> ClassifierHandle:
    """Untrained (randomly initialised) classifier of a registered architecture."""
    if architecture_id not in ARCHITECTURES:
        raise lab_errors.LabConfigurationError(
            f"unknown architecture {architecture_id!r}; known: {', '.join(sorted(ARCHITECTURES))}"
        )
    if num_classes < 1:
        raise lab_errors.LabConfigurationError("num_classes must be positive")
    network = ARCHITECTURES[architecture_id](tuple(input_shape), num_classes, **arch_options)
    return ClassifierHandle(
        handle_id=handle_id or architecture_id,
        architecture_id=architecture_id,
        num_classes=num_classes,
        input_shape=tuple(input_shape),  # type: ignore[arg-type]
        network=network,
        arch_options=dict(arch_options),
    )


@torch.no_grad()
def evaluate_accuracy(
    handle: ClassifierHandle, images: torch.Tensor, labels: torch.Tensor, batch_size: int = 256
) -> float:
    if len(labels) == 0:
        return float("nan")
    correct = 0
    for start in range(0, len(labels), batch_size):
        _, predicted = handle.predict(images[start : start + batch_size])
        correct += int((predicted.cpu() == labels[start : start + batch_size]).sum())
    return correct / len(labels)


@dataclasses.dataclass
class ClassifierHyperparams:
    """
    Training hyperparameters for a desk classifier.

    `adversarial_epsilon` > 0 replaces half of every batch with FGSM examples
    crafted against the network being trained (the "advtrain" baseline).
    """

    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    seed: int = 0
    adversarial_epsilon: float = 0.0
    arch_options: dict[str, typing.Any] = dataclasses.field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "ClassifierHyperparams":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{key: value for key, value in data.items() if key in known})

    def to_dict(self) -> dict[str, typing.Any]:
        return dataclasses.asdict(self)


class _LiveNetwork:
    """Exposes a network under training to the attack functions."""

    def __init__(self, network: TappedNetwork, num_classes: int) -> None:
        self.handle_id = "live"
        self.network = network
        self.num_classes = num_classes

    def logits(self, batch: PixelsLike) -> torch.Tensor:
        return self.network(_as_pixels(batch))


class ClassifierTrainer:
    """
    Trains desk classifiers from scratch with Adam.

    Parameters
    ----------
    logger : UniversalLogger, optional
        Logger for per-epoch metrics.
    device : str
        Torch device to train on.
    progress : bool
        Show a tqdm bar per epoch.
    """

    def __init__(
        self,
        logger: lab_logger.UniversalLogger | None = None,
        device: str = "cpu",
        progress: bool = False,
    ) -> None:
        self.logger = logger or lab_logger.default_logger("ClassifierTrainer")
        self.device = torch.device(device)
        self.progress = progress

    def train(
        self,
        dataset: lab_data.CleanDataset,
        architecture_id: str,
        hyperparams: ClassifierHyperparams,
        handle_id: str | None = None,
    ) -> ClassifierHandle:
        """
        Train a classifier on `dataset` and record its clean test accuracy.

        Raises
        ------
        LabConfigurationError
            If the dataset is empty or the architecture is unknown.
        LabTrainingDivergedError
            If the loss becomes non-finite.
        """
        if len(dataset.train_labels) == 0:
            raise lab_errors.LabConfigurationError(f"dataset {dataset.dataset_id} is empty")
        torch.manual_seed(hyperparams.seed)
        handle_id = handle_id or architecture_id
        network = build_classifier(
            architecture_id,
            dataset.input_shape,
            dataset.num_classes,
            handle_id=handle_id,
            **hyperparams.arch_options,
        ).network
        for parameter in network.parameters():
            parameter.requires_grad_(True)
        network.to(self.device).train()
        live = _LiveNetwork(network, dataset.num_classes)

        optimizer = torch.optim.Adam(
            network.parameters(), lr=hyperparams.learning_rate, weight_decay=hyperparams.weight_decay
        )
        generator = torch.Generator().manual_seed(hyperparams.seed)
        images, labels = dataset.train_images, dataset.train_labels
        self.logger.log(
            f"Training {architecture_id} as {handle_id} on {dataset.dataset_id} "
            f"({len(labels)} images, {hyperparams.epochs} epochs)",
            "info",
        )
        for epoch in range(hyperparams.epochs):
            order = torch.randperm(len(labels), generator=generator)
            running, seen = 0.0, 0
            batches = range(0, len(labels), hyperparams.batch_size)
            for start in tqdm.tqdm(batches, desc=f"epoch {epoch}", disable=not self.progress, leave=False):
                index = order[start : start + hyperparams.batch_size]
                x = images[index].to(self.device)
                y = labels[index].to(self.device)
                if hyperparams.adversarial_epsilon > 0:
                    x = self._mix_adversarial(live, x, hyperparams.adversarial_epsilon)
                loss = F.cross_entropy(network(x), y)
                if not torch.isfinite(loss):
                    raise lab_errors.LabTrainingDivergedError(epoch, start // hyperparams.batch_size, float(loss))
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                running += float(loss) * len(index)
                seen += len(index)
            self.logger.metric("classifier-epoch", model=handle_id, epoch=epoch, train_loss=running / seen)

        handle = ClassifierHandle(
            handle_id=handle_id,
            architecture_id=architecture_id,
            num_classes=dataset.num_classes,
            input_shape=dataset.input_shape,
            network=network,
            arch_options=dict(hyperparams.arch_options),
        )
        handle.metadata = {
            "dataset_id": dataset.dataset_id,
            "epochs": hyperparams.epochs,
            "hyperparams": hyperparams.to_dict(),
            "train_accuracy": evaluate_accuracy(handle, images, labels),
            "clean_accuracy": evaluate_accuracy(handle, dataset.test_images, dataset.test_labels),
        }
        self.logger.metric(
            "classifier-trained",
            model=handle_id,
            train_accuracy=handle.metadata["train_accuracy"],
            clean_accuracy=handle.metadata["clean_accuracy"],
        )
        return handle

    def _mix_adversarial(self, live: _LiveNetwork, x: torch.Tensor, epsilon: float) -> torch.Tensor:
        half = len(x) // 2
        if half == 0:
            return x
        live.network.eval()
        crafted = lab_attacks.fgsm([live], lab_data.ImageBatch(x[:half].detach()), epsilon).pixels
        live.network.train()
        return torch.cat([crafted.detach(), x[half:]])


def train_classifier(
    dataset_id: str,
    architecture_id: str,
    hyperparams: ClassifierHyperparams,
    checkpoint_path: pathlib.Path,
    data_root: pathlib.Path | str = "data",
    dataset_options: dict[str, typing.Any] | None = None,
    handle_id: str | None = None,
    logger: lab_logger.UniversalLogger | None = None,
    device: str = "cpu",
) -> ClassifierHandle:
    """Load a dataset, train a classifier on it and write its checkpoint."""
    dataset = lab_data.load_dataset(dataset_id, data_root, hyperparams.seed, dataset_options)
    handle = ClassifierTrainer(logger=logger, device=device).train(
        dataset, architecture_id, hyperparams, handle_id=handle_id
    )
    handle.save(checkpoint_path)
    return handle


def clone_frozen(handle: ClassifierHandle, handle_id: str) -> ClassifierHandle:
    """Copy of a handle under a new id."""
    return ClassifierHandle(
        handle_id=handle_id,
        architecture_id=handle.architecture_id,
        num_classes=handle.num_classes,
        input_shape=handle.input_shape,
        network=copy.deepcopy(handle.network),
        arch_options=dict(handle.arch_options),
        metadata=dict(handle.metadata),
    )
