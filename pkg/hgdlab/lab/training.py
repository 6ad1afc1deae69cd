"""
Denoiser training on adversarial corpora.

Adam at 1e-3, one drop to 1e-4 once the training loss plateaus, and the
checkpoint with the lowest validation loss is kept. Clean images enter the
training stream as zero-perturbation examples.
"""

import copy
import dataclasses
import json
import math
import pathlib
import typing

import torch
import tqdm

import hgdlab.internal.errors as lab_errors
import hgdlab.internal.logger as lab_logger
import hgdlab.lab.corpus as lab_corpus
import hgdlab.lab.denoisers as lab_denoisers
import hgdlab.lab.losses as lab_losses
from hgdlab.lab.classifiers import ClassifierHandle


def plateau_detector(
    history: typing.Sequence[float],
    patience: int = 3,
    min_relative_improvement: float = 0.01,
) -> bool:
    """
    True once the loss has gone `patience` epochs without beating the best
    value by more than `min_relative_improvement` (relative).

    >>> plateau_detector([1.0, 0.995, 0.992, 0.991])
    True
    """
    if not history:
        return False
    best = history[0]
    since = 0
    for value in history[1:]:
        if value < best * (1.0 - min_relative_improvement):
            best = value
            since = 0
        else:
            since += 1
    return since >= patience


@dataclasses.dataclass
class DenoiserRunSpec:
    """
    Everything that determines a denoiser training run.

    `clean_ratio` adversarial images per clean image are fed during training;
    0 disables clean mixing.
    """

    denoiser: lab_denoisers.DenoiserConfig
    loss: lab_losses.GuidedLossSpec
    corpus_id: str = ""
    max_epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    reduced_learning_rate: float = 1e-4
    plateau_patience: int = 3
    plateau_min_improvement: float = 0.01
    clean_ratio: int = 7
    seed: int = 0
    max_steps_per_epoch: int | None = None

    def validate(self) -> None:
        self.denoiser.validate()
        if self.max_epochs < 1 or self.batch_size < 1:
            raise lab_errors.LabConfigurationError("max_epochs and batch_size must be positive")
        if self.clean_ratio < 0:
            raise lab_errors.LabConfigurationError("clean_ratio must be nonnegative")
        if not 0 < self.reduced_learning_rate <= self.learning_rate:
            raise lab_errors.LabConfigurationError("reduced_learning_rate must lie in (0, learning_rate]")

    def to_dict(self) -> dict[str, typing.Any]:
        data = dataclasses.asdict(self)
        data["denoiser"] = self.denoiser.to_dict()
        data["loss"] = self.loss.to_dict()
        return data


@dataclasses.dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float | None
    lr: float

    def to_dict(self) -> dict[str, typing.Any]:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class TrainingResult:
    model: lab_denoisers.DenoiserModel
    log: list[EpochRecord]
    best_epoch: int

    @property
    def best_val_loss(self) -> float:
        return self.log[self.best_epoch].val_loss


def write_training_log(path: pathlib.Path, records: typing.Iterable[EpochRecord]) -> pathlib.Path:
    """One JSON object per line: epoch, train_loss, val_loss, val_accuracy, lr."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    return path


def read_training_log(path: pathlib.Path) -> list[EpochRecord]:
    path = pathlib.Path(path)
    if not path.is_file():
        raise lab_errors.LabIOError(f"training log not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    return [EpochRecord(**json.loads(line)) for line in lines if line.strip()]


class DenoiserTrainer:
    """
    Single-writer optimisation loop for one denoiser.

    Parameters
    ----------
    run : DenoiserRunSpec
    guide : ClassifierHandle, optional
        Frozen guiding classifier; required for every loss except pgd.
    target : ClassifierHandle, optional
        Classifier behind the denoiser for validation accuracy; defaults to
        `guide`. Without either, validation accuracy is not recorded.
    logger : UniversalLogger, optional
    device : str
    progress : bool
    """

    def __init__(
        self,
        run: DenoiserRunSpec,
        guide: ClassifierHandle | None = None,
        target: ClassifierHandle | None = None,
        logger: lab_logger.UniversalLogger | None = None,
        device: str = "cpu",
        progress: bool = False,
    ) -> None:
        run.validate()
        self.run = run
        self.logger = logger or lab_logger.default_logger("DenoiserTrainer")
        self.device = torch.device(device)
        self.progress = progress
        self.guide = guide
        self.target = target or guide
        for handle in (guide, self.target):
            if handle is not None and tuple(handle.input_shape) != tuple(run.denoiser.input_shape):
                raise lab_errors.LabConfigurationError(
                    f"classifier {handle.handle_id} expects {handle.input_shape}, "
                    f"denoiser is built for {run.denoiser.input_shape}"
                )
        self.loss = lab_losses.GuidedLoss(run.loss, guide)
        torch.manual_seed(run.seed)
        self.model = lab_denoisers.build_denoiser(run.denoiser).to(self.device)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=run.learning_rate)
        self.epoch = 0
        self.batch_index = 0

    @property
    def learning_rate(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    def _set_learning_rate(self, value: float) -> None:
        for group in self.optimizer.param_groups:
            group["lr"] = value

    def step(
        self, adversarial: torch.Tensor, clean: torch.Tensor, labels: torch.Tensor | None = None
    ) -> float:
        """
        One optimisation step on a batch; returns the loss before the update.

        Raises
        ------
        LabTrainingDivergedError
            If the loss is not finite.
        """
        self.model.train()
        denoised, _ = self.model(adversarial.to(self.device))
        loss = self.loss(clean.to(self.device), denoised, None if labels is None else labels.to(self.device))
        if not torch.isfinite(loss):
            raise lab_errors.LabTrainingDivergedError(self.epoch, self.batch_index, float(loss))
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.batch_index += 1
        return float(loss)

    def _check_corpus(self, split: lab_corpus.CorpusSplit) -> None:
        shape = tuple(split.adversarial.shape[1:])
        if shape != tuple(self.run.denoiser.input_shape):
            raise lab_errors.LabConfigurationError(
                f"corpus split {split.name} holds {shape} images, denoiser expects {self.run.denoiser.input_shape}"
            )
        if not len(split):
            raise lab_errors.LabConfigurationError(f"corpus split {split.name} is empty")

    def _training_stream(self, split: lab_corpus.CorpusSplit) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Inputs, references and labels with clean images cycled in at `clean_ratio`."""
        adversarial = split.adversarial
        reference = split.clean_for()
        labels = split.labels
        if self.run.clean_ratio:
            extra = len(split) // self.run.clean_ratio
            cycle = torch.arange(extra) % len(split.clean)
            clean = split.clean[cycle]
            adversarial = torch.cat([adversarial, clean])
            reference = torch.cat([reference, clean])
            labels = torch.cat([labels, split.clean_labels[cycle]])
        return adversarial, reference, labels

    @torch.no_grad()
    def evaluate_split(self, split: lab_corpus.CorpusSplit) -> tuple[float, float | None]:
        """Validation loss on unclipped x̂ and defended accuracy on clipped x̂."""
        self.model.eval()
        total_loss, correct = 0.0, 0
        for start in range(0, len(split), self.run.batch_size):
            index = torch.arange(start, min(start + self.run.batch_size, len(split)))
            adversarial = split.adversarial[index].to(self.device)
            clean = split.clean_for(index).to(self.device)
            labels = split.labels[index].to(self.device)
            denoised, _ = self.model(adversarial)
            total_loss += float(self.loss(clean, denoised, labels)) * len(index)
            if self.target is not None:
                _, predicted = self.target.predict(denoised.clamp(0.0, 1.0))
                correct += int((predicted.to(labels.device) == labels).sum())
        accuracy = correct / len(split) if self.target is not None else None
        return total_loss / len(split), accuracy

    def fit(self, train: lab_corpus.CorpusSplit, val: lab_corpus.CorpusSplit) -> TrainingResult:
        """Train for up to `max_epochs`, keeping the weights with the lowest validation loss."""
        self._check_corpus(train)
        self._check_corpus(val)
        inputs, references, labels = self._training_stream(train)
        generator = torch.Generator().manual_seed(self.run.seed)
        log: list[EpochRecord] = []
        history: list[float] = []
        best_state: dict[str, torch.Tensor] | None = None
        best_epoch = 0
        dropped = False

        for epoch in range(self.run.max_epochs):
            self.epoch, self.batch_index = epoch, 0
            lr = self.learning_rate
            order = torch.randperm(len(inputs), generator=generator)
            batches = list(range(0, len(order), self.run.batch_size))
            if self.run.max_steps_per_epoch:
                batches = batches[: self.run.max_steps_per_epoch]
            running, seen = 0.0, 0
            for start in tqdm.tqdm(batches, desc=f"epoch {epoch}", disable=not self.progress, leave=False):
                index = order[start : start + self.run.batch_size]
                running += self.step(inputs[index], references[index], labels[index]) * len(index)
                seen += len(index)
            train_loss = running / seen
            val_loss, val_accuracy = self.evaluate_split(val)
            if not math.isfinite(val_loss):
                raise lab_errors.LabTrainingDivergedError(epoch, None, val_loss)
            record = EpochRecord(epoch, train_loss, val_loss, val_accuracy, lr)
            log.append(record)
            self.logger.metric("denoiser-epoch", **record.to_dict())

            if best_state is None or val_loss < log[best_epoch].val_loss:
                best_epoch = epoch
                best_state = copy.deepcopy(self.model.state_dict())

            history.append(train_loss)
            if not dropped and plateau_detector(
                history, self.run.plateau_patience, self.run.plateau_min_improvement
            ):
                self._set_learning_rate(self.run.reduced_learning_rate)
                dropped = True
                self.logger.log(
                    f"Training loss plateaued at epoch {epoch}; learning rate -> {self.run.reduced_learning_rate}",
                    "info",
                )

        assert best_state is not None
        self.model.load_state_dict(best_state)
        self.model.eval()
        self.model.metadata = {
            "loss": self.run.loss.to_dict(),
            "guiding_classifier": self.run.loss.guiding_classifier,
            "corpus_id": self.run.corpus_id,
            "best_epoch": best_epoch,
            "val_loss": log[best_epoch].val_loss,
            "val_accuracy": log[best_epoch].val_accuracy,
            "seed": self.run.seed,
        }
        self.logger.metric(
            "denoiser-selected", loss=self.run.loss.kind, best_epoch=best_epoch, val_loss=log[best_epoch].val_loss
        )
        return TrainingResult(self.model, log, best_epoch)


def train_denoiser(
    run: DenoiserRunSpec,
    corpus: lab_corpus.AdversarialCorpus,
    guide: ClassifierHandle | None = None,
    target: ClassifierHandle | None = None,
    directory: pathlib.Path | None = None,
    logger: lab_logger.UniversalLogger | None = None,
    device: str = "cpu",
    progress: bool = False,
) -> TrainingResult:
    """
    Train on the corpus train split, select on val, and optionally write
    ``denoiser.pt`` and ``training_log.jsonl`` into `directory`.
    """
    if tuple(corpus.input_shape) != tuple(run.denoiser.input_shape):
        raise lab_errors.LabConfigurationError(
            f"corpus images are {tuple(corpus.input_shape)}, denoiser expects {tuple(run.denoiser.input_shape)}"
        )
    trainer = DenoiserTrainer(run, guide, target, logger=logger, device=device, progress=progress)
    result = trainer.fit(corpus.split("train"), corpus.split("val"))
    if directory is not None:
        directory = pathlib.Path(directory)
        result.model.save(directory / "denoiser.pt")
        write_training_log(directory / "training_log.jsonl", result.log)
    return result
