"""
Defense evaluation: accuracy tables, model and class transfer, and ensembles.

Every pipeline clips denoised images to [0, 1] before classifying them. The
denoising loss reported next to each accuracy is the per-pixel L1 distance
between the image the classifier sees and the clean image.
"""

import dataclasses
import json
import pathlib
import typing

import torch

import hgdlab.internal.errors as lab_errors
import hgdlab.internal.logger as lab_logger
import hgdlab.lab.corpus as lab_corpus
import hgdlab.lab.data as lab_data
import hgdlab.lab.denoisers as lab_denoisers
from hgdlab.lab.classifiers import ClassifierHandle
from hgdlab.results import Chart, Table

NO_DEFENSE = "NA"
ORACLE = "oracle"
ALL_ATTACKS = "all"
CLEAN = "clean"
RowKind = typing.Literal["attack", "aggregate", "clean"]


@dataclasses.dataclass(eq=False)
class DefensePipeline:
    """
    Optional denoiser in front of a target classifier.

    With ``oracle=True`` the pipeline replaces every input by its clean
    reference, which upper-bounds any denoiser on the same samples.
    """

    name: str
    classifier: ClassifierHandle
    denoiser: lab_denoisers.DenoiserModel | None = None
    oracle: bool = False

    def __post_init__(self) -> None:
        if self.oracle and self.denoiser is not None:
            raise lab_errors.LabConfigurationError("an oracle pipeline takes no denoiser")
        if self.denoiser is not None and tuple(self.denoiser.config.input_shape) != tuple(self.classifier.input_shape):
            raise lab_errors.LabConfigurationError(
                f"denoiser of {self.name} expects {tuple(self.denoiser.config.input_shape)}, "
                f"classifier {self.classifier.handle_id} expects {self.classifier.input_shape}"
            )

    @torch.no_grad()
    def defend(self, pixels: torch.Tensor, clean: torch.Tensor | None = None) -> torch.Tensor:
        """The image the classifier sees: x̂ clipped to [0, 1], x* itself, or the oracle's x."""
        if self.oracle:
            if clean is None:
                raise lab_errors.LabConfigurationError("the oracle pipeline needs clean references")
            return clean
        if self.denoiser is None:
            return pixels
        denoised, _ = lab_denoisers.denoise(self.denoiser, pixels)
        return denoised.clamp(0.0, 1.0)

    @torch.no_grad()
    def logits(self, pixels: torch.Tensor, clean: torch.Tensor | None = None) -> torch.Tensor:
        logits, _ = self.classifier.predict(self.defend(pixels, clean))
        return logits

    @torch.no_grad()
    def predict(self, pixels: torch.Tensor, clean: torch.Tensor | None = None) -> torch.Tensor:
        return self.logits(pixels, clean).argmax(dim=1)


@dataclasses.dataclass
class EvaluationRow:
    defense: str
    split: str
    attack: str
    epsilon_255: int | None
    samples: int
    accuracy: float
    denoising_loss: float
    kind: RowKind = "attack"

    @property
    def key(self) -> tuple[str, str, str, int | None]:
        return (self.defense, self.split, self.attack, self.epsilon_255)

    def to_dict(self) -> dict[str, typing.Any]:
        return dataclasses.asdict(self)


@dataclasses.dataclass
class EvaluationReport:
    """Rows keyed by (defense, split, attack, ε), plus metadata and annotations."""

    rows: list[EvaluationRow] = dataclasses.field(default_factory=list)
    metadata: dict[str, typing.Any] = dataclasses.field(default_factory=dict)
    annotations: list[str] = dataclasses.field(default_factory=list)

    def merge(self, rows: typing.Iterable[EvaluationRow]) -> "EvaluationReport":
        """Add rows; a row with an existing key replaces the old one in place."""
        index = {row.key: position for position, row in enumerate(self.rows)}
        for row in rows:
            if row.key in index:
                self.rows[index[row.key]] = row
            else:
                index[row.key] = len(self.rows)
                self.rows.append(row)
        return self

    def row(self, defense: str, split: str, attack: str, epsilon_255: int | None = None) -> EvaluationRow:
        for row in self.rows:
            if row.key == (defense, split, attack, epsilon_255):
                return row
        raise lab_errors.LabConfigurationError(
            f"report has no row for {defense}/{split}/{attack}/ε={epsilon_255}"
        )

    def defenses(self) -> list[str]:
        return list(dict.fromkeys(row.defense for row in self.rows))

    def to_table(self, kinds: typing.Collection[str] = ("attack", "aggregate", "clean")) -> Table:
        table = Table(title=self.metadata.get("title")).set_headers(
            ["defense", "split", "attack", "eps", "n", "accuracy", "denoising_loss"]
        )
        for row in self.rows:
            if row.kind in kinds:
                table.add_row(
                    [row.defense, row.split, row.attack, row.epsilon_255, row.samples, row.accuracy, row.denoising_loss]
                )
        return table

    def to_chart(self) -> Chart:
        """Accuracy per defense for every aggregate and clean row."""
        chart = Chart("bar", title=self.metadata.get("title", "Accuracy"))
        for row in self.rows:
            if row.kind == "attack" and any(r.kind == "aggregate" for r in self.rows):
                continue
            suffix = "" if row.epsilon_255 is None else f" ε={row.epsilon_255}"
            chart.add_data(f"{row.split} {row.attack}{suffix}", row.accuracy, series=row.defense)
        return chart

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "metadata": self.metadata,
            "annotations": self.annotations,
            "rows": [row.to_dict() for row in self.rows],
        }

    def save(self, directory: pathlib.Path, name: str = "report") -> dict[str, pathlib.Path]:
        """Write ``<name>.json`` (structured) and ``<name>.txt`` (rendered table)."""
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / f"{name}.json"
        text_path = directory / f"{name}.txt"
        json_path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        rendered = self.to_table().render()
        if self.annotations:
            rendered += "\n" + "\n".join(f"note: {a}" for a in self.annotations) + "\n"
        text_path.write_text(rendered, encoding="utf-8")
        return {"json": json_path, "text": text_path}

    @classmethod
    def load(cls, path: pathlib.Path) -> "EvaluationReport":
        path = pathlib.Path(path)
        if not path.is_file():
            raise lab_errors.LabIOError(f"report not found: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls(
            rows=[EvaluationRow(**row) for row in data["rows"]],
            metadata=data.get("metadata", {}),
            annotations=list(data.get("annotations", [])),
        )


class Evaluator:
    """
    Scores defense pipelines on corpus splits.

    Parameters
    ----------
    logger : UniversalLogger, optional
    batch_size : int
    """

    def __init__(self, logger: lab_logger.UniversalLogger | None = None, batch_size: int = 256) -> None:
        self.logger = logger or lab_logger.default_logger("Evaluator")
        self.batch_size = batch_size

    @torch.no_grad()
    def _score(
        self, pipeline: DefensePipeline, pixels: torch.Tensor, clean: torch.Tensor, labels: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-sample correctness and per-pixel L1 of the defended image against x."""
        correct, losses = [], []
        for start in range(0, len(pixels), self.batch_size):
            stop = start + self.batch_size
            seen = pipeline.defend(pixels[start:stop], clean[start:stop])
            _, predicted = pipeline.classifier.predict(seen)
            correct.append((predicted.cpu() == labels[start:stop].cpu()).double())
            losses.append((seen.cpu() - clean[start:stop].cpu()).abs().flatten(1).double().mean(dim=1))
        if not correct:
            return torch.zeros(0, dtype=torch.float64), torch.zeros(0, dtype=torch.float64)
        return torch.cat(correct), torch.cat(losses)

    def evaluate(
        self, pipeline: DefensePipeline, split: lab_corpus.CorpusSplit, include_clean: bool = True
    ) -> list[EvaluationRow]:
        """
        One row per (attack, ε), one aggregate row per ε and one clean row.

        Raises
        ------
        LabConfigurationError
            If the corpus images do not fit the pipeline.
        """
        shape = tuple(split.adversarial.shape[1:])
        if shape != tuple(pipeline.classifier.input_shape):
            raise lab_errors.LabConfigurationError(
                f"corpus split {split.name} holds {shape} images, {pipeline.name} expects "
                f"{pipeline.classifier.input_shape}"
            )
        correct, losses = self._score(pipeline, split.adversarial, split.clean_for(), split.labels)
        rows: list[EvaluationRow] = []
        per_epsilon: dict[int | None, list[torch.Tensor]] = {}
        for (attack, epsilon), index in split.groups(by_epsilon=True).items():
            rows.append(self._row(pipeline.name, split.name, attack, epsilon, correct[index], losses[index], "attack"))
            per_epsilon.setdefault(epsilon, []).append(index)
        for epsilon, indices in per_epsilon.items():
            index = torch.cat(indices)
            rows.append(
                self._row(pipeline.name, split.name, ALL_ATTACKS, epsilon, correct[index], losses[index], "aggregate")
            )
        if include_clean:
            clean_correct, clean_losses = self._score(pipeline, split.clean, split.clean, split.clean_labels)
            rows.append(self._row(pipeline.name, split.name, CLEAN, 0, clean_correct, clean_losses, "clean"))
        for row in rows:
            if row.kind != "attack":
                self.logger.metric(
                    "evaluation", defense=row.defense, split=row.split, attack=row.attack,
                    eps=row.epsilon_255, accuracy=row.accuracy, denoising_loss=row.denoising_loss,
                )
        return rows

    @staticmethod
    def _row(
        defense: str,
        split: str,
        attack: str,
        epsilon: int | None,
        correct: torch.Tensor,
        losses: torch.Tensor,
        kind: RowKind,
    ) -> EvaluationRow:
        samples = int(correct.numel())
        return EvaluationRow(
            defense=defense,
            split=split,
            attack=attack,
            epsilon_255=epsilon,
            samples=samples,
            accuracy=float(correct.mean()) if samples else float("nan"),
            denoising_loss=float(losses.mean()) if samples else float("nan"),
            kind=kind,
        )

    def report(
        self,
        pipelines: typing.Sequence[DefensePipeline],
        corpus: lab_corpus.AdversarialCorpus,
        splits: typing.Sequence[str],
        metadata: dict[str, typing.Any] | None = None,
    ) -> EvaluationReport:
        report = EvaluationReport(metadata=dict(metadata or {}))
        for split_name in splits:
            split = corpus.split(split_name)
            for pipeline in pipelines:
                report.merge(self.evaluate(pipeline, split))
        return report


def evaluate(
    pipeline: DefensePipeline, split: lab_corpus.CorpusSplit, batch_size: int = 256
) -> list[EvaluationRow]:
    return Evaluator(batch_size=batch_size).evaluate(pipeline, split)


def transfer_model_eval(
    denoiser_guided_by_a: lab_denoisers.DenoiserModel,
    target_b: ClassifierHandle,
    corpus: lab_corpus.AdversarialCorpus,
    splits: typing.Sequence[str] = ("white-test", "black-test"),
    denoiser_guided_by_b: lab_denoisers.DenoiserModel | None = None,
    guide_a: str = "A",
    evaluator: Evaluator | None = None,
) -> EvaluationReport:
    """
    Compare classifier B undefended, behind the A-guided denoiser and, when
    given, behind its own B-guided denoiser.
    """
    pipelines = [
        DefensePipeline(NO_DEFENSE, target_b),
        DefensePipeline(f"guided-by-{guide_a}", target_b, denoiser_guided_by_a),
    ]
    if denoiser_guided_by_b is not None:
        pipelines.append(DefensePipeline(f"guided-by-{target_b.handle_id}", target_b, denoiser_guided_by_b))
    return (evaluator or Evaluator()).report(
        pipelines,
        corpus,
        splits,
        metadata={"target": target_b.handle_id, "guide": guide_a, "title": f"Transfer to {target_b.handle_id}"},
    )


@dataclasses.dataclass
class ClassSplit:
    """A partition of a dataset's classes; `heldout_classes` is empty only in the degenerate case."""

    train_classes: list[int]
    heldout_classes: list[int]
    train_dataset: lab_data.CleanDataset
    heldout_dataset: lab_data.CleanDataset

    @property
    def degenerate(self) -> bool:
        return not self.heldout_classes


def split_classes(dataset: lab_data.CleanDataset, train_fraction: float, seed: int = 0) -> ClassSplit:
    """
    Partition the classes with a seeded permutation.

    ``train_fraction == 1`` is the standard protocol: every class is used for
    training and for evaluation.

    Raises
    ------
    LabConfigurationError
        If the fraction is outside (0, 1] or leaves one side empty.
    """
    if not 0.0 < train_fraction <= 1.0:
        raise lab_errors.LabConfigurationError(f"train fraction must lie in (0, 1], got {train_fraction}")
    every = list(range(dataset.num_classes))
    if train_fraction == 1.0:
        return ClassSplit(every, [], dataset, dataset)
    count = int(round(train_fraction * dataset.num_classes))
    if count < 1 or count >= dataset.num_classes:
        raise lab_errors.LabConfigurationError(
            f"train fraction {train_fraction} of {dataset.num_classes} classes leaves an empty side"
        )
    generator = torch.Generator().manual_seed(seed)
    order = torch.randperm(dataset.num_classes, generator=generator).tolist()
    train_classes, heldout = sorted(order[:count]), sorted(order[count:])
    return ClassSplit(
        train_classes, heldout, dataset.restrict_classes(train_classes), dataset.restrict_classes(heldout)
    )


def _fit_counts(protocol: lab_corpus.CorpusProtocol, dataset: lab_data.CleanDataset) -> lab_corpus.CorpusProtocol:
    """Shrink clean counts so every split fits inside the (restricted) dataset."""
    fitted = {}
    for name, split in protocol.splits.items():
        available = len(dataset.train_labels if split.clean_source == "train" else dataset.test_labels)
        count = max(0, min(split.clean_count, available - split.clean_offset))
        if count < 1:
            raise lab_errors.LabConfigurationError(
                f"class split leaves no {split.clean_source} images for split {name}"
            )
        fitted[name] = dataclasses.replace(split, clean_count=count)
    return dataclasses.replace(protocol, splits=fitted)


@dataclasses.dataclass
class ClassSplitCorpora:
    classes: ClassSplit
    train_corpus: lab_corpus.AdversarialCorpus
    heldout_corpus: lab_corpus.AdversarialCorpus


def class_split_protocol(
    dataset: lab_data.CleanDataset,
    train_fraction: float,
    protocol: lab_corpus.CorpusProtocol,
    classifiers: typing.Mapping[str, ClassifierHandle],
    seed: int = 0,
    forge: lab_corpus.CorpusForge | None = None,
) -> ClassSplitCorpora:
    """
    Forge train/val splits on the training classes and the test splits on
    the held-out classes. Labels keep their original class ids.
    """
    classes = split_classes(dataset, train_fraction, seed)
    forge = forge or lab_corpus.CorpusForge()
    training = [name for name in protocol.splits if name in lab_corpus.TRAINING_SPLITS]
    testing = [name for name in protocol.splits if name not in lab_corpus.TRAINING_SPLITS]
    train_corpus = forge.forge(
        _fit_counts(protocol, classes.train_dataset), classes.train_dataset, classifiers, seed, training
    )
    heldout_corpus = forge.forge(
        _fit_counts(protocol, classes.heldout_dataset), classes.heldout_dataset, classifiers, seed, testing
    )
    return ClassSplitCorpora(classes, train_corpus, heldout_corpus)


def _check_ensemble(pipelines: typing.Sequence[DefensePipeline]) -> None:
    if not pipelines:
        raise lab_errors.LabConfigurationError("ensemble needs at least one pipeline")
    counts = {p.classifier.num_classes for p in pipelines}
    if len(counts) != 1:
        raise lab_errors.LabConfigurationError(f"ensemble members disagree on num_classes: {sorted(counts)}")


@torch.no_grad()
def ensemble_logits(
    pipelines: typing.Sequence[DefensePipeline], pixels: torch.Tensor, clean: torch.Tensor | None = None
) -> torch.Tensor:
    _check_ensemble(pipelines)
    return torch.stack([p.logits(pixels, clean).cpu() for p in pipelines]).mean(dim=0)


def ensemble_defense(
    pipelines: typing.Sequence[DefensePipeline], pixels: torch.Tensor, clean: torch.Tensor | None = None
) -> torch.Tensor:
    """Argmax of the mean of every pipeline's logits."""
    return ensemble_logits(pipelines, pixels, clean).argmax(dim=1)


def ensemble_report(
    pipelines: typing.Sequence[DefensePipeline],
    corpus: lab_corpus.AdversarialCorpus,
    split_name: str = "black-test",
    batch_size: int = 256,
    logger: lab_logger.UniversalLogger | None = None,
) -> EvaluationReport:
    """
    Member and ensemble accuracy per attack row of one split.

    If the ensemble falls below its weakest member the report carries an
    annotation; it is an expectation, not an invariant.
    """
    _check_ensemble(pipelines)
    logger = logger or lab_logger.default_logger("Evaluator")
    split = corpus.split(split_name)
    evaluator = Evaluator(logger=logger, batch_size=batch_size)
    report = EvaluationReport(metadata={"title": f"Ensemble on {split_name}", "members": [p.name for p in pipelines]})
    for pipeline in pipelines:
        report.merge(evaluator.evaluate(pipeline, split, include_clean=False))

    predicted = torch.cat(
        [
            ensemble_defense(pipelines, split.adversarial[start : start + batch_size])
            for start in range(0, len(split), batch_size)
        ]
    )
    correct = (predicted == split.labels).double()
    losses = torch.full((len(split),), float("nan"), dtype=torch.float64)
    for (attack, epsilon), index in split.groups(by_epsilon=True).items():
        row = Evaluator._row("ensemble", split_name, attack, epsilon, correct[index], losses[index], "attack")
        report.merge([row])
        weakest = min(report.row(p.name, split_name, attack, epsilon).accuracy for p in pipelines)
        if row.accuracy < weakest:
            note = f"ensemble accuracy {row.accuracy:.4f} below weakest member {weakest:.4f} on {attack} ε={epsilon}"
            report.annotations.append(note)
            logger.log(note, "warning")
    return report
