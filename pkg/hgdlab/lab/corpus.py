"""
Adversarial corpora: the attack protocol, the forge and the on-disk format.

A corpus directory holds ``corpus.json`` (protocol and provenance) and, per
split, ``<split>.npz`` with the tensors plus ``<split>.manifest.json`` with one
record per adversarial entry.
"""

import dataclasses
import json
import pathlib
import typing

import numpy as np
import torch
import tqdm

import hgdlab.internal.errors as lab_errors
import hgdlab.internal.logger as lab_logger
import hgdlab.lab.attacks as lab_attacks
import hgdlab.lab.checkpoints as lab_checkpoints
import hgdlab.lab.data as lab_data

if typing.TYPE_CHECKING:
    from hgdlab.lab.classifiers import ClassifierHandle

SplitName = typing.Literal["train", "val", "white-test", "black-test"]
SPLITS: tuple[str, ...] = typing.get_args(SplitName)
TRAINING_SPLITS = ("train", "val")
EPSILON_SCALE = 255.0
INVARIANT_TOLERANCE = 1e-6


@dataclasses.dataclass(frozen=True)
class AttackRow:
    """One row of the attack table: a method run against a fixed set of source models."""

    method: lab_attacks.AttackMethod
    sources: tuple[str, ...]
    steps: int = 1
    target_policy: lab_attacks.TargetPolicy = "none"

    @property
    def label(self) -> str:
        return lab_attacks.attack_label(self.method, self.steps, self.target_policy)

    @property
    def name(self) -> str:
        """Attack label qualified by its sources, e.g. ``IFGSM4[vgg4+resnet8]``."""
        return f"{self.label}[{'+'.join(self.sources)}]"

    def spec(self, epsilon: float) -> lab_attacks.AttackSpec:
        return lab_attacks.AttackSpec(
            method=self.method,
            epsilon=epsilon,
            sources=self.sources,
            steps=self.steps,
            target_policy=self.target_policy,
        )

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "method": self.method,
            "sources": list(self.sources),
            "steps": self.steps,
            "target_policy": self.target_policy,
        }

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "AttackRow":
        row = cls(
            method=data["method"],
            sources=tuple(data["sources"]),
            steps=int(data.get("steps", 1)),
            target_policy=data.get("target_policy", "none"),
        )
        row.spec(1.0)  # validates method, steps and policy together
        return row


@dataclasses.dataclass
class SplitProtocol:
    """
    How one split is forged.

    Exactly one of `epsilon_range` (inclusive integer range, one draw per
    entry) or `epsilons` (fixed set, every row run at every value) is given;
    both are in 0-255 units.
    """

    rows: list[AttackRow]
    clean_source: typing.Literal["train", "test"]
    clean_count: int
    clean_offset: int = 0
    epsilon_range: tuple[int, int] | None = None
    epsilons: tuple[int, ...] = ()

    def validate(self, name: str) -> None:
        if not self.rows:
            raise lab_errors.LabConfigurationError(f"split {name} has no attack rows")
        if self.clean_source not in ("train", "test"):
            raise lab_errors.LabConfigurationError(f"split {name}: clean_source must be train or test")
        if self.clean_count < 1 or self.clean_offset < 0:
            raise lab_errors.LabConfigurationError(f"split {name}: clean_count must be positive")
        if (self.epsilon_range is None) == (not self.epsilons):
            raise lab_errors.LabConfigurationError(
                f"split {name}: give exactly one of epsilon_range or epsilons"
            )
        values = list(self.epsilon_range or ()) + list(self.epsilons)
        if any(not 1 <= v <= 255 for v in values):
            raise lab_errors.LabConfigurationError(f"split {name}: epsilons must lie in [1, 255]")
        if self.epsilon_range is not None and self.epsilon_range[0] > self.epsilon_range[1]:
            raise lab_errors.LabConfigurationError(f"split {name}: empty epsilon range")

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "rows": [row.to_dict() for row in self.rows],
            "clean_source": self.clean_source,
            "clean_count": self.clean_count,
            "clean_offset": self.clean_offset,
            "epsilon_range": list(self.epsilon_range) if self.epsilon_range else None,
            "epsilons": list(self.epsilons),
        }

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "SplitProtocol":
        epsilon_range = data.get("epsilon_range")
        return cls(
            rows=[AttackRow.from_dict(row) for row in data["rows"]],
            clean_source=data.get("clean_source", "train"),
            clean_count=int(data["clean_count"]),
            clean_offset=int(data.get("clean_offset", 0)),
            epsilon_range=tuple(epsilon_range) if epsilon_range else None,  # type: ignore[arg-type]
            epsilons=tuple(int(e) for e in data.get("epsilons", ())),
        )


@dataclasses.dataclass
class CorpusProtocol:
    """
    Split definitions plus the two distinguished models.

    Attributes
    ----------
    defended : str
        Model the white-box test attacks must include among their sources.
    holdout : str
        Model reserved for the black-box test split.
    label_source : {"predicted", "true"}
        Labels untargeted attacks score against.
    """

    splits: dict[str, SplitProtocol]
    defended: str
    holdout: str
    label_source: lab_attacks.AttackLabelSource = "predicted"

    @classmethod
    def desk_default(
        cls,
        sources: typing.Sequence[str],
        holdout: str,
        train_count: int = 3000,
        val_count: int = 500,
        test_count: int = 500,
        epsilon_range: tuple[int, int] = (1, 16),
        test_epsilons: tuple[int, ...] = (4, 16),
        label_source: lab_attacks.AttackLabelSource = "predicted",
    ) -> "CorpusProtocol":
        """
        The seven-row training protocol against three source models.

        Train and val: FGSM against each source alone and against all three,
        then IFGSM2/4/8 against all three. White test: FGSM against the
        defended (first) source and IFGSM4 against all three. Black test:
        FGSM and IFGSM4 against the holdout.
        """
        if len(sources) < 1:
            raise lab_errors.LabConfigurationError("the default protocol needs source models")
        every = tuple(sources)
        training_rows = [AttackRow("fgsm", (source,)) for source in every]
        if len(every) > 1:
            training_rows.append(AttackRow("fgsm", every))
        training_rows += [AttackRow("ifgsm", every, steps=n) for n in (2, 4, 8)]
        white = [AttackRow("fgsm", (every[0],)), AttackRow("ifgsm", every, steps=4)]
        black = [AttackRow("fgsm", (holdout,)), AttackRow("ifgsm", (holdout,), steps=4)]
        return cls(
            splits={
                "train": SplitProtocol(training_rows, "train", train_count, 0, epsilon_range),
                "val": SplitProtocol(training_rows, "train", val_count, train_count, epsilon_range),
                "white-test": SplitProtocol(white, "test", test_count, epsilons=test_epsilons),
                "black-test": SplitProtocol(black, "test", test_count, epsilons=test_epsilons),
            },
            defended=every[0],
            holdout=holdout,
            label_source=label_source,
        )

    def source_ids(self) -> list[str]:
        ids: list[str] = []
        for split in self.splits.values():
            for row in split.rows:
                ids.extend(s for s in row.sources if s not in ids)
        return ids

    def validate(self) -> None:
        """
        Raises
        ------
        LabConfigurationError
            For unknown splits or malformed split definitions.
        LabProtocolViolationError
            If the holdout leaks into training splits, white-box rows miss the
            defended model or black-box rows use anything but the holdout.
        """
        unknown = [name for name in self.splits if name not in SPLITS]
        if unknown:
            raise lab_errors.LabConfigurationError(f"unknown corpus split {unknown[0]!r}; known: {SPLITS}")
        if self.label_source not in ("predicted", "true"):
            raise lab_errors.LabConfigurationError(f"unknown label source {self.label_source!r}")
        if self.defended == self.holdout:
            raise lab_errors.LabProtocolViolationError("the defended model cannot be the holdout")
        for name, split in self.splits.items():
            split.validate(name)
            for row in split.rows:
                if name in TRAINING_SPLITS and self.holdout in row.sources:
                    raise lab_errors.LabProtocolViolationError(
                        f"holdout model {self.holdout} appears in {name} row {row.name}"
                    )
                if name == "white-test" and self.defended not in row.sources:
                    raise lab_errors.LabProtocolViolationError(
                        f"white-test row {row.name} does not attack the defended model {self.defended}"
                    )
                if name == "black-test" and row.sources != (self.holdout,):
                    raise lab_errors.LabProtocolViolationError(
                        f"black-test row {row.name} must use only the holdout {self.holdout}"
                    )

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "splits": {name: split.to_dict() for name, split in self.splits.items()},
            "defended": self.defended,
            "holdout": self.holdout,
            "label_source": self.label_source,
        }

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "CorpusProtocol":
        """Build from an explicit ``splits`` mapping or from the desk-default keys."""
        if "splits" in data:
            return cls(
                splits={name: SplitProtocol.from_dict(split) for name, split in data["splits"].items()},
                defended=data["defended"],
                holdout=data["holdout"],
                label_source=data.get("label_source", "predicted"),
            )
        return cls.desk_default(
            sources=data["sources"],
            holdout=data["holdout"],
            train_count=int(data.get("train_count", 3000)),
            val_count=int(data.get("val_count", 500)),
            test_count=int(data.get("test_count", 500)),
            epsilon_range=tuple(data.get("epsilon_range", (1, 16))),  # type: ignore[arg-type]
            test_epsilons=tuple(data.get("test_epsilons", (4, 16))),
            label_source=data.get("label_source", "predicted"),
        )


@dataclasses.dataclass(frozen=True)
class CorpusEntry:
    """Manifest record of one adversarial image; `label` is the true class."""

    clean_id: int
    method: str
    steps: int
    epsilon_255: int
    sources: tuple[str, ...]
    label: int
    target_policy: str = "none"

    @property
    def attack(self) -> str:
        return f"{lab_attacks.attack_label(self.method, self.steps, self.target_policy)}[{'+'.join(self.sources)}]"

    def to_dict(self) -> dict[str, typing.Any]:
        return {
            "clean_id": self.clean_id,
            "method": self.method,
            "steps": self.steps,
            "epsilon_255": self.epsilon_255,
            "sources": list(self.sources),
            "label": self.label,
            "target_policy": self.target_policy,
        }

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "CorpusEntry":
        return cls(
            clean_id=int(data["clean_id"]),
            method=data["method"],
            steps=int(data["steps"]),
            epsilon_255=int(data["epsilon_255"]),
            sources=tuple(data["sources"]),
            label=int(data["label"]),
            target_policy=data.get("target_policy", "none"),
        )


_SPLIT_ARRAYS = ("adversarial", "clean", "clean_ids", "clean_labels", "clean_index", "labels")


@dataclasses.dataclass
class CorpusSplit:
    """
    Adversarial images of one split and the clean images they were made from.

    `clean_index[i]` is the row of `clean` that entry i perturbs; `clean_ids`
    are the dataset indices of those clean images.
    """

    name: str
    adversarial: torch.Tensor
    clean: torch.Tensor
    clean_ids: torch.Tensor
    clean_labels: torch.Tensor
    clean_index: torch.Tensor
    labels: torch.Tensor
    entries: list[CorpusEntry]
    clean_source: str = "train"

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def epsilons(self) -> torch.Tensor:
        return torch.tensor([e.epsilon_255 for e in self.entries], dtype=torch.float32) / EPSILON_SCALE

    def clean_for(self, indices: torch.Tensor | None = None) -> torch.Tensor:
        index = self.clean_index if indices is None else self.clean_index[indices]
        return self.clean[index]

    def adversarial_batch(self, indices: torch.Tensor | None = None) -> lab_data.ImageBatch:
        if indices is None:
            return lab_data.ImageBatch(self.adversarial, self.labels, {"split": self.name})
        return lab_data.ImageBatch(self.adversarial[indices], self.labels[indices], {"split": self.name})

    def clean_batch(self) -> lab_data.ImageBatch:
        return lab_data.ImageBatch(self.clean, self.clean_labels, {"split": self.name, "attack": "clean"})

    def groups(self, by_epsilon: bool = True) -> dict[tuple[str, int | None], torch.Tensor]:
        """Entry indices per (attack, ε numerator), in order of first appearance."""
        buckets: dict[tuple[str, int | None], list[int]] = {}
        for index, entry in enumerate(self.entries):
            key = (entry.attack, entry.epsilon_255 if by_epsilon else None)
            buckets.setdefault(key, []).append(index)
        return {key: torch.tensor(indices, dtype=torch.long) for key, indices in buckets.items()}

    def check_invariants(self, tolerance: float = INVARIANT_TOLERANCE) -> None:
        """Raise if any entry leaves [0, 1] or its recorded ε-ball."""
        if not len(self):
            return
        distance = (self.adversarial - self.clean_for()).abs().flatten(1).max(dim=1).values
        over = distance > self.epsilons + tolerance
        if bool(over.any()):
            first = int(over.nonzero()[0])
            raise lab_errors.LabNumericError(
                f"{self.name} entry {first} exceeds its ε-ball ({float(distance[first]):.6g})"
            )
        if float(self.adversarial.min()) < 0.0 or float(self.adversarial.max()) > 1.0:
            raise lab_errors.LabNumericError(f"{self.name} holds pixels outside [0, 1]")

    def save(self, directory: pathlib.Path) -> None:
        directory = pathlib.Path(directory)
        lab_checkpoints.save_arrays(
            directory / f"{self.name}.npz",
            {
                "adversarial": self.adversarial.numpy().astype(np.float32),
                "clean": self.clean.numpy().astype(np.float32),
                "clean_ids": self.clean_ids.numpy().astype(np.int64),
                "clean_labels": self.clean_labels.numpy().astype(np.int64),
                "clean_index": self.clean_index.numpy().astype(np.int64),
                "labels": self.labels.numpy().astype(np.int64),
            },
        )
        manifest = {
            "split": self.name,
            "clean_source": self.clean_source,
            "entries": [entry.to_dict() for entry in self.entries],
        }
        (directory / f"{self.name}.manifest.json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, directory: pathlib.Path, name: str) -> "CorpusSplit":
        directory = pathlib.Path(directory)
        arrays = lab_checkpoints.load_arrays(directory / f"{name}.npz", _SPLIT_ARRAYS)
        manifest_path = directory / f"{name}.manifest.json"
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise lab_errors.LabIOError(f"cannot read {manifest_path}: {err}") from err
        tensors = {key: torch.from_numpy(value) for key, value in arrays.items()}
        return cls(
            name=name,
            adversarial=tensors["adversarial"],
            clean=tensors["clean"],
            clean_ids=tensors["clean_ids"],
            clean_labels=tensors["clean_labels"],
            clean_index=tensors["clean_index"],
            labels=tensors["labels"],
            entries=[CorpusEntry.from_dict(e) for e in manifest["entries"]],
            clean_source=manifest.get("clean_source", "train"),
        )


@dataclasses.dataclass
class AdversarialCorpus:
    """All forged splits of one corpus together with the protocol that produced them."""

    dataset_id: str
    num_classes: int
    input_shape: tuple[int, int, int]
    protocol: CorpusProtocol
    splits: dict[str, CorpusSplit]
    seed: int = 0

    def split(self, name: str) -> CorpusSplit:
        if name not in self.splits:
            raise lab_errors.LabConfigurationError(
                f"corpus has no split {name!r}; available: {', '.join(self.splits)}"
            )
        return self.splits[name]

    def save(self, directory: pathlib.Path) -> pathlib.Path:
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for split in self.splits.values():
            split.save(directory)
        meta = {
            "dataset_id": self.dataset_id,
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "protocol": self.protocol.to_dict(),
            "splits": list(self.splits),
            "seed": self.seed,
        }
        (directory / "corpus.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: pathlib.Path, splits: typing.Iterable[str] | None = None) -> "AdversarialCorpus":
        directory = pathlib.Path(directory)
        meta_path = directory / "corpus.json"
        if not meta_path.is_file():
            raise lab_errors.LabIOError(f"not a corpus directory: {directory}")
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            available = list(meta["splits"])
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as err:
            raise lab_errors.LabIOError(f"cannot read {meta_path}: {err}") from err
        wanted = list(available if splits is None else splits)
        missing = [name for name in wanted if name not in available]
        if missing:
            raise lab_errors.LabConfigurationError(f"corpus {directory.name} has no split {missing[0]!r}")
        return cls(
            dataset_id=meta["dataset_id"],
            num_classes=int(meta["num_classes"]),
            input_shape=tuple(meta["input_shape"]),  # type: ignore[arg-type]
            protocol=CorpusProtocol.from_dict(meta["protocol"]),
            splits={name: CorpusSplit.load(directory, name) for name in wanted},
            seed=int(meta["seed"]),
        )


class CorpusForge:
    """
    Runs a protocol against clean data and a set of classifiers.

    Parameters
    ----------
    logger : UniversalLogger, optional
    batch_size : int
        Images attacked per forward/backward pass.
    progress : bool
        Show a tqdm bar per attack row.
    """

    def __init__(
        self,
        logger: lab_logger.UniversalLogger | None = None,
        batch_size: int = 128,
        progress: bool = False,
    ) -> None:
        self.logger = logger or lab_logger.default_logger("CorpusForge")
        self.batch_size = batch_size
        self.progress = progress

    def forge(
        self,
        protocol: CorpusProtocol,
        dataset: lab_data.CleanDataset,
        classifiers: typing.Mapping[str, "ClassifierHandle"],
        seed: int = 0,
        splits: typing.Iterable[str] | None = None,
    ) -> AdversarialCorpus:
        protocol.validate()
        missing = [source for source in protocol.source_ids() if source not in classifiers]
        if missing:
            raise lab_errors.LabConfigurationError(
                f"protocol references unknown classifier {missing[0]!r}; registered: {', '.join(classifiers)}"
            )
        for handle_id, handle in classifiers.items():
            if tuple(handle.input_shape) != dataset.input_shape:
                raise lab_errors.LabConfigurationError(
                    f"classifier {handle_id} expects {handle.input_shape}, dataset has {dataset.input_shape}"
                )
        wanted = list(protocol.splits if splits is None else splits)
        forged: dict[str, CorpusSplit] = {}
        for name in wanted:
            if name not in protocol.splits:
                raise lab_errors.LabConfigurationError(f"protocol has no split {name!r}")
            split_index = SPLITS.index(name)
            forged[name] = self._forge_split(
                name, protocol.splits[name], protocol.label_source, dataset, classifiers, seed, split_index
            )
        return AdversarialCorpus(
            dataset_id=dataset.dataset_id,
            num_classes=dataset.num_classes,
            input_shape=dataset.input_shape,
            protocol=protocol,
            splits=forged,
            seed=seed,
        )

    def _forge_split(
        self,
        name: str,
        split: SplitProtocol,
        label_source: lab_attacks.AttackLabelSource,
        dataset: lab_data.CleanDataset,
        classifiers: typing.Mapping[str, "ClassifierHandle"],
        seed: int,
        split_index: int,
    ) -> CorpusSplit:
        images = dataset.train_images if split.clean_source == "train" else dataset.test_images
        labels = dataset.train_labels if split.clean_source == "train" else dataset.test_labels
        stop = split.clean_offset + split.clean_count
        if stop > len(labels):
            raise lab_errors.LabConfigurationError(
                f"split {name} needs {dataset.dataset_id} {split.clean_source} images "
                f"[{split.clean_offset}, {stop}) but only {len(labels)} exist"
            )
        clean = images[split.clean_offset : stop]
        clean_labels = labels[split.clean_offset : stop]
        clean_ids = torch.arange(split.clean_offset, stop, dtype=torch.long)
        count = len(clean_labels)

        adversarial: list[torch.Tensor] = []
        clean_index: list[torch.Tensor] = []
        entries: list[CorpusEntry] = []
        for row_index, row in enumerate(split.rows):
            rng = np.random.default_rng([seed, split_index, row_index])
            generator = torch.Generator().manual_seed(int(rng.integers(0, 2**31 - 1)))
            if split.epsilon_range is not None:
                low, high = split.epsilon_range
                draws = [rng.integers(low, high + 1, size=count)]
            else:
                draws = [np.full(count, value) for value in split.epsilons]
            sources = [classifiers[s] for s in row.sources]
            for eps_255 in draws:
                spec = row.spec(float(eps_255.max()) / EPSILON_SCALE)
                adversarial.append(
                    self._attack_row(spec, sources, clean, clean_labels, eps_255, generator, label_source)
                )
                clean_index.append(torch.arange(count, dtype=torch.long))
                entries.extend(
                    CorpusEntry(
                        clean_id=int(clean_ids[i]),
                        method=row.method,
                        steps=row.steps,
                        epsilon_255=int(eps_255[i]),
                        sources=row.sources,
                        label=int(clean_labels[i]),
                        target_policy=row.target_policy,
                    )
                    for i in range(count)
                )
            self.logger.metric("corpus-row", split=name, attack=row.name, entries=count * len(draws))

        index = torch.cat(clean_index)
        result = CorpusSplit(
            name=name,
            adversarial=torch.cat(adversarial),
            clean=clean.clone(),
            clean_ids=clean_ids,
            clean_labels=clean_labels.clone(),
            clean_index=index,
            labels=clean_labels[index].clone(),
            entries=entries,
            clean_source=split.clean_source,
        )
        result.check_invariants()
        return result

    def _attack_row(
        self,
        spec: lab_attacks.AttackSpec,
        sources: list["ClassifierHandle"],
        clean: torch.Tensor,
        clean_labels: torch.Tensor,
        eps_255: np.ndarray,
        generator: torch.Generator,
        label_source: lab_attacks.AttackLabelSource,
    ) -> torch.Tensor:
        epsilons = torch.from_numpy(eps_255.astype(np.float32)) / EPSILON_SCALE
        device = sources[0].device
        chunks = []
        starts = range(0, len(clean), self.batch_size)
        for start in tqdm.tqdm(starts, desc=spec.label, disable=not self.progress, leave=False):
            stop = start + self.batch_size
            batch = lab_data.ImageBatch(clean[start:stop].to(device), clean_labels[start:stop].to(device))
            attacked = lab_attacks.run_attack(
                spec, sources, batch, epsilons[start:stop].to(device), generator, label_source
            )
            chunks.append(attacked.pixels.cpu())
        return torch.cat(chunks)


def forge_corpus(
    protocol: CorpusProtocol,
    dataset: lab_data.CleanDataset,
    classifiers: typing.Mapping[str, "ClassifierHandle"],
    seed: int = 0,
    directory: pathlib.Path | None = None,
    logger: lab_logger.UniversalLogger | None = None,
    batch_size: int = 128,
    progress: bool = False,
) -> AdversarialCorpus:
    """Forge every split of `protocol` and, when `directory` is given, write the corpus there."""
    corpus = CorpusForge(logger=logger, batch_size=batch_size, progress=progress).forge(
        protocol, dataset, classifiers, seed
    )
    if directory is not None:
        corpus.save(directory)
    return corpus
