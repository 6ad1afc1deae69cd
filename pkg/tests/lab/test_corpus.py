"""
Tests for the attack protocol, the corpus forge and the corpus format.
"""
import pytest
import torch

from hgdlab.internal.errors import (
    LabConfigurationError,
    LabIOError,
    LabNumericError,
    LabProtocolViolationError,
)
from hgdlab.lab.corpus import (
    AdversarialCorpus,
    AttackRow,
    CorpusForge,
    CorpusProtocol,
    SplitProtocol,
    forge_corpus,
)


@pytest.fixture
def forged(tiny_protocol, patterns, tiny_classifiers, quiet_logger):
    return CorpusForge(logger=quiet_logger, batch_size=16).forge(tiny_protocol, patterns, tiny_classifiers, seed=0)


@pytest.mark.unit
class TestCorpusProtocol:
    def test_desk_default_rows(self, tiny_protocol):
        train_rows = [row.name for row in tiny_protocol.splits["train"].rows]
        assert train_rows == [
            "FGSM[A]",
            "FGSM[B]",
            "FGSM[C]",
            "FGSM[A+B+C]",
            "IFGSM2[A+B+C]",
            "IFGSM4[A+B+C]",
            "IFGSM8[A+B+C]",
        ]
        assert [row.name for row in tiny_protocol.splits["white-test"].rows] == ["FGSM[A]", "IFGSM4[A+B+C]"]
        assert [row.name for row in tiny_protocol.splits["black-test"].rows] == ["FGSM[H]", "IFGSM4[H]"]
        assert tiny_protocol.defended == "A"
        assert tiny_protocol.splits["val"].clean_offset == 8

    def test_source_ids(self, tiny_protocol):
        assert tiny_protocol.source_ids() == ["A", "B", "C", "H"]

    def test_holdout_in_training_split(self, tiny_protocol):
        tiny_protocol.splits["train"].rows.append(AttackRow("fgsm", ("H",)))
        with pytest.raises(LabProtocolViolationError, match="holdout"):
            tiny_protocol.validate()

    def test_black_test_only_uses_holdout(self, tiny_protocol):
        tiny_protocol.splits["black-test"].rows = [AttackRow("fgsm", ("A",))]
        with pytest.raises(LabProtocolViolationError):
            tiny_protocol.validate()

    def test_white_test_must_attack_defended(self, tiny_protocol):
        tiny_protocol.splits["white-test"].rows = [AttackRow("fgsm", ("B",))]
        with pytest.raises(LabProtocolViolationError):
            tiny_protocol.validate()

    def test_defended_is_not_holdout(self):
        protocol = CorpusProtocol.desk_default(["A", "B"], holdout="A")
        with pytest.raises(LabProtocolViolationError):
            protocol.validate()

    def test_violation_is_a_configuration_error(self, tiny_protocol):
        tiny_protocol.splits["black-test"].rows = [AttackRow("fgsm", ("A",))]
        with pytest.raises(LabConfigurationError) as excinfo:
            tiny_protocol.validate()
        assert excinfo.value.exit_code == 2

    def test_unknown_split(self, tiny_protocol):
        tiny_protocol.splits["extra"] = tiny_protocol.splits["train"]
        with pytest.raises(LabConfigurationError, match="unknown corpus split"):
            tiny_protocol.validate()

    @pytest.mark.parametrize(
        "split",
        [
            SplitProtocol([AttackRow("fgsm", ("A",))], "train", 4, epsilon_range=(1, 16), epsilons=(4,)),
            SplitProtocol([AttackRow("fgsm", ("A",))], "train", 4),
            SplitProtocol([AttackRow("fgsm", ("A",))], "train", 4, epsilons=(0,)),
            SplitProtocol([AttackRow("fgsm", ("A",))], "train", 4, epsilon_range=(16, 1)),
            SplitProtocol([AttackRow("fgsm", ("A",))], "train", 0, epsilons=(4,)),
            SplitProtocol([], "train", 4, epsilons=(4,)),
        ],
    )
    def test_malformed_split(self, split):
        with pytest.raises(LabConfigurationError):
            split.validate("train")

    def test_from_dict_desk_keys(self):
        protocol = CorpusProtocol.from_dict(
            {"sources": ["A", "B"], "holdout": "H", "train_count": 5, "test_epsilons": [8]}
        )
        assert protocol.splits["train"].clean_count == 5
        assert protocol.splits["black-test"].epsilons == (8,)

    def test_to_dict_reloads(self, tiny_protocol):
        assert CorpusProtocol.from_dict(tiny_protocol.to_dict()) == tiny_protocol

    def test_row_from_dict_validates(self):
        with pytest.raises(LabConfigurationError):
            AttackRow.from_dict({"method": "fgsm", "sources": ["A"], "steps": 3})


@pytest.mark.unit
class TestCorpusForge:
    def test_split_sizes(self, forged):
        assert len(forged.split("train")) == 7 * 8
        assert len(forged.split("val")) == 7 * 4
        assert len(forged.split("white-test")) == 2 * 2 * 4
        assert len(forged.split("black-test")) == 2 * 2 * 4

    def test_epsilons_follow_protocol(self, forged):
        train_eps = {entry.epsilon_255 for entry in forged.split("train").entries}
        assert train_eps <= set(range(1, 17))
        assert {entry.epsilon_255 for entry in forged.split("white-test").entries} == {4, 16}

    def test_entries_stay_in_budget(self, forged):
        for split in forged.splits.values():
            split.check_invariants()
            distance = (split.adversarial - split.clean_for()).abs().flatten(1).max(dim=1).values
            assert bool((distance <= split.epsilons + 1e-6).all())

    def test_labels_are_true_classes(self, forged, patterns):
        split = forged.split("val")
        assert torch.equal(split.clean_ids, torch.arange(8, 12))
        assert torch.equal(split.labels, patterns.train_labels[8:12][split.clean_index])
        assert [entry.label for entry in split.entries] == split.labels.tolist()

    def test_holdout_never_in_training_entries(self, forged):
        for name in ("train", "val"):
            assert all("H" not in entry.sources for entry in forged.split(name).entries)
        assert all(entry.sources == ("H",) for entry in forged.split("black-test").entries)

    def test_seeded(self, tiny_protocol, patterns, tiny_classifiers, quiet_logger, forged):
        again = CorpusForge(logger=quiet_logger, batch_size=16).forge(tiny_protocol, patterns, tiny_classifiers, seed=0)
        for name, split in forged.splits.items():
            assert torch.equal(split.adversarial, again.split(name).adversarial)
            assert split.entries == again.split(name).entries

    def test_selected_splits(self, tiny_protocol, patterns, tiny_classifiers, quiet_logger):
        corpus = CorpusForge(logger=quiet_logger).forge(
            tiny_protocol, patterns, tiny_classifiers, splits=["white-test"]
        )
        assert list(corpus.splits) == ["white-test"]

    def test_unknown_classifier(self, tiny_protocol, patterns, tiny_classifiers, quiet_logger):
        del tiny_classifiers["H"]
        with pytest.raises(LabConfigurationError, match="unknown classifier 'H'"):
            CorpusForge(logger=quiet_logger).forge(tiny_protocol, patterns, tiny_classifiers)

    def test_not_enough_clean_images(self, patterns, tiny_classifiers, quiet_logger):
        protocol = CorpusProtocol.desk_default(["A", "B", "C"], "H", train_count=90, val_count=10)
        with pytest.raises(LabConfigurationError, match="only 96 exist"):
            CorpusForge(logger=quiet_logger).forge(protocol, patterns, tiny_classifiers)

    def test_groups_in_order_of_appearance(self, forged):
        keys = list(forged.split("white-test").groups(by_epsilon=True))
        assert keys == [("FGSM[A]", 4), ("FGSM[A]", 16), ("IFGSM4[A+B+C]", 4), ("IFGSM4[A+B+C]", 16)]
        assert list(forged.split("white-test").groups(by_epsilon=False)) == [("FGSM[A]", None), ("IFGSM4[A+B+C]", None)]

    def test_check_invariants_detects_escape(self, forged):
        split = forged.split("white-test")
        split.adversarial = split.clean_for().clone()
        split.adversarial[0, 0, 0, 0] = 1.0 if float(split.clean_for()[0, 0, 0, 0]) < 0.5 else 0.0
        with pytest.raises(LabNumericError, match="ε-ball"):
            split.check_invariants()


@pytest.mark.unit
class TestCorpusFormat:
    def test_save_and_load(self, forged, temp_dir):
        forged.save(temp_dir / "corpus")
        loaded = AdversarialCorpus.load(temp_dir / "corpus")

        assert loaded.protocol == forged.protocol
        assert list(loaded.splits) == list(forged.splits)
        assert torch.equal(loaded.split("train").adversarial, forged.split("train").adversarial)
        assert loaded.split("train").entries == forged.split("train").entries
        assert (temp_dir / "corpus" / "train.manifest.json").is_file()

    def test_save_is_byte_stable(self, forged, temp_dir):
        forged.save(temp_dir / "one")
        forged.save(temp_dir / "two")
        for name in ("train.npz", "black-test.npz", "corpus.json", "val.manifest.json"):
            assert (temp_dir / "one" / name).read_bytes() == (temp_dir / "two" / name).read_bytes()

    def test_load_subset(self, forged, temp_dir):
        forged.save(temp_dir / "corpus")
        loaded = AdversarialCorpus.load(temp_dir / "corpus", splits=["black-test"])
        assert list(loaded.splits) == ["black-test"]
        with pytest.raises(LabConfigurationError):
            loaded.split("train")

    def test_load_missing(self, temp_dir):
        with pytest.raises(LabIOError):
            AdversarialCorpus.load(temp_dir)

    @pytest.mark.parametrize("text", ['{"dataset_id": "synthetic-patterns"', '{"dataset_id": "synthetic-patterns"}'])
    def test_load_unreadable_metadata(self, temp_dir, text):
        (temp_dir / "corpus.json").write_text(text, encoding="utf-8")
        with pytest.raises(LabIOError) as excinfo:
            AdversarialCorpus.load(temp_dir)
        assert excinfo.value.exit_code == 4

    def test_forge_corpus_writes_directory(self, tiny_protocol, patterns, tiny_classifiers, quiet_logger, temp_dir):
        forge_corpus(tiny_protocol, patterns, tiny_classifiers, directory=temp_dir / "c", logger=quiet_logger)
        assert (temp_dir / "c" / "corpus.json").is_file()
        assert (temp_dir / "c" / "white-test.npz").is_file()
