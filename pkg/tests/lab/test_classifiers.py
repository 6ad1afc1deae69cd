"""
Tests for classifier handles, architectures and the trainer.
"""
import math

import pytest
import torch

from hgdlab.internal.errors import LabConfigurationError, LabIOError, LabShapeError
from hgdlab.lab.classifiers import (
    ARCHITECTURES,
    FEATURES_TAP,
    LOGITS_TAP,
    ClassifierHandle,
    ClassifierHyperparams,
    ClassifierTrainer,
    build_classifier,
    clone_frozen,
    evaluate_accuracy,
)
from tests.conftest import linear_probe


@pytest.mark.unit
class TestArchitectures:
    @pytest.mark.parametrize("architecture", sorted(ARCHITECTURES))
    def test_every_architecture_ends_with_features_then_logits(self, architecture):
        handle = build_classifier(architecture, (3, 8, 8), 5, width=4)

        assert handle.layer_names[-2:] == [FEATURES_TAP, LOGITS_TAP]
        logits, predicted = handle.predict(torch.rand(2, 3, 8, 8))
        assert logits.shape == (2, 5)
        assert predicted.shape == (2,)

    def test_unknown_architecture(self):
        with pytest.raises(LabConfigurationError, match="unknown architecture"):
            build_classifier("transformer", (3, 8, 8), 10)

    def test_num_classes_must_be_positive(self):
        with pytest.raises(LabConfigurationError):
            build_classifier("linear", (1, 2, 2), 0)

    def test_handle_is_frozen(self, tiny_classifiers):
        handle = tiny_classifiers["A"]
        assert not handle.network.training
        assert all(not p.requires_grad for p in handle.network.parameters())


@pytest.mark.unit
class TestClassifierHandle:
    def test_wrong_input_shape(self, tiny_classifiers):
        with pytest.raises(LabShapeError):
            tiny_classifiers["A"].logits(torch.rand(2, 1, 8, 8))

    def test_taps_in_one_pass(self, tiny_classifiers, image_batch):
        taps = tiny_classifiers["A"].taps(image_batch, ("block1", LOGITS_TAP))
        assert set(taps) == {"block1", LOGITS_TAP}
        assert taps[LOGITS_TAP].shape == (16, 4)

    def test_unknown_tap(self, tiny_classifiers, image_batch):
        with pytest.raises(LabConfigurationError, match="unknown layer 'block9'"):
            tiny_classifiers["A"].tap(image_batch, "block9")

    def test_linear_features_are_the_flattened_image(self):
        handle = build_classifier("linear", (1, 2, 2), 2)
        pixels = torch.rand(3, 1, 2, 2)
        assert torch.equal(handle.tap(pixels, FEATURES_TAP), pixels.flatten(1))

    def test_argmax_ties_go_to_smallest_index(self):
        handle = linear_probe(torch.zeros(3, 4))
        _, predicted = handle.predict(torch.rand(2, 1, 2, 2))
        assert predicted.tolist() == [0, 0]

    def test_input_gradient_label_sources(self):
        handle = linear_probe(torch.tensor([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]]))
        pixels = torch.full((1, 1, 2, 2), 0.5)

        predicted = handle.input_gradient(pixels, "predicted")
        targeted = handle.input_gradient(pixels, "target", target_labels=torch.tensor([1]))
        # Tied logits predict class 0, so the two gradients point in opposite directions.
        assert torch.allclose(predicted, -targeted)
        assert float(predicted.flatten()[0]) < 0.0

    def test_input_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        handle = build_classifier("vgg4", (3, 8, 8), 4, width=4)
        handle.network.double()
        generator = torch.Generator().manual_seed(1)
        pixels = 0.3 + 0.4 * torch.rand(2, 3, 8, 8, generator=generator, dtype=torch.float64)
        labels = torch.tensor([1, 3])

        gradient = handle.input_gradient(pixels, "target", target_labels=labels)

        def loss(x):
            with torch.no_grad():
                return float(torch.nn.functional.cross_entropy(handle.logits(x), labels))

        step = 1e-6
        for index in torch.randperm(pixels.numel(), generator=generator)[:12].tolist():
            offset = torch.zeros(pixels.numel(), dtype=torch.float64)
            offset[index] = step
            offset = offset.view_as(pixels)
            estimate = (loss(pixels + offset) - loss(pixels - offset)) / (2 * step)
            assert float(gradient.flatten()[index]) == pytest.approx(estimate, rel=1e-4, abs=1e-8)

    def test_zero_weights_give_zero_gradient(self):
        handle = linear_probe(torch.zeros(3, 4))
        gradient = handle.input_gradient(torch.rand(5, 1, 2, 2), "target", target_labels=torch.tensor([0, 1, 2, 0, 1]))
        assert torch.equal(gradient, torch.zeros_like(gradient))

    def test_probabilities_sum_to_one(self, tiny_classifiers, image_batch):
        for handle in tiny_classifiers.values():
            sums = handle.probabilities(image_batch).sum(dim=1)
            assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)

    def test_predict_is_repeatable(self, tiny_classifiers, image_batch):
        for handle in tiny_classifiers.values():
            first_logits, first_classes = handle.predict(image_batch)
            second_logits, second_classes = handle.predict(image_batch)
            assert torch.equal(first_logits, second_logits)
            assert torch.equal(first_classes, second_classes)

    def test_input_gradient_needs_labels(self, tiny_classifiers):
        with pytest.raises(LabConfigurationError):
            tiny_classifiers["C"].input_gradient(torch.rand(1, 3, 8, 8), "given")
        with pytest.raises(LabConfigurationError):
            tiny_classifiers["C"].input_gradient(torch.rand(1, 3, 8, 8), "target")

    def test_evaluate_accuracy(self):
        handle = linear_probe(torch.tensor([[1.0, 1.0, 1.0, 1.0], [-1.0, -1.0, -1.0, -1.0]]))
        pixels = torch.rand(4, 1, 2, 2)
        assert evaluate_accuracy(handle, pixels, torch.tensor([0, 0, 1, 1]), batch_size=3) == 0.5
        assert math.isnan(evaluate_accuracy(handle, pixels[:0], torch.tensor([], dtype=torch.long)))

    def test_save_and_load(self, temp_dir, tiny_classifiers, image_batch):
        handle = tiny_classifiers["B"]
        handle.metadata = {"clean_accuracy": 0.5}
        path = handle.save(temp_dir / "classifier.pt")

        loaded = ClassifierHandle.load(path, handle_id="B2")
        assert loaded.handle_id == "B2"
        assert loaded.architecture_id == "resnet8"
        assert loaded.metadata == {"clean_accuracy": 0.5}
        assert torch.allclose(loaded.logits(image_batch), handle.logits(image_batch))

    def test_load_missing_checkpoint(self, temp_dir):
        with pytest.raises(LabIOError):
            ClassifierHandle.load(temp_dir / "absent.pt")

    def test_clone_frozen_is_independent(self, tiny_classifiers):
        clone = clone_frozen(tiny_classifiers["C"], "C-copy")
        with torch.no_grad():
            clone.network.head.weight.zero_()
        assert clone.handle_id == "C-copy"
        assert float(tiny_classifiers["C"].network.head.weight.abs().sum()) > 0.0


@pytest.mark.unit
class TestClassifierTrainer:
    def test_learns_separable_blobs(self, blobs, quiet_logger):
        hyperparams = ClassifierHyperparams(epochs=20, batch_size=32, learning_rate=0.05, weight_decay=0.0)
        handle = ClassifierTrainer(logger=quiet_logger).train(blobs, "linear", hyperparams, handle_id="blob")

        assert handle.handle_id == "blob"
        assert handle.metadata["dataset_id"] == "synthetic-blobs"
        assert handle.metadata["clean_accuracy"] > 0.9
        assert handle.metadata["hyperparams"]["learning_rate"] == 0.05
        assert all(not p.requires_grad for p in handle.network.parameters())

    def test_training_is_seeded(self, blobs, quiet_logger):
        hyperparams = ClassifierHyperparams(epochs=2, batch_size=64, seed=3)
        first = ClassifierTrainer(logger=quiet_logger).train(blobs, "linear", hyperparams)
        second = ClassifierTrainer(logger=quiet_logger).train(blobs, "linear", hyperparams)
        assert torch.equal(first.network.head.weight, second.network.head.weight)

    def test_adversarial_training_runs(self, blobs, quiet_logger):
        hyperparams = ClassifierHyperparams(epochs=1, batch_size=64, adversarial_epsilon=8 / 255)
        handle = ClassifierTrainer(logger=quiet_logger).train(blobs, "linear", hyperparams)
        assert handle.metadata["hyperparams"]["adversarial_epsilon"] == pytest.approx(8 / 255)

    def test_empty_dataset(self, blobs, quiet_logger):
        empty = blobs.restrict_classes([])
        with pytest.raises(LabConfigurationError, match="empty"):
            ClassifierTrainer(logger=quiet_logger).train(empty, "linear", ClassifierHyperparams(epochs=1))

    def test_hyperparams_from_dict_ignores_unknown_keys(self):
        hyperparams = ClassifierHyperparams.from_dict({"epochs": 3, "alias": "vgg4"})
        assert hyperparams.epochs == 3
