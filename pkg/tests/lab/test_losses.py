"""
Tests for the pixel, feature, logit and class guided losses.
"""
import math

import pytest
import torch
import torch.nn.functional as F

from hgdlab.internal.errors import LabConfigurationError, LabShapeError
from hgdlab.lab.denoisers import DenoiserConfig, build_denoiser
from hgdlab.lab.losses import GuidedLoss, GuidedLossSpec, cgd_loss, hgd_loss, per_sample_l1, pgd_loss
from tests.conftest import linear_probe


@pytest.mark.unit
class TestGuidedLossSpec:
    def test_default_taps(self):
        assert GuidedLossSpec("fgd", "A").tap == "features"
        assert GuidedLossSpec("lgd", "A").tap == "logits"
        assert GuidedLossSpec("fgd", "A", tap="block2").tap == "block2"
        assert GuidedLossSpec("pgd").tap is None

    @pytest.mark.parametrize(
        "kind, guide, tap",
        [
            ("mse", "A", None),
            ("pgd", "A", None),
            ("lgd", None, None),
            ("cgd", "A", "logits"),
        ],
    )
    def test_invalid(self, kind, guide, tap):
        with pytest.raises(LabConfigurationError):
            GuidedLossSpec(kind, guide, tap)

    def test_only_cgd_needs_labels(self):
        assert GuidedLossSpec("cgd", "A").needs_labels
        assert not GuidedLossSpec("lgd", "A").needs_labels

    def test_to_dict_reloads(self):
        spec = GuidedLossSpec("fgd", "vgg4", tap="block3")
        assert GuidedLossSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.unit
class TestPixelLoss:
    def test_per_sample_l1_divides_by_element_count(self):
        a = torch.zeros(2, 1, 2, 2)
        b = torch.zeros(2, 1, 2, 2)
        b[0] = 1.0
        b[1, 0, 0, 0] = 2.0
        assert per_sample_l1(a, b).tolist() == [1.0, 0.5]
        assert float(pgd_loss(a, b)) == pytest.approx(0.75)

    def test_shape_mismatch(self):
        with pytest.raises(LabShapeError):
            per_sample_l1(torch.zeros(2, 4), torch.zeros(2, 5))


@pytest.mark.unit
class TestGuidedLoss:
    def test_pgd_needs_no_classifier(self):
        loss = GuidedLoss(GuidedLossSpec("pgd"))
        clean = torch.rand(2, 3, 8, 8)
        assert float(loss(clean, clean)) == 0.0

    @pytest.mark.parametrize("kind", ["fgd", "lgd"])
    def test_representation_loss_is_zero_on_clean(self, kind, tiny_classifiers):
        loss = GuidedLoss(GuidedLossSpec(kind, "A"), tiny_classifiers["A"])
        clean = torch.rand(4, 3, 8, 8)
        assert float(loss(clean, clean.clone())) == pytest.approx(0.0, abs=1e-7)
        assert float(loss(clean, (clean + 0.2).clamp(0.0, 1.0))) > 0.0

    def test_lgd_matches_logit_distance(self, tiny_classifiers):
        guide = tiny_classifiers["C"]
        loss = GuidedLoss(GuidedLossSpec("lgd", "C"), guide)
        clean, denoised = torch.rand(3, 3, 8, 8), torch.rand(3, 3, 8, 8)

        expected = (guide.logits(denoised) - guide.logits(clean)).abs().mean(dim=1).mean()
        assert torch.allclose(loss(clean, denoised), expected)

    def test_gradient_reaches_denoised_only(self, tiny_classifiers):
        loss = GuidedLoss(GuidedLossSpec("fgd", "A"), tiny_classifiers["A"])
        clean = torch.rand(2, 3, 8, 8, requires_grad=True)
        denoised = torch.rand(2, 3, 8, 8, requires_grad=True)
        loss(clean, denoised).backward()

        assert clean.grad is None
        assert denoised.grad is not None
        assert all(p.grad is None for p in tiny_classifiers["A"].network.parameters())

    def test_cgd_is_cross_entropy(self, tiny_classifiers):
        guide = tiny_classifiers["B"]
        loss = GuidedLoss(GuidedLossSpec("cgd", "B"), guide)
        clean, denoised = torch.rand(3, 3, 8, 8), torch.rand(3, 3, 8, 8)
        labels = torch.tensor([0, 1, 3])

        assert torch.allclose(loss(clean, denoised, labels), F.cross_entropy(guide.logits(denoised), labels))
        with pytest.raises(LabConfigurationError, match="labels"):
            loss(clean, denoised)

    def test_identity_tap_matches_pixel_loss(self, tiny_classifiers):
        loss = GuidedLoss(GuidedLossSpec("fgd", "C"), tiny_classifiers["C"])
        clean, denoised = torch.rand(3, 3, 8, 8), torch.rand(3, 3, 8, 8)
        assert torch.allclose(loss(clean, denoised), pgd_loss(clean, denoised))

    def test_uniform_logits_give_log_class_count(self):
        guide = linear_probe(torch.zeros(3, 4), handle_id="Z")
        value = cgd_loss(GuidedLossSpec("cgd", "Z"), guide, torch.rand(5, 1, 2, 2), torch.tensor([0, 1, 2, 0, 1]))
        assert float(value) == pytest.approx(math.log(3))

    def test_denoiser_gradient_matches_finite_differences(self, tiny_classifiers):
        guide = tiny_classifiers["C"]
        guide.network.double()
        torch.manual_seed(0)
        model = build_denoiser(DenoiserConfig(block_widths=[4, 8], blocks_per_scale=[1, 1], input_shape=(3, 8, 8)))
        model.double().eval()
        generator = torch.Generator().manual_seed(3)
        clean = 0.3 + 0.4 * torch.rand(2, 3, 8, 8, generator=generator, dtype=torch.float64)
        adversarial = clean + 0.03 * torch.sign(torch.randn(clean.shape, generator=generator, dtype=torch.float64))
        spec = GuidedLossSpec("lgd", "C")

        def objective():
            return hgd_loss(spec, guide, clean, model(adversarial)[0])

        model.zero_grad()
        objective().backward()
        step = 1e-6
        parameters = [p for p in model.parameters() if p.requires_grad]
        for parameter in parameters[:5] + parameters[-5:]:
            flat, gradient = parameter.data.view(-1), parameter.grad.view(-1)
            original = float(flat[0])
            with torch.no_grad():
                flat[0] = original + step
                upper = float(objective())
                flat[0] = original - step
                lower = float(objective())
                flat[0] = original
            estimate = (upper - lower) / (2 * step)
            assert float(gradient[0]) == pytest.approx(estimate, rel=1e-3, abs=1e-7)

    def test_guided_kinds_need_a_classifier(self):
        with pytest.raises(LabConfigurationError):
            GuidedLoss(GuidedLossSpec("lgd", "A"))

    def test_unknown_tap(self, tiny_classifiers):
        with pytest.raises(LabConfigurationError, match="unknown layer"):
            GuidedLoss(GuidedLossSpec("fgd", "A", tap="block7"), tiny_classifiers["A"])
