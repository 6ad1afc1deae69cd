"""
Tests for the figure emitters.
"""
import pytest
import torch

from hgdlab.internal.errors import LabConfigurationError
from hgdlab.lab.analysis import PerturbationProfile, noise_scatter
from hgdlab.lab.plotting import plot_bar_chart, plot_denoising_demo, plot_noise_scatters, plot_profiles
from hgdlab.results import Chart

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@pytest.fixture
def profiles():
    names = ["pixels", "block1", "features", "logits"]
    return [
        PerturbationProfile(names, [0.02, 0.1, 0.4, 0.9], "adversarial", 10),
        PerturbationProfile(names, [0.02, 0.03, 0.02, 0.01], "random-noise", 10),
    ]


@pytest.fixture
def scatter():
    generator = torch.Generator().manual_seed(0)
    clean = 0.3 + 0.4 * torch.rand(4, 3, 8, 8, generator=generator)
    adversarial = (clean + 0.03 * torch.sign(torch.randn(clean.shape, generator=generator))).clamp(0.0, 1.0)
    return noise_scatter(clean, adversarial, clean + 0.01, "LGD", bins=21, extent=0.05)


@pytest.mark.unit
class TestProfilesFigure:
    def test_writes_png_without_software_tag(self, profiles, temp_dir):
        path = plot_profiles(profiles, temp_dir / "figures" / "profiles.png")
        data = path.read_bytes()
        assert data.startswith(PNG_SIGNATURE)
        assert b"Software" not in data

    def test_same_input_same_bytes(self, profiles, temp_dir):
        first = plot_profiles(profiles, temp_dir / "a.png").read_bytes()
        second = plot_profiles(profiles, temp_dir / "b.png").read_bytes()
        assert first == second

    def test_rejects_mixed_layers(self, profiles, temp_dir):
        profiles.append(PerturbationProfile(["pixels", "logits"], [0.1, 0.2], "other", 1))
        with pytest.raises(LabConfigurationError):
            plot_profiles(profiles, temp_dir / "p.png")

    def test_rejects_empty(self, temp_dir):
        with pytest.raises(LabConfigurationError):
            plot_profiles([], temp_dir / "p.png")


@pytest.mark.unit
class TestOtherFigures:
    def test_noise_scatters(self, scatter, temp_dir):
        path = plot_noise_scatters([scatter, scatter], temp_dir / "scatter.png")
        assert path.read_bytes().startswith(PNG_SIGNATURE)

    def test_bar_chart(self, temp_dir):
        chart = Chart("bar", title="Accuracy")
        chart.add_data("white-test all", 0.2, series="NA").add_data("white-test all", 0.7, series="LGD")
        chart.add_data("black-test all", 0.3, series="NA")
        path = plot_bar_chart(chart, temp_dir / "accuracy.png")
        assert path.read_bytes().startswith(PNG_SIGNATURE)

    def test_empty_bar_chart(self, temp_dir):
        with pytest.raises(LabConfigurationError):
            plot_bar_chart(Chart(), temp_dir / "accuracy.png")

    @pytest.mark.parametrize("channels", [1, 3])
    def test_denoising_demo(self, channels, temp_dir):
        clean = torch.rand(3, channels, 8, 8)
        adversarial = (clean + 0.05).clamp(0.0, 1.0)
        path = plot_denoising_demo(clean, adversarial, {"LGD": clean}, temp_dir / "demo.png", samples=2)
        assert path.read_bytes().startswith(PNG_SIGNATURE)
