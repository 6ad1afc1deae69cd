"""
Tests for DAE and DUNET denoisers.
"""
import pytest
import torch

from hgdlab.internal.errors import LabConfigurationError, LabShapeError
from hgdlab.lab.denoisers import DenoiserConfig, DenoiserModel, build_denoiser, denoise


def small_config(family="dunet", **overrides):
    values = {
        "family": family,
        "block_widths": [4, 8, 8],
        "blocks_per_scale": [1, 2, 2],
        "input_shape": (3, 8, 8),
    }
    values.update(overrides)
    return DenoiserConfig(**values)


@pytest.mark.unit
class TestDenoiserConfig:
    def test_decoder_mirrors_encoder(self):
        assert DenoiserConfig(blocks_per_scale=[2, 3, 3]).decoder_blocks == [3, 2]
        assert small_config(feedback_blocks=[1, 1]).decoder_blocks == [1, 1]

    def test_paper_preset(self):
        config = DenoiserConfig.paper_preset((3, 32, 32))
        assert config.scales == 5
        assert config.blocks_per_scale == [2, 3, 3, 3, 3]
        assert config.decoder_blocks == [3, 3, 3, 2]
        config.validate()

    @pytest.mark.parametrize(
        "overrides",
        [
            {"family": "unet"},
            {"block_widths": [4, 8]},
            {"block_widths": [4], "blocks_per_scale": [1]},
            {"blocks_per_scale": [1, 0, 2]},
            {"feedback_blocks": [1]},
            {"input_shape": (3, 6, 6)},
        ],
    )
    def test_invalid_topology(self, overrides):
        with pytest.raises(LabConfigurationError):
            small_config(**overrides).validate()

    def test_from_dict_rejects_unknown_option(self):
        with pytest.raises(LabConfigurationError, match="unknown denoiser option"):
            DenoiserConfig.from_dict({"family": "dae", "depth": 3})

    def test_to_dict_reloads(self):
        config = small_config("dae")
        assert DenoiserConfig.from_dict(config.to_dict()) == config


@pytest.mark.unit
class TestDenoiserModel:
    @pytest.mark.parametrize("family", ["dae", "dunet"])
    def test_output_is_input_minus_noise(self, family):
        model = build_denoiser(small_config(family)).eval()
        x = torch.rand(2, 3, 8, 8)
        with torch.no_grad():
            x_hat, d_hat = model(x)

        assert x_hat.shape == x.shape
        assert torch.allclose(x_hat, x - d_hat, atol=1e-6)

    def test_zero_initialised_dunet_is_identity(self):
        model = build_denoiser(small_config(zero_init_output=True)).eval()
        x = torch.rand(2, 3, 8, 8)
        x_hat, d_hat = denoise(model, x)

        assert torch.allclose(x_hat, x)
        assert float(d_hat.abs().max()) == 0.0

    def test_lateral_connections_only_in_dunet(self):
        dunet = build_denoiser(small_config("dunet"))
        dae = build_denoiser(small_config("dae"))
        assert dunet.decoder[0][0].in_channels == 8 + 8
        assert dae.decoder[0][0].in_channels == 8

    def test_wrong_shape(self):
        model = build_denoiser(small_config())
        with pytest.raises(LabShapeError):
            model(torch.rand(2, 1, 8, 8))

    def test_denoise_in_chunks_matches_one_pass(self):
        torch.manual_seed(0)
        model = build_denoiser(small_config()).eval()
        x = torch.rand(5, 3, 8, 8)
        with torch.no_grad():
            expected, _ = model(x)
        chunked, _ = denoise(model, x, batch_size=2)
        assert torch.allclose(chunked, expected, atol=1e-6)

    def test_denoise_empty_batch(self):
        model = build_denoiser(small_config())
        x_hat, d_hat = denoise(model, torch.zeros(0, 3, 8, 8))
        assert x_hat.shape == (0, 3, 8, 8)
        assert d_hat.shape == (0, 3, 8, 8)

    def test_save_and_load(self, temp_dir):
        torch.manual_seed(0)
        model = build_denoiser(small_config("dae"))
        model.metadata = {"best_epoch": 2}
        path = model.save(temp_dir / "denoiser.pt")

        loaded = DenoiserModel.load(path)
        x = torch.rand(3, 3, 8, 8)
        assert loaded.config == model.config
        assert loaded.metadata == {"best_epoch": 2}
        assert not loaded.training
        assert torch.allclose(denoise(loaded, x)[0], denoise(model, x)[0])

    def test_classifier_checkpoint_is_not_a_denoiser(self, temp_dir, tiny_classifiers):
        path = tiny_classifiers["C"].save(temp_dir / "classifier.pt")
        with pytest.raises(LabConfigurationError, match="expected denoiser"):
            DenoiserModel.load(path)
