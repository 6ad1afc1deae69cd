"""
DAE and DUNET denoisers.

Both share an encoder of k scales: a plain conv block at full resolution,
then blocks whose first convolution has stride 2. The DUNET decoder upsamples
bilinearly, concatenates the lateral encoder map of the same scale and emits
the negative noise through a 1×1 convolution, so ``x̂ = x* − dx̂`` holds by
construction. The DAE decoder has no lateral inputs and emits x̂ itself.
"""

import dataclasses
import pathlib
import typing

import torch
import torch.nn.functional as F
from torch import nn

import hgdlab.internal.errors as lab_errors
import hgdlab.lab.checkpoints as lab_checkpoints

DenoiserFamily = typing.Literal["dae", "dunet"]
FAMILIES: tuple[str, ...] = typing.get_args(DenoiserFamily)


@dataclasses.dataclass
class DenoiserConfig:
    """
    Topology of a denoiser.

    Attributes
    ----------
    family : {"dae", "dunet"}
    block_widths : list[int]
        Channel count at every scale, finest first.
    blocks_per_scale : list[int]
        Convolutions per encoder block, finest first.
    input_shape : tuple[int, int, int]
        (channels, height, width); both sides must divide by 2**(scales-1).
    feedback_blocks : list[int] | None
        Convolutions per decoder block, coarsest first. Defaults to the
        encoder counts mirrored, e.g. ``[2, 3, 3]`` gives ``[3, 2]``.
    zero_init_output : bool
        Zero the final 1×1 convolution.
    """

    family: DenoiserFamily = "dunet"
    block_widths: list[int] = dataclasses.field(default_factory=lambda: [32, 64, 128])
    blocks_per_scale: list[int] = dataclasses.field(default_factory=lambda: [2, 3, 3])
    input_shape: tuple[int, int, int] = (3, 32, 32)
    feedback_blocks: list[int] | None = None
    zero_init_output: bool = False

    @property
    def scales(self) -> int:
        return len(self.block_widths)

    @property
    def decoder_blocks(self) -> list[int]:
        if self.feedback_blocks is not None:
            return list(self.feedback_blocks)
        return list(reversed(self.blocks_per_scale[:-1]))

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise lab_errors.LabConfigurationError(f"unknown denoiser family {self.family!r}")
        if len(self.block_widths) != len(self.blocks_per_scale) or self.scales < 2:
            raise lab_errors.LabConfigurationError(
                "block_widths and blocks_per_scale must have equal length of at least 2, got "
                f"{len(self.block_widths)} and {len(self.blocks_per_scale)}"
            )
        if min(self.block_widths) < 1 or min(self.blocks_per_scale) < 1:
            raise lab_errors.LabConfigurationError("widths and block counts must be positive")
        decoder = self.decoder_blocks
        if len(decoder) != self.scales - 1:
            raise lab_errors.LabConfigurationError(
                f"{self.scales} encoder scales need {self.scales - 1} decoder blocks, got {len(decoder)}"
            )
        if decoder and min(decoder) < 1:
            raise lab_errors.LabConfigurationError("decoder block counts must be positive")
        factor = 2 ** (self.scales - 1)
        _, height, width = self.input_shape
        if height % factor or width % factor:
            raise lab_errors.LabConfigurationError(
                f"input sides {height}x{width} must be divisible by {factor} for {self.scales} scales"
            )

    def to_dict(self) -> dict[str, typing.Any]:
        data = dataclasses.asdict(self)
        data["input_shape"] = list(self.input_shape)
        return data

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "DenoiserConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise lab_errors.LabConfigurationError(f"unknown denoiser option {unknown[0]!r}")
        values = dict(data)
        if "input_shape" in values:
            values["input_shape"] = tuple(values["input_shape"])
        return cls(**values)

    @classmethod
    def paper_preset(
        cls, input_shape: tuple[int, int, int], family: DenoiserFamily = "dunet"
    ) -> "DenoiserConfig":
        """Five scales: C2 C3 C3 C3 C3 down, C3 C3 C3 C2 up."""
        return cls(
            family=family,
            block_widths=[64, 128, 256, 256, 256],
            blocks_per_scale=[2, 3, 3, 3, 3],
            input_shape=input_shape,
        )


class ConvBlock(nn.Sequential):
    """`depth` × (3×3 conv, batch norm, ReLU); the first conv may downsample."""

    def __init__(self, in_ch: int, out_ch: int, depth: int, stride: int = 1) -> None:
        layers: list[nn.Module] = []
        for index in range(depth):
            layers += [
                nn.Conv2d(
                    in_ch if index == 0 else out_ch,
                    out_ch,
                    3,
                    stride=stride if index == 0 else 1,
                    padding=1,
                    bias=False,
                ),
                nn.BatchNorm2d(out_ch),
                nn.ReLU(inplace=True),
            ]
        super().__init__(*layers)


class DenoiserModel(nn.Module):
    """
    Maps adversarial images x* to ``(x̂, dx̂)``.

    Outputs are not clipped; callers clip x̂ to [0, 1] before classification.
    """

    def __init__(self, config: DenoiserConfig) -> None:
        super().__init__()
        config.validate()
        self.config = config
        self.metadata: dict[str, typing.Any] = {}
        channels = config.input_shape[0]
        widths, depths = config.block_widths, config.blocks_per_scale
        lateral = config.family == "dunet"

        self.encoder = nn.ModuleList()
        in_ch = channels
        for scale, (width, depth) in enumerate(zip(widths, depths)):
            self.encoder.append(ConvBlock(in_ch, width, depth, stride=1 if scale == 0 else 2))
            in_ch = width

        self.decoder = nn.ModuleList()
        for step, depth in enumerate(config.decoder_blocks):
            scale = config.scales - 2 - step
            in_ch = widths[scale + 1] + (widths[scale] if lateral else 0)
            self.decoder.append(ConvBlock(in_ch, widths[scale], depth))

        self.output = nn.Conv2d(widths[0], channels, 1)
        if config.zero_init_output:
            nn.init.zeros_(self.output.weight)
            nn.init.zeros_(self.output.bias)

    def _check(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or tuple(x.shape[1:]) != tuple(self.config.input_shape):
            raise lab_errors.LabShapeError(
                f"denoiser expects (N, {', '.join(map(str, self.config.input_shape))}), got {tuple(x.shape)}"
            )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check(x)
        features: list[torch.Tensor] = []
        hidden = x
        for block in self.encoder:
            hidden = block(hidden)
            features.append(hidden)
        for step, block in enumerate(self.decoder):
            lateral = features[self.config.scales - 2 - step]
            hidden = F.interpolate(hidden, size=lateral.shape[-2:], mode="bilinear", align_corners=False)
            if self.config.family == "dunet":
                hidden = torch.cat([hidden, lateral], dim=1)
            hidden = block(hidden)
        out = self.output(hidden)
        if self.config.family == "dunet":
            noise = -out
            return x - noise, noise
        return out, x - out

    def save(self, path: pathlib.Path) -> pathlib.Path:
        return lab_checkpoints.save_checkpoint(
            path, "denoiser", self.state_dict(), config=self.config.to_dict(), metadata=dict(self.metadata)
        )

    @classmethod
    def load(cls, path: pathlib.Path) -> "DenoiserModel":
        payload = lab_checkpoints.load_checkpoint(path, "denoiser")
        model = cls(DenoiserConfig.from_dict(payload["config"]))
        model.load_state_dict(payload["state_dict"])
        model.metadata = dict(payload["metadata"])
        return model.eval()


def build_denoiser(config: DenoiserConfig) -> DenoiserModel:
    """Freshly initialised denoiser; raises LabConfigurationError on invalid topology."""
    return DenoiserModel(config)


@torch.no_grad()
def denoise(model: DenoiserModel, pixels: torch.Tensor, batch_size: int = 256) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Inference-mode denoising in chunks.

    Returns
    -------
    tuple[torch.Tensor, torch.Tensor]
        Unclipped x̂ and the noise estimate dx̂, on the input's device.
    """
    model.eval()
    device = next(model.parameters()).device
    denoised, noise = [], []
    for start in range(0, len(pixels), batch_size):
        chunk = pixels[start : start + batch_size]
        x_hat, d_hat = model(chunk.to(device))
        denoised.append(x_hat.to(pixels.device))
        noise.append(d_hat.to(pixels.device))
    if not denoised:
        model._check(pixels)
        return pixels.clone(), torch.zeros_like(pixels)
    return torch.cat(denoised), torch.cat(noise)
