"""
Diagnostics: layerwise error amplification and predicted-vs-adversarial noise.

The relative perturbation of a layer is ``E_l = ‖f_l(x_p) − f_l(x)‖ / ‖f_l(x)‖``,
computed per sample and averaged. Profiles start with a ``pixels`` level
(f_0 the identity) followed by every tap of the classifier.
"""

import dataclasses
import json
import pathlib
import typing

import numpy as np
import torch

import hgdlab.internal.errors as lab_errors
import hgdlab.lab.checkpoints as lab_checkpoints
import hgdlab.lab.data as lab_data
import hgdlab.lab.denoisers as lab_denoisers
from hgdlab.lab.classifiers import ClassifierHandle

PIXELS_LEVEL = "pixels"
NORM_FLOOR = 1e-12
DEFAULT_SCATTER_EXTENT = 0.125
DEFAULT_SCATTER_BINS = 101


@dataclasses.dataclass
class PerturbationProfile:
    """Mean relative perturbation per level for one condition, e.g. ``adversarial``."""

    layer_names: list[str]
    levels: list[float]
    condition: str
    sample_count: int
    norm: float = 1.0

    def level(self, name: str) -> float:
        if name not in self.layer_names:
            raise lab_errors.LabConfigurationError(
                f"profile has no level {name!r}; valid: {', '.join(self.layer_names)}"
            )
        return self.levels[self.layer_names.index(name)]

    def to_dict(self) -> dict[str, typing.Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "PerturbationProfile":
        return cls(
            layer_names=list(data["layer_names"]),
            levels=[float(v) for v in data["levels"]],
            condition=data["condition"],
            sample_count=int(data["sample_count"]),
            norm=float(data.get("norm", 1.0)),
        )


def relative_perturbation(
    reference: torch.Tensor, perturbed: torch.Tensor, norm: float = 1.0
) -> torch.Tensor:
    """Per-sample ``‖perturbed − reference‖ / ‖reference‖``, shape (N,)."""
    if reference.shape != perturbed.shape:
        raise lab_errors.LabShapeError(
            f"activations differ in shape: {tuple(reference.shape)} vs {tuple(perturbed.shape)}"
        )
    delta = torch.linalg.vector_norm((perturbed - reference).flatten(1).double(), ord=norm, dim=1)
    base = torch.linalg.vector_norm(reference.flatten(1).double(), ord=norm, dim=1)
    return delta / base.clamp_min(NORM_FLOOR)


@torch.no_grad()
def perturbation_profile(
    classifier: ClassifierHandle,
    reference: lab_data.ImageBatch | torch.Tensor,
    perturbed: lab_data.ImageBatch | torch.Tensor,
    condition: str = "adversarial",
    norm: float = 1.0,
    batch_size: int = 256,
) -> PerturbationProfile:
    """
    Average E_l over aligned sample pairs at the pixel level and every tap.

    Raises
    ------
    LabShapeError
        If the batches are not aligned sample to sample.
    """
    x = reference.pixels if isinstance(reference, lab_data.ImageBatch) else reference
    x_p = perturbed.pixels if isinstance(perturbed, lab_data.ImageBatch) else perturbed
    if x.shape != x_p.shape:
        raise lab_errors.LabShapeError(
            f"reference and perturbed batches are misaligned: {tuple(x.shape)} vs {tuple(x_p.shape)}"
        )
    if not len(x):
        raise lab_errors.LabConfigurationError("perturbation profile needs at least one sample")
    names = [PIXELS_LEVEL, *classifier.layer_names]
    sums = torch.zeros(len(names), dtype=torch.float64)
    for start in range(0, len(x), batch_size):
        chunk, chunk_p = x[start : start + batch_size], x_p[start : start + batch_size]
        clean_taps = classifier.taps(chunk, classifier.layer_names)
        perturbed_taps = classifier.taps(chunk_p, classifier.layer_names)
        sums[0] += relative_perturbation(chunk, chunk_p, norm).sum().cpu()
        for index, name in enumerate(classifier.layer_names, start=1):
            sums[index] += relative_perturbation(clean_taps[name], perturbed_taps[name], norm).sum().cpu()
    levels = (sums / len(x)).tolist()
    return PerturbationProfile(names, levels, condition, len(x), norm)


@torch.no_grad()
def gaussian_perturb(
    batch: lab_data.ImageBatch,
    target_e0: float | torch.Tensor,
    seed: int = 0,
    norm: float = 1.0,
    iterations: int = 60,
) -> lab_data.ImageBatch:
    """
    Add zero-mean gaussian noise whose clipped pixel-level E_0 equals the target.

    The noise direction is drawn once from `seed`; its scale is bisected per
    sample so clipping to [0, 1] is accounted for. `target_e0` may be a scalar
    or one value per sample.
    """
    x = batch.pixels
    target = torch.as_tensor(target_e0, dtype=torch.float64).cpu().expand(len(x)).clone()
    if bool((target < 0).any()):
        raise lab_errors.LabConfigurationError("target pixel perturbation must be nonnegative")
    generator = torch.Generator().manual_seed(seed)
    direction = torch.randn(x.shape, generator=generator, dtype=x.dtype).to(x.device)

    def level(scale: torch.Tensor) -> torch.Tensor:
        noisy = (x + scale.to(x.dtype).view(-1, 1, 1, 1).to(x.device) * direction).clamp(0.0, 1.0)
        return relative_perturbation(x, noisy, norm).cpu()

    low = torch.zeros(len(x), dtype=torch.float64)
    high = torch.ones(len(x), dtype=torch.float64)
    for _ in range(30):
        short = level(high) < target
        if not bool(short.any()):
            break
        high = torch.where(short, high * 2.0, high)
    unreachable = level(high) < target
    if bool(unreachable.any()):
        raise lab_errors.LabNumericError(
            f"clipping keeps {int(unreachable.sum())} of {len(x)} samples below the target pixel perturbation"
        )
    for _ in range(iterations):
        middle = (low + high) / 2.0
        below = level(middle) < target
        low = torch.where(below, middle, low)
        high = torch.where(below, high, middle)
    scale = torch.where(target > 0, (low + high) / 2.0, torch.zeros_like(low))
    noisy = (x + scale.to(x.dtype).view(-1, 1, 1, 1).to(x.device) * direction).clamp(0.0, 1.0)
    return batch.with_pixels(noisy, attack="gaussian", seed=seed)


@dataclasses.dataclass
class NoiseScatter:
    """
    Adversarial perturbation dx* against predicted perturbation dx̂, pixel by pixel.

    `slope` is the least-squares k of ``dx̂ = k·dx*`` through the origin and
    `residual_std` the spread of ``dx̂ − k·dx*``.
    """

    condition: str
    dx_star: np.ndarray
    dx_hat: np.ndarray
    slope: float
    residual_std: float
    histogram: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray

    def save(self, path: pathlib.Path) -> pathlib.Path:
        return lab_checkpoints.save_arrays(
            path,
            {
                "condition": np.array(self.condition),
                "dx_star": self.dx_star.astype(np.float32),
                "dx_hat": self.dx_hat.astype(np.float32),
                "slope": np.array(self.slope, dtype=np.float64),
                "residual_std": np.array(self.residual_std, dtype=np.float64),
                "histogram": self.histogram,
                "x_edges": self.x_edges,
                "y_edges": self.y_edges,
            },
        )

    @classmethod
    def load(cls, path: pathlib.Path) -> "NoiseScatter":
        arrays = lab_checkpoints.load_arrays(
            path,
            ("condition", "dx_star", "dx_hat", "slope", "residual_std", "histogram", "x_edges", "y_edges"),
        )
        return cls(
            condition=str(arrays["condition"]),
            dx_star=arrays["dx_star"],
            dx_hat=arrays["dx_hat"],
            slope=float(arrays["slope"]),
            residual_std=float(arrays["residual_std"]),
            histogram=arrays["histogram"],
            x_edges=arrays["x_edges"],
            y_edges=arrays["y_edges"],
        )

    def summary(self) -> dict[str, typing.Any]:
        return {
            "condition": self.condition,
            "slope": self.slope,
            "residual_std": self.residual_std,
            "pixels": int(self.dx_star.size),
        }


def fit_slope(dx_star: np.ndarray, dx_hat: np.ndarray) -> tuple[float, float]:
    """
    Least-squares slope through the origin and residual standard deviation.

    Raises
    ------
    LabDegenerateFitError
        If dx* is zero everywhere.
    """
    x = np.asarray(dx_star, dtype=np.float64).ravel()
    y = np.asarray(dx_hat, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise lab_errors.LabShapeError(f"noise arrays differ in size: {x.size} vs {y.size}")
    denominator = float(np.dot(x, x))
    if denominator == 0.0:
        raise lab_errors.LabDegenerateFitError("adversarial perturbation is zero everywhere")
    slope = float(np.dot(x, y)) / denominator
    return slope, float(np.std(y - slope * x))


def noise_scatter(
    clean: torch.Tensor,
    adversarial: torch.Tensor,
    denoised: torch.Tensor,
    condition: str = "denoised",
    bins: int = DEFAULT_SCATTER_BINS,
    extent: float = DEFAULT_SCATTER_EXTENT,
) -> NoiseScatter:
    """Fit ``dx̂ = k·dx*`` and histogram the pairs over ``[-extent, extent]²``."""
    if not clean.shape == adversarial.shape == denoised.shape:
        raise lab_errors.LabShapeError("clean, adversarial and denoised batches must be aligned")
    dx_star = (adversarial - clean).detach().cpu().double().numpy().ravel()
    dx_hat = (adversarial - denoised).detach().cpu().double().numpy().ravel()
    slope, residual_std = fit_slope(dx_star, dx_hat)
    histogram, x_edges, y_edges = np.histogram2d(
        dx_star, dx_hat, bins=bins, range=[[-extent, extent], [-extent, extent]]
    )
    return NoiseScatter(
        condition=condition,
        dx_star=dx_star.astype(np.float32),
        dx_hat=dx_hat.astype(np.float32),
        slope=slope,
        residual_std=residual_std,
        histogram=histogram.astype(np.int64),
        x_edges=x_edges,
        y_edges=y_edges,
    )


def select_samples(total: int, count: int, seed: int = 0) -> torch.Tensor:
    """Seeded choice of `count` distinct indices out of `total`, in ascending order."""
    if total < 1:
        raise lab_errors.LabConfigurationError("nothing to sample from")
    generator = torch.Generator().manual_seed(seed)
    return torch.randperm(total, generator=generator)[: min(count, total)].sort().values


def amplification_profiles(
    classifier: ClassifierHandle,
    clean: torch.Tensor,
    adversarial: torch.Tensor,
    denoisers: typing.Mapping[str, lab_denoisers.DenoiserModel] | None = None,
    seed: int = 0,
    norm: float = 1.0,
) -> list[PerturbationProfile]:
    """
    Profiles for adversarial images, pixel-matched gaussian noise and every
    denoiser's clipped output on the same samples.
    """
    reference = lab_data.ImageBatch(clean)
    matched = relative_perturbation(clean, adversarial, norm)
    noise = gaussian_perturb(reference, matched, seed=seed, norm=norm).pixels
    profiles = [
        perturbation_profile(classifier, clean, adversarial, "adversarial", norm),
        perturbation_profile(classifier, clean, noise, "random-noise", norm),
    ]
    for name, model in (denoisers or {}).items():
        denoised, _ = lab_denoisers.denoise(model, adversarial)
        profiles.append(perturbation_profile(classifier, clean, denoised.clamp(0.0, 1.0), f"{name}-denoised", norm))
    return profiles


def save_profiles(path: pathlib.Path, profiles: typing.Sequence[PerturbationProfile]) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [profile.to_dict() for profile in profiles]
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_profiles(path: pathlib.Path) -> list[PerturbationProfile]:
    path = pathlib.Path(path)
    if not path.is_file():
        raise lab_errors.LabIOError(f"profile file not found: {path}")
    return [PerturbationProfile.from_dict(item) for item in json.loads(path.read_text(encoding="utf-8"))]
