"""
Figure emitters for profiles, noise scatters, accuracy bars and denoising demos.

Rendering uses the Agg backend with fixed sizes, axes and metadata so the
same inputs always produce the same bytes.
"""

import pathlib
import typing

import matplotlib

matplotlib.use("Agg")

import matplotlib.colors as mcolors  # noqa: E402
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402

import hgdlab.internal.errors as lab_errors  # noqa: E402
from hgdlab.lab.analysis import NoiseScatter, PerturbationProfile  # noqa: E402
from hgdlab.results import Chart  # noqa: E402

# Strips the version-dependent "Software" chunk from PNG output.
_PNG_METADATA: dict[str, typing.Any] = {"Software": None}
_DPI = 100


def _save(fig: plt.Figure, path: pathlib.Path) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        fig.savefig(path, dpi=_DPI, metadata=_PNG_METADATA if path.suffix == ".png" else None)
    except OSError as err:
        raise lab_errors.LabIOError(f"cannot write figure {path}: {err}") from err
    finally:
        plt.close(fig)
    return path


def plot_profiles(
    profiles: typing.Sequence[PerturbationProfile], path: pathlib.Path, title: str = "Error amplification"
) -> pathlib.Path:
    """One curve per condition, E_l on a log axis against the tap index."""
    if not profiles:
        raise lab_errors.LabConfigurationError("no profiles to plot")
    names = profiles[0].layer_names
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    positions = np.arange(len(names))
    for profile in profiles:
        if profile.layer_names != names:
            raise lab_errors.LabConfigurationError("profiles must share their layer names")
        levels = np.maximum(np.asarray(profile.levels, dtype=np.float64), 1e-6)
        ax.plot(positions, levels, marker="o", label=profile.condition)
    ax.set_yscale("log")
    ax.set_xticks(positions)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("relative perturbation E_l")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def plot_noise_scatters(scatters: typing.Sequence[NoiseScatter], path: pathlib.Path) -> pathlib.Path:
    """2D histograms of dx̂ against dx*, each with its fitted line and the identity."""
    if not scatters:
        raise lab_errors.LabConfigurationError("no noise scatters to plot")
    fig, axes = plt.subplots(1, len(scatters), figsize=(4.0 * len(scatters), 4.0), squeeze=False)
    for ax, scatter in zip(axes[0], scatters):
        counts = np.where(scatter.histogram > 0, scatter.histogram, np.nan).T
        ax.pcolormesh(scatter.x_edges, scatter.y_edges, counts, norm=mcolors.LogNorm(), cmap="viridis")
        span = np.array([scatter.x_edges[0], scatter.x_edges[-1]])
        ax.plot(span, span, color="grey", linestyle=":", linewidth=1.0)
        ax.plot(span, scatter.slope * span, color="red", linewidth=1.2, label=f"k = {scatter.slope:.3f}")
        ax.set_xlim(scatter.x_edges[0], scatter.x_edges[-1])
        ax.set_ylim(scatter.y_edges[0], scatter.y_edges[-1])
        ax.set_xlabel("adversarial noise dx*")
        ax.set_ylabel("predicted noise dx̂")
        ax.set_title(scatter.condition)
        ax.legend(loc="upper left", fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def plot_bar_chart(chart: Chart, path: pathlib.Path, ylabel: str = "accuracy") -> pathlib.Path:
    """Grouped bars: one group per point label, one bar colour per series."""
    points = chart.data
    if not points:
        raise lab_errors.LabConfigurationError("no chart data to plot")
    defenses = list(dict.fromkeys(str(point.get("series", "")) for point in points))
    groups = list(dict.fromkeys(str(point["label"]) for point in points))
    values = np.full((len(defenses), len(groups)), np.nan)
    for point in points:
        values[defenses.index(str(point.get("series", ""))), groups.index(str(point["label"]))] = point["value"]
    width = 0.8 / len(defenses)
    fig, ax = plt.subplots(figsize=(max(6.4, 1.2 * len(groups)), 4.0))
    positions = np.arange(len(groups))
    for index, defense in enumerate(defenses):
        ax.bar(positions + index * width - 0.4 + width / 2, values[index], width, label=defense)
    ax.set_xticks(positions)
    ax.set_xticklabels(groups, rotation=30, ha="right", fontsize="small")
    if ylabel == "accuracy":
        ax.set_ylim(0.0, 1.0)
    ax.set_ylabel(ylabel)
    ax.set_title(chart.title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, path)


def plot_denoising_demo(
    clean: torch.Tensor,
    adversarial: torch.Tensor,
    denoised: typing.Mapping[str, torch.Tensor],
    path: pathlib.Path,
    samples: int = 4,
) -> pathlib.Path:
    """
    Per sample: x, x*, each x̂, then |x − x*| and every |x − x̂| on a shared scale.
    """
    count = min(samples, len(clean))
    if count == 0:
        raise lab_errors.LabConfigurationError("no samples to show")
    columns = [("clean", clean), ("adversarial", adversarial), *denoised.items()]
    differences = [("|x - x*|", adversarial)] + [(f"|x - {name}|", image) for name, image in denoised.items()]
    fig, axes = plt.subplots(
        count, len(columns) + len(differences), figsize=(1.6 * (len(columns) + len(differences)), 1.6 * count),
        squeeze=False,
    )
    scale = max(float((image[:count] - clean[:count]).abs().max()) for _, image in differences) or 1.0
    for row in range(count):
        for column, (name, images) in enumerate(columns):
            _show(axes[row][column], images[row].clamp(0.0, 1.0), name if row == 0 else None)
        for offset, (name, images) in enumerate(differences):
            diff = (images[row] - clean[row]).abs().mean(dim=0)
            ax = axes[row][len(columns) + offset]
            ax.imshow(diff.cpu().numpy(), cmap="magma", vmin=0.0, vmax=scale, interpolation="nearest")
            ax.set_axis_off()
            if row == 0:
                ax.set_title(name, fontsize="x-small")
    fig.tight_layout()
    return _save(fig, path)


def _show(ax: plt.Axes, image: torch.Tensor, title: str | None) -> None:
    array = image.detach().cpu().numpy()
    if array.shape[0] == 1:
        ax.imshow(array[0], cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    else:
        ax.imshow(np.transpose(array, (1, 2, 0)), interpolation="nearest")
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize="x-small")
