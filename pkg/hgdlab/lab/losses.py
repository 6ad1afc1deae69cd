"""
Denoiser training losses.

PGD compares pixels, FGD and LGD compare a frozen classifier's activations at
the ``features`` and ``logits`` taps, and CGD scores the classifier's
prediction on the denoised image against the true labels. L1 distances are
taken per sample, divided by the element count and averaged over the batch.
"""

import dataclasses
import typing

import torch
import torch.nn.functional as F

import hgdlab.internal.errors as lab_errors
from hgdlab.lab.classifiers import FEATURES_TAP, LOGITS_TAP, ClassifierHandle

LossKind = typing.Literal["pgd", "fgd", "lgd", "cgd"]
LOSS_KINDS: tuple[str, ...] = typing.get_args(LossKind)
DEFAULT_TAPS: dict[str, str] = {"fgd": FEATURES_TAP, "lgd": LOGITS_TAP}


@dataclasses.dataclass(frozen=True)
class GuidedLossSpec:
    """
    Where the reconstruction error is measured.

    `tap` defaults to ``features`` for fgd and ``logits`` for lgd; any other
    tap the guiding classifier registers is accepted as well.
    """

    kind: LossKind
    guiding_classifier: str | None = None
    tap: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise lab_errors.LabConfigurationError(
                f"unknown loss kind {self.kind!r}; known: {', '.join(LOSS_KINDS)}"
            )
        if self.kind == "pgd" and self.guiding_classifier is not None:
            raise lab_errors.LabConfigurationError("pgd loss takes no guiding classifier")
        if self.kind != "pgd" and not self.guiding_classifier:
            raise lab_errors.LabConfigurationError(f"{self.kind} loss needs a guiding classifier")
        if self.kind in DEFAULT_TAPS and self.tap is None:
            object.__setattr__(self, "tap", DEFAULT_TAPS[self.kind])
        if self.kind in ("pgd", "cgd") and self.tap is not None:
            raise lab_errors.LabConfigurationError(f"{self.kind} loss does not use a tap")

    @property
    def needs_labels(self) -> bool:
        return self.kind == "cgd"

    def to_dict(self) -> dict[str, typing.Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: typing.Mapping[str, typing.Any]) -> "GuidedLossSpec":
        return cls(
            kind=data["kind"],
            guiding_classifier=data.get("guiding_classifier"),
            tap=data.get("tap"),
        )


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise lab_errors.LabShapeError(f"loss inputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")


def per_sample_l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference per sample, shape (N,)."""
    _check_shapes(a, b)
    return (a - b).abs().flatten(1).mean(dim=1)


def pgd_loss(clean: torch.Tensor, denoised: torch.Tensor) -> torch.Tensor:
    return per_sample_l1(denoised, clean).mean()


def hgd_loss(
    spec: GuidedLossSpec,
    classifier: ClassifierHandle | None,
    clean: torch.Tensor,
    denoised: torch.Tensor,
) -> torch.Tensor:
    """
    L1 between the guiding classifier's activations on x̂ and on x.

    Clean activations are computed without gradient; gradients reach x̂ only,
    since the classifier's parameters are frozen.
    """
    if spec.kind not in ("fgd", "lgd"):
        raise lab_errors.LabConfigurationError(f"hgd_loss handles fgd/lgd, got {spec.kind}")
    if classifier is None:
        raise lab_errors.LabConfigurationError(f"{spec.kind} loss needs a loaded guiding classifier")
    _check_shapes(clean, denoised)
    tap = typing.cast(str, spec.tap)
    with torch.no_grad():
        reference = classifier.taps(clean, (tap,))[tap]
    return per_sample_l1(classifier.taps(denoised, (tap,))[tap], reference).mean()


def cgd_loss(
    spec: GuidedLossSpec,
    classifier: ClassifierHandle | None,
    denoised: torch.Tensor,
    labels: torch.Tensor | None,
) -> torch.Tensor:
    """Mean cross-entropy of the guiding classifier on x̂ against the true labels."""
    if classifier is None:
        raise lab_errors.LabConfigurationError("cgd loss needs a loaded guiding classifier")
    if labels is None:
        raise lab_errors.LabConfigurationError("cgd loss needs ground-truth labels")
    logits = classifier.logits(denoised)
    return F.cross_entropy(logits, labels.to(logits.device))


class GuidedLoss:
    """
    A loss spec bound to its guiding classifier.

    Parameters
    ----------
    spec : GuidedLossSpec
    classifier : ClassifierHandle, optional
        Required for every kind except pgd.
    """

    def __init__(self, spec: GuidedLossSpec, classifier: ClassifierHandle | None = None) -> None:
        if spec.kind != "pgd" and classifier is None:
            raise lab_errors.LabConfigurationError(
                f"{spec.kind} loss needs guiding classifier {spec.guiding_classifier}"
            )
        if classifier is not None and spec.tap is not None and spec.tap not in classifier.layer_names:
            raise lab_errors.LabConfigurationError(
                f"unknown layer {spec.tap!r} for {classifier.handle_id}; valid: {', '.join(classifier.layer_names)}"
            )
        self.spec = spec
        self.classifier = classifier

    def __call__(
        self, clean: torch.Tensor, denoised: torch.Tensor, labels: torch.Tensor | None = None
    ) -> torch.Tensor:
        if self.spec.kind == "pgd":
            return pgd_loss(clean, denoised)
        if self.spec.kind == "cgd":
            _check_shapes(clean, denoised)
            return cgd_loss(self.spec, self.classifier, denoised, labels)
        return hgd_loss(self.spec, self.classifier, clean, denoised)
