"""
FGSM-family attacks against one classifier or an ensemble of classifiers.

All attacks clip to [0, 1] after every step. Untargeted attacks score against
each model's own prediction on the clean input unless told to use the batch
labels, which avoids label leaking.
"""

import dataclasses
import typing

import torch
import torch.nn.functional as F

import hgdlab.internal.errors as lab_errors
import hgdlab.lab.data as lab_data

AttackMethod = typing.Literal["fgsm", "targeted-fgsm", "ifgsm"]
TargetPolicy = typing.Literal["none", "least-likely", "random"]
AttackLabelSource = typing.Literal["predicted", "true"]
Epsilon = typing.Union[float, torch.Tensor]

METHODS: tuple[str, ...] = typing.get_args(AttackMethod)
TARGET_POLICIES: tuple[str, ...] = typing.get_args(TargetPolicy)


class LogitSource(typing.Protocol):
    """Anything that maps pixels to differentiable logits, e.g. a ClassifierHandle."""

    handle_id: str
    num_classes: int

    def logits(self, batch: typing.Any) -> torch.Tensor: ...


@dataclasses.dataclass(frozen=True)
class AttackSpec:
    """
    Fully determines how one adversarial example is generated.

    Attributes
    ----------
    method : {"fgsm", "targeted-fgsm", "ifgsm"}
    epsilon : float
        L∞ budget in pixel units, i.e. ε/255 for the usual integer ε.
    steps : int
        Iterations; always 1 for the single-step methods.
    sources : tuple[str, ...]
        Ids of the classifiers the attack is computed against.
    target_policy : {"none", "least-likely", "random"}
        Target class resolution, targeted-fgsm only.
    """

    method: AttackMethod
    epsilon: float
    sources: tuple[str, ...]
    steps: int = 1
    target_policy: TargetPolicy = "none"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise lab_errors.LabConfigurationError(f"unknown attack method {self.method!r}")
        if not 0.0 < self.epsilon <= 1.0:
            raise lab_errors.LabConfigurationError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.steps < 1:
            raise lab_errors.LabConfigurationError("steps must be at least 1")
        if self.method != "ifgsm" and self.steps != 1:
            raise lab_errors.LabConfigurationError(f"{self.method} is single-step, got steps={self.steps}")
        if not self.sources:
            raise lab_errors.LabConfigurationError("an attack needs at least one source model")
        if self.target_policy not in TARGET_POLICIES:
            raise lab_errors.LabConfigurationError(f"unknown target policy {self.target_policy!r}")
        if (self.method == "targeted-fgsm") != (self.target_policy != "none"):
            raise lab_errors.LabConfigurationError(
                "targeted-fgsm requires a target policy and other methods forbid one"
            )

    @property
    def label(self) -> str:
        """Short attack name such as ``FGSM``, ``IFGSM4`` or ``TFGSM-ll``."""
        return attack_label(self.method, self.steps, self.target_policy)


def attack_label(method: str, steps: int = 1, target_policy: str = "none") -> str:
    if method == "ifgsm":
        return f"IFGSM{steps}"
    if method == "targeted-fgsm":
        return "TFGSM-ll" if target_policy == "least-likely" else "TFGSM-rand"
    return "FGSM"


def _check_sources(classifiers: typing.Sequence[LogitSource]) -> None:
    if not classifiers:
        raise lab_errors.LabConfigurationError("attack needs a nonempty classifier list")
    counts = {c.num_classes for c in classifiers}
    if len(counts) != 1:
        raise lab_errors.LabConfigurationError(f"source models disagree on num_classes: {sorted(counts)}")


def _epsilon_tensor(epsilon: Epsilon, pixels: torch.Tensor) -> torch.Tensor:
    eps = torch.as_tensor(epsilon, dtype=pixels.dtype, device=pixels.device)
    if eps.dim() == 0:
        eps = eps.expand(pixels.shape[0])
    if eps.shape != (pixels.shape[0],):
        raise lab_errors.LabShapeError(
            f"per-sample epsilon must have shape ({pixels.shape[0]},), got {tuple(eps.shape)}"
        )
    if bool((eps < 0).any()) or bool((eps > 1).any()):
        raise lab_errors.LabConfigurationError("epsilon must lie in [0, 1]")
    return eps.view(-1, 1, 1, 1)


@torch.no_grad()
def predicted_labels(classifiers: typing.Sequence[LogitSource], pixels: torch.Tensor) -> list[torch.Tensor]:
    """Each model's argmax prediction; ties go to the smallest class index."""
    return [c.logits(pixels).argmax(dim=1).to(pixels.device) for c in classifiers]


def ensemble_loss(
    classifiers: typing.Sequence[LogitSource],
    pixels: torch.Tensor,
    labels: typing.Sequence[torch.Tensor],
) -> torch.Tensor:
    """Mean over models of each model's cross-entropy against its own labels."""
    losses = []
    for classifier, y in zip(classifiers, labels):
        logits = classifier.logits(pixels)
        losses.append(F.cross_entropy(logits, y.to(logits.device)).to(pixels.device))
    return torch.stack(losses).mean()


def ensemble_gradient(
    classifiers: typing.Sequence[LogitSource],
    pixels: torch.Tensor,
    labels: typing.Sequence[torch.Tensor],
) -> torch.Tensor:
    probe = pixels.detach().clone().requires_grad_(True)
    with torch.enable_grad():
        loss = ensemble_loss(classifiers, probe, labels)
        if not torch.isfinite(loss):
            raise lab_errors.LabNumericError("non-finite attack loss")
        (gradient,) = torch.autograd.grad(loss, probe)
    return gradient


def _untargeted_labels(
    classifiers: typing.Sequence[LogitSource],
    batch: lab_data.ImageBatch,
    label_source: AttackLabelSource,
) -> list[torch.Tensor]:
    if label_source == "predicted":
        return predicted_labels(classifiers, batch.pixels)
    if label_source == "true":
        if batch.labels is None:
            raise lab_errors.LabConfigurationError("label_source='true' needs a labelled batch")
        return [batch.labels] * len(classifiers)
    raise lab_errors.LabConfigurationError(f"unknown label source {label_source!r}")


def fgsm(
    classifiers: typing.Sequence[LogitSource],
    batch: lab_data.ImageBatch,
    epsilon: Epsilon,
    label_source: AttackLabelSource = "predicted",
) -> lab_data.ImageBatch:
    """
    Fast gradient sign method.

    ``x* = clip(x + ε·sign(∇x J(x, y)))`` where J is the ensemble loss and y
    each model's own prediction (or the batch labels with ``label_source="true"``).

    Parameters
    ----------
    epsilon : float or torch.Tensor
        Scalar budget, or one budget per sample.
    """
    _check_sources(classifiers)
    eps = _epsilon_tensor(epsilon, batch.pixels)
    labels = _untargeted_labels(classifiers, batch, label_source)
    gradient = ensemble_gradient(classifiers, batch.pixels, labels)
    adversarial = (batch.pixels + eps * gradient.sign()).clamp(0.0, 1.0)
    return batch.with_pixels(
        adversarial.detach(), attack="FGSM", sources=[c.handle_id for c in classifiers]
    )


def resolve_targets(
    classifiers: typing.Sequence[LogitSource],
    pixels: torch.Tensor,
    policy: TargetPolicy,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """
    One target class per sample.

    ``least-likely`` takes the argmin of the models' mean predicted probability
    (smallest index on ties); ``random`` draws uniformly among the classes
    other than the ensemble's predicted one.
    """
    _check_sources(classifiers)
    with torch.no_grad():
        probabilities = torch.stack(
            [torch.softmax(c.logits(pixels), dim=1).to(pixels.device) for c in classifiers]
        ).mean(dim=0)
    if policy == "least-likely":
        return probabilities.argmin(dim=1)
    if policy == "random":
        num_classes = probabilities.shape[1]
        predicted = probabilities.argmax(dim=1).cpu()
        if num_classes < 2:
            return predicted.to(pixels.device)
        draw = torch.randint(0, num_classes - 1, (pixels.shape[0],), generator=generator)
        return (draw + (draw >= predicted).long()).to(pixels.device)
    raise lab_errors.LabConfigurationError(f"targeted attack needs a target policy, got {policy!r}")


def targeted_fgsm(
    classifiers: typing.Sequence[LogitSource],
    batch: lab_data.ImageBatch,
    epsilon: Epsilon,
    target_policy: TargetPolicy = "least-likely",
    generator: torch.Generator | None = None,
    target_labels: torch.Tensor | None = None,
) -> lab_data.ImageBatch:
    """``x* = clip(x − ε·sign(∇x J(x, y_target)))``; `target_labels` overrides the policy."""
    _check_sources(classifiers)
    eps = _epsilon_tensor(epsilon, batch.pixels)
    targets = (
        target_labels.to(batch.pixels.device)
        if target_labels is not None
        else resolve_targets(classifiers, batch.pixels, target_policy, generator)
    )
    gradient = ensemble_gradient(classifiers, batch.pixels, [targets] * len(classifiers))
    adversarial = (batch.pixels - eps * gradient.sign()).clamp(0.0, 1.0)
    return batch.with_pixels(
        adversarial.detach(),
        attack=attack_label("targeted-fgsm", 1, target_policy),
        sources=[c.handle_id for c in classifiers],
        targets=targets.tolist(),
    )


def ifgsm(
    classifiers: typing.Sequence[LogitSource],
    batch: lab_data.ImageBatch,
    epsilon: Epsilon,
    steps: int,
    label_source: AttackLabelSource = "predicted",
) -> lab_data.ImageBatch:
    """
    Iterated FGSM with step size ε/steps.

    Every iterate is projected onto the ε-ball around the clean image and onto
    [0, 1]. The labels are fixed from the clean input.
    """
    if steps < 1:
        raise lab_errors.LabConfigurationError("ifgsm needs at least one step")
    _check_sources(classifiers)
    eps = _epsilon_tensor(epsilon, batch.pixels)
    alpha = eps / steps
    labels = _untargeted_labels(classifiers, batch, label_source)
    clean = batch.pixels
    adversarial = clean.clone()
    for _ in range(steps):
        gradient = ensemble_gradient(classifiers, adversarial, labels)
        adversarial = adversarial + alpha * gradient.sign()
        adversarial = torch.min(torch.max(adversarial, clean - eps), clean + eps).clamp(0.0, 1.0)
    return batch.with_pixels(
        adversarial.detach(), attack=f"IFGSM{steps}", sources=[c.handle_id for c in classifiers]
    )


def run_attack(
    spec: AttackSpec,
    classifiers: typing.Sequence[LogitSource],
    batch: lab_data.ImageBatch,
    epsilon: Epsilon | None = None,
    generator: torch.Generator | None = None,
    label_source: AttackLabelSource = "predicted",
) -> lab_data.ImageBatch:
    """
    Apply `spec` to `batch`.

    `classifiers` must be the attack's sources in order. `epsilon` overrides the
    attack budget, typically with per-sample values drawn by the corpus forge.
    """
    ids = tuple(c.handle_id for c in classifiers)
    if ids != tuple(spec.sources):
        raise lab_errors.LabConfigurationError(
            f"attack {spec.label} expects sources {list(spec.sources)}, got {list(ids)}"
        )
    budget = spec.epsilon if epsilon is None else epsilon
    if spec.method == "fgsm":
        return fgsm(classifiers, batch, budget, label_source)
    if spec.method == "ifgsm":
        return ifgsm(classifiers, batch, budget, spec.steps, label_source)
    return targeted_fgsm(classifiers, batch, budget, spec.target_policy, generator)
