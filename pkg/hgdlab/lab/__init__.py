"""
hgd-lab domain modules.
=======================

🧪 Datasets, classifiers, attacks, denoisers, guided losses, training,
analysis and evaluation. Everything here works on in-memory tensors and
plain paths; the artifact store and configs live in `hgdlab.core`.

# Exposed Components
-----------------

- `CleanDataset`, `ImageBatch`, `load_dataset`: pixel data in [0, 1].
- `ClassifierHandle`, `build_classifier`, `ClassifierTrainer`: frozen desk classifiers with named taps.
- `AttackSpec`, `fgsm`, `ifgsm`, `targeted_fgsm`, `run_attack`: the FGSM family.
- `CorpusProtocol`, `CorpusForge`, `AdversarialCorpus`: adversarial corpora with a white/black-box split.
- `DenoiserConfig`, `DenoiserModel`, `build_denoiser`: DUNET and DAE denoisers.
- `GuidedLossSpec`, `GuidedLoss`: pixel, feature, logit and class guided losses.
- `DenoiserRunSpec`, `DenoiserTrainer`, `train_denoiser`: denoiser training with plateau-driven decay.
- `perturbation_profile`, `noise_scatter`: error amplification and noise slope analysis.
- `DefensePipeline`, `Evaluator`, `EvaluationReport`: defended accuracy reports.
"""

from hgdlab.lab.analysis import NoiseScatter
from hgdlab.lab.analysis import PerturbationProfile
from hgdlab.lab.analysis import amplification_profiles
from hgdlab.lab.analysis import gaussian_perturb
from hgdlab.lab.analysis import noise_scatter
from hgdlab.lab.analysis import perturbation_profile
from hgdlab.lab.attacks import AttackSpec
from hgdlab.lab.attacks import fgsm
from hgdlab.lab.attacks import ifgsm
from hgdlab.lab.attacks import run_attack
from hgdlab.lab.attacks import targeted_fgsm
from hgdlab.lab.classifiers import ClassifierHandle
from hgdlab.lab.classifiers import ClassifierHyperparams
from hgdlab.lab.classifiers import ClassifierTrainer
from hgdlab.lab.classifiers import build_classifier
from hgdlab.lab.corpus import AdversarialCorpus
from hgdlab.lab.corpus import CorpusForge
from hgdlab.lab.corpus import CorpusProtocol
from hgdlab.lab.data import CleanDataset
from hgdlab.lab.data import ImageBatch
from hgdlab.lab.data import load_dataset
from hgdlab.lab.denoisers import DenoiserConfig
from hgdlab.lab.denoisers import DenoiserModel
from hgdlab.lab.denoisers import build_denoiser
from hgdlab.lab.evaluation import DefensePipeline
from hgdlab.lab.evaluation import EvaluationReport
from hgdlab.lab.evaluation import Evaluator
from hgdlab.lab.losses import GuidedLoss
from hgdlab.lab.losses import GuidedLossSpec
from hgdlab.lab.training import DenoiserRunSpec
from hgdlab.lab.training import DenoiserTrainer
from hgdlab.lab.training import train_denoiser

__all__ = [
    "AdversarialCorpus",
    "AttackSpec",
    "ClassifierHandle",
    "ClassifierHyperparams",
    "ClassifierTrainer",
    "CleanDataset",
    "CorpusForge",
    "CorpusProtocol",
    "DefensePipeline",
    "DenoiserConfig",
    "DenoiserModel",
    "DenoiserRunSpec",
    "DenoiserTrainer",
    "EvaluationReport",
    "Evaluator",
    "GuidedLoss",
    "GuidedLossSpec",
    "ImageBatch",
    "NoiseScatter",
    "PerturbationProfile",
    "amplification_profiles",
    "build_classifier",
    "build_denoiser",
    "fgsm",
    "gaussian_perturb",
    "ifgsm",
    "load_dataset",
    "noise_scatter",
    "perturbation_profile",
    "run_attack",
    "targeted_fgsm",
    "train_denoiser",
]
