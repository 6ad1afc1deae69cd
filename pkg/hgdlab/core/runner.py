"""
Stage runners behind the ``hgdlab <stage>`` commands.

Every stage reads its inputs from the artifact store, publishes its outputs
as a new content-addressed artifact and writes a run manifest.
"""

import dataclasses
import json
import pathlib
import typing

import torch

import hgdlab.abc as lab_abc
import hgdlab.core.base as lab_core_base
import hgdlab.internal.errors as lab_errors
import hgdlab.lab.analysis as lab_analysis
import hgdlab.lab.classifiers as lab_classifiers
import hgdlab.lab.corpus as lab_corpus
import hgdlab.lab.data as lab_data
import hgdlab.lab.denoisers as lab_denoisers
import hgdlab.lab.evaluation as lab_evaluation
import hgdlab.lab.losses as lab_losses
import hgdlab.lab.plotting as lab_plotting
import hgdlab.lab.training as lab_training

if typing.TYPE_CHECKING:
    import hgdlab.client as lab_client
    import hgdlab.core.environment as lab_environment

CLASSIFIER_FILE = "classifier.pt"
DENOISER_FILE = "denoiser.pt"
PROFILES_FILE = "profiles.json"
SCATTERS_FILE = "scatters.json"

_OptionalHandle = lab_classifiers.ClassifierHandle | None


@dataclasses.dataclass
class StageResult:
    """Outcome of one stage run."""

    stage: str
    artifact: pathlib.Path
    manifest: pathlib.Path
    summary: dict[str, typing.Any] = dataclasses.field(default_factory=dict)


def _write_json(path: pathlib.Path, payload: typing.Any) -> pathlib.Path:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class StageRunner(lab_core_base.LabCoreObject):
    """
    Executes one resolved experiment config.

    Inputs referenced by a config are recorded as they are loaded so the run
    manifest lists the content digest of each of them.
    """

    STAGES: typing.ClassVar[dict[lab_abc.StageName, str]] = {
        "train-classifier": "train_classifier",
        "forge-corpus": "forge_corpus",
        "train-denoiser": "train_denoiser",
        "evaluate": "evaluate",
        "transfer": "transfer",
        "class-split": "class_split",
        "analyze-amplification": "analyze_amplification",
        "analyze-noise": "analyze_noise",
        "ensemble-eval": "ensemble_eval",
    }

    def __init__(self, client: "lab_client.LabClient") -> None:
        super().__init__(client)
        self._inputs: dict[str, pathlib.Path] = {}

    @property
    def environment(self) -> "lab_environment.LabEnvironment":
        if self.client.environment is None:
            raise lab_errors.LabConfigurationError("no environment configured; call LabClient.configure first")
        return self.client.environment

    @property
    def device(self) -> str:
        return str(self.environment.device)

    def run(self, config: lab_abc.ExperimentConfig) -> StageResult:
        stage = config["stage"]
        values = typing.cast(dict[str, typing.Any], config)
        if stage not in self.STAGES:
            raise lab_errors.LabUnknownStageError(f"{stage!r}; known stages: {', '.join(self.STAGES)}")
        self._inputs = {}
        self.environment.seed_everything()
        handler: typing.Callable[[dict[str, typing.Any]], tuple[pathlib.Path, dict[str, typing.Any]]]
        handler = getattr(self, self.STAGES[stage])
        paths = {**values.get("paths", {}), "artifact_root": str(self.environment.artifact_root)}
        recorded = {**values, "paths": paths}
        with self.client.logger.stage(stage):
            artifact, summary = handler(values)
            outputs = {"artifact": artifact}
            manifest = self.environment.store.write_manifest(stage, recorded, dict(self._inputs), outputs)
        return StageResult(stage, artifact, manifest, summary)

    # -- inputs ----------------------------------------------------------

    def _resolve(self, ref: str, kind: str, filename: str | None = None) -> pathlib.Path:
        path = self.environment.store.resolve(ref, kind)
        self._inputs[f"{kind}/{ref}"] = path
        if filename is not None and path.is_dir():
            path = path / filename
        if not path.exists():
            raise lab_errors.LabMissingArtifactError(f"{kind}/{ref} has no {filename}")
        return path

    def load_classifier(self, ref: str, handle_id: str | None = None) -> lab_classifiers.ClassifierHandle:
        path = self._resolve(ref, "classifiers", CLASSIFIER_FILE)
        handle = lab_classifiers.ClassifierHandle.load(path, handle_id=handle_id or ref)
        return handle.to(self.device)

    def load_denoiser(self, ref: str) -> lab_denoisers.DenoiserModel:
        path = self._resolve(ref, "denoisers", DENOISER_FILE)
        return lab_denoisers.DenoiserModel.load(path).to(self.device)

    def load_corpus(self, ref: str, splits: typing.Iterable[str] | None = None) -> lab_corpus.AdversarialCorpus:
        return lab_corpus.AdversarialCorpus.load(self._resolve(ref, "corpora"), splits)

    def load_dataset(self, params: typing.Mapping[str, typing.Any], seed: int) -> lab_data.CleanDataset:
        return lab_data.load_dataset(params["dataset"], self.environment.data_root, seed, params["dataset_options"])

    def _publish(self, kind: str, alias: str, write: typing.Callable[[pathlib.Path], None]) -> pathlib.Path:
        with self.environment.store.publish(kind, alias) as publication:
            write(publication.staging)
        return typing.cast(pathlib.Path, publication.path)

    @staticmethod
    def _save_corpus(corpus: lab_corpus.AdversarialCorpus, staging: pathlib.Path) -> None:
        corpus.save(staging)

    # -- stages ----------------------------------------------------------

    def train_classifier(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        hyperparams = lab_classifiers.ClassifierHyperparams(
            epochs=params["epochs"],
            batch_size=params["batch_size"],
            learning_rate=params["learning_rate"],
            weight_decay=params["weight_decay"],
            seed=config["seed"],
            adversarial_epsilon=params["adversarial_epsilon_255"] / lab_corpus.EPSILON_SCALE,
            arch_options=dict(params["arch_options"]),
        )
        dataset = self.load_dataset(params, config["seed"])
        trainer = lab_classifiers.ClassifierTrainer(self.client.logger, self.device, config["progress"])
        handle = trainer.train(dataset, params["architecture"], hyperparams, handle_id=params["alias"])

        def write(staging: pathlib.Path) -> None:
            handle.save(staging / CLASSIFIER_FILE)
            _write_json(staging / "summary.json", handle.metadata)

        artifact = self._publish("classifiers", params["alias"], write)
        return artifact, {"clean_accuracy": handle.metadata.get("clean_accuracy")}

    def forge_corpus(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        dataset = self.load_dataset(params, config["seed"])
        classifiers = {name: self.load_classifier(ref, name) for name, ref in params["classifiers"].items()}
        protocol = lab_corpus.CorpusProtocol.from_dict(params["protocol"])
        forge = lab_corpus.CorpusForge(self.client.logger, params["batch_size"], config["progress"])
        corpus = forge.forge(protocol, dataset, classifiers, config["seed"], params["splits"])
        artifact = self._publish("corpora", params["alias"], lambda staging: self._save_corpus(corpus, staging))
        return artifact, {name: len(split) for name, split in corpus.splits.items()}

    def _denoiser_run(
        self,
        training: typing.Mapping[str, typing.Any],
        corpus: lab_corpus.AdversarialCorpus,
        corpus_id: str,
        seed: int,
        classifier: typing.Callable[[str], lab_classifiers.ClassifierHandle],
        default_guide: str | None = None,
    ) -> tuple[lab_training.DenoiserRunSpec, _OptionalHandle, _OptionalHandle]:
        guide_ref = training["guide"] or default_guide
        guide = classifier(guide_ref) if guide_ref else None
        target = classifier(training["target"]) if training["target"] else guide
        kind = training["loss"]
        if kind != "pgd" and guide is None:
            raise lab_errors.LabConfigurationError(f"{kind} loss needs a guide classifier")
        loss = lab_losses.GuidedLossSpec(
            kind=kind,
            guiding_classifier=None if kind == "pgd" else guide.handle_id,  # type: ignore[union-attr]
            tap=training["tap"],
        )
        shape = tuple(corpus.input_shape)
        if training["preset"] == "paper":
            base = lab_denoisers.DenoiserConfig.paper_preset(shape)  # type: ignore[arg-type]
        else:
            base = lab_denoisers.DenoiserConfig(input_shape=shape)  # type: ignore[arg-type]
        denoiser = lab_denoisers.DenoiserConfig.from_dict({**base.to_dict(), **training["denoiser"], "input_shape": shape})
        run = lab_training.DenoiserRunSpec(
            denoiser=denoiser,
            loss=loss,
            corpus_id=corpus_id,
            max_epochs=training["max_epochs"],
            batch_size=training["batch_size"],
            learning_rate=training["learning_rate"],
            reduced_learning_rate=training["reduced_learning_rate"],
            plateau_patience=training["plateau_patience"],
            plateau_min_improvement=training["plateau_min_improvement"],
            clean_ratio=training["clean_ratio"],
            seed=seed,
            max_steps_per_epoch=training["max_steps_per_epoch"],
        )
        return run, None if kind == "pgd" else guide, target

    def train_denoiser(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        corpus = self.load_corpus(params["corpus"], lab_corpus.TRAINING_SPLITS)
        run, guide, target = self._denoiser_run(params, corpus, params["corpus"], config["seed"], self.load_classifier)
        results: list[lab_training.TrainingResult] = []

        def write(staging: pathlib.Path) -> None:
            results.append(
                lab_training.train_denoiser(
                    run, corpus, guide, target, staging, self.client.logger, self.device, config["progress"]
                )
            )

        artifact = self._publish("denoisers", params["alias"], write)
        return artifact, {"best_epoch": results[0].best_epoch, "val_loss": results[0].best_val_loss}

    def _save_report(self, report: lab_evaluation.EvaluationReport, staging: pathlib.Path) -> None:
        report.save(staging)
        lab_plotting.plot_bar_chart(report.to_chart(), staging / "accuracy.png")

    def evaluate(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        corpus = self.load_corpus(params["corpus"], params["splits"])
        target = self.load_classifier(params["classifier"])
        pipelines = [lab_evaluation.DefensePipeline(lab_evaluation.NO_DEFENSE, target)]
        pipelines += [
            lab_evaluation.DefensePipeline(name, target, self.load_denoiser(ref))
            for name, ref in params["denoisers"].items()
        ]
        pipelines += [
            lab_evaluation.DefensePipeline(name, self.load_classifier(ref, name))
            for name, ref in params["baselines"].items()
        ]
        if params["oracle"]:
            pipelines.append(lab_evaluation.DefensePipeline(lab_evaluation.ORACLE, target, oracle=True))
        evaluator = lab_evaluation.Evaluator(self.client.logger, params["batch_size"])
        report = evaluator.report(
            pipelines,
            corpus,
            params["splits"],
            metadata={"title": f"Defenses of {params['classifier']}", "corpus": params["corpus"]},
        )
        artifact = self._publish("evaluations", params["alias"], lambda staging: self._save_report(report, staging))
        return artifact, {"rows": len(report.rows), "defenses": report.defenses()}

    def transfer(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        corpus = self.load_corpus(params["corpus"], params["splits"])
        target = self.load_classifier(params["target"])
        own = self.load_denoiser(params["own_denoiser"]) if params["own_denoiser"] else None
        report = lab_evaluation.transfer_model_eval(
            self.load_denoiser(params["denoiser"]),
            target,
            corpus,
            params["splits"],
            denoiser_guided_by_b=own,
            guide_a=params["guide_name"],
            evaluator=lab_evaluation.Evaluator(self.client.logger, params["batch_size"]),
        )
        artifact = self._publish("transfers", params["alias"], lambda staging: self._save_report(report, staging))
        return artifact, {"rows": len(report.rows), "defenses": report.defenses()}

    def class_split(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        training = params["training"]
        dataset = self.load_dataset(params, config["seed"])
        classifiers = {name: self.load_classifier(ref, name) for name, ref in params["classifiers"].items()}
        protocol = lab_corpus.CorpusProtocol.from_dict(params["protocol"])
        forge = lab_corpus.CorpusForge(self.client.logger, params["batch_size"], config["progress"])
        corpora = lab_evaluation.class_split_protocol(
            dataset, params["train_fraction"], protocol, classifiers, config["seed"], forge
        )

        def lookup(name: str) -> lab_classifiers.ClassifierHandle:
            if name not in classifiers:
                raise lab_errors.LabConfigurationError(
                    f"class-split guide {name!r} is not one of the listed classifiers: {', '.join(classifiers)}"
                )
            return classifiers[name]

        run, guide, _ = self._denoiser_run(
            training, corpora.train_corpus, params["alias"], config["seed"], lookup, default_guide=protocol.defended
        )
        defended = classifiers[protocol.defended]
        test_splits = list(corpora.heldout_corpus.splits)

        def write(staging: pathlib.Path) -> None:
            result = lab_training.train_denoiser(
                run, corpora.train_corpus, guide, defended, staging, self.client.logger, self.device, config["progress"]
            )
            report = lab_evaluation.Evaluator(self.client.logger).report(
                [
                    lab_evaluation.DefensePipeline(lab_evaluation.NO_DEFENSE, defended),
                    lab_evaluation.DefensePipeline(run.loss.kind.upper(), defended, result.model),
                    lab_evaluation.DefensePipeline(lab_evaluation.ORACLE, defended, oracle=True),
                ],
                corpora.heldout_corpus,
                test_splits,
                metadata={
                    "title": f"Held-out classes ({params['train_fraction']:.0%} used for training)",
                    "degenerate": corpora.classes.degenerate,
                },
            )
            self._save_report(report, staging)
            corpora.train_corpus.save(staging / "train-corpus")
            corpora.heldout_corpus.save(staging / "heldout-corpus")
            _write_json(
                staging / "classes.json",
                {"train": corpora.classes.train_classes, "heldout": corpora.classes.heldout_classes},
            )

        artifact = self._publish("class-splits", params["alias"], write)
        return artifact, {
            "train_classes": corpora.classes.train_classes,
            "heldout_classes": corpora.classes.heldout_classes,
        }

    def _samples(
        self, split: lab_corpus.CorpusSplit, count: int, epsilon_255: int | None, seed: int
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Seeded subset of a split, optionally restricted to one ε; returns (clean, adversarial)."""
        candidates = torch.arange(len(split))
        if epsilon_255 is not None:
            candidates = torch.tensor(
                [i for i, entry in enumerate(split.entries) if entry.epsilon_255 == epsilon_255], dtype=torch.long
            )
            if not len(candidates):
                raise lab_errors.LabConfigurationError(f"split {split.name} has no entries at ε={epsilon_255}/255")
        index = candidates[lab_analysis.select_samples(len(candidates), count, seed)]
        return split.clean_for(index), split.adversarial[index]

    def analyze_amplification(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        split = self.load_corpus(params["corpus"], [params["split"]]).split(params["split"])
        classifier = self.load_classifier(params["classifier"])
        denoisers = {name: self.load_denoiser(ref) for name, ref in params["denoisers"].items()}
        clean, adversarial = self._samples(split, params["samples"], params["epsilon_255"], config["seed"])
        profiles = lab_analysis.amplification_profiles(
            classifier, clean, adversarial, denoisers, seed=config["seed"], norm=params["norm"]
        )
        for profile in profiles:
            self.client.logger.metric(
                "profile", condition=profile.condition, top=profile.levels[-1], pixels=profile.levels[0]
            )

        def write(staging: pathlib.Path) -> None:
            lab_analysis.save_profiles(staging / PROFILES_FILE, profiles)
            title = f"Error amplification on {classifier.handle_id}"
            lab_plotting.plot_profiles(profiles, staging / "profiles.png", title)
            if denoisers:
                shown = adversarial[: params["demo_samples"]]
                outputs = {name: lab_denoisers.denoise(model, shown)[0].clamp(0.0, 1.0) for name, model in denoisers.items()}
                lab_plotting.plot_denoising_demo(
                    clean[: params["demo_samples"]], shown, outputs, staging / "demo.png", params["demo_samples"]
                )

        artifact = self._publish("amplification", params["alias"], write)
        return artifact, {profile.condition: profile.levels[-1] for profile in profiles}

    def analyze_noise(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        if not params["denoisers"]:
            raise lab_errors.LabConfigurationError("analyze-noise needs at least one denoiser")
        split = self.load_corpus(params["corpus"], [params["split"]]).split(params["split"])
        clean, adversarial = self._samples(split, params["samples"], params["epsilon_255"], config["seed"])
        scatters = []
        for name, ref in params["denoisers"].items():
            denoised, _ = lab_denoisers.denoise(self.load_denoiser(ref), adversarial)
            scatter = lab_analysis.noise_scatter(clean, adversarial, denoised, name, params["bins"], params["extent"])
            self.client.logger.metric("noise-fit", condition=name, slope=scatter.slope, residual_std=scatter.residual_std)
            scatters.append(scatter)

        def write(staging: pathlib.Path) -> None:
            for scatter in scatters:
                scatter.save(staging / f"scatter-{scatter.condition}.npz")
            _write_json(staging / SCATTERS_FILE, [scatter.summary() for scatter in scatters])
            lab_plotting.plot_noise_scatters(scatters, staging / "scatter.png")

        artifact = self._publish("noise", params["alias"], write)
        return artifact, {scatter.condition: scatter.slope for scatter in scatters}

    def ensemble_eval(self, config: dict[str, typing.Any]) -> tuple[pathlib.Path, dict[str, typing.Any]]:
        params = config["params"]
        corpus = self.load_corpus(params["corpus"], [params["split"]])
        members: list[lab_abc.EnsembleMember] = params["members"]
        pipelines = [
            lab_evaluation.DefensePipeline(
                member["name"],
                self.load_classifier(member["classifier"], member["name"]),
                self.load_denoiser(member["denoiser"]) if member["denoiser"] else None,
            )
            for member in members
        ]
        report = lab_evaluation.ensemble_report(
            pipelines, corpus, params["split"], params["batch_size"], self.client.logger
        )
        artifact = self._publish("ensembles", params["alias"], lambda staging: self._save_report(report, staging))
        return artifact, {"rows": len(report.rows), "annotations": len(report.annotations)}
