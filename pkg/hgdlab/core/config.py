"""
Experiment config loading, overrides and per-stage schema validation.

Usage:
    from hgdlab.core.config import ConfigChecker

    checker = ConfigChecker(client)
    raw = checker.load("configs/desk/evaluate.yaml")
    config = checker.resolve(checker.apply_overrides(raw, ["--seed", "7"]))
"""

import copy
import dataclasses
import pathlib
import typing

import yaml

import hgdlab.abc as lab_abc
import hgdlab.core.base as lab_core_base
import hgdlab.internal.errors as lab_errors
import hgdlab.lab.classifiers as lab_classifiers
import hgdlab.lab.losses as lab_losses
from hgdlab.internal.logger import LogLevel

if typing.TYPE_CHECKING:
    import hgdlab.client as lab_client

_MISSING = object()


@dataclasses.dataclass
class ValidationIssue:
    """Represents a validation issue found during checking."""

    severity: str  # "error", "warning", "info"
    component: str  # "config", "params", "paths"
    name: str
    message: str
    suggestion: str = ""

    def __str__(self) -> str:
        icon = {"error": "❌", "warning": "⚠️", "info": "ℹ️"}.get(self.severity, "•")
        msg = f"{icon} [{self.severity.upper()}] {self.component}: {self.name}"
        msg += f"\n  {self.message}"
        if self.suggestion:
            msg += f"\n  💡 Suggestion: {self.suggestion}"
        return msg


@dataclasses.dataclass(frozen=True)
class Field:
    """One schema entry: accepted types, required flag, default and allowed values."""

    types: tuple[type, ...]
    required: bool = False
    default: typing.Any = None
    choices: tuple[typing.Any, ...] | None = None
    nullable: bool = False

    @property
    def type_name(self) -> str:
        names = "|".join(t.__name__ for t in self.types)
        return f"{names}|null" if self.nullable else names

    def accepts(self, value: typing.Any) -> bool:
        if value is None:
            return self.nullable
        if isinstance(value, bool) and bool not in self.types:
            return False
        if float in self.types and isinstance(value, int):
            return True
        return isinstance(value, self.types)


def required(*types: type, choices: typing.Iterable[typing.Any] | None = None) -> Field:
    return Field(types, required=True, choices=tuple(choices) if choices else None)


def optional(
    default: typing.Any, *types: type, choices: typing.Iterable[typing.Any] | None = None, nullable: bool = False
) -> Field:
    return Field(types, default=default, choices=tuple(choices) if choices else None, nullable=nullable)


DEFAULT_TEST_SPLITS = ["white-test", "black-test"]

TOP_LEVEL_SCHEMA: dict[str, Field] = {
    "stage": required(str),
    "seed": optional(0, int),
    "device": optional("cpu", str),
    "progress": optional(False, bool),
    "log_level": optional(LogLevel.STANDARD.value, str, choices=[level.value for level in LogLevel]),
    "paths": optional({}, dict),
    "params": optional({}, dict),
}

PATHS_SCHEMA: dict[str, Field] = {
    "data_root": optional("data", str),
    "artifact_root": optional("artifacts", str),
}

_DENOISER_TRAINING: dict[str, Field] = {
    "loss": required(str, choices=lab_losses.LOSS_KINDS),
    "guide": optional(None, str, nullable=True),
    "target": optional(None, str, nullable=True),
    "tap": optional(None, str, nullable=True),
    "preset": optional("desk", str, choices=["desk", "paper"]),
    "denoiser": optional({}, dict),
    "max_epochs": optional(20, int),
    "batch_size": optional(32, int),
    "learning_rate": optional(1e-3, float),
    "reduced_learning_rate": optional(1e-4, float),
    "plateau_patience": optional(3, int),
    "plateau_min_improvement": optional(0.01, float),
    "clean_ratio": optional(7, int),
    "max_steps_per_epoch": optional(None, int, nullable=True),
}

STAGE_SCHEMAS: dict[str, dict[str, Field]] = {
    "train-classifier": {
        "alias": required(str),
        "dataset": required(str),
        "dataset_options": optional({}, dict),
        "architecture": required(str, choices=lab_classifiers.ARCHITECTURES),
        "arch_options": optional({}, dict),
        "epochs": optional(10, int),
        "batch_size": optional(128, int),
        "learning_rate": optional(1e-3, float),
        "weight_decay": optional(5e-4, float),
        "adversarial_epsilon_255": optional(0.0, float),
    },
    "forge-corpus": {
        "alias": optional("corpus", str),
        "dataset": required(str),
        "dataset_options": optional({}, dict),
        "classifiers": required(dict),
        "protocol": required(dict),
        "splits": optional(None, list, nullable=True),
        "batch_size": optional(128, int),
    },
    "train-denoiser": {
        "alias": required(str),
        "corpus": required(str),
        **_DENOISER_TRAINING,
    },
    "evaluate": {
        "alias": optional("evaluation", str),
        "corpus": required(str),
        "classifier": required(str),
        "denoisers": optional({}, dict),
        "baselines": optional({}, dict),
        "splits": optional(DEFAULT_TEST_SPLITS, list),
        "oracle": optional(True, bool),
        "batch_size": optional(256, int),
    },
    "transfer": {
        "alias": optional("transfer", str),
        "corpus": required(str),
        "target": required(str),
        "denoiser": required(str),
        "guide_name": optional("A", str),
        "own_denoiser": optional(None, str, nullable=True),
        "splits": optional(DEFAULT_TEST_SPLITS, list),
        "batch_size": optional(256, int),
    },
    "class-split": {
        "alias": optional("class-split", str),
        "dataset": required(str),
        "dataset_options": optional({}, dict),
        "classifiers": required(dict),
        "protocol": required(dict),
        "train_fraction": optional(0.7, float),
        "training": optional({"loss": "lgd"}, dict),
        "batch_size": optional(128, int),
    },
    "analyze-amplification": {
        "alias": optional("amplification", str),
        "corpus": required(str),
        "split": optional("white-test", str),
        "classifier": required(str),
        "denoisers": optional({}, dict),
        "samples": optional(100, int),
        "epsilon_255": optional(None, int, nullable=True),
        "norm": optional(1.0, float),
        "demo_samples": optional(4, int),
    },
    "analyze-noise": {
        "alias": optional("noise", str),
        "corpus": required(str),
        "split": optional("white-test", str),
        "denoisers": required(dict),
        "samples": optional(100, int),
        "epsilon_255": optional(None, int, nullable=True),
        "bins": optional(101, int),
        "extent": optional(0.125, float),
    },
    "ensemble-eval": {
        "alias": optional("ensemble", str),
        "corpus": required(str),
        "members": required(list),
        "split": optional("black-test", str),
        "batch_size": optional(256, int),
    },
}

# Nested parameter blocks checked with their own schema.
NESTED_SCHEMAS: dict[tuple[str, str], dict[str, Field]] = {
    ("class-split", "training"): _DENOISER_TRAINING,
}

MEMBER_SCHEMA: dict[str, Field] = {
    "name": required(str),
    "classifier": required(str),
    "denoiser": optional(None, str, nullable=True),
}


def parse_overrides(tokens: typing.Sequence[str]) -> list[tuple[str, typing.Any]]:
    """
    Turn ``["--key", "value", "--other=3"]`` into ``[("key", "value"), ("other", 3)]``.

    Values follow YAML scalar rules, so ``3`` is an int and ``[4, 16]`` a list.
    """
    pairs: list[tuple[str, typing.Any]] = []
    index = 0
    while index < len(tokens):
        token = tokens[index]
        if not token.startswith("--") or len(token) == 2:
            raise lab_errors.LabConfigurationError(f"expected --key, got {token!r}")
        key = token[2:]
        if "=" in key:
            key, text = key.split("=", 1)
            index += 1
        else:
            if index + 1 >= len(tokens):
                raise lab_errors.LabConfigurationError(f"override --{key} has no value")
            text = tokens[index + 1]
            index += 2
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError:
            value = text
        pairs.append((key, value))
    return pairs


def _assign(config: dict[str, typing.Any], path: list[str], value: typing.Any) -> None:
    node = config
    for part in path[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise lab_errors.LabConfigurationError(f"cannot override {'.'.join(path)}: {part} is not a mapping")
        node = child
    node[path[-1]] = value


def _check_fields(
    values: typing.Mapping[str, typing.Any],
    schema: typing.Mapping[str, Field],
    component: str,
    prefix: str = "",
) -> list[ValidationIssue]:
    issues: list[ValidationIssue] = []
    for key in values:
        if key not in schema:
            issues.append(
                ValidationIssue(
                    "error", component, f"{prefix}{key}", "unknown field", f"known fields: {', '.join(schema)}"
                )
            )
    for key, field in schema.items():
        name = f"{prefix}{key}"
        if key not in values:
            if field.required:
                issues.append(ValidationIssue("error", component, name, "required field is missing"))
            continue
        value = values[key]
        if not field.accepts(value):
            issues.append(
                ValidationIssue(
                    "error", component, name, f"expected {field.type_name}, got {type(value).__name__} {value!r}"
                )
            )
        elif field.choices is not None and value is not None and value not in field.choices:
            issues.append(
                ValidationIssue(
                    "error", component, name, f"{value!r} is not allowed", f"choose one of: {', '.join(field.choices)}"
                )
            )
    return issues


def _fill(values: typing.Mapping[str, typing.Any], schema: typing.Mapping[str, Field]) -> dict[str, typing.Any]:
    resolved: dict[str, typing.Any] = {}
    for key, field in schema.items():
        value = values.get(key, _MISSING)
        if value is _MISSING:
            value = copy.deepcopy(field.default)
        elif value is not None and float in field.types and int not in field.types:
            value = float(value)
        resolved[key] = value
    return resolved


class ConfigChecker(lab_core_base.LabCoreObject):
    """
    Loads experiment configs and validates them against the stage schemas.

    All violations of one config are collected as `ValidationIssue` objects
    and raised together in a single `LabSchemaError`.
    """

    def __init__(self, client: "lab_client.LabClient") -> None:
        super().__init__(client)
        self.issues: list[ValidationIssue] = []

    def add_issue(self, issue: ValidationIssue) -> None:
        self.issues.append(issue)
        log_type = typing.cast(typing.Any, issue.severity if issue.severity in ("error", "warning") else "info")
        self.client.logger.log(f"{issue.component}: {issue.name}: {issue.message}", log_type)

    def load(self, path: pathlib.Path | str) -> dict[str, typing.Any]:
        """Parse a YAML config file into a plain mapping."""
        path = pathlib.Path(path)
        self.client.logger.log(f"Loading config {path}", "debug")
        if not path.is_file():
            raise lab_errors.LabConfigurationError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as err:
            raise lab_errors.LabConfigurationError(f"cannot parse {path}: {err}") from err
        if not isinstance(data, dict):
            raise lab_errors.LabConfigurationError(f"{path} must contain a mapping at the top level")
        return data

    def apply_overrides(
        self, config: typing.Mapping[str, typing.Any], tokens: typing.Sequence[str]
    ) -> dict[str, typing.Any]:
        """
        Apply ``--key value`` overrides to a copy of `config`.

        Dotted keys address nested fields; a bare key targets a top-level
        field when one exists and ``params`` otherwise.
        """
        updated = copy.deepcopy(dict(config))
        for key, value in parse_overrides(tokens):
            path = key.split(".")
            if len(path) == 1 and key not in TOP_LEVEL_SCHEMA:
                path = ["params", key]
            self.client.logger.log(f"Override {'.'.join(path)} = {value!r}", "debug")
            _assign(updated, path, value)
        return updated

    def validate(self, config: typing.Mapping[str, typing.Any]) -> list[ValidationIssue]:
        """Every schema violation of `config`; an empty list means valid."""
        self.issues = []
        for issue in _check_fields(config, TOP_LEVEL_SCHEMA, "config"):
            self.add_issue(issue)
        paths = config.get("paths") or {}
        if isinstance(paths, dict):
            for issue in _check_fields(paths, PATHS_SCHEMA, "paths", "paths."):
                self.add_issue(issue)

        stage = config.get("stage")
        params = config.get("params") or {}
        if stage not in STAGE_SCHEMAS or not isinstance(params, dict):
            return list(self.issues)
        for issue in _check_fields(params, STAGE_SCHEMAS[stage], "params", "params."):
            self.add_issue(issue)
        for (nested_stage, key), schema in NESTED_SCHEMAS.items():
            block = params.get(key)
            if nested_stage == stage and isinstance(block, dict):
                for issue in _check_fields(block, schema, "params", f"params.{key}."):
                    self.add_issue(issue)
        if stage == "ensemble-eval" and isinstance(params.get("members"), list):
            self._check_members(params["members"])
        return list(self.issues)

    def _check_members(self, members: list[typing.Any]) -> None:
        if not members:
            self.add_issue(ValidationIssue("error", "params", "params.members", "ensemble needs at least one member"))
        for index, member in enumerate(members):
            prefix = f"params.members[{index}]."
            if not isinstance(member, dict):
                self.add_issue(ValidationIssue("error", "params", prefix.rstrip("."), "member must be a mapping"))
                continue
            for issue in _check_fields(member, MEMBER_SCHEMA, "params", prefix):
                self.add_issue(issue)

    def resolve(self, config: typing.Mapping[str, typing.Any]) -> lab_abc.ExperimentConfig:
        """
        Validate and fill in defaults.

        Raises
        ------
        LabUnknownStageError
            If ``stage`` names no known stage.
        LabSchemaError
            If any field violates its schema.
        """
        stage = config.get("stage")
        if isinstance(stage, str) and stage not in STAGE_SCHEMAS:
            raise lab_errors.LabUnknownStageError(f"{stage!r}; known stages: {', '.join(STAGE_SCHEMAS)}")
        errors = [issue for issue in self.validate(config) if issue.severity == "error"]
        if errors:
            raise lab_errors.LabSchemaError(errors)

        resolved = _fill(config, TOP_LEVEL_SCHEMA)
        resolved["paths"] = _fill(config.get("paths") or {}, PATHS_SCHEMA)
        params = _fill(config.get("params") or {}, STAGE_SCHEMAS[stage])
        for (nested_stage, key), schema in NESTED_SCHEMAS.items():
            if nested_stage == stage:
                params[key] = _fill(params[key], schema)
        if stage == "ensemble-eval":
            params["members"] = [_fill(member, MEMBER_SCHEMA) for member in params["members"]]
        resolved["params"] = params
        self.client.logger.log(f"Config for stage {stage} resolved", "debug")
        return typing.cast(lab_abc.ExperimentConfig, resolved)
