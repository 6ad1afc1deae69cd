"""
Self-describing checkpoint container shared by classifiers and denoisers.

A checkpoint is a single ``torch.save`` file holding a plain dictionary:
``{"format", "kind", "state_dict", ...descriptive fields}``. Descriptive fields
must be plain Python values so files load with ``weights_only=True``.

Corpora and analysis results are stored as plain ``.npz`` array archives.
"""

import pathlib
import typing
import zipfile

import numpy as np
import torch

import hgdlab.internal.errors as lab_errors

CHECKPOINT_FORMAT = 1
CheckpointKind = typing.Literal["classifier", "denoiser"]


def save_checkpoint(
    path: pathlib.Path,
    kind: CheckpointKind,
    state_dict: typing.Mapping[str, torch.Tensor],
    **fields: typing.Any,
) -> pathlib.Path:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "state_dict": {name: tensor.detach().cpu() for name, tensor in state_dict.items()},
        **fields,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: pathlib.Path, kind: CheckpointKind) -> dict[str, typing.Any]:
    """
    Load a checkpoint and check its kind.

    Raises
    ------
    LabIOError
        If the file is missing or unreadable.
    LabConfigurationError
        If the file holds a different kind of checkpoint.
    """
    path = pathlib.Path(path)
    if not path.is_file():
        raise lab_errors.LabIOError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as err:
        raise lab_errors.LabIOError(f"cannot read checkpoint {path}: {err}") from err
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise lab_errors.LabIOError(f"{path} is not an hgd-lab checkpoint")
    if payload.get("kind") != kind:
        raise lab_errors.LabConfigurationError(
            f"{path} holds a {payload.get('kind')} checkpoint, expected {kind}"
        )
    return payload


# Fixed member timestamp so identical arrays give byte-identical archives.
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_arrays(path: pathlib.Path, arrays: typing.Mapping[str, np.ndarray]) -> pathlib.Path:
    """Write an ``.npz`` archive readable by `numpy.load`, with deterministic bytes."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as archive:
        for name in sorted(arrays):
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_EPOCH)
            with archive.open(info, "w", force_zip64=True) as handle:
                np.lib.format.write_array(
                    handle, np.ascontiguousarray(arrays[name]), allow_pickle=False
                )
    return path


def load_arrays(path: pathlib.Path, names: typing.Iterable[str]) -> dict[str, np.ndarray]:
    path = pathlib.Path(path)
    if not path.is_file():
        raise lab_errors.LabIOError(f"array archive not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as archive:
            return {name: archive[name] for name in names}
    except (OSError, KeyError, ValueError) as err:
        raise lab_errors.LabIOError(f"cannot read {path}: {err}") from err
