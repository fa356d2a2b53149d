"""
Checkpoint directories: ``manifest.txt`` plus a raw ``weights.bin`` payload.

The manifest has three sections::

    format_version = 1
    fingerprint = <joblib hash of the configuration echo>
    [config]
    <key = value echo of the RunConfig>
    [tensors]
    name,kind,dtype,shape,offset,nbytes
    ...

Tensors are stored little-endian in C order at the listed byte offsets.
"""

from __future__ import annotations

import io
import logging
from typing import Optional

import numpy as np
import pandas as pd

from cst_seld.config import RunConfig, run_config_from_mapping
from cst_seld.errors import ConfigurationError, DataError
from cst_seld.functional import BatchNormState
from cst_seld.hashing import PathLike, resolve_path
from cst_seld.model import Parameters, batch_norm_channels, parameter_shapes
from cst_seld.reporting import format_key_value_lines
from cst_seld.tensor import Tensor

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
PAYLOAD_NAME = "weights.bin"
_STATS = ("running_mean", "running_var")


def save_checkpoint(directory: PathLike, params: Parameters, config: RunConfig) -> None:
    """
    Write ``params`` and the configuration echo into ``directory``.

    Parameters
    ----------
    directory : str, Path or CloudPath
        Created if missing.
    params : Parameters
        Weights and running statistics.
    config : RunConfig
        Echoed verbatim into the manifest.
    """
    root = resolve_path(directory)
    root.mkdir(parents=True, exist_ok=True)

    rows = []
    chunks = []
    offset = 0
    entries = [(name, "param", t.data) for name, t in params.items()]
    for prefix, state in params.bn_states.items():
        entries.append((f"{prefix}.running_mean", "state", state.running_mean))
        entries.append((f"{prefix}.running_var", "state", state.running_var))
    for name, kind, array in entries:
        data = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
        raw = data.tobytes()
        rows.append(
            {
                "name": name,
                "kind": kind,
                "dtype": data.dtype.str,
                "shape": "x".join(str(n) for n in data.shape) or "scalar",
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        chunks.append(raw)
        offset += len(raw)

    table = pd.DataFrame(rows, columns=["name", "kind", "dtype", "shape", "offset", "nbytes"])
    header = format_key_value_lines(
        [("format_version", FORMAT_VERSION), ("fingerprint", config.fingerprint())]
    )
    manifest = (
        f"{header}\n[config]\n{format_key_value_lines(config.to_pairs())}\n"
        f"[tensors]\n{table.to_csv(index=False, lineterminator=chr(10))}"
    )
    (root / MANIFEST_NAME).write_text(manifest)
    (root / PAYLOAD_NAME).write_bytes(b"".join(chunks))
    logger.info("Saved checkpoint %s (%d tensors, %d bytes)", root, len(rows), offset)


def _split_manifest(text: str, path: str) -> tuple[dict[str, str], dict[str, str], str]:
    sections: dict[str, list[str]] = {"header": [], "config": [], "tensors": []}
    current = "header"
    for line in text.splitlines():
        stripped = line.strip()
        if stripped in ("[config]", "[tensors]"):
            current = stripped[1:-1]
            continue
        if stripped:
            sections[current].append(stripped)

    def pairs(lines: list[str]) -> dict[str, str]:
        out = {}
        for line in lines:
            if "=" not in line:
                raise DataError(f"{path}: malformed manifest line {line!r}.")
            key, value = (p.strip() for p in line.split("=", 1))
            out[key] = value
        return out

    return pairs(sections["header"]), pairs(sections["config"]), "\n".join(sections["tensors"])


def read_manifest(directory: PathLike) -> tuple[dict[str, str], RunConfig, pd.DataFrame]:
    """
    Parse a checkpoint manifest.

    Returns
    -------
    header : dict
        ``format_version`` and ``fingerprint``.
    config : RunConfig
        The echoed run configuration.
    table : pandas.DataFrame
        Tensor table.

    Raises
    ------
    DataError
        If the manifest is missing, malformed or of another format version.
    """
    root = resolve_path(directory)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"Checkpoint manifest not found: {path}")
    header, config_values, table_text = _split_manifest(path.read_text(), str(path))
    if header.get("format_version") != str(FORMAT_VERSION):
        raise DataError(
            f"{path}: format version {header.get('format_version')} is not {FORMAT_VERSION}."
        )
    config = run_config_from_mapping(config_values)
    table = pd.read_csv(io.StringIO(table_text), dtype={"name": str, "shape": str})
    return header, config, table


def load_checkpoint(
    directory: PathLike, expected: Optional[RunConfig] = None
) -> tuple[Parameters, RunConfig]:
    """
    Load parameters and configuration from a checkpoint directory.

    Parameters
    ----------
    directory : str, Path or CloudPath
        Checkpoint directory.
    expected : RunConfig, optional
        When given, its model configuration must equal the checkpoint's.

    Raises
    ------
    DataError
        On missing files, payload size mismatch or tensors whose shapes
        disagree with the stored model configuration.
    ConfigurationError
        If ``expected`` describes a different model.
    """
    root = resolve_path(directory)
    header, config, table = read_manifest(root)
    if expected is not None and expected.model != config.model:
        raise ConfigurationError(
            f"Checkpoint {root} was trained with a different model configuration."
        )
    payload_path = root / PAYLOAD_NAME
    if not payload_path.exists():
        raise DataError(f"Checkpoint payload not found: {payload_path}")
    payload = payload_path.read_bytes()

    shapes = parameter_shapes(config.model)
    bn_channels = batch_norm_channels(config.model)
    expected_names = set(shapes) | {f"{k}.{s}" for k in bn_channels for s in _STATS}
    stored_names = set(table["name"])
    if stored_names != expected_names:
        missing = sorted(expected_names - stored_names)
        extra = sorted(stored_names - expected_names)
        raise DataError(f"{root}: tensor set mismatch (missing {missing}, unexpected {extra}).")

    arrays: dict[str, np.ndarray] = {}
    for row in table.itertuples(index=False):
        start, size = int(row.offset), int(row.nbytes)
        if start + size > len(payload):
            raise DataError(f"{payload_path}: tensor '{row.name}' runs past the payload end.")
        shape = () if row.shape == "scalar" else tuple(int(n) for n in row.shape.split("x"))
        dtype = np.dtype(row.dtype)
        data = np.frombuffer(payload, dtype=dtype, count=size // dtype.itemsize, offset=start)
        arrays[row.name] = data.reshape(shape).astype(dtype.newbyteorder("="))

    tensors = {}
    for name, shape in shapes.items():
        if arrays[name].shape != shape:
            raise DataError(
                f"{root}: tensor '{name}' has shape {arrays[name].shape}, model expects {shape}."
            )
        tensors[name] = Tensor(arrays[name], requires_grad=True, name=name)
    states = {}
    for prefix, channels in bn_channels.items():
        mean, var = (arrays[f"{prefix}.{s}"] for s in _STATS)
        if mean.shape != (channels,) or var.shape != (channels,):
            raise DataError(f"{root}: running statistics of '{prefix}' have the wrong shape.")
        states[prefix] = BatchNormState(mean.copy(), var.copy())
    logger.info("Loaded checkpoint %s (fingerprint %s)", root, header.get("fingerprint"))
    return Parameters(tensors, states), config
