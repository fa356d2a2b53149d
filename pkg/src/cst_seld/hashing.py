import hashlib
from pathlib import Path
from typing import Any

import joblib
from cloudpathlib import AnyPath, CloudPath

PathLike = str | Path | CloudPath


def resolve_path(filepath: PathLike) -> Path | CloudPath:
    """
    Normalize a local or cloud-backed path into a path object.

    Parameters
    ----------
    filepath : str | Path | CloudPath
        Local filesystem path, cloud URI, or cloud path object.

    Returns
    -------
    Path | CloudPath
        Path object suitable for existence checks, reads and writes.
    """
    return AnyPath(filepath)


def calculate_object_hash(obj: Any) -> str:
    """
    Deterministic hash of a Python object (configuration echoes, arrays).

    Parameters
    ----------
    obj : Any
        The object to hash.

    Returns
    -------
    str
        Hex digest from ``joblib.hash``.

    Raises
    ------
    ValueError
        If joblib fails to hash the object.
    """
    h = joblib.hash(obj)

    if h is None:
        raise ValueError(f"Joblib failed to generate a hash for object of type {type(obj)}")

    return h


def calculate_file_hash(filepath: PathLike) -> str:
    """
    SHA-256 digest of a local or cloud-backed file, read in chunks.

    Recorded for audio inputs in inference and analysis reports.

    Raises
    ------
    FileNotFoundError
        If the file does not exist.
    """
    path_obj = resolve_path(filepath)
    if not path_obj.exists():
        raise FileNotFoundError(f"File not found: {path_obj}")

    sha256_hash = hashlib.sha256()
    with path_obj.open("rb") as f:
        for byte_block in iter(lambda: f.read(65536), b""):
            sha256_hash.update(byte_block)
    return sha256_hash.hexdigest()
