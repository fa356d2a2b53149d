"""String helpers for configuration keys and scalar parsing."""

import re
from typing import Any


def is_float_string(value: Any) -> bool:
    """
    Check if a value can be converted to a float.

    Parameters
    ----------
    value : Any
        The value to test for float conversion.

    Returns
    -------
    bool
        True if the value can be converted to a float, False otherwise.

    Examples
    --------
    >>> is_float_string("1e-3")
    True
    >>> is_float_string("end")
    False
    """
    if value is None:
        return False
    try:
        float(value)
        return True
    except (TypeError, ValueError):
        return False


def _normalize_separators(name: str) -> str:
    # hyphens, spaces and camelCase transitions all become single underscores
    name = name.strip().replace("-", "_").replace(" ", "_")
    name = re.sub(r"([a-z0-9])([A-Z])", r"\1_\2", name)
    name = re.sub(r"_+", "_", name)
    return name.strip("_")


def to_snake_case(name: str) -> str:
    """
    Convert a configuration key to snake_case.

    Examples
    --------
    >>> to_snake_case("lrPeak")
    'lr_peak'
    >>> to_snake_case("acs-count")
    'acs_count'
    """
    return _normalize_separators(name).lower()


def snake_case_keys(input_dict: dict) -> dict:
    """
    Convert every key of a flat mapping to snake_case.

    Parameters
    ----------
    input_dict : dict
        Mapping whose keys should be transformed.

    Returns
    -------
    dict
        A new dictionary with transformed keys, in the original order.

    Raises
    ------
    ValueError
        If two keys collapse onto the same normalised key
        (``lr-peak`` and ``lrPeak``, for instance).
    """
    converted: dict = {}
    for key, value in input_dict.items():
        new_key = to_snake_case(str(key))
        if new_key in converted:
            raise ValueError(f"Key '{key}' duplicates '{new_key}' after normalisation.")
        converted[new_key] = value
    return converted
