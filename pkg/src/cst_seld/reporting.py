"""Plain-text rendering for reports, manifests and configuration echoes."""

from __future__ import annotations

from typing import Any, Sequence, Union

import numpy as np


def format_value(value: Any, precision: int = 4) -> str:
    """
    Render a scalar for a text report.

    Floats use ``precision`` decimals, booleans are lower case and
    tuples/lists are comma-joined.

    Examples
    --------
    >>> format_value(0.30666666)
    '0.3067'
    >>> format_value(True)
    'true'
    """
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.{precision}f}"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v, precision) for v in value)
    return str(value)


def format_label_value_pairs(
    pairs: Sequence[Union[tuple[str, Any], str]], padding: int = 2, suffix: str = ":"
) -> str:
    """
    Align label-value pairs by a common suffix with support for raw headers.

    Parameters
    ----------
    pairs : Sequence[Union[tuple[str, Any], str]]
        Tuples are (label, value) pairs; strings are rendered verbatim
        (section titles, blank lines).
    padding : int, default 2
        Spaces between the suffix and the value.
    suffix : str, default ":"
        Appended to labels before alignment.

    Returns
    -------
    str
        Multi-line string with values in a common column.

    Examples
    --------
    >>> print(format_label_value_pairs([("ER", 0.41), ("F1", 0.577)], padding=1))
    ER: 0.4100
    F1: 0.5770
    """
    if not pairs:
        return ""

    label_items = [p for p in pairs if isinstance(p, tuple)]
    if not label_items:
        return "\n".join(str(p) for p in pairs)

    gutter_width = max(len(str(label)) for label, _ in label_items) + len(suffix) + padding

    lines = []
    for item in pairs:
        if isinstance(item, tuple):
            label, value = item
            lines.append(f"{label}{suffix}".ljust(gutter_width) + format_value(value))
        else:
            lines.append(str(item))

    return "\n".join(lines)


def format_key_value_lines(pairs: Sequence[tuple[str, Any]]) -> str:
    """
    Render ``key = value`` lines, the on-disk form of configuration echoes.

    Float values are written with ``repr`` so they parse back exactly.
    """
    lines = []
    for key, value in pairs:
        if isinstance(value, (float, np.floating)):
            text = repr(float(value))
        else:
            text = format_value(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines)
