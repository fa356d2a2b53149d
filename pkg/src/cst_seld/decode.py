"""
Decoding multi-ACCDOA output into discrete detections.

Per class and frame, nonzero track vectors whose pairwise angle is at most
``UNIFY_ANGLE_DEG`` are grouped by transitive closure. Each group yields one
candidate: the normalised mean direction, with the mean member length as
activity. Candidates with activity strictly above ``ACTIVITY_THRESHOLD`` are
kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from cst_seld.doa import normalize, pairwise_angles_deg, unit_to_azel
from cst_seld.errors import DataError
from cst_seld.hashing import PathLike
from cst_seld.objective import LABEL_COLUMNS, write_label_csv

UNIFY_ANGLE_DEG = 15.0
ACTIVITY_THRESHOLD = 0.5


@dataclass(frozen=True)
class DecodedEvent:
    """
    One detection.

    Attributes
    ----------
    frame : int
        Label frame (100 ms).
    class_index : int
        Sound class.
    doa : tuple of float
        Unit direction.
    activity : float
        Vector length before normalisation.
    """

    frame: int
    class_index: int
    doa: tuple[float, float, float]
    activity: float

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.doa)


@dataclass(frozen=True)
class Candidate:
    vector: np.ndarray
    activity: float


def unify_tracks(tracks: np.ndarray, angle_deg: float = UNIFY_ANGLE_DEG) -> list[Candidate]:
    """
    Group the tracks of one class-frame.

    Parameters
    ----------
    tracks : np.ndarray
        ``(N_T, 3)`` track vectors.
    angle_deg : float
        Grouping threshold (inclusive).

    Returns
    -------
    list of Candidate
        One candidate per group, in order of the group's first track.
        Zero-length tracks are treated as inactive and never grouped.

    Examples
    --------
    >>> t = np.array([[0.9, 0, 0]] * 3)
    >>> [round(c.activity, 6) for c in unify_tracks(t)]
    [0.9]
    """
    tracks = np.asarray(tracks, dtype=np.float64)
    lengths = np.linalg.norm(tracks, axis=-1)
    active = np.flatnonzero(lengths > 0)
    if active.size == 0:
        return []
    vectors = tracks[active]
    adjacency = pairwise_angles_deg(vectors, vectors) <= angle_deg
    n_groups, membership = connected_components(csr_matrix(adjacency), directed=False)

    out = []
    # connected_components labels groups in order of first member
    for g in range(n_groups):
        members = membership == g
        direction = normalize(vectors[members].mean(axis=0))
        activity = float(lengths[active][members].mean())
        out.append(Candidate(direction * activity, activity))
    return out


def threshold_events(
    candidates: list[Candidate],
    frame: int = 0,
    class_index: int = 0,
    threshold: float = ACTIVITY_THRESHOLD,
) -> list[DecodedEvent]:
    """Keep candidates with activity strictly above ``threshold``."""
    events = []
    for c in candidates:
        if c.activity > threshold:
            d = normalize(c.vector)
            events.append(DecodedEvent(frame, class_index, tuple(float(v) for v in d), c.activity))
    return events


def decode_multi_accdoa(
    output: np.ndarray,
    angle_deg: float = UNIFY_ANGLE_DEG,
    threshold: float = ACTIVITY_THRESHOLD,
) -> list[DecodedEvent]:
    """
    Decode a clip of multi-ACCDOA frames.

    Parameters
    ----------
    output : np.ndarray
        ``(T', N_cls, N_T, 3)``.

    Returns
    -------
    list of DecodedEvent
        Ordered by frame, then class.
    """
    output = np.asarray(output)
    if output.ndim != 4 or output.shape[-1] != 3:
        raise DataError(f"Expected multi-ACCDOA of shape (T, N_cls, N_T, 3); got {output.shape}.")
    lengths = np.linalg.norm(output, axis=-1)
    events = []
    for t, c in zip(*np.nonzero(lengths.max(axis=-1) > threshold)):
        events.extend(
            threshold_events(unify_tracks(output[t, c], angle_deg), int(t), int(c), threshold)
        )
    return events


def events_to_dataframe(events: list[DecodedEvent]) -> pd.DataFrame:
    """
    Label-table rows for decoded events.

    The source index numbers events within each (frame, class) in order.
    """
    rows = []
    counters: dict[tuple[int, int], int] = {}
    for ev in events:
        key = (ev.frame, ev.class_index)
        source = counters.get(key, 0)
        counters[key] = source + 1
        az, el = unit_to_azel(np.asarray(ev.doa))
        rows.append((ev.frame, ev.class_index, source, float(az), float(el)))
    return pd.DataFrame(rows, columns=LABEL_COLUMNS)


def events_to_csv(events: list[DecodedEvent], path: PathLike) -> pd.DataFrame:
    table = events_to_dataframe(events)
    write_label_csv(table, path)
    return table
