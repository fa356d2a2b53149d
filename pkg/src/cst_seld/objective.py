"""
Multi-ACCDOA targets, the ADPIT loss and the vector-threshold-masked loss.

For each (class, frame) with k active events and N_T tracks, the candidate
targets are every surjective assignment of tracks onto the k events (an
event may occupy several tracks). With three tracks there are 1, 1, 6 and
6 candidates for k = 0, 1, 2, 3. The loss takes, per (class, frame), the
candidate with the smallest mean squared error over tracks (first
enumerated wins ties) and averages over classes and frames.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from cst_seld.doa import azel_to_unit, normalize
from cst_seld.enums import LossKind, MaskGradient
from cst_seld.errors import DataError, LabelError
from cst_seld.hashing import PathLike, resolve_path
from cst_seld.tensor import Tensor

LABEL_COLUMNS = ["frame_index", "class_index", "source_index", "azimuth_deg", "elevation_deg"]
VTM_THRESHOLD = 0.5


@dataclass(frozen=True)
class EventLabelFrame:
    """
    One active event in one 100 ms label frame.

    Attributes
    ----------
    frame : int
        Label frame index (10 Hz).
    class_index : int
        Sound class.
    source_index : int
        Source / track identifier within the clip.
    doa : tuple of float
        Unit direction (x, y, z).
    """

    frame: int
    class_index: int
    source_index: int
    doa: tuple[float, float, float]

    def __post_init__(self):
        if abs(float(np.linalg.norm(self.doa)) - 1.0) > 1e-6:
            raise LabelError(f"DoA {self.doa} of frame {self.frame} is not a unit vector.")


# ----------------------------------------------------------------------
# label files
# ----------------------------------------------------------------------


def read_label_csv(path: PathLike) -> pd.DataFrame:
    """
    Read a label CSV with the columns of ``LABEL_COLUMNS``.

    Raises
    ------
    DataError
        If the file is missing or the schema differs.
    """
    path_obj = resolve_path(path)
    if not path_obj.exists():
        raise DataError(f"Label file not found: {path_obj}")
    with path_obj.open("r") as f:
        table = pd.read_csv(f)
    return validate_label_table(table, str(path_obj))


def validate_label_table(table: pd.DataFrame, source: str = "labels") -> pd.DataFrame:
    if list(table.columns) != LABEL_COLUMNS:
        raise DataError(f"{source}: expected columns {LABEL_COLUMNS}, found {list(table.columns)}.")
    if table[LABEL_COLUMNS].isna().any().any():
        raise DataError(f"{source}: empty cells in label table.")
    table = table.astype(
        {
            "frame_index": int,
            "class_index": int,
            "source_index": int,
            "azimuth_deg": float,
            "elevation_deg": float,
        }
    )
    if (table["frame_index"] < 0).any() or (table["class_index"] < 0).any():
        raise DataError(f"{source}: negative frame or class index.")
    return table.sort_values(["frame_index", "class_index", "source_index"]).reset_index(drop=True)


def write_label_csv(table: pd.DataFrame, path: PathLike) -> None:
    path_obj = resolve_path(path)
    path_obj.write_text(table[LABEL_COLUMNS].to_csv(index=False, lineterminator="\n"))


def labels_from_table(table: pd.DataFrame) -> list[EventLabelFrame]:
    doas = azel_to_unit(table["azimuth_deg"].to_numpy(), table["elevation_deg"].to_numpy())
    return [
        EventLabelFrame(int(f), int(c), int(s), tuple(float(v) for v in d))
        for f, c, s, d in zip(
            table["frame_index"], table["class_index"], table["source_index"], doas
        )
    ]


# ----------------------------------------------------------------------
# targets
# ----------------------------------------------------------------------


@lru_cache(maxsize=None)
def assignment_patterns(k: int, n_tracks: int) -> np.ndarray:
    """
    Surjective maps from tracks onto ``k`` events, in enumeration order.

    Returns
    -------
    np.ndarray
        Shape ``(n_candidates, n_tracks)`` of event indices. For ``k = 0``
        a single row of zeros (every track inactive).

    Examples
    --------
    >>> assignment_patterns(2, 3).shape
    (6, 3)
    """
    if k == 0:
        patterns = np.zeros((1, n_tracks), dtype=int)
    else:
        patterns = np.array(
            [p for p in itertools.product(range(k), repeat=n_tracks) if len(set(p)) == k],
            dtype=int,
        ).reshape(-1, n_tracks)
    patterns.setflags(write=False)
    return patterns


def max_candidates(n_tracks: int) -> int:
    return max(len(assignment_patterns(k, n_tracks)) for k in range(n_tracks + 1))


@dataclass
class AdpitTargetSet:
    """
    Active events per (batch, frame, class) and their candidate targets.

    Attributes
    ----------
    events : np.ndarray
        ``(B, T, N_cls, N_T, 3)``: the k active unit DoAs in the first k
        track slots (ordered by source index), zeros elsewhere.
    counts : np.ndarray
        ``(B, T, N_cls)`` number of active events k.
    """

    events: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.events.ndim != 5 or self.events.shape[:3] != self.counts.shape:
            raise DataError(
                f"Target events {self.events.shape} and counts {self.counts.shape} disagree."
            )
        if (self.counts > self.n_tracks).any():
            raise LabelError(f"More than {self.n_tracks} events in one class-frame.")

    @property
    def n_tracks(self) -> int:
        return self.events.shape[3]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.counts.shape

    def __getitem__(self, index) -> AdpitTargetSet:
        """Batch selection (an index array or slice over the batch axis)."""
        return AdpitTargetSet(self.events[index], self.counts[index])

    def candidates(self) -> tuple[np.ndarray, np.ndarray]:
        """
        Dense candidate targets.

        Returns
        -------
        targets : np.ndarray
            ``(B, T, N_cls, K, N_T, 3)``; K is the largest candidate count.
        valid : np.ndarray
            ``(B, T, N_cls, K)`` flags for real candidates.
        """
        n_tracks = self.n_tracks
        k_max = max_candidates(n_tracks)
        targets = np.zeros(self.shape + (k_max, n_tracks, 3), dtype=self.events.dtype)
        valid = np.zeros(self.shape + (k_max,), dtype=bool)
        for k in range(n_tracks + 1):
            sel = self.counts == k
            if not sel.any():
                continue
            patterns = assignment_patterns(k, n_tracks)
            chosen = self.events[sel]
            targets[sel, : len(patterns)] = chosen[:, patterns]
            valid[sel, : len(patterns)] = True
        return targets, valid

    def candidate_list(self, b: int, t: int, c: int) -> list[np.ndarray]:
        """Candidate assignments of one class-frame, each ``(N_T, 3)``."""
        k = int(self.counts[b, t, c])
        return [self.events[b, t, c][p] for p in assignment_patterns(k, self.n_tracks)]

    def multi_accdoa(self) -> np.ndarray:
        """One track per event: the first candidate's slots without duplication."""
        return self.events.copy()


def assemble_adpit_targets(
    labels: Iterable[EventLabelFrame] | pd.DataFrame,
    n_frames: int,
    n_classes: int,
    n_tracks: int = 3,
) -> AdpitTargetSet:
    """
    Group events per (frame, class) into an ``AdpitTargetSet`` with B = 1.

    Events beyond ``n_frames`` are ignored.

    Raises
    ------
    LabelError
        If a class-frame has more than ``n_tracks`` events or a class index
        is out of range.
    """
    if isinstance(labels, pd.DataFrame):
        labels = labels_from_table(validate_label_table(labels))
    events = np.zeros((1, n_frames, n_classes, n_tracks, 3))
    counts = np.zeros((1, n_frames, n_classes), dtype=int)
    for ev in sorted(labels, key=lambda e: (e.frame, e.class_index, e.source_index)):
        if ev.frame >= n_frames:
            continue
        if ev.class_index >= n_classes:
            raise LabelError(f"Class index {ev.class_index} out of range for {n_classes} classes.")
        k = counts[0, ev.frame, ev.class_index]
        if k >= n_tracks:
            raise LabelError(
                f"Frame {ev.frame}, class {ev.class_index}: more than {n_tracks} "
                "simultaneous events."
            )
        events[0, ev.frame, ev.class_index, k] = ev.doa
        counts[0, ev.frame, ev.class_index] = k + 1
    return AdpitTargetSet(events, counts)


def stack_targets(targets: Sequence[AdpitTargetSet]) -> AdpitTargetSet:
    return AdpitTargetSet(
        np.concatenate([t.events for t in targets]),
        np.concatenate([t.counts for t in targets]),
    )


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------


def _as_tracks(pred: Tensor, targets: AdpitTargetSet) -> Tensor:
    b, t, n_cls = targets.shape
    n_tracks = targets.n_tracks
    if pred.size != b * t * n_cls * n_tracks * 3:
        raise DataError(
            f"Prediction shape {pred.shape} does not match targets "
            f"(B={b}, T={t}, N_cls={n_cls}, N_T={n_tracks})."
        )
    return pred.reshape(b, t, n_cls, n_tracks, 3)


def best_candidates(pred_tracks: np.ndarray, targets: AdpitTargetSet) -> np.ndarray:
    """
    The minimum-error candidate per class-frame.

    Parameters
    ----------
    pred_tracks : np.ndarray
        ``(B, T, N_cls, N_T, 3)`` predictions (already masked for VTM).

    Returns
    -------
    np.ndarray
        ``(B, T, N_cls, N_T, 3)`` chosen targets; ties go to the first
        enumerated candidate.
    """
    cands, valid = targets.candidates()
    diff = cands - pred_tracks[:, :, :, None]
    err = np.mean(np.sum(diff * diff, axis=-1), axis=-1)
    err = np.where(valid, err, np.inf)
    best = np.argmin(err, axis=-1)
    return np.take_along_axis(cands, best[..., None, None, None], axis=3)[:, :, :, 0]


def _mse_against(tracks: Tensor, chosen: np.ndarray) -> Tensor:
    diff = tracks - chosen
    return (diff * diff).sum(axis=-1).mean(axis=-1).mean()


def adpit_loss(pred: Tensor, targets: AdpitTargetSet) -> Tensor:
    """
    ADPIT loss.

    Parameters
    ----------
    pred : Tensor
        ``(B, T, N_cls * N_T * 3)`` (or any shape with that many values).
    targets : AdpitTargetSet
        Targets for the same B, T and classes.

    Returns
    -------
    Tensor
        Scalar ``mean_{b,t,c} min_alpha (1/N_T) sum_n ||P - P_hat||^2``.

    Raises
    ------
    DataError
        If the prediction size does not match the targets.
    """
    tracks = _as_tracks(pred, targets)
    chosen = best_candidates(tracks.data, targets)
    return _mse_against(tracks, chosen)


def vtm_mask(tracks: np.ndarray, threshold: float = VTM_THRESHOLD) -> np.ndarray:
    """``(..., N_T, 1)`` mask: 1 where the track vector length reaches the threshold."""
    lengths = np.linalg.norm(tracks, axis=-1, keepdims=True)
    return (lengths >= threshold).astype(tracks.dtype)


def vtm_loss(
    pred: Tensor,
    targets: AdpitTargetSet,
    threshold: float = VTM_THRESHOLD,
    mask_gradient: MaskGradient = MaskGradient.HARD,
) -> Tensor:
    """
    ADPIT with vector-threshold masking of short predictions.

    Track vectors shorter than ``threshold`` are replaced by zero before the
    per-candidate error and the minimum are taken. The mask itself is a
    constant. With ``MaskGradient.HARD`` masked entries receive zero
    gradient; ``STRAIGHT_THROUGH`` keeps the masked forward value but passes
    the gradient of the unmasked error.
    """
    tracks = _as_tracks(pred, targets)
    mask = vtm_mask(tracks.data, threshold)
    masked = tracks * mask
    chosen = best_candidates(masked.data, targets)
    loss = _mse_against(masked, chosen)
    match MaskGradient(mask_gradient):
        case MaskGradient.HARD:
            return loss
        case MaskGradient.STRAIGHT_THROUGH:
            unmasked = _mse_against(tracks, chosen)
            return unmasked + Tensor(loss.data - unmasked.data)


def count_weak_active(
    pred_tracks: np.ndarray, targets: AdpitTargetSet, threshold: float = VTM_THRESHOLD
) -> int:
    """
    Count predictions shorter than ``threshold`` on tracks whose chosen
    ADPIT target is active.
    """
    chosen = best_candidates(pred_tracks, targets)
    active = np.linalg.norm(chosen, axis=-1) > 0
    weak = np.linalg.norm(pred_tracks, axis=-1) < threshold
    return int(np.sum(active & weak))


def unit_events(vectors: np.ndarray) -> np.ndarray:
    """Normalise nonzero event vectors (used after augmentation)."""
    return np.where(np.linalg.norm(vectors, axis=-1, keepdims=True) > 0, normalize(vectors), 0.0)


def loss_for(
    kind: LossKind,
    pred: Tensor,
    targets: AdpitTargetSet,
    threshold: float = VTM_THRESHOLD,
    mask_gradient: MaskGradient = MaskGradient.HARD,
) -> Tensor:
    match LossKind(kind):
        case LossKind.ADPIT:
            return adpit_loss(pred, targets)
        case LossKind.VTM:
            return vtm_loss(pred, targets, threshold, mask_gradient)


