"""
SELD evaluation on 100 ms frames.

Location-dependent error rate and F1 count a prediction as a true positive
only when it is matched to a reference of the same class within
``DOA_THRESHOLD_DEG``. Class-dependent localization error and recall use
every matched pair regardless of angle. F1, LE and LR are macro-averaged
over classes with at least one reference; ER is micro-averaged.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from cst_seld.doa import azel_to_unit, pairwise_angles_deg
from cst_seld.errors import DataError, MetricsUndefinedError
from cst_seld.hashing import PathLike, resolve_path
from cst_seld.objective import read_label_csv, validate_label_table
from cst_seld.reporting import format_label_value_pairs

logger = logging.getLogger(__name__)

DOA_THRESHOLD_DEG = 20.0
# cost offset per prediction index, added before assignment
TIE_BREAK_DEG = 1e-9
WORST_LE_DEG = 180.0


def seld_score(er: float, f1: float, le_deg: float, lr: float) -> float:
    """
    Composite SELD score ``(ER + (1 - F1) + LE/180 + (1 - LR)) / 4``.

    Raises
    ------
    DataError
        If a metric is outside its range.

    Examples
    --------
    >>> round(seld_score(0.41, 0.577, 13.8, 0.683), 4)
    0.3067
    """
    checks = {
        "ER": (er, 0.0, np.inf),
        "F1": (f1, 0.0, 1.0),
        "LE": (le_deg, 0.0, WORST_LE_DEG),
        "LR": (lr, 0.0, 1.0),
    }
    for name, (value, lo, hi) in checks.items():
        if not np.isfinite(value) or not lo <= value <= hi:
            raise DataError(f"{name} value ({value}) is outside [{lo}, {hi}].")
    return (er + (1.0 - f1) + le_deg / WORST_LE_DEG + (1.0 - lr)) / 4.0


@dataclass
class FrameMatch:
    """
    Matching of one class in one frame.

    Attributes
    ----------
    pairs : list of tuple
        ``(pred_index, ref_index, angle_deg)`` of the minimum-total-angle
        assignment.
    tp, fp, fn : int
        Location-dependent counts; a matched pair farther than the
        threshold counts as one FP and one FN.
    """

    pairs: list[tuple[int, int, float]]
    tp: int
    fp: int
    fn: int
    n_pred: int
    n_ref: int

    @property
    def angles(self) -> list[float]:
        return [a for _, _, a in self.pairs]


def match_frame(
    pred_doas: np.ndarray,
    ref_doas: np.ndarray,
    threshold_deg: float = DOA_THRESHOLD_DEG,
) -> FrameMatch:
    """
    Hungarian matching of predictions to references of one class and frame.

    Among assignments with the same total angle, the one using the lower
    prediction indices wins. Reported angles are the unperturbed ones.

    Parameters
    ----------
    pred_doas : np.ndarray
        ``(P, 3)`` predicted directions.
    ref_doas : np.ndarray
        ``(R, 3)`` reference directions.

    Examples
    --------
    >>> m = match_frame(azel_to_unit([10.0], [0.0]), azel_to_unit([0.0], [0.0]))
    >>> m.tp, round(m.angles[0], 6)
    (1, 10.0)
    """
    pred = np.asarray(pred_doas, dtype=np.float64).reshape(-1, 3)
    ref = np.asarray(ref_doas, dtype=np.float64).reshape(-1, 3)
    n_pred, n_ref = len(pred), len(ref)
    pairs: list[tuple[int, int, float]] = []
    if n_pred and n_ref:
        cost = pairwise_angles_deg(pred, ref)
        ranked = cost + TIE_BREAK_DEG * np.arange(n_pred)[:, None]
        rows, cols = linear_sum_assignment(ranked)
        pairs = [(int(p), int(r), float(cost[p, r])) for p, r in zip(rows, cols)]
    tp = sum(1 for _, _, a in pairs if a <= threshold_deg)
    return FrameMatch(pairs, tp, n_pred - tp, n_ref - tp, n_pred, n_ref)


@dataclass
class ClassTally:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_ref: int = 0
    matched: int = 0
    angle_sum: float = 0.0
    errors: int = 0

    def add(self, m: FrameMatch) -> None:
        self.tp += m.tp
        self.fp += m.fp
        self.fn += m.fn
        self.n_ref += m.n_ref
        self.matched += len(m.pairs)
        self.angle_sum += sum(m.angles)
        self.errors += max(m.fn, m.fp)

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0

    @property
    def le(self) -> float:
        return self.angle_sum / self.matched if self.matched else WORST_LE_DEG

    @property
    def lr(self) -> float:
        return self.matched / self.n_ref if self.n_ref else 0.0

    @property
    def er(self) -> float:
        return self.errors / self.n_ref if self.n_ref else 0.0


@dataclass
class MetricReport:
    """
    Overall and per-class SELD metrics.

    Attributes
    ----------
    er20 : float
        Location-dependent error rate (micro over classes).
    f1_20 : float
        Location-dependent F1, macro over classes with references.
    le_cd : float
        Class-dependent localization error in degrees (macro).
    lr_cd : float
        Class-dependent localization recall (macro).
    seld_score : float
        Composite score.
    per_class : pandas.DataFrame
        Columns ``class_index, n_ref, er20, f1_20, le_cd, lr_cd, seld_score``.
    """

    er20: float
    f1_20: float
    le_cd: float
    lr_cd: float
    seld_score: float
    per_class: pd.DataFrame = field(repr=False)
    n_frames: int = 0
    n_ref: int = 0
    n_pred: int = 0

    def to_pairs(self) -> list[tuple[str, Any]]:
        return [
            ("er20", self.er20),
            ("f1_20", self.f1_20),
            ("le_cd", self.le_cd),
            ("lr_cd", self.lr_cd),
            ("seld_score", self.seld_score),
            ("n_frames", self.n_frames),
            ("n_ref", self.n_ref),
            ("n_pred", self.n_pred),
        ]

    def to_dataframe(self) -> pd.DataFrame:
        """One ``overall`` row followed by one row per class."""
        overall = pd.DataFrame(
            [
                {
                    "scope": "overall",
                    "class_index": -1,
                    "n_ref": self.n_ref,
                    "er20": self.er20,
                    "f1_20": self.f1_20,
                    "le_cd": self.le_cd,
                    "lr_cd": self.lr_cd,
                    "seld_score": self.seld_score,
                }
            ]
        )
        per_class = self.per_class.assign(scope="class")
        return pd.concat([overall, per_class[overall.columns]], ignore_index=True)

    def to_text(self, header: Optional[list[tuple[str, Any]]] = None) -> str:
        pairs: list = []
        if header:
            pairs += ["[run]", *header, ""]
        pairs += ["[overall]", *self.to_pairs(), ""]
        for row in self.per_class.itertuples(index=False):
            pairs += [
                f"[class {row.class_index}]",
                ("n_ref", row.n_ref),
                ("er20", row.er20),
                ("f1_20", row.f1_20),
                ("le_cd", row.le_cd),
                ("lr_cd", row.lr_cd),
                ("seld_score", row.seld_score),
                "",
            ]
        return format_label_value_pairs(pairs).rstrip() + "\n"

    def save(
        self, directory: PathLike, stem: str = "metrics", header: Optional[list] = None
    ) -> None:
        """Write ``<stem>.csv`` and ``<stem>.txt`` into ``directory``."""
        root = resolve_path(directory)
        root.mkdir(parents=True, exist_ok=True)
        (root / f"{stem}.csv").write_text(
            self.to_dataframe().to_csv(index=False, lineterminator="\n")
        )
        (root / f"{stem}.txt").write_text(self.to_text(header))


def _group(table: pd.DataFrame) -> dict[tuple[int, int], np.ndarray]:
    doas = azel_to_unit(table["azimuth_deg"].to_numpy(), table["elevation_deg"].to_numpy())
    keys = zip(table["frame_index"].to_numpy(), table["class_index"].to_numpy())
    grouped: dict[tuple[int, int], list] = defaultdict(list)
    for key, d in zip(keys, doas):
        grouped[(int(key[0]), int(key[1]))].append(d)
    return {k: np.array(v) for k, v in grouped.items()}


def compute_metrics(
    pred: pd.DataFrame,
    ref: pd.DataFrame,
    n_classes: Optional[int] = None,
    threshold_deg: float = DOA_THRESHOLD_DEG,
) -> MetricReport:
    """
    Score predictions against references.

    Parameters
    ----------
    pred, ref : pandas.DataFrame
        Label tables (``frame_index, class_index, source_index, azimuth_deg,
        elevation_deg``).
    n_classes : int, optional
        Classes to report; defaults to one past the largest index seen.

    Raises
    ------
    MetricsUndefinedError
        If the reference table is empty.
    """
    ref = validate_label_table(ref, "reference")
    pred = validate_label_table(pred, "prediction")
    if ref.empty:
        raise MetricsUndefinedError("Reference set has no events; metrics are undefined.")
    if n_classes is None:
        seen = pd.concat([ref["class_index"], pred["class_index"]])
        n_classes = int(seen.max()) + 1

    pred_groups = _group(pred)
    ref_groups = _group(ref)
    tallies = [ClassTally() for _ in range(n_classes)]
    frame_fn: dict[int, int] = defaultdict(int)
    frame_fp: dict[int, int] = defaultdict(int)
    empty = np.zeros((0, 3))
    for key in sorted(set(pred_groups) | set(ref_groups)):
        frame, cls = key
        if cls >= n_classes:
            raise DataError(f"Class index {cls} out of range for {n_classes} classes.")
        m = match_frame(pred_groups.get(key, empty), ref_groups.get(key, empty), threshold_deg)
        tallies[cls].add(m)
        frame_fn[frame] += m.fn
        frame_fp[frame] += m.fp

    errors = 0
    for frame in set(frame_fn) | set(frame_fp):
        fn, fp = frame_fn[frame], frame_fp[frame]
        errors += min(fn, fp) + max(0, fn - fp) + max(0, fp - fn)
    n_ref = len(ref)
    er = errors / n_ref

    rows = []
    for c, tally in enumerate(tallies):
        if tally.n_ref == 0:
            continue
        rows.append(
            {
                "class_index": c,
                "n_ref": tally.n_ref,
                "er20": tally.er,
                "f1_20": tally.f1,
                "le_cd": tally.le,
                "lr_cd": tally.lr,
                "seld_score": seld_score(tally.er, tally.f1, tally.le, tally.lr),
            }
        )
    per_class = pd.DataFrame(
        rows, columns=["class_index", "n_ref", "er20", "f1_20", "le_cd", "lr_cd", "seld_score"]
    )
    f1 = float(per_class["f1_20"].mean())
    le = float(per_class["le_cd"].mean())
    lr = float(per_class["lr_cd"].mean())
    n_frames = len(set(pred["frame_index"]) | set(ref["frame_index"]))
    report = MetricReport(
        er20=er,
        f1_20=f1,
        le_cd=le,
        lr_cd=lr,
        seld_score=seld_score(er, f1, le, lr),
        per_class=per_class,
        n_frames=n_frames,
        n_ref=n_ref,
        n_pred=len(pred),
    )
    logger.debug("Scored %d frames: SELD %.4f", n_frames, report.seld_score)
    return report


def evaluate_files(
    pred_path: PathLike, ref_path: PathLike, n_classes: Optional[int] = None
) -> MetricReport:
    return compute_metrics(read_label_csv(pred_path), read_label_csv(ref_path), n_classes)
