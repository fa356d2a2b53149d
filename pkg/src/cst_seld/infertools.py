"""
Inference-time processing: windowed inference, inference overlapping (IO)
and clustered-track augmented inference (CTAI).

A predictor maps a batch of feature windows ``(B, 7, T, F)`` to
multi-ACCDOA ``(B, T/5, N_cls, N_T, 3)``; ``model.make_predictor`` builds one
from trained parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import joblib
import numpy as np
import pandas as pd
from scipy.optimize import linear_sum_assignment

from cst_seld.acs import AcsTransform, apply_features, transforms, unrotate
from cst_seld.config import (
    FEATURE_FRAMES_PER_SECOND,
    FEATURES_PER_LABEL_FRAME,
    CtaiConfig,
    RunConfig,
)
from cst_seld.decode import DecodedEvent, decode_multi_accdoa
from cst_seld.errors import ConfigurationError, DataError
from cst_seld.hashing import PathLike, resolve_path

logger = logging.getLogger(__name__)

Predictor = Callable[[np.ndarray], np.ndarray]
WindowInference = Callable[[np.ndarray], np.ndarray]


# ----------------------------------------------------------------------
# windowed inference and IO
# ----------------------------------------------------------------------


def window_starts(n_frames: int, window: int, hop: int) -> list[int]:
    """
    Start frames of the inference windows.

    Windows step by ``hop`` while they fit; if the clip tail is not covered,
    further windows (zero-padded) are added at the same hop.

    Examples
    --------
    >>> window_starts(1000, 250, 50)[:3], len(window_starts(1000, 250, 50))
    ([0, 50, 100], 16)
    >>> window_starts(600, 250, 250)
    [0, 250, 500]
    """
    if window <= 0 or hop <= 0:
        raise ConfigurationError(f"Window ({window}) and hop ({hop}) must be positive.")
    starts = list(range(0, max(n_frames - window, 0) + 1, hop))
    while starts[-1] + window < n_frames:
        starts.append(starts[-1] + hop)
    return starts


def overlap_counts(n_frames: int, window: int, hop: int) -> np.ndarray:
    """Number of windows covering each output (label) frame."""
    n_out = math.ceil(n_frames / FEATURES_PER_LABEL_FRAME)
    counts = np.zeros(n_out, dtype=int)
    w = window // FEATURES_PER_LABEL_FRAME
    for s in window_starts(n_frames, window, hop):
        o = s // FEATURES_PER_LABEL_FRAME
        counts[o : min(o + w, n_out)] += 1
    return counts


def _check_alignment(window: int, hop: int) -> None:
    for name, value in (("window", window), ("hop", hop)):
        if value % FEATURES_PER_LABEL_FRAME:
            raise ConfigurationError(
                f"Inference {name} ({value} frames) must be a multiple of "
                f"{FEATURES_PER_LABEL_FRAME} feature frames."
            )


def window_estimates(
    features: np.ndarray,
    predictor: Predictor,
    window: int,
    hop: int,
    batch_size: int = 8,
) -> np.ndarray:
    """
    Per-window estimates placed on the clip's label-frame grid.

    Parameters
    ----------
    features : np.ndarray
        ``(7, T, F)`` clip features.
    predictor : Predictor
        Batch predictor.
    window, hop : int
        Window length and step in feature frames.

    Returns
    -------
    np.ndarray
        ``(n_windows, ceil(T/5), N_cls, N_T, 3)``; NaN where a window does
        not cover a frame.
    """
    if features.ndim != 3:
        raise DataError(f"Expected clip features (7, T, F); got shape {features.shape}.")
    _check_alignment(window, hop)
    n_frames = features.shape[1]
    n_out = math.ceil(n_frames / FEATURES_PER_LABEL_FRAME)
    starts = window_starts(n_frames, window, hop)

    def window_at(s: int) -> np.ndarray:
        chunk = features[:, s : s + window]
        if chunk.shape[1] < window:
            pad = np.zeros((features.shape[0], window - chunk.shape[1], features.shape[2]))
            chunk = np.concatenate([chunk, pad.astype(features.dtype)], axis=1)
        return chunk

    outputs = []
    for i in range(0, len(starts), batch_size):
        batch = np.stack([window_at(s) for s in starts[i : i + batch_size]])
        outputs.append(np.asarray(predictor(batch)))
    per_window = np.concatenate(outputs)

    estimates = np.full((len(starts), n_out) + per_window.shape[2:], np.nan)
    for k, s in enumerate(starts):
        o = s // FEATURES_PER_LABEL_FRAME
        n = min(per_window.shape[1], n_out - o)
        estimates[k, o : o + n] = per_window[k, :n]
    return estimates


def inference_overlap(
    features: np.ndarray,
    predictor: Predictor,
    window: int = 5 * FEATURE_FRAMES_PER_SECOND,
    hop: int = FEATURE_FRAMES_PER_SECOND,
    batch_size: int = 8,
) -> np.ndarray:
    """
    Componentwise median of overlapping-window estimates.

    With ``hop == window`` this is plain non-overlapping windowed inference
    (each frame has exactly one estimate); a clip shorter than one window
    is a single zero-padded window.

    Returns
    -------
    np.ndarray
        ``(ceil(T/5), N_cls, N_T, 3)``.
    """
    estimates = window_estimates(features, predictor, window, hop, batch_size)
    return np.nanmedian(estimates, axis=0)


# ----------------------------------------------------------------------
# ACS rotations
# ----------------------------------------------------------------------


def rotated_inference(
    features: np.ndarray,
    infer: WindowInference,
    rotations: Sequence[AcsTransform],
    n_jobs: int = 1,
) -> np.ndarray:
    """
    Run ``infer`` on ACS-transformed features and re-rotate the outputs.

    Returns
    -------
    np.ndarray
        ``(R, T', N_cls, N_T, 3)`` in the original coordinates.
    """

    def one(t: AcsTransform) -> np.ndarray:
        return unrotate(infer(apply_features(features, t)), t)

    outputs = joblib.Parallel(n_jobs=n_jobs, prefer="threads")(
        joblib.delayed(one)(t) for t in rotations
    )
    return np.stack(outputs) if outputs else np.zeros((0,) + features.shape)


def _squared_distances(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=-1)


def aligned_mse(
    output: np.ndarray, reference: np.ndarray, segment_frames: Optional[int] = None
) -> float:
    """
    Mean squared difference after matching track orders.

    For each class (and each run of ``segment_frames`` output frames) the
    tracks of ``output`` are assigned to those of ``reference`` by the
    Hungarian method, so a pure track permutation scores zero.

    Parameters
    ----------
    output, reference : np.ndarray
        ``(T', N_cls, N_T, 3)`` multi-ACCDOA outputs.
    segment_frames : int, optional
        Align each segment separately; the whole clip when None.
    """
    output = np.asarray(output, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    n_out, n_classes, n_tracks, _ = reference.shape
    step = segment_frames or n_out
    total = 0.0
    for s in range(0, n_out, step):
        for c in range(n_classes):
            ref = reference[s : s + step, c].transpose(1, 0, 2).reshape(n_tracks, -1)
            out = output[s : s + step, c].transpose(1, 0, 2).reshape(n_tracks, -1)
            cost = _squared_distances(ref, out)
            total += float(cost[linear_sum_assignment(cost)].sum())
    return total / reference.size


def select_survivors(
    original: np.ndarray,
    rotated: np.ndarray,
    threshold: float,
    segment_frames: Optional[int] = None,
) -> tuple[np.ndarray, list[int]]:
    """
    Keep rotations whose track-aligned MSE against ``original`` is below ``threshold``.

    Returns
    -------
    survivors : np.ndarray
        ``(R', ...)`` with the original first, track orders as given.
    kept : list of int
        Indices into ``rotated`` that survived.
    """
    kept = [
        i for i, r in enumerate(rotated) if aligned_mse(r, original, segment_frames) < threshold
    ]
    rejected = len(rotated) - len(kept)
    if rejected:
        logger.warning("CTAI rejected %d of %d rotation(s)", rejected, len(rotated))
    survivors = np.concatenate([original[None], np.asarray(rotated)[kept]])
    return survivors, kept


# ----------------------------------------------------------------------
# K-means
# ----------------------------------------------------------------------


@dataclass
class KMeansResult:
    """
    Outcome of one K-means run.

    Attributes
    ----------
    centers : np.ndarray
        ``(K, D)`` cluster centers.
    labels : np.ndarray
        ``(N,)`` cluster of each point.
    inertia : list of float
        Sum of squared distances after each assignment step.
    n_iter : int
        Iterations performed.
    converged : bool
        Whether assignments stopped changing before the cap.
    """

    centers: np.ndarray
    labels: np.ndarray
    inertia: list[float] = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def kmeans(points: np.ndarray, initial_centers: np.ndarray, max_iter: int = 500) -> KMeansResult:
    """
    Lloyd's algorithm from given initial centers.

    An empty cluster is re-seeded with the point farthest from its current
    center, provided that distance is positive. Ties in assignment go to
    the lowest center index.

    Parameters
    ----------
    points : np.ndarray
        ``(N, D)``.
    initial_centers : np.ndarray
        ``(K, D)``.
    max_iter : int, default 500
        Iteration cap.
    """
    points = np.asarray(points, dtype=np.float64)
    centers = np.array(initial_centers, dtype=np.float64)
    labels = np.full(len(points), -1)
    inertia: list[float] = []
    for it in range(1, max_iter + 1):
        d2 = _squared_distances(points, centers)
        new_labels = np.argmin(d2, axis=1)
        inertia.append(float(d2[np.arange(len(points)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            return KMeansResult(centers, labels, inertia, it, True)
        labels = new_labels
        far = d2[np.arange(len(points)), labels]
        for k in range(len(centers)):
            members = labels == k
            if members.any():
                centers[k] = points[members].mean(axis=0)
                continue
            j = int(np.argmax(far))
            if far[j] > 0:
                centers[k] = points[j]
                far[j] = 0.0
    logger.warning("K-means stopped at the iteration cap (%d)", max_iter)
    return KMeansResult(centers, labels, inertia, max_iter, False)


# ----------------------------------------------------------------------
# CTAI
# ----------------------------------------------------------------------


@dataclass
class CtaiResult:
    output: np.ndarray
    kept: list[int]
    n_survivors: int
    clusterings: list[KMeansResult]


def _align_to(centers: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Order ``centers`` (N_T, D) to best match ``reference`` tracks (N_T, D)."""
    cost = _squared_distances(reference, centers)
    rows, cols = linear_sum_assignment(cost)
    aligned = np.empty_like(centers)
    aligned[rows] = centers[cols]
    return aligned


def _cluster_class(
    survivors: np.ndarray, cls: int, cfg: CtaiConfig
) -> tuple[np.ndarray, KMeansResult]:
    n_surv, n_out, _, n_tracks, dim = survivors.shape
    points = survivors[:, :, cls].transpose(0, 2, 1, 3).reshape(n_surv * n_tracks, n_out * dim)
    rng = np.random.default_rng(cfg.kmeans_seed)
    r0 = int(rng.integers(n_surv))
    init = points[r0 * n_tracks : (r0 + 1) * n_tracks]
    result = kmeans(points, init, cfg.kmeans_max_iter)
    reference = points[:n_tracks]
    tracks = _align_to(result.centers, reference).reshape(n_tracks, n_out, dim)
    return tracks.transpose(1, 0, 2), result


def _ctai_segment(survivors: np.ndarray, cfg: CtaiConfig, n_jobs: int) -> tuple[np.ndarray, list]:
    n_classes = survivors.shape[2]
    results = joblib.Parallel(n_jobs=n_jobs, prefer="threads")(
        joblib.delayed(_cluster_class)(survivors, c, cfg) for c in range(n_classes)
    )
    output = np.stack([tracks for tracks, _ in results], axis=1)
    return output, [r for _, r in results]


def ctai(
    original: np.ndarray,
    rotated: np.ndarray,
    cfg: Optional[CtaiConfig] = None,
    segment_frames: Optional[int] = None,
    n_jobs: int = 1,
) -> CtaiResult:
    """
    Clustered-track augmented inference.

    Parameters
    ----------
    original : np.ndarray
        ``(T', N_cls, N_T, 3)`` output on the untransformed input.
    rotated : np.ndarray
        ``(R, T', N_cls, N_T, 3)`` re-rotated outputs of the other
        transforms.
    cfg : CtaiConfig, optional
        Threshold, K-means cap and seed.
    segment_frames : int, optional
        Cluster each run of this many output frames separately; the whole
        clip when None.

    Returns
    -------
    CtaiResult
        Fused output with the survivor bookkeeping.
    """
    cfg = cfg or CtaiConfig()
    original = np.asarray(original, dtype=np.float64)
    rotated = np.asarray(rotated, dtype=np.float64).reshape((-1,) + original.shape)
    survivors, kept = select_survivors(original, rotated, cfg.ctai_threshold, segment_frames)
    logger.debug("CTAI: %d survivor(s) of %d", len(survivors), len(rotated) + 1)

    n_out = original.shape[0]
    step = segment_frames or n_out
    pieces, clusterings = [], []
    for s in range(0, n_out, step):
        out, res = _ctai_segment(survivors[:, s : s + step], cfg, n_jobs)
        pieces.append(out)
        clusterings.extend(res)
    return CtaiResult(np.concatenate(pieces), kept, len(survivors), clusterings)


# ----------------------------------------------------------------------
# pipeline
# ----------------------------------------------------------------------


@dataclass
class InferenceResult:
    output: np.ndarray
    events: list[DecodedEvent]
    ctai: Optional[CtaiResult] = None


def infer_clip(
    features: np.ndarray, predictor: Predictor, config: RunConfig, batch_size: int = 8
) -> InferenceResult:
    """
    Features to decoded events: windows (IO optional), ACS rotations with
    CTAI (optional), then decoding.
    """
    window = config.seq_frames
    hop = config.io_hop_s * FEATURE_FRAMES_PER_SECOND if config.io else window

    def infer(f: np.ndarray) -> np.ndarray:
        return inference_overlap(f, predictor, window, hop, batch_size)

    output = infer(features)
    result = None
    if config.ctai:
        rotations = transforms(config.ctai_params.acs_count)[1:]
        rotated = rotated_inference(features, infer, rotations, config.n_jobs)
        result = ctai(
            output,
            rotated,
            config.ctai_params,
            segment_frames=window // FEATURES_PER_LABEL_FRAME,
            n_jobs=config.n_jobs,
        )
        output = result.output
    return InferenceResult(output, decode_multi_accdoa(output), result)


def multi_accdoa_table(output: np.ndarray) -> pd.DataFrame:
    """Long table ``frame_index, class_index, track_index, x, y, z``."""
    output = np.asarray(output)
    n_out, n_cls, n_tracks, _ = output.shape
    f, c, t = np.meshgrid(np.arange(n_out), np.arange(n_cls), np.arange(n_tracks), indexing="ij")
    flat = output.reshape(-1, 3)
    return pd.DataFrame(
        {
            "frame_index": f.ravel(),
            "class_index": c.ravel(),
            "track_index": t.ravel(),
            "x": flat[:, 0],
            "y": flat[:, 1],
            "z": flat[:, 2],
        }
    )


def write_multi_accdoa(output: np.ndarray, path: PathLike) -> None:
    table = multi_accdoa_table(output)
    resolve_path(path).write_text(table.to_csv(index=False, lineterminator="\n"))
