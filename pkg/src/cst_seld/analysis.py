"""
Channel-attention analysis.

The last CST block's channel-attention maps (max over heads) are arranged
as a ``(C_k * F'/P_F, B * T'/P_T * C_q)`` matrix. Each time step then owns
a ``C_q``-wide column block; flattening the blocks gives one vector per
time step, and their cosine similarities show whether attention follows
the active sources. A second pass on a spatially perturbed copy of the
input measures how much the maps depend on source location.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from cst_seld.acs import PERTURBATION, AcsTransform, apply_features
from cst_seld.config import FEATURES_PER_LABEL_FRAME, ModelConfig
from cst_seld.errors import DataError
from cst_seld.hashing import PathLike, resolve_path
from cst_seld.model import AttentionMapBundle, Parameters, forward_with_attention
from cst_seld.reporting import format_label_value_pairs

logger = logging.getLogger(__name__)


def reshape_channel_map(maps: np.ndarray, grid: tuple[int, int, int]) -> np.ndarray:
    """
    Arrange channel-attention maps for analysis.

    Parameters
    ----------
    maps : np.ndarray
        ``(B * nT * nF, H, C_q, C_k)`` attention maps.
    grid : tuple of int
        ``(B, nT, nF)`` patch grid.

    Returns
    -------
    np.ndarray
        ``(C_k * nF, B * nT * C_q)``; rows run over key channel then
        frequency patch, columns over batch, time patch, query channel.
    """
    b, nt, nf = grid
    peak = maps.max(axis=1)
    c_q, c_k = peak.shape[-2:]
    if peak.shape[0] != b * nt * nf:
        raise DataError(f"Attention maps {maps.shape} do not match grid {grid}.")
    blocks = peak.reshape(b, nt, nf, c_q, c_k).transpose(4, 2, 0, 1, 3)
    return blocks.reshape(c_k * nf, b * nt * c_q)


def time_step_vectors(reshaped: np.ndarray, channels: int) -> np.ndarray:
    """Flatten each time step's column block: ``(B * nT, C_k * nF * C_q)``."""
    rows, cols = reshaped.shape
    steps = cols // channels
    return reshaped.reshape(rows, steps, channels).transpose(1, 0, 2).reshape(steps, -1)


def cosine_similarity_matrix(vectors: np.ndarray) -> np.ndarray:
    """
    Pairwise cosine similarity of row vectors.

    Zero vectors are similar only to themselves.
    """
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    unit = v / np.where(norms > 0, norms, 1.0)[:, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return np.clip(sim, -1.0, 1.0)


@dataclass
class ChannelAttentionExport:
    reshaped: np.ndarray
    similarity: np.ndarray
    grid: tuple[int, int, int]
    channels: int

    @property
    def n_steps(self) -> int:
        return self.similarity.shape[0]


def export_channel_attention(bundle: AttentionMapBundle, block: int = -1) -> ChannelAttentionExport:
    """Reshaped map and time-step similarity for one block (default: last)."""
    maps, grid = bundle.channel_attention(block)
    reshaped = reshape_channel_map(maps, grid)
    channels = maps.shape[-1]
    sim = cosine_similarity_matrix(time_step_vectors(reshaped, channels))
    return ChannelAttentionExport(reshaped, sim, grid, channels)


def segment_similarity(similarity: np.ndarray, segments: np.ndarray) -> tuple[float, float]:
    """
    Mean similarity within and across segments.

    Steps with a negative segment id are ignored; the diagonal is excluded
    from the within mean.

    Returns
    -------
    tuple of float
        ``(within, cross)``; NaN when a category has no pairs.
    """
    segments = np.asarray(segments)
    keep = segments >= 0
    sim = similarity[np.ix_(keep, keep)]
    seg = segments[keep]
    same = seg[:, None] == seg[None, :]
    off_diag = ~np.eye(len(seg), dtype=bool)
    within = sim[same & off_diag]
    cross = sim[~same]
    return (
        float(within.mean()) if within.size else float("nan"),
        float(cross.mean()) if cross.size else float("nan"),
    )


def segments_from_labels(
    labels: pd.DataFrame, n_steps: int, feature_frames_per_step: int
) -> np.ndarray:
    """
    Segment id per time step: the most frequent source active in the
    step's label frames, or -1 when nothing is active.
    """
    per_step = max(feature_frames_per_step // FEATURES_PER_LABEL_FRAME, 1)
    out = np.full(n_steps, -1)
    for step in range(n_steps):
        lo, hi = step * per_step, (step + 1) * per_step
        active = labels[(labels["frame_index"] >= lo) & (labels["frame_index"] < hi)]
        if not active.empty:
            out[step] = int(active["source_index"].mode().iloc[0])
    return out


def batch_windows(features: np.ndarray, window: int) -> np.ndarray:
    """Cut ``(7, T, F)`` into ``(B, 7, window, F)`` chronological windows."""
    c, t, f = features.shape
    n = max(-(-t // window), 1)
    padded = np.zeros((c, n * window, f), dtype=features.dtype)
    padded[:, : min(t, n * window)] = features[:, : n * window]
    return padded.reshape(c, n, window, f).transpose(1, 0, 2, 3)


@dataclass
class AnalysisResult:
    original: ChannelAttentionExport
    perturbed: ChannelAttentionExport
    frobenius_distance: float
    transform: AcsTransform
    within: float = float("nan")
    cross: float = float("nan")

    @property
    def row_uniformity(self) -> float:
        """Mean standard deviation of similarity rows (0 for uniform rows)."""
        return float(np.mean(np.std(self.original.similarity, axis=1)))

    def summary_pairs(self) -> list[tuple[str, object]]:
        return [
            ("transform_id", self.transform.id),
            ("grid", self.original.grid),
            ("time_steps", self.original.n_steps),
            ("frobenius_distance", self.frobenius_distance),
            ("within_similarity", self.within),
            ("cross_similarity", self.cross),
            ("row_uniformity", self.row_uniformity),
        ]


def analyze(
    params: Parameters,
    cfg: ModelConfig,
    features: np.ndarray,
    labels: Optional[pd.DataFrame] = None,
    transform: AcsTransform = PERTURBATION,
) -> AnalysisResult:
    """
    Channel-attention analysis of one clip.

    The clip is cut into ``cfg.input_frames`` windows forming one batch.
    With ``labels`` the within/cross-segment similarity is reported.
    """
    frozen = params.detached()
    batch = batch_windows(np.asarray(features, dtype=frozen.dtype), cfg.input_frames)
    _, bundle = forward_with_attention(batch, cfg, frozen)
    _, bundle_p = forward_with_attention(apply_features(batch, transform), cfg, frozen)
    original = export_channel_attention(bundle)
    perturbed = export_channel_attention(bundle_p)
    distance = float(np.linalg.norm(original.reshaped - perturbed.reshaped))
    result = AnalysisResult(original, perturbed, distance, transform)
    if labels is not None:
        b, nt, _ = original.grid
        segments = segments_from_labels(labels, b * nt, cfg.input_frames // nt)
        result.within, result.cross = segment_similarity(original.similarity, segments)
    logger.info("Channel-attention distance under transform %d: %.6f", transform.id, distance)
    return result


def write_analysis(
    result: AnalysisResult, out_dir: PathLike, header: Optional[list] = None
) -> None:
    """
    Write ``channel_attention.csv``, ``channel_attention_perturbed.csv``,
    ``similarity.csv`` and ``analysis.txt``.
    """
    root = resolve_path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    for name, matrix in (
        ("channel_attention", result.original.reshaped),
        ("channel_attention_perturbed", result.perturbed.reshaped),
        ("similarity", result.original.similarity),
    ):
        table = pd.DataFrame(matrix, columns=[f"c{i}" for i in range(matrix.shape[1])])
        (root / f"{name}.csv").write_text(table.to_csv(index=False, lineterminator="\n"))
    pairs: list = []
    if header:
        pairs += ["[run]", *header, ""]
    pairs += ["[analysis]", *result.summary_pairs()]
    (root / "analysis.txt").write_text(format_label_value_pairs(pairs) + "\n")
