"""
Training loop: Adam, the tri-stage learning-rate schedule, batch
augmentations, per-epoch checkpoints and the loss curve.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from cst_seld.acs import ACS_TRANSFORMS, apply_direction, apply_features
from cst_seld.checkpoint import load_checkpoint, save_checkpoint
from cst_seld.config import FEATURES_PER_LABEL_FRAME, AugmentConfig, RunConfig
from cst_seld.enums import Augmentation, LossKind
from cst_seld.errors import DataError, NumericError
from cst_seld.features import FeatureTensor, extract_features_for_files, load_feature_cache
from cst_seld.hashing import PathLike, resolve_path
from cst_seld.model import Parameters, forward, init_parameters, make_predictor
from cst_seld.objective import (
    AdpitTargetSet,
    assemble_adpit_targets,
    count_weak_active,
    loss_for,
    read_label_csv,
    stack_targets,
)
from cst_seld.synth import list_clips
from cst_seld.tensor import Tensor, default_precision

logger = logging.getLogger(__name__)

LOSS_CURVE_NAME = "loss_curve.csv"
FEATURE_CACHE_DIR = "features"


# ----------------------------------------------------------------------
# optimiser and schedule
# ----------------------------------------------------------------------


class Adam:
    """
    Adam with bias correction.

    A zero learning rate leaves every parameter bit-identical.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if lr == 0:
                continue
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)


def tri_stage_lr(
    step: int,
    total_steps: int,
    peak: float,
    ramp_fraction: float = 0.1,
    hold_fraction: float = 0.4,
) -> float:
    """
    Tri-stage schedule: linear ramp from ``peak/100``, hold at ``peak``,
    cosine decay back to ``peak/100``.

    Examples
    --------
    >>> tri_stage_lr(0, 100, 1e-3)
    1e-05
    >>> tri_stage_lr(30, 100, 1e-3)
    0.001
    """
    floor = peak / 100.0
    ramp = int(ramp_fraction * total_steps)
    hold = int(hold_fraction * total_steps)
    decay = max(total_steps - ramp - hold, 1)
    if step < ramp:
        return floor + (peak - floor) * step / ramp
    if step < ramp + hold:
        return peak
    progress = min((step - ramp - hold) / decay, 1.0)
    return floor + (peak - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


# ----------------------------------------------------------------------
# data
# ----------------------------------------------------------------------


@dataclass
class TrainingSet:
    """
    Feature windows with their targets.

    Attributes
    ----------
    features : np.ndarray
        ``(N, 7, T, F)``.
    targets : AdpitTargetSet
        Batch of N with ``T / 5`` label frames.
    """

    features: np.ndarray
    targets: AdpitTargetSet

    def __post_init__(self):
        n, _, t, _ = self.features.shape
        if self.targets.shape[:2] != (n, t // FEATURES_PER_LABEL_FRAME):
            raise DataError(
                f"Targets {self.targets.shape} do not match features {self.features.shape}."
            )

    def __len__(self) -> int:
        return self.features.shape[0]


def windows_from_clip(
    features: FeatureTensor, labels: pd.DataFrame, window: int, n_classes: int, n_tracks: int
) -> TrainingSet:
    """Cut a clip into non-overlapping windows (the tail is zero-padded)."""
    n_windows = max(math.ceil(features.num_frames / window), 1)
    data = features.fit_frames(n_windows * window).data
    label_window = window // FEATURES_PER_LABEL_FRAME
    targets = assemble_adpit_targets(labels, n_windows * label_window, n_classes, n_tracks)
    x = data.reshape(data.shape[0], n_windows, window, data.shape[2]).transpose(1, 0, 2, 3)
    events = targets.events.reshape((n_windows, label_window) + targets.events.shape[2:])
    counts = targets.counts.reshape((n_windows, label_window) + targets.counts.shape[2:])
    return TrainingSet(x, AdpitTargetSet(events, counts))


def concat_sets(sets: Sequence[TrainingSet]) -> TrainingSet:
    return TrainingSet(
        np.concatenate([s.features for s in sets]), stack_targets([s.targets for s in sets])
    )


def load_training_set(data_dir: PathLike, config: RunConfig) -> TrainingSet:
    """
    Load every ``<name>.wav`` / ``<name>.csv`` pair of ``data_dir``.

    Cached features under ``data_dir/features`` are used when present.
    """
    root = resolve_path(data_dir)
    names = list_clips(root)
    if not names:
        raise DataError(f"No clips with labels found in {root}.")
    cache = root / FEATURE_CACHE_DIR
    cached = [n for n in names if (cache / f"{n}.manifest.txt").exists()]
    missing = [n for n in names if n not in cached]
    features = {n: load_feature_cache(cache / n) for n in cached}
    wavs = [root / f"{n}.wav" for n in missing]
    extracted = extract_features_for_files(wavs, n_jobs=config.n_jobs)
    features.update(zip(missing, extracted))

    cfg = config.model
    sets = []
    for n in names:
        labels = read_label_csv(root / f"{n}.csv")
        sets.append(
            windows_from_clip(features[n], labels, cfg.input_frames, cfg.n_classes, cfg.n_tracks)
        )
    logger.info("Loaded %d clip(s) from %s", len(names), root)
    return concat_sets(sets)


# ----------------------------------------------------------------------
# augmentation
# ----------------------------------------------------------------------


class Augmenter:
    """
    Draws one enabled augmentation per batch and applies it to features and
    targets consistently.
    """

    def __init__(self, cfg: AugmentConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.enabled = [a for a in Augmentation if getattr(cfg, a.value)]

    def __call__(
        self, features: np.ndarray, targets: AdpitTargetSet
    ) -> tuple[np.ndarray, AdpitTargetSet, Optional[Augmentation]]:
        if not self.enabled:
            return features, targets, None
        kind = self.enabled[int(self.rng.integers(len(self.enabled)))]
        match kind:
            case Augmentation.FRAMESHIFT:
                shift = int(self.rng.integers(targets.shape[1]))
                features, targets = frameshift(features, targets, shift)
            case Augmentation.TIME_MASK:
                length = int(self.rng.integers(1, self.cfg.max_mask_frames + 1))
                length = min(length, targets.shape[1])
                start = int(self.rng.integers(targets.shape[1] - length + 1))
                features, targets = time_mask(features, targets, start, length)
            case Augmentation.ACS:
                t = ACS_TRANSFORMS[int(self.rng.integers(len(ACS_TRANSFORMS)))]
                features = apply_features(features, t)
                targets = AdpitTargetSet(apply_direction(targets.events, t), targets.counts)
            case Augmentation.MIXUP:
                ratio = float(self.rng.beta(self.cfg.mixup_alpha, self.cfg.mixup_alpha))
                partner = self.rng.permutation(features.shape[0])
                features, targets = moderate_mixup(features, targets, partner, ratio)
        return features, targets, kind


def frameshift(
    features: np.ndarray, targets: AdpitTargetSet, shift: int
) -> tuple[np.ndarray, AdpitTargetSet]:
    """Circular shift by ``shift`` label frames (features by ``5 * shift``)."""
    shifted = np.roll(features, shift * FEATURES_PER_LABEL_FRAME, axis=2)
    return shifted, AdpitTargetSet(
        np.roll(targets.events, shift, axis=1), np.roll(targets.counts, shift, axis=1)
    )


def time_mask(
    features: np.ndarray, targets: AdpitTargetSet, start: int, length: int
) -> tuple[np.ndarray, AdpitTargetSet]:
    """Zero features and clear labels over label frames ``[start, start + length)``."""
    features = features.copy()
    events = targets.events.copy()
    counts = targets.counts.copy()
    f0 = start * FEATURES_PER_LABEL_FRAME
    features[:, :, f0 : f0 + length * FEATURES_PER_LABEL_FRAME] = 0.0
    events[:, start : start + length] = 0.0
    counts[:, start : start + length] = 0
    return features, AdpitTargetSet(events, counts)


def moderate_mixup(
    features: np.ndarray, targets: AdpitTargetSet, partner: np.ndarray, ratio: float
) -> tuple[np.ndarray, AdpitTargetSet]:
    """
    Blend each clip with ``partner``; the label is that of the clip with
    the larger ratio.
    """
    mixed = ratio * features + (1.0 - ratio) * features[partner]
    return mixed.astype(features.dtype), targets if ratio >= 0.5 else targets[partner]


# ----------------------------------------------------------------------
# loop
# ----------------------------------------------------------------------


@dataclass
class TrainingResult:
    params: Parameters
    history: pd.DataFrame
    steps: int


def planned_steps(config: RunConfig, n_examples: int) -> int:
    per_epoch = math.ceil(n_examples / config.batch_size)
    total = config.epochs * per_epoch
    return total if config.max_steps is None else min(total, config.max_steps)


def train(
    config: RunConfig,
    data: TrainingSet,
    params: Optional[Parameters] = None,
    loss_kind: Optional[LossKind] = None,
    checkpoint_dir: Optional[PathLike] = None,
) -> TrainingResult:
    """
    Optimise a CST-former on ``data``.

    Parameters
    ----------
    config : RunConfig
        Model, schedule, augmentation and seed.
    data : TrainingSet
        Training windows.
    params : Parameters, optional
        Starting weights; freshly initialised from ``config.seed`` if None.
    loss_kind : LossKind, optional
        Overrides ``config.loss``.
    checkpoint_dir : str, Path or CloudPath, optional
        Receives ``epoch_XXX/`` checkpoints and ``loss_curve.csv``.

    Raises
    ------
    NumericError
        If the loss becomes non-finite.
    """
    loss_kind = LossKind(loss_kind or config.loss)
    rng = np.random.default_rng(config.seed)
    cfg = config.model
    with default_precision(config.precision):
        dtype = config.precision.dtype
        if params is None:
            params = init_parameters(cfg, config.seed, config.precision)
        optimizer = Adam(params.trainable())
        augmenter = Augmenter(config.augment, rng)
        total = planned_steps(config, len(data))
        peak = config.learning_rate
        rows = []
        step = 0
        logger.info(
            "Training %d step(s), %s loss, peak lr %g, %d example(s)",
            total,
            loss_kind.value,
            peak,
            len(data),
        )
        for epoch in range(config.epochs):
            if step >= total:
                break
            order = rng.permutation(len(data))
            for i in range(0, len(data), config.batch_size):
                if step >= total:
                    break
                idx = order[i : i + config.batch_size]
                x, targets, _ = augmenter(data.features[idx], data.targets[idx])
                lr = tri_stage_lr(step, total, peak, config.ramp_fraction, config.hold_fraction)
                params.zero_grad()
                try:
                    out = forward(x.astype(dtype), cfg, params, train=True, rng=rng)
                    loss = loss_for(
                        loss_kind, out, targets, config.vtm_threshold, config.mask_gradient
                    )
                    loss.backward()
                except NumericError as exc:
                    raise NumericError(f"Training diverged at step {step}: {exc}") from exc
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"Training diverged at step {step}: loss {value}.")
                optimizer.step(lr)
                rows.append((step, epoch, lr, value, loss_kind.value))
                logger.debug("step %d epoch %d lr %.3g loss %.6f", step, epoch, lr, value)
                step += 1
            last = rows[-1][3] if rows else float("nan")
            logger.info("Epoch %d done at step %d (loss %.6f)", epoch, step, last)
            if checkpoint_dir is not None:
                save_checkpoint(resolve_path(checkpoint_dir) / f"epoch_{epoch:03d}", params, config)

    history = pd.DataFrame(rows, columns=["step", "epoch", "lr", "loss", "loss_kind"])
    if checkpoint_dir is not None:
        root = resolve_path(checkpoint_dir)
        root.mkdir(parents=True, exist_ok=True)
        (root / LOSS_CURVE_NAME).write_text(history.to_csv(index=False, lineterminator="\n"))
    return TrainingResult(params, history, step)


def finetune_vtm(
    config: RunConfig,
    data: TrainingSet,
    checkpoint: PathLike,
    out_dir: Optional[PathLike] = None,
) -> TrainingResult:
    """
    Continue training a checkpoint with the VTM loss.

    The result is saved under ``out_dir/final`` when ``out_dir`` is given;
    with zero steps it equals the input checkpoint.
    """
    params, _ = load_checkpoint(checkpoint, expected=config)
    result = train(config, data, params=params, loss_kind=LossKind.VTM, checkpoint_dir=out_dir)
    if out_dir is not None:
        save_checkpoint(resolve_path(out_dir) / "final", result.params, config)
    return result


def weak_active_count(
    params: Parameters, config: RunConfig, data: TrainingSet, threshold: Optional[float] = None
) -> int:
    """Active-target predictions shorter than the VTM threshold over ``data``."""
    predict = make_predictor(params, config.model)
    preds = predict(data.features.astype(params.dtype))
    return count_weak_active(preds, data.targets, threshold or config.vtm_threshold)


def mean_loss(
    params: Parameters, config: RunConfig, data: TrainingSet, loss_kind: LossKind = LossKind.ADPIT
) -> float:
    """Evaluation-mode loss over ``data`` (no augmentation, no dropout)."""
    out = forward(data.features.astype(params.dtype), config.model, params.detached())
    return loss_for(loss_kind, out, data.targets, config.vtm_threshold).item()
