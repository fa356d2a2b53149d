"""
Model, augmentation, inference and run configuration.

Configurations are dataclasses validated at construction. On disk a run is
described by a flat ``key = value`` text file whose keys are the field names
of ``RunConfig``, ``ModelConfig``, ``AugmentConfig`` and ``CtaiConfig``
(case and separator insensitive), plus ``preset`` and ``multiscale`` which
select a size preset before the remaining keys are applied.
"""

from __future__ import annotations

import logging
from dataclasses import MISSING, dataclass, field, fields
from enum import Enum
from typing import Any, Callable, Mapping, Optional, Sequence

from cst_seld.enums import (
    AttentionDomain,
    LossKind,
    MaskGradient,
    PoolingProfile,
    Precision,
)
from cst_seld.errors import ConfigurationError
from cst_seld.hashing import PathLike, calculate_object_hash, resolve_path
from cst_seld.reflection import accepted_keywords, safe_call
from cst_seld.reporting import format_key_value_lines
from cst_seld.strings import is_float_string, snake_case_keys, to_snake_case

logger = logging.getLogger(__name__)

FEATURE_FRAMES_PER_SECOND = 50
LABEL_FRAMES_PER_SECOND = 10
FEATURES_PER_LABEL_FRAME = FEATURE_FRAMES_PER_SECOND // LABEL_FRAMES_PER_SECOND
SEQUENCE_LENGTHS_S = (5, 10, 20)

Kernel = tuple[int, int]

UNISCALE_KERNEL_SHALLOW: Kernel = (10, 4)
UNISCALE_KERNEL_DEEP: Kernel = (25, 4)
MULTISCALE_KERNELS: tuple[Kernel, ...] = ((25, 4), (10, 4), (5, 4), (5, 2))


def parse_kernels(value: str | Sequence[Any]) -> list[Kernel]:
    """
    Parse ULE kernels from ``"25x4,10x4"`` or a sequence of pairs.

    Raises
    ------
    ConfigurationError
        If an entry is not a pair of positive integers.

    Examples
    --------
    >>> parse_kernels("25x4, 10x4")
    [(25, 4), (10, 4)]
    """
    if isinstance(value, str):
        items = [part.strip() for part in value.split(",") if part.strip()]
        pairs: list[Any] = [item.lower().split("x") for item in items]
    else:
        pairs = list(value)

    kernels = []
    for pair in pairs:
        try:
            pt, pf = (int(v) for v in pair)
        except (TypeError, ValueError):
            raise ConfigurationError(f"Invalid ULE kernel {pair!r}; expected 'PTxPF'.") from None
        if pt <= 0 or pf <= 0:
            raise ConfigurationError(f"ULE kernel ({pt}, {pf}) must be positive.")
        kernels.append((pt, pf))
    return kernels


def format_kernels(kernels: Sequence[Kernel]) -> str:
    return ",".join(f"{pt}x{pf}" for pt, pf in kernels)


def default_kernels(n_cst: int, multiscale: bool = False) -> list[Kernel]:
    """
    ULE kernels per CST block.

    Uniscale uses (10, 4) for two-block models and (25, 4) otherwise.
    Multiscale uses (25, 4), (10, 4), (5, 4), (5, 2) in order, truncated
    for shallower models and repeating the last kernel for deeper ones.
    """
    if not multiscale:
        kernel = UNISCALE_KERNEL_SHALLOW if n_cst == 2 else UNISCALE_KERNEL_DEEP
        return [kernel] * n_cst
    kernels = list(MULTISCALE_KERNELS[:n_cst])
    kernels += [MULTISCALE_KERNELS[-1]] * (n_cst - len(kernels))
    return kernels


@dataclass
class ModelConfig:
    """
    Architecture hyperparameters of the CST-former.

    Attributes
    ----------
    channels : int
        Encoder channels C.
    n_cst : int
        Number of CST blocks.
    pooling : PoolingProfile
        Placement of time pooling (encoder front, middle or output head).
    ule_kernels : list of (int, int)
        Unfolded-local-embedding kernel (P_T, P_F) of each block.
    attention_order : list of AttentionDomain
        Attention sublayers of each block, in order; any non-empty subset.
    heads : int
        Attention heads H.
    n_classes, n_tracks, doa_dim : int
        Output layout: classes, tracks per class and DoA dimension (3).
    dropout : float
        Dropout rate used everywhere.
    fc_hidden : int
        Width of the first fully-connected layer of the head.
    input_frames : int
        Feature frames the configuration is validated for.
    mel_bands, in_channels : int
        Feature extents (64 mel bands, 7 channels).
    """

    channels: int = 64
    n_cst: int = 2
    pooling: PoolingProfile = PoolingProfile.MIDDLE
    ule_kernels: list[Kernel] = field(default_factory=lambda: default_kernels(2))
    attention_order: list[AttentionDomain] = field(
        default_factory=lambda: AttentionDomain.parse_order("CST")
    )
    heads: int = 8
    n_classes: int = 4
    n_tracks: int = 3
    doa_dim: int = 3
    dropout: float = 0.05
    fc_hidden: int = 256
    input_frames: int = 250
    mel_bands: int = 64
    in_channels: int = 7

    def __post_init__(self):
        try:
            if isinstance(self.pooling, str):
                self.pooling = PoolingProfile(self.pooling.strip().lower())
            self.attention_order = AttentionDomain.parse_order(self.attention_order)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        self.ule_kernels = parse_kernels(self.ule_kernels)
        self.validate()

    @property
    def output_dim(self) -> int:
        """Width of the flattened multi-ACCDOA output, N_cls * N_T * 3."""
        return self.n_classes * self.n_tracks * self.doa_dim

    def encoder_shape(self, frames: Optional[int] = None) -> tuple[int, int]:
        """
        Return (T', F') after the three ConvBlocks.

        Raises
        ------
        ConfigurationError
            If a pooling kernel does not divide the current extent.

        Examples
        --------
        >>> ModelConfig(pooling=PoolingProfile.FRONT).encoder_shape()
        (50, 16)
        """
        t = self.input_frames if frames is None else frames
        f = self.mel_bands
        for i, (pt, pf) in enumerate(self.pooling.conv_kernels()):
            if t % pt:
                raise ConfigurationError(
                    f"ConvBlock {i} time pooling {pt} does not divide the time axis extent {t}."
                )
            if f % pf:
                raise ConfigurationError(
                    f"ConvBlock {i} frequency pooling {pf} does not divide "
                    f"the frequency axis extent {f}."
                )
            t, f = t // pt, f // pf
        return t, f

    def output_frames(self, frames: Optional[int] = None) -> int:
        """Output frames (10 Hz) for an input of ``frames`` feature frames."""
        t, _ = self.encoder_shape(frames)
        return t // self.pooling.head_time_pool()

    def validate(self, frames: Optional[int] = None) -> None:
        """
        Check value ranges and every pooling / ULE divisibility.

        Parameters
        ----------
        frames : int, optional
            Feature frames to validate for; defaults to ``input_frames``.

        Raises
        ------
        ConfigurationError
            On the first violation, naming the offending axis or field.
        """
        for name in (
            "channels",
            "n_cst",
            "heads",
            "n_classes",
            "n_tracks",
            "fc_hidden",
            "input_frames",
            "mel_bands",
            "in_channels",
        ):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} ({getattr(self, name)}) must be positive.")
        if self.doa_dim != 3:
            raise ConfigurationError(f"doa_dim ({self.doa_dim}) must be 3.")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout ({self.dropout}) must be in [0, 1).")
        if len(self.ule_kernels) != self.n_cst:
            raise ConfigurationError(
                f"ule_kernels has {len(self.ule_kernels)} entries but n_cst is {self.n_cst}."
            )

        t, f = self.encoder_shape(frames)
        if AttentionDomain.CHANNEL in self.attention_order:
            for block, (pt, pf) in enumerate(self.ule_kernels):
                if t % pt:
                    raise ConfigurationError(
                        f"ULE kernel {pt}x{pf} of block {block} does not divide "
                        f"the time axis extent {t}."
                    )
                if f % pf:
                    raise ConfigurationError(
                        f"ULE kernel {pt}x{pf} of block {block} does not divide "
                        f"the frequency axis extent {f}."
                    )
        pool = self.pooling.head_time_pool()
        if t % pool:
            raise ConfigurationError(
                f"Head time pooling {pool} does not divide the time axis extent {t}."
            )

    def to_pairs(self) -> list[tuple[str, Any]]:
        pairs: list[tuple[str, Any]] = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "ule_kernels":
                value = format_kernels(value)
            elif f.name == "attention_order":
                value = "".join(d.value for d in value)
            pairs.append((f.name, _plain(value)))
        return pairs


PRESETS: dict[str, tuple[PoolingProfile, int, int]] = {
    "small": (PoolingProfile.FRONT, 2, 64),
    "base": (PoolingProfile.MIDDLE, 2, 64),
    "large": (PoolingProfile.END, 4, 128),
    "huge": (PoolingProfile.END, 6, 128),
}


def preset(name: str, multiscale: bool = False, **overrides: Any) -> ModelConfig:
    """
    Build a ModelConfig from a named size preset.

    Parameters
    ----------
    name : str
        ``small``, ``base``, ``large``, ``huge`` or ``micro`` (C=8, one
        block, End pooling, ULE kernel (5, 4); used for tests and toy runs).
    multiscale : bool, default False
        Use multiscale ULE kernels instead of uniscale ones.
    **overrides : Any
        Field values replacing the preset's.

    Raises
    ------
    ConfigurationError
        For an unknown preset name.

    Examples
    --------
    >>> preset("large").encoder_shape()
    (250, 16)
    """
    key = name.strip().lower()
    if key == "micro":
        values: dict[str, Any] = dict(
            channels=8,
            n_cst=1,
            pooling=PoolingProfile.END,
            ule_kernels=[(5, 4)],
            heads=2,
            fc_hidden=32,
        )
    elif key in PRESETS:
        pooling, n_cst, channels = PRESETS[key]
        values = dict(
            channels=channels,
            n_cst=n_cst,
            pooling=pooling,
            ule_kernels=default_kernels(n_cst, multiscale),
        )
    else:
        raise ConfigurationError(
            f"Unknown preset '{name}'; expected one of {sorted([*PRESETS, 'micro'])}."
        )
    if "n_cst" in overrides and "ule_kernels" not in overrides:
        overrides["ule_kernels"] = default_kernels(int(overrides["n_cst"]), multiscale)
    values.update(overrides)
    return ModelConfig(**values)


@dataclass
class AugmentConfig:
    """
    Batch augmentations; one enabled augmentation is drawn per batch.

    ``max_mask_frames`` is the longest time-mask span in label frames.
    """

    frameshift: bool = True
    time_mask: bool = True
    acs: bool = True
    moderate_mixup: bool = True
    mixup_alpha: float = 0.5
    max_mask_frames: int = 10

    def __post_init__(self):
        if self.mixup_alpha <= 0:
            raise ConfigurationError(f"mixup_alpha ({self.mixup_alpha}) must be positive.")
        if self.max_mask_frames < 1:
            raise ConfigurationError(
                f"max_mask_frames ({self.max_mask_frames}) must be at least 1."
            )

    def to_pairs(self) -> list[tuple[str, Any]]:
        return [(f.name, _plain(getattr(self, f.name))) for f in fields(self)]


@dataclass
class CtaiConfig:
    """
    Clustered-track augmented inference settings.

    Attributes
    ----------
    acs_count : int
        Number R of ACS transforms used (identity first), at most 16.
    ctai_threshold : float
        Rotations whose track-aligned MSE against the original reaches this value
        are discarded.
    kmeans_max_iter : int
        K-means iteration cap.
    kmeans_seed : int
        Seed for choosing the initial centers.
    """

    acs_count: int = 16
    ctai_threshold: float = 1e-3
    kmeans_max_iter: int = 500
    kmeans_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.acs_count <= 16:
            raise ConfigurationError(f"acs_count ({self.acs_count}) must be in [1, 16].")
        if self.ctai_threshold <= 0:
            raise ConfigurationError(f"ctai_threshold ({self.ctai_threshold}) must be positive.")
        if self.kmeans_max_iter < 1:
            raise ConfigurationError(
                f"kmeans_max_iter ({self.kmeans_max_iter}) must be at least 1."
            )

    def to_pairs(self) -> list[tuple[str, Any]]:
        return [(f.name, _plain(getattr(self, f.name))) for f in fields(self)]


@dataclass
class RunConfig:
    """
    Everything a command needs: model, training, augmentation, inference and paths.

    ``lr_peak`` defaults to 1e-3 for models with at most 64 channels and
    1e-4 otherwise. ``max_steps`` caps the optimiser steps of a run.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    ctai_params: CtaiConfig = field(default_factory=CtaiConfig)
    preset: Optional[str] = None
    multiscale: bool = False
    epochs: int = 10
    batch_size: int = 32
    lr_peak: Optional[float] = None
    ramp_fraction: float = 0.1
    hold_fraction: float = 0.4
    max_steps: Optional[int] = None
    seed: int = 0
    loss: LossKind = LossKind.ADPIT
    mask_gradient: MaskGradient = MaskGradient.HARD
    vtm_threshold: float = 0.5
    precision: Precision = Precision.FLOAT32
    seq_len_s: int = 5
    io: bool = False
    io_hop_s: int = 1
    ctai: bool = False
    n_jobs: int = 1
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"

    def __post_init__(self):
        try:
            self.loss = LossKind(self.loss)
            self.mask_gradient = MaskGradient(self.mask_gradient)
            self.precision = Precision(self.precision)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from exc
        self.validate()

    @property
    def learning_rate(self) -> float:
        if self.lr_peak is not None:
            return self.lr_peak
        return 1e-3 if self.model.channels <= 64 else 1e-4

    @property
    def seq_frames(self) -> int:
        """Feature frames of one inference window."""
        return self.seq_len_s * FEATURE_FRAMES_PER_SECOND

    def validate(self) -> None:
        if self.seq_len_s not in SEQUENCE_LENGTHS_S:
            raise ConfigurationError(
                f"seq_len_s ({self.seq_len_s}) must be one of {SEQUENCE_LENGTHS_S}."
            )
        if not 0 < self.io_hop_s <= self.seq_len_s:
            raise ConfigurationError(
                f"io_hop_s ({self.io_hop_s}) must be in (0, seq_len_s={self.seq_len_s}]."
            )
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigurationError(
                f"epochs ({self.epochs}) must be >= 0 and batch_size ({self.batch_size}) > 0."
            )
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigurationError(f"max_steps ({self.max_steps}) must be >= 0.")
        if self.lr_peak is not None and self.lr_peak < 0:
            raise ConfigurationError(f"lr_peak ({self.lr_peak}) must be >= 0.")
        if (
            min(self.ramp_fraction, self.hold_fraction) < 0
            or self.ramp_fraction + self.hold_fraction > 1
        ):
            raise ConfigurationError(
                f"ramp_fraction ({self.ramp_fraction}) and hold_fraction "
                f"({self.hold_fraction}) must be nonnegative and sum to at most 1."
            )
        if not 0 < self.vtm_threshold:
            raise ConfigurationError(f"vtm_threshold ({self.vtm_threshold}) must be positive.")
        if self.n_jobs == 0:
            raise ConfigurationError("n_jobs must be nonzero (use -1 for all cores).")
        self.model.validate(self.seq_frames)

    def to_pairs(self) -> list[tuple[str, Any]]:
        """
        Ordered key/value echo of the configuration.

        Parsing the echo with ``run_config_from_mapping`` reproduces an
        equal configuration.
        """
        pairs: list[tuple[str, Any]] = []
        for f in fields(self):
            if f.name in _NESTED:
                continue
            pairs.append((f.name, _plain(getattr(self, f.name))))
        pairs += self.model.to_pairs()
        pairs += self.augment.to_pairs()
        pairs += self.ctai_params.to_pairs()
        return pairs

    def fingerprint(self) -> str:
        return calculate_object_hash(self.to_pairs())


_NESTED = {"model", "augment", "ctai_params"}
_OPTIONAL_TYPES: dict[str, type] = {"lr_peak": float, "max_steps": int, "preset": str}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if value is None:
        return "none"
    return value


def _parse_bool(value: Any, key: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ConfigurationError(f"Value '{value}' for '{key}' is not a boolean.")


def _coerce(key: str, value: Any, template: Any) -> Any:
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if template is None or key in _OPTIONAL_TYPES:
            if text.lower() in ("", "none", "null"):
                return None
            return _OPTIONAL_TYPES.get(key, str)(text)
        if isinstance(template, bool):
            return _parse_bool(text, key)
        if isinstance(template, Enum):
            return type(template)(text.lower())
        if isinstance(template, int):
            return int(text)
        if isinstance(template, float):
            if not is_float_string(text):
                raise ConfigurationError(f"'{key}' expects a number; got '{value}'.")
            return float(text)
    except ConfigurationError:
        raise
    except ValueError as exc:
        raise ConfigurationError(f"Invalid value '{value}' for '{key}': {exc}") from exc
    return text


def _templates(cls: type) -> dict[str, Any]:
    templates = {}
    for f in fields(cls):
        if f.default is not MISSING:
            templates[f.name] = f.default
        elif f.default_factory is not MISSING:
            templates[f.name] = f.default_factory()
    return templates


def _builder(cls: type) -> Callable[..., Any]:
    templates = _templates(cls)

    def build(**values: Any) -> Any:
        typed = {k: _coerce(k, v, templates.get(k)) for k, v in values.items()}
        try:
            return cls(**typed)
        except TypeError as exc:
            raise ConfigurationError(f"Invalid {cls.__name__} values: {exc}") from exc

    return build


def _build_model(
    preset_name: Optional[str] = None, multiscale: bool = False, **values: Any
) -> ModelConfig:
    templates = _templates(ModelConfig)
    typed = {k: _coerce(k, v, templates[k]) for k, v in values.items()}
    if preset_name is not None:
        return preset(preset_name, multiscale=multiscale, **typed)
    if "ule_kernels" not in typed:
        typed["ule_kernels"] = default_kernels(int(typed.get("n_cst", 2)), multiscale)
    return ModelConfig(**typed)


def run_config_from_mapping(values: Mapping[str, Any]) -> RunConfig:
    """
    Build a RunConfig from a flat key/value mapping.

    Keys are normalised to snake_case first. ``preset``/``multiscale``
    choose the base model; every other key is routed to the dataclass that
    declares it.

    Raises
    ------
    ConfigurationError
        For unknown keys (all listed), unparsable values or any validation
        failure.

    Examples
    --------
    >>> cfg = run_config_from_mapping({"preset": "large", "lr-peak": "1e-4"})
    >>> cfg.model.channels, cfg.learning_rate
    (128, 0.0001)
    """
    try:
        raw = snake_case_keys(dict(values))
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc

    preset_name = _coerce("preset", raw.pop("preset", None), None)
    multiscale = _parse_bool(raw.pop("multiscale", False), "multiscale")

    model, rest = safe_call(
        _build_model,
        raw,
        valid_params=accepted_keywords(ModelConfig),
        preset_name=preset_name,
        multiscale=multiscale,
    )
    augment, rest = safe_call(
        _builder(AugmentConfig), rest, valid_params=accepted_keywords(AugmentConfig)
    )
    ctai_params, rest = safe_call(
        _builder(CtaiConfig), rest, valid_params=accepted_keywords(CtaiConfig)
    )
    run, unknown = safe_call(
        _builder(RunConfig),
        rest,
        valid_params=accepted_keywords(RunConfig) - _NESTED - {"preset", "multiscale"},
        model=model,
        augment=augment,
        ctai_params=ctai_params,
        preset=preset_name,
        multiscale=multiscale,
    )
    if unknown:
        raise ConfigurationError(f"Unknown configuration keys: {sorted(unknown)}.")
    logger.debug("Resolved configuration %s", run.fingerprint())
    return run


def read_config_file(path: PathLike) -> dict[str, str]:
    """
    Read a flat ``key = value`` configuration file.

    Blank lines and ``#`` comments are ignored.

    Raises
    ------
    ConfigurationError
        For malformed lines or repeated keys.
    """
    path_obj = resolve_path(path)
    if not path_obj.exists():
        raise ConfigurationError(f"Configuration file not found: {path_obj}")
    values: dict[str, str] = {}
    for number, line in enumerate(path_obj.read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigurationError(f"{path_obj}:{number}: expected 'key = value', got {line!r}.")
        key, value = (part.strip() for part in text.split("=", 1))
        if key in values:
            raise ConfigurationError(f"{path_obj}:{number}: key '{key}' repeated.")
        values[key] = value
    return values


def write_config_file(config: RunConfig, path: PathLike) -> None:
    path_obj = resolve_path(path)
    path_obj.write_text(format_key_value_lines(config.to_pairs()) + "\n")


def load_run_config(
    path: Optional[PathLike] = None, overrides: Optional[Mapping[str, Any]] = None
) -> RunConfig:
    """
    Load a RunConfig from an optional file plus command-line overrides.

    Overrides win over file values; ``None`` overrides are ignored.
    """
    values: dict[str, Any] = {}
    if path is not None:
        try:
            values.update(snake_case_keys(read_config_file(path)))
        except ValueError as exc:
            raise ConfigurationError(f"{path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is not None:
            values[to_snake_case(str(key))] = value
    return run_config_from_mapping(values)
