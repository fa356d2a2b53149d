"""
Synthetic FoA scene generator.

Each event is a mono source (tone, noise burst or chirp) encoded into
first-order Ambisonics with SN3D gains in ACN channel order (W, Y, Z, X)::

    W = s,  Y = s sin(az) cos(el),  Z = s sin(el),  X = s cos(az) cos(el)

Sources are stationary or move along a linear azimuth ramp. Independent
white noise is added to every channel. Labels are written at 100 ms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy.signal import chirp

from cst_seld.config import LABEL_FRAMES_PER_SECOND
from cst_seld.enums import SignalKind
from cst_seld.errors import DataError, LabelError
from cst_seld.features import SAMPLE_RATE, MultichannelAudio
from cst_seld.hashing import PathLike, resolve_path
from cst_seld.objective import LABEL_COLUMNS, write_label_csv

logger = logging.getLogger(__name__)

LABEL_HOP_S = 1.0 / LABEL_FRAMES_PER_SECOND
DEFAULT_NOISE_RMS = 0.01
DEFAULT_SNR_DB = 20.0
# class never emitted by random scenes with the default four classes
DISTRACTOR_CLASS = 3
SCENE_COLUMNS = [
    "class_index",
    "onset_s",
    "offset_s",
    "azimuth_deg",
    "elevation_deg",
    "azimuth_end_deg",
    "signal",
    "snr_db",
]


def signal_for_class(class_index: int) -> SignalKind:
    """Default source signal of a class (cycles tone, noise, chirp)."""
    return list(SignalKind)[class_index % 3]


@dataclass(frozen=True)
class SceneEvent:
    """
    One source in a synthetic scene.

    Attributes
    ----------
    class_index : int
        Sound class.
    onset_s, offset_s : float
        Activity interval; a label frame ``f`` is active when
        ``onset_s <= f * 0.1 < offset_s``.
    azimuth_deg, elevation_deg : float
        Direction at the onset.
    azimuth_end_deg : float, optional
        Azimuth at the offset for a linear ramp; stationary when None.
    signal : SignalKind, optional
        Source signal; defaults to the class's signal.
    snr_db : float
        Level relative to the background noise.
    """

    class_index: int
    onset_s: float
    offset_s: float
    azimuth_deg: float = 0.0
    elevation_deg: float = 0.0
    azimuth_end_deg: Optional[float] = None
    signal: Optional[SignalKind] = None
    snr_db: float = DEFAULT_SNR_DB

    def __post_init__(self):
        if self.class_index < 0:
            raise DataError(f"Class index ({self.class_index}) must be nonnegative.")
        if not 0 <= self.onset_s < self.offset_s:
            raise DataError(
                f"Invalid trajectory: onset ({self.onset_s}) must precede offset "
                f"({self.offset_s}) and be nonnegative."
            )
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise DataError(f"Invalid trajectory: elevation ({self.elevation_deg}) out of range.")
        for name in ("azimuth_deg", "elevation_deg", "azimuth_end_deg", "snr_db"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise DataError(f"Invalid trajectory: {name} ({value}) is not finite.")
        if self.signal is not None:
            object.__setattr__(self, "signal", SignalKind(self.signal))

    @property
    def signal_kind(self) -> SignalKind:
        return self.signal or signal_for_class(self.class_index)

    def azimuth_at(self, t: np.ndarray) -> np.ndarray:
        """Azimuth (degrees) at times ``t`` within the event."""
        t = np.asarray(t, dtype=np.float64)
        if self.azimuth_end_deg is None:
            return np.full_like(t, self.azimuth_deg)
        frac = np.clip((t - self.onset_s) / (self.offset_s - self.onset_s), 0.0, 1.0)
        return self.azimuth_deg + frac * (self.azimuth_end_deg - self.azimuth_deg)

    def active_frames(self, n_frames: int) -> np.ndarray:
        times = np.arange(n_frames) * LABEL_HOP_S
        return np.flatnonzero((self.onset_s <= times) & (times < self.offset_s))


@dataclass
class SyntheticScene:
    """
    A scene: duration, events and background noise level.

    Raises
    ------
    LabelError
        If more than ``n_tracks`` same-class events overlap in a label frame.
    """

    duration_s: float
    events: list[SceneEvent] = field(default_factory=list)
    noise_rms: float = DEFAULT_NOISE_RMS
    n_tracks: int = 3

    def __post_init__(self):
        if self.duration_s <= 0:
            raise DataError(f"Scene duration ({self.duration_s}) must be positive.")
        if self.noise_rms < 0:
            raise DataError(f"Noise level ({self.noise_rms}) must be nonnegative.")
        for ev in self.events:
            if ev.offset_s > self.duration_s + 1e-9:
                raise DataError(
                    f"Event offset ({ev.offset_s}) exceeds scene duration ({self.duration_s})."
                )
        self.check_polyphony()

    @property
    def n_label_frames(self) -> int:
        return int(round(self.duration_s * LABEL_FRAMES_PER_SECOND))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * SAMPLE_RATE))

    def check_polyphony(self) -> None:
        counts: dict[tuple[int, int], int] = {}
        for ev in self.events:
            for f in ev.active_frames(self.n_label_frames):
                key = (int(f), ev.class_index)
                counts[key] = counts.get(key, 0) + 1
                if counts[key] > self.n_tracks:
                    raise LabelError(
                        f"Frame {f}: more than {self.n_tracks} overlapping events "
                        f"of class {ev.class_index}."
                    )


def foa_gains(azimuth_deg, elevation_deg) -> np.ndarray:
    """SN3D gains ``(4, ...)`` in (W, Y, Z, X) order."""
    az = np.deg2rad(np.asarray(azimuth_deg, dtype=np.float64))
    el = np.deg2rad(np.asarray(elevation_deg, dtype=np.float64))
    return np.stack(
        [np.ones_like(az), np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)]
    )


def encode_foa(mono: np.ndarray, azimuth_deg, elevation_deg) -> np.ndarray:
    """
    Encode a mono signal; directions may be scalars or per-sample arrays.

    Examples
    --------
    >>> encode_foa(np.ones(2), 0.0, 0.0).round(12)
    array([[1., 1.],
           [0., 0.],
           [0., 0.],
           [1., 1.]])
    """
    return foa_gains(azimuth_deg, elevation_deg) * np.asarray(mono, dtype=np.float64)


def source_signal(
    kind: SignalKind,
    n_samples: int,
    rng: np.random.Generator,
    class_index: int = 0,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """Unit-RMS mono source of ``n_samples`` with short fades."""
    t = np.arange(n_samples) / sample_rate
    match SignalKind(kind):
        case SignalKind.TONE:
            s = np.sin(2 * np.pi * 440.0 * (1 + class_index % 4) * t)
        case SignalKind.NOISE:
            s = rng.standard_normal(n_samples)
        case SignalKind.CHIRP:
            duration = max(t[-1], 1.0 / sample_rate) if n_samples else 1.0
            s = chirp(t, f0=300.0, t1=duration, f1=6000.0, method="logarithmic")
    fade = min(n_samples // 2, int(0.01 * sample_rate))
    if fade:
        ramp = np.linspace(0.0, 1.0, fade)
        s[:fade] *= ramp
        s[-fade:] *= ramp[::-1]
    rms = np.sqrt(np.mean(s * s)) if n_samples else 0.0
    return s / rms if rms > 0 else s


def render_scene(scene: SyntheticScene, seed: int = 0) -> tuple[MultichannelAudio, pd.DataFrame]:
    """
    Render FoA audio and the 100 ms label table of a scene.

    Returns
    -------
    audio : MultichannelAudio
        24 kHz four-channel clip.
    labels : pandas.DataFrame
        Label rows; the source index is the event's position in the scene.
    """
    rng = np.random.default_rng(seed)
    n = scene.n_samples
    samples = scene.noise_rms * rng.standard_normal((4, n))
    rows = []
    for source, ev in enumerate(scene.events):
        start = int(round(ev.onset_s * SAMPLE_RATE))
        stop = min(int(round(ev.offset_s * SAMPLE_RATE)), n)
        if stop <= start:
            continue
        gain = max(scene.noise_rms, 1e-4) * 10 ** (ev.snr_db / 20.0)
        mono = gain * source_signal(ev.signal_kind, stop - start, rng, ev.class_index)
        times = np.arange(start, stop) / SAMPLE_RATE
        samples[:, start:stop] += encode_foa(mono, ev.azimuth_at(times), ev.elevation_deg)

        frames = ev.active_frames(scene.n_label_frames)
        azimuths = ev.azimuth_at(frames * LABEL_HOP_S)
        azimuths = (azimuths + 180.0) % 360.0 - 180.0
        azimuths = np.where(azimuths == -180.0, 180.0, azimuths)
        for f, az in zip(frames, azimuths):
            rows.append((int(f), ev.class_index, source, float(az), float(ev.elevation_deg)))

    labels = pd.DataFrame(rows, columns=LABEL_COLUMNS)
    labels = labels.sort_values(["frame_index", "class_index", "source_index"])
    return MultichannelAudio(samples), labels.reset_index(drop=True)


def random_scene(
    rng: np.random.Generator,
    duration_s: float = 5.0,
    n_classes: int = 4,
    n_events: int = 3,
    n_tracks: int = 3,
    moving_fraction: float = 0.5,
    noise_rms: float = DEFAULT_NOISE_RMS,
    max_attempts: int = 100,
) -> SyntheticScene:
    """
    Draw a random toy scene.

    Events last 1 to 3 s (clipped to the scene), elevations lie in
    [-45, 45] degrees and a ``moving_fraction`` of events ramp their
    azimuth by 30 to 90 degrees. With four classes the distractor class is
    never emitted.
    """
    classes = [c for c in range(n_classes) if not (n_classes == 4 and c == DISTRACTOR_CLASS)]
    events: list[SceneEvent] = []
    for _ in range(max_attempts):
        if len(events) == n_events:
            break
        onset = float(rng.uniform(0.0, max(duration_s - 1.0, 0.0)))
        onset = round(onset, 1)
        length = float(rng.uniform(1.0, 3.0))
        offset = round(min(onset + length, duration_s), 1)
        if offset <= onset:
            continue
        az = float(rng.uniform(-180.0, 180.0))
        end = az + float(rng.choice([-1, 1]) * rng.uniform(30.0, 90.0))
        candidate = SceneEvent(
            class_index=int(rng.choice(classes)),
            onset_s=onset,
            offset_s=offset,
            azimuth_deg=az,
            elevation_deg=float(rng.uniform(-45.0, 45.0)),
            azimuth_end_deg=end if rng.random() < moving_fraction else None,
        )
        try:
            SyntheticScene(duration_s, events + [candidate], noise_rms, n_tracks)
        except LabelError:
            continue
        events.append(candidate)
    return SyntheticScene(duration_s, events, noise_rms, n_tracks)


def read_scene_csv(
    path: PathLike, duration_s: float, noise_rms: float = DEFAULT_NOISE_RMS, n_tracks: int = 3
) -> SyntheticScene:
    """
    Read a scene description with the ``SCENE_COLUMNS`` schema.

    ``azimuth_end_deg`` and ``signal`` may be empty; ``snr_db`` may be
    omitted.
    """
    path_obj = resolve_path(path)
    if not path_obj.exists():
        raise DataError(f"Scene file not found: {path_obj}")
    with path_obj.open("r") as f:
        table = pd.read_csv(f)
    required = SCENE_COLUMNS[:5]
    missing = [c for c in required if c not in table.columns]
    unknown = [c for c in table.columns if c not in SCENE_COLUMNS]
    if missing or unknown:
        raise DataError(f"{path_obj}: missing columns {missing}, unknown columns {unknown}.")

    def optional(row, name):
        value = getattr(row, name, None)
        return None if value is None or pd.isna(value) else value

    events = []
    for row in table.itertuples(index=False):
        snr = optional(row, "snr_db")
        end = optional(row, "azimuth_end_deg")
        events.append(
            SceneEvent(
                class_index=int(row.class_index),
                onset_s=float(row.onset_s),
                offset_s=float(row.offset_s),
                azimuth_deg=float(row.azimuth_deg),
                elevation_deg=float(row.elevation_deg),
                azimuth_end_deg=None if end is None else float(end),
                signal=optional(row, "signal"),
                snr_db=DEFAULT_SNR_DB if snr is None else float(snr),
            )
        )
    return SyntheticScene(duration_s, events, noise_rms, n_tracks)


def scene_table(scene: SyntheticScene) -> pd.DataFrame:
    rows = [
        (
            ev.class_index,
            ev.onset_s,
            ev.offset_s,
            ev.azimuth_deg,
            ev.elevation_deg,
            ev.azimuth_end_deg,
            None if ev.signal is None else ev.signal.value,
            ev.snr_db,
        )
        for ev in scene.events
    ]
    return pd.DataFrame(rows, columns=SCENE_COLUMNS)


def write_scene_csv(scene: SyntheticScene, path: PathLike) -> None:
    resolve_path(path).write_text(scene_table(scene).to_csv(index=False, lineterminator="\n"))


def synthesize(
    scene: SyntheticScene, out_dir: PathLike, name: str, seed: int = 0
) -> tuple[MultichannelAudio, pd.DataFrame]:
    """Render a scene and write ``<name>.wav`` and ``<name>.csv`` into ``out_dir``."""
    root = resolve_path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    audio, labels = render_scene(scene, seed)
    audio.write(root / f"{name}.wav")
    write_label_csv(labels, root / f"{name}.csv")
    logger.info("Wrote %s (%d events, %d label rows)", name, len(scene.events), len(labels))
    return audio, labels


def synthesize_dataset(
    out_dir: PathLike,
    n_clips: int,
    seed: int = 0,
    duration_s: float = 5.0,
    n_classes: int = 4,
    n_events: int = 3,
    n_tracks: int = 3,
) -> list[str]:
    """Random scenes ``clip_000 ...``; returns the clip names."""
    rng = np.random.default_rng(seed)
    names = []
    for i in range(n_clips):
        scene = random_scene(rng, duration_s, n_classes, n_events, n_tracks)
        name = f"clip_{i:03d}"
        synthesize(scene, out_dir, name, seed=seed + i)
        names.append(name)
    return names


def list_clips(directory: PathLike) -> list[str]:
    """Names of clips that have both a WAV and a label CSV."""
    root = resolve_path(directory)
    return sorted(
        p.name[: -len(".wav")]
        for p in root.iterdir()
        if p.name.endswith(".wav") and (root / (p.name[: -len(".wav")] + ".csv")).exists()
    )


def clip_paths(directory: PathLike, names: Sequence[str]) -> list[tuple[PathLike, PathLike]]:
    root = resolve_path(directory)
    return [(root / f"{n}.wav", root / f"{n}.csv") for n in names]
