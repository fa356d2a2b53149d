"""
First-order Ambisonics feature extraction.

Audio is 4-channel FoA in ACN order (W, Y, Z, X) with SN3D normalisation at
24 kHz. Features are 4 log-mel channels followed by 3 intensity-vector
channels (Y, Z, X order), 64 mel bands, 20 ms hop.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import joblib
import librosa
import numpy as np
import pandas as pd
import soundfile as sf
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

from cst_seld.errors import DataError, EmptyInputError
from cst_seld.hashing import PathLike, resolve_path

logger = logging.getLogger(__name__)

SAMPLE_RATE = 24000
WINDOW_SAMPLES = 960
HOP_SAMPLES = 480
N_BINS = WINDOW_SAMPLES // 2 + 1
MEL_BANDS = 64
FRAME_HOP_S = HOP_SAMPLES / SAMPLE_RATE
LOG_EPS = 1e-10
IV_EPS = 1e-10
FOA_CHANNELS = 4
FEATURE_CHANNELS = 7
CACHE_FORMAT_VERSION = 1


@dataclass
class MultichannelAudio:
    """
    Four-channel FoA audio.

    Attributes
    ----------
    samples : np.ndarray
        Shape ``(4, N)``, channels W, Y, Z, X.
    sample_rate : int
        Must be 24000 unless ``allow_any_rate`` is set.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    allow_any_rate: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] != FOA_CHANNELS:
            raise DataError(f"FoA audio needs shape (4, N); got {self.samples.shape}.")
        if self.sample_rate != SAMPLE_RATE and not self.allow_any_rate:
            raise DataError(
                f"Sample rate {self.sample_rate} Hz is not supported; "
                f"expected {SAMPLE_RATE} Hz (no resampling)."
            )

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate

    @classmethod
    def read(cls, path: PathLike) -> MultichannelAudio:
        """
        Read a 4-channel PCM or float WAV file.

        Raises
        ------
        DataError
            If the file is missing, has the wrong channel count or rate.
        """
        path_obj = resolve_path(path)
        if not path_obj.exists():
            raise DataError(f"Audio file not found: {path_obj}")
        with path_obj.open("rb") as f:
            data, rate = sf.read(f, dtype="float64", always_2d=True)
        if data.shape[1] != FOA_CHANNELS:
            raise DataError(f"{path_obj}: expected 4 channels, found {data.shape[1]}.")
        return cls(data.T, int(rate))

    def write(self, path: PathLike, subtype: str = "FLOAT") -> None:
        path_obj = resolve_path(path)
        with path_obj.open("wb") as f:
            sf.write(f, self.samples.T, self.sample_rate, subtype=subtype, format="WAV")


@dataclass
class FeatureTensor:
    """
    Seven-channel input block.

    Attributes
    ----------
    data : np.ndarray
        Shape ``(7, T, 64)``: log-mel W, Y, Z, X then intensity Y, Z, X. Stored as
        float32, the precision of the feature cache.
    frame_hop_s : float
        Frame hop in seconds (0.02).
    mel_bands : int
        Mel bands (64).
    """

    data: np.ndarray
    frame_hop_s: float = FRAME_HOP_S
    mel_bands: int = MEL_BANDS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != FEATURE_CHANNELS:
            raise DataError(f"Features need shape (7, T, F); got {self.data.shape}.")
        if self.data.shape[2] != self.mel_bands:
            raise DataError(
                f"Feature frequency extent {self.data.shape[2]} does not match "
                f"mel_bands ({self.mel_bands})."
            )

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    def fit_frames(self, frames: int) -> FeatureTensor:
        """Truncate or zero-pad along time to exactly ``frames`` frames."""
        data = self.data[:, :frames]
        if data.shape[1] < frames:
            data = np.pad(data, ((0, 0), (0, frames - data.shape[1]), (0, 0)))
        return FeatureTensor(data, self.frame_hop_s, self.mel_bands)

    def save(self, path: PathLike) -> None:
        save_feature_cache(self, path)

    @classmethod
    def load(cls, path: PathLike) -> FeatureTensor:
        return load_feature_cache(path)


@lru_cache(maxsize=4)
def mel_filterbank(
    sample_rate: int = SAMPLE_RATE, n_fft: int = WINDOW_SAMPLES, n_mels: int = MEL_BANDS
) -> np.ndarray:
    """
    HTK-scale triangular mel filterbank from 0 Hz to Nyquist.

    Returns
    -------
    np.ndarray
        Shape ``(n_mels, n_fft // 2 + 1)``, unnormalised triangles.
    """
    bank = librosa.filters.mel(
        sr=sample_rate,
        n_fft=n_fft,
        n_mels=n_mels,
        fmin=0.0,
        fmax=sample_rate / 2,
        htk=True,
        norm=None,
    )
    bank.setflags(write=False)
    return bank


def stft(audio: MultichannelAudio) -> np.ndarray:
    """
    Hann-windowed STFT, 960-sample window, 480-sample hop, no centering.

    Frame t covers samples ``[480 t, 480 t + 960)``, so a clip of N samples
    yields ``floor((N - 960) / 480) + 1`` frames (249 for 5 s).

    Returns
    -------
    np.ndarray
        Complex array of shape ``(4, T, 481)``.

    Raises
    ------
    EmptyInputError
        If the clip is shorter than one window.
    """
    n = audio.num_samples
    if n < WINDOW_SAMPLES:
        raise EmptyInputError(
            f"Audio has {n} samples; at least {WINDOW_SAMPLES} are needed for one frame."
        )
    frames = sliding_window_view(audio.samples, WINDOW_SAMPLES, axis=-1)[:, ::HOP_SAMPLES]
    window = get_window("hann", WINDOW_SAMPLES)
    return np.fft.rfft(frames * window, axis=-1)


def logmel(spectrum: np.ndarray) -> np.ndarray:
    """Log mel energies ``ln(|S|^2 @ mel.T + 1e-10)``, shape ``(4, T, 64)``."""
    power = np.abs(spectrum) ** 2
    return np.log(power @ mel_filterbank().T + LOG_EPS)


def intensity_vectors(spectrum: np.ndarray) -> np.ndarray:
    """
    Mel-projected active intensity, normalised by mel-projected total energy.

    ``IV_d = Re(conj(W) * S_d)`` for d in (Y, Z, X); both the intensity and
    the total energy ``sum_ch |S_ch|^2`` pass through the mel bank before the
    per-bin division. Each per-bin magnitude is at most 0.5.

    Returns
    -------
    np.ndarray
        Shape ``(3, T, 64)`` in channel order Y, Z, X.
    """
    bank = mel_filterbank()
    w = spectrum[0]
    iv = np.real(np.conj(w)[None] * spectrum[1:4])
    power = np.abs(spectrum) ** 2
    # (W + Z) + (Y + X): unchanged bit for bit when the x and y channels swap
    energy = (power[0] + power[2]) + (power[1] + power[3])
    return (iv @ bank.T) / (energy @ bank.T + IV_EPS)[None]


def iv_to_xyz(iv: np.ndarray) -> np.ndarray:
    """Reorder intensity channels (Y, Z, X) along axis 0 into (x, y, z)."""
    return np.stack([iv[2], iv[0], iv[1]])


def build_input(logmel_data: np.ndarray, iv: np.ndarray) -> FeatureTensor:
    """
    Stack log-mel and intensity channels into the 7-channel input.

    Raises
    ------
    DataError
        If the time or frequency extents differ.
    """
    if logmel_data.shape[1:] != iv.shape[1:]:
        raise DataError(
            f"Log-mel extents {logmel_data.shape[1:]} do not match "
            f"intensity extents {iv.shape[1:]}."
        )
    if logmel_data.shape[0] != 4 or iv.shape[0] != 3:
        raise DataError(
            f"Expected 4 log-mel and 3 intensity channels; got "
            f"{logmel_data.shape[0]} and {iv.shape[0]}."
        )
    return FeatureTensor(np.concatenate([logmel_data, iv], axis=0))


def extract_features(audio: MultichannelAudio, frames: Optional[int] = None) -> FeatureTensor:
    """
    Full pipeline: STFT, log-mel, intensity vectors, stacking.

    Parameters
    ----------
    audio : MultichannelAudio
        FoA clip.
    frames : int, optional
        Truncate or zero-pad to this many frames. Defaults to
        ``floor(N / 480)``, which keeps 50 feature frames per label second.
    """
    if frames is None:
        frames = audio.num_samples // HOP_SAMPLES
    spectrum = stft(audio)
    features = build_input(logmel(spectrum), intensity_vectors(spectrum))
    return features.fit_frames(frames)


def extract_features_for_files(
    paths: Sequence[PathLike], frames: Optional[int] = None, n_jobs: int = 1
) -> list[FeatureTensor]:
    """Extract features for several WAV files in parallel (joblib threads)."""
    logger.info("Extracting features for %d clip(s)", len(paths))

    def one(path: PathLike) -> FeatureTensor:
        return extract_features(MultichannelAudio.read(path), frames)

    return joblib.Parallel(n_jobs=n_jobs, prefer="threads")(joblib.delayed(one)(p) for p in paths)


def _cache_paths(path: PathLike):
    base = resolve_path(path)
    stem = base.name
    for suffix in (".manifest.txt", ".f32"):
        if stem.endswith(suffix):
            stem = stem[: -len(suffix)]
    return base.parent / f"{stem}.manifest.txt", base.parent / f"{stem}.f32"


def save_feature_cache(features: FeatureTensor, path: PathLike) -> None:
    """
    Write a feature cache: ``<name>.manifest.txt`` plus ``<name>.f32``.

    The payload is little-endian float32 in C order.
    """
    manifest_path, payload_path = _cache_paths(path)
    data = np.ascontiguousarray(features.data, dtype="<f4")
    manifest = pd.DataFrame(
        {
            "key": ["format_version", "dtype", "shape", "frame_hop_s", "mel_bands"],
            "value": [
                CACHE_FORMAT_VERSION,
                "<f4",
                "x".join(str(n) for n in data.shape),
                repr(features.frame_hop_s),
                features.mel_bands,
            ],
        }
    )
    manifest_path.write_text(manifest.to_csv(index=False, lineterminator="\n"))
    payload_path.write_bytes(data.tobytes())


def load_feature_cache(path: PathLike) -> FeatureTensor:
    """
    Read a feature cache written by ``save_feature_cache``.

    Raises
    ------
    DataError
        If the manifest is malformed or the payload size disagrees with it.
    """
    manifest_path, payload_path = _cache_paths(path)
    if not manifest_path.exists() or not payload_path.exists():
        raise DataError(f"Feature cache not found: {manifest_path}")
    with manifest_path.open("r") as f:
        table = pd.read_csv(f, dtype=str)
    if list(table.columns) != ["key", "value"]:
        raise DataError(f"{manifest_path}: malformed feature-cache manifest.")
    header = dict(zip(table["key"], table["value"]))
    if int(header.get("format_version", -1)) != CACHE_FORMAT_VERSION:
        raise DataError(f"{manifest_path}: unsupported format version.")
    shape = tuple(int(n) for n in header["shape"].split("x"))
    payload = payload_path.read_bytes()
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise DataError(
            f"{payload_path}: payload holds {data.size} values, manifest expects {shape}."
        )
    return FeatureTensor(
        data.reshape(shape).copy(),
        frame_hop_s=float(header["frame_hop_s"]),
        mel_bands=int(header["mel_bands"]),
    )
