"""
Audio channel swapping (ACS) on FoA audio, features and DoA vectors.

The 16 transforms are the signed permutations that swap or keep the x/y
axes, negate any of x, y, z, and leave W untouched. Each one is an exact
rotation or reflection of the sound field, so applying it to the audio is
the same as moving every source by the 3x3 matrix ``M``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from cst_seld.errors import UsageError
from cst_seld.features import MultichannelAudio

_SWAP_XY = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]])

# axis (x, y, z) -> channel of the 7-channel feature block
_LOGMEL_CHANNEL = (3, 1, 2)
_IV_CHANNEL = (6, 4, 5)
# axis (x, y, z) -> row of the (W, Y, Z, X) audio block
_AUDIO_CHANNEL = (3, 1, 2)


@dataclass(frozen=True)
class AcsTransform:
    """
    One ACS transform.

    Attributes
    ----------
    id : int
        0..15; bit 3 swaps x and y, bits 2/1/0 negate x/y/z (after the swap).
        ``id == 0`` is the identity.
    """

    id: int

    def __post_init__(self):
        if not 0 <= self.id < 16:
            raise UsageError(f"Unknown ACS transform id {self.id}; expected 0..15.")

    @property
    def swap_xy(self) -> bool:
        return bool(self.id & 8)

    @property
    def signs(self) -> tuple[int, int, int]:
        return (
            -1 if self.id & 4 else 1,
            -1 if self.id & 2 else 1,
            -1 if self.id & 1 else 1,
        )

    @cached_property
    def matrix(self) -> np.ndarray:
        """Direction map ``d -> M @ d`` in (x, y, z) coordinates."""
        base = _SWAP_XY if self.swap_xy else np.eye(3, dtype=int)
        m = np.diag(self.signs) @ base
        m.setflags(write=False)
        return m

    @cached_property
    def axis_map(self) -> tuple[tuple[int, int], ...]:
        """For each output axis, the (source axis, sign) it is taken from."""
        out = []
        for i in range(3):
            j = int(np.flatnonzero(self.matrix[i])[0])
            out.append((j, int(self.matrix[i, j])))
        return tuple(out)

    def inverse(self) -> AcsTransform:
        return from_matrix(self.matrix.T)

    def compose(self, other: AcsTransform) -> AcsTransform:
        """Transform equal to applying ``other`` first, then ``self``."""
        return from_matrix(self.matrix @ other.matrix)


def from_matrix(matrix: np.ndarray) -> AcsTransform:
    """
    Look up the transform with a given direction matrix.

    Raises
    ------
    UsageError
        If the matrix is not one of the 16 group members.
    """
    for t in ACS_TRANSFORMS:
        if np.array_equal(t.matrix, matrix):
            return t
    raise UsageError(f"Matrix {matrix.tolist()} is not an ACS transform.")


ACS_TRANSFORMS: tuple[AcsTransform, ...] = tuple(AcsTransform(i) for i in range(16))

# azimuth decreased by 90 degrees and elevation reversed
PERTURBATION = AcsTransform(8 | 2 | 1)


def get_transform(transform_id: int) -> AcsTransform:
    """Return the transform with ``transform_id``; UsageError if unknown."""
    if not isinstance(transform_id, (int, np.integer)) or not 0 <= transform_id < 16:
        raise UsageError(f"Unknown ACS transform id {transform_id!r}; expected 0..15.")
    return ACS_TRANSFORMS[int(transform_id)]


def transforms(count: int = 16) -> list[AcsTransform]:
    """The first ``count`` transforms, identity first."""
    if not 1 <= count <= 16:
        raise UsageError(f"ACS transform count {count} must be in [1, 16].")
    return list(ACS_TRANSFORMS[:count])


def apply_direction(vectors: np.ndarray, t: AcsTransform) -> np.ndarray:
    """Map DoA (or multi-ACCDOA) vectors along the last axis: ``d -> M d``."""
    return np.asarray(vectors) @ t.matrix.T


def unrotate(vectors: np.ndarray, t: AcsTransform) -> np.ndarray:
    """Map vectors estimated on transformed input back: ``d -> M^T d``."""
    return np.asarray(vectors) @ t.matrix


def apply_audio(audio: MultichannelAudio, t: AcsTransform) -> MultichannelAudio:
    """Swap and negate the dipole channels of FoA audio; W is unchanged."""
    samples = audio.samples
    out = samples.copy()
    for axis, (source, sign) in enumerate(t.axis_map):
        out[_AUDIO_CHANNEL[axis]] = sign * samples[_AUDIO_CHANNEL[source]]
    return MultichannelAudio(out, audio.sample_rate, audio.allow_any_rate)


def apply_features(features: np.ndarray, t: AcsTransform) -> np.ndarray:
    """
    Apply a transform to a feature block ``(..., 7, T, F)``.

    Log-mel channels of the dipoles are permuted (magnitudes do not see
    signs); intensity channels are permuted and sign-flipped.
    """
    if features.shape[-3] != 7:
        raise UsageError(f"Expected 7 feature channels; got shape {features.shape}.")
    out = features.copy()
    for axis, (source, sign) in enumerate(t.axis_map):
        out[..., _LOGMEL_CHANNEL[axis], :, :] = features[..., _LOGMEL_CHANNEL[source], :, :]
        out[..., _IV_CHANNEL[axis], :, :] = sign * features[..., _IV_CHANNEL[source], :, :]
    return out
