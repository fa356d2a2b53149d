"""Enumerations for cst_seld."""

from enum import Enum

import numpy as np


class Precision(str, Enum):
    """
    Floating-point precision for tensors.

    FLOAT64 is used by tests and gradient oracles, FLOAT32 for training.
    """

    FLOAT32 = "float32"
    FLOAT64 = "float64"

    @property
    def dtype(self) -> np.dtype:
        """The numpy dtype matching this precision."""
        return np.dtype(self.value)

    @property
    def softmax_tolerance(self) -> float:
        """Row-sum tolerance for normalised outputs at this precision."""
        return 1e-12 if self is Precision.FLOAT64 else 1e-6


class PoolingProfile(str, Enum):
    """
    Placement of time pooling in the encoder.

    Each profile lists the max-pooling kernel of the three ConvBlocks and the
    optional time pooling applied in the output head.
    """

    FRONT = "front"
    MIDDLE = "middle"
    END = "end"

    def conv_kernels(self) -> list[tuple[int, int]]:
        """
        Return the (time, frequency) pooling kernel of each ConvBlock.

        Returns
        -------
        list of tuple of int
            Three kernels, in encoder order.

        Examples
        --------
        >>> PoolingProfile.FRONT.conv_kernels()
        [(5, 2), (1, 2), (1, 1)]
        """
        match self:
            case PoolingProfile.FRONT:
                return [(5, 2), (1, 2), (1, 1)]
            case PoolingProfile.MIDDLE:
                return [(1, 1), (1, 2), (5, 2)]
            case PoolingProfile.END:
                return [(1, 1), (1, 2), (1, 2)]

    def head_time_pool(self) -> int:
        """Time pooling factor of the output head (1 when absent)."""
        return 5 if self is PoolingProfile.END else 1


class AttentionDomain(str, Enum):
    """Axis over which a CST attention sublayer forms its sequence."""

    CHANNEL = "C"
    SPECTRAL = "S"
    TEMPORAL = "T"

    @classmethod
    def parse_order(cls, order: str | list["AttentionDomain"]) -> list["AttentionDomain"]:
        """
        Parse an attention order such as ``"CST"`` or ``"TC"``.

        Parameters
        ----------
        order : str or list of AttentionDomain
            Domain letters in application order.

        Returns
        -------
        list of AttentionDomain
            The parsed domains.

        Raises
        ------
        ValueError
            If the order is empty, repeats a domain, or has unknown letters.
        """
        if isinstance(order, str):
            letters = [ch for ch in order.upper() if not ch.isspace() and ch != ","]
            domains = [cls(ch) for ch in letters]
        else:
            domains = [cls(d) for d in order]

        if not domains:
            raise ValueError("Attention order must name at least one domain.")
        if len(set(domains)) != len(domains):
            raise ValueError(f"Attention order repeats a domain: {order!r}.")
        return domains


class LossKind(str, Enum):
    """Training objective."""

    ADPIT = "adpit"
    VTM = "vtm"


class MaskGradient(str, Enum):
    """
    Gradient semantics of the vector threshold mask.

    HARD gives masked entries zero gradient; STRAIGHT_THROUGH passes the
    gradient of the unmasked error.
    """

    HARD = "hard"
    STRAIGHT_THROUGH = "straight_through"


class SignalKind(str, Enum):
    """Source signal used by the synthetic scene generator."""

    TONE = "tone"
    NOISE = "noise"
    CHIRP = "chirp"


class Augmentation(str, Enum):
    """Batch-level training augmentations."""

    FRAMESHIFT = "frameshift"
    TIME_MASK = "time_mask"
    ACS = "acs"
    MIXUP = "moderate_mixup"
