"""Direction-of-arrival conversions (x front, y left, z up)."""

import numpy as np


def azel_to_unit(azimuth_deg, elevation_deg) -> np.ndarray:
    """
    Unit vectors from azimuth/elevation in degrees.

    Examples
    --------
    >>> azel_to_unit(90.0, 0.0).round(12)
    array([0., 1., 0.])
    """
    az = np.deg2rad(np.asarray(azimuth_deg, dtype=np.float64))
    el = np.deg2rad(np.asarray(elevation_deg, dtype=np.float64))
    return np.stack([np.cos(az) * np.cos(el), np.sin(az) * np.cos(el), np.sin(el)], axis=-1)


def unit_to_azel(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Azimuth in (-180, 180] and elevation in [-90, 90] degrees.

    Vectors need not be normalised; zero vectors map to (0, 0).
    """
    v = np.asarray(vectors, dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    norm = np.sqrt(x * x + y * y + z * z)
    safe = np.where(norm > 0, norm, 1.0)
    azimuth = np.rad2deg(np.arctan2(y, x))
    azimuth = np.where(azimuth <= -180.0, azimuth + 360.0, azimuth)
    elevation = np.rad2deg(np.arcsin(np.clip(z / safe, -1.0, 1.0)))
    return azimuth, elevation


def normalize(vectors: np.ndarray) -> np.ndarray:
    v = np.asarray(vectors, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(norm > 0, norm, 1.0)


def angular_distance_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between direction vectors (broadcasting), in degrees."""
    cos = np.sum(normalize(a) * normalize(b), axis=-1)
    return np.rad2deg(np.arccos(np.clip(cos, -1.0, 1.0)))


def pairwise_angles_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of angles between rows of ``a`` (P, 3) and rows of ``b`` (R, 3)."""
    cos = normalize(a) @ normalize(b).T
    return np.rad2deg(np.arccos(np.clip(cos, -1.0, 1.0)))
