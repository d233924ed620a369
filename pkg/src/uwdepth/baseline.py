"""Classical dark-channel-prior depth baseline.

Transmission is estimated as 1 - omega * dark_channel(I / A) and converted to
relative depth with a negative log; the result is meaningful up to the
unknown scattering scale, which is all the scale-invariant metrics need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .data import ImageTensor
from .errors import DataError

DEFAULT_OMEGA = 0.95
DEFAULT_PATCH = 15
DEFAULT_T_MIN = 0.05
AIRLIGHT_FRACTION = 1e-3  # brightest 0.1% of dark-channel pixels


@dataclass
class TransmissionMap:
    """Per-pixel fraction of scene radiance surviving the medium, in (0, 1]."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=np.float64)
        if t.ndim != 2:
            raise ValueError(f"transmission map must be 2-D, got shape {t.shape}")
        if t.min() <= 0 or t.max() > 1.0 + 1e-9:
            raise DataError(
                f"transmission must lie in (0, 1], got [{t.min():.6g}, {t.max():.6g}]"
            )
        self.t = t


def _as_hwc(image) -> np.ndarray:
    if isinstance(image, ImageTensor):
        arr = image.data[0]
    else:
        arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {arr.shape}")
    return arr.astype(np.float64)


def dark_channel(image, patch: int) -> np.ndarray:
    """Per-pixel channel minimum followed by a patch-neighborhood minimum.

    Windows are clipped at image borders (the minimum runs over the pixels
    actually inside the image).
    """
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be odd and >= 1, got {patch}")
    arr = _as_hwc(image)
    per_pixel = arr.min(axis=2)
    if patch == 1:
        return per_pixel
    return ndimage.minimum_filter(per_pixel, size=patch, mode="nearest")


def estimate_airlight(image, patch: int = DEFAULT_PATCH) -> np.ndarray:
    """Mean color of the brightest 0.1% dark-channel pixels."""
    arr = _as_hwc(image)
    dark = dark_channel(arr, patch)
    n = dark.size
    k = max(1, int(round(AIRLIGHT_FRACTION * n)))
    flat = dark.ravel()
    idx = np.argpartition(flat, n - k)[n - k :]
    colors = arr.reshape(n, 3)[idx]
    return colors.mean(axis=0)


def estimate_transmission_dcp(
    image,
    omega: float = DEFAULT_OMEGA,
    airlight: np.ndarray | None = None,
    patch: int = DEFAULT_PATCH,
    t_min: float = DEFAULT_T_MIN,
) -> TransmissionMap:
    """DCP transmission estimate with the classical defaults.

    t = 1 - omega * dark_channel(I / A), clamped to [t_min, 1].
    """
    arr = _as_hwc(image)
    if airlight is None:
        airlight = estimate_airlight(arr, patch)
    airlight = np.asarray(airlight, dtype=np.float64).reshape(1, 1, 3)
    if airlight.min() <= 0:
        raise DataError(f"airlight must be positive, got {airlight.ravel()}")
    normalized = arr / airlight
    t = 1.0 - omega * dark_channel(normalized, patch)
    return TransmissionMap(np.clip(t, t_min, 1.0))


def transmission_to_depth(t) -> np.ndarray:
    """Depth up to scale: d = -log t, monotone decreasing in t."""
    arr = t.t if isinstance(t, TransmissionMap) else np.asarray(t, dtype=np.float64)
    if arr.min() <= 0:
        raise DataError(f"transmission must be positive for the log, min {arr.min():.6g}")
    if arr.max() > 1.0 + 1e-9:
        raise DataError(f"transmission must be <= 1, max {arr.max():.6g}")
    return -np.log(arr)


def dcp_depth(
    image,
    omega: float = DEFAULT_OMEGA,
    airlight: np.ndarray | None = None,
    patch: int = DEFAULT_PATCH,
    t_min: float = DEFAULT_T_MIN,
) -> np.ndarray:
    """Full baseline: image -> transmission -> relative depth."""
    t = estimate_transmission_dcp(image, omega=omega, airlight=airlight, patch=patch, t_min=t_min)
    return transmission_to_depth(t)
