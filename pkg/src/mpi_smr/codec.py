"""Complex <-> amplitude-scaled RGB conversion.

Phase becomes hue (0 deg at phase 0, counter-clockwise), saturation and
value are fixed at 1, and the resulting pure-hue RGB triple is scaled by
``|s| / amp_scale``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import check_finite
from .volume import ComplexVolume


@dataclass(frozen=True)
class RgbVolume:
    """Three real channels per voxel, stored as ``(3, z, y, x)``."""

    data: np.ndarray
    amp_scale: float
    zero_volume: bool = False

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, copy=True)
        if data.ndim != 4 or data.shape[0] != 3:
            raise ValueError(f"RgbVolume.data must be (3, z, y, x), got {data.shape}")
        check_finite(data, "RgbVolume.data")
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError("RgbVolume channels must lie in [0, 1]; clamp network output first")
        scale = float(self.amp_scale)
        if not np.isfinite(scale) or scale <= 0:
            raise ValueError(f"amp_scale must be finite and > 0, got {scale}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "amp_scale", scale)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]


def hue_to_rgb(hue_deg: np.ndarray) -> np.ndarray:
    """Standard HSV->RGB sector formula with S = V = 1; channels on axis 0."""
    h = np.mod(hue_deg, 360.0) / 60.0
    # f(n) = V - V*S*max(0, min(k, 4 - k, 1)), k = (n + H/60) mod 6
    out = np.empty((3,) + np.shape(h))
    for i, n in enumerate((5.0, 3.0, 1.0)):
        k = np.mod(n + h, 6.0)
        out[i] = 1.0 - np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)
    return out


def rgb_to_hue(rgb: np.ndarray) -> np.ndarray:
    """Hue in degrees [0, 360) of RGB triples on axis 0 (standard RGB->HSV)."""
    r, g, b = rgb[0], rgb[1], rgb[2]
    cmax = np.max(rgb, axis=0)
    delta = cmax - np.min(rgb, axis=0)
    safe = np.where(delta > 0, delta, 1.0)
    hue = np.zeros_like(cmax)
    is_r = (cmax == r) & (delta > 0)
    is_g = (cmax == g) & (delta > 0) & ~is_r
    is_b = (delta > 0) & ~is_r & ~is_g
    hue = np.where(is_r, np.mod((g - b) / safe, 6.0), hue)
    hue = np.where(is_g, (b - r) / safe + 2.0, hue)
    hue = np.where(is_b, (r - g) / safe + 4.0, hue)
    return 60.0 * hue


def encode_array(data: np.ndarray, amp_scale: float | None = None) -> tuple[np.ndarray, float]:
    """Encode complex array ``(..., z, y, x)`` to RGB ``(..., 3, z, y, x)``.

    Without ``amp_scale`` the maximum amplitude is used (1 for all-zero
    input). Channels exceed 1 where ``|s| > amp_scale``.
    """
    data = np.asarray(data)
    amp = np.abs(data)
    if amp_scale is None:
        peak = float(amp.max()) if amp.size else 0.0
        amp_scale = peak if peak > 0 else 1.0
    hue = np.degrees(np.angle(data))
    rgb = hue_to_rgb(hue) * (amp / amp_scale)
    lead = data.ndim - 3
    rgb = np.moveaxis(rgb, 0, lead)
    return rgb, float(amp_scale)


def decode_array(rgb: np.ndarray, amp_scale: float) -> np.ndarray:
    """Inverse of :func:`encode_array`; channel axis is ``-4``. Clamps to [0, 1]."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    rgb = np.moveaxis(rgb, -4, 0)
    peak = rgb.max(axis=0)
    norm = rgb / np.where(peak > 0, peak, 1.0)
    phase = np.radians(rgb_to_hue(norm))
    phase = np.where(phase > np.pi, phase - 2 * np.pi, phase)
    out = peak * amp_scale * np.exp(1j * phase)
    return np.where(peak > 0, out, 0.0)


def encode(v: ComplexVolume, amp_scale: float | None = None) -> RgbVolume:
    """Encode one component; ``amp_scale`` defaults to the volume's max amplitude."""
    peak = float(np.abs(v.data).max())
    rgb, scale = encode_array(v.data, amp_scale)
    return RgbVolume(np.clip(rgb, 0.0, 1.0), scale, zero_volume=peak == 0.0)


def decode(r: RgbVolume | np.ndarray, amp_scale: float | None = None) -> ComplexVolume:
    """Decode an RGB volume, or a raw ``(3, z, y, x)`` network output plus ``amp_scale``."""
    if isinstance(r, RgbVolume):
        return ComplexVolume(decode_array(r.data, r.amp_scale))
    if amp_scale is None:
        raise ValueError("amp_scale required when decoding a raw array")
    arr = np.asarray(r, dtype=np.float64)
    check_finite(arr, "rgb")
    return ComplexVolume(decode_array(arr, amp_scale))


def export_png_slices(r: RgbVolume, directory, prefix: str = "slice") -> list[Path]:
    """Write one PNG per z-slice for visual inspection."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for z in range(r.dims[0]):
        img = np.moveaxis(r.data[:, z], 0, -1)
        path = directory / f"{prefix}_z{z:03d}.png"
        Image.fromarray(np.round(img * 255).astype(np.uint8), mode="RGB").save(path)
        paths.append(path)
    return paths
