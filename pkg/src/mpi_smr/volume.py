"""Containers for complex 3D volumes, system matrices, measurements and images.

All spatial triples (dims, offsets, padding) follow numpy axis order
``(z, y, x)``; arrays are C-ordered so the linear voxel index is
``(z * ny + y) * nx + x`` (x varies fastest).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .validation import check_finite, check_same_dims, check_triple, check_volume_array

AXIS_ORDER = "zyx"


@dataclass(frozen=True)
class ComplexVolume:
    """One frequency component sampled on a 3D grid."""

    data: np.ndarray
    voxel_spacing: tuple[float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "data", check_volume_array(self.data, "ComplexVolume.data"))
        if self.voxel_spacing is not None:
            object.__setattr__(self, "voxel_spacing", tuple(float(s) for s in self.voxel_spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __eq__(self, other):
        if not isinstance(other, ComplexVolume):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self.data, other.data))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class ConcentrationImage:
    """Real-valued particle concentration per voxel."""

    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "values", check_volume_array(self.values, "ConcentrationImage.values", np.float64)
        )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Measurement:
    """Fourier coefficients of the induced voltage, one per frequency index."""

    u_hat: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        u = np.array(self.u_hat, dtype=np.complex128).ravel()
        f = np.array(self.frequencies, dtype=np.float64).ravel()
        if u.shape != f.shape:
            raise ValueError(f"u_hat has {u.size} entries but {f.size} frequencies")
        check_finite(u, "u_hat")
        u.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "u_hat", u)
        object.__setattr__(self, "frequencies", f)

    def __len__(self) -> int:
        return self.u_hat.size


@dataclass(frozen=True)
class SystemMatrix:
    """K frequency components on a shared grid, stored as a ``(K, z, y, x)`` array.

    ``meta`` is free-form provenance. Per-component side information that
    must follow selections (e.g. receive channel) goes in ``meta["channel"]``
    as a length-K list.
    """

    data: np.ndarray
    frequencies: np.ndarray
    snr: np.ndarray
    meta: dict = field(default_factory=dict)
    voxel_spacing: tuple[float, float, float] | None = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.complex128, copy=True)
        if data.ndim != 4:
            raise ValueError(f"SystemMatrix.data must be (K, z, y, x), got {data.shape}")
        k = data.shape[0]
        freqs = np.array(self.frequencies, dtype=np.float64).ravel()
        snr = np.array(self.snr, dtype=np.float64).ravel()
        if freqs.size != k or snr.size != k:
            raise ValueError(
                f"components, frequencies and snr lengths differ: {k}, {freqs.size}, {snr.size}"
            )
        if np.any(snr < 0) or not np.all(np.isfinite(snr)):
            raise ValueError("snr values must be finite and >= 0")
        check_finite(data, "SystemMatrix.data")
        for a in (data, freqs, snr):
            a.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "snr", snr)
        object.__setattr__(self, "meta", dict(self.meta))
        if self.voxel_spacing is not None:
            object.__setattr__(self, "voxel_spacing", tuple(float(s) for s in self.voxel_spacing))

    @classmethod
    def from_components(
        cls,
        components: Sequence[ComplexVolume],
        frequencies,
        snr,
        meta: dict | None = None,
    ) -> "SystemMatrix":
        if len(components) == 0:
            raise ValueError("need at least one component; use an empty (0, z, y, x) array instead")
        dims = components[0].dims
        for c in components:
            check_same_dims(c.dims, dims, "components")
        data = np.stack([c.data for c in components])
        return cls(data, frequencies, snr, meta or {}, components[0].voxel_spacing)

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def component(self, k: int) -> ComplexVolume:
        return ComplexVolume(self.data[k], self.voxel_spacing)

    @property
    def components(self) -> list[ComplexVolume]:
        return [self.component(k) for k in range(len(self))]

    def as_matrix(self) -> np.ndarray:
        """The ``(K, N)`` matrix view with voxels in linear-index order."""
        return self.data.reshape(len(self), -1)

    def select(self, indices) -> "SystemMatrix":
        """Subset of components, order given by ``indices``."""
        idx = np.asarray(indices, dtype=np.int64).ravel()
        meta = dict(self.meta)
        for key, value in self.meta.items():
            if isinstance(value, (list, tuple, np.ndarray)) and len(value) == len(self) and key != "dims":
                meta[key] = [value[i] for i in idx]
        return SystemMatrix(self.data[idx], self.frequencies[idx], self.snr[idx], meta, self.voxel_spacing)

    def with_data(self, data: np.ndarray, **meta_updates: Any) -> "SystemMatrix":
        """Same frequencies/SNR/meta, new component data (dims may change)."""
        meta = dict(self.meta)
        meta.update(meta_updates)
        return SystemMatrix(data, self.frequencies, self.snr, meta, self.voxel_spacing)


def zero_pad(v: ComplexVolume, before, after) -> ComplexVolume:
    """Zero-pad a volume by ``before``/``after`` voxels per axis."""
    before = check_triple(before, "before")
    after = check_triple(after, "after")
    data = np.pad(v.data, list(zip(before, after)))
    return ComplexVolume(data, v.voxel_spacing)


def crop(v: ComplexVolume, offset, dims) -> ComplexVolume:
    """Extract the block of size ``dims`` starting at ``offset``."""
    offset = check_triple(offset, "offset")
    dims = check_triple(dims, "dims", minimum=1)
    for o, d, n in zip(offset, dims, v.dims):
        if o + d > n:
            raise IndexError(f"crop offset {offset} + dims {dims} exceeds volume dims {v.dims}")
    sl = tuple(slice(o, o + d) for o, d in zip(offset, dims))
    return ComplexVolume(v.data[sl], v.voxel_spacing)


def pad_array(data: np.ndarray, before, after) -> np.ndarray:
    """``zero_pad`` on a raw ``(..., z, y, x)`` array."""
    before = check_triple(before, "before")
    after = check_triple(after, "after")
    lead = [(0, 0)] * (data.ndim - 3)
    return np.pad(data, lead + list(zip(before, after)))


def crop_array(data: np.ndarray, offset, dims) -> np.ndarray:
    offset = check_triple(offset, "offset")
    dims = check_triple(dims, "dims", minimum=1)
    for o, d, n in zip(offset, dims, data.shape[-3:]):
        if o + d > n:
            raise IndexError(f"crop offset {offset} + dims {dims} exceeds dims {data.shape[-3:]}")
    return data[(Ellipsis,) + tuple(slice(o, o + d) for o, d in zip(offset, dims))]


def snr_filter(sm: SystemMatrix, threshold: float) -> SystemMatrix:
    """Keep components with ``snr >= threshold``, order preserved."""
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    return sm.select(np.flatnonzero(sm.snr >= threshold))


def estimate_snr(data: np.ndarray, background: np.ndarray | None = None) -> np.ndarray:
    """Per-component SNR estimate for ``(K, z, y, x)`` data.

    With ``background`` (``(K, B)`` complex background-frame values) the
    noise level is the RMS deviation of the background around its mean.
    Without it, noise is estimated from the median absolute difference of
    neighbouring voxels along x, which is robust for smooth components.
    """
    k = data.shape[0]
    flat = data.reshape(k, -1)
    signal = np.sqrt(np.mean(np.abs(flat) ** 2, axis=1))
    if background is not None:
        bg = np.asarray(background).reshape(k, -1)
        noise = np.sqrt(np.mean(np.abs(bg - bg.mean(axis=1, keepdims=True)) ** 2, axis=1))
    else:
        diff = np.abs(np.diff(data, axis=-1)).reshape(k, -1)
        # |a - b| for a, b ~ CN(0, sigma^2) is Rayleigh with scale sigma; median sigma * sqrt(2 ln 2)
        noise = np.median(diff, axis=1) / np.sqrt(2 * np.log(2))
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(noise > 0, signal / np.where(noise > 0, noise, 1), 0.0)
    return snr
