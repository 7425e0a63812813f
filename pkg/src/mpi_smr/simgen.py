"""Idealised MPI physics: Lissajous excitation, Langevin particles, delta-sample calibration.

The generator produces system matrices with the wave-like component
structure of measured ones, plus phantoms and phantom measurements, so
the whole pipeline runs without the calibration dataset.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .validation import check_same_dims, check_triple
from .volume import ConcentrationImage, Measurement, SystemMatrix

K_B = 1.380649e-23
MU0 = 4e-7 * np.pi
MS_MAGNETITE = 474e3  # A/m


def langevin(xi):
    """L(xi) = coth(xi) - 1/xi, with the cubic series near zero."""
    xi = np.asarray(xi, dtype=np.float64)
    small = np.abs(xi) < 1e-4
    safe = np.where(small, 1.0, xi)
    out = np.where(small, xi / 3.0 - xi**3 / 45.0, 1.0 / np.tanh(safe) - 1.0 / safe)
    return out if out.ndim else float(out)


def _langevin_over_xi(xi: np.ndarray) -> np.ndarray:
    """L(xi)/xi, finite at zero."""
    small = np.abs(xi) < 1e-4
    safe = np.where(small, 1.0, xi)
    return np.where(small, 1.0 / 3.0 - xi**2 / 45.0, (1.0 / np.tanh(safe) - 1.0 / safe) / safe)


@dataclass(frozen=True)
class ScannerConfig:
    """Field-free-point scanner with a 3D Lissajous drive.

    Drive frequencies are ``cycles * base_frequency`` so the trajectory is
    periodic over ``sample_points`` samples.
    """

    gradient: tuple[float, float, float] = (1.0, 1.0, 2.0)  # T/m
    drive_amplitudes: tuple[float, float, float] = (12.0, 12.0, 24.0)  # mT
    cycles: tuple[int, int, int] = (16, 17, 18)
    base_frequency: float = 2.5e6 / 1632.0  # Hz
    sample_points: int = 1024
    particle_diameter: float = 22.0  # nm
    temperature: float = 295.0  # K
    fov_fraction: float = 0.9
    receive_channels: tuple[int, ...] = (0, 1, 2)

    def __post_init__(self):
        for name in ("gradient", "drive_amplitudes"):
            vals = getattr(self, name)
            if len(vals) != 3 or any(v <= 0 for v in vals):
                raise ValueError(f"{name} must be 3 positive values")
        if len(set(self.cycles)) != 3 or min(self.cycles) < 1:
            raise ValueError("cycles must be three distinct positive integers")
        if self.sample_points < 2 * max(self.cycles) or self.particle_diameter <= 0 or self.temperature <= 0:
            raise ValueError("invalid sampling or particle parameters")
        if not 0 < self.fov_fraction <= 1:
            raise ValueError("fov_fraction must lie in (0, 1]")

    @property
    def drive_frequencies(self) -> np.ndarray:
        return np.asarray(self.cycles, dtype=float) * self.base_frequency

    @property
    def beta(self) -> float:
        """Langevin argument per tesla, m / (k_B T)."""
        volume = np.pi / 6.0 * (self.particle_diameter * 1e-9) ** 3
        return MS_MAGNETITE * volume / (K_B * self.temperature)

    @property
    def fov(self) -> np.ndarray:
        """Edge length (m) of the sampled region per (z, y, x) axis."""
        half = np.asarray(self.drive_amplitudes) * 1e-3 / np.asarray(self.gradient)
        # config triples are (x, y, z); grid axes are (z, y, x)
        return (2 * half * self.fov_fraction)[::-1]

    def frequencies(self) -> np.ndarray:
        return np.arange(self.sample_points // 2 + 1) * self.base_frequency

    def to_dict(self) -> dict:
        return asdict(self)


def grid_positions(sc: ScannerConfig, dims) -> np.ndarray:
    """Voxel-centre positions ``(N, 3)`` in metres as (x, y, z), x fastest."""
    dims = check_triple(dims, "dims", minimum=1)
    fov = sc.fov
    axes = [(-0.5 + (np.arange(n) + 0.5) / n) * f for n, f in zip(dims, fov)]
    zz, yy, xx = np.meshgrid(*axes, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


def magnetization(sc: ScannerConfig, positions: np.ndarray) -> np.ndarray:
    """Mean particle moment direction-scaled magnetisation ``(P, 3, T)`` over one period."""
    t = np.arange(sc.sample_points) / sc.sample_points
    drive = (np.asarray(sc.drive_amplitudes)[:, None] * 1e-3
             * np.sin(2 * np.pi * np.asarray(sc.cycles)[:, None] * t[None, :]))  # (3, T)
    field_t = np.asarray(sc.gradient)[None, :, None] * positions[:, :, None] - drive[None]
    field_t[:, 2] *= -1.0  # z gradient has opposite sign (divergence-free selection field)
    beta = sc.beta
    magnitude = np.sqrt(np.sum(field_t**2, axis=1, keepdims=True))
    return beta * _langevin_over_xi(beta * magnitude) * field_t


def _spectra(sc: ScannerConfig, positions: np.ndarray) -> np.ndarray:
    """Induced-voltage Fourier coefficients ``(P, channels, F)`` for delta samples."""
    m = magnetization(sc, positions)[:, list(sc.receive_channels)]
    spec = np.fft.rfft(m, axis=-1) / sc.sample_points
    k = np.arange(spec.shape[-1])
    # u = -dM/dt  ->  multiply by -i * 2 pi k (time in units of the period)
    return spec * (-1j * 2 * np.pi * k)


def simulate_system_matrix(sc: ScannerConfig, dims, noise_rms: float = 0.0, seed: int = 0,
                           chunk: int = 1024) -> SystemMatrix:
    """Delta-sample calibration scan over a ``dims`` grid.

    Components are ordered channel-major then by frequency index. Noise is
    complex white with RMS ``noise_rms`` per voxel, drawn from a generator
    seeded by ``(seed, n)`` for voxel ``n``. SNR is the noise-free component
    RMS over ``noise_rms`` (over a 1e-12 relative floor when noiseless).
    """
    dims = check_triple(dims, "dims", minimum=1)
    pos = grid_positions(sc, dims)
    n = pos.shape[0]
    n_freq = sc.sample_points // 2 + 1
    n_ch = len(sc.receive_channels)
    data = np.empty((n_ch * n_freq, n), dtype=np.complex128)
    for start in range(0, n, chunk):
        spec = _spectra(sc, pos[start:start + chunk])  # (P, C, F)
        data[:, start:start + chunk] = spec.reshape(spec.shape[0], -1).T
    rms = np.sqrt(np.mean(np.abs(data) ** 2, axis=1))
    if noise_rms > 0:
        for i in range(n):
            g = np.random.default_rng([seed, i]).standard_normal((2, data.shape[0]))
            data[:, i] += noise_rms / np.sqrt(2.0) * (g[0] + 1j * g[1])
        snr = rms / noise_rms
    else:
        snr = rms / (1e-12 * max(rms.max(), np.finfo(float).tiny))
    freqs = np.tile(sc.frequencies(), n_ch)
    meta = {
        "source": "simgen",
        "channel": np.repeat(np.asarray(sc.receive_channels), n_freq).tolist(),
        "frequency_index": np.tile(np.arange(n_freq), n_ch).tolist(),
        "noise_rms": float(noise_rms),
        "seed": int(seed),
        "scanner": sc.to_dict(),
    }
    spacing = tuple(float(f / d) for f, d in zip(sc.fov, dims))
    return SystemMatrix(data.reshape((-1,) + dims), freqs, snr, meta, spacing)


def add_noise(sm: SystemMatrix, noise_rms: float, seed: int) -> SystemMatrix:
    """Add per-voxel seeded complex noise to an existing matrix and refresh SNR."""
    flat = sm.as_matrix().copy()
    rms = np.sqrt(np.mean(np.abs(flat) ** 2, axis=1))
    for i in range(flat.shape[1]):
        g = np.random.default_rng([seed, i]).standard_normal((2, flat.shape[0]))
        flat[:, i] += noise_rms / np.sqrt(2.0) * (g[0] + 1j * g[1])
    meta = dict(sm.meta, noise_rms=float(noise_rms), seed=int(seed))
    snr = rms / noise_rms if noise_rms > 0 else sm.snr
    return SystemMatrix(flat.reshape(sm.data.shape), sm.frequencies, snr, meta, sm.voxel_spacing)


def select_top_snr(sm: SystemMatrix, k_max: int) -> SystemMatrix:
    """Keep the ``k_max`` highest-SNR components, in their original order."""
    if len(sm) <= k_max:
        return sm
    keep = np.sort(np.argsort(-sm.snr, kind="stable")[:k_max])
    return sm.select(keep)


def simulate_measurement(sm: SystemMatrix, phantom: ConcentrationImage, noise_rms: float = 0.0,
                         seed: int = 0) -> Measurement:
    """u = S c + complex white noise."""
    check_same_dims(sm.dims, phantom.dims, "system matrix and phantom")
    u = sm.as_matrix() @ phantom.values.ravel()
    if noise_rms > 0:
        g = np.random.default_rng(seed).standard_normal((2, u.size))
        u = u + noise_rms / np.sqrt(2.0) * (g[0] + 1j * g[1])
    return Measurement(u, sm.frequencies)


def make_phantom(kind: str, dims) -> ConcentrationImage:
    """Synthetic analogues of the shape, resolution and concentration phantoms."""
    dims = check_triple(dims, "dims", minimum=4)
    img = np.zeros(dims)
    centre = (np.asarray(dims) - 1) / 2.0
    if kind == "shape":
        zz, yy, xx = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
        semi = np.asarray(dims) * np.array([0.2, 0.3, 0.25])
        r2 = ((zz - centre[0]) / semi[0]) ** 2 + ((yy - centre[1]) / semi[1]) ** 2 + ((xx - centre[2]) / semi[2]) ** 2
        img[r2 <= 1.0] = 1.0
    elif kind == "resolution":
        z = int(round(centre[0]))
        rows = np.linspace(dims[1] * 0.25, dims[1] * 0.75, 3).round().astype(int)
        for y, spacing in zip(rows, (4, 3, 2)):
            x0 = int(round(centre[2] - spacing / 2))
            img[z, y, x0] = 1.0
            img[z, y, x0 + spacing] = 1.0
    elif kind == "concentration":
        size = max(1, min(dims) // 8)
        z = int(round(centre[0])) - size // 2
        y = int(round(centre[1])) - size // 2
        xs = np.linspace(dims[2] * 0.2, dims[2] * 0.8 - size, 3).round().astype(int)
        for x, value in zip(xs, (1.0, 0.5, 0.25)):
            img[z:z + size, y:y + size, x:x + size] = value
    else:
        raise ValueError(f"unknown phantom kind {kind!r}; use shape, resolution or concentration")
    return ConcentrationImage(img, {"phantom": kind})


@dataclass(frozen=True)
class DeskScenario:
    """Default synthetic experiment geometry."""

    scanner: ScannerConfig = field(default_factory=ScannerConfig)
    dims: tuple[int, int, int] = (32, 32, 32)
    noise_rms: float = 0.0
    snr_threshold: float = 3.0
    k_max: int = 256
