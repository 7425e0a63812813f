"""Subsampling patterns: regular decimation, 3D Poisson disc, and baselines."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
from scipy import ndimage

from .validation import check_same_dims, check_triple
from .volume import ComplexVolume

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplingPattern:
    """Retained linear voxel indices on an HR grid plus how they were generated.

    ``kind`` is ``"regular"`` (params: stride, offset) or ``"poisson"``
    (params: radius, seed, target_count, corners_added, adjusted_indices).
    """

    hr_dims: tuple[int, int, int]
    indices: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = check_triple(self.hr_dims, "hr_dims", minimum=1)
        idx = np.array(self.indices, dtype=np.int64).ravel()
        n = int(np.prod(dims))
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= n):
            raise ValueError("indices must be strictly increasing and within [0, N)")
        if self.kind not in ("regular", "poisson"):
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        idx.setflags(write=False)
        object.__setattr__(self, "hr_dims", dims)
        object.__setattr__(self, "indices", idx)

    @property
    def count(self) -> int:
        return int(self.indices.size)

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.hr_dims))

    @property
    def lr_dims(self) -> tuple[int, int, int]:
        if self.kind != "regular":
            raise ValueError("lr_dims is only defined for regular patterns")
        s = self.params["stride"]
        return tuple(len(range(o, n, s)) for o, n in zip(self.params["offset"], self.hr_dims))

    def mask(self) -> np.ndarray:
        m = np.zeros(self.n_voxels, dtype=bool)
        m[self.indices] = True
        return m.reshape(self.hr_dims)

    def to_json(self, include_indices: bool = True) -> str:
        doc = {"kind": self.kind, "hr_dims": list(self.hr_dims), "params": _jsonable(self.params)}
        if include_indices:
            doc["indices"] = self.indices.tolist()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "SamplingPattern":
        doc = json.loads(text)
        dims = tuple(doc["hr_dims"])
        params = doc["params"]
        if "indices" in doc:
            return cls(dims, doc["indices"], doc["kind"], params)
        if doc["kind"] == "regular":
            return regular_pattern(dims, params["stride"], params["offset"])
        return poisson_pattern(dims, params["target_count"], params["seed"])

    def save(self, path, include_indices: bool = True) -> None:
        Path(path).write_text(self.to_json(include_indices))

    @classmethod
    def load(cls, path) -> "SamplingPattern":
        return cls.from_json(Path(path).read_text())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def regular_pattern(hr_dims, stride: int, offset=(0, 0, 0)) -> SamplingPattern:
    """Keep voxels at ``offset + stride * j`` along every axis."""
    dims = check_triple(hr_dims, "hr_dims", minimum=1)
    offset = check_triple(offset, "offset")
    stride = int(stride)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if any(stride > n for n in dims):
        raise ValueError(f"stride {stride} larger than an axis of {dims}")
    if any(o >= stride for o in offset) and stride > 1:
        raise ValueError(f"offsets {offset} must be < stride {stride}")
    if stride == 1 and any(offset):
        raise ValueError("offset must be 0 for stride 1")
    grid = np.zeros(dims, dtype=bool)
    grid[offset[0]::stride, offset[1]::stride, offset[2]::stride] = True
    return SamplingPattern(dims, np.flatnonzero(grid), "regular", {"stride": stride, "offset": list(offset)})


def _ball_offsets(radius: float) -> np.ndarray:
    """Integer offsets with Euclidean norm < radius (the exclusion zone)."""
    r = int(np.ceil(radius))
    ax = np.arange(-r, r + 1)
    d = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    return d[np.sum(d * d, axis=1) < radius * radius]


def _dart_throw(dims: tuple[int, int, int], order: np.ndarray, radius: float,
                initial: np.ndarray | None = None, limit: int | None = None) -> np.ndarray:
    """Accept candidates in ``order`` unless closer than ``radius`` to an accepted sample.

    A blocked-voxel mask is updated on every acceptance, so each candidate
    test is O(1); the mask plays the role of the background acceleration grid.
    ``initial`` samples are pre-accepted; acceptance stops at ``limit`` total.
    """
    initial = np.zeros(0, np.int64) if initial is None else np.asarray(initial, np.int64)
    limit = np.inf if limit is None else limit
    if radius <= 1.0:
        taken = np.zeros(int(np.prod(dims)), dtype=bool)
        taken[initial] = True
        fresh = order[~taken[order]]
        room = int(min(limit - initial.size, fresh.size)) if np.isfinite(limit) else fresh.size
        return np.sort(np.concatenate([initial, fresh[:max(room, 0)]]))
    offs = _ball_offsets(radius)
    r = int(np.ceil(radius))
    blocked = np.zeros(tuple(d + 2 * r for d in dims), dtype=bool)
    ny, nx = dims[1], dims[2]
    flat = blocked.reshape(-1)
    sy, sx = blocked.shape[1], blocked.shape[2]
    # linear offsets into the padded mask
    lin_offs = (offs[:, 0] * sy + offs[:, 1]) * sx + offs[:, 2]

    def padded(c):
        z, rem = divmod(int(c), ny * nx)
        y, x = divmod(rem, nx)
        return ((z + r) * sy + (y + r)) * sx + (x + r)

    for c in initial:
        flat[padded(c) + lin_offs] = True
    accepted = list(initial)
    for c in order:
        if len(accepted) >= limit:
            break
        p = padded(c)
        if flat[p]:
            continue
        accepted.append(c)
        flat[p + lin_offs] = True
    return np.sort(np.asarray(accepted, dtype=np.int64)) if accepted else np.zeros(0, np.int64)


def _pairwise_min_distance(coords: np.ndarray) -> float:
    from scipy.spatial import cKDTree

    if len(coords) < 2:
        return np.inf
    d, _ = cKDTree(coords).query(coords, k=2)
    return float(d[:, 1].min())


def poisson_pattern(hr_dims, target_count: int, seed: int, include_corners: bool = True,
                    tolerance: float = 0.02, max_bisections: int = 40) -> SamplingPattern:
    """3D Poisson-disc pattern with exactly ``target_count`` samples.

    The exclusion radius is bisected until the dart-throwing count lands
    within ``tolerance`` of the target; surplus samples are dropped at
    random and a deficit is filled with random free voxels. On a voxel
    lattice the count jumps between distance shells, so when no radius
    lands in tolerance the largest radius that still yields enough samples
    is used and dart throwing stops once ``target_count`` are accepted.
    ``params["adjusted_indices"]`` lists the samples that need not respect
    ``params["radius"]`` (fill-ins and forced corners).
    """
    dims = check_triple(hr_dims, "hr_dims", minimum=1)
    n = int(np.prod(dims))
    target_count = int(target_count)
    if not 0 < target_count <= n:
        raise ValueError(f"target_count must be in (0, {n}], got {target_count}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)

    if target_count == n:
        return SamplingPattern(dims, np.arange(n), "poisson",
                               {"radius": 1.0, "seed": seed, "target_count": n, "corners_added": 0,
                                "adjusted_indices": [], "method": "full"})

    # lo keeps count >= target, hi keeps count < target
    lo, hi = 1.0, float(np.linalg.norm(dims)) + 1.0
    lo_samples = order
    hit, hit_r = None, None
    for _ in range(max_bisections):
        mid = 0.5 * (lo + hi)
        samples = _dart_throw(dims, order, mid)
        if abs(samples.size - target_count) <= tolerance * target_count:
            hit, hit_r = samples, mid
            break
        if samples.size >= target_count:
            lo, lo_samples = mid, samples
        else:
            hi = mid
        if hi - lo < 1e-6:
            break

    adjusted = np.zeros(0, np.int64)
    if hit is not None and hit.size >= target_count:
        radius, method = hit_r, "trim"
        chosen = np.sort(rng.choice(hit, target_count, replace=False))
    elif hit is not None:
        radius, method = hit_r, "augment"
        free = np.setdiff1d(np.arange(n), hit, assume_unique=True)
        adjusted = rng.choice(free, target_count - hit.size, replace=False)
        chosen = np.sort(np.concatenate([hit, adjusted]))
    else:
        # lattice shells bracket the target: densest admissible shell, stopped early
        radius, method = lo, "early-stop"
        chosen = _dart_throw(dims, order, lo, limit=target_count)
        logger.debug("count jumps across target %d between r=%.3f and r=%.3f (%d samples at lo)",
                     target_count, lo, hi, lo_samples.size)

    corners_added = 0
    adjusted = set(int(a) for a in adjusted)
    if include_corners:
        chosen, added = _force_corners(dims, chosen)
        corners_added = len(added)
        adjusted |= set(added)
        adjusted &= set(chosen.tolist())

    params = {"radius": radius, "seed": seed, "target_count": target_count, "method": method,
              "corners_added": corners_added, "adjusted_indices": sorted(adjusted)}
    return SamplingPattern(dims, chosen, "poisson", params)


def _force_corners(dims, chosen: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Swap in any missing FOV corner for the nearest non-corner sample."""
    corners = [np.ravel_multi_index(c, dims) for c in product(*[(0, d - 1) for d in dims])]
    corners = sorted(set(int(c) for c in corners))
    if len(chosen) < len(corners):
        return chosen, []
    selected = set(chosen.tolist())
    added = []
    for c in corners:
        if c in selected:
            continue
        cz = np.array(np.unravel_index(c, dims))
        cand = np.array([s for s in sorted(selected) if s not in corners])
        coords = np.stack(np.unravel_index(cand, dims), -1)
        victim = int(cand[np.argmin(np.sum((coords - cz) ** 2, axis=1))])
        selected.remove(victim)
        selected.add(c)
        added.append(c)
    return np.array(sorted(selected), dtype=np.int64), added


def pattern_min_distance(p: SamplingPattern) -> float:
    """Minimum pairwise grid distance between retained samples."""
    coords = np.stack(np.unravel_index(p.indices, p.hr_dims), -1).astype(float)
    return _pairwise_min_distance(coords)


def apply_pattern(v: ComplexVolume | np.ndarray, p: SamplingPattern) -> np.ndarray:
    """Measured values at the pattern's indices.

    Accepts a volume or a raw ``(..., z, y, x)`` array; leading axes are kept.
    """
    data = v.data if isinstance(v, ComplexVolume) else np.asarray(v)
    check_same_dims(data.shape[-3:], p.hr_dims, "volume and pattern")
    lead = data.shape[:-3]
    return data.reshape(lead + (-1,))[..., p.indices]


def gather_lr_volume(v: ComplexVolume | np.ndarray, p: SamplingPattern):
    """Dense low-resolution volume for a regular pattern."""
    if p.kind != "regular":
        raise ValueError("gather_lr_volume requires a regular pattern")
    values = apply_pattern(v, p)
    out = values.reshape(values.shape[:-1] + p.lr_dims)
    return ComplexVolume(out, v.voxel_spacing) if isinstance(v, ComplexVolume) else out


def zero_filled(values: np.ndarray, p: SamplingPattern) -> np.ndarray:
    """Scatter measured values back onto the HR grid, zeros elsewhere."""
    values = np.asarray(values)
    lead = values.shape[:-1]
    out = np.zeros(lead + (p.n_voxels,), dtype=np.result_type(values, np.complex128))
    out[..., p.indices] = values
    return out.reshape(lead + p.hr_dims)


def trilinear_upsample(lr: ComplexVolume | np.ndarray, hr_dims, offset=(0, 0, 0), stride=None):
    """Trilinear interpolation onto an HR grid with edge clamping.

    HR voxel ``i`` maps to LR coordinate ``(i - offset) / stride``; the
    default stride is ``hr_dims / lr_dims`` per axis, which aligns LR
    samples with the voxels a regular pattern took them from.
    Real and imaginary parts are interpolated independently.
    """
    data = lr.data if isinstance(lr, ComplexVolume) else np.asarray(lr)
    hr_dims = check_triple(hr_dims, "hr_dims", minimum=1)
    offset = check_triple(offset, "offset")
    lr_dims = data.shape[-3:]
    if any(h < l for h, l in zip(hr_dims, lr_dims)):
        raise ValueError(f"hr_dims {hr_dims} smaller than lr dims {lr_dims}")
    if stride is None:
        stride = [h / l for h, l in zip(hr_dims, lr_dims)]
    elif np.isscalar(stride):
        stride = [float(stride)] * 3
    axes = [np.clip((np.arange(h) - o) / s, 0, l - 1) for h, o, s, l in zip(hr_dims, offset, stride, lr_dims)]
    coords = np.stack(np.meshgrid(*axes, indexing="ij"))
    lead = data.shape[:-3]
    flat = data.reshape((-1,) + lr_dims)
    out = np.empty((flat.shape[0],) + hr_dims, dtype=np.result_type(data, np.float64))
    for i, vol in enumerate(flat):
        if np.iscomplexobj(vol):
            out[i] = (ndimage.map_coordinates(vol.real, coords, order=1, mode="nearest")
                      + 1j * ndimage.map_coordinates(vol.imag, coords, order=1, mode="nearest"))
        else:
            out[i] = ndimage.map_coordinates(vol, coords, order=1, mode="nearest")
    out = out.reshape(lead + hr_dims)
    return ComplexVolume(out) if isinstance(lr, ComplexVolume) else out
