"""Training loop and component-wise recovery."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import permutations, product

import numpy as np

from ..codec import decode_array, encode_array
from ..metrics import nrmse_batch
from ..nn import Adam, Tensor, mse_loss
from ..sampling import SamplingPattern, gather_lr_volume
from ..volume import SystemMatrix, crop_array
from .model import SMRNet

logger = logging.getLogger(__name__)

# the 48 rotation-reflection symmetries of the cube: axis permutation x axis flips
ORIENTATIONS: list[tuple[tuple[int, int, int], tuple[bool, bool, bool]]] = [
    (perm, flips) for perm in permutations(range(3)) for flips in product((False, True), repeat=3)
]


def orient(volume: np.ndarray, index: int) -> np.ndarray:
    """Apply orientation ``index`` (0 = identity) to the last three axes."""
    perm, flips = ORIENTATIONS[index]
    lead = volume.ndim - 3
    out = np.transpose(volume, tuple(range(lead)) + tuple(lead + p for p in perm))
    for axis, flip in enumerate(flips):
        if flip:
            out = np.flip(out, axis=lead + axis)
    return out


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation schedule.

    ``patch`` is the LR patch edge length used for training crops
    (``None`` trains on whole volumes). The learning rate halves every
    ``lr_halve_every`` iterations, at most ``max_halvings`` times.
    """

    iterations: int = 200_000
    minibatch: int = 64
    lr0: float = 1e-4
    lr_halve_every: int = 4_000
    seed: int = 0
    augment: bool = True
    patch: int | None = None
    val_every: int = 500
    val_fraction: float = 0.1
    max_halvings: int = 10

    def __post_init__(self):
        if self.iterations < 1 or self.minibatch < 1 or self.lr0 <= 0 or self.lr_halve_every < 1:
            raise ValueError("iterations, minibatch, lr0 and lr_halve_every must be positive")
        if self.patch is not None and self.patch < 1:
            raise ValueError("patch must be positive")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must lie in (0, 1)")

    def learning_rate(self, iteration: int) -> float:
        """Rate used at 1-based ``iteration``."""
        halvings = min((iteration - 1) // self.lr_halve_every, self.max_halvings)
        return self.lr0 * 0.5**halvings


@dataclass
class TrainResult:
    model: SMRNet
    history: list[dict]
    best_iteration: int
    best_val_nrmse: float
    train_indices: np.ndarray
    val_indices: np.ndarray
    optimizer_state: object = None
    notes: list[str] = field(default_factory=list)


def split_components(k: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split of component indices (at least one of each when k >= 2)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(k)
    n_val = int(round(k * val_fraction))
    n_val = min(max(n_val, 1 if k >= 2 else 0), k - 1 if k >= 2 else 0)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def output_dims(pattern: SamplingPattern, up_factor: int) -> tuple[int, int, int]:
    return tuple(n * up_factor for n in pattern.lr_dims)


def encode_pair(hr: np.ndarray, pattern: SamplingPattern, up_factor: int):
    """RGB (LR input, HR target) for one complex HR volume.

    The LR volume is gathered from ``hr`` with ``pattern``; both volumes use
    the LR peak amplitude as ``amp_scale``. The target covers the first
    ``up_factor * lr_dims`` HR voxels along each axis, the region the
    network's output grid maps onto.
    """
    lr = gather_lr_volume(hr, pattern)
    lr_rgb, amp = encode_array(lr)
    out = output_dims(pattern, up_factor)
    target = _fit_to(hr, out)
    hr_rgb, _ = encode_array(target, amp)
    return lr_rgb, hr_rgb, amp


def _fit_to(volume: np.ndarray, dims) -> np.ndarray:
    """Crop or zero-extend the last three axes to ``dims`` (anchored at the origin)."""
    sl = tuple(slice(0, d) for d in dims)
    out = volume[(Ellipsis,) + sl]
    if out.shape[-3:] != tuple(dims):
        pad = [(0, 0)] * (out.ndim - 3) + [(0, d - n) for d, n in zip(dims, out.shape[-3:])]
        out = np.pad(out, pad)
    return out


def train(model: SMRNet, hr_sm: SystemMatrix, pattern: SamplingPattern, tc: TrainConfig,
          val_indices=None, eval_crop: tuple | None = None, log_every: int = 0) -> TrainResult:
    """Fit ``model`` on (LR, HR) component pairs of ``hr_sm``.

    ``hr_sm`` must already live on ``pattern.hr_dims`` (pad it first).
    Each iteration draws ``tc.minibatch`` training components, gives each a
    random cube symmetry, re-derives the LR input from the re-oriented HR
    volume so the sampling geometry stays consistent, optionally crops an
    aligned LR/HR patch pair, and takes one Adam step on the RGB MSE.
    Validation runs every ``tc.val_every`` iterations on whole volumes and
    the parameters with the lowest complex-domain NRMSE are kept.
    ``eval_crop = (offset, dims)`` restricts validation NRMSE to the
    original (unpadded) region.
    """
    if pattern.kind != "regular":
        raise ValueError("network training needs a regular sampling pattern")
    if hr_sm.dims != pattern.hr_dims:
        raise ValueError(f"HR dims {hr_sm.dims} differ from pattern dims {pattern.hr_dims}")
    up = model.config.up_factor
    out = output_dims(pattern, up)
    if any(o > h + up for o, h in zip(out, pattern.hr_dims)):
        raise ValueError(f"network output {out} does not fit HR grid {pattern.hr_dims}")
    if len(set(pattern.hr_dims)) != 1 and tc.augment:
        raise ValueError("augmentation with axis permutations needs a cubic HR grid")
    rng = np.random.default_rng(tc.seed)
    k = len(hr_sm)
    if val_indices is None:
        train_idx, val_idx = split_components(k, tc.val_fraction, tc.seed)
    else:
        val_idx = np.sort(np.asarray(val_indices, dtype=np.int64))
        train_idx = np.setdiff1d(np.arange(k), val_idx)
    notes = []
    replace = len(train_idx) < tc.minibatch
    if replace:
        notes.append(f"only {len(train_idx)} training components for minibatch {tc.minibatch}; sampling with replacement")
        logger.warning(notes[-1])

    lr_dims = pattern.lr_dims
    patch = tc.patch
    if patch is not None and patch > min(lr_dims):
        patch = None

    # validation inputs are fixed: no orientation, whole volumes
    val = _validation_set(hr_sm, pattern, up, val_idx, eval_crop)

    opt = Adam(model.params, lr=tc.lr0)
    dtype = model.dtype
    history: list[dict] = []
    best = (np.inf, 0, model.state_dict())
    for it in range(1, tc.iterations + 1):
        opt.lr = tc.learning_rate(it)
        picks = rng.choice(train_idx, tc.minibatch, replace=replace)
        xs, ys = [], []
        for c in picks:
            hr = hr_sm.data[c]
            if tc.augment:
                hr = orient(hr, int(rng.integers(len(ORIENTATIONS))))
            lr_rgb, hr_rgb, _ = encode_pair(hr, pattern, up)
            if patch is not None:
                start = [int(rng.integers(0, n - patch + 1)) for n in lr_dims]
                lr_rgb = lr_rgb[(slice(None),) + tuple(slice(s, s + patch) for s in start)]
                hr_rgb = hr_rgb[(slice(None),) + tuple(slice(s * up, (s + patch) * up) for s in start)]
            xs.append(lr_rgb)
            ys.append(hr_rgb)
        x = Tensor(np.stack(xs).astype(dtype))
        y = np.stack(ys).astype(dtype)
        opt.zero_grad()
        loss = mse_loss(model(x), y)
        loss.backward()
        opt.step()
        row = {"iteration": it, "train_mse": float(loss.data), "val_mse": "", "val_nrmse": ""}
        if val is not None and (it % tc.val_every == 0 or it == tc.iterations):
            val_mse, val_nrmse = _evaluate(model, val)
            row["val_mse"], row["val_nrmse"] = val_mse, val_nrmse
            if val_nrmse < best[0]:
                best = (val_nrmse, it, model.state_dict())
        if log_every and it % log_every == 0:
            logger.info("iter %d lr %.2e train_mse %.3e val %s", it, opt.lr, row["train_mse"], row["val_nrmse"])
        history.append(row)

    if val is not None:
        model.load_state_dict(best[2])
    else:
        best = (float("nan"), tc.iterations, None)
    return TrainResult(model, history, best[1], best[0], train_idx, val_idx, opt.state, notes)


def _validation_set(hr_sm, pattern, up, val_idx, eval_crop):
    if len(val_idx) == 0:
        return None
    xs, ys, amps = [], [], []
    for c in val_idx:
        lr_rgb, hr_rgb, amp = encode_pair(hr_sm.data[c], pattern, up)
        xs.append(lr_rgb)
        ys.append(hr_rgb)
        amps.append(amp)
    out = output_dims(pattern, up)
    truth = _fit_to(hr_sm.data[val_idx], out)
    if eval_crop is not None:
        truth = crop_array(truth, *eval_crop)
    return {"x": np.stack(xs), "y": np.stack(ys), "amp": np.asarray(amps), "truth": truth, "crop": eval_crop}


def _evaluate(model: SMRNet, val: dict) -> tuple[float, float]:
    pred = model.predict(val["x"])
    val_mse = float(np.mean((pred.astype(np.float64) - val["y"]) ** 2))
    rec = np.stack([decode_array(p, a) for p, a in zip(pred, val["amp"])])
    if val["crop"] is not None:
        rec = crop_array(rec, *val["crop"])
    return val_mse, float(nrmse_batch(rec, val["truth"]).mean())


def recover(model: SMRNet, lr_sm: SystemMatrix, crop_offset=(0, 0, 0), hr_dims=None,
            batch_size: int = 4) -> SystemMatrix:
    """HR system matrix from an LR one, component by component.

    Each component is RGB-encoded with its own peak amplitude, passed
    through the network, clamped, decoded with the same amplitude and
    cropped to ``hr_dims`` at ``crop_offset`` (default: the full output).
    """
    up = model.config.up_factor
    out_dims = tuple(n * up for n in lr_sm.dims)
    hr_dims = out_dims if hr_dims is None else tuple(hr_dims)
    if any(o + h > n for o, h, n in zip(crop_offset, hr_dims, out_dims)):
        raise ValueError(f"crop {crop_offset}+{hr_dims} exceeds network output {out_dims} "
                         f"for LR dims {lr_sm.dims} and up-factor {up}")
    result = np.empty((len(lr_sm),) + hr_dims, dtype=np.complex128)
    for start in range(0, len(lr_sm), batch_size):
        block = lr_sm.data[start:start + batch_size]
        encoded = [encode_array(v) for v in block]
        pred = model.predict(np.stack([e[0] for e in encoded]), batch_size=batch_size)
        for j, (p, (_, amp)) in enumerate(zip(pred, encoded)):
            if not np.any(block[j]):
                # nothing measured: the network's bias response is not signal
                result[start + j] = 0.0
                continue
            result[start + j] = crop_array(decode_array(p, amp), crop_offset, hr_dims)
    return lr_sm.with_data(result, recovered_by="smrnet")
