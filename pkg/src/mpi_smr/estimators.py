"""scikit-learn style wrappers: subsampling, network and CS recovery, reconstruction.

Hyperparameters live in ``__init__`` (so ``get_params``/``set_params`` and
``clone`` work); learned state gets a trailing underscore after ``fit``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cs import CsParams, recover_cs
from .recon import ReconParams, reconstruct_phantom
from .sampling import SamplingPattern, apply_pattern, gather_lr_volume, poisson_pattern, regular_pattern
from .smrnet.model import ModelConfig, build_model
from .smrnet.train import TrainConfig, recover, train
from .volume import ConcentrationImage, Measurement, SystemMatrix


def check_system_matrix(x, name: str = "X") -> SystemMatrix:
    if not isinstance(x, SystemMatrix):
        raise TypeError(f"{name} must be a SystemMatrix, got {type(x).__name__}")
    if len(x) == 0:
        raise ValueError(f"{name} has no components")
    return x


def _regular_stride(factor: int) -> int:
    stride = round(factor ** (1 / 3))
    if stride**3 != factor:
        raise ValueError(f"regular subsampling factor must be a cube (8, 27, 64), got {factor}")
    return stride


class Subsampler(BaseEstimator, TransformerMixin):
    """Builds a sampling pattern for the fitted grid and applies it.

    ``kind="regular"`` keeps every ``factor**(1/3)``-th voxel per axis and
    ``transform`` returns the LR :class:`SystemMatrix`; ``kind="poisson"``
    draws ``N // factor`` Poisson-disc samples and ``transform`` returns the
    ``(K, count)`` sampled values.
    """

    def __init__(self, kind: str = "regular", factor: int = 8, offset=(0, 0, 0), seed: int = 0):
        self.kind = kind
        self.factor = factor
        self.offset = offset
        self.seed = seed

    def fit(self, X, y=None):
        sm = check_system_matrix(X)
        if self.kind == "regular":
            self.pattern_ = regular_pattern(sm.dims, _regular_stride(self.factor), self.offset)
        elif self.kind == "poisson":
            self.pattern_ = poisson_pattern(sm.dims, sm.n_voxels // self.factor, self.seed)
        else:
            raise ValueError(f"kind must be 'regular' or 'poisson', got {self.kind!r}")
        return self

    def transform(self, X):
        check_is_fitted(self, "pattern_")
        sm = check_system_matrix(X)
        if self.pattern_.kind == "regular":
            return sm.with_data(gather_lr_volume(sm.data, self.pattern_), subsampled=self.pattern_.params)
        return apply_pattern(sm.data, self.pattern_)


class SMRNetRecovery(BaseEstimator):
    """Residual-dense network mapping regularly subsampled components to full resolution.

    ``fit`` takes the HR training matrix (already on the padded grid) and
    trains on pairs derived with a regular pattern of ``stride``/``offset``;
    ``predict`` takes an LR matrix and returns the HR estimate cropped to
    ``hr_dims`` at ``crop_offset`` (the whole output when ``hr_dims`` is None).
    """

    def __init__(self, stride: int = 2, offset=(0, 0, 0), n_rrdb: int = 2, nf: int = 16, gc: int = 8,
                 n_up: int = 1, up_factor_per_block: int = 2, iterations: int = 2000, minibatch: int = 4,
                 lr0: float = 1e-3, lr_halve_every: int = 500, patch: int | None = 6, augment: bool = True,
                 val_fraction: float = 0.1, val_every: int = 250, seed: int = 0,
                 crop_offset=(0, 0, 0), hr_dims=None, dtype: str = "float32"):
        self.stride = stride
        self.offset = offset
        self.n_rrdb = n_rrdb
        self.nf = nf
        self.gc = gc
        self.n_up = n_up
        self.up_factor_per_block = up_factor_per_block
        self.iterations = iterations
        self.minibatch = minibatch
        self.lr0 = lr0
        self.lr_halve_every = lr_halve_every
        self.patch = patch
        self.augment = augment
        self.val_fraction = val_fraction
        self.val_every = val_every
        self.seed = seed
        self.crop_offset = crop_offset
        self.hr_dims = hr_dims
        self.dtype = dtype

    def model_config(self) -> ModelConfig:
        return ModelConfig(n_rrdb=self.n_rrdb, n_up=self.n_up, up_factor_per_block=self.up_factor_per_block,
                           nf=self.nf, gc=self.gc)

    def train_config(self) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, minibatch=self.minibatch, lr0=self.lr0,
                           lr_halve_every=self.lr_halve_every, seed=self.seed, augment=self.augment,
                           patch=self.patch, val_every=self.val_every, val_fraction=self.val_fraction)

    def fit(self, X, y=None, val_indices=None):
        sm = check_system_matrix(X)
        cfg = self.model_config()
        self.pattern_ = regular_pattern(sm.dims, self.stride, self.offset)
        model = build_model(cfg, seed=self.seed, dtype=np.dtype(self.dtype))
        eval_crop = None if self.hr_dims is None else (tuple(self.crop_offset), tuple(self.hr_dims))
        result = train(model, sm, self.pattern_, self.train_config(), val_indices=val_indices, eval_crop=eval_crop)
        self.model_ = result.model
        self.history_ = result.history
        self.train_indices_ = result.train_indices
        self.val_indices_ = result.val_indices
        self.best_iteration_ = result.best_iteration
        self.optimizer_state_ = result.optimizer_state
        return self

    def predict(self, X) -> SystemMatrix:
        check_is_fitted(self, "model_")
        sm = check_system_matrix(X)
        return recover(self.model_, sm, crop_offset=tuple(self.crop_offset), hr_dims=self.hr_dims)

    @classmethod
    def from_model(cls, model, **params) -> "SMRNetRecovery":
        """Wrap an already trained network (e.g. loaded from a checkpoint)."""
        cfg = model.config
        est = cls(n_rrdb=cfg.n_rrdb, nf=cfg.nf, gc=cfg.gc, n_up=cfg.n_up,
                  up_factor_per_block=cfg.up_factor_per_block, **params)
        est.model_ = model
        return est


class CompressedSensingRecovery(BaseEstimator):
    """Per-component DCT-sparse recovery from Poisson-disc samples.

    ``fit`` draws the pattern for the grid of ``X``; ``predict`` takes
    either the ``(K, count)`` sampled values together with ``template``
    (a matrix providing frequencies/SNR/grid) or a full HR matrix, which is
    sampled first.
    """

    def __init__(self, factor: int = 8, seed: int = 0, mu: float = 10.0, outer_iters: int = 30,
                 inner_iters: int = 5, shrink_weight: float = 1.0, tol: float = 1e-6, jobs: int = 1):
        self.factor = factor
        self.seed = seed
        self.mu = mu
        self.outer_iters = outer_iters
        self.inner_iters = inner_iters
        self.shrink_weight = shrink_weight
        self.tol = tol
        self.jobs = jobs

    def cs_params(self) -> CsParams:
        return CsParams(mu=self.mu, outer_iters=self.outer_iters, inner_iters=self.inner_iters,
                        shrink_weight=self.shrink_weight, tol=self.tol)

    def fit(self, X, y=None, pattern: SamplingPattern | None = None):
        sm = check_system_matrix(X)
        self.pattern_ = pattern if pattern is not None else poisson_pattern(sm.dims, sm.n_voxels // self.factor,
                                                                             self.seed)
        self.cs_params()  # validate
        return self

    def predict(self, X, template: SystemMatrix | None = None) -> SystemMatrix:
        check_is_fitted(self, "pattern_")
        if isinstance(X, SystemMatrix):
            out, self.diagnostics_ = recover_cs(X, self.pattern_, self.cs_params(), jobs=self.jobs)
            return out
        if template is None:
            raise ValueError("sampled values need a template SystemMatrix for grid and frequencies")
        out, self.diagnostics_ = recover_cs(template, self.pattern_, self.cs_params(), jobs=self.jobs,
                                            measured=np.asarray(X))
        return out


class KaczmarzReconstructor(BaseEstimator):
    """Image reconstruction against a fitted system matrix."""

    def __init__(self, lambda_rel: float = 0.01, iterations: int = 3, snr_threshold: float = 3.0,
                 enforce_real_nonneg: bool = True, variant: str = "true"):
        self.lambda_rel = lambda_rel
        self.iterations = iterations
        self.snr_threshold = snr_threshold
        self.enforce_real_nonneg = enforce_real_nonneg
        self.variant = variant

    def recon_params(self) -> ReconParams:
        return ReconParams(lambda_rel=self.lambda_rel, iterations=self.iterations,
                           snr_threshold=self.snr_threshold, enforce_real_nonneg=self.enforce_real_nonneg)

    def fit(self, X, y=None):
        self.system_matrix_ = check_system_matrix(X)
        self.recon_params()
        return self

    def predict(self, X) -> ConcentrationImage:
        check_is_fitted(self, "system_matrix_")
        if not isinstance(X, Measurement):
            raise TypeError(f"X must be a Measurement, got {type(X).__name__}")
        return reconstruct_phantom(self.system_matrix_, X, self.recon_params(), self.variant)
