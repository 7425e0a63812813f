"""System-matrix image reconstruction with regularised Kaczmarz."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import NumericalError
from .volume import ConcentrationImage, Measurement, SystemMatrix

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconParams:
    """Kaczmarz settings.

    ``lambda_rel`` is relative to the mean squared row norm of the
    assembled system. ``shuffle`` randomises the row order per sweep with
    ``seed``; the default is sequential index order.
    """

    lambda_rel: float = 0.01
    iterations: int = 3
    snr_threshold: float = 3.0
    enforce_real_nonneg: bool = True
    shuffle: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lambda_rel < 0 or self.snr_threshold < 0:
            raise ValueError("lambda_rel and snr_threshold must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def assemble(sm: SystemMatrix, m: Measurement, snr_threshold: float = 3.0):
    """Rows of ``sm`` with SNR at or above the threshold and the matching measured entries.

    Returns ``(A, rhs, kept)`` with ``A`` of shape ``(K', N)``.
    """
    if len(m.frequencies) != len(sm) or not np.allclose(m.frequencies, sm.frequencies, rtol=1e-9, atol=0):
        raise ValueError(
            f"frequency axes differ: system matrix has {len(sm)} components, measurement {len(m.frequencies)}"
        )
    kept = np.flatnonzero(sm.snr >= snr_threshold)
    return sm.as_matrix()[kept], np.asarray(m.u_hat)[kept], kept


def effective_lambda(a: np.ndarray, lambda_rel: float) -> float:
    """``lambda_rel`` times the mean squared row norm."""
    return float(lambda_rel * np.mean(np.sum(np.abs(a) ** 2, axis=1))) if a.shape[0] else 0.0


def kaczmarz(a: np.ndarray, rhs: np.ndarray, rp: ReconParams = ReconParams()) -> np.ndarray:
    """Regularised Kaczmarz on ``a c = rhs``.

    An auxiliary residual variable ``v`` (one entry per row) turns the
    Tikhonov problem into a consistent augmented system ``[A, sqrt(l) I]``
    whose minimum-norm solution has ``c = (A^H A + l I)^-1 A^H rhs``.
    Returns the solution vector; it is real and clipped at zero when
    ``rp.enforce_real_nonneg``, complex otherwise.
    """
    a = np.asarray(a)
    rhs = np.asarray(rhs, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] == 0:
        raise ValueError("assembled system is empty")
    if rhs.shape != (a.shape[0],):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({a.shape[0]},)")
    energy = np.sum(np.abs(a) ** 2, axis=1)
    zero_rows = np.flatnonzero(energy == 0)
    if zero_rows.size:
        logger.info("skipping %d zero-norm rows", zero_rows.size)
    lam = effective_lambda(a, rp.lambda_rel)
    sq = np.sqrt(lam)
    rows = np.ascontiguousarray(a, dtype=np.complex128)
    conj_rows = rows.conj()
    c = np.zeros(a.shape[1], dtype=np.complex128)
    v = np.zeros(a.shape[0], dtype=np.complex128)
    rng = np.random.default_rng(rp.seed)
    active = np.flatnonzero(energy > 0)
    for _ in range(rp.iterations):
        order = rng.permutation(active) if rp.shuffle else active
        for k in order:
            beta = (rhs[k] - rows[k] @ c - sq * v[k]) / (energy[k] + lam)
            c += beta * conj_rows[k]
            v[k] += sq * beta
    if rp.enforce_real_nonneg:
        return np.maximum(c.real, 0.0)
    return c


def reconstruct_phantom(sm: SystemMatrix, m: Measurement, rp: ReconParams = ReconParams(),
                        variant: str = "true") -> ConcentrationImage:
    """Assemble and solve; ``variant`` names the matrix that was used (true, net, cs, ...)."""
    a, rhs, kept = assemble(sm, m, rp.snr_threshold)
    c = kaczmarz(a, rhs, rp)
    if not np.all(np.isfinite(c)):
        raise NumericalError("Kaczmarz iterate is not finite; check the system matrix and lambda_rel")
    values = c.reshape(sm.dims)
    if np.iscomplexobj(values):
        values = values.real
    meta = {"variant": variant, "rows": int(len(kept)), "lambda_eff": effective_lambda(a, rp.lambda_rel),
            "recon": rp.to_dict()}
    return ConcentrationImage(values, meta)
