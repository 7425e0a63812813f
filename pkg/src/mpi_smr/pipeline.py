"""Desk-scale synthetic experiment: network vs trilinear, CS vs zero filling, image reconstruction.

Everything is derived from a :class:`DeskConfig` and its seed, so two runs
with the same configuration write identical metric files.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cs import CsParams, recover_cs
from .metrics import format_table, image_metrics, nrmse_batch, table_summary, write_csv, write_table_json
from .recon import ReconParams, reconstruct_phantom
from .sampling import apply_pattern, gather_lr_volume, poisson_pattern, regular_pattern, trilinear_upsample, zero_filled
from .simgen import ScannerConfig, add_noise, make_phantom, simulate_measurement, simulate_system_matrix
from .smrnet.model import ModelConfig, build_model
from .smrnet.train import TrainConfig, recover, split_components, train
from .volume import SystemMatrix

logger = logging.getLogger(__name__)

PHANTOMS = ("shape", "resolution", "concentration")


@dataclass(frozen=True)
class DeskConfig:
    """All knobs of the synthetic experiment.

    ``noise_rel`` sets the calibration noise RMS relative to the strongest
    component's RMS. Components with SNR below ``snr_threshold`` are dropped
    and the ``k_max`` strongest of the rest are kept. ``reference`` selects
    the ground truth for component NRMSE: ``"clean"`` (noise-free simulation)
    or ``"measured"`` (the noisy calibration itself).
    """

    dims: tuple[int, int, int] = (32, 32, 32)
    noise_rel: float = 0.003
    snr_threshold: float = 3.0
    k_max: int = 256
    seed: int = 0
    factor: int = 8
    reference: str = "clean"
    # network
    n_rrdb: int = 2
    nf: int = 16
    gc: int = 8
    iterations: int = 2000
    minibatch: int = 4
    lr0: float = 1e-3
    lr_halve_every: int = 1000
    patch: int | None = 6
    augment: bool = False
    val_fraction: float = 0.1
    val_every: int = 250
    # compressed sensing
    cs_mu: float = 10.0
    cs_outer_iters: int = 30
    cs_inner_iters: int = 5
    cs_shrink_weight: float = 1.0
    cs_tol: float = 1e-6
    cs_all_components: bool = True
    # reconstruction
    lambda_rel: float = 0.01
    recon_iterations: int = 3
    measurement_noise_rel: float = 0.001
    phantoms: tuple[str, ...] = PHANTOMS
    scanner: ScannerConfig = field(default_factory=ScannerConfig)

    def __post_init__(self):
        if self.reference not in ("clean", "measured"):
            raise ValueError(f"reference must be 'clean' or 'measured', got {self.reference!r}")
        if self.noise_rel < 0 or self.measurement_noise_rel < 0:
            raise ValueError("noise levels must be non-negative")
        if self.k_max < 2:
            raise ValueError("k_max must be at least 2 (train and validation)")
        stride = round(self.factor ** (1 / 3))
        if stride**3 != self.factor:
            raise ValueError(f"factor must be a cube, got {self.factor}")
        if len(set(self.dims)) != 1 and self.augment:
            raise ValueError("augmentation needs a cubic grid")
        unknown = set(self.phantoms) - set(PHANTOMS)
        if unknown:
            raise ValueError(f"unknown phantoms {sorted(unknown)}")

    @property
    def stride(self) -> int:
        return round(self.factor ** (1 / 3))

    def model_config(self) -> ModelConfig:
        return ModelConfig(n_rrdb=self.n_rrdb, nf=self.nf, gc=self.gc)

    def train_config(self) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, minibatch=self.minibatch, lr0=self.lr0,
                           lr_halve_every=self.lr_halve_every, seed=self.seed, augment=self.augment,
                           patch=self.patch, val_every=self.val_every, val_fraction=self.val_fraction)

    def cs_params(self) -> CsParams:
        return CsParams(mu=self.cs_mu, outer_iters=self.cs_outer_iters, inner_iters=self.cs_inner_iters,
                        shrink_weight=self.cs_shrink_weight, tol=self.cs_tol)

    def recon_params(self) -> ReconParams:
        return ReconParams(lambda_rel=self.lambda_rel, iterations=self.recon_iterations,
                           snr_threshold=self.snr_threshold)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DeskConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown desk settings {sorted(unknown)}")
        d = dict(d)
        if "scanner" in d and isinstance(d["scanner"], dict):
            d["scanner"] = ScannerConfig(**{k: tuple(v) if isinstance(v, list) else v
                                            for k, v in d["scanner"].items()})
        for key in ("dims", "phantoms"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class DeskResult:
    criteria: dict
    timings: dict
    files: dict
    notes: list[str] = field(default_factory=list)


def simulate_desk_matrices(cfg: DeskConfig) -> tuple[SystemMatrix, SystemMatrix]:
    """(clean, measured) matrices restricted to the kept components."""
    clean = simulate_system_matrix(cfg.scanner, cfg.dims)
    rms = np.sqrt(np.mean(np.abs(clean.as_matrix()) ** 2, axis=1))
    noise = cfg.noise_rel * float(rms.max())
    measured = add_noise(clean, noise, cfg.seed) if noise > 0 else clean
    keep = np.flatnonzero(measured.snr >= cfg.snr_threshold)
    keep = np.sort(keep[np.argsort(-measured.snr[keep], kind="stable")][:cfg.k_max])
    logger.info("kept %d of %d components (SNR >= %g, k_max %d)", keep.size, len(clean), cfg.snr_threshold,
                cfg.k_max)
    if keep.size < 2:
        raise ValueError(f"only {keep.size} components pass SNR {cfg.snr_threshold}; lower the noise")
    meta = {"noise_rms": noise}
    clean_sel = clean.select(keep)
    clean_sel = clean_sel.with_data(clean_sel.data, **meta)
    measured_sel = measured.select(keep)
    return clean_sel, measured_sel.with_data(measured_sel.data, **meta)


def phantom_measurement(clean: SystemMatrix, kind: str, noise_rel: float, seed: int):
    """Phantom and its simulated measurement with white noise at ``noise_rel`` of the signal RMS."""
    phantom = make_phantom(kind, clean.dims)
    u = simulate_measurement(clean, phantom)
    noise = noise_rel * float(np.sqrt(np.mean(np.abs(u.u_hat) ** 2)))
    return phantom, simulate_measurement(clean, phantom, noise, seed=seed)


def _component_rows(k_idx, sm: SystemMatrix, errors: dict[str, np.ndarray]) -> list[dict]:
    rows = []
    for j, k in enumerate(k_idx):
        row = {"k": int(k), "frequency": float(sm.frequencies[k]), "snr": float(sm.snr[k])}
        for name, err in errors.items():
            row[name] = float(err[j])
        rows.append(row)
    return rows


def run_desk(cfg: DeskConfig, out_dir, jobs: int = 1) -> DeskResult:
    """Run the whole experiment and write its artefacts into ``out_dir``.

    Files: ``components_net.csv`` (validation components, network vs
    trilinear), ``components_cs.csv`` (CS vs zero filling), ``images.csv``
    (long-format image metrics), ``training.csv``, ``table.json``,
    ``table.txt`` and ``summary.json`` (criteria and wall-clock timings).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    notes: list[str] = []

    t0 = time.perf_counter()
    clean, measured = simulate_desk_matrices(cfg)
    reference = clean if cfg.reference == "clean" else measured
    timings["simulate"] = time.perf_counter() - t0

    # network: train on the measured calibration, evaluate held-out components
    t0 = time.perf_counter()
    pattern = regular_pattern(cfg.dims, cfg.stride)
    model = build_model(cfg.model_config(), seed=cfg.seed)
    _, val_idx = split_components(len(measured), cfg.val_fraction, cfg.seed)
    result = train(model, measured, pattern, cfg.train_config(), val_indices=val_idx)
    notes.extend(result.notes)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lr_all = measured.with_data(gather_lr_volume(measured.data, pattern))
    net_sm = recover(model, lr_all, hr_dims=cfg.dims)
    timings["recover_net"] = time.perf_counter() - t0
    tri = np.stack([trilinear_upsample(v, cfg.dims) for v in lr_all.data[val_idx]])
    ref_val = reference.data[val_idx]
    err_net = nrmse_batch(net_sm.data[val_idx], ref_val)
    err_tri = nrmse_batch(tri, ref_val)
    write_csv(_component_rows(val_idx, measured, {"nrmse_net": err_net, "nrmse_trilinear": err_tri}),
              out / "components_net.csv")
    write_csv(result.history, out / "training.csv")

    # compressed sensing from Poisson-disc samples
    t0 = time.perf_counter()
    ppat = poisson_pattern(cfg.dims, int(np.prod(cfg.dims)) // cfg.factor, cfg.seed)
    cs_idx = np.arange(len(measured)) if cfg.cs_all_components else val_idx
    cs_sm, cs_rows = recover_cs(measured.select(cs_idx), ppat, cfg.cs_params(), jobs=jobs)
    timings["recover_cs"] = time.perf_counter() - t0
    pos = np.searchsorted(cs_idx, val_idx)
    samples = apply_pattern(measured.data[val_idx], ppat)
    zf = np.stack([zero_filled(s, ppat) for s in samples])
    err_cs = nrmse_batch(cs_sm.data[pos], ref_val)
    err_zf = nrmse_batch(zf, ref_val)
    write_csv(_component_rows(val_idx, measured, {"nrmse_cs": err_cs, "nrmse_zero_filled": err_zf}),
              out / "components_cs.csv")
    unconverged = sum(not r["converged"] for r in cs_rows)
    if unconverged:
        notes.append(f"{unconverged} of {len(cs_rows)} CS components stopped at the outer-iteration cap")

    # image reconstruction: true calibration vs recovered matrices
    t0 = time.perf_counter()
    rp = cfg.recon_params()
    matrices = {"true": measured, "SMRnet": net_sm}
    if cfg.cs_all_components:
        matrices["CS"] = cs_sm
    image_rows = []
    ratios = {}
    for i, kind in enumerate(cfg.phantoms):
        phantom, m = phantom_measurement(clean, kind, cfg.measurement_noise_rel, cfg.seed * 1000 + i)
        errs = {}
        for name, sm in matrices.items():
            img = reconstruct_phantom(sm, m, rp, variant=name)
            for row in image_metrics(img, phantom, kind):
                image_rows.append({"method": name, "phantom": kind, "metric": row.metric, "value": row.value})
                if row.metric == "NRMSE":
                    errs[name] = row.value
        ratios[kind] = errs["SMRnet"] / errs["true"] if errs["true"] > 0 else float("inf")
    timings["reconstruct"] = time.perf_counter() - t0
    write_csv(image_rows, out / "images.csv")
    table = table_summary(image_rows)
    write_table_json(table, out / "table.json")
    (out / "table.txt").write_text(format_table(table) + "\n")

    criteria = {
        "net_better_fraction": float(np.mean(err_net < err_tri)),
        "net_mean_nrmse": float(err_net.mean()),
        "trilinear_mean_nrmse": float(err_tri.mean()),
        "cs_mean_nrmse": float(err_cs.mean()),
        "zero_filled_mean_nrmse": float(err_zf.mean()),
        "cs_to_zero_filled": float(err_cs.mean() / err_zf.mean()),
        "image_nrmse_ratio": ratios,
        "image_nrmse_ratio_max": float(max(ratios.values())) if ratios else float("nan"),
        "components": int(len(measured)),
        "validation_components": int(len(val_idx)),
        "best_iteration": int(result.best_iteration),
    }
    timings["total"] = float(sum(timings.values()))
    files = {name: str(out / name) for name in ("components_net.csv", "components_cs.csv", "images.csv",
                                                   "training.csv", "table.json", "table.txt")}
    summary = {"config": cfg.to_dict(), "criteria": criteria, "timings": timings, "notes": notes}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_jsonable))
    files["summary.json"] = str(out / "summary.json")
    return DeskResult(criteria, timings, files, notes)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serialisable: {type(v).__name__}")


METRIC_FILES = ("components_net.csv", "components_cs.csv", "images.csv", "training.csv")
