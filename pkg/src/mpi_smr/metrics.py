"""NRMSE / PSNR / SSIM and the per-component and per-phantom reports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from .volume import ComplexVolume, ConcentrationImage, SystemMatrix

logger = logging.getLogger(__name__)

NORMALIZERS = ("max", "range", "rms")


@dataclass(frozen=True)
class MetricRow:
    subject: str
    metric: str
    value: float


def _as_array(x) -> np.ndarray:
    if isinstance(x, ComplexVolume):
        return x.data
    if isinstance(x, ConcentrationImage):
        return x.values
    return np.asarray(x)


def nrmse(est, ref, normalizer: str = "max") -> float:
    """RMS of ``|est - ref|`` over a reference scale (``max |ref|`` by default)."""
    e, r = _as_array(est), _as_array(ref)
    if e.shape != r.shape:
        raise ValueError(f"shape mismatch {e.shape} vs {r.shape}")
    if normalizer == "max":
        norm = np.abs(r).max()
    elif normalizer == "range":
        norm = np.abs(r).max() - np.abs(r).min() if np.iscomplexobj(r) else r.max() - r.min()
    elif normalizer == "rms":
        norm = np.sqrt(np.mean(np.abs(r) ** 2))
    else:
        raise ValueError(f"normalizer must be one of {NORMALIZERS}")
    if norm == 0:
        raise ValueError("reference is all zero; NRMSE undefined")
    return float(np.sqrt(np.mean(np.abs(e - r) ** 2)) / norm)


def nrmse_batch(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Max-normalised NRMSE for every leading index of ``(K, ...)`` arrays."""
    k = ref.shape[0]
    e, r = est.reshape(k, -1), ref.reshape(k, -1)
    norm = np.abs(r).max(axis=1)
    if np.any(norm == 0):
        raise ValueError("a reference component is all zero; NRMSE undefined")
    return np.sqrt(np.mean(np.abs(e - r) ** 2, axis=1)) / norm


def psnr(est, ref) -> float:
    """10 log10(peak^2 / MSE) with ``peak = max |ref|``; ``inf`` when identical."""
    e, r = _as_array(est), _as_array(ref)
    if e.shape != r.shape:
        raise ValueError(f"shape mismatch {e.shape} vs {r.shape}")
    mse = float(np.mean(np.abs(e - r) ** 2))
    if mse == 0:
        return float("inf")
    peak = float(np.abs(r).max())
    return float(10.0 * np.log10(peak**2 / mse))


def ssim3d(est, ref, win_size: int = 7, k1: float = 0.01, k2: float = 0.03,
           data_range: float | None = None, mode: str = "volume") -> float:
    """Mean local SSIM with a uniform window.

    ``mode="volume"`` uses a ``win_size``^3 window over the whole volume;
    ``mode="slice"`` averages 2D SSIM over z-slices. Local statistics are
    population (not sample) moments; the mean excludes the half-window
    border, where the filter would see reflected data.
    """
    e = np.asarray(_as_array(est), dtype=np.float64)
    r = np.asarray(_as_array(ref), dtype=np.float64)
    if e.shape != r.shape:
        raise ValueError(f"shape mismatch {e.shape} vs {r.shape}")
    if data_range is None:
        data_range = float(np.abs(r).max())
    if mode == "slice":
        return float(np.mean([ssim3d(e[z][None], r[z][None], win_size, k1, k2, data_range, "plane")
                              for z in range(r.shape[0])]))
    if mode == "plane":
        window = (1,) + (_fit_window(win_size, r.shape[1:]),) * 2
    elif mode == "volume":
        window = (_fit_window(win_size, r.shape),) * 3
    else:
        raise ValueError("mode must be 'volume' or 'slice'")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    filt = lambda a: ndimage.uniform_filter(a, size=window, mode="reflect")  # noqa: E731
    mu_e, mu_r = filt(e), filt(r)
    var_e = filt(e * e) - mu_e**2
    var_r = filt(r * r) - mu_r**2
    cov = filt(e * r) - mu_e * mu_r
    num = (2 * mu_e * mu_r + c1) * (2 * cov + c2)
    den = (mu_e**2 + mu_r**2 + c1) * (var_e + var_r + c2)
    smap = num / den
    crop = tuple(slice(w // 2, n - w // 2) for w, n in zip(window, r.shape))
    return float(smap[crop].mean())


def _fit_window(win_size: int, shape) -> int:
    smallest = min(shape)
    if smallest >= win_size:
        return win_size
    shrunk = smallest if smallest % 2 else smallest - 1
    logger.info("volume dims %s smaller than SSIM window %d; using %d", tuple(shape), win_size, shrunk)
    return max(shrunk, 1)


def component_report(recovered: SystemMatrix, truth: SystemMatrix) -> list[dict]:
    """One row per component ``(k, frequency, snr, nrmse)`` plus a ``mean`` summary row."""
    if len(recovered) != len(truth) or recovered.dims != truth.dims:
        raise ValueError(
            f"recovered ({len(recovered)}, {recovered.dims}) and truth ({len(truth)}, {truth.dims}) differ"
        )
    errs = nrmse_batch(recovered.data, truth.data)
    rows = [
        {"k": k, "frequency": float(truth.frequencies[k]), "snr": float(truth.snr[k]), "nrmse": float(e)}
        for k, e in enumerate(errs)
    ]
    rows.append({"k": "mean", "frequency": "", "snr": "", "nrmse": float(errs.mean()) if errs.size else float("nan")})
    return rows


def image_metrics(est, ref, subject: str, ssim_mode: str = "volume") -> list[MetricRow]:
    return [
        MetricRow(subject, "NRMSE", nrmse(est, ref)),
        MetricRow(subject, "SSIM", ssim3d(est, ref, mode=ssim_mode)),
        MetricRow(subject, "PSNR", psnr(est, ref)),
    ]


def write_csv(rows: Iterable[dict], path) -> Path:
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def table_summary(rows: Iterable[dict]) -> dict:
    """Nest ``{method: {phantom: {metric: value}}}`` rows and add per-method averages.

    Input rows carry ``method``, ``phantom``, ``metric`` and ``value`` keys;
    the output mirrors a methods-by-phantoms table with an ``Avg.`` column.
    """
    table: dict = {}
    for row in rows:
        m = table.setdefault(row["method"], {})
        m.setdefault(row["phantom"], {})[row["metric"]] = float(row["value"])
    for method, phantoms in table.items():
        metrics = sorted({name for values in phantoms.values() for name in values})
        phantoms["Avg."] = {
            name: float(np.mean([v[name] for p, v in phantoms.items() if p != "Avg." and name in v]))
            for name in metrics
        }
    return table


def write_table_json(table: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(table, indent=2, sort_keys=True, default=_json_float))
    return path


def _json_float(v):
    return float(v)


def format_table(table: dict, metrics=("NRMSE", "SSIM", "PSNR")) -> str:
    """Plain-text rendering: one row per method, metric triples per phantom."""
    phantoms = []
    for values in table.values():
        for p in values:
            if p not in phantoms and p != "Avg.":
                phantoms.append(p)
    phantoms.append("Avg.")
    header = ["method"] + [f"{p}:{m}" for p in phantoms for m in metrics]
    lines = ["\t".join(header)]
    for method, values in table.items():
        cells = [method]
        for p in phantoms:
            for m in metrics:
                v = values.get(p, {}).get(m)
                cells.append("" if v is None else f"{v:.4f}" if m != "PSNR" else f"{v:.2f}")
        lines.append("\t".join(cells))
    return "\n".join(lines)
