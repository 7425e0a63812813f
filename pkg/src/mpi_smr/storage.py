"""HDF5 containers for matrices, images, measurements and checkpoints, plus the MDF v2 reader."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import h5py
import numpy as np

from .errors import DataError
from .nn import AdamState
from .smrnet.model import ModelCheckpoint, ModelConfig
from .volume import AXIS_ORDER, ConcentrationImage, Measurement, SystemMatrix, estimate_snr

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def _to_pairs(z: np.ndarray, dtype) -> np.ndarray:
    out = np.empty(z.shape + (2,), dtype=dtype)
    out[..., 0] = z.real
    out[..., 1] = z.imag
    return out


def _from_pairs(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[..., 0] + 1j * a[..., 1]


def _write_meta(group: h5py.Group, meta: dict) -> None:
    group.attrs["json"] = json.dumps(meta, default=_json_default, sort_keys=True)
    for key, value in meta.items():
        if isinstance(value, (str, int, float, bool)):
            group.attrs[key] = value


def _read_meta(group: h5py.Group) -> dict:
    text = group.attrs.get("json")
    return json.loads(text) if text is not None else {k: _plain(v) for k, v in group.attrs.items()}


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, tuple):
        return list(v)
    raise TypeError(f"cannot serialise {type(v).__name__} into metadata")


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


def _open(path, mode="r") -> h5py.File:
    try:
        return h5py.File(path, mode)
    except (OSError, KeyError) as exc:
        raise DataError(f"cannot open HDF5 file {path}: {exc}") from exc


def save_system_matrix(sm: SystemMatrix, path, precision: str = "float32") -> Path:
    """Write ``sm`` as ``/systemmatrix/{data, frequencies, snr, dims, spacing}`` plus ``/meta``.

    ``data`` is ``(K, z, y, x, 2)`` real/imaginary pairs in ``precision``
    (``float32`` on disk by default, ``float64`` for lossless storage).
    """
    if precision not in ("float32", "float64"):
        raise ValueError("precision must be float32 or float64")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _open(path, "w") as f:
        f.attrs["format"] = "mpi_smr.systemmatrix"
        f.attrs["version"] = FORMAT_VERSION
        g = f.create_group("systemmatrix")
        g.attrs["axis_order"] = AXIS_ORDER
        g.create_dataset("data", data=_to_pairs(sm.data, precision))
        g.create_dataset("frequencies", data=sm.frequencies)
        g.create_dataset("snr", data=sm.snr)
        g.create_dataset("dims", data=np.asarray(sm.dims, dtype=np.int64))
        spacing = np.full(3, np.nan) if sm.voxel_spacing is None else np.asarray(sm.voxel_spacing)
        g.create_dataset("spacing", data=spacing)
        _write_meta(f.create_group("meta"), sm.meta)
    return path


def load_system_matrix(path) -> SystemMatrix:
    with _open(path) as f:
        if "systemmatrix" not in f:
            raise DataError(f"{path} has no /systemmatrix group")
        g = f["systemmatrix"]
        missing = [k for k in ("data", "frequencies", "snr", "dims") if k not in g]
        if missing:
            raise DataError(f"{path}: /systemmatrix lacks {', '.join(missing)}")
        order = g.attrs.get("axis_order", AXIS_ORDER)
        if order != AXIS_ORDER:
            raise DataError(f"{path}: axis order {order!r} is not {AXIS_ORDER!r}")
        data = _from_pairs(g["data"][()])
        dims = tuple(int(n) for n in g["dims"][()])
        if data.shape[1:] != dims:
            raise DataError(f"{path}: data shape {data.shape[1:]} disagrees with dims {dims}")
        spacing = g["spacing"][()] if "spacing" in g else np.full(3, np.nan)
        spacing = None if np.any(np.isnan(spacing)) else tuple(float(s) for s in spacing)
        meta = _read_meta(f["meta"]) if "meta" in f else {}
        return SystemMatrix(data, g["frequencies"][()], g["snr"][()], meta, spacing)


def save_image(img: ConcentrationImage, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _open(path, "w") as f:
        f.attrs["format"] = "mpi_smr.image"
        g = f.create_group("image")
        g.attrs["axis_order"] = AXIS_ORDER
        g.create_dataset("values", data=img.values)
        _write_meta(f.create_group("meta"), img.meta)
    return path


def load_image(path) -> ConcentrationImage:
    with _open(path) as f:
        if "image" not in f or "values" not in f["image"]:
            raise DataError(f"{path} has no /image/values dataset")
        meta = _read_meta(f["meta"]) if "meta" in f else {}
        return ConcentrationImage(f["image/values"][()], meta)


def save_measurement(m: Measurement, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _open(path, "w") as f:
        f.attrs["format"] = "mpi_smr.measurement"
        g = f.create_group("measurement")
        g.create_dataset("u_hat", data=_to_pairs(m.u_hat, np.float64))
        g.create_dataset("frequencies", data=m.frequencies)
        _write_meta(f.create_group("meta"), meta or {})
    return path


def load_measurement(path) -> Measurement:
    with _open(path) as f:
        if "measurement/u_hat" not in f:
            raise DataError(f"{path} has no /measurement/u_hat dataset")
        return Measurement(_from_pairs(f["measurement/u_hat"][()]), f["measurement/frequencies"][()])


def save_samples(values: np.ndarray, template: SystemMatrix, pattern_json: str, path) -> Path:
    """Scattered samples ``(K, count)`` with the frequencies/SNR of ``template`` and the pattern JSON."""
    values = np.asarray(values, dtype=np.complex128)
    if values.shape[0] != len(template):
        raise ValueError(f"{values.shape[0]} sample rows for {len(template)} components")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _open(path, "w") as f:
        f.attrs["format"] = "mpi_smr.samples"
        g = f.create_group("samples")
        g.create_dataset("values", data=_to_pairs(values, np.float64))
        g.create_dataset("frequencies", data=template.frequencies)
        g.create_dataset("snr", data=template.snr)
        g.create_dataset("dims", data=np.asarray(template.dims, dtype=np.int64))
        g.attrs["pattern"] = pattern_json
        _write_meta(f.create_group("meta"), template.meta)
    return path


def load_samples(path) -> tuple[np.ndarray, SystemMatrix, str]:
    """``(values, template, pattern_json)``; the template carries zero data on the full grid."""
    with _open(path) as f:
        if "samples/values" not in f:
            raise DataError(f"{path} has no /samples/values dataset")
        g = f["samples"]
        values = _from_pairs(g["values"][()])
        dims = tuple(int(n) for n in g["dims"][()])
        meta = _read_meta(f["meta"]) if "meta" in f else {}
        template = SystemMatrix(np.zeros((values.shape[0],) + dims, np.complex128), g["frequencies"][()],
                                g["snr"][()], meta)
        return values, template, str(g.attrs["pattern"])


def save_checkpoint(ckpt: ModelCheckpoint, path) -> Path:
    """``/config`` attributes, ``/params/<name>``, ``/adam`` moments, ``/meta``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _open(path, "w") as f:
        f.attrs["format"] = "mpi_smr.checkpoint"
        cfg = f.create_group("config")
        for key, value in vars(ckpt.config).items():
            cfg.attrs[key] = value
        params = f.create_group("params")
        for name, arr in ckpt.parameters.items():
            params.create_dataset(name, data=arr)
        if ckpt.adam is not None:
            a = f.create_group("adam")
            for key in ("lr", "beta1", "beta2", "eps", "t"):
                a.attrs[key] = getattr(ckpt.adam, key)
            for moment in ("m", "v"):
                mg = a.create_group(moment)
                for name, arr in getattr(ckpt.adam, moment).items():
                    mg.create_dataset(name, data=arr)
        meta = f.create_group("meta")
        meta.attrs["iteration"] = ckpt.iteration
        meta.attrs["codec"] = ckpt.codec_meta
        _write_meta(meta, ckpt.meta)
    return path


def load_checkpoint(path) -> ModelCheckpoint:
    with _open(path) as f:
        missing = [k for k in ("config", "params", "meta") if k not in f]
        if missing:
            raise DataError(f"{path}: checkpoint lacks /{', /'.join(missing)}")
        cfg = ModelConfig(**{k: _plain(v) for k, v in f["config"].attrs.items()})
        params = {name: ds[()] for name, ds in _walk(f["params"])}
        adam = None
        if "adam" in f:
            a = f["adam"]
            adam = AdamState(**{k: _plain(a.attrs[k]) for k in ("lr", "beta1", "beta2", "eps", "t")})
            adam.m = {name: ds[()] for name, ds in _walk(a["m"])}
            adam.v = {name: ds[()] for name, ds in _walk(a["v"])}
        meta_group = f["meta"]
        return ModelCheckpoint(cfg, params, adam, int(meta_group.attrs["iteration"]),
                               str(meta_group.attrs["codec"]), _read_meta(meta_group))


def _walk(group: h5py.Group, prefix: str = ""):
    """Datasets below ``group`` with '/'-free dotted names (h5py nests names containing '/')."""
    for key, item in group.items():
        name = f"{prefix}{key}"
        if isinstance(item, h5py.Dataset):
            yield name, item
        else:
            yield from _walk(item, name + "/")


# ---- MDF v2 ----

_MDF_SM_FIELDS = (
    "measurement/data",
    "measurement/isBackgroundFrame",
    "calibration/size",
    "acquisition/receiver/bandwidth",
    "acquisition/receiver/numSamplingPoints",
)
_MDF_MEAS_FIELDS = (
    "measurement/data",
    "acquisition/receiver/bandwidth",
    "acquisition/receiver/numSamplingPoints",
)


def _mdf_complex(ds) -> np.ndarray:
    a = ds[()]
    if a.dtype.names:
        names = a.dtype.names
        re, im = ("r", "i") if "r" in names else names[:2]
        return a[re].astype(np.float64) + 1j * a[im].astype(np.float64)
    if np.iscomplexobj(a):
        return a.astype(np.complex128)
    if a.shape[-1] == 2:
        return _from_pairs(a)
    return a.astype(np.complex128)


def _flag(f, key: str) -> bool:
    return bool(np.asarray(f[key][()]).item()) if key in f else False


def _mdf_frequencies(f, n_freq: int) -> np.ndarray:
    bandwidth = float(np.asarray(f["acquisition/receiver/bandwidth"][()]).item())
    v = int(np.asarray(f["acquisition/receiver/numSamplingPoints"][()]).item())
    full = np.arange(v // 2 + 1) * (2.0 * bandwidth / v)
    if _flag(f, "measurement/isFrequencySelection"):
        sel = np.asarray(f["measurement/frequencySelection"][()], dtype=np.int64) - 1
        full = full[sel]
    if full.size != n_freq:
        raise DataError(f"MDF frequency axis has {full.size} entries but data has {n_freq}")
    return full


def _check_fields(f, path, fields) -> None:
    missing = [k for k in fields if k not in f]
    if missing:
        raise DataError(f"{path}: unrecognised MDF layout, missing fields: {', '.join(missing)}")


def ingest_mdf(path, kind: str | None = None) -> SystemMatrix | Measurement:
    """Read an MDF v2 system matrix or measurement.

    The kind is taken from the presence of ``/calibration`` unless given.
    System matrices must be Fourier-transformed with data laid out as
    ``(periods, channels, frequencies, voxels)`` (``isTransposed``);
    background frames are dropped and the first period is used.
    Components are ordered channel-major. SNR comes from
    ``/calibration/snr`` when present and is estimated otherwise.
    MDF voxel order is x-fastest, which matches the native ``(z, y, x)``
    C order once ``calibration/size`` (given as x, y, z) is reversed.
    """
    try:
        f = h5py.File(path, "r")
    except OSError as exc:
        raise DataError(f"cannot read MDF file {path}: {exc}") from exc
    with f:
        if kind is None:
            kind = "systemmatrix" if "calibration" in f else "measurement"
        try:
            if kind == "systemmatrix":
                return _ingest_sm(f, path)
            if kind == "measurement":
                return _ingest_measurement(f, path)
        except (OSError, KeyError) as exc:
            raise DataError(f"{path}: damaged MDF file: {exc}") from exc
        raise ValueError("kind must be 'systemmatrix' or 'measurement'")


def _ingest_sm(f, path) -> SystemMatrix:
    _check_fields(f, path, _MDF_SM_FIELDS)
    if not _flag(f, "measurement/isFourierTransformed") or not _flag(f, "measurement/isTransposed"):
        raise DataError(f"{path}: system matrix must be Fourier-transformed and transposed (J, Y, K, N)")
    data = _mdf_complex(f["measurement/data"])
    if data.ndim != 4:
        raise DataError(f"{path}: expected 4D (J, Y, K, N) data, got shape {data.shape}")
    background = np.asarray(f["measurement/isBackgroundFrame"][()], dtype=bool)
    if background.size != data.shape[3]:
        raise DataError(f"{path}: isBackgroundFrame has {background.size} entries for {data.shape[3]} frames")
    size_xyz = [int(n) for n in np.asarray(f["calibration/size"][()]).ravel()]
    dims = tuple(size_xyz[::-1])
    fg = data[0][..., ~background]
    bg = data[0][..., background]
    n_ch, n_freq, n_vox = fg.shape
    if n_vox != int(np.prod(dims)):
        raise DataError(f"{path}: {n_vox} foreground voxels do not fill grid {dims}")
    comps = fg.reshape(n_ch * n_freq, *dims)
    freqs = np.tile(_mdf_frequencies(f, n_freq), n_ch)
    if "calibration/snr" in f:
        snr = np.asarray(f["calibration/snr"][()], dtype=np.float64)[0].reshape(-1)
        snr_source = "file"
    else:
        snr = estimate_snr(comps, bg.reshape(n_ch * n_freq, -1) if bg.shape[-1] > 1 else None)
        snr_source = "estimated"
    if snr.size != comps.shape[0]:
        raise DataError(f"{path}: SNR field has {snr.size} entries for {comps.shape[0]} components")
    spacing = None
    if "calibration/fieldOfView" in f:
        fov = np.asarray(f["calibration/fieldOfView"][()], dtype=np.float64).ravel()[::-1]
        spacing = tuple(float(v * 1e3 / n) for v, n in zip(fov, dims))  # mm
    meta = {
        "source": str(path),
        "source_format": "MDF v2",
        "snr_source": snr_source,
        "channel": np.repeat(np.arange(n_ch), n_freq).tolist(),
        "frequency_index": np.tile(np.arange(n_freq), n_ch).tolist(),
    }
    if "tracer/name" in f:
        meta["tracer"] = _text(f["tracer/name"][()])
    return SystemMatrix(comps, freqs, np.nan_to_num(snr, nan=0.0).clip(min=0), meta, spacing)


def _ingest_measurement(f, path) -> Measurement:
    _check_fields(f, path, _MDF_MEAS_FIELDS)
    data = _mdf_complex(f["measurement/data"]) if _flag(f, "measurement/isFourierTransformed") \
        else np.asarray(f["measurement/data"][()], dtype=np.float64)
    if data.ndim != 4:
        raise DataError(f"{path}: expected 4D (N, J, Y, V) data, got shape {data.shape}")
    background = (np.asarray(f["measurement/isBackgroundFrame"][()], dtype=bool)
                  if "measurement/isBackgroundFrame" in f else np.zeros(data.shape[0], bool))
    frames = data[~background].mean(axis=(0, 1))
    if background.any():
        frames = frames - data[background].mean(axis=(0, 1))
    spectra = frames if _flag(f, "measurement/isFourierTransformed") else np.fft.rfft(frames, axis=-1)
    n_ch, n_freq = spectra.shape
    freqs = np.tile(_mdf_frequencies(f, n_freq), n_ch)
    return Measurement(spectra.reshape(-1), freqs)


def _text(v) -> str:
    if isinstance(v, bytes):
        return v.decode()
    if isinstance(v, np.ndarray):
        return _text(v.ravel()[0])
    return str(v)


def write_mdf_system_matrix(sm: SystemMatrix, path, bandwidth: float, sampling_points: int,
                            background_frames: int = 0, with_snr: bool = True) -> Path:
    """Write a minimal MDF v2 calibration file (used for round-trip tests and demos).

    Every channel must carry the full rfft frequency axis for
    ``sampling_points`` samples.
    """
    n_freq = sampling_points // 2 + 1
    if len(sm) % n_freq:
        raise ValueError(f"{len(sm)} components are not a whole number of {n_freq}-frequency channels")
    n_ch = len(sm) // n_freq
    fg = sm.as_matrix().reshape(n_ch, n_freq, -1)
    bg = np.zeros((n_ch, n_freq, background_frames), dtype=np.complex128)
    data = np.concatenate([fg, bg], axis=-1)[None]
    path = Path(path)
    with h5py.File(path, "w") as f:
        f["version"] = "2.0.0"
        f["measurement/data"] = _to_pairs(data, np.float32)
        f["measurement/isFourierTransformed"] = np.int8(1)
        f["measurement/isTransposed"] = np.int8(1)
        f["measurement/isBackgroundFrame"] = np.r_[np.zeros(fg.shape[-1]), np.ones(background_frames)].astype(np.int8)
        f["calibration/size"] = np.asarray(sm.dims[::-1], dtype=np.int64)
        if with_snr:
            f["calibration/snr"] = sm.snr.reshape(1, n_ch, n_freq)
        f["acquisition/receiver/bandwidth"] = float(bandwidth)
        f["acquisition/receiver/numSamplingPoints"] = np.int64(sampling_points)
    return path
