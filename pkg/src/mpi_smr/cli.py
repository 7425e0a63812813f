"""Command-line entry point: ``mpi-smr <subcommand> [options]``.

Settings are merged from (lowest to highest precedence) built-in defaults,
the ``--config`` TOML file, ``MPI_SMR_<SECTION>__<KEY>`` environment
variables and explicit command-line flags. Every subcommand writes into a
run directory (``--out``, default ``runs/<subcommand>-<hash>``) holding
``manifest.json``; a stage whose configuration hash is already recorded
there with all outputs present is skipped unless ``--force`` is given.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Failures print one line to stderr::

    mpi-smr: error code=data stage=reconstruct message="..."
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, NumericalError, PipelineError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger("mpi_smr.cli")

ENV_PREFIX = "MPI_SMR_"
MANIFEST = "manifest.json"

SUBCOMMANDS = ("simulate", "ingest", "subsample", "train", "recover-net", "recover-cs", "sweep-cs",
               "reconstruct", "evaluate", "report", "desk")


# --------------------------------------------------------------------------- configuration

def load_config(path: str | os.PathLike | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} does not exist")
    try:
        return tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid TOML: {exc}") from exc


def _parse_env_value(text: str) -> Any:
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def env_overrides(environ: dict | None = None) -> dict:
    """``MPI_SMR_SEED=3`` -> ``{"seed": 3}``; ``MPI_SMR_TRAIN__LR0=1e-3`` -> ``{"train": {"lr0": 0.001}}``.

    A double underscore separates a config section (the subcommand name with
    ``-`` written as ``_``) from its key. Values are parsed as TOML scalars or
    arrays when possible and kept as strings otherwise.
    """
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, value in sorted(environ.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_env_value(value)
    return out


def merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def config_hash(obj: Any) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section [{name}] must be a table")
    return sec


def _pick(section: dict, allowed: dict, stage: str) -> dict:
    """Defaults in ``allowed`` updated by ``section``; unknown keys are a config error."""
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"[{stage}] has unknown keys: {', '.join(sorted(unknown))}")
    out = dict(allowed)
    out.update(section)
    return out


def _require_path(value, what: str) -> Path:
    if value is None:
        raise ConfigError(f"missing input: {what}")
    p = Path(value)
    if not p.exists():
        raise DataError(f"{what} {p} does not exist")
    return p


# --------------------------------------------------------------------------- run directory

class RunDir:
    """Run directory with a JSON manifest of completed stages."""

    def __init__(self, path: Path, force: bool = False):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.force = force
        self.manifest_path = self.path / MANIFEST
        if self.manifest_path.exists():
            try:
                self.manifest = json.loads(self.manifest_path.read_text())
            except json.JSONDecodeError as exc:
                raise DataError(f"corrupt manifest {self.manifest_path}: {exc}") from exc
        else:
            self.manifest = {"stages": {}}

    def up_to_date(self, stage: str, digest: str) -> bool:
        entry = self.manifest["stages"].get(stage)
        if self.force or entry is None or entry.get("config_hash") != digest:
            return False
        return all((self.path / name).exists() for name in entry.get("outputs", []))

    def record(self, stage: str, digest: str, settings: dict, seed: int, seconds: float, outputs: list[str],
               extra: dict | None = None) -> None:
        import h5py
        import scipy
        import sklearn

        self.manifest["stages"][stage] = {
            "config_hash": digest,
            "config": settings,
            "seed": seed,
            "seconds": seconds,
            "outputs": outputs,
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "versions": {"mpi_smr": __version__, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "h5py": h5py.__version__, "sklearn": sklearn.__version__},
            **(extra or {}),
        }
        self.manifest_path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True, default=str))

    def __truediv__(self, name: str) -> Path:
        return self.path / name


# --------------------------------------------------------------------------- stages

SIMULATE_DEFAULTS = dict(dims=[32, 32, 32], noise_rel=0.003, snr_threshold=3.0, k_max=256,
                         phantoms=["shape", "resolution", "concentration"], measurement_noise_rel=0.001,
                         particle_diameter=22.0)


def stage_simulate(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .pipeline import DeskConfig, phantom_measurement, simulate_desk_matrices
    from .simgen import ScannerConfig
    from .storage import save_image, save_measurement, save_system_matrix

    cfg = DeskConfig(dims=tuple(settings["dims"]), noise_rel=settings["noise_rel"],
                     snr_threshold=settings["snr_threshold"], k_max=settings["k_max"], seed=seed,
                     scanner=ScannerConfig(particle_diameter=settings["particle_diameter"]))
    clean, measured = simulate_desk_matrices(cfg)
    outputs = [save_system_matrix(measured, run / "sm.h5", "float64").name,
               save_system_matrix(clean, run / "sm_clean.h5", "float64").name]
    for i, kind in enumerate(settings["phantoms"]):
        phantom, m = phantom_measurement(clean, kind, settings["measurement_noise_rel"], seed * 1000 + i)
        outputs.append(save_image(phantom, run / f"phantom_{kind}.h5").name)
        outputs.append(save_measurement(m, run / f"measurement_{kind}.h5", {"phantom": kind}).name)
    return outputs


INGEST_DEFAULTS = dict(input=None, kind=None)


def stage_ingest(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .storage import ingest_mdf, save_measurement, save_system_matrix
    from .volume import SystemMatrix

    src = _require_path(settings["input"], "MDF input")
    obj = ingest_mdf(src, settings["kind"])
    if isinstance(obj, SystemMatrix):
        return [save_system_matrix(obj, run / "sm.h5").name]
    return [save_measurement(obj, run / "measurement.h5", {"source": str(src)}).name]


SUBSAMPLE_DEFAULTS = dict(sm=None, kind="regular", factor=8, offset=[0, 0, 0])


def stage_subsample(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .estimators import Subsampler
    from .storage import load_system_matrix, save_samples, save_system_matrix

    sm = load_system_matrix(_require_path(settings["sm"], "system matrix"))
    sub = Subsampler(kind=settings["kind"], factor=settings["factor"], offset=tuple(settings["offset"]),
                     seed=seed).fit(sm)
    sub.pattern_.save(run / "pattern.json")
    out = sub.transform(sm)
    if settings["kind"] == "regular":
        return ["pattern.json", save_system_matrix(out, run / "sm_lr.h5", "float64").name]
    return ["pattern.json", save_samples(out, sm, sub.pattern_.to_json(), run / "samples.h5").name]


TRAIN_DEFAULTS = dict(sm=None, stride=2, offset=[0, 0, 0], n_rrdb=2, nf=16, gc=8, n_up=1, up_factor_per_block=2,
                      iterations=2000, minibatch=4, lr0=1e-3, lr_halve_every=1000, patch=6, augment=False,
                      val_fraction=0.1, val_every=250, dtype="float32")


def stage_train(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .estimators import SMRNetRecovery
    from .metrics import write_csv
    from .storage import load_system_matrix, save_checkpoint

    sm = load_system_matrix(_require_path(settings["sm"], "HR system matrix"))
    params = {k: v for k, v in settings.items() if k != "sm"}
    params["offset"] = tuple(params["offset"])
    est = SMRNetRecovery(seed=seed, **params).fit(sm)
    ckpt = est.model_.to_checkpoint(est.optimizer_state_, iteration=est.best_iteration_,
                                    stride=settings["stride"], offset=list(params["offset"]),
                                    val_indices=[int(i) for i in est.val_indices_])
    save_checkpoint(ckpt, run / "checkpoint.h5")
    write_csv(est.history_, run / "training.csv")
    return ["checkpoint.h5", "training.csv"]


RECOVER_NET_DEFAULTS = dict(checkpoint=None, lr=None, hr_dims=None, crop_offset=[0, 0, 0], batch_size=4)


def stage_recover_net(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .smrnet.model import SMRNet
    from .smrnet.train import recover
    from .storage import load_checkpoint, load_system_matrix, save_system_matrix

    model = SMRNet.from_checkpoint(load_checkpoint(_require_path(settings["checkpoint"], "checkpoint")))
    lr = load_system_matrix(_require_path(settings["lr"], "LR system matrix"))
    hr_dims = None if settings["hr_dims"] is None else tuple(settings["hr_dims"])
    try:
        out = recover(model, lr, tuple(settings["crop_offset"]), hr_dims, batch_size=settings["batch_size"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return [save_system_matrix(out, run / "sm_net.h5", "float64").name]


CS_DEFAULTS = dict(samples=None, sm=None, pattern=None, mu=10.0, outer_iters=30, inner_iters=5,
                   shrink_weight=1.0, tol=1e-6)


def _cs_inputs(settings: dict):
    from .sampling import SamplingPattern, apply_pattern
    from .storage import load_samples, load_system_matrix

    if settings.get("samples") is not None:
        values, template, pattern_json = load_samples(_require_path(settings["samples"], "samples file"))
        return values, template, SamplingPattern.from_json(pattern_json)
    sm = load_system_matrix(_require_path(settings.get("sm"), "HR system matrix or samples file"))
    pattern = SamplingPattern.load(_require_path(settings.get("pattern"), "sampling pattern"))
    return apply_pattern(sm.data, pattern), sm, pattern


def _cs_params(settings: dict):
    from .cs import CsParams

    try:
        return CsParams(**{k: settings[k] for k in ("mu", "outer_iters", "inner_iters", "shrink_weight", "tol")})
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def stage_recover_cs(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .cs import recover_cs
    from .metrics import write_csv
    from .storage import save_system_matrix

    values, template, pattern = _cs_inputs(settings)
    out, rows = recover_cs(template, pattern, _cs_params(settings), jobs=jobs, measured=values)
    for r in rows:
        r.pop("seconds")
    write_csv(rows, run / "cs_diagnostics.csv")
    return [save_system_matrix(out, run / "sm_cs.h5", "float64").name, "cs_diagnostics.csv"]


SWEEP_DEFAULTS = dict(sm=None, pattern=None, components=16, mu=[1.0, 10.0, 100.0], outer_iters=[30],
                      inner_iters=[5], shrink_weight=[0.3, 1.0, 3.0], tol=[1e-6])


def stage_sweep_cs(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from itertools import product

    from .cs import CsParams, cs_param_sweep
    from .metrics import write_csv
    from .sampling import SamplingPattern
    from .storage import load_system_matrix

    sm = load_system_matrix(_require_path(settings["sm"], "HR system matrix"))
    pattern = SamplingPattern.load(_require_path(settings["pattern"], "sampling pattern"))
    n = min(int(settings["components"]), len(sm))
    subset = sm.select(np.sort(np.argsort(-sm.snr, kind="stable")[:n]))
    keys = ("mu", "outer_iters", "inner_iters", "shrink_weight", "tol")
    try:
        grid = [CsParams(**dict(zip(keys, combo))) for combo in product(*(settings[k] for k in keys))]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid sweep grid: {exc}") from exc
    best, table = cs_param_sweep(subset, pattern, grid, jobs=jobs)
    write_csv(table, run / "cs_sweep.csv")
    (run / "cs_best.json").write_text(json.dumps(best.to_dict(), indent=2, sort_keys=True))
    return ["cs_sweep.csv", "cs_best.json"]


RECON_DEFAULTS = dict(sm=None, measurement=None, lambda_rel=0.01, iterations=3, snr_threshold=3.0,
                      enforce_real_nonneg=True, variant="true")


def stage_reconstruct(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .recon import ReconParams, reconstruct_phantom
    from .storage import load_measurement, load_system_matrix, save_image

    sm = load_system_matrix(_require_path(settings["sm"], "system matrix"))
    m = load_measurement(_require_path(settings["measurement"], "measurement"))
    try:
        rp = ReconParams(lambda_rel=settings["lambda_rel"], iterations=settings["iterations"],
                         snr_threshold=settings["snr_threshold"],
                         enforce_real_nonneg=settings["enforce_real_nonneg"], seed=seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        img = reconstruct_phantom(sm, m, rp, settings["variant"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    return [save_image(img, run / f"image_{settings['variant']}.h5").name]


EVALUATE_DEFAULTS = dict(recovered=None, truth=None, image=None, phantom=None, method="method", subject=None,
                         ssim_mode="volume")


def stage_evaluate(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .metrics import component_report, image_metrics, write_csv
    from .storage import load_image, load_system_matrix

    outputs = []
    if settings["recovered"] is not None or settings["truth"] is not None:
        rec = load_system_matrix(_require_path(settings["recovered"], "recovered system matrix"))
        truth = load_system_matrix(_require_path(settings["truth"], "reference system matrix"))
        try:
            rows = component_report(rec, truth)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        write_csv(rows, run / "components.csv")
        outputs.append("components.csv")
    if settings["image"] is not None or settings["phantom"] is not None:
        img = load_image(_require_path(settings["image"], "reconstructed image"))
        ref = load_image(_require_path(settings["phantom"], "phantom image"))
        subject = settings["subject"] or ref.meta.get("phantom", "phantom")
        rows = [{"method": settings["method"], "phantom": subject, "metric": r.metric, "value": r.value}
                for r in image_metrics(img, ref, subject, settings["ssim_mode"])]
        write_csv(rows, run / "images.csv")
        outputs.append("images.csv")
    if not outputs:
        raise ConfigError("evaluate needs --recovered/--truth and/or --image/--phantom")
    return outputs


REPORT_DEFAULTS = dict(metrics=[])


def stage_report(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .metrics import format_table, read_csv, table_summary, write_table_json

    if not settings["metrics"]:
        raise ConfigError("report needs at least one --metrics CSV")
    rows = []
    for path in settings["metrics"]:
        for row in read_csv(_require_path(path, "metrics CSV")):
            missing = {"method", "phantom", "metric", "value"} - set(row)
            if missing:
                raise DataError(f"{path} lacks columns {sorted(missing)}")
            rows.append(row)
    table = table_summary(rows)
    write_table_json(table, run / "table.json")
    text = format_table(table)
    (run / "table.txt").write_text(text + "\n")
    print(text)
    return ["table.json", "table.txt"]


def stage_desk(settings: dict, run: RunDir, seed: int, jobs: int) -> list[str]:
    from .pipeline import DeskConfig, run_desk

    try:
        cfg = DeskConfig.from_dict(dict(settings, seed=seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid desk configuration: {exc}") from exc
    result = run_desk(cfg, run.path, jobs=jobs)
    print(json.dumps(result.criteria, sort_keys=True))
    return [Path(p).name for p in result.files.values()]


STAGES: dict[str, tuple[Callable, dict]] = {
    "simulate": (stage_simulate, SIMULATE_DEFAULTS),
    "ingest": (stage_ingest, INGEST_DEFAULTS),
    "subsample": (stage_subsample, SUBSAMPLE_DEFAULTS),
    "train": (stage_train, TRAIN_DEFAULTS),
    "recover-net": (stage_recover_net, RECOVER_NET_DEFAULTS),
    "recover-cs": (stage_recover_cs, CS_DEFAULTS),
    "sweep-cs": (stage_sweep_cs, SWEEP_DEFAULTS),
    "reconstruct": (stage_reconstruct, RECON_DEFAULTS),
    "evaluate": (stage_evaluate, EVALUATE_DEFAULTS),
    "report": (stage_report, REPORT_DEFAULTS),
    "desk": (stage_desk, None),
}


# --------------------------------------------------------------------------- argument parsing

# command-line flags per subcommand: (flag, settings key, argparse kwargs)
_FLAGS: dict[str, list[tuple[str, str, dict]]] = {
    "simulate": [("--dims", "dims", dict(type=int, nargs=3)), ("--noise-rel", "noise_rel", dict(type=float)),
                 ("--k-max", "k_max", dict(type=int)), ("--snr-threshold", "snr_threshold", dict(type=float)),
                 ("--phantoms", "phantoms", dict(nargs="+"))],
    "ingest": [("--input", "input", {}), ("--kind", "kind", dict(choices=["systemmatrix", "measurement"]))],
    "subsample": [("--sm", "sm", {}), ("--kind", "kind", dict(choices=["regular", "poisson"])),
                  ("--factor", "factor", dict(type=int)), ("--offset", "offset", dict(type=int, nargs=3))],
    "train": [("--sm", "sm", {}), ("--stride", "stride", dict(type=int)),
              ("--iterations", "iterations", dict(type=int)), ("--minibatch", "minibatch", dict(type=int)),
              ("--lr0", "lr0", dict(type=float)), ("--patch", "patch", dict(type=int))],
    "recover-net": [("--checkpoint", "checkpoint", {}), ("--lr", "lr", {}),
                    ("--hr-dims", "hr_dims", dict(type=int, nargs=3)),
                    ("--crop-offset", "crop_offset", dict(type=int, nargs=3))],
    "recover-cs": [("--samples", "samples", {}), ("--sm", "sm", {}), ("--pattern", "pattern", {}),
                   ("--mu", "mu", dict(type=float)), ("--outer-iters", "outer_iters", dict(type=int))],
    "sweep-cs": [("--sm", "sm", {}), ("--pattern", "pattern", {}), ("--components", "components", dict(type=int))],
    "reconstruct": [("--sm", "sm", {}), ("--measurement", "measurement", {}),
                    ("--lambda-rel", "lambda_rel", dict(type=float)), ("--iterations", "iterations", dict(type=int)),
                    ("--variant", "variant", {})],
    "evaluate": [("--recovered", "recovered", {}), ("--truth", "truth", {}), ("--image", "image", {}),
                 ("--phantom", "phantom", {}), ("--method", "method", {}), ("--subject", "subject", {})],
    "report": [("--metrics", "metrics", dict(nargs="+"))],
    "desk": [("--iterations", "iterations", dict(type=int)), ("--k-max", "k_max", dict(type=int)),
             ("--dims", "dims", dict(type=int, nargs=3))],
}

_HELP = {
    "simulate": "simulate a synthetic calibration, phantoms and measurements",
    "ingest": "convert an MDF file into the native HDF5 container",
    "subsample": "draw a regular or Poisson-disc pattern and sample a system matrix",
    "train": "train the super-resolution network on an HR system matrix",
    "recover-net": "recover an HR system matrix from an LR one with a trained network",
    "recover-cs": "recover an HR system matrix from scattered samples by compressed sensing",
    "sweep-cs": "grid-search CS parameters on a component subset",
    "reconstruct": "reconstruct a concentration image from a measurement",
    "evaluate": "component NRMSE against a reference matrix and/or image metrics against a phantom",
    "report": "method-by-phantom table from image metric CSVs",
    "desk": "run the complete synthetic desk-scale experiment",
}


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so usage errors get the common error line and exit code."""

    def error(self, message):
        raise _ArgumentError(message)


def _common_parser(suppress: bool) -> argparse.ArgumentParser:
    # the copy attached to each subcommand must not overwrite flags given before it
    default = argparse.SUPPRESS if suppress else None
    common = _Parser(add_help=False)
    common.add_argument("--config", default=default, help="TOML configuration file")
    common.add_argument("--seed", type=int, default=default, help="global seed (default 0)")
    common.add_argument("--jobs", type=int, default=default,
                        help="worker threads for per-component stages (default 1)")
    common.add_argument("--force", action="store_true", default=default, help="re-run even if the manifest matches")
    common.add_argument("--out", default=default, help="run directory (default runs/<subcommand>-<config hash>)")
    common.add_argument("-v", "--verbose", action="store_true", default=default, help="log progress to stderr")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser(suppress=True)
    parser = _Parser(prog="mpi-smr", description="MPI system-matrix recovery pipeline",
                     parents=[_common_parser(suppress=False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    sub.required = True
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common], help=_HELP[name], description=_HELP[name])
        for flag, key, kwargs in _FLAGS[name]:
            p.add_argument(flag, dest=f"opt_{key}", default=None, **kwargs)
    return parser


def _settings_for(command: str, cfg: dict, args: argparse.Namespace) -> dict:
    section_name = command.replace("-", "_")
    section = _section(cfg, section_name)
    cli = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
    section = merge(section, cli)
    _, defaults = STAGES[command]
    if defaults is None:
        return section
    return _pick(section, defaults, section_name)


def run(argv: list[str] | None = None, environ: dict | None = None) -> int:
    """Parse ``argv``, execute one stage and return the exit status."""
    parser = build_parser()
    command = "cli"
    try:
        try:
            args = parser.parse_args(argv)
        except _ArgumentError as exc:
            raise ConfigError(str(exc)) from exc
        command = args.command
        env = env_overrides(environ)
        cfg = merge(load_config(args.config or env.pop("config", None)), env)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        jobs = args.jobs if args.jobs is not None else int(cfg.get("jobs", 1))
        force = bool(args.force) if args.force is not None else bool(cfg.get("force", False))
        if jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.verbose or cfg.get("verbose"):
            logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
        settings = _settings_for(command, cfg, args)
        digest = config_hash({"command": command, "settings": settings, "seed": seed})
        out = args.out or cfg.get("out") or Path("runs") / f"{command}-{digest}"
        rundir = RunDir(Path(out), force=force)
        if rundir.up_to_date(command, digest):
            print(f"{command}: up to date in {rundir.path} (hash {digest}); use --force to re-run")
            return 0
        t0 = time.perf_counter()
        stage, _ = STAGES[command]
        outputs = stage(settings, rundir, seed, jobs)
        seconds = time.perf_counter() - t0
        rundir.record(command, digest, settings, seed, seconds, outputs, {"jobs": jobs})
        print(f"{command}: wrote {', '.join(outputs)} to {rundir.path} in {seconds:.1f} s")
        return 0
    except PipelineError as exc:
        return _fail(exc.code, exc.exit_code, command, exc)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail("data", DataError.exit_code, command, exc)
    except (FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail("numerical", NumericalError.exit_code, command, exc)
    except (TypeError, ValueError) as exc:
        return _fail("config", ConfigError.exit_code, command, exc)


def _fail(code: str, status: int, stage: str, exc: BaseException) -> int:
    message = str(exc).replace("\n", " ").replace('"', "'")
    print(f'mpi-smr: error code={code} stage={stage} message="{message}"', file=sys.stderr)
    return status


def main(argv: list[str] | None = None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":  # pragma: no cover
    main()
