"""Command-line front end for ensemble runs.

Run configuration is an INI document with four sections::

    [run]        preset, engines, n_trajectories, seed, out, format
    [physics]    omega_sys, xi, omega_c, beta, n_modes
    [numerics]   dt, t_max, shots, max_substep, batch_size
    [optimizer]  learning_rate, beta1, beta2, epsilon, tol_loss,
                 max_iters, shot_iters, shot_lr_schedule

Every key is optional. Physics keys fall back to the chosen preset, every
other key to the package defaults, and each fallback is logged so the
choices that shaped a run can be audited.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import (
    EnsembleConfig,
    EnsembleError,
    NumericsParams,
    PhysicsParams,
    PopulationSeries,
    compare_series,
    default_workers,
    run_ensemble,
)
from .pvqd import OptimizerSettings

log = logging.getLogger("eaet")

PRESETS = {
    "regime1": PhysicsParams(omega_sys=1.0, xi=1.2, omega_c=2.5, beta=0.2, n_modes=60),
    "regime2": PhysicsParams(omega_sys=1.0, xi=0.3, omega_c=5.0, beta=5.0, n_modes=60),
}
# command-line spelling -> ensemble engine
ENGINE_ALIASES = {"rk4": "rk4", "pvqd": "pvqd_exact", "pvqd-shots": "pvqd_shots",
                  "pvqd_exact": "pvqd_exact", "pvqd_shots": "pvqd_shots"}
TABLE_COLUMNS = ("t", "p_reactant_mean", "p_reactant_stderr", "sigma_z_mean", "sigma_z_stderr", "n_contributing")
TABLE_HEADER = ",".join(TABLE_COLUMNS)
# output format -> (file suffix, delimiter)
FORMATS = {"csv": (".csv", ","), "tsv": (".tsv", "\t")}

RUN_KEYS = ("preset", "engines", "n_trajectories", "seed", "out", "format")
SECTIONS = {
    "physics": PhysicsParams,
    "numerics": NumericsParams,
    "optimizer": OptimizerSettings,
}


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunConfig:
    preset: str = "regime1"
    engines: tuple = ("rk4",)
    n_trajectories: int = 10_000
    seed: int = 0
    physics: PhysicsParams = field(default_factory=PhysicsParams)
    numerics: NumericsParams = field(default_factory=NumericsParams)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    out: str = "eaet-out"
    output_format: str = "csv"
    # keys that were not given explicitly, as "section.key"
    defaulted: tuple = field(default=(), compare=False)

    def ensemble(self, engine: str) -> EnsembleConfig:
        return EnsembleConfig(self.n_trajectories, self.seed, engine, self.physics, self.numerics, self.optimizer)


def _convert(path: str, raw: str, like):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            raise TypeError
        if isinstance(like, int):
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        if isinstance(like, float):
            return float(raw)
        return raw
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: cannot read {raw!r} as {type(like).__name__}") from None


def _parse_engines(path: str, raw: str) -> tuple:
    names = [s.strip() for s in raw.replace(";", ",").split(",") if s.strip()]
    if not names:
        raise ConfigError(f"{path}: at least one engine is required")
    out = []
    for name in names:
        if name not in ENGINE_ALIASES:
            raise ConfigError(f"{path}: unknown engine {name!r}")
        if ENGINE_ALIASES[name] not in out:
            out.append(ENGINE_ALIASES[name])
    return tuple(out)


def _build(section: str, cls, values: dict, template, names):
    try:
        return cls(**values)
    except ValueError as exc:
        # name the first key that is invalid on its own, else the section
        for key, value in values.items():
            try:
                cls(**{**{n: getattr(template, n) for n in names}, key: value})
            except ValueError:
                raise ConfigError(f"{section}.{key}: {exc}") from None
        raise ConfigError(f"{section}: {exc}") from None


def parse_config(text: str) -> RunConfig:
    """Validated :class:`RunConfig` from an INI document (may be empty)."""
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    known = {"run", *SECTIONS}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{section}: unknown section")
    defaulted = []

    run = dict(parser["run"]) if parser.has_section("run") else {}
    for key in run:
        if key not in RUN_KEYS:
            raise ConfigError(f"run.{key}: unknown key")
    base = RunConfig()
    preset = run.get("preset", base.preset).strip()
    if preset not in PRESETS:
        raise ConfigError(f"run.preset: unknown preset {preset!r} (expected one of {sorted(PRESETS)})")
    engines = _parse_engines("run.engines", run["engines"]) if "engines" in run else base.engines
    n_traj = _convert("run.n_trajectories", run["n_trajectories"], 0) if "n_trajectories" in run else base.n_trajectories
    seed = _convert("run.seed", run["seed"], 0) if "seed" in run else base.seed
    if n_traj < 1:
        raise ConfigError("run.n_trajectories: must be >= 1")
    if seed < 0:
        raise ConfigError("run.seed: must be >= 0")
    out = run.get("out", base.out).strip()
    if not out:
        raise ConfigError("run.out: must not be empty")
    output_format = run.get("format", base.output_format).strip()
    if output_format not in FORMATS:
        raise ConfigError(f"run.format: unknown format {output_format!r} (expected one of {sorted(FORMATS)})")
    for key in RUN_KEYS:
        if key not in run:
            defaulted.append(f"run.{key}")

    built = {}
    for section, cls in SECTIONS.items():
        given = dict(parser[section]) if parser.has_section(section) else {}
        template = PRESETS[preset] if section == "physics" else cls()
        names = [f.name for f in fields(cls)]
        values = {}
        for key, raw in given.items():
            if key not in names:
                raise ConfigError(f"{section}.{key}: unknown key")
            values[key] = _convert(f"{section}.{key}", raw, getattr(template, key))
        for name in names:
            if name not in values:
                values[name] = getattr(template, name)
                defaulted.append(f"{section}.{name}")
        built[section] = _build(section, cls, values, template, names)

    return RunConfig(preset, engines, n_traj, seed, built["physics"], built["numerics"], built["optimizer"],
                     out, output_format, tuple(defaulted))


def render(cfg: RunConfig) -> str:
    """INI text with every knob explicit; ``parse_config(render(c)) == c``."""
    lines = ["[run]", f"preset = {cfg.preset}", f"engines = {', '.join(cfg.engines)}",
             f"n_trajectories = {cfg.n_trajectories}", f"seed = {cfg.seed}", f"out = {cfg.out}",
             f"format = {cfg.output_format}"]
    for section in SECTIONS:
        lines += ["", f"[{section}]"]
        obj = getattr(cfg, section)
        for f in fields(obj):
            value = getattr(obj, f.name)
            lines.append(f"{f.name} = {repr(value) if isinstance(value, float) else value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(render(cfg).encode()).hexdigest()


def _fmt(x) -> str:
    return format(float(x), ".17g")


def format_table(series: PopulationSeries, delimiter: str = ",") -> str:
    rows = [delimiter.join(TABLE_COLUMNS)]
    for i, t in enumerate(series.times):
        rows.append(delimiter.join([_fmt(t), _fmt(series.p_reactant_mean[i]), _fmt(series.p_reactant_stderr[i]),
                              _fmt(series.sigma_z_mean[i]), _fmt(series.sigma_z_stderr[i]),
                              str(series.n_contributing)]))
    return "\n".join(rows) + "\n"


def read_table(path, delimiter: str = ",") -> PopulationSeries:
    """Load a table written by :func:`format_table`."""
    data = np.loadtxt(path, delimiter=delimiter, skiprows=1, ndmin=2)
    return PopulationSeries(data[:, 0], data[:, 1], data[:, 2], data[:, 3], data[:, 4], int(data[0, 5]))


def ingest_reference(path, times) -> PopulationSeries:
    """External (t, P_reactant) data resampled onto ``times`` by linear interpolation.

    Rows are comma or whitespace separated; blank lines, ``#`` comments and
    one leading non-numeric header row are skipped. Times must be strictly
    increasing and cover the whole grid.
    """
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        try:
            if len(parts) < 2:
                raise ValueError
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            if rows:
                raise ValueError(f"{path}:{lineno}: expected two numbers, got {line!r}") from None
            # header row
    if not rows:
        raise ValueError(f"{path}: no data rows")
    data = np.array(rows)
    t_ref, p_ref = data[:, 0], data[:, 1]
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{path}: non-finite entries")
    if np.any(np.diff(t_ref) <= 0):
        raise ValueError(f"{path}: times must be strictly increasing (duplicate or out-of-order rows)")
    times = np.asarray(times, dtype=float)
    span = 1e-9 * max(1.0, abs(t_ref[-1]))
    if times.min() < t_ref[0] - span or times.max() > t_ref[-1] + span:
        raise ValueError(f"{path}: covers t in [{t_ref[0]}, {t_ref[-1]}], run grid needs "
                         f"[{times.min()}, {times.max()}]")
    p = np.interp(times, t_ref, p_ref)
    zeros = np.zeros_like(p)
    return PopulationSeries(times, p, zeros, 2.0 * p - 1.0, zeros, 0)


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(cfg: RunConfig, out_dir=None, workers: int | None = None, reference=None) -> int:
    """Execute every engine of ``cfg`` and write tables, manifest and report.

    Returns the process exit status.
    """
    out = Path(cfg.out if out_dir is None else out_dir)
    suffix, delimiter = FORMATS[cfg.output_format]
    out.mkdir(parents=True, exist_ok=True)
    workers = default_workers() if workers is None else workers
    for key in cfg.defaulted:
        section, name = key.split(".")
        if section == "run":
            value = getattr(cfg, "output_format" if name == "format" else name)
        else:
            value = getattr(getattr(cfg, section), name)
        log.info("default %s = %s", key, value)

    series, timings, tables = {}, {}, {}
    for engine in cfg.engines:
        t0 = time.perf_counter()
        log.info("running %s on %d trajectories", engine, cfg.n_trajectories)
        series[engine] = run_ensemble(cfg.ensemble(engine), workers=workers)
        timings[engine] = time.perf_counter() - t0
        path = out / f"{engine}{suffix}"
        with open(path, "w", newline="\n", encoding="ascii") as fh:
            fh.write(format_table(series[engine], delimiter))
        tables[engine] = path

    report = {}
    first = cfg.engines[0]
    for engine in cfg.engines[1:]:
        report[f"{first}_vs_{engine}"] = compare_series(series[first], series[engine]).as_dict()
    if reference is not None:
        ref = ingest_reference(reference, series[first].times)
        for engine in cfg.engines:
            report[f"reference_vs_{engine}"] = compare_series(ref, series[engine]).as_dict()
    if report:
        (out / "deviation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")

    manifest = {
        "config": render(cfg),
        "config_sha256": config_hash(cfg),
        "seed": cfg.seed,
        "engines": list(cfg.engines),
        "defaulted": list(cfg.defaulted),
        "workers": workers,
        "wall_time_s": timings,
        "trajectories": {e: {"contributing": s.n_contributing, "failed": s.n_failed,
                             "unconverged_steps": s.n_unconverged_steps} for e, s in series.items()},
        "tables": {e: {"file": p.name, "sha256": _file_sha(p)} for e, p in tables.items()},
        "reference": str(reference) if reference is not None else None,
        "versions": {"eaet": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for key, dev in report.items():
        log.info("%s: max %.3e rms %.3e", key, dev["max"], dev["rms"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eaet", description="Ensemble-averaged Ehrenfest spin-boson dynamics.")
    ap.add_argument("--config", type=Path, help="INI run configuration")
    ap.add_argument("--preset", choices=sorted(PRESETS), help="physics preset (overrides [run] preset)")
    ap.add_argument("--engine", action="append", choices=["rk4", "pvqd", "pvqd-shots"],
                    help="engine to run; repeat for several")
    ap.add_argument("--trajectories", type=int, help="number of trajectories")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--workers", type=int, help="worker processes (default: $EAET_WORKERS or 1)")
    ap.add_argument("--out", help="output directory (overrides [run] out; default eaet-out)")
    ap.add_argument("--reference", type=Path, help="(t, P_reactant) file to compare against")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return ap


def _apply_flags(text: str, args) -> str:
    # command-line flags are folded into the document so they are validated once
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string(text)
    if not parser.has_section("run"):
        parser.add_section("run")
    if args.preset is not None:
        parser["run"]["preset"] = args.preset
    if args.engine:
        parser["run"]["engines"] = ", ".join(args.engine)
    if args.trajectories is not None:
        parser["run"]["n_trajectories"] = str(args.trajectories)
    if args.seed is not None:
        parser["run"]["seed"] = str(args.seed)
    if args.out is not None:
        parser["run"]["out"] = str(args.out)
    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in parser[section].items()]
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        text = args.config.read_text() if args.config else ""
        parse_config(text)  # report document errors before flags are merged
        cfg = parse_config(_apply_flags(text, args))
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise ConfigError("--workers: must be >= 1")
    except (ConfigError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    try:
        return run(cfg, None, workers, args.reference)
    except (EnsembleError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
