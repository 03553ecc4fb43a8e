"""Command-line entry points: run, sweep, plotdata, feasibility.

Exit codes: 0 on success, 2 for configuration errors (every violation is
printed), 3 when a simulation stage aborts, 4 on numeric or calibration
failure.  ``LEVISIM_WORKERS`` sets the sweep worker count; there is no other
environment configuration.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import OscillatorMode
from .errors import (CalibrationError, ConfigError, LevisimError,
                     LockUnstableError, NearResonantDriveError,
                     NoiselessMeasurementError, NumericError, StageAbortError)
from .feasibility import (CavitySpec, cooled_occupation_cavity,
                          min_input_flux_cavity)
from .pipeline import (ARTIFACT_VERSION, build_system, feasibility_reports,
                       run_scenario)
from .scenario import SCHEMA, load_scenario, parse_scenario

FIG_TAGS = ("fig4a", "fig5")
_FIG5_FINESSES = (1e4, 1e5, 1e6)


def _worker_count() -> int:
    raw = os.environ.get("LEVISIM_WORKERS", "").strip()
    if not raw:
        return 1
    try:
        count = int(raw)
    except ValueError as exc:
        raise ConfigError(
            [f"LEVISIM_WORKERS must be a positive integer, got {raw!r}"]
        ) from exc
    if count < 1:
        raise ConfigError(
            [f"LEVISIM_WORKERS must be a positive integer, got {raw!r}"])
    return count


# --------------------------------------------------------------------------
# run


def _cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    outdir = Path(args.out) if args.out else Path(f"levisim-run-{scenario.seed}")
    manifest = run_scenario(scenario, outdir)
    for stage in manifest.stages:
        print(f"stage {stage['name']}: {stage['status']}")
    for name in manifest.analyses:
        print(f"analysis {name}: done")
    print(f"manifest: {outdir / 'manifest.json'}")
    return 0


# --------------------------------------------------------------------------
# sweep


def _sweep_worker(job: tuple[str, str]) -> str:
    canonical_text, rundir = job
    manifest = run_scenario(parse_scenario(canonical_text), rundir)
    return manifest.scenario_sha256


def _cmd_sweep(args) -> int:
    scenario = load_scenario(args.scenario)
    key = args.param
    if key not in SCHEMA:
        raise ConfigError(
            [f"unknown sweep key {key!r}; valid keys:\n  "
             + "\n  ".join(sorted(SCHEMA))])
    tokens = [tok for tok in re.split(r"[,\s]+", args.values.strip()) if tok]
    outdir = Path(args.out) if args.out else Path(f"levisim-sweep-{scenario.seed}")
    outdir.mkdir(parents=True, exist_ok=True)

    jobs = []
    runs = []
    for index, token in enumerate(tokens):
        # Each point re-runs the full scenario with its own derived seed, so
        # points differ by the swept value and their noise stream only.
        child = scenario.with_overrides({key: token,
                                         "run.seed": scenario.seed + index})
        rundir = outdir / f"run{index:03d}"
        jobs.append((child.canonical(), str(rundir)))
        runs.append({"index": index, "value": child[key], "token": token,
                     "dir": rundir.name, "seed": child.seed})

    workers = _worker_count()
    if jobs and workers > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            shas = list(pool.map(_sweep_worker, jobs))
    else:
        shas = [_sweep_worker(job) for job in jobs]
    for entry, sha in zip(runs, shas):
        entry["scenario_sha256"] = sha

    summary = {"param": key, "values": [r["value"] for r in runs],
               "artifact_version": ARTIFACT_VERSION, "runs": runs}
    (outdir / "sweep_manifest.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for entry in runs:
        print(f"{entry['dir']}: {key} = {entry['value']:.17g}"
              if isinstance(entry["value"], float)
              else f"{entry['dir']}: {key} = {entry['value']}")
    print(f"sweep of {len(runs)} run(s): {outdir / 'sweep_manifest.json'}")
    return 0


# --------------------------------------------------------------------------
# plotdata


def _run_dirs(manifest_path: Path) -> list[Path]:
    """Run directories referenced by a run manifest or a sweep manifest."""
    data = json.loads(manifest_path.read_text(encoding="utf-8"))
    base = manifest_path.parent
    if "runs" in data:
        return [base / entry["dir"] for entry in data["runs"]]
    return [base]


def _plot_fig4a(manifest_path: Path, outdir: Path) -> list[Path]:
    run_dirs = _run_dirs(manifest_path)
    if not run_dirs:
        raise ConfigError(["sweep manifest lists no runs; nothing to plot"])
    written = []
    for rundir in run_dirs:
        psd_file = rundir / "stages" / "interferometric_psd.csv"
        if not psd_file.exists():
            raise ConfigError(
                [f"no interferometric spectrum in {rundir}; enable stage "
                 "'interferometric' in run.stages and rerun"])
        scn = load_scenario(rundir / "scenario.canonical")
        gain = scn["stages.interferometric.gain"]
        arr = np.loadtxt(psd_file, delimiter=",", skiprows=1)
        target = outdir / f"fig4a_gain{gain:g}.csv"
        np.savetxt(target, np.column_stack((arr[:, 0], arr[:, 2])),
                   delimiter=",", header="f_Hz,asd", comments="",
                   fmt="%.17g")
        written.append(target)
    return written


def _plot_fig5(manifest_path: Path, outdir: Path) -> list[Path]:
    run_dirs = _run_dirs(manifest_path)
    if not run_dirs:
        raise ConfigError(["sweep manifest lists no runs; nothing to plot"])
    scn = load_scenario(run_dirs[0] / "scenario.canonical")
    mass = build_system(scn).particle.mass
    mode = OscillatorMode.from_frequency(mass, scn["feasibility.frequency"],
                                         scn["particle.quality"])
    temperature = scn["feasibility.temperature"]
    wavelength = scn["feasibility.wavelength"]
    eta = scn["feasibility.eta"]

    lines = ["n_in,phonons,finesse"]
    for finesse in _FIG5_FINESSES:
        threshold = min_input_flux_cavity(mode, temperature, wavelength,
                                          finesse, eta)
        cavity = CavitySpec(wavelength=wavelength, length=0.01,
                            finesse=finesse, eta_det=eta)
        fluxes = threshold * np.logspace(-2.0, 2.0, 81)
        phonons = cooled_occupation_cavity(mode, temperature, cavity, fluxes)
        for n_in, n_bar in zip(fluxes, phonons):
            lines.append(f"{n_in:.17g},{n_bar:.17g},{finesse:.17g}")
        lines.append("")
    target = outdir / "fig5.csv"
    target.write_text("\n".join(lines).rstrip("\n") + "\n", encoding="utf-8")
    return [target]


def _cmd_plotdata(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise ConfigError([f"manifest not found: {manifest_path}"])
    if args.fig not in FIG_TAGS:
        raise ConfigError(
            [f"unknown figure tag {args.fig!r}; available: "
             + ", ".join(FIG_TAGS)])
    outdir = Path(args.out) if args.out else manifest_path.parent / "plotdata"
    outdir.mkdir(parents=True, exist_ok=True)
    if args.fig == "fig4a":
        written = _plot_fig4a(manifest_path, outdir)
    else:
        written = _plot_fig5(manifest_path, outdir)
    for path in written:
        print(path)
    return 0


# --------------------------------------------------------------------------
# feasibility


def _cmd_feasibility(args) -> int:
    scenario = load_scenario(args.scenario)
    free_report, cavity_report = feasibility_reports(scenario)
    print(free_report.render())
    print()
    print(cavity_report.render())
    return 0


# --------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levisim",
        description="Levitated-microsphere cooldown simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a scenario end to end")
    p_run.add_argument("scenario", help="scenario file")
    p_run.add_argument("--out", default=None,
                       help="output directory (default: levisim-run-<seed>)")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scenario across parameter values")
    p_sweep.add_argument("scenario", help="scenario file")
    p_sweep.add_argument("--param", required=True, help="dotted scenario key")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values (empty for a dry summary)")
    p_sweep.add_argument("--out", default=None,
                         help="output directory (default: levisim-sweep-<seed>)")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_plot = sub.add_parser("plotdata", help="export figure-ready data files")
    p_plot.add_argument("manifest", help="run or sweep manifest")
    p_plot.add_argument("--fig", required=True,
                        help="figure tag: " + ", ".join(FIG_TAGS))
    p_plot.add_argument("--out", default=None,
                        help="output directory (default: <manifest dir>/plotdata)")
    p_plot.set_defaults(func=_cmd_plotdata)

    p_feas = sub.add_parser("feasibility",
                            help="print the ground-state feasibility report")
    p_feas.add_argument("scenario", help="scenario file")
    p_feas.set_defaults(func=_cmd_feasibility)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  {violation}", file=sys.stderr)
        return 2
    except (LockUnstableError, NearResonantDriveError,
            NoiselessMeasurementError) as exc:
        print(f"configuration error:\n  {exc}", file=sys.stderr)
        return 2
    except StageAbortError as exc:
        print(f"stage abort: {exc}", file=sys.stderr)
        return 3
    except (NumericError, CalibrationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except LevisimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
