"""End-to-end simulated cooldown: staged cooling, spectra, calibration, feasibility.

:func:`run_scenario` executes the stages named in the scenario in their fixed
physical order (camera, intensity, liftoff, interferometric, ringup), then the
requested analyses (floor, probe_tone, mirror, feasibility), and writes every
artifact plus a manifest with per-file checksums.  A rerun of the same
scenario reproduces every output byte except the manifest creation timestamp.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy.constants import hbar

from .control import (BandpassFeedback, PulsedQuadrantFeedback, min_variance,
                      optimal_gain, run_intensity_cooling,
                      run_pulsed_camera_cooling)
from .core import OscillatorMode, ParticleSpec, trap_frequency
from .dynamics import (OscState, SimConfig, SinusoidalDrive, simulate,
                       thermal_force_psd)
from .errors import ConfigError
from .feasibility import assess, thermal_decoherence_rate
from .phaselock import (LockConfig, LockedInterferometer, gain_from_hz_per_volt,
                        loop_suppression, mirror_calibration_run)
from .scenario import Scenario
from .sensing import (BeamProfile, LaserSpec, RoughnessProcess,
                      roughness_excess_noise, shot_noise_psd)
from .spectra import (SpectrumEstimate, estimate_psd, fit_lorentzian,
                      fit_ring_up, noise_floor, probe_tone_calibration,
                      tone_power)

ARTIFACT_VERSION = "1"
STAGE_ORDER = ("camera", "intensity", "liftoff", "interferometric", "ringup")
ANALYSIS_ORDER = ("floor", "probe_tone", "mirror", "feasibility")

# Transients (lock acquisition, feedback settling) discarded before spectra.
SETTLE_SECONDS = 2.0

# Fixed child-stream allocation from the scenario's root seed, so enabling or
# disabling one stage never changes the noise seen by another.
_SEED_CAMERA = 0
_SEED_INTENSITY_X = 1
_SEED_INTENSITY_Y = 2
_SEED_INTERFEROMETRIC = 3
_SEED_RINGUP = 4
_SEED_FLOOR = 5
_SEED_PROBE_BASE = 6          # one per probe current: 6, 7, 8
_SEED_MIRROR = 9
_N_SEEDS = 10


@dataclass(frozen=True)
class System:
    """Physical system assembled from a scenario: particle, modes, readout."""

    particle: ParticleSpec
    mode_z: OscillatorMode
    mode_x: OscillatorMode
    mode_y: OscillatorMode
    gradient: float                       # axial field gradient [T/m]
    field_per_ampere: float               # probe-coil field [T/A]
    laser: LaserSpec
    roughness: RoughnessProcess | None
    lock: LockConfig                      # operating phase lock
    record_rate: float
    lo_ratio: float

    def radial_mode(self, axis: str) -> OscillatorMode:
        return self.mode_x if axis == "x" else self.mode_y


def build_system(scenario: Scenario) -> System:
    """Assemble the simulated hardware from scenario values."""
    particle = ParticleSpec(
        density=scenario["particle.density"],
        radius=scenario["particle.radius"],
        t_c=scenario["particle.t_c"],
        h0=scenario["particle.h0"],
        roughness=scenario["particle.roughness_sigma"])
    f_z = scenario["trap.axial_frequency"]
    quality = scenario["particle.quality"]
    mode_z = OscillatorMode.from_frequency(particle.mass, f_z, quality)
    mode_r = OscillatorMode.from_frequency(particle.mass, f_z / 2.0, quality)

    wavelength = scenario["readout.wavelength"]
    n_det = scenario["readout.detected_flux"]
    laser = LaserSpec(wavelength=wavelength, n_in=n_det, n_det=n_det)

    sigma_r = scenario["particle.roughness_sigma"]
    roughness = None
    if sigma_r > 0.0:
        roughness = roughness_excess_noise(
            sigma_r,
            2.0 * math.pi * scenario["particle.rotation_rate"],
            scenario["particle.correlation_length"],
            radius=scenario["particle.radius"],
            wavelength=wavelength,
            target_floor=scenario["readout.target_floor"],
            reference_sigma_r=scenario["readout.reference_roughness"],
            anchor_frequency=f_z)

    lock = LockConfig(
        gain=gain_from_hz_per_volt(scenario["lock.gain_hz_per_volt"]),
        update_rate=scenario["lock.update_rate"],
        enabled=scenario["lock.enabled"])

    return System(
        particle=particle, mode_z=mode_z, mode_x=mode_r, mode_y=mode_r,
        gradient=f_z / trap_frequency(1.0, particle.density),
        field_per_ampere=scenario["trap.field_per_ampere"],
        laser=laser, roughness=roughness, lock=lock,
        record_rate=scenario["readout.record_rate"],
        lo_ratio=scenario["readout.lo_ratio"])


def design_error_psd(scenario: Scenario) -> float:
    """Two-sided PSD of the displacement readout noise [m^2/Hz].

    The roughness contribution is anchored so a reference-roughness sphere
    shows the target one-sided floor; it scales with (sigma_r / ref)^2.
    Counting noise adds the shot PSD of the detected flux.
    """
    ref = scenario["readout.reference_roughness"]
    target = scenario["readout.target_floor"]
    sigma_r = scenario["particle.roughness_sigma"]
    rough = (sigma_r / ref) ** 2 * target**2 / 2.0 if ref > 0 else 0.0
    shot = shot_noise_psd(scenario["readout.wavelength"],
                          scenario["readout.detected_flux"])
    return rough + shot


# --------------------------------------------------------------------------
# Manifest


@dataclass
class StageSummary:
    """Outcome record of one stage or analysis."""

    name: str
    status: str                   # completed | skipped
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status,
                "detail": _jsonable(self.detail)}


@dataclass
class RunManifest:
    """Checksummed inventory of one scenario run."""

    scenario_sha256: str
    artifact_version: str
    created: str                  # ISO timestamp; the only nondeterministic byte
    seed: int
    label: str
    stages: list = field(default_factory=list)
    analyses: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "scenario_sha256": self.scenario_sha256,
            "artifact_version": self.artifact_version,
            "created": self.created,
            "seed": self.seed,
            "label": self.label,
            "stages": self.stages,
            "analyses": _jsonable(self.analyses),
            "files": self.files,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> RunManifest:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(scenario_sha256=data["scenario_sha256"],
                   artifact_version=data["artifact_version"],
                   created=data["created"], seed=data["seed"],
                   label=data["label"], stages=data["stages"],
                   analyses=data["analyses"], files=data["files"])


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    return value


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_csv(path: Path, header: str, columns) -> None:
    np.savetxt(path, np.column_stack(columns), delimiter=",",
               header=header, comments="", fmt="%.17g")


def _write_psd_csv(path: Path, spec: SpectrumEstimate) -> None:
    _write_csv(path, "f_Hz,psd,asd",
               (spec.frequencies, spec.psd, np.sqrt(spec.psd)))


# --------------------------------------------------------------------------
# Stages


@dataclass
class _Context:
    """Mechanical state handed from stage to stage."""

    radial: dict = field(default_factory=lambda: {"x": (0.0, 0.0),
                                                  "y": (0.0, 0.0)})
    axial: tuple = (0.0, 0.0)


def _stage_camera(scenario, system, ctx, seed_seq, outdir) -> dict:
    cfg = PulsedQuadrantFeedback(
        kick_impulse=scenario["stages.camera.kick_impulse"],
        iterations=scenario["stages.camera.iterations"],
        separation=scenario["stages.camera.separation"],
        wait=scenario["stages.camera.wait"])
    amp0 = scenario["stages.camera.initial_amplitude"]
    # One axis starts at the turning point, the other at peak speed.
    result = run_pulsed_camera_cooling(
        (system.mode_x, system.mode_y),
        scenario["environment.bath_temperature"],
        initial_positions=(amp0, 0.0),
        initial_velocities=(0.0, amp0 * system.mode_y.omega0),
        cfg=cfg, rng=np.random.default_rng(seed_seq),
        pixel_pitch=scenario["stages.camera.pixel_pitch"],
        centroid_noise=scenario["stages.camera.centroid_noise"])
    ctx.radial["x"] = (result.final_positions[0], result.final_velocities[0])
    ctx.radial["y"] = (result.final_positions[1], result.final_velocities[1])

    n = len(result.amplitude_history)
    _write_csv(outdir / "stages" / "camera_history.csv",
               "iteration,amplitude_x,amplitude_y,estimated_x,estimated_y",
               (np.arange(n), result.amplitude_history[:, 0],
                result.amplitude_history[:, 1],
                result.estimated_history[:, 0],
                result.estimated_history[:, 1]))
    rms = result.rms_displacement()
    return {
        "amplitude_before_m": {"x": float(result.amplitude_history[0, 0]),
                               "y": float(result.amplitude_history[0, 1])},
        "amplitude_after_m": {"x": float(result.amplitude_history[-1, 0]),
                              "y": float(result.amplitude_history[-1, 1])},
        "rms_after_m": {"x": float(rms[0]), "y": float(rms[1])},
        "kicks_applied": result.kicks_applied,
        "kicks_skipped": result.kicks_skipped,
        "iterations": cfg.iterations,
    }


def _stage_intensity(scenario, system, ctx, seed_seqs, outdir) -> dict:
    offset = scenario["stages.intensity.offset"]
    fb = BandpassFeedback(center=system.mode_x.f0,
                          bandwidth=scenario["stages.intensity.bandwidth"],
                          gain=scenario["stages.intensity.gain"])
    detail = {}
    for axis, seed_seq in (("x", seed_seqs[0]), ("y", seed_seqs[1])):
        other = "y" if axis == "x" else "x"
        idx = 0 if axis == "x" else 1
        beam_offset = (offset, 0.0) if axis == "x" else (0.0, offset)
        profile = BeamProfile(offset=beam_offset,
                              fwhm=scenario["stages.intensity.fwhm"],
                              peak_flux=scenario["stages.intensity.peak_flux"])
        result = run_intensity_cooling(
            system.radial_mode(axis),
            scenario["environment.bath_temperature"],
            ctx.radial[axis], profile, fb,
            scenario["stages.intensity.duration"],
            scenario["stages.intensity.sample_rate"],
            np.random.default_rng(seed_seq),
            axis_index=idx,
            spectator_mode=system.radial_mode(other),
            spectator_state=ctx.radial[other])
        ctx.radial[axis] = result.final_state
        ctx.radial[other] = result.spectator_state
        _write_csv(outdir / "stages" / f"intensity_{axis}.csv",
                   "period,rms_true,rms_measured",
                   (np.arange(len(result.period_rms_true)),
                    result.period_rms_true, result.period_rms_measured))
        detail[axis] = {
            "rms_before_m": float(result.period_rms_true[0]),
            "rms_after_m": float(result.final_rms),
            "periods": int(len(result.period_rms_true)),
            "force_saturations": int(result.saturation_count),
        }
    return detail


def _stage_liftoff(scenario, system, ctx, outdir) -> dict:
    # Contact and lift-off mechanics are not modeled; the stage exists so the
    # run log mirrors the physical sequence.
    return {"note": "no-op stage; lift-off contact physics not modeled"}


def _interferometer(system, lock_gain, seed_seq) -> LockedInterferometer:
    lock = LockConfig(gain=lock_gain, update_rate=system.lock.update_rate,
                      enabled=system.lock.enabled)
    return LockedInterferometer(system.laser, lock, system.record_rate,
                                np.random.default_rng(seed_seq),
                                roughness=system.roughness,
                                lo_ratio=system.lo_ratio)


def _locked_axial_run(scenario, system, seed_seq, duration, lock_gain,
                      gamma_fb, initial_state, drives=()):
    """Shared axial run: phase-locked sensor, optional bandpass feedback."""
    sub = seed_seq.spawn(2)
    sensor = _interferometer(system, lock_gain, sub[1])
    controller = None
    if gamma_fb > 0.0:
        fb = BandpassFeedback(
            center=system.mode_z.f0,
            bandwidth=scenario["stages.interferometric.bandwidth"],
            gain=gamma_fb)
        controller = fb.controller(system.mode_z, system.record_rate)
    config = SimConfig(dt=1.0 / system.record_rate,
                       sample_rate=system.record_rate,
                       duration=duration,
                       seed=int(sub[0].generate_state(1)[0]),
                       modes=(system.mode_z,),
                       bath_temperature=scenario["environment.bath_temperature"],
                       axes=("z",))
    traj = simulate(config, OscState((initial_state[0],), (initial_state[1],)),
                    controller, tuple(drives), sensor, "z")
    return traj, sensor, controller


def _stage_interferometric(scenario, system, ctx, seed_seq, outdir) -> dict:
    amp0 = scenario["stages.interferometric.initial_amplitude"]
    gamma_fb = scenario["stages.interferometric.gain"]
    traj, sensor, controller = _locked_axial_run(
        scenario, system, seed_seq,
        scenario["stages.interferometric.duration"],
        scenario["stages.interferometric.lock_gain"],
        gamma_fb, (amp0, 0.0))
    ctx.axial = (float(traj.x[-1, 0]), float(traj.v[-1, 0]))

    fs = system.record_rate
    skip = int(SETTLE_SECONDS * fs)
    meas = traj.measurement[skip:]
    spec = estimate_psd(meas, fs, nperseg=scenario["analysis.psd_nperseg"])
    _write_psd_csv(outdir / "stages" / "interferometric_psd.csv", spec)

    tail = traj.x[int(0.8 * len(traj.t)):, 0]
    rms_after = float(np.sqrt(np.mean(tail**2)))
    s_fn = thermal_force_psd(system.mode_z,
                             scenario["environment.bath_temperature"])
    s_eps = design_error_psd(scenario)
    # Closed-loop linewidth check on the true displacement spectrum.
    spec_true = estimate_psd(traj.x[skip:, 0], fs,
                             nperseg=scenario["analysis.psd_nperseg"])
    f0 = system.mode_z.f0
    fit = fit_lorentzian(spec_true, (max(1.0, f0 - 60.0), f0 + 60.0))
    return {
        "rms_before_m": amp0 / math.sqrt(2.0),
        "rms_after_m": rms_after,
        "predicted_min_rms_m": math.sqrt(
            min_variance(s_fn, s_eps, system.mode_z)),
        "gain_applied": gamma_fb,
        "optimal_gain": optimal_gain(s_fn, s_eps, system.mode_z),
        "fitted_linewidth_hz": fit.fwhm,
        "expected_linewidth_hz": (system.mode_z.gamma + gamma_fb)
                                 / (2.0 * math.pi),
        "force_saturations": int(controller.saturation_count),
        "lock_slew_saturations": int(sensor.slew_saturation_count),
    }


def _stage_ringup(scenario, system, ctx, seed_seq, outdir) -> dict:
    traj, sensor, _ = _locked_axial_run(
        scenario, system, seed_seq, scenario["stages.ringup.duration"],
        scenario["stages.interferometric.lock_gain"], 0.0, ctx.axial)
    ctx.axial = (float(traj.x[-1, 0]), float(traj.v[-1, 0]))

    fs = system.record_rate
    window = scenario["stages.ringup.window"]
    n_win = int(round(window * fs))
    meas = traj.measurement
    n_windows = len(meas) // n_win
    occupations = np.empty(n_windows)
    t_mid = np.empty(n_windows)
    scale = system.mode_z.m * system.mode_z.omega0 / hbar
    for i in range(n_windows):
        block = meas[i * n_win:(i + 1) * n_win]
        occupations[i] = scale * np.var(block)
        t_mid[i] = (i + 0.5) * window
    _write_csv(outdir / "stages" / "ringup.csv", "t_s,occupation",
               (t_mid, occupations))

    fit = fit_ring_up(t_mid, occupations)
    expected = thermal_decoherence_rate(
        system.mode_z, scenario["environment.bath_temperature"])
    return {
        "fitted_rate_phonons_per_s": fit.rate,
        "rate_uncertainty": fit.rate_uncertainty,
        "expected_rate_phonons_per_s": expected,
        "ratio_to_expected": fit.rate / expected,
        "changepoint_s": fit.changepoint,
        "final_occupation": float(occupations[-1]),
        "windows": int(n_windows),
    }


# --------------------------------------------------------------------------
# Analyses


def _analysis_floor(scenario, system, ctx, seed_seq, outdir) -> dict:
    traj, sensor, _ = _locked_axial_run(
        scenario, system, seed_seq, scenario["analysis.floor_duration"],
        system.lock.gain, scenario["analysis.calibration_gain"], ctx.axial)
    fs = system.record_rate
    skip = int(SETTLE_SECONDS * fs)
    spec = estimate_psd(traj.measurement[skip:], fs,
                        nperseg=scenario["analysis.floor_nperseg"])
    band = tuple(scenario["analysis.floor_band"])
    est = noise_floor(spec, band)
    _write_psd_csv(outdir / "analysis" / "floor_psd.csv", spec)

    target = scenario["readout.target_floor"]
    detail = {
        "floor_asd_m_per_sqrthz": est.floor_asd,
        "floor_psd_m2_per_hz": est.floor_psd,
        "stat_uncertainty_rel": est.stat_uncertainty,
        "band_hz": list(band),
        "notch_hz": list(est.notch) if est.notch else None,
        "bins": est.n_bins,
        "target_asd_m_per_sqrthz": target,
        "ratio_to_target": est.floor_asd / target if target > 0 else None,
    }
    lines = ["noise floor analysis",
             f"  band: {band[0]:.17g} to {band[1]:.17g} Hz"]
    if est.notch:
        lines.append(f"  notched resonance: {est.notch[0]:.17g} to "
                     f"{est.notch[1]:.17g} Hz")
    lines += [f"  bins used: {est.n_bins}",
              f"  floor PSD: {est.floor_psd:.17g} m^2/Hz",
              f"  floor ASD: {est.floor_asd:.17g} m/sqrt(Hz)",
              f"  relative statistical uncertainty: {est.stat_uncertainty:.17g}",
              f"  target ASD: {target:.17g} m/sqrt(Hz)",
              f"  ratio to target: {est.floor_asd / target:.17g}"]
    (outdir / "analysis" / "floor.txt").write_text("\n".join(lines) + "\n",
                                                   encoding="utf-8")
    return detail


def _tone_rms_from_psd(spec: SpectrumEstimate, frequency: float,
                       half_width_rbw: float = 2.0, guard_rbw: float = 4.0,
                       sideband_rbw: float = 40.0) -> tuple[float, float]:
    """Floor-subtracted RMS tone amplitude from a PSD estimate.

    Integrates the tone window, then subtracts the sideband-median floor
    times the window width (cal tones sit only a few times above the floor,
    so the raw window power overestimates the amplitude).
    """
    power = tone_power(spec, frequency, half_width_rbw)
    dist = np.abs(spec.frequencies - frequency)
    sel = (dist > guard_rbw * spec.rbw) & (dist <= sideband_rbw * spec.rbw)
    floor = float(np.median(spec.psd[sel]))
    half = half_width_rbw * spec.rbw
    in_window = ((spec.frequencies >= frequency - half)
                 & (spec.frequencies <= frequency + half))
    net = power - floor * int(np.count_nonzero(in_window)) * spec.df
    return math.sqrt(max(net, 0.0)), floor


def _analysis_probe_tone(scenario, system, ctx, seed_seqs, outdir) -> dict:
    currents = tuple(scenario["analysis.probe_currents"])
    frequencies = tuple(scenario["analysis.probe_frequencies"])
    f_ref = scenario["analysis.drive_frequency"]
    fs = system.record_rate
    skip = int(SETTLE_SECONDS * fs)
    gamma_fb = scenario["analysis.calibration_gain"]

    responses = []
    raw_table = []
    for current, seed_seq in zip(currents, seed_seqs):
        drives = []
        for f_dr in frequencies:
            displacement = system.field_per_ampere * current / system.gradient
            force = system.mode_z.m * system.mode_z.omega0**2 * displacement
            drives.append(SinusoidalDrive(amplitude=force, frequency=f_dr))
        traj, sensor, _ = _locked_axial_run(
            scenario, system, seed_seq,
            scenario["analysis.calibration_duration"], system.lock.gain,
            gamma_fb, ctx.axial, drives)
        spec = estimate_psd(sensor.channel("error")[skip:], fs,
                            nperseg=scenario["analysis.calibration_nperseg"])
        for f_dr in frequencies:
            u_rms, floor = _tone_rms_from_psd(spec, f_dr)
            # Tones at different frequencies see different loop suppression;
            # rescaling to the reference frequency lets one pooled factor
            # describe them all (and the pooling consistency check then
            # validates the loop response model).
            scale = (loop_suppression(system.lock.gain, f_dr)
                     / loop_suppression(system.lock.gain, f_ref))
            responses.append((f_dr, current, u_rms * scale))
            raw_table.append((f_dr, current, u_rms, floor))

    cal = probe_tone_calibration(responses, system.field_per_ampere,
                                 system.mode_z, system.gradient,
                                 system.laser.wavelength)
    detail = {
        "suppression": cal.suppression,
        "suppression_uncertainty": cal.uncertainty * 4.0 * math.pi
                                   / system.laser.wavelength,
        "factor_m_per_unit": cal.factor,
        "factor_uncertainty": cal.uncertainty,
        "reference_frequency_hz": f_ref,
        "per_frequency": {f"{f:g}": [fac, sig]
                          for f, (fac, sig) in cal.per_frequency.items()},
        "tone_table": [list(row) for row in raw_table],
    }
    return detail


def _analysis_mirror(scenario, system, seed_seq, outdir) -> dict:
    cal = mirror_calibration_run(
        scenario["analysis.mirror_amplitude"],
        scenario["analysis.drive_frequency"],
        system.lock, system.laser,
        scenario["analysis.mirror_duration"], system.record_rate,
        int(seed_seq.generate_state(1)[0]), lo_ratio=system.lo_ratio)
    return {
        "suppression": cal.suppression,
        "suppression_uncertainty": cal.uncertainty,
        "drive_frequency_hz": cal.drive_frequency,
        "commanded_rms_m": cal.true_rms,
        "measured_residual_rms_m": cal.measured_rms,
        "predicted_suppression": loop_suppression(system.lock.gain,
                                                  cal.drive_frequency),
    }


def _write_calibration_txt(outdir, probe: dict | None, mirror: dict | None,
                           agreement: dict | None) -> None:
    lines = ["readout loop-suppression calibration"]
    if probe:
        lines.append(f"  probe tones, pooled at "
                     f"{probe['reference_frequency_hz']:.17g} Hz: "
                     f"{probe['suppression']:.17g} +/- "
                     f"{probe['suppression_uncertainty']:.17g}")
        for key, (fac, sig) in probe["per_frequency"].items():
            lines.append(f"    {key} Hz: factor {fac:.17g} +/- {sig:.17g} "
                         "m/unit")
    if mirror:
        lines.append(f"  reference mirror at "
                     f"{mirror['drive_frequency_hz']:.17g} Hz: "
                     f"{mirror['suppression']:.17g} +/- "
                     f"{mirror['suppression_uncertainty']:.17g}")
        lines.append(f"    commanded RMS {mirror['commanded_rms_m']:.17g} m, "
                     f"residual RMS {mirror['measured_residual_rms_m']:.17g} m")
    if agreement:
        verdict = "agree" if agreement["agree"] else "DISAGREE"
        lines.append(f"  methods {verdict}: |difference| "
                     f"{agreement['difference']:.17g} vs combined "
                     f"{agreement['combined_uncertainty']:.17g} (2 sigma)")
    (outdir / "analysis" / "calibration.txt").write_text(
        "\n".join(lines) + "\n", encoding="utf-8")


def feasibility_reports(scenario: Scenario, system: System | None = None):
    """Free-space and cavity feasibility reports for a scenario.

    The free-space assessment runs at the cryostat temperature with the
    operating readout wavelength and includes the quench thermal budget; the
    cavity assessment uses the dedicated feasibility parameters.
    """
    if system is None:
        system = build_system(scenario)
    mode = OscillatorMode.from_frequency(system.particle.mass,
                                         scenario["feasibility.frequency"],
                                         scenario["particle.quality"])
    free_report = assess(
        mode, scenario["environment.cryostat_temperature"],
        scenario["readout.wavelength"], scenario["feasibility.eta_freespace"],
        particle=system.particle,
        field=scenario["feasibility.quench_field"],
        substrate_temperature=scenario["feasibility.substrate_temperature"],
        absorbed_power=scenario["feasibility.absorbed_power"])
    cavity_report = assess(
        mode, scenario["feasibility.temperature"],
        scenario["feasibility.wavelength"], scenario["feasibility.eta"],
        finesse=scenario["feasibility.finesse"])
    return free_report, cavity_report


def _analysis_feasibility(scenario, system, outdir) -> dict:
    free_report, cavity_report = feasibility_reports(scenario, system)
    text = (free_report.render() + "\n\n" + cavity_report.render() + "\n")
    (outdir / "analysis" / "feasibility.txt").write_text(text,
                                                         encoding="utf-8")
    quench = free_report.quench
    return {
        "free_space": {
            "threshold_flux_per_s": free_report.n_in_freespace,
            "threshold_power_w": free_report.power_freespace,
            "satisfied": free_report.satisfied,
            "margin": free_report.margin,
        },
        "cavity": {
            "threshold_flux_per_s": cavity_report.n_in_cavity,
            "threshold_power_w": cavity_report.power_cavity,
            "finesse": cavity_report.finesse,
            "excess_rms_asd_m_per_sqrthz": cavity_report.excess_rms_asd,
            "excess_peak_asd_m_per_sqrthz": cavity_report.excess_peak_asd,
        },
        "quench": None if quench is None else {
            "temperature_k": quench.t_quench,
            "energy_j": {k: float(v) for k, v in quench.delta_e.items()},
            "lifetime_s": quench.lifetime,
        },
    }


# --------------------------------------------------------------------------
# Driver


def run_scenario(scenario: Scenario, outdir) -> RunManifest:
    """Execute one scenario end to end and write its artifact tree."""
    requested_stages = tuple(scenario["run.stages"])
    requested_analyses = tuple(scenario["run.analyses"])
    problems = [f"unknown stage {name!r}; valid stages: "
                + ", ".join(STAGE_ORDER)
                for name in requested_stages if name not in STAGE_ORDER]
    problems += [f"unknown analysis {name!r}; valid analyses: "
                 + ", ".join(ANALYSIS_ORDER)
                 for name in requested_analyses if name not in ANALYSIS_ORDER]
    if problems:
        raise ConfigError(problems)

    outdir = Path(outdir)
    (outdir / "stages").mkdir(parents=True, exist_ok=True)
    (outdir / "analysis").mkdir(parents=True, exist_ok=True)
    (outdir / "scenario.canonical").write_text(scenario.canonical(),
                                              encoding="utf-8")

    system = build_system(scenario)
    children = np.random.SeedSequence(scenario.seed).spawn(_N_SEEDS)
    ctx = _Context()
    # Without the interferometric stage the axial motion starts uncooled.
    if "interferometric" not in requested_stages:
        ctx.axial = (scenario["stages.interferometric.initial_amplitude"], 0.0)

    stages: list[StageSummary] = []
    for name in STAGE_ORDER:
        if name not in requested_stages:
            stages.append(StageSummary(name, "skipped"))
            continue
        if name == "camera":
            detail = _stage_camera(scenario, system, ctx,
                                   children[_SEED_CAMERA], outdir)
        elif name == "intensity":
            detail = _stage_intensity(scenario, system, ctx,
                                      (children[_SEED_INTENSITY_X],
                                       children[_SEED_INTENSITY_Y]), outdir)
        elif name == "liftoff":
            detail = _stage_liftoff(scenario, system, ctx, outdir)
        elif name == "interferometric":
            detail = _stage_interferometric(scenario, system, ctx,
                                            children[_SEED_INTERFEROMETRIC],
                                            outdir)
        else:
            detail = _stage_ringup(scenario, system, ctx,
                                   children[_SEED_RINGUP], outdir)
        stages.append(StageSummary(name, "completed", detail))

    analyses: dict[str, dict] = {}
    for name in ANALYSIS_ORDER:
        if name not in requested_analyses:
            continue
        if name == "floor":
            analyses[name] = _analysis_floor(scenario, system, ctx,
                                             children[_SEED_FLOOR], outdir)
        elif name == "probe_tone":
            seqs = [children[_SEED_PROBE_BASE + i]
                    for i in range(len(scenario["analysis.probe_currents"]))]
            analyses[name] = _analysis_probe_tone(scenario, system, ctx,
                                                  seqs, outdir)
        elif name == "mirror":
            analyses[name] = _analysis_mirror(scenario, system,
                                              children[_SEED_MIRROR], outdir)
        else:
            analyses[name] = _analysis_feasibility(scenario, system, outdir)

    if "probe_tone" in analyses and "mirror" in analyses:
        diff = abs(analyses["probe_tone"]["suppression"]
                   - analyses["mirror"]["suppression"])
        combined = 2.0 * math.hypot(
            analyses["probe_tone"]["suppression_uncertainty"],
            analyses["mirror"]["suppression_uncertainty"])
        analyses["calibration_agreement"] = {
            "difference": diff,
            "combined_uncertainty": combined,
            "agree": bool(diff <= combined),
        }
    if "probe_tone" in analyses or "mirror" in analyses:
        _write_calibration_txt(outdir, analyses.get("probe_tone"),
                               analyses.get("mirror"),
                               analyses.get("calibration_agreement"))

    files = {}
    for path in sorted(outdir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            files[path.relative_to(outdir).as_posix()] = _sha256(path)

    manifest = RunManifest(
        scenario_sha256=scenario.sha256,
        artifact_version=ARTIFACT_VERSION,
        created=datetime.now(timezone.utc).isoformat(),
        seed=scenario.seed,
        label=scenario["run.label"],
        stages=[s.to_dict() for s in stages],
        analyses=analyses,
        files=files)
    manifest.save(outdir / "manifest.json")
    return manifest
