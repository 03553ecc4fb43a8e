"""Digital twin of a magnetically levitated superconducting microsphere.

Covers the trap and oscillator model, the balanced interferometric readout
with its phase-tracking lock, staged feedback cooling, spectral analysis and
calibration, ground-state feasibility estimates, and an end-to-end scenario
pipeline with a command-line interface.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .control import (BandpassFeedback, ClosedLoopSpectra, DerivativeFeedback,
                      IntensityCoolingResult, PulsedQuadrantFeedback,
                      QuadrantCoolingResult, closed_loop_psd,
                      cooling_limit_occupation, measured_psd_with_squashing,
                      min_variance, optimal_gain, run_intensity_cooling,
                      run_pulsed_camera_cooling, variance_and_teff)
from .core import (OscillatorMode, ParticleSpec, TrapSpec, driven_response,
                   mode_frequencies, probe_force, trap_displacement,
                   trap_frequency)
from .dynamics import (OscState, SimConfig, SinusoidalDrive, Trajectory,
                       free_evolution_ensemble, oscillator_energy,
                       ring_up_energy, simulate, thermal_force_psd)
from .errors import (AntiDampingError, CalibrationError, ConfigError,
                     LevisimError, LockLossError, LockUnstableError,
                     NearResonantDriveError, NoiselessMeasurementError,
                     NumericError, ParticleLostError, StageAbortError,
                     UnstableRunError)
from .feasibility import (CavitySpec, DecoherenceRates, FeasibilityReport,
                          assess, cooled_occupation_cavity,
                          cooled_occupation_freespace, decoherence_rates,
                          energy_budget, excess_noise_bound, excess_floor_asd,
                          floor_occupation, ground_state_condition,
                          levitation_lifetime, lifetime_fit,
                          min_input_flux_cavity, min_input_flux_freespace,
                          optimal_intracavity_photons, photon_flux_to_power,
                          quench_temperature, thermal_decoherence_rate)
from .phaselock import (LockConfig, LockedInterferometer, LockState,
                        MirrorCalibration, closed_loop_fidelity,
                        gain_from_hz_per_volt, lock_step, loop_suppression,
                        max_tracking_amplitude, mirror_calibration_run,
                        normalized_error, suppression_ratio)
from .pipeline import (RunManifest, StageSummary, System, build_system,
                       design_error_psd, feasibility_reports, run_scenario)
from .scenario import (Scenario, default_scenario, load_scenario,
                       parse_scenario)
from .sensing import (BeamProfile, DetectorRecord, LaserSpec,
                      RoughnessProcess, camera_snapshot,
                      expected_intensity_count, expected_port_counts,
                      fringe_counts, imprecision_backaction,
                      interferometer_counts, intensity_counts,
                      roughness_excess_noise, shot_noise_psd)
from .spectra import (CalibrationResult, LorentzianFit, NoiseFloorEstimate,
                      RingUpFit, SpectrumEstimate, estimate_psd,
                      fit_lorentzian, fit_ring_up, noise_floor,
                      probe_tone_calibration, tone_power)
