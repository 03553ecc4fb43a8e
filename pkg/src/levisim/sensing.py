"""Optical measurement models: interferometric photon counting, intensity
readout of radial motion, idealized camera snapshots, and the associated
noise-budget formulas.

The interferometer mixes the light reflected off the particle (detected signal
flux ``n_det``) with a strong local oscillator on a balanced detector pair.
Displacement z enters as the reflection phase 4 pi z / lambda, so one fringe
corresponds to lambda/2 of travel and z = lambda/8 to a phase of pi/2.

PSD convention: all ``*_psd`` functions return two-sided densities in
ordinary-frequency normalization [unit^2/Hz]; user-facing one-sided amplitudes
are sqrt(2 S).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import hbar
from scipy.signal import lfilter

from .errors import ConfigError, ParticleLostError


def shot_noise_psd(wavelength: float, n_det: float) -> float:
    """Photon-shot-noise-limited displacement PSD of the interferometric readout.

    Parameters
    ----------
    wavelength : float
        Laser wavelength [m].
    n_det : float
        Detected signal photon flux [1/s].

    Returns
    -------
    float
        Two-sided displacement PSD lambda^2 / (64 pi^2 n_det) [m^2/Hz].
        The one-sided amplitude floor is sqrt(2 S).
    """
    if n_det <= 0:
        raise ValueError(f"n_det must be > 0, got {n_det}")
    if wavelength <= 0:
        raise ValueError(f"wavelength must be > 0, got {wavelength}")
    return wavelength**2 / (64.0 * math.pi**2 * n_det)


def imprecision_backaction(k: float, n_in: float) -> tuple[float, float]:
    """Imprecision and back-action PSD pair of a photon displacement measurement.

    Returns ``(S_xx_imp, S_Fba)`` with S_xx_imp = 1/(16 k^2 n_in) [m^2/Hz] and
    S_Fba = 4 hbar^2 k^2 n_in [N^2/Hz]; their product is hbar^2/4 (the standard
    quantum limit) for every input.
    """
    if k <= 0 or n_in <= 0:
        raise ValueError("k and n_in must be > 0")
    s_imp = 1.0 / (16.0 * k**2 * n_in)
    s_ba = 4.0 * hbar**2 * k**2 * n_in
    return s_imp, s_ba


@dataclass(frozen=True)
class LaserSpec:
    """Readout laser: wavelength, input flux, and detected signal flux.

    ``n_det`` is the photon flux scattered back from the particle that reaches
    the detectors; it can be far below the input flux ``n_in``.
    """

    wavelength: float
    n_in: float
    n_det: float

    def __post_init__(self):
        problems = []
        if self.wavelength <= 0:
            problems.append(f"wavelength must be > 0, got {self.wavelength}")
        if self.n_in <= 0:
            problems.append(f"n_in must be > 0, got {self.n_in}")
        if self.n_det <= 0:
            problems.append(f"n_det must be > 0, got {self.n_det}")
        elif self.n_det > self.n_in:
            problems.append(f"n_det ({self.n_det:g}) must not exceed n_in ({self.n_in:g})")
        if problems:
            raise ConfigError(problems)

    @property
    def k(self) -> float:
        """Wavenumber 2 pi / lambda [1/m]."""
        return 2.0 * math.pi / self.wavelength


@dataclass(frozen=True)
class DetectorRecord:
    """One counting bin of the balanced detector pair."""

    timestamp: float
    count_sum: int
    count_diff: int
    bin: float

    def __post_init__(self):
        if self.bin <= 0:
            raise ConfigError(f"bin must be > 0, got {self.bin}")
        if abs(self.count_diff) > self.count_sum:
            raise ConfigError(
                f"|count_diff| = {abs(self.count_diff)} exceeds count_sum = {self.count_sum}")


@dataclass(frozen=True)
class NoiseBudget:
    """Displacement/force noise budget of one measurement chain."""

    s_xx_imp: float          # imprecision displacement PSD [m^2/Hz]
    s_fba: float             # back-action force PSD [N^2/Hz]
    s_excess: float          # excess displacement noise beyond shot noise [m^2/Hz]
    s_fth: float             # thermal force PSD [N^2/Hz]
    eta_det: float           # detection efficiency

    def __post_init__(self):
        problems = [f"{name} must be >= 0, got {val}"
                    for name, val in (("s_xx_imp", self.s_xx_imp), ("s_fba", self.s_fba),
                                      ("s_excess", self.s_excess), ("s_fth", self.s_fth))
                    if val < 0]
        if not 0.0 < self.eta_det <= 1.0:
            problems.append(f"eta_det must be in (0, 1], got {self.eta_det}")
        if problems:
            raise ConfigError(problems)


def phase_of(z: float, wavelength: float) -> float:
    """Interferometer phase of a displacement z in reflection: 4 pi z / lambda."""
    return 4.0 * math.pi * z / wavelength


def expected_port_counts(z: float, phase_ref: float, laser: LaserSpec,
                         roughness_phase: float, bin: float,
                         lo_ratio: float = 50.0) -> tuple[float, float]:
    """Expected counts at the two output ports for one bin.

    The signal arm (flux n_det) beats against a local oscillator of flux
    lo_ratio * n_det; the interference term is 2 sqrt(n_lo n_s) sin(psi) with
    psi = 4 pi z / lambda + phase_ref + roughness_phase.  The total expected
    count (sum of both ports) is independent of z.
    """
    n_s = laser.n_det
    n_lo = lo_ratio * n_s
    psi = phase_of(z, laser.wavelength) + phase_ref + roughness_phase
    cross = 2.0 * math.sqrt(n_lo * n_s) * math.sin(psi)
    half = 0.5 * bin
    return half * (n_lo + n_s + cross), half * (n_lo + n_s - cross)


def fringe_counts(laser: LaserSpec, bin: float, lo_ratio: float = 50.0) -> float:
    """Expected count_diff per bin at full fringe contrast (sin psi = 1)."""
    return 2.0 * math.sqrt(lo_ratio) * laser.n_det * bin


def _draw_counts(mu: float, rng: np.random.Generator, gaussian_threshold: float) -> int:
    if mu < gaussian_threshold:
        return int(rng.poisson(mu))
    return max(0, round(mu + math.sqrt(mu) * rng.standard_normal()))


def interferometer_counts(z: float, phase_ref: float, laser: LaserSpec,
                          roughness_phase: float, bin: float,
                          rng: np.random.Generator, *, timestamp: float = 0.0,
                          lo_ratio: float = 50.0,
                          gaussian_threshold: float = 1000.0) -> DetectorRecord:
    """Draw one counting bin of the interferometric readout.

    Counts are independent Poisson draws per port; above ``gaussian_threshold``
    expected counts per port a rounded Gaussian is used instead.
    """
    if bin <= 0:
        raise ValueError(f"bin must be > 0, got {bin}")
    mu_p, mu_m = expected_port_counts(z, phase_ref, laser, roughness_phase, bin, lo_ratio)
    c_p = _draw_counts(mu_p, rng, gaussian_threshold)
    c_m = _draw_counts(mu_m, rng, gaussian_threshold)
    return DetectorRecord(timestamp=timestamp, count_sum=c_p + c_m,
                          count_diff=c_p - c_m, bin=bin)


class RoughnessProcess:
    """Apparent interferometer phase noise from surface roughness and rotation.

    Modeled as an exponentially correlated (first-order Markov) stationary
    phase process with RMS ``sigma_theta`` [rad] and correlation time ``tau_c``
    [s].  Use :func:`roughness_excess_noise` to build one from surface
    parameters.
    """

    def __init__(self, sigma_theta: float, tau_c: float):
        if sigma_theta < 0 or tau_c <= 0:
            raise ConfigError(f"need sigma_theta >= 0 and tau_c > 0, "
                              f"got {sigma_theta}, {tau_c}")
        self.sigma_theta = sigma_theta
        self.tau_c = tau_c

    @classmethod
    def zero(cls) -> RoughnessProcess:
        return cls(0.0, 1.0)

    def phase_psd(self, f: float) -> float:
        """Two-sided PSD of the phase process [rad^2/Hz]."""
        return 2.0 * self.sigma_theta**2 * self.tau_c / (1.0 + (2.0 * math.pi * f * self.tau_c)**2)

    def displacement_psd(self, f: float, wavelength: float) -> float:
        """Two-sided apparent-displacement PSD [m^2/Hz] at frequency f."""
        return (wavelength / (4.0 * math.pi))**2 * self.phase_psd(f)

    def initial_phase(self, rng: np.random.Generator) -> float:
        return self.sigma_theta * rng.standard_normal()

    def step_coefficients(self, dt: float) -> tuple[float, float]:
        """Exact one-step update (a, s): theta' = a theta + s xi, xi ~ N(0,1)."""
        a = math.exp(-dt / self.tau_c)
        return a, self.sigma_theta * math.sqrt(max(0.0, 1.0 - a * a))

    def sample_path(self, n: int, dt: float, rng: np.random.Generator) -> np.ndarray:
        """Stationary path of n samples spaced dt, exact discretization."""
        if self.sigma_theta == 0.0:
            return np.zeros(n)
        a, s = self.step_coefficients(dt)
        noise = s * rng.standard_normal(n)
        zi = np.array([a * self.initial_phase(rng)])
        path, _ = lfilter([1.0], [1.0, -a], noise, zi=zi)
        return path


def roughness_excess_noise(sigma_r: float, rotation_rate: float,
                           correlation_length: float, *, radius: float = 50e-6,
                           wavelength: float = 637e-9,
                           target_floor: float = 955e-12,
                           reference_sigma_r: float = 50e-9,
                           anchor_frequency: float = 160.0) -> RoughnessProcess:
    """Build the roughness phase process for a rotating rough sphere.

    The correlation time is the time the rotating surface takes to move one
    correlation length through the beam: tau_c = l_c / (radius * rotation_rate)
    with ``rotation_rate`` in rad/s.  The amplitude is anchored so that a
    sphere with ``reference_sigma_r`` roughness produces an apparent one-sided
    displacement floor of ``target_floor`` [m/sqrt(Hz)] at ``anchor_frequency``,
    and scales linearly with ``sigma_r`` from there; sigma_r = 0 gives the
    identically zero process.
    """
    if sigma_r < 0:
        raise ValueError(f"sigma_r must be >= 0, got {sigma_r}")
    if rotation_rate <= 0 or correlation_length <= 0 or radius <= 0:
        raise ValueError("rotation_rate, correlation_length and radius must be > 0")
    tau_c = correlation_length / (radius * rotation_rate)
    # Solve 2 sigma_theta^2 tau_c (lambda/4pi)^2 / (1 + (2 pi f0 tau_c)^2) = target^2 / 2
    s_target = 0.5 * target_floor**2
    knee = 1.0 + (2.0 * math.pi * anchor_frequency * tau_c)**2
    sigma_cal = math.sqrt(s_target * knee / (2.0 * tau_c)) * (4.0 * math.pi / wavelength)
    return RoughnessProcess(sigma_theta=sigma_cal * (sigma_r / reference_sigma_r),
                            tau_c=tau_c)


@dataclass(frozen=True)
class BeamProfile:
    """Gaussian detection beam aimed near the trap center, for intensity readout."""

    offset: tuple[float, float]      # beam-center offset from trap center, per radial axis [m]
    fwhm: float                      # full-width at half-maximum [m]
    peak_flux: float                 # detected flux with the particle at beam center [1/s]

    def __post_init__(self):
        problems = []
        if self.fwhm <= 0:
            problems.append(f"fwhm must be > 0, got {self.fwhm}")
        if self.peak_flux < 0:
            problems.append(f"peak_flux must be >= 0, got {self.peak_flux}")
        if problems:
            raise ConfigError(problems)

    @property
    def sigma(self) -> float:
        """Gaussian width: fwhm / (2 sqrt(2 ln 2)).  The steepest slope sits at r = sigma."""
        return self.fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def expected_intensity_count(radial_pos: tuple[float, float], profile: BeamProfile,
                             bin: float) -> float:
    """Expected detected count for one bin given the particle's radial position."""
    dx = radial_pos[0] - profile.offset[0]
    dy = radial_pos[1] - profile.offset[1]
    r2 = dx * dx + dy * dy
    return profile.peak_flux * bin * math.exp(-r2 / (2.0 * profile.sigma**2))


def intensity_counts(radial_pos: tuple[float, float], profile: BeamProfile,
                     bin: float, rng: np.random.Generator,
                     gaussian_threshold: float = 1000.0) -> int:
    """Draw one sum-channel count of the intensity readout (Poisson statistics)."""
    if bin <= 0:
        raise ValueError(f"bin must be > 0, got {bin}")
    return _draw_counts(expected_intensity_count(radial_pos, profile, bin),
                        rng, gaussian_threshold)


def camera_snapshot(radial_pos: tuple[float, float], pixel_pitch: float,
                    centroid_noise: float, rng: np.random.Generator,
                    field_of_view: float = 500e-6) -> tuple[float, float]:
    """Centroid position reported by one camera snapshot.

    Returns the position quantized to the pixel pitch plus Gaussian centroid
    noise, in meters (the pixel calibration is taken as exact).  A coordinate
    outside +/- field_of_view raises :class:`ParticleLostError`.
    """
    if pixel_pitch < 0:
        raise ValueError(f"pixel_pitch must be >= 0, got {pixel_pitch}")
    out = []
    for coord in radial_pos:
        if abs(coord) > field_of_view:
            raise ParticleLostError(
                f"particle at {coord:.3g} m outside field of view +/- {field_of_view:.3g} m")
        q = coord if pixel_pitch == 0 else round(coord / pixel_pitch) * pixel_pitch
        out.append(q + centroid_noise * rng.standard_normal())
    return out[0], out[1]
