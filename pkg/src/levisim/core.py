"""Trap and oscillator physics for a magnetically levitated superconducting microsphere.

A superconducting sphere in the quadrupole field of an anti-Helmholtz coil pair
behaves as a three-dimensional harmonic oscillator.  This module holds the
specs for the particle, the trap, and the per-axis oscillator modes, plus the
closed-form relations between field gradients, mode frequencies, and the
response to an oscillating homogeneous probe field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.constants import hbar, mu_0

from .errors import ConfigError, NearResonantDriveError

# Default low-temperature heat capacity laws c(T) = coeff * T^3 [J kg^-1 K^-1]
# for the PbSn sphere: lattice+electron combined, and the electron part alone.
HEAT_CAPACITY_COEFFS = {"combined": 0.0115, "electron-only": 0.0010}


def trap_frequency(gradient: float, density: float) -> float:
    """Oscillation frequency of a levitated superconducting sphere, in Hz.

    Parameters
    ----------
    gradient : float
        Magnetic field gradient along the axis of interest [T/m].
    density : float
        Sphere mass density [kg/m^3].  The frequency is independent of radius.

    Returns
    -------
    float
        Mode frequency f = sqrt(3 / (8 pi^2 mu_0 rho)) * gradient [Hz].
    """
    if gradient < 0 or density <= 0:
        raise ValueError("gradient must be >= 0 and density > 0")
    return math.sqrt(3.0 / (8.0 * math.pi**2 * mu_0 * density)) * gradient


def trap_displacement(field: float, gradient: float) -> float:
    """Trap-center shift caused by a homogeneous external field.

    A uniform field B adds to the quadrupole field and moves the field zero by
    delta_z = B / (dB/dz).
    """
    if gradient <= 0:
        raise ValueError("gradient must be > 0")
    return field / gradient


@dataclass(frozen=True)
class OscillatorMode:
    """Single mechanical mode: mass, resonance, damping, zero-point scales.

    Angular quantities are stored in rad/s; use :meth:`from_frequency` to
    construct from an ordinary frequency in Hz.  ``q``, ``z_zpf`` and ``p_zpf``
    are derived, so ``gamma == omega0 / Q`` and ``z_zpf * p_zpf == hbar / 2``
    hold to machine precision by construction.
    """

    m: float
    omega0: float
    gamma: float

    def __post_init__(self):
        problems = []
        if self.m <= 0:
            problems.append(f"mass must be > 0, got {self.m}")
        if self.omega0 <= 0:
            problems.append(f"omega0 must be > 0, got {self.omega0}")
        if self.gamma < 0:
            problems.append(f"gamma must be >= 0, got {self.gamma}")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def from_frequency(cls, m: float, f0: float, quality: float) -> OscillatorMode:
        """Build a mode from frequency f0 [Hz] and quality factor Q."""
        omega0 = 2.0 * math.pi * f0
        return cls(m=m, omega0=omega0, gamma=omega0 / quality)

    @property
    def f0(self) -> float:
        """Resonance frequency [Hz]."""
        return self.omega0 / (2.0 * math.pi)

    @property
    def q(self) -> float:
        """Quality factor omega0 / gamma (inf for gamma = 0)."""
        return math.inf if self.gamma == 0 else self.omega0 / self.gamma

    @property
    def z_zpf(self) -> float:
        """Zero-point displacement sqrt(hbar / (2 m omega0)) [m]."""
        return math.sqrt(hbar / (2.0 * self.m * self.omega0))

    @property
    def p_zpf(self) -> float:
        """Zero-point momentum sqrt(hbar m omega0 / 2) [kg m/s]."""
        return math.sqrt(hbar * self.m * self.omega0 / 2.0)


@dataclass(frozen=True)
class ParticleSpec:
    """Levitated microsphere material and geometry.

    ``mass`` defaults to ``density * (4/3) pi radius^3``; when given explicitly
    it must agree with that product within 0.1%.
    """

    density: float
    radius: float
    mass: float | None = None
    reflectivity: float = 1.0
    t_c: float = 7.2                 # superconducting critical temperature [K]
    h0: float = 6.4e4                # critical field extrapolated to T = 0 [A/m]
    heat_capacity_coeff: dict[str, float] = field(
        default_factory=lambda: dict(HEAT_CAPACITY_COEFFS))
    roughness: float = 0.0           # RMS surface roughness sigma_r [m]

    def __post_init__(self):
        problems = []
        if self.density <= 0:
            problems.append(f"density must be > 0, got {self.density}")
        if self.radius <= 0:
            problems.append(f"radius must be > 0, got {self.radius}")
        if not 0.0 <= self.reflectivity <= 1.0:
            problems.append(f"reflectivity must be in [0, 1], got {self.reflectivity}")
        if self.t_c <= 0:
            problems.append(f"t_c must be > 0, got {self.t_c}")
        if self.h0 <= 0:
            problems.append(f"h0 must be > 0, got {self.h0}")
        if self.roughness < 0:
            problems.append(f"roughness must be >= 0, got {self.roughness}")
        if self.density > 0 and self.radius > 0:
            nominal = self.density * (4.0 / 3.0) * math.pi * self.radius**3
            if self.mass is None:
                object.__setattr__(self, "mass", nominal)
            elif abs(self.mass - nominal) > 1e-3 * nominal:
                problems.append(
                    f"mass {self.mass:g} inconsistent with density*volume {nominal:g} "
                    "(must agree within 0.1%)")
        if problems:
            raise ConfigError(problems)


@dataclass(frozen=True)
class TrapSpec:
    """Anti-Helmholtz trap: per-axis field gradient per ampere, and coil current.

    For an ideal anti-Helmholtz pair the axial gradient is twice the radial
    one; :meth:`anti_helmholtz` builds that geometry from the axial value.
    Axis order is (x, y, z) with z the coil axis.
    """

    gradient_per_ampere: tuple[float, float, float]
    current: float

    def __post_init__(self):
        problems = []
        if any(g <= 0 for g in self.gradient_per_ampere):
            problems.append(
                f"gradient_per_ampere entries must be > 0, got {self.gradient_per_ampere}")
        if self.current <= 0:
            problems.append(f"current must be > 0, got {self.current}")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def anti_helmholtz(cls, axial_gradient_per_ampere: float, current: float) -> TrapSpec:
        g = axial_gradient_per_ampere
        return cls(gradient_per_ampere=(g / 2.0, g / 2.0, g), current=current)

    @property
    def gradients(self) -> tuple[float, float, float]:
        """Field gradients at the operating current [T/m]."""
        return tuple(g * self.current for g in self.gradient_per_ampere)


def mode_frequencies(particle: ParticleSpec, trap: TrapSpec) -> tuple[float, float, float]:
    """Per-axis mode frequencies [Hz] for a particle in a trap."""
    return tuple(trap_frequency(g, particle.density) for g in trap.gradients)


def probe_force(mode: OscillatorMode, displacement: float) -> float:
    """Force on the particle when the trap center shifts by ``displacement``.

    A homogeneous probe field moves the trap minimum; in the harmonic trap the
    resulting force is F = m omega0^2 delta_z.
    """
    return mode.m * mode.omega0**2 * displacement


def driven_response(force_amplitude: float, mode: OscillatorMode,
                    drive_frequency: float, exclusion: float = 5.0) -> float:
    """Off-resonant RMS response amplitude to a sinusoidal drive of peak force F0.

    Parameters
    ----------
    force_amplitude : float
        Peak force amplitude F0 [N].
    mode : OscillatorMode
        Driven mechanical mode.
    drive_frequency : float
        Drive frequency [Hz]; must stay off resonance (see ``exclusion``).
    exclusion : float
        Minimum allowed |f0 - f_drive| in units of the linewidth gamma/(2 pi).

    Returns
    -------
    float
        x_rms = F0 / (m sqrt(2) |omega0^2 - omega_dr^2|).  This is the RMS
        amplitude of the steady-state response to the peak drive F0; the peak
        response is sqrt(2) larger.

    Raises
    ------
    NearResonantDriveError
        If the drive sits inside the exclusion window, where the damping term
        gamma^2 omega_dr^2 is not negligible against (omega0^2 - omega_dr^2)^2.
    """
    omega_dr = 2.0 * math.pi * drive_frequency
    detuning = abs(mode.f0 - drive_frequency)
    linewidth = mode.gamma / (2.0 * math.pi)
    if detuning < exclusion * linewidth:
        raise NearResonantDriveError(
            f"drive at {drive_frequency:g} Hz within {exclusion:g} linewidths "
            f"({linewidth:g} Hz) of resonance {mode.f0:g} Hz")
    return force_amplitude / (mode.m * math.sqrt(2.0) * abs(mode.omega0**2 - omega_dr**2))
