"""Ground-state cooling feasibility and quench thermal budget.

Measurement-based cooling reaches the ground state when the quantum
cooperativity (backaction over thermal decoherence) beats 1/(9 eta - 1),
with eta the total detection efficiency; below eta = 1/9 no photon flux
suffices.  The calculators here give the decoherence rates, the threshold
fluxes and powers for free-space and cavity-enhanced readout, the occupation
attainable versus flux, and the classical-noise budget.  The quench section
models the superconductor's temperature after a field quench and the
resulting levitation lifetime against radiative cooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import c, hbar, k as k_B, pi

from .core import OscillatorMode, ParticleSpec
from .dynamics import thermal_force_psd
from .errors import ConfigError, NoiselessMeasurementError


def photon_flux_to_power(n_in: float, wavelength: float) -> float:
    """Optical power [W] of a photon flux at the given wavelength."""
    return n_in * 2.0 * pi * hbar * c / wavelength


@dataclass(frozen=True)
class DecoherenceRates:
    """Thermal and measurement-backaction decoherence rates [phonons/s]."""

    thermal: float
    backaction: float

    @property
    def total(self) -> float:
        return self.thermal + self.backaction

    @property
    def quantum_cooperativity(self) -> float:
        return self.backaction / self.thermal


def thermal_decoherence_rate(mode: OscillatorMode, temperature: float) -> float:
    """Gamma_th = n_th * gamma with n_th = k_B T / (hbar omega0)."""
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    return k_B * temperature / (hbar * mode.omega0) * mode.gamma


def decoherence_rates(mode: OscillatorMode, temperature: float,
                      wavelength: float, n_in: float) -> DecoherenceRates:
    """Rates for free-space readout with photon flux ``n_in`` on the particle."""
    k = 2.0 * pi / wavelength
    s_fba = 4.0 * hbar**2 * k**2 * n_in
    gamma_ba = s_fba / (2.0 * hbar * mode.m * mode.omega0)
    return DecoherenceRates(thermal=thermal_decoherence_rate(mode, temperature),
                            backaction=gamma_ba)


def ground_state_condition(eta: float, c_q: float) -> tuple[bool, float]:
    """(satisfied, margin) of the ground-state condition C_q (9 eta - 1) > 1."""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    margin = c_q * (9.0 * eta - 1.0) - 1.0
    return margin > 0.0, margin


def min_input_flux_freespace(mode: OscillatorMode, temperature: float,
                             wavelength: float, eta: float) -> float:
    """Threshold photon flux [1/s] for ground-state cooling in free space.

    n_in >= Gamma_th m omega0 / (2 hbar k^2 (9 eta - 1)); requires eta > 1/9.
    """
    if eta <= 1.0 / 9.0:
        raise ValueError(
            f"eta = {eta:g} <= 1/9: no photon flux reaches the ground state")
    k = 2.0 * pi / wavelength
    gamma_th = thermal_decoherence_rate(mode, temperature)
    return gamma_th * mode.m * mode.omega0 / (2.0 * hbar * k**2 * (9.0 * eta - 1.0))


def min_input_flux_cavity(mode: OscillatorMode, temperature: float,
                          wavelength: float, finesse: float, eta: float,
                          kappa_ext_fraction: float = 1.0) -> float:
    """Threshold input flux [1/s] with cavity-enhanced readout.

    The cavity length drops out: the finesse alone sets the improvement,
    n_in >= m omega0 lambda^2 Gamma_th / (32 hbar F^2 f_ext (9 eta - 1))
    with f_ext the output-coupling fraction (eta already includes it).
    The small resolved-sideband correction is neglected (omega0 << kappa for
    any realistic length).
    """
    if eta <= 1.0 / 9.0:
        raise ValueError(
            f"eta = {eta:g} <= 1/9: no photon flux reaches the ground state")
    if finesse <= 0 or not 0.0 < kappa_ext_fraction <= 1.0:
        raise ValueError("finesse must be > 0 and kappa_ext_fraction in (0, 1]")
    gamma_th = thermal_decoherence_rate(mode, temperature)
    return (mode.m * mode.omega0 * wavelength**2 * gamma_th
            / (32.0 * hbar * finesse**2 * kappa_ext_fraction * (9.0 * eta - 1.0)))


@dataclass(frozen=True)
class CavitySpec:
    """Fabry-Perot readout cavity: geometry, loss, and detection efficiency.

    kappa follows from finesse and length, the frequency pull per meter from
    the resonance frequency over the length.  ``eta`` is the product of the
    output-coupling fraction and the detector efficiency.
    """

    wavelength: float            # [m]
    length: float                # [m]
    finesse: float
    kappa_ext_fraction: float = 1.0
    eta_det: float = 1.0

    def __post_init__(self):
        problems = []
        if self.wavelength <= 0:
            problems.append(f"wavelength must be > 0, got {self.wavelength}")
        if self.length <= 0:
            problems.append(f"length must be > 0, got {self.length}")
        if self.finesse <= 0:
            problems.append(f"finesse must be > 0, got {self.finesse}")
        if not 0.0 < self.kappa_ext_fraction <= 1.0:
            problems.append(
                f"kappa_ext_fraction must be in (0, 1], got {self.kappa_ext_fraction}")
        if not 0.0 < self.eta_det <= 1.0:
            problems.append(f"eta_det must be in (0, 1], got {self.eta_det}")
        if problems:
            raise ConfigError(problems)

    @property
    def kappa(self) -> float:
        """Total linewidth [rad/s]: kappa = pi c / (finesse length)."""
        return pi * c / (self.finesse * self.length)

    @property
    def kappa_ext(self) -> float:
        return self.kappa_ext_fraction * self.kappa

    @property
    def pull(self) -> float:
        """Cavity frequency shift per displacement [rad/s per m]: omega_cav / L."""
        return 2.0 * pi * c / self.wavelength / self.length

    @property
    def eta(self) -> float:
        """Total detection efficiency."""
        return self.kappa_ext_fraction * self.eta_det

    def coupling(self, mode: OscillatorMode) -> float:
        """Single-photon optomechanical coupling g0 = z_zpf * pull [rad/s]."""
        return mode.z_zpf * self.pull

    def intracavity_photons(self, n_in: float) -> float:
        """Resonantly driven photon number: 4 kappa_ext n_in / kappa^2."""
        return 4.0 * self.kappa_ext * n_in / self.kappa**2


def _occupation_from_psds(s_imp_detected, s_force_total) -> np.ndarray:
    return np.sqrt(np.asarray(s_imp_detected) * np.asarray(s_force_total)) / hbar - 0.5


def cooled_occupation_freespace(mode: OscillatorMode, temperature: float,
                                wavelength: float, eta: float, n_in) -> np.ndarray:
    """Best attainable occupation versus free-space photon flux (array-valued).

    Combines detected imprecision 1 / (16 k^2 n eta) with thermal plus
    backaction force noise; the large-flux asymptote is 1/(2 sqrt(eta)) - 1/2.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    n = np.asarray(n_in, dtype=float)
    if np.any(n <= 0):
        raise ValueError("photon flux must be > 0")
    k = 2.0 * pi / wavelength
    s_imp = 1.0 / (16.0 * k**2 * n * eta)
    s_fba = 4.0 * hbar**2 * k**2 * n
    s_fth = thermal_force_psd(mode, temperature)
    return _occupation_from_psds(s_imp, s_fth + s_fba)


def cooled_occupation_cavity(mode: OscillatorMode, temperature: float,
                             cavity: CavitySpec, n_in, *,
                             sideband_correction: bool = False) -> np.ndarray:
    """Best attainable occupation versus input flux with cavity readout.

    ``sideband_correction`` restores the (1 + 4 omega0^2/kappa^2) factors in
    imprecision and backaction; they cancel in the quantum-limited product and
    are negligible for omega0 << kappa.
    """
    n = np.asarray(n_in, dtype=float)
    if np.any(n <= 0):
        raise ValueError("photon flux must be > 0")
    n_cav = cavity.intracavity_photons(n)
    g2 = cavity.pull**2
    s = 1.0 + 4.0 * mode.omega0**2 / cavity.kappa**2 if sideband_correction else 1.0
    s_imp = cavity.kappa * s / (16.0 * g2 * n_cav * cavity.eta)
    s_fba = 4.0 * hbar**2 * g2 * n_cav / (cavity.kappa * s)
    s_fth = thermal_force_psd(mode, temperature)
    return _occupation_from_psds(s_imp, s_fth + s_fba)


def floor_occupation(eta: float) -> float:
    """Large-flux cooling floor: n = 1/(2 sqrt(eta)) - 1/2."""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must be in (0, 1], got {eta}")
    return 0.5 / math.sqrt(eta) - 0.5


def optimal_intracavity_photons(mode: OscillatorMode, cavity: CavitySpec,
                                s_force: float, s_sigma: float) -> float:
    """Photon number minimizing (imprecision + excess) x (force + backaction).

    n_opt = kappa sqrt(S_F / S_sigma) / (8 hbar pull^2 sqrt(eta)); a zero
    excess-noise PSD makes the optimum unbounded (more light always helps).
    """
    if s_force <= 0:
        raise ValueError(f"s_force must be > 0, got {s_force}")
    if s_sigma < 0:
        raise ValueError(f"s_sigma must be >= 0, got {s_sigma}")
    if s_sigma == 0.0:
        raise NoiselessMeasurementError(
            "S_sigma = 0: optimal photon number is unbounded without excess noise")
    return (cavity.kappa * math.sqrt(s_force / s_sigma)
            / (8.0 * hbar * cavity.pull**2 * math.sqrt(cavity.eta)))


def excess_noise_bound(mode: OscillatorMode, temperature: float,
                       eta: float) -> float:
    """Largest classical readout-noise PSD compatible with the ground state.

    Two-sided displacement PSD bound
    B = hbar^2 (3 sqrt(eta) - 1)^2 / (8 eta m gamma k_B T); at the optimal
    flux, excess noise at this level raises the best occupation exactly to 1.
    Requires eta > 1/9.
    """
    if eta <= 1.0 / 9.0:
        raise ValueError(f"eta = {eta:g} <= 1/9: ground state unreachable")
    if temperature <= 0 or mode.gamma <= 0:
        raise ValueError("temperature and gamma must be > 0 for a thermal bound")
    return (hbar**2 * (3.0 * math.sqrt(eta) - 1.0) ** 2
            / (8.0 * eta * mode.m * mode.gamma * k_B * temperature))


def excess_floor_asd(mode: OscillatorMode, temperature: float,
                     eta: float) -> tuple[float, float]:
    """(rms, peak-equivalent) one-sided amplitude density of the excess bound.

    The rms convention is sqrt of the one-sided PSD, 2B; the peak-equivalent
    convention quotes the tone peak amplitude that carries the same power in
    one hertz, a further factor two in power.
    """
    b = excess_noise_bound(mode, temperature, eta)
    rms = math.sqrt(2.0 * b)
    return rms, 2.0 * rms


# --------------------------------------------------------------------------
# Quench thermal budget


def quench_temperature(particle: ParticleSpec, field: float) -> float:
    """Electron temperature reached when a field quench releases the condensate.

    T_q = T_c sqrt(1 - H/H0); fields at or above the critical field H0 leave
    no superconducting state to quench into.
    """
    if field < 0:
        raise ValueError(f"field must be >= 0, got {field}")
    if field >= particle.h0:
        raise ValueError(
            f"field {field:g} A/m at or above the critical field {particle.h0:g} A/m")
    return particle.t_c * math.sqrt(1.0 - field / particle.h0)


def energy_budget(particle: ParticleSpec, t_quench: float, t_substrate: float,
                  coefficient: str = "combined") -> float:
    """Heat [J] released cooling from the quench temperature to the substrate.

    Integrates the low-temperature heat capacity c(T) = a T^3 per unit mass:
    Delta E = a m (T_q^4 - T_s^4) / 4, with ``a`` selected from the
    particle's tabulated coefficients.
    """
    if coefficient not in particle.heat_capacity_coeff:
        raise KeyError(
            f"unknown heat-capacity coefficient {coefficient!r}; "
            f"have {sorted(particle.heat_capacity_coeff)}")
    if not 0.0 <= t_substrate <= t_quench:
        raise ValueError(
            f"need 0 <= t_substrate <= t_quench, got {t_substrate} and {t_quench}")
    a = particle.heat_capacity_coeff[coefficient]
    return a * particle.mass * (t_quench**4 - t_substrate**4) / 4.0


def levitation_lifetime(delta_e: float, absorbed_power: float) -> float:
    """Time [s] to re-deposit the quench heat at the given absorbed power.

    Zero absorbed power gives an infinite (radiation-limited) lifetime.
    """
    if delta_e < 0:
        raise ValueError(f"delta_e must be >= 0, got {delta_e}")
    if absorbed_power < 0:
        raise ValueError(f"absorbed_power must be >= 0, got {absorbed_power}")
    if absorbed_power == 0.0:
        return math.inf
    return delta_e / absorbed_power


@dataclass(frozen=True)
class LifetimeFit:
    """Levitation lifetime versus photon flux, tau = a / (b + n)."""

    a: float
    b: float

    def predict(self, n_in) -> np.ndarray:
        return self.a / (self.b + np.asarray(n_in, dtype=float))

    @property
    def radiation_limited(self) -> float:
        """Extrapolated lifetime at zero flux."""
        return self.a / self.b


def lifetime_fit(fluxes, lifetimes) -> LifetimeFit:
    """Least-squares fit of tau = a / (b + n) via linearity of 1/tau in n."""
    n = np.asarray(fluxes, dtype=float)
    tau = np.asarray(lifetimes, dtype=float)
    if n.shape != tau.shape or n.ndim != 1 or len(n) < 3:
        raise ConfigError("need >= 3 matching flux/lifetime samples")
    if np.any(tau <= 0) or np.any(n < 0):
        raise ConfigError("lifetimes must be > 0 and fluxes >= 0")
    coef = np.polyfit(n, 1.0 / tau, 1)
    slope, intercept = float(coef[0]), float(coef[1])
    if slope <= 0 or intercept <= 0:
        raise ConfigError(
            f"fit gave slope {slope:.3g}, intercept {intercept:.3g}; "
            "lifetime must decrease with flux from a finite zero-flux value")
    return LifetimeFit(a=1.0 / slope, b=intercept / slope)


# --------------------------------------------------------------------------
# Assembled report


@dataclass(frozen=True)
class QuenchSummary:
    field: float
    t_quench: float
    t_substrate: float
    delta_e: dict
    absorbed_power: float
    lifetime: float


@dataclass(frozen=True)
class FeasibilityReport:
    """Everything needed to judge ground-state cooling for one mode."""

    mode: OscillatorMode
    temperature: float
    wavelength: float
    eta: float
    rates: DecoherenceRates
    satisfied: bool
    margin: float
    n_in_freespace: float
    power_freespace: float
    finesse: float | None
    n_in_cavity: float | None
    power_cavity: float | None
    floor_n: float
    excess_bound: float
    excess_rms_asd: float
    excess_peak_asd: float
    quench: QuenchSummary | None = None

    def render(self) -> str:
        lines = [
            "ground-state cooling feasibility",
            f"  mode: f0 = {self.mode.f0:.6g} Hz, m = {self.mode.m:.6g} kg, "
            f"Q = {self.mode.q:.6g}",
            f"  bath temperature: {self.temperature:.6g} K",
            f"  readout wavelength: {self.wavelength:.6g} m",
            f"  detection efficiency eta: {self.eta:.6g}",
            f"  thermal decoherence rate: {self.rates.thermal:.6g} 1/s",
            f"  backaction rate at operating flux: {self.rates.backaction:.6g} 1/s",
            f"  quantum cooperativity: {self.rates.quantum_cooperativity:.6g}",
            f"  condition C_q (9 eta - 1) > 1: "
            f"{'satisfied' if self.satisfied else 'not satisfied'} "
            f"(margin {self.margin:+.3g})",
            f"  free-space threshold flux: {self.n_in_freespace:.6g} 1/s "
            f"({self.power_freespace:.6g} W)",
        ]
        if self.finesse is not None:
            lines.append(
                f"  cavity threshold flux at finesse {self.finesse:g}: "
                f"{self.n_in_cavity:.6g} 1/s ({self.power_cavity:.6g} W)")
        lines += [
            f"  efficiency-limited occupation floor: {self.floor_n:.6g}",
            f"  excess-noise bound: {self.excess_bound:.6g} m^2/Hz "
            f"({self.excess_rms_asd:.6g} m/rtHz rms, "
            f"{self.excess_peak_asd:.6g} m/rtHz peak-equivalent)",
        ]
        if self.quench is not None:
            q = self.quench
            lines += [
                "quench thermal budget",
                f"  field: {q.field:.6g} A/m -> quench temperature "
                f"{q.t_quench:.6g} K (substrate {q.t_substrate:.6g} K)",
            ]
            for key, de in q.delta_e.items():
                lines.append(f"  released heat ({key}): {de:.6g} J")
            if math.isinf(q.lifetime):
                lines.append("  levitation lifetime: radiation-limited "
                             "(no absorbed power)")
            else:
                lines.append(
                    f"  levitation lifetime at {q.absorbed_power:.6g} W "
                    f"absorbed: {q.lifetime:.6g} s")
        return "\n".join(lines)


def assess(mode: OscillatorMode, temperature: float, wavelength: float,
           eta: float, *, n_in: float | None = None,
           finesse: float | None = None,
           particle: ParticleSpec | None = None, field: float = 0.0,
           substrate_temperature: float = 0.0,
           absorbed_power: float = 0.0) -> FeasibilityReport:
    """Build a :class:`FeasibilityReport` for an operating flux ``n_in``.

    Without an explicit flux the rates are evaluated at twice the free-space
    threshold (exactly at threshold the cooperativity margin vanishes).
    """
    n_free = min_input_flux_freespace(mode, temperature, wavelength, eta)
    rates = decoherence_rates(mode, temperature, wavelength,
                              2.0 * n_free if n_in is None else n_in)
    satisfied, margin = ground_state_condition(eta, rates.quantum_cooperativity)
    n_cav = p_cav = None
    if finesse is not None:
        n_cav = min_input_flux_cavity(mode, temperature, wavelength, finesse, eta)
        p_cav = photon_flux_to_power(n_cav, wavelength)
    rms, peak = excess_floor_asd(mode, temperature, eta)
    quench = None
    if particle is not None and field > 0.0:
        t_q = quench_temperature(particle, field)
        delta = {key: energy_budget(particle, t_q, substrate_temperature, key)
                 for key in sorted(particle.heat_capacity_coeff)}
        lifetime = levitation_lifetime(max(delta.values()), absorbed_power)
        quench = QuenchSummary(field, t_q, substrate_temperature, delta,
                               absorbed_power, lifetime)
    return FeasibilityReport(
        mode=mode, temperature=temperature, wavelength=wavelength, eta=eta,
        rates=rates, satisfied=satisfied, margin=margin,
        n_in_freespace=n_free,
        power_freespace=photon_flux_to_power(n_free, wavelength),
        finesse=finesse, n_in_cavity=n_cav, power_cavity=p_cav,
        floor_n=floor_occupation(eta),
        excess_bound=excess_noise_bound(mode, temperature, eta),
        excess_rms_asd=rms, excess_peak_asd=peak, quench=quench)
