"""Spectral estimation and calibration analysis for displacement records.

Estimated spectra are one-sided densities in ordinary frequency (so a tone of
peak amplitude A integrates to A^2/2 over its resolution-limited peak, and a
white process of variance sigma^2 sampled at fs shows a floor of
2 sigma^2 / fs).  Welch averaging with a Hann window and half-overlapping
segments throughout; the resolution bandwidth accounts for the window's
equivalent noise bandwidth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit
from scipy.signal import welch

from .core import OscillatorMode, driven_response, probe_force, trap_displacement
from .errors import CalibrationError, ConfigError

# Equivalent noise bandwidth in bins for the supported windows.
_ENBW_BINS = {"hann": 1.5, "boxcar": 1.0}


@dataclass(frozen=True)
class SpectrumEstimate:
    """One-sided Welch PSD with its estimation settings."""

    frequencies: np.ndarray    # [Hz]
    psd: np.ndarray            # [signal^2/Hz]
    sample_rate: float
    nperseg: int
    n_segments: int
    window: str = "hann"

    @property
    def df(self) -> float:
        """Bin spacing [Hz]."""
        return self.sample_rate / self.nperseg

    @property
    def rbw(self) -> float:
        """Resolution bandwidth [Hz]: bin spacing times the window ENBW."""
        return _ENBW_BINS[self.window] * self.df

    def band_power(self, f_lo: float, f_hi: float) -> float:
        """Integrated power [signal^2] over [f_lo, f_hi]."""
        sel = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        return float(np.sum(self.psd[sel]) * self.df)

    def band_mean(self, f_lo: float, f_hi: float) -> float:
        """Mean density over [f_lo, f_hi]."""
        sel = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        if not np.any(sel):
            raise ValueError(f"no bins in [{f_lo:g}, {f_hi:g}] Hz")
        return float(np.mean(self.psd[sel]))


def estimate_psd(signal: np.ndarray, sample_rate: float, *,
                 nperseg: int | None = None, window: str = "hann") -> SpectrumEstimate:
    """Welch estimate with half-overlapping segments; needs >= 2 segments."""
    x = np.asarray(signal, dtype=float)
    if x.ndim != 1:
        raise ConfigError(f"signal must be 1-D, got shape {x.shape}")
    if sample_rate <= 0:
        raise ConfigError(f"sample_rate must be > 0, got {sample_rate}")
    if window not in _ENBW_BINS:
        raise ConfigError(f"window must be one of {sorted(_ENBW_BINS)}, got {window!r}")
    if nperseg is None:
        nperseg = max(256, 1 << max(8, int(math.log2(max(1, len(x) // 8)))))
        nperseg = min(nperseg, len(x))
    step = nperseg // 2
    n_segments = (len(x) - nperseg) // step + 1 if len(x) >= nperseg else 0
    if n_segments < 2:
        raise ConfigError(
            f"record of {len(x)} samples gives {n_segments} segment(s) at "
            f"nperseg = {nperseg}; at least 2 are required")
    f, p = welch(x, fs=sample_rate, window=window, nperseg=nperseg,
                 noverlap=step, detrend=False, scaling="density")
    return SpectrumEstimate(f, p, sample_rate, nperseg, n_segments, window)


def tone_power(spec: SpectrumEstimate, frequency: float,
               half_width_rbw: float = 2.0) -> float:
    """Integrated power of a tone: PSD summed over +/- ``half_width_rbw`` RBW.

    For a sinusoid of peak amplitude A this recovers A^2/2 (RMS amplitude
    squared) on top of whatever floor falls inside the window.
    """
    if not spec.frequencies[0] <= frequency <= spec.frequencies[-1]:
        raise ValueError(f"tone at {frequency:g} Hz outside the estimate's range")
    half = half_width_rbw * spec.rbw
    return spec.band_power(frequency - half, frequency + half)


@dataclass(frozen=True)
class LorentzianFit:
    """Displacement-resonance fit S(f) = floor + scale / ((f0^2-f^2)^2 + f^2 fwhm^2)."""

    f0: float        # resonance frequency [Hz]
    fwhm: float      # full linewidth [Hz]
    scale: float
    floor: float

    @property
    def gamma(self) -> float:
        """Linewidth in angular units [rad/s]."""
        return 2.0 * math.pi * self.fwhm

    @property
    def peak_height(self) -> float:
        return self.floor + self.scale / (self.f0**2 * self.fwhm**2)


def _lorentzian(f, scale, f0, fwhm, floor):
    return floor + scale / ((f0**2 - f**2) ** 2 + f**2 * fwhm**2)


def fit_lorentzian(spec: SpectrumEstimate, band: tuple[float, float]) -> LorentzianFit:
    """Fit one displacement resonance inside ``band``."""
    sel = (spec.frequencies >= band[0]) & (spec.frequencies <= band[1])
    f = spec.frequencies[sel]
    p = spec.psd[sel]
    if len(f) < 8:
        raise CalibrationError(f"only {len(f)} bins in {band}; need >= 8 for a fit")
    # Displacement PSDs are ~1e-19 m^2/Hz; normalize to O(1) so the
    # optimizer's absolute tolerances do not stop it at the initial guess.
    p_scale = float(np.max(p))
    if p_scale <= 0:
        raise CalibrationError(f"spectrum is non-positive in {band}")
    q = p / p_scale
    floor0 = float(np.median(q))
    i_pk = int(np.argmax(q))
    f0_0 = float(f[i_pk])
    # Width guess from the span where the PSD exceeds half the peak.
    above = q > (q[i_pk] + floor0) / 2.0
    fwhm0 = max(float(np.count_nonzero(above)) * spec.df, spec.df)
    scale0 = (q[i_pk] - floor0) * f0_0**2 * fwhm0**2
    try:
        popt, _ = curve_fit(_lorentzian, f, q,
                            p0=[scale0, f0_0, fwhm0, floor0],
                            bounds=([0.0, band[0], spec.df * 0.1, 0.0],
                                    [np.inf, band[1], band[1], np.inf]),
                            maxfev=20000)
    except RuntimeError as exc:
        raise CalibrationError(f"resonance fit did not converge: {exc}") from exc
    return LorentzianFit(scale=popt[0] * p_scale, f0=popt[1], fwhm=popt[2],
                         floor=popt[3] * p_scale)


@dataclass(frozen=True)
class NoiseFloorEstimate:
    """Floor density over an analysis band with the resonance notched out."""

    floor_psd: float            # [signal^2/Hz]
    stat_uncertainty: float     # relative, from bin scatter
    n_bins: int
    band: tuple[float, float]
    notch: tuple[float, float] | None

    @property
    def floor_asd(self) -> float:
        """One-sided amplitude spectral density, sqrt(floor)."""
        return math.sqrt(self.floor_psd)


def noise_floor(spec: SpectrumEstimate, band: tuple[float, float], *,
                notch_resonance: bool = True, notch_linewidths: float = 3.0,
                min_bins: int = 8) -> NoiseFloorEstimate:
    """Median floor density in ``band``, auto-notching the fitted resonance.

    With ``notch_resonance`` a displacement resonance inside the band is
    fitted and +/- ``notch_linewidths`` full linewidths around it are
    excluded.  Fewer than ``min_bins`` surviving bins raise
    :class:`CalibrationError` (the resonance consumed the analysis band).
    """
    sel = (spec.frequencies >= band[0]) & (spec.frequencies <= band[1])
    notch = None
    if notch_resonance:
        fit = fit_lorentzian(spec, band)
        half = notch_linewidths * fit.fwhm
        notch = (fit.f0 - half, fit.f0 + half)
        sel &= ~((spec.frequencies >= notch[0]) & (spec.frequencies <= notch[1]))
    p = spec.psd[sel]
    if len(p) < min_bins:
        raise CalibrationError(
            f"{len(p)} floor bins left in {band} after notching {notch}; "
            f"need >= {min_bins}")
    floor = float(np.median(p))
    stat = float(np.std(p) / math.sqrt(len(p)) / floor) if floor > 0 else math.inf
    return NoiseFloorEstimate(floor, stat, int(len(p)), band, notch)


@dataclass(frozen=True)
class RingUpFit:
    """Occupation ring-up n(t) = n0 + rate * t after feedback switch-off."""

    rate: float                  # heating rate [phonons/s]
    intercept: float             # occupation at the changepoint
    changepoint: float           # [s]
    rate_uncertainty: float      # one sigma on the rate


def fit_ring_up(t: np.ndarray, occupation: np.ndarray,
                min_samples_per_segment: int = 4) -> RingUpFit:
    """Two-segment piecewise-linear fit; the heating rate is the late slope.

    The changepoint (feedback settling ends, free reheating begins) is chosen
    to minimize the total squared residual of independent linear fits to the
    two segments.  Requires at least eight samples; a non-positive late slope
    raises :class:`CalibrationError`.
    """
    t = np.asarray(t, dtype=float)
    n = np.asarray(occupation, dtype=float)
    if t.shape != n.shape or t.ndim != 1:
        raise ConfigError("t and occupation must be 1-D arrays of equal length")
    if len(t) < 2 * min_samples_per_segment:
        raise CalibrationError(
            f"{len(t)} samples; ring-up fit needs >= {2 * min_samples_per_segment}")

    def linfit(ts, ns):
        a = np.vstack([ts, np.ones_like(ts)]).T
        coef, res, *_ = np.linalg.lstsq(a, ns, rcond=None)
        sse = float(res[0]) if len(res) else float(np.sum((ns - a @ coef) ** 2))
        return coef, sse

    best = None
    for k in range(min_samples_per_segment, len(t) - min_samples_per_segment + 1):
        _, sse1 = linfit(t[:k], n[:k])
        coef2, sse2 = linfit(t[k:], n[k:])
        total = sse1 + sse2
        if best is None or total < best[0]:
            best = (total, k, coef2)
    _, k, (slope, intercept) = best
    if slope <= 0:
        raise CalibrationError(
            f"late-segment slope {slope:.3g} phonons/s is not positive; "
            "no reheating visible")
    # Slope uncertainty from the late-segment residual scatter.
    tt, nn = t[k:], n[k:]
    resid = nn - (slope * tt + intercept)
    denom = float(np.sum((tt - tt.mean()) ** 2))
    sigma = math.sqrt(float(np.sum(resid**2)) / max(1, len(tt) - 2) / denom)
    return RingUpFit(rate=float(slope), intercept=float(intercept + slope * t[k]),
                     changepoint=float(t[k]), rate_uncertainty=sigma)


@dataclass(frozen=True)
class CalibrationResult:
    """Transduction factor from readout units to true displacement.

    ``factor`` converts the uncalibrated readout amplitude (normalized fringe
    error, for the interferometric channel) into meters of true motion.  For
    a phase readout at wavelength lambda the equivalent loop-suppression
    ratio is factor * 4 pi / lambda.
    """

    factor: float                # [m per readout unit]
    uncertainty: float           # one sigma, same units
    method: str
    wavelength: float
    per_frequency: dict = field(default_factory=dict)

    @property
    def suppression(self) -> float:
        return self.factor * 4.0 * math.pi / self.wavelength

    @property
    def suppression_uncertainty(self) -> float:
        return self.uncertainty * 4.0 * math.pi / self.wavelength


def probe_tone_calibration(responses, field_per_ampere: float,
                           mode: OscillatorMode, gradient: float,
                           wavelength: float, *,
                           min_relative_sigma: float = 0.05) -> CalibrationResult:
    """Calibrate the readout with magnetic probe tones of known force.

    ``responses`` holds (drive_frequency [Hz], current [A], measured RMS
    amplitude [readout units]) triples.  Per frequency, the measured
    amplitude is fit linearly in current through the origin and compared with
    the predicted RMS response to the known probe force; the per-frequency
    factors are pooled by inverse variance.  A per-frequency factor further
    than three sigma from the pooled value fails the calibration.
    ``min_relative_sigma`` floors each per-frequency uncertainty (drive
    amplitude tolerance; also keeps few-sample residual estimates honest).
    """
    groups: dict[float, list[tuple[float, float]]] = {}
    for f_dr, current, measured in responses:
        groups.setdefault(float(f_dr), []).append((float(current), float(measured)))
    if not groups:
        raise CalibrationError("no probe-tone responses supplied")

    per_freq: dict[float, tuple[float, float]] = {}
    for f_dr, pts in sorted(groups.items()):
        if len(pts) < 2:
            raise CalibrationError(
                f"{len(pts)} current setting(s) at {f_dr:g} Hz; need >= 2")
        cur = np.array([c for c, _ in pts])
        meas = np.array([m for _, m in pts])
        # Measured amplitude is linear in current; fit through the origin.
        s = float(np.sum(cur * meas) / np.sum(cur**2))
        if s <= 0:
            raise CalibrationError(
                f"no measurable probe-tone response at {f_dr:g} Hz "
                "(zero or negative slope versus current); increase the drive "
                "current or the record length")
        resid = meas - s * cur
        s_sigma = math.sqrt(float(np.sum(resid**2)) / max(1, len(pts) - 1)
                            / float(np.sum(cur**2)))
        force_per_amp = probe_force(mode, trap_displacement(field_per_ampere, gradient))
        x_per_amp = driven_response(force_per_amp, mode, f_dr)
        factor = x_per_amp / s
        sigma = abs(factor) * max(s_sigma / s, min_relative_sigma)
        per_freq[f_dr] = (factor, sigma)

    factors = np.array([v[0] for v in per_freq.values()])
    sigmas = np.array([v[1] for v in per_freq.values()])
    if np.any(sigmas <= 0):
        sigmas = np.where(sigmas <= 0, np.max(sigmas[sigmas > 0], initial=1e-30), sigmas)
    weights = 1.0 / sigmas**2
    pooled = float(np.sum(weights * factors) / np.sum(weights))
    pooled_sigma = float(1.0 / math.sqrt(np.sum(weights)))
    for f_dr, (fac, sig) in per_freq.items():
        if abs(fac - pooled) > 3.0 * sig:
            raise CalibrationError(
                f"probe-tone factor at {f_dr:g} Hz deviates "
                f"{abs(fac - pooled) / sig:.1f} sigma from the pooled value; "
                "calibration inconsistent across frequencies")
    return CalibrationResult(factor=pooled, uncertainty=pooled_sigma,
                             method="probe-tone", wavelength=wavelength,
                             per_frequency=per_freq)
