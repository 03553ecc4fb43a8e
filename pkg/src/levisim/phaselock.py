"""Phase-tracking lock for the balanced interferometric readout.

A proportional frequency actuator (acousto-optic shifter) steers the local
oscillator phase toward the signal phase.  Per update the balanced difference
signal is normalized to the fringe amplitude, multiplied by the loop gain,
and applied as a frequency offset; integrating that offset accumulates the
tracking phase.  The loop behaves as a first-order high-pass for the residual
(corner at the gain) and hands the in-band motion to the linearized output,
``tracking_phase * wavelength / (4 pi)``.

Includes a locked-interferometer sensor usable inside the dynamics engine,
plus reference-mirror calibration of the loop suppression.
"""

from __future__ import annotations

import array
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LockLossError, LockUnstableError
from .sensing import DetectorRecord, LaserSpec, RoughnessProcess, expected_port_counts

# Electronics calibration: loop gains quoted in Hz per volt of balanced signal
# convert to Hz per unit normalized error with this factor (set by the fringe
# voltage of the detection chain).
LOCK_UNITS_PER_VOLT = 0.2077775442640292


def gain_from_hz_per_volt(gain_hz_per_volt: float) -> float:
    """Normalized loop gain [Hz/unit] for an electronics gain in Hz/V."""
    return gain_hz_per_volt * LOCK_UNITS_PER_VOLT


@dataclass(frozen=True)
class LockConfig:
    """Proportional phase-tracking loop settings.

    gain : float
        Frequency actuation per unit normalized error signal [Hz].  The loop
        corner sits at this frequency: residual suppression follows
        sqrt(1 + (gain/f)^2).
    update_rate : float
        Lock update rate [Hz]; must divide the detector record rate.
    slew_limit : float
        Maximum frequency slew [Hz/s]; saturation is flagged, not fatal.
    enabled : bool
        Disabled locks leave the tracking phase frozen (open-loop readout).
    """

    gain: float
    update_rate: float
    slew_limit: float = math.inf
    enabled: bool = True

    def __post_init__(self):
        problems = []
        if self.gain < 0:
            problems.append(f"gain must be >= 0, got {self.gain}")
        if self.update_rate <= 0:
            problems.append(f"update_rate must be > 0, got {self.update_rate}")
        if self.slew_limit <= 0:
            problems.append(f"slew_limit must be > 0, got {self.slew_limit}")
        if problems:
            raise ConfigError(problems)
        # Discrete stability: the per-update phase step per radian of error
        # must stay below one radian, or the loop overshoots and hunts.
        if self.enabled and 2.0 * math.pi * self.gain / self.update_rate >= 1.0:
            raise LockUnstableError(
                f"gain {self.gain:g} Hz at update rate {self.update_rate:g} Hz "
                f"gives loop step {2.0 * math.pi * self.gain / self.update_rate:.3f} "
                ">= 1 rad; the discrete loop is unstable")


@dataclass(frozen=True)
class LockState:
    """Loop state after an update: accumulated phase and current offset."""

    tracking_phase: float = 0.0     # [rad]
    freq_offset: float = 0.0        # [Hz]
    slew_saturated: bool = False

    def linearized_output(self, wavelength: float) -> float:
        """Displacement-calibrated lock output: tracking_phase * lambda / (4 pi)."""
        return self.tracking_phase * wavelength / (4.0 * math.pi)


def normalized_error(record: DetectorRecord, lo_ratio: float = 50.0) -> float:
    """Balanced difference normalized to the fringe amplitude (~ sin residual).

    With local-oscillator to signal flux ratio ``lo_ratio``, the fringe
    amplitude in difference counts is 2 sqrt(lo) / (1 + lo) of the summed
    counts, so the error is diff/sum scaled by the inverse of that.
    """
    if record.count_sum <= 0:
        return 0.0
    scale = (1.0 + lo_ratio) / (2.0 * math.sqrt(lo_ratio))
    return record.count_diff / record.count_sum * scale


def lock_step(state: LockState, record: DetectorRecord, cfg: LockConfig,
              lo_ratio: float = 50.0) -> LockState:
    """One proportional update: error -> frequency offset -> phase advance."""
    if not cfg.enabled:
        return state
    u = normalized_error(record, lo_ratio)
    target = cfg.gain * u
    max_step = cfg.slew_limit / cfg.update_rate
    lo = state.freq_offset - max_step
    hi = state.freq_offset + max_step
    saturated = not (lo <= target <= hi)
    df = min(max(target, lo), hi)
    phase = state.tracking_phase + 2.0 * math.pi * df / cfg.update_rate
    return LockState(phase, df, saturated)


def loop_suppression(gain: float, frequency: float) -> float:
    """Residual suppression ratio sqrt(1 + (gain/f)^2) for a tone at ``frequency``."""
    if frequency <= 0:
        raise ValueError(f"frequency must be > 0, got {frequency}")
    return math.sqrt(1.0 + (gain / frequency) ** 2)


def closed_loop_fidelity(gain: float, frequency: float) -> float:
    """Amplitude transfer of a tone into the linearized output: gain/sqrt(f^2+gain^2)."""
    if frequency < 0:
        raise ValueError(f"frequency must be >= 0, got {frequency}")
    return gain / math.hypot(frequency, gain)


def max_tracking_amplitude(gain: float, frequency: float, wavelength: float) -> float:
    """Largest sinusoid the loop can follow without slipping fringes.

    The loop tracks at most d(phase)/dt = 2 pi gain [rad/s]; a displacement
    A sin(2 pi f t) demands 4 pi A / lambda * 2 pi f.  Equality gives
    A_max = gain * lambda / (2 f).
    """
    if frequency <= 0:
        raise ValueError(f"frequency must be > 0, got {frequency}")
    return gain * wavelength / (2.0 * frequency)


class _NormalCache:
    """Amortized scalar standard-normal draws from block generation."""

    def __init__(self, rng: np.random.Generator, block: int = 1 << 16):
        self._rng = rng
        self._block = block
        self._buf = rng.standard_normal(block)
        self._i = 0

    def next(self) -> float:
        if self._i >= self._block:
            self._buf = self._rng.standard_normal(self._block)
            self._i = 0
        v = self._buf[self._i]
        self._i += 1
        return v


class LockedInterferometer:
    """Balanced interferometer with phase-tracking lock, as a displacement sensor.

    Callable with ``(t, z)`` per detector record; draws the two port counts,
    updates the lock, and returns the displacement estimate (linearized output
    plus residual).  Keeps full traces of the detector and loop channels.
    Raising when the running mean of the normalized error exceeds the slip
    threshold (the lock has lost the fringe).
    """

    def __init__(self, laser: LaserSpec, lock: LockConfig,
                 record_rate: float, rng: np.random.Generator, *,
                 roughness: RoughnessProcess | None = None,
                 phase_ref: float = 0.0, lo_ratio: float = 50.0,
                 gaussian_threshold: float = 1000.0,
                 slip_threshold: float = 0.6, slip_window: int = 1000):
        if record_rate <= 0:
            raise ConfigError(f"record_rate must be > 0, got {record_rate}")
        if lock.update_rate > record_rate * (1.0 + 1e-9):
            raise ConfigError(
                f"lock update rate {lock.update_rate:g} Hz exceeds the detector "
                f"record rate {record_rate:g} Hz")
        every = record_rate / lock.update_rate
        if abs(every - round(every)) > 1e-6:
            raise ConfigError(
                f"record rate {record_rate:g} Hz must be an integer multiple of "
                f"the lock update rate {lock.update_rate:g} Hz")
        self.laser = laser
        self.lock = lock
        self.record_rate = record_rate
        self.bin = 1.0 / record_rate
        self.rng = rng
        self.phase_ref = phase_ref
        self.lo_ratio = lo_ratio
        self.gaussian_threshold = gaussian_threshold
        self._update_every = int(round(every))
        self._since_update = 0
        self.state = LockState()
        self.slew_saturation_count = 0

        self._roughness = roughness
        if roughness is not None and roughness.sigma_theta > 0:
            self._theta = roughness.initial_phase(rng)
            self._ou_a, self._ou_s = roughness.step_coefficients(self.bin)
        else:
            self._theta = 0.0
            self._ou_a, self._ou_s = 1.0, 0.0

        self._normals = _NormalCache(rng)
        self._slip_alpha = 1.0 / slip_window
        self._slip_window = slip_window
        self._slip_threshold = slip_threshold
        self._slip_ema = 0.0
        self._n_records = 0

        # Compact traces: records run into the millions, so python lists of
        # float objects are too heavy.
        self.t = array.array("d")
        self.count_sum = array.array("d")
        self.count_diff = array.array("d")
        self.error = array.array("d")
        self.freq_offset = array.array("d")
        self.tracking_phase = array.array("d")

    def _draw(self, mu: float) -> float:
        if mu < self.gaussian_threshold:
            return float(self.rng.poisson(mu))
        return max(0.0, mu + math.sqrt(mu) * self._normals.next())

    def __call__(self, t: float, z: float) -> float:
        if self._ou_s != 0.0:
            self._theta = self._ou_a * self._theta + self._ou_s * self._normals.next()
        ref = self.phase_ref - self.state.tracking_phase
        mu_p, mu_m = expected_port_counts(z, ref, self.laser, self._theta,
                                          self.bin, self.lo_ratio)
        c_p = self._draw(mu_p)
        c_m = self._draw(mu_m)
        record = DetectorRecord(t, c_p + c_m, c_p - c_m, self.bin)
        u = normalized_error(record, self.lo_ratio)

        self._since_update += 1
        if self.lock.enabled and self._since_update >= self._update_every:
            self._since_update = 0
            self.state = lock_step(self.state, record, self.lock, self.lo_ratio)
            if self.state.slew_saturated:
                self.slew_saturation_count += 1

        self._n_records += 1
        self._slip_ema += self._slip_alpha * (abs(u) - self._slip_ema)
        if (self.lock.enabled and self._n_records > self._slip_window
                and self._slip_ema > self._slip_threshold):
            raise LockLossError(
                f"normalized error mean {self._slip_ema:.2f} exceeds "
                f"{self._slip_threshold} at t = {t:.4f} s; fringe lost")

        self.t.append(t)
        self.count_sum.append(record.count_sum)
        self.count_diff.append(record.count_diff)
        self.error.append(u)
        self.freq_offset.append(self.state.freq_offset)
        self.tracking_phase.append(self.state.tracking_phase)
        lam = self.laser.wavelength
        return (self.state.tracking_phase + u) * lam / (4.0 * math.pi)

    # Channel views -------------------------------------------------------

    def channel(self, name: str) -> np.ndarray:
        """Trace array view by channel name (t, count_sum, count_diff, ...)."""
        buf = getattr(self, name)
        if len(buf) == 0:
            return np.empty(0)
        return np.frombuffer(buf, dtype=float)

    def linearized(self) -> np.ndarray:
        """Lock output calibrated to displacement [m]: phase * lambda / (4 pi)."""
        lam = self.laser.wavelength
        return self.channel("tracking_phase") * lam / (4.0 * math.pi)

    def residual_displacement(self) -> np.ndarray:
        """Unsuppressed remainder of the fringe signal, as displacement [m]."""
        lam = self.laser.wavelength
        return self.channel("error") * lam / (4.0 * math.pi)

    def track(self, z: np.ndarray, t0: float = 0.0) -> None:
        """Run the sensor over a prescribed displacement record (rigid mirror)."""
        dt = self.bin
        for i, zi in enumerate(np.asarray(z, dtype=float)):
            self(t0 + i * dt, zi)


def _tone_rms(signal: np.ndarray, frequency: float, sample_rate: float,
              n_blocks: int = 8) -> tuple[float, float]:
    """Coherent-demodulation RMS amplitude of one tone, with block-scatter error.

    Trims to an integer number of periods, demodulates each of ``n_blocks``
    sub-records, and returns (rms_amplitude, standard_error).
    """
    n_per = sample_rate / frequency
    n = int(math.floor(len(signal) / n_per) * n_per)
    if n < 4 * n_per:
        raise ValueError("record too short for tone extraction")
    x = signal[:n]
    t = np.arange(n) / sample_rate
    blocks = np.array_split(np.arange(n), n_blocks)
    amps = []
    for idx in blocks:
        c = 2.0 * np.mean(x[idx] * np.cos(2.0 * math.pi * frequency * t[idx]))
        s = 2.0 * np.mean(x[idx] * np.sin(2.0 * math.pi * frequency * t[idx]))
        amps.append(math.hypot(c, s))
    amp = float(np.mean(amps))
    err = float(np.std(amps) / math.sqrt(len(amps)))
    return amp / math.sqrt(2.0), err / math.sqrt(2.0)


@dataclass(frozen=True)
class MirrorCalibration:
    """Loop suppression measured by driving a reference mirror."""

    drive_frequency: float        # [Hz]
    true_rms: float               # commanded mirror RMS amplitude [m]
    measured_rms: float           # residual-channel RMS amplitude [m]
    suppression: float            # true / measured
    uncertainty: float            # one sigma on the suppression


def mirror_calibration_run(amplitude: float, frequency: float, lock: LockConfig,
                           laser: LaserSpec, duration: float, record_rate: float,
                           seed: int, *, amplitude_tolerance: float = 0.10,
                           lo_ratio: float = 50.0) -> MirrorCalibration:
    """Drive a rigid mirror sinusoidally and measure the loop suppression.

    The mirror replaces the particle: no thermal motion, no surface roughness
    modulation, only counting noise.  The suppression is the commanded RMS
    amplitude over the residual-channel RMS amplitude at the drive frequency;
    its uncertainty combines the mirror-drive amplitude tolerance with the
    demodulation scatter.
    """
    if amplitude <= 0 or frequency <= 0:
        raise ConfigError("mirror amplitude and frequency must be > 0")
    rng = np.random.default_rng(seed)
    sensor = LockedInterferometer(laser, lock, record_rate, rng,
                                  roughness=None, lo_ratio=lo_ratio)
    n = int(round(duration * record_rate))
    t = np.arange(n) / record_rate
    sensor.track(amplitude * np.sin(2.0 * math.pi * frequency * t))
    measured, stat = _tone_rms(sensor.residual_displacement(), frequency, record_rate)
    true_rms = amplitude / math.sqrt(2.0)
    suppression = true_rms / measured
    rel = math.sqrt(amplitude_tolerance**2 + (stat / measured) ** 2)
    return MirrorCalibration(frequency, true_rms, measured, suppression,
                             suppression * rel)


def suppression_ratio(gain: float, probe_frequency: float, probe_amplitude: float,
                      laser: LaserSpec, duration: float, record_rate: float,
                      seed: int) -> float:
    """Measured suppression of a probe tone for a given normalized loop gain."""
    lock = LockConfig(gain=gain, update_rate=record_rate)
    cal = mirror_calibration_run(probe_amplitude, probe_frequency, lock, laser,
                                 duration, record_rate, seed)
    return cal.suppression
