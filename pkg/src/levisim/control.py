"""Feedback controllers and closed-loop cooling theory.

Theory half: two-sided closed-loop displacement spectra for velocity feedback
with gain gamma_fb on a noisy measurement, the in-loop (squashed) spectrum,
the optimal gain, and the attainable variance/occupation.  All spectra follow
the package convention: two-sided, ordinary-frequency normalization, variance
= integral S(omega) d omega / (2 pi).

Controller half: a biquad-bandpass velocity-feedback controller with a
configurable phase shift (the experimental implementation), an ideal
derivative controller (the textbook -m gamma_fb dx/dt), pulsed quadrant kicks
driven by camera snapshots, and intensity-slope radial cooling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import hbar, k as k_B

from .core import OscillatorMode
from .dynamics import ModePropagator
from .errors import AntiDampingError, ConfigError, NoiselessMeasurementError
from .sensing import BeamProfile, camera_snapshot, expected_intensity_count

# --------------------------------------------------------------------------
# Closed-loop theory


def closed_loop_psd(omega, mode: OscillatorMode, gamma_fb: float,
                    s_fn: float, s_epsilon: float):
    """True displacement PSD under velocity feedback with noisy error signal.

    S_xx = (S_FN + omega^2 m^2 gamma_fb^2 S_ee)
           / (m^2 ((omega0^2 - omega^2)^2 + omega^2 (gamma + gamma_fb)^2))

    with S_FN the total force noise and S_ee the displacement-equivalent error
    noise fed back onto the particle.  gamma_fb = 0 recovers the bare thermal
    Lorentzian.  Accepts scalar or array ``omega`` [rad/s].
    """
    if s_fn < 0 or s_epsilon < 0:
        raise ValueError("PSDs must be >= 0")
    w2 = np.asarray(omega, dtype=float) ** 2
    m2 = mode.m**2
    num = s_fn + w2 * m2 * gamma_fb**2 * s_epsilon
    den = m2 * ((mode.omega0**2 - w2) ** 2 + w2 * (mode.gamma + gamma_fb) ** 2)
    return num / den


def measured_psd_with_squashing(omega, mode: OscillatorMode, gamma_fb: float,
                                s_fn: float, s_sigma: float):
    """In-loop measured PSD S_(x+sigma)(x+sigma): what the feedback detector sees.

    S = (S_FN + m^2 ((omega0^2 - omega^2)^2 + omega^2 gamma^2) S_ss)
        / (m^2 ((omega0^2 - omega^2)^2 + omega^2 (gamma + gamma_fb)^2))

    Off resonance this tends to the measurement noise S_ss; above the optimal
    gain the on-resonance value dips *below* S_ss (noise squashing), because
    the fed-back measurement noise anti-correlates with the motion.
    """
    if s_fn < 0 or s_sigma < 0:
        raise ValueError("PSDs must be >= 0")
    w2 = np.asarray(omega, dtype=float) ** 2
    m2 = mode.m**2
    bare = (mode.omega0**2 - w2) ** 2
    num = s_fn + m2 * (bare + w2 * mode.gamma**2) * s_sigma
    den = m2 * (bare + w2 * (mode.gamma + gamma_fb) ** 2)
    return num / den


def optimal_gain(s_fn: float, s_epsilon: float, mode: OscillatorMode) -> float:
    """Feedback gain minimizing the displacement variance.

    gamma_fb_opt = sqrt(S_FN / (m^2 omega0^2 S_ee) + gamma^2) - gamma
    """
    if s_epsilon < 0 or s_fn < 0:
        raise ValueError("PSDs must be >= 0")
    if s_epsilon == 0.0:
        raise NoiselessMeasurementError(
            "S_ee = 0: a noiseless measurement makes the optimal gain unbounded")
    ratio = s_fn / (mode.m**2 * mode.omega0**2 * s_epsilon)
    return math.sqrt(ratio + mode.gamma**2) - mode.gamma


def variance_and_teff(mode: OscillatorMode, gamma_fb: float, s_fn: float,
                      s_epsilon: float) -> tuple[float, float, float]:
    """Closed-loop variance, effective temperature, and occupation.

    <x^2> = S_FN / (2 m^2 omega0^2 (gamma + gamma_fb))
            + gamma_fb^2 S_ee / (2 (gamma + gamma_fb))

    T_eff follows from k_B T_eff = m omega0^2 <x^2>, and the occupation from
    <x^2> = (hbar / (m omega0)) (n + 1/2).  High-Q (resonant-Lorentzian)
    approximation, accurate to ~1% for Q >= 100.
    """
    total = mode.gamma + gamma_fb
    if total <= 0:
        raise ValueError("gamma + gamma_fb must be > 0")
    if s_fn < 0 or s_epsilon < 0:
        raise ValueError("PSDs must be >= 0")
    x2 = (s_fn / (2.0 * mode.m**2 * mode.omega0**2 * total)
          + gamma_fb**2 * s_epsilon / (2.0 * total))
    t_eff = mode.m * mode.omega0**2 * x2 / k_B
    n_bar = mode.m * mode.omega0 * x2 / hbar - 0.5
    return x2, t_eff, n_bar


def min_variance(s_fn: float, s_epsilon: float, mode: OscillatorMode) -> float:
    """Minimum closed-loop variance, attained exactly at :func:`optimal_gain`.

    The exact minimum is <x^2>_min = S_ee * gamma_fb_opt; in the usual
    high-gain regime (gamma_fb_opt >> gamma) this reduces to
    sqrt(S_FN S_ee) / (m omega0).
    """
    return s_epsilon * optimal_gain(s_fn, s_epsilon, mode)


def cooling_limit_occupation(s_fn: float, s_epsilon: float) -> float:
    """Occupation floor of measurement-based cooling: n = sqrt(S_FN S_ee)/hbar - 1/2."""
    if s_fn < 0 or s_epsilon < 0:
        raise ValueError("PSDs must be >= 0")
    return math.sqrt(s_fn * s_epsilon) / hbar - 0.5


@dataclass(frozen=True)
class ClosedLoopSpectra:
    """Bundle of the closed-loop spectra for one mode and noise budget."""

    mode: OscillatorMode
    gamma_fb: float
    s_fn: float          # total force noise PSD [N^2/Hz]
    s_epsilon: float     # feedback error noise PSD [m^2/Hz]
    s_sigma: float       # measurement noise PSD seen in-loop [m^2/Hz]

    def __post_init__(self):
        if min(self.s_fn, self.s_epsilon, self.s_sigma) < 0:
            raise ConfigError("component PSDs must be >= 0")

    def s_xx(self, omega):
        return closed_loop_psd(omega, self.mode, self.gamma_fb, self.s_fn, self.s_epsilon)

    def s_measured(self, omega):
        return measured_psd_with_squashing(omega, self.mode, self.gamma_fb,
                                           self.s_fn, self.s_sigma)


# --------------------------------------------------------------------------
# Controllers


@dataclass(frozen=True)
class BandpassFeedback:
    """Bandpass velocity feedback: filter, phase shift, gain, force limit.

    The measured displacement passes a discrete second-order resonator
    (biquad) centered on ``center`` with the given ``bandwidth``, is delayed
    by ``phase_delay`` radians of carrier phase, and drives the force
    F = m * gain * omega0 * (delayed output).  ``phase_delay = pi/2`` makes
    this -m * gain * dx/dt at the center frequency.
    """

    center: float                 # [Hz]
    bandwidth: float              # [Hz]
    gain: float                   # gamma_fb [rad/s]
    phase_delay: float = math.pi / 2.0
    force_limit: float = 1e-6    # [N]

    def __post_init__(self):
        problems = []
        if self.center <= 0:
            problems.append(f"center must be > 0, got {self.center}")
        if self.bandwidth <= 0:
            problems.append(f"bandwidth must be > 0, got {self.bandwidth}")
        if not math.isfinite(self.force_limit) or self.force_limit <= 0:
            problems.append(f"force_limit must be finite and > 0, got {self.force_limit}")
        if problems:
            raise ConfigError(problems)

    def controller(self, mode: OscillatorMode, sample_rate: float) -> BandpassController:
        return BandpassController(self, mode, sample_rate)


def biquad_bandpass_coefficients(center: float, bandwidth: float,
                                 sample_rate: float) -> tuple[np.ndarray, np.ndarray]:
    """(b, a) of a constant-peak-gain digital resonator: unit gain, zero phase at center."""
    if center >= sample_rate / 2.0:
        raise ConfigError(f"center {center:g} Hz must lie below Nyquist "
                          f"{sample_rate / 2.0:g} Hz")
    w = 2.0 * math.pi * center / sample_rate
    alpha = math.sin(w) / (2.0 * center / bandwidth)
    a0 = 1.0 + alpha
    b = np.array([alpha, 0.0, -alpha]) / a0
    a = np.array([1.0, -2.0 * math.cos(w) / a0, (1.0 - alpha) / a0])
    return b, a


class BandpassController:
    """Stateful realization of :class:`BandpassFeedback` at a fixed sample rate."""

    def __init__(self, cfg: BandpassFeedback, mode: OscillatorMode, sample_rate: float):
        self.cfg = cfg
        self.mode = mode
        self.b, self.a = biquad_bandpass_coefficients(cfg.center, cfg.bandwidth, sample_rate)
        n_delay = round(cfg.phase_delay / (2.0 * math.pi) * sample_rate / cfg.center)
        self._delay = [0.0] * max(0, n_delay)
        self._u1 = self._u2 = self._y1 = self._y2 = 0.0
        self.saturation_count = 0

    def update(self, t: float, measurement: float) -> float:
        b, a = self.b, self.a
        y = (b[0] * measurement + b[2] * self._u2
             - a[1] * self._y1 - a[2] * self._y2)
        self._u2, self._u1 = self._u1, measurement
        self._y2, self._y1 = self._y1, y
        if self._delay:
            self._delay.append(y)
            y = self._delay.pop(0)
        force = self.mode.m * self.cfg.gain * self.mode.omega0 * y
        limit = self.cfg.force_limit
        if force > limit:
            force = limit
            self.saturation_count += 1
        elif force < -limit:
            force = -limit
            self.saturation_count += 1
        return force


@dataclass(frozen=True)
class DerivativeFeedback:
    """Ideal broadband velocity feedback F = -m gamma_fb dx/dt (finite difference)."""

    gain: float                  # gamma_fb [rad/s]
    force_limit: float = 1e-6   # [N]

    def controller(self, mode: OscillatorMode, sample_rate: float) -> DerivativeController:
        return DerivativeController(self, mode, sample_rate)


class DerivativeController:
    def __init__(self, cfg: DerivativeFeedback, mode: OscillatorMode, sample_rate: float):
        self.cfg = cfg
        self.mode = mode
        self.dt = 1.0 / sample_rate
        self._last = None
        self.saturation_count = 0

    def update(self, t: float, measurement: float) -> float:
        if self._last is None:
            self._last = measurement
            return 0.0
        velocity = (measurement - self._last) / self.dt
        self._last = measurement
        force = -self.mode.m * self.cfg.gain * velocity
        limit = self.cfg.force_limit
        if abs(force) > limit:
            force = math.copysign(limit, force)
            self.saturation_count += 1
        return force


def quadrant_of(radial_pos: tuple[float, float]) -> tuple[int, int]:
    """Sign pair classifying the radial quadrant; exactly-zero coordinates give 0."""
    return (0 if radial_pos[0] == 0.0 else int(math.copysign(1.0, radial_pos[0])),
            0 if radial_pos[1] == 0.0 else int(math.copysign(1.0, radial_pos[1])))


@dataclass(frozen=True)
class PulsedQuadrantFeedback:
    """Camera-triggered pulsed cooling of the radial motion.

    Each iteration takes two snapshots separated by ``separation`` radial
    periods, reconstructs per-axis amplitude and phase, waits ``wait`` periods
    and fires a fixed magnetic kick impulse against the predicted velocity at
    its extremum.  Kicks are skipped when the predicted speed falls below half
    a kick quantum (and, via the quadrant tie-break, when a snapshot
    coordinate is exactly zero).
    """

    kick_impulse: float           # [N s]
    iterations: int = 25
    separation: float = 0.2       # snapshot separation [radial periods]
    wait: float = 2.0             # wait before kick [radial periods]

    def __post_init__(self):
        problems = []
        if not 0.0 < self.separation < 0.5:
            problems.append(f"separation must be in (0, 0.5), got {self.separation}")
        if not math.isfinite(self.kick_impulse) or self.kick_impulse <= 0:
            problems.append(f"kick_impulse must be finite and > 0, got {self.kick_impulse}")
        if self.wait <= 0:
            problems.append(f"wait must be > 0, got {self.wait}")
        if self.iterations < 1:
            problems.append(f"iterations must be >= 1, got {self.iterations}")
        if problems:
            raise ConfigError(problems)


@dataclass
class QuadrantCoolingResult:
    """History of one pulsed-camera cooling run (two radial axes)."""

    amplitude_history: np.ndarray      # (iterations + 1, 2) true amplitudes [m]
    estimated_history: np.ndarray      # same shape, camera-estimated amplitudes
    kicks_applied: int
    kicks_skipped: int
    final_positions: tuple[float, float]
    final_velocities: tuple[float, float]

    def rms_displacement(self) -> tuple[float, float]:
        """Per-axis RMS displacement of the final state: amplitude / sqrt(2)."""
        return tuple(a / math.sqrt(2.0) for a in self.amplitude_history[-1])


def run_pulsed_camera_cooling(modes: tuple[OscillatorMode, OscillatorMode],
                              temperature: float,
                              initial_positions: tuple[float, float],
                              initial_velocities: tuple[float, float],
                              cfg: PulsedQuadrantFeedback,
                              rng: np.random.Generator, *,
                              pixel_pitch: float = 1e-6,
                              centroid_noise: float = 1e-7,
                              field_of_view: float = 500e-6) -> QuadrantCoolingResult:
    """Cool the two radial modes with camera-triggered magnetic kicks.

    Event-driven: the state is propagated exactly (matrix exponential with
    thermal noise) between snapshots and kicks, so the run costs a handful of
    small propagations per iteration regardless of the oscillation frequency.
    """
    state = [[initial_positions[0], initial_velocities[0]],
             [initial_positions[1], initial_velocities[1]]]
    periods = [2.0 * math.pi / m.omega0 for m in modes]

    def propagate(axis: int, dt: float):
        if dt <= 0:
            return
        prop = ModePropagator(modes[axis], dt, temperature)
        x, v = state[axis]
        state[axis] = list(prop.step(x, v, 0.0, rng.standard_normal(),
                                     rng.standard_normal()))

    def true_amplitude(axis: int) -> float:
        x, v = state[axis]
        return math.hypot(x, v / modes[axis].omega0)

    amp_hist = [ [true_amplitude(0), true_amplitude(1)] ]
    est_hist = [ [math.nan, math.nan] ]
    applied = skipped = 0

    for _ in range(cfg.iterations):
        snap1 = camera_snapshot((state[0][0], state[1][0]), pixel_pitch,
                                centroid_noise, rng, field_of_view)
        for axis in (0, 1):
            propagate(axis, cfg.separation * periods[axis])
        snap2 = camera_snapshot((state[0][0], state[1][0]), pixel_pitch,
                                centroid_noise, rng, field_of_view)
        est_iter = [math.nan, math.nan]
        for axis in (0, 1):
            omega = modes[axis].omega0
            delta = 2.0 * math.pi * cfg.separation
            x1, x2 = snap1[axis], snap2[axis]
            # Two-point harmonic reconstruction at the second snapshot:
            # x = A sin(theta), v/omega = A cos(theta).
            v2 = omega * ((x2 - x1 * math.cos(delta)) * math.cos(delta) / math.sin(delta)
                          - x1 * math.sin(delta))
            a_est = math.hypot(x2, v2 / omega)
            est_iter[axis] = a_est
            # Aim the kick at the next velocity extremum (zero of x) after the wait.
            theta2 = math.atan2(x2, v2 / omega)
            theta_min = theta2 + 2.0 * math.pi * cfg.wait
            theta_star = math.ceil(theta_min / math.pi) * math.pi
            propagate(axis, (theta_star - theta2) / omega)
            dv = cfg.kick_impulse / modes[axis].m
            v_pred = a_est * omega * math.cos(theta_star)
            if x2 == 0.0 or abs(v_pred) < dv / 2.0:
                skipped += 1
                continue
            state[axis][1] -= math.copysign(dv, v_pred)
            applied += 1
        amp_hist.append([true_amplitude(0), true_amplitude(1)])
        est_hist.append(est_iter)

    return QuadrantCoolingResult(
        amplitude_history=np.array(amp_hist),
        estimated_history=np.array(est_hist),
        kicks_applied=applied, kicks_skipped=skipped,
        final_positions=(state[0][0], state[1][0]),
        final_velocities=(state[0][1], state[1][1]))


@dataclass
class IntensityCoolingResult:
    """History of one intensity-slope cooling run on a single radial axis."""

    period_rms_true: np.ndarray        # per-period RMS of the true displacement [m]
    period_rms_measured: np.ndarray    # per-period RMS of the estimated displacement [m]
    final_rms: float                   # true RMS over the trailing 20% of the run [m]
    final_state: tuple[float, float]
    spectator_state: tuple[float, float]
    saturation_count: int


def run_intensity_cooling(mode: OscillatorMode, temperature: float,
                          initial_state: tuple[float, float],
                          profile: BeamProfile, fb: BandpassFeedback,
                          duration: float, sample_rate: float,
                          rng: np.random.Generator, *,
                          axis_index: int = 0,
                          spectator_mode: OscillatorMode | None = None,
                          spectator_state: tuple[float, float] = (0.0, 0.0),
                          gaussian_threshold: float = 1000.0,
                          abort_periods: int = 10,
                          abort_growth: float = 1.3) -> IntensityCoolingResult:
    """Cool one radial axis with the intensity-slope readout and bandpass feedback.

    The detection beam sits offset from the trap center so the count rate
    slopes linearly with displacement along ``axis_index``; the displacement
    estimate sigma^2/s * (N/N0 - 1) feeds the bandpass controller.  The other
    radial coordinate only enters through the Gaussian beam profile (second
    order when the beam is centered on that axis).  Monotone per-period growth
    of the measured displacement over ``abort_periods`` periods raises
    :class:`AntiDampingError` (wrong feedback phase).
    """
    offset = profile.offset[axis_index]
    if offset == 0.0:
        raise ConfigError("beam offset along the sensed axis must be nonzero "
                          "for a first-order intensity slope")
    dt = 1.0 / sample_rate
    n_steps = int(round(duration * sample_rate))
    if n_steps < 1:
        raise ConfigError("duration too short for one sample")
    n0 = expected_intensity_count((0.0, 0.0), profile, dt)
    if n0 <= 0:
        raise ConfigError("expected count at trap center is zero; check beam profile")
    slope_scale = profile.sigma**2 / offset

    prop = ModePropagator(mode, dt, temperature)
    spec_prop = None
    if spectator_mode is not None:
        spec_prop = ModePropagator(spectator_mode, dt, temperature)
    controller = fb.controller(mode, sample_rate)

    x, v = initial_state
    xs, vs = spectator_state
    noise = rng.standard_normal((n_steps, 5))
    n_per = max(1, int(round(sample_rate * 2.0 * math.pi / mode.omega0)))
    period_true: list[float] = []
    period_meas: list[float] = []
    acc_true = acc_meas = 0.0
    tail_start = int(n_steps * 0.8)
    tail_acc = 0.0
    tail_n = 0

    for i in range(n_steps):
        pos = (x, xs) if axis_index == 0 else (xs, x)
        mu = expected_intensity_count(pos, profile, dt)
        if mu < gaussian_threshold:
            n = float(rng.poisson(mu))
        else:
            n = max(0.0, mu + math.sqrt(mu) * noise[i, 4])
        estimate = slope_scale * (n / n0 - 1.0)
        force = controller.update(i * dt, estimate)
        x, v = prop.step(x, v, force / mode.m, noise[i, 0], noise[i, 1])
        if spec_prop is not None:
            xs, vs = spec_prop.step(xs, vs, 0.0, noise[i, 2], noise[i, 3])
        acc_true += x * x
        acc_meas += estimate * estimate
        if i >= tail_start:
            tail_acc += x * x
            tail_n += 1
        if (i + 1) % n_per == 0:
            period_true.append(math.sqrt(acc_true / n_per))
            period_meas.append(math.sqrt(acc_meas / n_per))
            acc_true = acc_meas = 0.0
            if len(period_meas) >= abort_periods:
                window = period_meas[-abort_periods:]
                rising = all(b > a for a, b in zip(window, window[1:]))
                if rising and window[-1] > abort_growth * window[0]:
                    raise AntiDampingError(
                        f"measured displacement grew monotonically for "
                        f"{abort_periods} periods (x{window[-1] / window[0]:.2f}); "
                        "feedback phase is anti-damping")

    return IntensityCoolingResult(
        period_rms_true=np.array(period_true),
        period_rms_measured=np.array(period_meas),
        final_rms=math.sqrt(tail_acc / max(1, tail_n)),
        final_state=(x, v),
        spectator_state=(xs, vs),
        saturation_count=controller.saturation_count)
