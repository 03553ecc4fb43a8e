"""Time-domain stochastic simulation of the damped, driven, noisy harmonic
oscillator, one mode per axis.

The equation of motion per axis is

    m x'' + m gamma x' + m omega0^2 x = F_thermal + F_drive + F_feedback

integrated with the exact matrix-exponential propagator of the linear SDE over
each step: the deterministic part uses expm(A dt) of the companion matrix, and
the thermal force enters through the exact per-step noise covariance (the
stationary covariance minus its one-step propagation).  The scheme is
unconditionally stable and preserves equipartition at any step size; drives
and feedback forces are held constant over a step (zero-order hold).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.constants import k as k_B
from scipy.linalg import expm
from scipy.signal import lfilter

from .core import OscillatorMode
from .errors import ConfigError, NumericError, UnstableRunError


def thermal_force_psd(mode: OscillatorMode, temperature: float) -> float:
    """Two-sided thermal force PSD 2 gamma m k_B T [N^2/Hz] (fluctuation-dissipation)."""
    if temperature < 0:
        raise ValueError(f"temperature must be >= 0, got {temperature}")
    return 2.0 * mode.gamma * mode.m * k_B * temperature


def oscillator_energy(mode: OscillatorMode, x, v):
    """Instantaneous mechanical energy (1/2) m (v^2 + omega0^2 x^2) [J]."""
    return 0.5 * mode.m * (np.asarray(v) ** 2 + mode.omega0**2 * np.asarray(x) ** 2)


def ring_up_energy(n0: float, gamma_th: float, t):
    """Expected occupation n(t) = n0 + Gamma_th * t during reheating."""
    if n0 < 0 or gamma_th < 0:
        raise ValueError("n0 and gamma_th must be >= 0")
    return n0 + gamma_th * np.asarray(t)


@dataclass(frozen=True)
class SinusoidalDrive:
    """Deterministic force drive F(t) = amplitude * sin(2 pi f t + phase)."""

    amplitude: float      # peak force [N]
    frequency: float      # [Hz]
    phase: float = 0.0    # [rad]

    def force(self, t: float) -> float:
        return self.amplitude * math.sin(2.0 * math.pi * self.frequency * t + self.phase)


@dataclass(frozen=True)
class SimConfig:
    """Simulation run configuration.

    ``dt`` is the integrator step, ``sample_rate`` the detector record rate;
    records are decimated from integrator steps, so 1/(dt * sample_rate) must
    be a whole number.  ``seed`` is mandatory: there is no wall-clock default.
    """

    dt: float
    sample_rate: float
    duration: float
    seed: int
    modes: tuple[OscillatorMode, ...]
    bath_temperature: float
    axes: tuple[str, ...] | None = None

    def __post_init__(self):
        problems = []
        if self.dt <= 0:
            problems.append(f"dt must be > 0, got {self.dt}")
        if self.duration <= 0:
            problems.append(f"duration must be > 0, got {self.duration}")
        if self.bath_temperature < 0:
            problems.append(f"bath_temperature must be >= 0, got {self.bath_temperature}")
        if not isinstance(self.seed, (int, np.integer)):
            problems.append(f"seed must be an integer, got {self.seed!r}")
        if not self.modes:
            problems.append("at least one OscillatorMode is required")
        if self.axes is None:
            object.__setattr__(self, "axes", ("x", "y", "z")[-len(self.modes):])
        elif len(self.axes) != len(self.modes):
            problems.append(f"axes {self.axes} do not match {len(self.modes)} modes")
        if self.dt > 0 and self.modes:
            fmax = max(m.f0 for m in self.modes)
            if self.dt > 1.0 / (50.0 * fmax):
                problems.append(
                    f"dt = {self.dt:g} exceeds 1/(50 max f0) = {1.0 / (50.0 * fmax):g}; "
                    "need at least 50 steps per period")
            if self.sample_rate <= 0:
                problems.append(f"sample_rate must be > 0, got {self.sample_rate}")
            elif self.sample_rate > 1.0 / self.dt + 1e-9:
                problems.append(
                    f"sample_rate = {self.sample_rate:g} exceeds 1/dt = {1.0 / self.dt:g}")
            else:
                ratio = 1.0 / (self.dt * self.sample_rate)
                if abs(ratio - round(ratio)) > 1e-6:
                    problems.append(
                        f"1/(dt*sample_rate) = {ratio:g} is not a whole number of steps")
        if problems:
            raise ConfigError(problems)

    @property
    def steps_per_record(self) -> int:
        return round(1.0 / (self.dt * self.sample_rate))

    @property
    def n_steps(self) -> int:
        return round(self.duration / self.dt)


@dataclass(frozen=True)
class OscState:
    """Instantaneous per-axis mechanical state."""

    positions: tuple[float, ...]
    velocities: tuple[float, ...]
    t: float = 0.0

    def __post_init__(self):
        vals = (*self.positions, *self.velocities, self.t)
        if not all(math.isfinite(val) for val in vals):
            raise NumericError(f"non-finite state: {self}")
        if len(self.positions) != len(self.velocities):
            raise ConfigError("positions and velocities must have equal length")


@dataclass
class Trajectory:
    """Sampled output of one run: times, states, applied feedback force record.

    Arrays are uniformly sampled at the configured ``sample_rate``; ``x``,
    ``v`` and ``f_fb`` have one column per mode (axis order in ``axes``).
    ``measurement`` carries the sensor channel of the controlled axis, when a
    sensor was attached.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    f_fb: np.ndarray
    axes: tuple[str, ...]
    config: SimConfig
    seed: int
    measurement: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.t)
        if not (self.x.shape[0] == self.v.shape[0] == self.f_fb.shape[0] == n):
            raise ConfigError("trajectory arrays must have equal length")

    def column(self, axis: str, which: str = "x") -> np.ndarray:
        idx = self.axes.index(axis)
        return getattr(self, which)[:, idx]

    def export(self, path, feedback_axis: str | None = None) -> None:
        """Write the columnar trajectory file ``t,x,y,z,vx,vy,vz,F_fb``.

        Axes absent from the run are written as zero; F_fb is the feedback
        force on ``feedback_axis`` (default: the last simulated axis).
        """
        n = len(self.t)
        cols = {name: np.zeros(n) for name in ("x", "y", "z", "vx", "vy", "vz")}
        for i, name in enumerate(self.axes):
            cols[name] = self.x[:, i]
            cols["v" + name] = self.v[:, i]
        fb = self.column(feedback_axis or self.axes[-1], "f_fb")
        data = np.column_stack([self.t, cols["x"], cols["y"], cols["z"],
                                cols["vx"], cols["vy"], cols["vz"], fb])
        np.savetxt(path, data, delimiter=",", header="t,x,y,z,vx,vy,vz,F_fb", comments="")


class ModePropagator:
    """Exact one-step propagator of a single damped stochastic oscillator.

    Exposes the step matrix ``M = expm(A dt)``, the zero-order-hold drive
    response vector ``b`` (state increment per unit acceleration), and the
    Cholesky factor ``L`` of the exact per-step thermal noise covariance.
    """

    def __init__(self, mode: OscillatorMode, dt: float, temperature: float):
        if mode.gamma == 0.0 and temperature > 0.0:
            raise ConfigError(
                "gamma = 0 with T > 0 has no stationary thermal state; "
                "set temperature = 0 or give the mode finite damping")
        self.mode = mode
        self.dt = dt
        a_mat = np.array([[0.0, 1.0], [-mode.omega0**2, -mode.gamma]])
        self.m_step = expm(a_mat * dt)
        # ZOH acceleration a shifts the equilibrium to (a/omega0^2, 0):
        # state' = M (state - p) + p = M state + (I - M) p
        self.b = (np.eye(2) - self.m_step) @ np.array([1.0 / mode.omega0**2, 0.0])
        if temperature > 0.0:
            sigma_inf = np.diag([k_B * temperature / (mode.m * mode.omega0**2),
                                 k_B * temperature / mode.m])
            q_cov = sigma_inf - self.m_step @ sigma_inf @ self.m_step.T
            q_cov = 0.5 * (q_cov + q_cov.T)
            try:
                self.l_noise = np.linalg.cholesky(q_cov)
            except np.linalg.LinAlgError:
                # Round-off can push a tiny eigenvalue below zero at small dt.
                w, vec = np.linalg.eigh(q_cov)
                self.l_noise = vec @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
        else:
            self.l_noise = np.zeros((2, 2))
        self.sigma_inf = (np.diag([k_B * temperature / (mode.m * mode.omega0**2),
                                   k_B * temperature / mode.m])
                          if temperature > 0.0 else np.zeros((2, 2)))

    def step(self, x: float, v: float, accel: float,
             xi1: float, xi2: float) -> tuple[float, float]:
        m = self.m_step
        b = self.b
        l_n = self.l_noise
        xn = m[0, 0] * x + m[0, 1] * v + accel * b[0] + l_n[0, 0] * xi1
        vn = (m[1, 0] * x + m[1, 1] * v + accel * b[1]
              + l_n[1, 0] * xi1 + l_n[1, 1] * xi2)
        return xn, vn


def _free_path(prop: ModePropagator, x0: float, v0: float, n_steps: int,
               rng: np.random.Generator,
               accel: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized free/driven evolution over n_steps (no feedback in the loop).

    Folds the stepwise state update into a second-order AR recursion on the
    position and reconstructs velocities, which is algebraically identical to
    iterating :meth:`ModePropagator.step`.
    """
    m = prop.m_step
    trace_m, det_m = m[0, 0] + m[1, 1], m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    n_tot = n_steps + 1  # one extra step so every velocity is reconstructible
    l_n = prop.l_noise
    if l_n[0, 0] != 0.0 or l_n[1, 1] != 0.0:
        xi1 = rng.standard_normal(n_tot)
        xi2 = rng.standard_normal(n_tot)
        wx = l_n[0, 0] * xi1
        wv = l_n[1, 0] * xi1 + l_n[1, 1] * xi2
    else:
        wx = np.zeros(n_tot)
        wv = np.zeros(n_tot)
    if accel is not None:
        wx[:len(accel)] += prop.b[0] * accel
        wv[:len(accel)] += prop.b[1] * accel
    x = np.empty(n_tot + 1)
    x[0] = x0
    x[1] = m[0, 0] * x0 + m[0, 1] * v0 + wx[0]
    if n_tot >= 2:
        e = wx[1:] + m[0, 1] * wv[:-1] - m[1, 1] * wx[:-1]
        zi = np.array([trace_m * x[1] - det_m * x[0], -det_m * x[1]])
        x[2:], _ = lfilter([1.0], [1.0, -trace_m, det_m], e, zi=zi)
    v = (x[1:] - m[0, 0] * x[:-1] - wx) / m[0, 1]
    return x[:n_steps + 1], v[:n_steps + 1]


def free_evolution_ensemble(mode: OscillatorMode, temperature: float, dt: float,
                            n_steps: int, n_seeds: int,
                            rng: np.random.Generator,
                            x0: float = 0.0, v0: float = 0.0
                            ) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble of free-evolution paths, vectorized across seeds.

    Returns position and velocity arrays of shape (n_seeds, n_steps + 1),
    every path starting from (x0, v0).
    """
    prop = ModePropagator(mode, dt, temperature)
    m = prop.m_step
    trace_m, det_m = m[0, 0] + m[1, 1], m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    n_tot = n_steps + 1
    xi1 = rng.standard_normal((n_seeds, n_tot))
    xi2 = rng.standard_normal((n_seeds, n_tot))
    l_n = prop.l_noise
    wx = l_n[0, 0] * xi1
    wv = l_n[1, 0] * xi1 + l_n[1, 1] * xi2
    x = np.empty((n_seeds, n_tot + 1))
    x[:, 0] = x0
    x[:, 1] = m[0, 0] * x0 + m[0, 1] * v0 + wx[:, 0]
    e = wx[:, 1:] + m[0, 1] * wv[:, :-1] - m[1, 1] * wx[:, :-1]
    zi = np.column_stack([trace_m * x[:, 1] - det_m * x[:, 0], -det_m * x[:, 1]])
    x[:, 2:], _ = lfilter([1.0], [1.0, -trace_m, det_m], e, zi=zi, axis=1)
    v = (x[:, 1:] - m[0, 0] * x[:, :-1] - wx) / m[0, 1]
    return x[:, :n_steps + 1], v[:, :n_steps + 1]


def simulate(config: SimConfig, state0: OscState | None = None,
             controller=None, drives: Sequence[SinusoidalDrive] = (),
             sensor: Callable[[float, float], float] | None = None,
             controlled_axis: str | None = None, latency: int = 1,
             instability_bound: float = 1e-3) -> Trajectory:
    """Integrate every configured mode over the run duration.

    Parameters
    ----------
    config : SimConfig
        Step size, record rate, duration, seed, modes, bath temperature.
    state0 : OscState, optional
        Initial state per axis (default: rest at the origin).
    controller : object, optional
        Causal feedback hook with ``update(t, measurement) -> force [N]``,
        called once per record on the controlled axis; its output is held
        constant until the next record and applied after ``latency`` records.
    drives : sequence of SinusoidalDrive
        Deterministic forces on the controlled axis, zero-order held per step.
    sensor : callable, optional
        ``sensor(t, x) -> measurement`` for the controlled axis, evaluated at
        record times.  Defaults to reading the true position.
    controlled_axis : str, optional
        Axis receiving sensor/controller/drives (default: last configured).
    latency : int
        Feedback delay in whole records (default 1).
    instability_bound : float
        |x| beyond this bound [m] aborts with :class:`UnstableRunError`.

    Notes
    -----
    Runs without controller and sensor use a vectorized path; with hooks the
    controlled axis steps sequentially (and must then record every step, i.e.
    ``steps_per_record == 1``).  Either way the run is deterministic given the
    seed.
    """
    axes = config.axes
    n_modes = len(config.modes)
    if state0 is None:
        state0 = OscState(positions=(0.0,) * n_modes, velocities=(0.0,) * n_modes)
    if len(state0.positions) != n_modes:
        raise ConfigError(f"state0 has {len(state0.positions)} axes, config {n_modes}")
    ctl_idx = axes.index(controlled_axis) if controlled_axis else n_modes - 1
    if latency < 0:
        raise ConfigError(f"latency must be >= 0, got {latency}")

    spr = config.steps_per_record
    n_steps = config.n_steps
    n_rec = n_steps // spr
    root = np.random.SeedSequence(config.seed)
    axis_rngs = [np.random.default_rng(s) for s in root.spawn(n_modes)]

    t_rec = np.arange(n_rec) / config.sample_rate
    x_rec = np.empty((n_rec, n_modes))
    v_rec = np.empty((n_rec, n_modes))
    f_rec = np.zeros((n_rec, n_modes))
    meas_rec = None

    needs_loop = controller is not None or sensor is not None
    for idx in range(n_modes):
        prop = ModePropagator(config.modes[idx], config.dt, config.bath_temperature)
        rng = axis_rngs[idx]
        x0, v0 = state0.positions[idx], state0.velocities[idx]
        if idx != ctl_idx or not needs_loop:
            accel = None
            if idx == ctl_idx and drives:
                t_steps = np.arange(n_steps + 1) * config.dt
                accel = sum(d.amplitude * np.sin(2.0 * np.pi * d.frequency * t_steps
                                                 + d.phase) for d in drives) / prop.mode.m
            x_path, v_path = _free_path(prop, x0, v0, n_steps, rng, accel)
            bad = ~np.isfinite(x_path)
            if bad.any():
                raise NumericError(f"non-finite position on axis {axes[idx]}")
            over = np.abs(x_path) > instability_bound
            if over.any():
                k = int(np.argmax(over))
                raise UnstableRunError(
                    f"|{axes[idx]}| = {abs(x_path[k]):.3g} m exceeded "
                    f"{instability_bound:g} m at t = {k * config.dt:.6g} s")
            x_rec[:, idx] = x_path[:n_rec * spr:spr]
            v_rec[:, idx] = v_path[:n_rec * spr:spr]
            continue

        # Sequential causal loop on the controlled axis.
        if spr != 1:
            raise ConfigError(
                "controller/sensor runs require sample_rate == 1/dt "
                f"(got {spr} steps per record)")
        meas_rec = np.empty(n_rec)
        xi1 = rng.standard_normal(n_steps)
        xi2 = rng.standard_normal(n_steps)
        queue = deque([0.0] * latency)
        m00, m01 = prop.m_step[0, 0], prop.m_step[0, 1]
        m10, m11 = prop.m_step[1, 0], prop.m_step[1, 1]
        b0, b1 = prop.b
        l00, l10, l11 = prop.l_noise[0, 0], prop.l_noise[1, 0], prop.l_noise[1, 1]
        inv_m = 1.0 / prop.mode.m
        dt = config.dt
        x, v = x0, v0
        f_applied = 0.0
        for n in range(n_rec):
            t = n * dt
            meas = sensor(t, x) if sensor is not None else x
            if controller is not None:
                if latency == 0:
                    f_applied = controller.update(t, meas)
                else:
                    queue.append(controller.update(t, meas))
                    f_applied = queue.popleft()
            x_rec[n, idx] = x
            v_rec[n, idx] = v
            f_rec[n, idx] = f_applied
            meas_rec[n] = meas
            force = f_applied
            for d in drives:
                force += d.amplitude * math.sin(2.0 * math.pi * d.frequency * t + d.phase)
            accel = force * inv_m
            xn = m00 * x + m01 * v + accel * b0 + l00 * xi1[n]
            vn = m10 * x + m11 * v + accel * b1 + l10 * xi1[n] + l11 * xi2[n]
            x, v = xn, vn
            if not (-instability_bound <= x <= instability_bound):
                if not math.isfinite(x):
                    raise NumericError(f"non-finite position on axis {axes[idx]} "
                                       f"at t = {t + dt:.6g} s")
                raise UnstableRunError(
                    f"|{axes[idx]}| = {abs(x):.3g} m exceeded {instability_bound:g} m "
                    f"at t = {t + dt:.6g} s (wrong feedback sign or gain?)")

    return Trajectory(t=t_rec, x=x_rec, v=v_rec, f_fb=f_rec, axes=axes,
                      config=replace(config), seed=config.seed, measurement=meas_rec)
