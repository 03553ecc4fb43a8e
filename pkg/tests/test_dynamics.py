"""Tests for the stochastic oscillator integrator.

The propagator is meant to be exact for the linear SDE at any step size, so
most checks here are algebraic identities rather than convergence studies.
"""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.constants import k as k_B

from levisim.core import OscillatorMode, driven_response
from levisim.dynamics import (
    ModePropagator,
    OscState,
    SimConfig,
    SinusoidalDrive,
    Trajectory,
    free_evolution_ensemble,
    oscillator_energy,
    ring_up_energy,
    simulate,
    thermal_force_psd,
)
from levisim.errors import ConfigError, NumericError, UnstableRunError

MASS = 5.999918369580907e-9


def make_mode(f0=160.0, quality=50.0):
    return OscillatorMode.from_frequency(MASS, f0, quality)


class TestHelpers:
    def test_thermal_force_psd_value(self):
        mode = make_mode(quality=2.6e7)
        expected = 2.0 * mode.gamma * mode.m * k_B * 300.0
        assert thermal_force_psd(mode, 300.0) == pytest.approx(expected, rel=1e-12)
        with pytest.raises(ValueError):
            thermal_force_psd(mode, -1.0)

    def test_oscillator_energy(self):
        mode = make_mode()
        x, v = 1e-6, 2e-3
        expected = 0.5 * mode.m * (v**2 + mode.omega0**2 * x**2)
        assert oscillator_energy(mode, x, v) == pytest.approx(expected, rel=1e-12)
        arr = oscillator_energy(mode, np.array([x, 0.0]), np.array([0.0, v]))
        assert arr.shape == (2,)

    def test_ring_up_energy_linear(self):
        assert ring_up_energy(5.0, 2.0, 3.0) == pytest.approx(11.0)
        t = np.array([0.0, 1.0, 2.0])
        np.testing.assert_allclose(ring_up_energy(1.0, 0.5, t), [1.0, 1.5, 2.0])
        with pytest.raises(ValueError):
            ring_up_energy(-1.0, 1.0, 0.0)


class TestPropagator:
    def test_stationary_covariance_identity(self):
        # Exactness requirement: Sigma_inf = M Sigma_inf M^T + L L^T at any dt
        mode = make_mode(quality=20.0)
        for dt in (1e-5, 1e-4, 5e-4):
            prop = ModePropagator(mode, dt, 300.0)
            lhs = prop.sigma_inf
            rhs = prop.m_step @ prop.sigma_inf @ prop.m_step.T + prop.l_noise @ prop.l_noise.T
            # off-diagonals are exact zeros; allow round-off at the matrix scale
            np.testing.assert_allclose(rhs, lhs, rtol=1e-10,
                                       atol=1e-10 * np.abs(lhs).max())

    def test_stationary_covariance_is_equipartition(self):
        mode = make_mode()
        prop = ModePropagator(mode, 1e-4, 10.0)
        assert prop.sigma_inf[0, 0] == pytest.approx(
            k_B * 10.0 / (mode.m * mode.omega0**2), rel=1e-12)
        assert prop.sigma_inf[1, 1] == pytest.approx(k_B * 10.0 / mode.m, rel=1e-12)
        assert prop.sigma_inf[0, 1] == 0.0

    def test_undamped_mode_rejects_finite_temperature(self):
        mode = OscillatorMode(m=MASS, omega0=2.0 * math.pi * 160.0, gamma=0.0)
        with pytest.raises(ConfigError):
            ModePropagator(mode, 1e-4, 300.0)
        ModePropagator(mode, 1e-4, 0.0)  # T = 0 is fine

    def test_deterministic_step_conserves_energy_undamped(self):
        mode = OscillatorMode(m=MASS, omega0=2.0 * math.pi * 160.0, gamma=0.0)
        prop = ModePropagator(mode, 1e-4, 0.0)
        x, v = 1e-6, 0.0
        e0 = oscillator_energy(mode, x, v)
        for _ in range(5000):
            x, v = prop.step(x, v, 0.0, 0.0, 0.0)
        assert oscillator_energy(mode, x, v) == pytest.approx(e0, rel=1e-9)

    def test_zoh_drive_shifts_equilibrium(self):
        # Constant acceleration a has fixed point (a / omega0^2, 0)
        mode = make_mode(quality=5.0)
        prop = ModePropagator(mode, 1e-4, 0.0)
        a = 1e-3
        x, v = a / mode.omega0**2, 0.0
        xn, vn = prop.step(x, v, a, 0.0, 0.0)
        assert xn == pytest.approx(x, rel=1e-12)
        assert vn == pytest.approx(0.0, abs=1e-15 * mode.omega0 * x)


class TestSimulate:
    def make_config(self, duration=0.5, sample_rate=16000.0, quality=50.0,
                    temperature=300.0, seed=42):
        mode = make_mode(quality=quality)
        return SimConfig(dt=1.0 / sample_rate, sample_rate=sample_rate,
                         duration=duration, seed=seed, modes=(mode,),
                         bath_temperature=temperature)

    def test_determinism_vectorized(self):
        cfg = self.make_config()
        a = simulate(cfg)
        b = simulate(cfg)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.v, b.v)

    def test_determinism_sequential(self):
        cfg = self.make_config(duration=0.1)
        sensor = lambda t, x: x
        a = simulate(cfg, sensor=sensor)
        b = simulate(cfg, sensor=sensor)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.measurement, b.measurement)

    def test_seed_changes_path(self):
        a = simulate(self.make_config(seed=1))
        b = simulate(self.make_config(seed=2))
        assert not np.array_equal(a.x, b.x)

    def test_equipartition_long_run(self):
        # var(x) -> k_B T / (m omega0^2) once thermalized
        cfg = self.make_config(duration=8.0, quality=10.0)
        traj = simulate(cfg)
        x = traj.column("z")
        var_target = k_B * 300.0 / (cfg.modes[0].m * cfg.modes[0].omega0**2)
        # ~ gamma * T / 2 pi = 100 independent samples either side
        assert x[len(x) // 4:].var() == pytest.approx(var_target, rel=0.25)

    def test_zoh_drive_matches_analytic_response(self):
        cfg = self.make_config(duration=4.0, temperature=0.0)
        mode = cfg.modes[0]
        drive = SinusoidalDrive(amplitude=1e-12, frequency=100.0)
        traj = simulate(cfg, drives=(drive,))
        x = traj.column("z")
        # last 2 s: 200 whole drive periods, transient decayed by e^-20
        measured_rms = float(np.sqrt(np.mean(x[len(x) // 2:] ** 2)))
        predicted = driven_response(1e-12, mode, 100.0)
        assert measured_rms == pytest.approx(predicted, rel=0.02)

    def test_resonant_drive_aborts(self):
        cfg = self.make_config(duration=2.0, quality=2.6e7, temperature=0.0)
        drive = SinusoidalDrive(amplitude=1e-6, frequency=160.0)
        with pytest.raises(UnstableRunError):
            simulate(cfg, drives=(drive,))

    def test_feedback_latency_one_record(self):
        cfg = self.make_config(duration=64.0 / 16000.0, temperature=0.0)

        class Marker:
            def update(self, t, meas):
                return 1e-15 * (1.0 + t)

        traj = simulate(cfg, controller=Marker(), latency=1)
        fb = traj.column("z", "f_fb")
        dt = cfg.dt
        assert fb[0] == 0.0
        for n in (1, 2, 10, 63):
            assert fb[n] == pytest.approx(1e-15 * (1.0 + (n - 1) * dt), rel=1e-12)

    def test_feedback_zero_latency(self):
        cfg = self.make_config(duration=64.0 / 16000.0, temperature=0.0)

        class Marker:
            def update(self, t, meas):
                return 1e-15 * (1.0 + t)

        traj = simulate(cfg, controller=Marker(), latency=0)
        fb = traj.column("z", "f_fb")
        for n in (0, 5, 63):
            assert fb[n] == pytest.approx(1e-15 * (1.0 + n * cfg.dt), rel=1e-12)

    def test_sensor_channel_recorded(self):
        cfg = self.make_config(duration=0.05)
        traj = simulate(cfg, sensor=lambda t, x: x + 1.0)
        np.testing.assert_allclose(traj.measurement, traj.column("z") + 1.0, rtol=1e-12)

    def test_sequential_path_requires_record_every_step(self):
        mode = make_mode()
        cfg = SimConfig(dt=1.0 / 32000.0, sample_rate=16000.0, duration=0.1,
                        seed=0, modes=(mode,), bath_temperature=300.0)
        with pytest.raises(ConfigError):
            simulate(cfg, sensor=lambda t, x: x)
        simulate(cfg)  # decimated vectorized run is fine

    def test_damping_sign(self):
        # free decay at T = 0 loses energy at rate gamma
        mode = make_mode(quality=10.0)
        cfg = SimConfig(dt=1e-4, sample_rate=1e4, duration=0.05, seed=0,
                        modes=(mode,), bath_temperature=0.0)
        state0 = OscState(positions=(1e-6,), velocities=(0.0,))
        traj = simulate(cfg, state0=state0)
        e = oscillator_energy(mode, traj.column("z"), traj.column("z", "v"))
        ratio = e[-1] / e[0]
        assert ratio == pytest.approx(math.exp(-mode.gamma * traj.t[-1]), rel=0.05)


class TestConfigValidation:
    def test_collects_all_violations(self):
        with pytest.raises(ConfigError) as exc:
            SimConfig(dt=-1.0, sample_rate=0.0, duration=-2.0, seed="x",
                      modes=(), bath_temperature=-3.0)
        assert len(exc.value.violations) >= 4

    def test_non_divisible_rates_rejected(self):
        mode = make_mode()
        with pytest.raises(ConfigError, match="whole number"):
            SimConfig(dt=1e-4, sample_rate=7000.0, duration=1.0, seed=0,
                      modes=(mode,), bath_temperature=0.0)

    def test_step_size_limit(self):
        mode = make_mode(f0=1000.0)
        with pytest.raises(ConfigError, match="steps per period"):
            SimConfig(dt=1e-3, sample_rate=1e3, duration=1.0, seed=0,
                      modes=(mode,), bath_temperature=0.0)

    def test_default_axes_assignment(self):
        mode = make_mode()
        one = SimConfig(dt=1e-4, sample_rate=1e4, duration=0.1, seed=0,
                        modes=(mode,), bath_temperature=0.0)
        assert one.axes == ("z",)
        three = SimConfig(dt=1e-4, sample_rate=1e4, duration=0.1, seed=0,
                          modes=(mode, mode, mode), bath_temperature=0.0)
        assert three.axes == ("x", "y", "z")

    def test_state_validation(self):
        with pytest.raises(NumericError):
            OscState(positions=(math.nan,), velocities=(0.0,))
        with pytest.raises(ConfigError):
            OscState(positions=(0.0, 0.0), velocities=(0.0,))


class TestEnsemble:
    def test_shapes_and_initial_condition(self):
        mode = make_mode(quality=5.0)
        rng = np.random.default_rng(0)
        x, v = free_evolution_ensemble(mode, 300.0, 1e-4, 50, 16, rng,
                                       x0=1e-7, v0=2e-4)
        assert x.shape == (16, 51) and v.shape == (16, 51)
        assert np.all(x[:, 0] == 1e-7)
        np.testing.assert_allclose(v[:, 0], 2e-4, rtol=1e-9)

    def test_thermalizes_to_equipartition(self):
        mode = make_mode(quality=5.0)
        rng = np.random.default_rng(7)
        n_steps = 1600  # 0.16 s = 32 damping times
        x, v = free_evolution_ensemble(mode, 300.0, 1e-4, n_steps, 2000, rng)
        var_target = k_B * 300.0 / (mode.m * mode.omega0**2)
        assert x[:, -1].var() == pytest.approx(var_target, rel=0.1)
        assert v[:, -1].var() == pytest.approx(k_B * 300.0 / mode.m, rel=0.1)

    def test_matches_single_step_recursion(self):
        # the vectorized AR(2) path must reproduce ModePropagator.step draws
        mode = make_mode(quality=8.0)
        dt, n_steps = 1e-4, 300
        prop = ModePropagator(mode, dt, 250.0)
        rng = np.random.default_rng(123)
        x_vec, v_vec = free_evolution_ensemble(mode, 250.0, dt, n_steps, 1, rng,
                                               x0=3e-8, v0=-1e-5)
        # replay the identical noise stream through the scalar stepper
        rng = np.random.default_rng(123)
        xi1 = rng.standard_normal((1, n_steps + 1))[0]
        xi2 = rng.standard_normal((1, n_steps + 1))[0]
        x, v = 3e-8, -1e-5
        xs = [x]
        for n in range(n_steps):
            x, v = prop.step(x, v, 0.0, xi1[n], xi2[n])
            xs.append(x)
        np.testing.assert_allclose(x_vec[0], xs, rtol=1e-8, atol=1e-18)


class TestTrajectory:
    def test_column_lookup_and_export(self, tmp_path):
        mode = make_mode()
        cfg = SimConfig(dt=1e-4, sample_rate=1e4, duration=0.01, seed=3,
                        modes=(mode, mode), axes=("y", "z"), bath_temperature=10.0)
        traj = simulate(cfg)
        assert traj.column("y").shape == traj.column("z").shape
        out = tmp_path / "traj.csv"
        traj.export(out)
        header = out.read_text().splitlines()[0]
        assert header == "t,x,y,z,vx,vy,vz,F_fb"
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        assert data.shape[1] == 8
        np.testing.assert_allclose(data[:, 3], traj.column("z"))
        assert np.all(data[:, 1] == 0.0)  # x axis absent from the run

    def test_mismatched_lengths_rejected(self):
        mode = make_mode()
        cfg = SimConfig(dt=1e-4, sample_rate=1e4, duration=0.01, seed=0,
                        modes=(mode,), bath_temperature=0.0)
        with pytest.raises(ConfigError):
            Trajectory(t=np.zeros(5), x=np.zeros((4, 1)), v=np.zeros((5, 1)),
                       f_fb=np.zeros((5, 1)), axes=("z",), config=cfg, seed=0)
