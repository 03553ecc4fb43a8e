"""Tests for the phase-tracking lock and the locked interferometric sensor."""
from __future__ import annotations

import math

import numpy as np
import pytest

from levisim.errors import ConfigError, LockLossError, LockUnstableError
from levisim.phaselock import (
    LOCK_UNITS_PER_VOLT,
    LockConfig,
    LockState,
    LockedInterferometer,
    closed_loop_fidelity,
    gain_from_hz_per_volt,
    lock_step,
    loop_suppression,
    max_tracking_amplitude,
    mirror_calibration_run,
    normalized_error,
    suppression_ratio,
)
from levisim.sensing import DetectorRecord, LaserSpec, expected_port_counts, phase_of

WAVELENGTH = 637e-9
RECORD_RATE = 200e3


def paper_gain():
    return gain_from_hz_per_volt(8000.0)


class TestLockConfig:
    def test_gain_conversion(self):
        assert gain_from_hz_per_volt(8000.0) == pytest.approx(
            8000.0 * LOCK_UNITS_PER_VOLT, rel=1e-12)
        assert gain_from_hz_per_volt(0.0) == 0.0

    def test_validation_collects_problems(self):
        with pytest.raises(ConfigError) as exc:
            LockConfig(gain=-1.0, update_rate=0.0, slew_limit=-2.0)
        assert len(exc.value.violations) == 3

    def test_discrete_stability_bound(self):
        # loop step 2 pi g / f_update must stay below one radian
        limit = RECORD_RATE / (2.0 * math.pi)
        with pytest.raises(LockUnstableError):
            LockConfig(gain=1.05 * limit, update_rate=RECORD_RATE)
        LockConfig(gain=0.95 * limit, update_rate=RECORD_RATE)
        # a disabled lock is exempt: the loop never acts
        LockConfig(gain=10.0 * limit, update_rate=RECORD_RATE, enabled=False)


class TestLockStep:
    def record_with_error(self, u: float, lo_ratio: float = 50.0) -> DetectorRecord:
        scale = (1.0 + lo_ratio) / (2.0 * math.sqrt(lo_ratio))
        total = 10_000
        return DetectorRecord(0.0, total, round(u / scale * total), 1e-5)

    def test_proportional_update(self):
        cfg = LockConfig(gain=1000.0, update_rate=RECORD_RATE)
        rec = self.record_with_error(0.2)
        state = lock_step(LockState(), rec, cfg)
        u = normalized_error(rec)
        assert state.freq_offset == pytest.approx(cfg.gain * u, rel=1e-12)
        assert state.tracking_phase == pytest.approx(
            2.0 * math.pi * state.freq_offset / cfg.update_rate, rel=1e-12)
        assert not state.slew_saturated

    def test_slew_limit_clips(self):
        cfg = LockConfig(gain=1000.0, update_rate=RECORD_RATE, slew_limit=1e4)
        rec = self.record_with_error(0.5)
        state = lock_step(LockState(), rec, cfg)
        assert state.slew_saturated
        assert state.freq_offset == pytest.approx(1e4 / RECORD_RATE, rel=1e-12)

    def test_disabled_lock_freezes(self):
        cfg = LockConfig(gain=1000.0, update_rate=RECORD_RATE, enabled=False)
        before = LockState(tracking_phase=1.2, freq_offset=3.0)
        after = lock_step(before, self.record_with_error(0.4), cfg)
        assert after == before

    def test_zero_counts_give_zero_error(self):
        rec = DetectorRecord(0.0, 0, 0, 1e-5)
        assert normalized_error(rec) == 0.0

    def test_normalized_error_recovers_sine_of_phase(self):
        laser = LaserSpec(wavelength=WAVELENGTH, n_in=1e7, n_det=1e7)
        for z in (1e-9, 20e-9, -35e-9):
            mu_p, mu_m = expected_port_counts(z, 0.0, laser, 0.0, 1e-3)
            rec = DetectorRecord(0.0, mu_p + mu_m, mu_p - mu_m, 1e-3)
            assert normalized_error(rec) == pytest.approx(
                math.sin(phase_of(z, WAVELENGTH)), rel=1e-9)


class TestLoopFormulas:
    def test_suppression_formula(self):
        g = paper_gain()
        assert loop_suppression(g, 217.0) == pytest.approx(
            math.sqrt(1.0 + (g / 217.0) ** 2), rel=1e-12)
        assert loop_suppression(g, 217.0) == pytest.approx(7.725, abs=5e-3)
        assert loop_suppression(0.0, 1.0) == 1.0

    def test_fidelity_complements_suppression(self):
        # amplitude in the lock output and residual split the tone: F^2 + 1/R^2 = 1
        for f in (10.0, 217.0, 5e3):
            g = paper_gain()
            fid = closed_loop_fidelity(g, f)
            sup = loop_suppression(g, f)
            assert fid**2 + 1.0 / sup**2 == pytest.approx(1.0, rel=1e-12)

    def test_fidelity_limits(self):
        g = 1000.0
        assert closed_loop_fidelity(g, 1e-6) == pytest.approx(1.0, rel=1e-9)
        assert closed_loop_fidelity(g, 1e9) == pytest.approx(g / 1e9, rel=1e-6)

    def test_max_tracking_amplitude(self):
        g = paper_gain()
        assert max_tracking_amplitude(g, 217.0, WAVELENGTH) == pytest.approx(
            g * WAVELENGTH / (2.0 * 217.0), rel=1e-12)
        with pytest.raises(ValueError):
            max_tracking_amplitude(g, 0.0, WAVELENGTH)


class TestLockedInterferometer:
    def make_sensor(self, n_det=1e10, gain=None, seed=0, enabled=True):
        laser = LaserSpec(wavelength=WAVELENGTH, n_in=n_det, n_det=n_det)
        lock = LockConfig(gain=paper_gain() if gain is None else gain,
                          update_rate=RECORD_RATE, enabled=enabled)
        rng = np.random.default_rng(seed)
        return LockedInterferometer(laser, lock, RECORD_RATE, rng)

    def test_rate_mismatch_rejected(self):
        laser = LaserSpec(wavelength=WAVELENGTH, n_in=1e7, n_det=1e7)
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            LockedInterferometer(laser, LockConfig(gain=100.0, update_rate=300e3),
                                 RECORD_RATE, rng)
        with pytest.raises(ConfigError):
            LockedInterferometer(laser, LockConfig(gain=100.0, update_rate=130e3),
                                 RECORD_RATE, rng)
        # integer decimation is allowed
        LockedInterferometer(laser, LockConfig(gain=100.0, update_rate=100e3),
                             RECORD_RATE, rng)

    def test_tracks_slow_ramp(self):
        sensor = self.make_sensor()
        n = 20_000
        t = np.arange(n) / RECORD_RATE
        z = 50e-9 * t / t[-1]
        est = np.array([sensor(tk, zk) for tk, zk in zip(t, z)])
        err = est - z
        # per-sample counting noise ~ 0.1 nm; no systematic lag beyond that
        assert abs(np.mean(err[-2000:])) < 3e-11
        assert np.sqrt(np.mean(err**2)) < 3e-10
        # most of the estimate comes through the lock channel, not the residual
        lin = sensor.linearized()
        assert abs(lin[-1] - z[-1]) < 2e-9

    def test_channel_views(self):
        sensor = self.make_sensor()
        assert sensor.channel("t").size == 0
        sensor.track(np.zeros(1000))
        assert sensor.channel("t").shape == (1000,)
        assert sensor.channel("count_sum").min() > 0
        np.testing.assert_allclose(sensor.residual_displacement(),
                                   sensor.channel("error") * WAVELENGTH / (4.0 * math.pi))

    def test_disabled_lock_reads_open_loop(self):
        sensor = self.make_sensor(enabled=False)
        n = 5000
        t = np.arange(n) / RECORD_RATE
        z = 10e-9 * np.sin(2.0 * math.pi * 217.0 * t)
        est = np.array([sensor(tk, zk) for tk, zk in zip(t, z)])
        assert np.all(sensor.linearized() == 0.0)
        # the raw error channel still sees the displacement
        assert np.corrcoef(est, z)[0, 1] > 0.99

    def test_lock_loss_on_untrackable_drive(self):
        sensor = self.make_sensor(n_det=1e8, gain=100.0)
        amp = 50.0 * max_tracking_amplitude(100.0, 217.0, WAVELENGTH)
        n = 40_000
        t = np.arange(n) / RECORD_RATE
        with pytest.raises(LockLossError):
            sensor.track(amp * np.sin(2.0 * math.pi * 217.0 * t))


class TestMirrorCalibration:
    def test_suppression_matches_loop_model(self):
        lock = LockConfig(gain=paper_gain(), update_rate=RECORD_RATE)
        laser = LaserSpec(wavelength=WAVELENGTH, n_in=1e7, n_det=1e7)
        cal = mirror_calibration_run(WAVELENGTH / 8.0, 217.0, lock, laser,
                                     duration=1.0, record_rate=RECORD_RATE, seed=42)
        predicted = loop_suppression(paper_gain(), 217.0)
        assert cal.suppression == pytest.approx(predicted, rel=0.10)
        assert cal.true_rms == pytest.approx(WAVELENGTH / 8.0 / math.sqrt(2.0))
        assert cal.uncertainty >= 0.10 * cal.suppression  # drive tolerance floor

    def test_suppression_ratio_helper(self):
        laser = LaserSpec(wavelength=WAVELENGTH, n_in=1e7, n_det=1e7)
        got = suppression_ratio(500.0, 217.0, WAVELENGTH / 8.0, laser,
                                duration=0.5, record_rate=RECORD_RATE, seed=1)
        assert got == pytest.approx(loop_suppression(500.0, 217.0), rel=0.15)

    def test_rejects_bad_drive(self):
        lock = LockConfig(gain=100.0, update_rate=RECORD_RATE)
        laser = LaserSpec(wavelength=WAVELENGTH, n_in=1e7, n_det=1e7)
        with pytest.raises(ConfigError):
            mirror_calibration_run(0.0, 217.0, lock, laser, 1.0, RECORD_RATE, 0)
