"""Tests for ground-state cooling feasibility and the quench thermal budget.

Threshold fluxes are pinned against an exact identity (the attainable
occupation crosses one at the threshold) and against frozen reference values
computed independently from the closed-form expressions.
"""
from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.constants import c, hbar, k as k_B
from scipy.optimize import minimize_scalar

from levisim.core import OscillatorMode, ParticleSpec
from levisim.dynamics import thermal_force_psd
from levisim.errors import ConfigError, NoiselessMeasurementError
from levisim.feasibility import (
    CavitySpec,
    assess,
    cooled_occupation_cavity,
    cooled_occupation_freespace,
    decoherence_rates,
    energy_budget,
    excess_floor_asd,
    excess_noise_bound,
    floor_occupation,
    ground_state_condition,
    levitation_lifetime,
    lifetime_fit,
    min_input_flux_cavity,
    min_input_flux_freespace,
    optimal_intracavity_photons,
    photon_flux_to_power,
    quench_temperature,
    thermal_decoherence_rate,
)

MASS = 5.999918369580907e-9


def mode_200():
    return OscillatorMode.from_frequency(MASS, 200.0, 2.6e7)


class TestRates:
    def test_thermal_rate_is_occupation_times_gamma(self):
        mode = OscillatorMode.from_frequency(MASS, 160.0, 2.6e7)
        temp = 4.509e10
        n_th = k_B * temp / (hbar * mode.omega0)
        assert thermal_decoherence_rate(mode, temp) == pytest.approx(
            n_th * mode.gamma, rel=1e-12)
        assert thermal_decoherence_rate(mode, temp) == pytest.approx(
            227046080432151.3, rel=1e-9)

    def test_backaction_rate(self):
        mode = mode_200()
        k = 2.0 * math.pi / 637e-9
        n_in = 1e17
        rates = decoherence_rates(mode, 3.0, 637e-9, n_in)
        expected = 4.0 * hbar**2 * k**2 * n_in / (2.0 * hbar * mode.m * mode.omega0)
        assert rates.backaction == pytest.approx(expected, rel=1e-12)
        assert rates.total == rates.thermal + rates.backaction
        assert rates.quantum_cooperativity == pytest.approx(
            rates.backaction / rates.thermal)

    def test_ground_state_condition(self):
        ok, margin = ground_state_condition(1.0, 0.25)
        assert ok and margin == pytest.approx(0.25 * 8.0 - 1.0)
        bad, margin = ground_state_condition(0.2, 0.5)
        assert not bad and margin == pytest.approx(0.5 * 0.8 - 1.0)
        with pytest.raises(ValueError):
            ground_state_condition(0.0, 1.0)

    def test_photon_flux_to_power(self):
        # single-photon energy h c / lambda
        assert photon_flux_to_power(1.0, 637e-9) == pytest.approx(
            2.0 * math.pi * hbar * c / 637e-9, rel=1e-12)


class TestFreeSpaceThreshold:
    def test_frozen_reference_values(self):
        n_thr = min_input_flux_freespace(mode_200(), 3.0, 637e-9, 1.0)
        assert n_thr == pytest.approx(6.937982791861478e17, rel=1e-9)
        assert photon_flux_to_power(n_thr, 637e-9) == pytest.approx(
            0.2163567845190548, rel=1e-9)

    def test_occupation_crosses_one_at_threshold(self):
        mode = mode_200()
        n_thr = min_input_flux_freespace(mode, 3.0, 637e-9, 1.0)
        assert cooled_occupation_freespace(mode, 3.0, 637e-9, 1.0,
                                           n_thr) == pytest.approx(1.0, rel=1e-9)
        # monotone on either side of the optimum's unity crossing
        assert cooled_occupation_freespace(mode, 3.0, 637e-9, 1.0, n_thr / 10.0) > 1.0

    def test_large_flux_floor(self):
        mode = mode_200()
        eta = 0.75
        n = cooled_occupation_freespace(mode, 3.0, 637e-9, eta, 1e30)
        assert n == pytest.approx(floor_occupation(eta), rel=1e-4)
        assert floor_occupation(1.0) == 0.0
        assert floor_occupation(0.25) == pytest.approx(0.5)
        with pytest.raises(ValueError):
            floor_occupation(0.0)

    def test_low_efficiency_rejected(self):
        with pytest.raises(ValueError, match="1/9"):
            min_input_flux_freespace(mode_200(), 3.0, 637e-9, 1.0 / 9.0)


class TestCavityThreshold:
    ETA = 0.75
    WAVELENGTH = 1.55e-6
    TEMP = 0.015

    def test_frozen_reference_values(self):
        n_thr = min_input_flux_cavity(mode_200(), self.TEMP, self.WAVELENGTH,
                                      1e5, self.ETA)
        assert n_thr == pytest.approx(7050982.725858693, rel=1e-9)
        assert photon_flux_to_power(n_thr, self.WAVELENGTH) == pytest.approx(
            9.036384144910104e-13, rel=1e-9)

    def test_length_drops_out_of_occupation(self):
        mode = mode_200()
        n_thr = min_input_flux_cavity(mode, self.TEMP, self.WAVELENGTH, 1e5, self.ETA)
        occs = []
        for length in (1e-3, 1e-2, 1.0):
            cavity = CavitySpec(wavelength=self.WAVELENGTH, length=length,
                                finesse=1e5, eta_det=self.ETA)
            occs.append(float(cooled_occupation_cavity(mode, self.TEMP, cavity, n_thr)))
        np.testing.assert_allclose(occs, 1.0, rtol=1e-9)
        assert (max(occs) - min(occs)) / occs[0] < 1e-4

    def test_inverse_square_finesse_scaling(self):
        mode = mode_200()
        thr = {f: min_input_flux_cavity(mode, self.TEMP, self.WAVELENGTH, f, self.ETA)
               for f in (1e4, 1e5, 1e6)}
        assert thr[1e4] / thr[1e5] == pytest.approx(100.0, rel=1e-9)
        assert thr[1e5] / thr[1e6] == pytest.approx(100.0, rel=1e-9)

    def test_sideband_correction_cancels_at_threshold(self):
        mode = mode_200()
        n_thr = min_input_flux_cavity(mode, self.TEMP, self.WAVELENGTH, 1e5, self.ETA)
        cavity = CavitySpec(wavelength=self.WAVELENGTH, length=0.01,
                            finesse=1e5, eta_det=self.ETA)
        with_corr = cooled_occupation_cavity(mode, self.TEMP, cavity, n_thr,
                                             sideband_correction=True)
        # correction enters at order (omega0 / kappa)^2, well below 1e-4 here
        assert float(with_corr) == pytest.approx(1.0, rel=1e-4)

    def test_vectorized_over_flux(self):
        mode = mode_200()
        cavity = CavitySpec(wavelength=self.WAVELENGTH, length=0.01,
                            finesse=1e5, eta_det=self.ETA)
        grid = np.logspace(5, 9, 9)
        occ = cooled_occupation_cavity(mode, self.TEMP, cavity, grid)
        assert occ.shape == grid.shape
        assert occ[0] > occ[-1] or occ[-1] > floor_occupation(self.ETA) * 0.99


class TestCavitySpec:
    def test_derived_quantities(self):
        cav = CavitySpec(wavelength=1.55e-6, length=0.01, finesse=1e5,
                         kappa_ext_fraction=0.8, eta_det=0.9)
        assert cav.kappa == pytest.approx(math.pi * c / (1e5 * 0.01), rel=1e-12)
        assert cav.kappa_ext == pytest.approx(0.8 * cav.kappa, rel=1e-12)
        assert cav.pull == pytest.approx(2.0 * math.pi * c / 1.55e-6 / 0.01, rel=1e-12)
        assert cav.eta == pytest.approx(0.72, rel=1e-12)
        mode = mode_200()
        assert cav.coupling(mode) == pytest.approx(mode.z_zpf * cav.pull, rel=1e-12)
        assert cav.intracavity_photons(1e8) == pytest.approx(
            4.0 * cav.kappa_ext * 1e8 / cav.kappa**2, rel=1e-12)

    def test_validation_collects_problems(self):
        with pytest.raises(ConfigError) as exc:
            CavitySpec(wavelength=0.0, length=-1.0, finesse=0.0,
                       kappa_ext_fraction=2.0, eta_det=0.0)
        assert len(exc.value.violations) == 5


class TestOptimalPhotonNumber:
    def test_matches_golden_section(self):
        mode = mode_200()
        cav = CavitySpec(wavelength=1.55e-6, length=0.01, finesse=1e5, eta_det=0.75)
        s_force = thermal_force_psd(mode, 0.015)
        s_sigma = 1e-32
        n_opt = optimal_intracavity_photons(mode, cav, s_force, s_sigma)

        def product(log_n):
            n_c = math.exp(log_n)
            s_imp = cav.kappa / (16.0 * cav.pull**2 * n_c * cav.eta)
            s_ba = 4.0 * hbar**2 * cav.pull**2 * n_c / cav.kappa
            return (s_imp + s_sigma) * (s_force + s_ba)

        res = minimize_scalar(product, bracket=(math.log(n_opt) - 2.0,
                                                math.log(n_opt),
                                                math.log(n_opt) + 2.0),
                              method="golden", options={"xtol": 1e-12})
        assert n_opt == pytest.approx(math.exp(res.x), rel=5e-3)

    def test_zero_excess_unbounded(self):
        mode = mode_200()
        cav = CavitySpec(wavelength=1.55e-6, length=0.01, finesse=1e5)
        with pytest.raises(NoiselessMeasurementError):
            optimal_intracavity_photons(mode, cav, 1e-30, 0.0)


class TestExcessNoiseBound:
    def test_frozen_values(self):
        rms, peak = excess_floor_asd(mode_200(), 0.015, 0.75)
        assert rms == pytest.approx(3.9704051058687474e-16, rel=1e-9)
        assert peak == pytest.approx(7.940810211737495e-16, rel=1e-9)
        assert peak == pytest.approx(2.0 * rms, rel=1e-12)

    def test_identity_with_force_noise(self):
        # sqrt(B S_FN) = (3/2) hbar - hbar / (2 sqrt(eta)), independent of mode
        for eta in (0.2, 0.75, 1.0):
            mode = mode_200()
            b = excess_noise_bound(mode, 0.015, eta)
            s_fn = thermal_force_psd(mode, 0.015)
            lhs = math.sqrt(b * s_fn)
            rhs = 1.5 * hbar - hbar / (2.0 * math.sqrt(eta))
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_rejects_unusable_parameters(self):
        with pytest.raises(ValueError):
            excess_noise_bound(mode_200(), 0.015, 0.1)
        with pytest.raises(ValueError):
            excess_noise_bound(mode_200(), 0.0, 0.75)


class TestQuench:
    def particle(self):
        return ParticleSpec(density=11459.0, radius=50e-6)

    def test_quench_temperature(self):
        p = self.particle()
        assert p.t_c == 7.2 and p.h0 == 6.4e4
        assert quench_temperature(p, 5000.0) == pytest.approx(
            6.913031173081747, rel=1e-12)
        assert quench_temperature(p, 0.0) == pytest.approx(7.2)
        with pytest.raises(ValueError):
            quench_temperature(p, 6.4e4)
        with pytest.raises(ValueError):
            quench_temperature(p, -1.0)

    def test_energy_budget_frozen_values(self):
        p = self.particle()
        combined = energy_budget(p, 6.9, 3.5, "combined")
        electron = energy_budget(p, 6.9, 3.5, "electron-only")
        assert combined == pytest.approx(3.6511708848892485e-8, rel=1e-9)
        assert electron == pytest.approx(3.174931204251521e-9, rel=1e-9)
        # a m (Tq^4 - Ts^4) / 4 against a direct evaluation
        assert combined == pytest.approx(
            0.0115 * p.mass * (6.9**4 - 3.5**4) / 4.0, rel=1e-12)

    def test_energy_budget_validation(self):
        p = self.particle()
        with pytest.raises(KeyError):
            energy_budget(p, 6.9, 3.5, "phonon")
        with pytest.raises(ValueError):
            energy_budget(p, 3.0, 3.5)

    def test_lifetimes(self):
        p = self.particle()
        tau_c = levitation_lifetime(energy_budget(p, 6.9, 3.5, "combined"), 3e-12)
        tau_e = levitation_lifetime(energy_budget(p, 6.9, 3.5, "electron-only"), 3e-12)
        assert tau_c == pytest.approx(12170.569616297495, rel=1e-9)
        assert tau_e == pytest.approx(1058.3104014171736, rel=1e-9)
        assert levitation_lifetime(1e-8, 0.0) == math.inf
        with pytest.raises(ValueError):
            levitation_lifetime(-1.0, 1e-12)


class TestLifetimeFit:
    def test_round_trip(self):
        truth_a, truth_b = 3.6e7, 2.9e3
        n = np.array([0.0, 1e3, 1e4, 1e5, 1e6])
        tau = truth_a / (truth_b + n)
        fit = lifetime_fit(n, tau)
        assert fit.a == pytest.approx(truth_a, rel=1e-9)
        assert fit.b == pytest.approx(truth_b, rel=1e-9)
        assert fit.radiation_limited == pytest.approx(truth_a / truth_b, rel=1e-9)
        np.testing.assert_allclose(fit.predict(n), tau, rtol=1e-9)

    def test_validation(self):
        with pytest.raises(ConfigError):
            lifetime_fit([1.0, 2.0], [1.0, 2.0])
        with pytest.raises(ConfigError):
            lifetime_fit([0.0, 1.0, 2.0], [1.0, -1.0, 0.5])
        with pytest.raises(ConfigError, match="decrease"):
            lifetime_fit([0.0, 1e3, 1e6], [10.0, 20.0, 4000.0])


class TestAssess:
    def test_default_flux_doubles_threshold(self):
        report = assess(mode_200(), 3.0, 637e-9, 1.0)
        assert report.satisfied
        assert report.margin == pytest.approx(1.0, rel=1e-9)
        # at exactly the threshold flux the margin collapses to zero
        at_thr = assess(mode_200(), 3.0, 637e-9, 1.0, n_in=report.n_in_freespace)
        assert at_thr.margin == pytest.approx(0.0, abs=1e-9)

    def test_report_includes_both_asd_conventions(self):
        report = assess(mode_200(), 0.015, 1.55e-6, 0.75, finesse=1e5)
        text = report.render()
        assert "rms" in text and "peak-equivalent" in text
        assert "cavity threshold flux" in text
        assert f"{report.n_in_cavity:.6g}" in text

    def test_quench_section(self):
        p = ParticleSpec(density=11459.0, radius=50e-6)
        report = assess(mode_200(), 3.0, 637e-9, 1.0, particle=p, field=5000.0,
                        substrate_temperature=3.5, absorbed_power=3e-12)
        assert report.quench is not None
        assert report.quench.t_quench == pytest.approx(6.913031173081747, rel=1e-9)
        assert set(report.quench.delta_e) == {"combined", "electron-only"}
        text = report.render()
        assert "quench thermal budget" in text
        assert "levitation lifetime" in text
        # zero absorbed power renders as radiation-limited
        free = assess(mode_200(), 3.0, 637e-9, 1.0, particle=p, field=5000.0,
                      substrate_temperature=3.5, absorbed_power=0.0)
        assert "radiation-limited" in free.render()
