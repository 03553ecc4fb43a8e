"""System assembly and run-manifest bookkeeping."""
from __future__ import annotations

import hashlib
import json

import pytest

from levisim.core import trap_frequency
from levisim.errors import ConfigError
from levisim.pipeline import (RunManifest, build_system, design_error_psd,
                              run_scenario)
from levisim.scenario import default_scenario
from levisim.sensing import shot_noise_psd


class TestBuildSystem:
    def test_default_system_numbers(self):
        system = build_system(default_scenario(7))
        assert system.particle.mass == pytest.approx(5.999918369580907e-9)
        assert system.mode_z.f0 == pytest.approx(160.0)
        assert system.mode_x.f0 == pytest.approx(80.0)
        assert system.mode_y is system.mode_x
        assert system.mode_z.q == pytest.approx(2.6e7)
        # the stored gradient reproduces the requested axial frequency
        assert trap_frequency(system.gradient, 11459.0) == pytest.approx(
            160.0, rel=1e-12)
        assert system.laser.wavelength == 637e-9
        assert system.lock.gain == pytest.approx(1662.2203541122335, rel=1e-9)
        assert system.roughness is not None

    def test_smooth_sphere_has_no_roughness_process(self):
        scn = default_scenario(7).with_overrides({"particle.roughness_sigma": 0.0})
        assert build_system(scn).roughness is None

    def test_design_error_psd(self):
        scn = default_scenario(7)
        shot = shot_noise_psd(637e-9, 1e7)
        expected = (955e-12) ** 2 / 2.0 + shot
        assert design_error_psd(scn) == pytest.approx(expected, rel=1e-12)
        half = scn.with_overrides({"particle.roughness_sigma": 25e-9})
        assert design_error_psd(half) == pytest.approx(
            (955e-12) ** 2 / 8.0 + shot, rel=1e-12)


class TestRunScenario:
    def test_unknown_stage_rejected(self, tmp_path):
        scn = default_scenario(7).with_overrides({"run.stages": ("warmup",),
                                                  "run.analyses": ()})
        with pytest.raises(ConfigError, match="warmup"):
            run_scenario(scn, tmp_path / "r")

    def test_manifest_contents_and_checksums(self, tmp_path):
        scn = default_scenario(11).with_overrides(
            {"run.stages": ("camera", "liftoff"), "run.analyses": ()})
        outdir = tmp_path / "r"
        manifest = run_scenario(scn, outdir)
        assert manifest.seed == 11
        assert manifest.scenario_sha256 == scn.sha256
        assert [s["name"] for s in manifest.stages] == list(
            ("camera", "intensity", "liftoff", "interferometric", "ringup"))
        statuses = {s["name"]: s["status"] for s in manifest.stages}
        assert statuses["camera"] == "completed"
        assert statuses["ringup"] == "skipped"
        # the inventory checksums match the bytes on disk
        for name, sha in manifest.files.items():
            digest = hashlib.sha256((outdir / name).read_bytes()).hexdigest()
            assert digest == sha
        assert "manifest.json" not in manifest.files

        reloaded = RunManifest.load(outdir / "manifest.json")
        assert reloaded.to_json() == manifest.to_json()
        data = json.loads((outdir / "manifest.json").read_text())
        assert data["artifact_version"] == "1"
