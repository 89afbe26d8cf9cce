import json
import os

import numpy as np
import pytest

from stochmaxwell.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VERIFY,
    main,
    run_forward,
    run_reconstruct,
    run_verify,
)
from stochmaxwell.config import ExperimentConfig, format_bumps, parse_bumps
from stochmaxwell.ensemble import (
    generate_ensemble,
    manifest_hash,
    read_ensemble,
    write_ensemble,
)
from stochmaxwell.geometry import Bump, ConfigurationError, Grid3, MediumSpec, SourceStrength, SphereMesh


SMALL_CONFIG = """
[physics]
k = 2.0
R = 1.0
R_prime = 1.3

[grid]
n = 25

[source]
bumps = 0 0.1 0 0.5 0.2

[ensemble]
realizations = 20
master_seed = 99

[stability]
lmax = 8

[reconstruction]
rho_override = 1.5
n_frames = 1

[sweep]
alphas = 1.0 0.1

[output]
directory = runs/small
"""


@pytest.fixture()
def small_cfg():
    return ExperimentConfig.from_text(SMALL_CONFIG)


@pytest.fixture()
def config_path(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(SMALL_CONFIG)
    return str(p)


class TestBumpSyntax:
    def test_roundtrip(self):
        bumps = (Bump((0.1, -0.2, 0.0), 0.5, 0.3), Bump((0, 0, 0), 0.4, 1.0))
        assert parse_bumps(format_bumps(bumps)) == bumps

    def test_wrong_arity_rejected(self):
        with pytest.raises(ConfigurationError):
            parse_bumps("0 0 0 0.5")

    def test_empty_is_no_bumps(self):
        assert parse_bumps("  ;  ") == ()


class TestExperimentConfig:
    def test_parses_small_file(self, small_cfg):
        assert small_cfg.k == 2.0
        assert small_cfg.grid_n == 25
        assert small_cfg.realizations == 20
        assert small_cfg.lmax == 8
        assert small_cfg.rho_override == 1.5
        assert small_cfg.alphas == (1.0, 0.1)
        assert small_cfg.source_bumps == (Bump((0.0, 0.1, 0.0), 0.5, 0.2),)

    def test_text_roundtrip(self, small_cfg):
        assert ExperimentConfig.from_text(small_cfg.to_text()) == small_cfg

    def test_defaults_fill_missing_sections(self):
        cfg = ExperimentConfig.from_text("[physics]\nk = 3.0\n")
        assert cfg.k == 3.0
        assert cfg.R_prime == 1.3
        assert cfg.n_frames == 8

    def test_invalid_radii_rejected(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(R=1.3, R_prime=1.0)

    def test_bump_outside_ball_rejected(self):
        with pytest.raises(ConfigurationError):
            ExperimentConfig(source_bumps=(Bump((0.9, 0, 0), 0.5, 0.1),))

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            ExperimentConfig.from_file(tmp_path / "absent.ini")

    def test_derived_objects(self, small_cfg):
        assert small_cfg.grid().contains_ball(1.3)
        assert small_cfg.mesh().radius == 1.0
        assert small_cfg.medium().is_homogeneous
        assert small_cfg.constants().M2 == 0.5


class TestEnsembleStore:
    def _traces(self, M=5, N=12):
        rng = np.random.default_rng(17)
        return rng.standard_normal((M, N, 3)) + 1j * rng.standard_normal((M, N, 3))

    def test_roundtrip_bit_identical(self, tmp_path):
        traces = self._traces()
        manifest = write_ensemble(tmp_path, traces, {"kind": "trace-ensemble"})
        back, m2 = read_ensemble(tmp_path)
        assert np.array_equal(back, traces)
        assert m2 == manifest
        assert manifest["hash"] == manifest_hash(manifest)

    def test_corrupt_data_detected(self, tmp_path):
        write_ensemble(tmp_path, self._traces(), {"kind": "trace-ensemble"})
        path = tmp_path / "traces.bin"
        blob = bytearray(path.read_bytes())
        blob[-5] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError):
            read_ensemble(tmp_path)

    def test_corrupt_manifest_detected(self, tmp_path):
        write_ensemble(tmp_path, self._traces(), {"kind": "trace-ensemble"})
        mpath = tmp_path / "manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["realizations"] = 999
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(ValueError):
            read_ensemble(tmp_path)

    def test_generation_is_deterministic(self, small_cfg):
        args = (
            small_cfg.k,
            small_cfg.medium(),
            small_cfg.source(),
            small_cfg.grid(),
            small_cfg.mesh(),
            6,
            small_cfg.master_seed,
        )
        assert np.array_equal(generate_ensemble(*args), generate_ensemble(*args))

    def test_zero_source_gives_zero_traces(self):
        grid = Grid3.for_ball(1.3, 25)
        mesh = SphereMesh(1.0, 6)
        traces = generate_ensemble(
            2.0,
            MediumSpec(ball_radius=1.0),
            SourceStrength((), ball_radius=1.0),
            grid,
            mesh,
            3,
            1,
        )
        assert np.all(traces == 0.0)

    def test_inhomogeneous_route_matches_shape(self, small_cfg):
        medium = MediumSpec((Bump((0, 0.1, 0), 0.5, 0.02),), ball_radius=1.0)
        traces = generate_ensemble(
            small_cfg.k,
            medium,
            small_cfg.source(),
            small_cfg.grid(),
            small_cfg.mesh(),
            2,
            small_cfg.master_seed,
            workers=2,
        )
        assert traces.shape == (2, small_cfg.mesh().n_nodes, 3)
        assert np.all(np.isfinite(traces))


class TestCliForward:
    def test_writes_reproducible_ensemble(self, config_path, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        assert main(["forward", "--config", config_path, "--out", out1]) == EXIT_OK
        assert main(["forward", "--config", config_path, "--out", out2]) == EXIT_OK
        b1 = (tmp_path / "a" / "ensemble" / "traces.bin").read_bytes()
        b2 = (tmp_path / "b" / "ensemble" / "traces.bin").read_bytes()
        assert b1 == b2
        m1 = json.loads((tmp_path / "a" / "ensemble" / "manifest.json").read_text())
        m2 = json.loads((tmp_path / "b" / "ensemble" / "manifest.json").read_text())
        assert m1["hash"] == m2["hash"]

    def test_seed_override_changes_data(self, config_path, tmp_path):
        out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
        main(["forward", "--config", config_path, "--out", out1])
        main(["forward", "--config", config_path, "--out", out2, "--seed", "7"])
        m1 = json.loads((tmp_path / "a" / "ensemble" / "manifest.json").read_text())
        m2 = json.loads((tmp_path / "b" / "ensemble" / "manifest.json").read_text())
        assert m1["data_sha256"] != m2["data_sha256"]

    def test_bad_config_exits_2(self, tmp_path):
        bad = tmp_path / "bad.ini"
        bad.write_text("[physics]\nR = 2.0\nR_prime = 1.0\n")
        assert main(["forward", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_missing_config_exits_2(self, tmp_path):
        assert (
            main(["forward", "--config", str(tmp_path / "no.ini"), "--out", str(tmp_path)])
            == EXIT_CONFIG
        )


class TestCliVerify:
    def test_all_checks_pass(self, config_path, tmp_path):
        out = str(tmp_path / "v")
        assert main(["verify", "--config", config_path, "--out", out]) == EXIT_OK
        report = json.loads((tmp_path / "v" / "verify.json").read_text())
        assert report["passed"]
        names = {c["name"] for c in report["checks"]}
        assert {"green_reciprocity", "capacity_multipole_identity", "ito_isometry"} <= names

    def test_faulted_operator_exits_4(self, tmp_path):
        cfg_text = SMALL_CONFIG + "\n[verify]\nfault_scale = 1.05\n"
        p = tmp_path / "faulty.ini"
        p.write_text(cfg_text)
        out = str(tmp_path / "v")
        assert main(["verify", "--config", str(p), "--out", out]) == EXIT_VERIFY
        report = json.loads((tmp_path / "v" / "verify.json").read_text())
        failed = {c["name"] for c in report["checks"] if not c["passed"]}
        assert "capacity_multipole_identity" in failed


class TestCliReconstruct:
    def test_end_to_end_artifacts(self, config_path, tmp_path):
        out = str(tmp_path / "r")
        assert main(["reconstruct", "--config", config_path, "--out", out]) == EXIT_OK
        rec = tmp_path / "r" / "reconstruction"
        assert (rec / "sigma_hat.csv").exists()
        assert (rec / "sigma_rec.bin").exists()
        manifest = json.loads((rec / "manifest.json").read_text())
        assert manifest["errors"]["rel_l2"] is not None
        header = (rec / "sigma_hat.csv").read_text().splitlines()[0]
        assert header == "xi_x,xi_y,xi_z,re_sigma_hat,im_sigma_hat,stderr"

    def test_rerun_is_bit_identical(self, config_path, tmp_path):
        out = str(tmp_path / "r")
        main(["reconstruct", "--config", config_path, "--out", out])
        rec = tmp_path / "r" / "reconstruction"
        first = {f: (rec / f).read_bytes() for f in os.listdir(rec)}
        main(["reconstruct", "--config", config_path, "--out", out])
        for f, blob in first.items():
            assert (rec / f).read_bytes() == blob

    def test_physics_mismatch_exits_2(self, small_cfg, config_path, tmp_path):
        out = str(tmp_path / "r")
        run_forward(small_cfg, os.path.join(out, "ensemble"))
        other = tmp_path / "other.ini"
        other.write_text(SMALL_CONFIG.replace("0 0.1 0 0.5 0.2", "0 0 0 0.4 0.3"))
        assert main(["reconstruct", "--config", str(other), "--out", out]) == EXIT_CONFIG


class TestCliSweep:
    def test_writes_table(self, config_path, tmp_path):
        out = str(tmp_path / "s")
        assert main(["sweep", "--config", config_path, "--out", out]) == EXIT_OK
        lines = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
        assert lines[0] == "alpha,epsilon,sigma_l2,rel_l2_error,check_quantity"
        assert len(lines) == 3  # two alphas
        eps = [float(l.split(",")[1]) for l in lines[1:]]
        # traces carry sqrt(sigma), so the quadratic kernels are linear in
        # the source scale: alpha 1 -> 0.1 drops epsilon 10x
        assert eps[0] / eps[1] == pytest.approx(10.0, rel=0.05)
