"""End-to-end CLI behavior on a miniature scene."""

import json

import numpy as np
import pytest

from borntomo.arrayfile import read_array, write_array
from borntomo.cli import main

SCENE_DOC = {
    "grid": {"extent_x": 120.0, "extent_y": 120.0, "step_x": 7.5, "step_y": 7.5},
    "medium": {"epsilon_b": 1.0, "wavelength": 10.0},
    "sources": {"radius": 100.0, "count": 3, "amplitude": 1.0},
    "sensors": {"radius": 100.0, "count": 12},
}


@pytest.fixture
def scene_file(tmp_path):
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(SCENE_DOC))
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestSimulate:
    def test_writes_expected_files(self, scene_file, tmp_path):
        out = tmp_path / "sim"
        assert run("simulate", "--scene", scene_file, "--contrast", "0.01",
                   "--out", out, "--ls-tol", "1e-8") == 0
        y = read_array(out / "y.arr")
        assert y.shape == (12, 3) and y.dtype == np.complex128
        truth = read_array(out / "f_true.arr")
        assert truth.shape == (16, 16)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["contrast"] == 0.01
        assert len(manifest["solver"]["residuals"]) == 3
        assert all(r <= 1e-8 for r in manifest["solver"]["residuals"])
        for name in ("f_true.pgm", "f_true.png"):
            assert (out / name).stat().st_size > 0

    def test_zero_contrast_yields_zero_measurements(self, scene_file, tmp_path):
        out = tmp_path / "sim0"
        assert run("simulate", "--scene", scene_file, "--contrast", "0",
                   "--out", out) == 0
        y = read_array(out / "y.arr")
        assert np.all(y == 0)

    def test_same_seed_is_byte_identical(self, scene_file, tmp_path):
        args = ("simulate", "--scene", scene_file, "--contrast", "0.01",
                "--noise-snr-db", "30", "--seed", "7", "--ls-tol", "1e-8")
        assert run(*args, "--out", tmp_path / "a") == 0
        assert run(*args, "--out", tmp_path / "b") == 0
        for name in ("y.arr", "f_true.arr", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_fine_vs_coarse_grid_consistency_smooth_phantom(self, tmp_path):
        # a resolved (smooth) weak phantom simulated on the scene grid and on
        # the refined grid gives sensor values agreeing well within 1%
        from borntomo.forward import simulate_measurements
        from borntomo.greenops import build_operators
        from borntomo.scene import Grid2D, Medium, Scene, circular_layout

        medium = Medium(1.0, 10.0)
        sources, sensors = circular_layout(100.0, 2, 12)

        def simulate(nx):
            grid = Grid2D.from_extent(120.0, 120.0, 120.0 / nx, 120.0 / nx)
            scene = Scene(grid, medium, sources, sensors)
            c = grid.cell_centers()
            f = 0.002 * medium.kb ** 2 * np.exp(-(c[:, 0] ** 2 + c[:, 1] ** 2) / (2 * 25.0 ** 2))
            data, _ = simulate_measurements(build_operators(scene), f, tol=1e-11)
            return data.values

        y_coarse, y_fine = simulate(96), simulate(192)
        assert np.linalg.norm(y_coarse - y_fine) / np.linalg.norm(y_fine) < 0.01

    def test_fine_vs_coarse_grid_sharp_phantom_sanity(self, tmp_path):
        # the discontinuous phantom rasterizes with O(h) edge error, so the
        # agreement is looser (~5% at lambda/8 cells); bound it honestly
        doc = dict(SCENE_DOC)
        doc["grid"] = {"extent_x": 120.0, "extent_y": 120.0, "step_x": 1.25, "step_y": 1.25}
        scene_path = tmp_path / "desk_scene.json"
        scene_path.write_text(json.dumps(doc))
        assert run("simulate", "--scene", scene_path, "--contrast", "0.002",
                   "--fine-factor", "1", "--out", tmp_path / "coarse") == 0
        assert run("simulate", "--scene", scene_path, "--contrast", "0.002",
                   "--fine-factor", "2", "--out", tmp_path / "fine") == 0
        y1 = read_array(tmp_path / "coarse" / "y.arr")
        y2 = read_array(tmp_path / "fine" / "y.arr")
        assert np.linalg.norm(y1 - y2) / np.linalg.norm(y2) < 0.08

    def test_missing_scene_is_input_error(self, tmp_path):
        assert run("simulate", "--scene", tmp_path / "nope.json",
                   "--out", tmp_path / "x") == 2


@pytest.fixture
def simulated(scene_file, tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--scene", scene_file, "--contrast", "0.01",
               "--out", out, "--ls-tol", "1e-10") == 0
    return out


class TestReconstruct:
    def test_outputs_and_auto_tau(self, scene_file, simulated, tmp_path):
        out = tmp_path / "rec"
        assert run("reconstruct", "--scene", scene_file, "--data", simulated,
                   "--method", "rb", "--layers", "2", "--max-iter", "8",
                   "--out", out) == 0
        report = json.loads((out / "report.json").read_text())
        y = read_array(simulated / "y.arr")
        assert report["tau"] == pytest.approx(1e-9 * 0.5 * np.sum(np.abs(y) ** 2), rel=1e-12)
        assert report["method"] == "rb" and report["K"] == 2
        assert report["snr_db"] is not None
        assert "wall_time_s" not in report
        f_hat = read_array(out / "f_hat.arr")
        assert f_hat.shape == (16, 16)
        for name in ("trace.csv", "f_hat.pgm", "f_hat.png", "datafit.png",
                     "manifest.json", "run_meta.json"):
            assert (out / name).stat().st_size > 0
        trace_lines = (out / "trace.csv").read_text().strip().splitlines()
        assert trace_lines[0] == "iteration,objective,data_fit,step"
        assert len(trace_lines) == report["iterations"] + 1

    def test_fb_equals_rb_k1_files(self, scene_file, simulated, tmp_path):
        common = ("--scene", scene_file, "--data", simulated,
                  "--max-iter", "6", "--stop-tol", "1e-9")
        assert run("reconstruct", *common, "--method", "fb", "--out", tmp_path / "fb") == 0
        assert run("reconstruct", *common, "--method", "rb", "--layers", "1",
                   "--out", tmp_path / "rb1") == 0
        fb_bytes = (tmp_path / "fb" / "f_hat.arr").read_bytes()
        rb_bytes = (tmp_path / "rb1" / "f_hat.arr").read_bytes()
        assert fb_bytes == rb_bytes

    def test_am_runs(self, scene_file, simulated, tmp_path):
        out = tmp_path / "am"
        assert run("reconstruct", "--scene", scene_file, "--data", simulated,
                   "--method", "am", "--am-outer", "2", "--am-inner", "5",
                   "--out", out) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["method"] == "am"
        assert report["outer_iterations"] == 2 or report["converged"]

    def test_dimension_mismatch_is_exit_2(self, scene_file, simulated, tmp_path):
        write_array(simulated / "y.arr", np.zeros((5, 2), dtype=complex))
        assert run("reconstruct", "--scene", scene_file, "--data", simulated,
                   "--out", tmp_path / "bad") == 2

    def test_determinism_simulate_reconstruct(self, scene_file, tmp_path):
        for tag in ("r1", "r2"):
            sim = tmp_path / tag / "sim"
            rec = tmp_path / tag / "rec"
            assert run("simulate", "--scene", scene_file, "--contrast", "0.01",
                       "--seed", "3", "--out", sim) == 0
            assert run("reconstruct", "--scene", scene_file, "--data", sim,
                       "--method", "rb", "--layers", "2", "--max-iter", "6",
                       "--out", rec) == 0
        for rel in ("sim/y.arr", "sim/f_true.arr", "rec/f_hat.arr",
                    "rec/report.json", "rec/trace.csv", "rec/f_hat.pgm"):
            a = (tmp_path / "r1" / rel).read_bytes()
            b = (tmp_path / "r2" / rel).read_bytes()
            assert a == b, f"{rel} differs between reruns"


class TestEvaluate:
    def test_exact_match_capped(self, simulated, tmp_path, capsys):
        truth = simulated / "f_true.arr"
        assert run("evaluate", truth, truth) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["snr_db"] == 300.0

    def test_zero_estimate_is_zero_db(self, simulated, tmp_path, capsys):
        truth = read_array(simulated / "f_true.arr")
        zero = tmp_path / "zero.arr"
        write_array(zero, np.zeros_like(truth))
        assert run("evaluate", zero, simulated / "f_true.arr") == 0
        out = json.loads(capsys.readouterr().out)
        assert out["snr_db"] == pytest.approx(0.0, abs=1e-9)

    def test_constant_offset_is_20db(self, tmp_path, capsys):
        rng = np.random.default_rng(80)
        truth = rng.standard_normal((10, 10))
        est = truth + 0.1 * np.linalg.norm(truth) / 10.0
        write_array(tmp_path / "t.arr", truth)
        write_array(tmp_path / "e.arr", est)
        assert run("evaluate", tmp_path / "e.arr", tmp_path / "t.arr",
                   "--out", tmp_path / "ev") == 0
        out = json.loads(capsys.readouterr().out)
        assert out["snr_db"] == pytest.approx(20.0, abs=1e-9)
        saved = json.loads((tmp_path / "ev" / "evaluation.json").read_text())
        assert saved["snr_db"] == out["snr_db"]

    def test_shape_mismatch_is_exit_2(self, tmp_path):
        write_array(tmp_path / "a.arr", np.zeros((3, 3)))
        write_array(tmp_path / "b.arr", np.zeros((4, 3)))
        assert run("evaluate", tmp_path / "a.arr", tmp_path / "b.arr") == 2


class TestSweep:
    def test_small_matrix(self, scene_file, tmp_path):
        out = tmp_path / "sweep"
        assert run("sweep", "--scene", scene_file, "--contrasts", "1",
                   "--methods", "fb,rb", "--layers", "1,2",
                   "--max-iter", "5", "--out", out) == 0
        table = (out / "table.csv").read_text().strip().splitlines()
        assert table[0] == "method,1%"
        assert len(table) == 3
        snr_k = (out / "snr_vs_k.csv").read_text().strip().splitlines()
        assert snr_k[0] == "contrast,K,snr_db"
        assert len(snr_k) == 3  # K = 1 and K = 2 at one contrast
        assert (out / "table.md").stat().st_size > 0
        assert (out / "snr_vs_k.png").stat().st_size > 0
        report = json.loads((out / "sweep_report.json").read_text())
        assert all(c["ok"] for c in report["cells"])

    def test_single_cell_matches_individual_commands(self, scene_file, tmp_path):
        out = tmp_path / "sweep1"
        assert run("sweep", "--scene", scene_file, "--contrasts", "1",
                   "--methods", "rb", "--layers", "2", "--max-iter", "5",
                   "--out", out) == 0
        sim = tmp_path / "manual_sim"
        rec = tmp_path / "manual_rec"
        assert run("simulate", "--scene", scene_file, "--contrast", "0.01",
                   "--out", sim) == 0
        assert run("reconstruct", "--scene", scene_file, "--data", sim,
                   "--method", "rb", "--layers", "2", "--max-iter", "5",
                   "--out", rec) == 0
        sweep_f = (out / "c01" / "rb_K2" / "f_hat.arr").read_bytes()
        manual_f = (rec / "f_hat.arr").read_bytes()
        assert sweep_f == manual_f

    def test_parallel_jobs_match_serial(self, scene_file, tmp_path):
        base = ("sweep", "--scene", scene_file, "--contrasts", "1,2",
                "--methods", "fb", "--layers", "1", "--max-iter", "4")
        assert run(*base, "--jobs", "1", "--out", tmp_path / "serial") == 0
        assert run(*base, "--jobs", "2", "--out", tmp_path / "par") == 0
        for tag in ("c01", "c02"):
            a = (tmp_path / "serial" / tag / "fb" / "f_hat.arr").read_bytes()
            b = (tmp_path / "par" / tag / "fb" / "f_hat.arr").read_bytes()
            assert a == b

    def test_unknown_method_rejected(self, scene_file, tmp_path):
        assert run("sweep", "--scene", scene_file, "--methods", "xx",
                   "--out", tmp_path / "s") == 2


class TestExitCodes:
    def test_solver_nonconvergence_is_exit_3(self, scene_file, tmp_path):
        # 2 Krylov iterations at 1e-14 tolerance cannot converge
        assert run("simulate", "--scene", scene_file, "--contrast", "0.15",
                   "--ls-tol", "1e-14", "--ls-max-iter", "2",
                   "--out", tmp_path / "bad") == 3

    def test_non_finite_measurements_are_exit_4_with_partial_output(
            self, scene_file, simulated, tmp_path):
        y = read_array(simulated / "y.arr")
        y[0, 0] = np.nan
        write_array(simulated / "y.arr", y)
        out = tmp_path / "diverged"
        assert run("reconstruct", "--scene", scene_file, "--data", simulated,
                   "--method", "rb", "--layers", "2", "--tau", "1e-8",
                   "--out", out) == 4
        assert (out / "f_hat_partial.arr").is_file()
        assert (out / "error.json").is_file()

    def test_worker_count_respects_env_cap(self, monkeypatch):
        from borntomo.cli import _worker_count
        monkeypatch.delenv("BORN_TOMO_THREADS", raising=False)
        assert _worker_count(4) == 4
        monkeypatch.setenv("BORN_TOMO_THREADS", "2")
        assert _worker_count(4) == 2
        assert _worker_count(1) == 1
