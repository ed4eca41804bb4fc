import json
import math

import numpy as np
import pytest

from selfdecoherence import io
from selfdecoherence.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_PARSE, EXIT_VALIDATION, main


def run(args, out):
    code = main([*args, "-o", str(out), "-q"])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report


def assert_manifest_complete(out, report):
    emitted = sorted(p.name for p in out.iterdir() if p.name != "report.json")
    assert sorted(report["manifest"]) == emitted
    for name, digest in report["manifest"].items():
        assert io.sha256_file(out / name) == digest


def test_validate_harmonic_passes(scenarios, tmp_path):
    code, report = run(["validate", str(scenarios / "harmonic.toml")], tmp_path)
    assert code == EXIT_OK
    assert report["validation"]["state"] == []
    assert report["validation"]["partition"]["gaps"] == 0
    assert report["validation"]["involution"]["residuals"]["all"] < 1e-6


def test_validate_trace_failure_names_normalization(scenarios, tmp_path, capsys):
    code, report = run(["validate", str(scenarios / "invalid_trace.toml")], tmp_path)
    assert code == EXIT_VALIDATION
    assert "normalization" in capsys.readouterr().out
    (v,) = report["validation"]["state"]
    assert v["magnitude"] == pytest.approx(0.1, abs=1e-12)


def test_validate_overlap_reports_coordinates(scenarios, tmp_path, capsys):
    code, report = run(["validate", str(scenarios / "overlapping_charts.toml")], tmp_path)
    assert code == EXIT_VALIDATION
    assert "overlap" in capsys.readouterr().out
    pts = np.array(report["validation"]["partition"]["overlap_points"])
    h = 0.5 * (pts[:, 0] ** 2 + pts[:, 1] ** 2)
    assert np.all((h >= 1.0) & (h < 1.5))


def test_validate_henon_heiles_fails_involution(scenarios, tmp_path):
    code, report = run(["validate", str(scenarios / "henon_heiles.toml")], tmp_path)
    assert code == EXIT_VALIDATION
    assert report["validation"]["involution"]["residuals"]["all"] > 1e-2


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[system]\nname = 'harmonic'\n\n[energy_grid]\nomega_min = 0.0\nomega_max = -1.0\nn_points = 10\n")
    assert main(["validate", str(bad), "-o", str(tmp_path / "o")]) == EXIT_PARSE
    err = capsys.readouterr().err
    assert "line 6" in err and "energy_grid.omega_max" in err


def test_numerical_failure_exit_code(tmp_path):
    s = tmp_path / "narrow.toml"
    s.write_text("""
[system]
name = "harmonic"

[wigner]
q_min = -1.0
q_max = 1.0
n = 16
states = [{ kind = "ho_ground" }]
""")
    code, report = run(["wigner", str(s)], tmp_path / "o")
    assert code == EXIT_NUMERICAL
    assert "BoundaryError" in report["stages"]["wigner"]["error"]


def test_decohere_gaussian(scenarios, tmp_path):
    code, report = run(["decohere", str(scenarios / "gaussian_decay.toml")], tmp_path)
    assert code == EXIT_OK
    d = report["stages"]["decay_curve"]
    assert d["fitted_sigma"] == pytest.approx(0.2, rel=1e-6)
    assert d["declared_law_deviation"] < 1e-3
    assert report["warnings"] and "t_max" in report["warnings"][0]
    rows = io.read_decay_csv(tmp_path / "decay_curve.csv")
    assert rows.shape == (301, 4)
    state, _ = io.load_kernel(tmp_path / "decohered_state.sdc")
    assert not np.any(state.regular)
    assert_manifest_complete(tmp_path, report)


def test_decohere_singular_only_is_flat(scenarios, tmp_path):
    code, _ = run(["decohere", str(scenarios / "singular_only.toml")], tmp_path)
    assert code == EXIT_OK
    rows = io.read_decay_csv(tmp_path / "decay_curve.csv")
    assert np.ptp(rows[:, 1]) == 0.0


def test_wigner_harmonic(scenarios, tmp_path):
    code, report = run(["wigner", str(scenarios / "harmonic.toml")], tmp_path)
    assert code == EXIT_OK
    items = report["stages"]["wigner"]["items"]
    assert abs(items["state_0_ho_ground"]["peak_minus_inverse_pi"]) < 1e-6
    assert items["operator_0_identity"]["max_deviation_from_one"] < 1e-12
    bracket = io.load_field(tmp_path / "product_0_poisson_q_p.sdc")
    assert np.abs(bracket.values - 1.0).max() < 1e-10
    ground = io.load_field(tmp_path / "state_0_ho_ground.sdc")
    assert ground.values.real.max() == pytest.approx(1.0 / math.pi, abs=1e-6)
    assert_manifest_complete(tmp_path, report)


def test_classical_harmonic(scenarios, tmp_path):
    code, report = run(["classical", str(scenarios / "harmonic.toml")], tmp_path)
    assert code == EXIT_OK
    d = report["stages"]["classical_density"]
    assert d["angular_uniformity_max"] < 1e-3
    assert d["min"] >= -1e-10 and abs(d["integral"] - 1.0) < 1e-3
    assert d["duality_energy"]["relative_error"] < 1e-3
    assert d["flow_invariance"] < 1e-2
    (tr,) = report["stages"]["trajectories"]["items"]
    assert tr["energy_drift"] < 1e-8 and tr["angle_fit"]["max_residual"] < 1e-6
    header = (tmp_path / "trajectory_0.csv").read_text().splitlines()[0]
    assert header == "t,q,p,H,P1"
    assert_manifest_complete(tmp_path, report)


def test_classical_pendulum_two_charts(scenarios, tmp_path):
    code, report = run(["classical", str(scenarios / "pendulum_two_chart.toml")], tmp_path)
    assert code == EXIT_OK
    d = report["stages"]["classical_density"]
    assert d["chart_integrals"]["libration"] == pytest.approx(0.7, abs=1e-3)
    assert d["chart_integrals"]["rotation"] == pytest.approx(0.3, abs=1e-3)
    merged = io.load_field(tmp_path / "density.sdc")
    parts = [io.load_field(tmp_path / f"density_{c}.sdc") for c in ("libration", "rotation")]
    np.testing.assert_allclose(merged.values, parts[0].values + parts[1].values, atol=1e-12)
    assert (parts[0].values * parts[1].values == 0).all()
    assert_manifest_complete(tmp_path, report)


def test_classical_empty_levels_runs_trajectories_only(scenarios, tmp_path):
    code, report = run(["classical", str(scenarios / "henon_heiles.toml")], tmp_path)
    assert code == EXIT_OK
    assert report["stages"]["classical_density"]["status"] == "skipped"
    assert (tmp_path / "trajectory_0.csv").read_text().startswith("t,q1,q2,p1,p2,H,P1,P2\n")
    assert report["stages"]["trajectories"]["items"][0]["energy_drift"] < 1e-8


def test_unreachable_level_listed_and_run_continues(tmp_path):
    s = tmp_path / "s.toml"
    s.write_text("""
[system]
name = "pendulum"

[phase_grid]
q_min = -3.141592653589793
q_max = 3.141592653589793
n_q = 256
p_min = -3.5
p_max = 3.5
n_p = 256

[[charts]]
label = "libration"
predicate = "separatrix-side"
side = "inside"
priority = 1

[[charts]]
label = "rotation"
predicate = "separatrix-side"
side = "outside"
anchors = [[0.0, 1], [0.0, -1]]

[classical]
step = 1e-3
smearing = 0.15
flow_probe = 0.0
levels = [{ chart = "libration", energy = 1.0, weight = 0.5 }, { chart = "libration", energy = 3.0, weight = 0.5 }]
""")
    code, report = run(["classical", str(s)], tmp_path / "o")
    assert code == EXIT_OK
    d = report["stages"]["classical_density"]
    assert d["unreachable"] == [{"chart": "libration", "energy": 3.0, "weight": 0.5}]
    assert d["integral"] == pytest.approx(1.0, abs=1e-2)


def test_seed_override_changes_random_state(scenarios, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    path = str(scenarios / "singular_only.toml")
    assert main(["decohere", path, "-o", str(a), "-q"]) == 0
    assert main(["decohere", path, "-o", str(b), "-q", "--seed", "0"]) == 0
    assert main(["decohere", path, "-o", str(c), "-q", "--seed", "7", "--threads", "2"]) == 0
    assert (a / "decohered_state.sdc").read_bytes() == (b / "decohered_state.sdc").read_bytes()
    assert (a / "decohered_state.sdc").read_bytes() != (c / "decohered_state.sdc").read_bytes()


def test_bad_thread_count(scenarios, tmp_path):
    assert main(["validate", str(scenarios / "harmonic.toml"), "--threads", "0"]) == EXIT_PARSE
