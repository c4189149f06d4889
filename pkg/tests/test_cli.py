import json
import math
import subprocess
import sys

import pytest

from biphoton.cascade import DOT_PARAMS, IDEAL_PARAMS, gate_sequence
from biphoton.cli import CliError, main, parse_gate_spec
from biphoton.fit import synthetic_observations
from biphoton.io import read_state_points, state_points_csv, strip_comments
from biphoton.measures import werner_curve

COMMANDS = ["simulate", "reconstruct", "model", "fit", "werner-curve"]


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def body(path):
    return strip_comments(path.read_text())


@pytest.fixture(scope="module")
def ideal_hist(tmp_path_factory):
    d = tmp_path_factory.mktemp("ideal")
    cfg = write_json(d / "cfg.json", {"params": IDEAL_PARAMS.to_dict(), "n_pairs": 20000, "seed": 3})
    out = d / "hist.csv"
    assert main(["simulate", cfg, "--out", str(out), "--quiet"]) == 0
    return out


@pytest.fixture(scope="module")
def dot_hist(tmp_path_factory):
    d = tmp_path_factory.mktemp("dot")
    cfg = write_json(d / "cfg.json", {"params": DOT_PARAMS.to_dict(), "n_pairs": 50000, "seed": 5})
    out = d / "hist.csv"
    assert main(["simulate", cfg, "--out", str(out), "--quiet"]) == 0
    return out


class TestGateSpec:
    def test_schemes(self):
        assert len(parse_gate_spec("widening:256:12")) == 12
        assert [(g.t_g, g.dt_g) for g in parse_gate_spec("shifting:384:2")] == [(0, 384), (384, 384)]
        (g,) = parse_gate_spec("whole:3072")
        assert (g.t_g, g.dt_g, g.scheme) == (0, 3072, "whole_peak")
        assert len(parse_gate_spec("widening:256:3,shifting:384:2")) == 5

    @pytest.mark.parametrize("spec", ["widening:256", "sliding:10:2", "whole:12.5", "shifting:-384:2", ""])
    def test_bad(self, spec):
        with pytest.raises(CliError):
            parse_gate_spec(spec)


class TestHelp:
    @pytest.mark.parametrize("cmd", COMMANDS)
    def test_help_exits_zero(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for flag in ("--seed", "--out", "--quiet"):
            assert flag in text

    def test_console_script(self):
        r = subprocess.run([sys.executable, "-m", "biphoton.cli", "--help"], capture_output=True, text=True)
        assert r.returncode == 0
        assert "werner-curve" in r.stdout


class TestSimulate:
    def test_shape(self, ideal_hist):
        lines = body(ideal_hist).strip().splitlines()
        assert lines[0] == "basis_xx,basis_x,bin_start_ps,counts"
        assert len(lines) == 1 + 36 * 48

    def test_manifest_header(self, ideal_hist):
        head = [l for l in ideal_hist.read_text().splitlines() if l.startswith("#")]
        assert head[0].startswith("# command:")
        assert head[-1].startswith("# timestamp:")
        assert any(l.startswith("# config_sha256:") for l in head)

    def test_deterministic(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {"params": DOT_PARAMS.to_dict(), "n_pairs": 500})
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["simulate", cfg, "--out", str(a), "--seed", "9", "--quiet"]) == 0
        assert main(["simulate", cfg, "--out", str(b), "--seed", "9", "--quiet"]) == 0
        assert body(a) == body(b)
        # the header differs only in output path and timestamp
        ha = [l for l in a.read_text().splitlines() if l.startswith("#") and "timestamp" not in l and "outputs" not in l]
        hb = [l for l in b.read_text().splitlines() if l.startswith("#") and "timestamp" not in l and "outputs" not in l]
        assert ha == hb

    def test_malformed_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        out = tmp_path / "h.csv"
        assert main(["simulate", str(bad), "--out", str(out)]) == 2
        assert not out.exists()
        assert list(tmp_path.iterdir()) == [bad]
        assert "error" in capsys.readouterr().err

    def test_invalid_config_keeps_previous_file(self, tmp_path):
        out = tmp_path / "h.csv"
        out.write_text("previous\n")
        cfg = write_json(tmp_path / "cfg.json", {"params": DOT_PARAMS.to_dict(), "n_pairs": 0})
        assert main(["simulate", cfg, "--out", str(out), "--quiet"]) == 2
        assert out.read_text() == "previous\n"

    def test_bad_seed(self, tmp_path):
        cfg = write_json(tmp_path / "cfg.json", {"params": DOT_PARAMS.to_dict(), "n_pairs": 5})
        assert main(["simulate", cfg, "--out", str(tmp_path / "h.csv"), "--seed", "-1"]) == 2


class TestReconstruct:
    def test_ideal_whole_peak(self, ideal_hist, tmp_path):
        out = tmp_path / "states.csv"
        assert main(["reconstruct", str(ideal_hist), "--gates", "whole:3072", "--out", str(out), "--quiet"]) == 0
        (pt,) = read_state_points(out.read_text(), prefer_count_fidelity=False)
        assert pt.fidelity >= 0.99
        rho = json.loads((tmp_path / "states_rho.json").read_text())
        assert len(rho["states"]) == 1
        assert "_manifest" in rho and "final_objective" in rho["states"][0]["report"]

    def test_sequences(self, dot_hist, tmp_path):
        out = tmp_path / "states.csv"
        spec = "widening:256:12,shifting:384:8"
        assert main(["reconstruct", str(dot_hist), "--gates", spec, "--out", str(out), "--quiet"]) == 0
        pts = read_state_points(out.read_text())
        assert len(pts) == 20
        widening = [p.s_lin for p in pts[:12]]
        shifting = [p.s_lin for p in pts[12:]]
        assert widening[0] < widening[-1]
        assert shifting[0] < shifting[-1]
        header = body(out).splitlines()[0].split(",")
        assert header[:6] == ["gate_t0_ps", "gate_dt_ps", "s_lin", "tangle", "fidelity", "m_chsh"]

    def test_deterministic(self, dot_hist, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            assert main(["reconstruct", str(dot_hist), "--gates", "shifting:384:3", "--out", str(out), "--quiet"]) == 0
        assert body(a) == body(b)

    def test_misaligned(self, dot_hist, tmp_path):
        out = tmp_path / "s.csv"
        assert main(["reconstruct", str(dot_hist), "--gates", "widening:100:3", "--out", str(out), "--quiet"]) == 3
        assert not out.exists()

    def test_beyond_window(self, dot_hist, tmp_path):
        assert main(["reconstruct", str(dot_hist), "--gates", "whole:6144", "--out", str(tmp_path / "s.csv"), "--quiet"]) == 3

    def test_missing_histogram(self, tmp_path):
        assert main(["reconstruct", str(tmp_path / "none.csv"), "--gates", "whole:3072", "--out", str(tmp_path / "s.csv")]) == 2


class TestModel:
    def test_ideal(self, tmp_path):
        params = write_json(tmp_path / "p.json", IDEAL_PARAMS.to_dict())
        out = tmp_path / "m.csv"
        assert main(["model", params, "--gates", "widening:256:4", "--out", str(out), "--quiet"]) == 0
        for p in read_state_points(out.read_text()):
            assert (p.s_lin, p.tangle, p.fidelity, p.m_chsh) == pytest.approx((0, 1, 1, 2), abs=1e-12)
        curve = body(tmp_path / "m_werner.csv").strip().splitlines()
        assert curve[0] == "s_lin,tangle" and len(curve) == 201

    def test_dot_whole_peak(self, tmp_path):
        params = write_json(tmp_path / "p.json", DOT_PARAMS.to_dict())
        out = tmp_path / "m.csv"
        assert main(["model", params, "--gates", "whole:3072", "--out", str(out), "--quiet"]) == 0
        (p,) = read_state_points(out.read_text())
        assert (p.s_lin, p.tangle) == pytest.approx((0.5059, 0.3015), abs=1e-3)

    def test_d_only_traces_werner_curve(self, tmp_path):
        params = write_json(tmp_path / "p.json", {"S_ueV": 0, "tau_r_ps": 560, "tau_ss_ps": 2800, "tau_hv_ps": None, "d": 0.05})
        out = tmp_path / "m.csv"
        assert main(["model", params, "--gates", "shifting:384:8", "--out", str(out), "--quiet"]) == 0
        for p in read_state_points(out.read_text()):
            assert p.tangle == pytest.approx(werner_curve(p.s_lin), abs=1e-12)

    def test_invalid_params(self, tmp_path):
        params = write_json(tmp_path / "p.json", {"S_ueV": -1, "tau_r_ps": 560})
        assert main(["model", params, "--gates", "whole:3072", "--out", str(tmp_path / "m.csv")]) == 2

    def test_nonphysical_variant(self, tmp_path):
        params = write_json(tmp_path / "p.json", DOT_PARAMS.to_dict())
        argv = ["model", params, "--gates", "widening:256:2", "--offdiag", "p_squared_over_p_prime"]
        assert main(argv + ["--out", str(tmp_path / "m.csv"), "--quiet"]) == 2


class TestWernerCurve:
    def test_output(self, tmp_path):
        out = tmp_path / "w.csv"
        assert main(["werner-curve", "--out", str(out), "--points", "11", "--quiet"]) == 0
        rows = body(out).strip().splitlines()[1:]
        assert len(rows) == 11
        s, t = map(float, rows[5].split(","))
        assert (s, t) == pytest.approx((0.5, werner_curve(0.5)), abs=1e-15)


class TestFit:
    @pytest.fixture
    def states(self, tmp_path):
        gates = gate_sequence("widening", 256, 6) + gate_sequence("shifting", 384, 8)
        pts = synthetic_observations(DOT_PARAMS, gates)
        path = tmp_path / "states.csv"
        path.write_text(state_points_csv(pts, {"scheme": [g.scheme for g in gates]}))
        return path

    def test_closed_loop(self, states, tmp_path):
        out = tmp_path / "fit.json"
        argv = ["fit", str(states), "--tau-r", "560", "--tau-ss", "2800", "--out", str(out), "--quiet"]
        assert main(argv) == 0
        r = json.loads(out.read_text())
        assert r["S_ueV"] == pytest.approx(0.36, rel=0.01)
        assert r["tau_hv_ps"] == pytest.approx(2300, rel=0.01)
        assert r["d"] == pytest.approx(0.008, rel=0.01)
        assert r["converged"] is True
        assert r["_manifest"]["command"] == "fit"

    def test_insufficient_rows(self, tmp_path, capsys):
        pts = synthetic_observations(DOT_PARAMS, gate_sequence("widening", 256, 2))
        path = tmp_path / "few.csv"
        path.write_text(state_points_csv(pts))
        assert main(["fit", str(path), "--tau-r", "560", "--out", str(tmp_path / "f.json")]) == 2
        assert "at least 3" in capsys.readouterr().err

    def test_bad_fixed_params(self, states, tmp_path):
        out = str(tmp_path / "f.json")
        assert main(["fit", str(states), "--tau-r", "0", "--out", out, "--quiet"]) == 2
        assert main(["fit", str(states), "--tau-r", "560", "--fix-d", "0.5", "--out", out, "--quiet"]) == 2

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        assert main(["fit", str(path), "--tau-r", "560", "--out", str(tmp_path / "f.json")]) == 2


def test_nonconvergence_exit_code(tmp_path, monkeypatch):
    import biphoton.cli as cli

    real = cli.fit

    def starved(problem, restarts, seed):
        return real(problem, restarts=1, seed=seed, max_evaluations=5)

    monkeypatch.setattr(cli, "fit", starved)
    gates = gate_sequence("shifting", 384, 8)
    path = tmp_path / "s.csv"
    path.write_text(state_points_csv(synthetic_observations(DOT_PARAMS, gates)))
    out = tmp_path / "f.json"
    assert main(["fit", str(path), "--tau-r", "560", "--tau-ss", "2800", "--out", str(out), "--quiet"]) == 4
    assert json.loads(out.read_text())["converged"] is False
