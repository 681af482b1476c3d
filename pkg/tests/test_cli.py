import json
import math

import pytest

from oudiff.cli import dispatch


def run_json(capsys, argv):
    code = dispatch(argv)
    out = capsys.readouterr().out
    return code, json.loads(out)


class TestScalarCommands:
    def test_speciation_reference(self, capsys):
        code, payload = run_json(
            capsys,
            ["speciation", "--beta", "1", "--g", "0", "--sigma-w2", "2",
             "--sigma2", "1", "--m-plus2", "1", "--m-minus2", "0"],
        )
        assert code == 0
        assert payload["regime"] == "speciates"
        assert payload["t_s"] == pytest.approx(0.346574, abs=1e-6)

    def test_collapse_reference(self, capsys):
        code, payload = run_json(
            capsys, ["collapse", "--alpha", "1", "--ratio", "1", "--beta", "1",
                     "--g", "0"],
        )
        assert code == 0
        t_ref = 0.5 * math.log(1.0 + 2.0 / (math.e**2 - 1.0))
        assert payload["t_c"] == pytest.approx(t_ref, abs=1e-9)
        assert payload["t_c_plus"] == pytest.approx(t_ref, abs=1e-9)
        assert payload["t_c_minus"] == pytest.approx(t_ref, abs=1e-9)
        assert payload["t_max"] == pytest.approx(
            1.0 / (math.e**2 - 1.0), abs=1e-9
        )

    def test_collapse_anisotropic(self, capsys):
        code, payload = run_json(
            capsys, ["collapse", "--alpha", "1", "--ratio", "1",
                     "--coupling", "anisotropic", "--g", "0.5"],
        )
        assert code == 0
        assert payload["t_c_conditional"] < payload["t_c"]

    def test_stability(self, capsys):
        code, payload = run_json(
            capsys, ["stability", "--beta", "1", "--g", "0.5",
                     "--sigma-w2", "2", "--sigma2", "1"],
        )
        assert code == 0
        assert payload["stable"] is True

    def test_unknown_flag_exits_2(self, capsys):
        assert dispatch(["speciation", "--not-a-flag", "1"]) == 2

    def test_unknown_command_exits_2(self, capsys):
        assert dispatch(["frobnicate"]) == 2

    def test_unstable_exits_3(self, capsys):
        code, payload = run_json(
            capsys, ["speciation", "--beta", "1", "--g", "0.5", "--sigma2", "2"],
        )
        assert code == 3
        assert payload["regime"] == "unstable"

    def test_invalid_domain_exits_2(self, capsys):
        code = dispatch(["speciation", "--beta", "-1"])
        assert code == 2

    def test_dry_run(self, capsys):
        code, payload = run_json(
            capsys, ["speciation", "--beta", "1", "--g", "0.2", "--dry-run"],
        )
        assert code == 0
        assert payload["dry_run"] is True
        assert payload["resolved"]["g"] == 0.2

    def test_every_subcommand_has_dry_run(self, capsys, tmp_path):
        commands = [
            ["speciation"],
            ["collapse", "--alpha", "1", "--ratio", "1"],
            ["stability"],
            ["phase-diagram"],
            ["sample"],
            ["toy-conditional"],
            ["clone-speciation"],
        ]
        for argv in commands:
            code = dispatch(argv + ["--dry-run"])
            capsys.readouterr()
            assert code == 0, argv


class TestSweeps:
    def test_phase_diagram_header_and_values(self, tmp_path):
        out = tmp_path / "pd.csv"
        code = dispatch(
            ["phase-diagram", "--g-points", "2", "--theta-points", "2",
             "--g-max", "1.0", "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "g,theta,regime,t_s,kappa0,g_crit"
        first = lines[1].split(",")
        assert first[2] == "speciates"
        assert float(first[5]) == pytest.approx(1.5)

    def test_toy_csv_schema(self, tmp_path):
        cfg = {
            "theta_points": 2, "g0_set": [0.5], "schedules": ["constant"],
            "trials": 20, "steps": 20, "dim_d": 4, "chunk": 10,
        }
        cfg_path = tmp_path / "toy.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "toy.csv"
        code = dispatch(
            ["toy-conditional", "--config", str(cfg_path), "--seed", "3",
             "--out", str(out)]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == (
            "theta,g0,schedule,d_accuracy,d_mse,d_nll,acc_ci_lo,acc_ci_hi,n"
        )
        assert len(lines) == 3

    def test_clone_csv_schema(self, tmp_path, capsys):
        cfg = {
            "g_list": [0.0], "dim_d": 4, "scan_count": 3,
            "repeats": 1, "batch": 8, "steps": 20,
        }
        cfg_path = tmp_path / "clone.json"
        cfg_path.write_text(json.dumps(cfg))
        out = tmp_path / "clone.csv"
        code = dispatch(
            ["clone-speciation", "--config", str(cfg_path), "--seed", "3",
             "--out", str(out), "--summary-out", str(tmp_path / "s.json")]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        assert lines[0] == (
            "g,scan_t,phi_u,phi_u_lo,phi_u_hi,phi_u_ex,"
            "phi_v,phi_v_lo,phi_v_hi,phi_v_ex"
        )
        summary = json.loads((tmp_path / "s.json").read_text())
        assert summary[0]["g"] == 0.0

    def test_unknown_config_field_rejected(self, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps({"no_such_field": 1}))
        code = dispatch(["toy-conditional", "--config", str(cfg_path)])
        assert code == 2

    def test_jobs_determinism(self, tmp_path):
        cfg = {
            "theta_points": 2, "g0_set": [0.2, 0.5], "schedules": ["constant"],
            "trials": 16, "steps": 16, "dim_d": 4, "chunk": 8,
        }
        cfg_path = tmp_path / "toy.json"
        cfg_path.write_text(json.dumps(cfg))
        outs = []
        for jobs in ("1", "2", "3"):
            out = tmp_path / f"toy-{jobs}.csv"
            code = dispatch(
                ["toy-conditional", "--config", str(cfg_path), "--seed", "9",
                 "--jobs", jobs, "--out", str(out)]
            )
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1] == outs[2]

    def test_unwritable_path_exits_4(self, capsys):
        code = dispatch(
            ["phase-diagram", "--g-points", "1", "--theta-points", "1",
             "--out", "/no/such/dir/pd.csv"]
        )
        assert code == 4

    def test_sample_reverse_and_flow(self, tmp_path):
        for mode in ("reverse", "flow"):
            out = tmp_path / f"{mode}.csv"
            code = dispatch(
                ["sample", "--mode", mode, "--paths", "16", "--steps", "10",
                 "--dim", "2", "--seed", "1", "--out", str(out)]
            )
            assert code == 0
            lines = out.read_text().splitlines()
            assert lines[0] == "t,mean_x,mean_y,var_x,var_y,cov_xy"
            assert len(lines) == 12


class TestSeedResolution:
    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        cfg = {
            "theta_points": 1, "g0_set": [0.5], "schedules": ["constant"],
            "trials": 8, "steps": 8, "dim_d": 4, "chunk": 8,
        }
        cfg_path = tmp_path / "toy.json"
        cfg_path.write_text(json.dumps(cfg))

        def run(seed_env, extra):
            if seed_env is None:
                monkeypatch.delenv("OUDIFF_SEED", raising=False)
            else:
                monkeypatch.setenv("OUDIFF_SEED", seed_env)
            out = tmp_path / "o.csv"
            assert dispatch(
                ["toy-conditional", "--config", str(cfg_path), "--out", str(out)]
                + extra
            ) == 0
            return out.read_bytes()

        env7 = run("7", [])
        flag7 = run("99", ["--seed", "7"])  # flag wins over env
        assert env7 == flag7
        env8 = run("8", [])
        assert env8 != env7

    def test_float_round_trip_in_csv(self, tmp_path):
        out = tmp_path / "pd.csv"
        dispatch(
            ["phase-diagram", "--g-points", "2", "--theta-points", "2",
             "--g-max", "0.7", "--out", str(out)]
        )
        lines = out.read_text().splitlines()[1:]
        for line in lines:
            t_s = line.split(",")[3]
            if t_s:
                v = float(t_s)
                assert repr(v) == t_s  # shortest round-trip form
