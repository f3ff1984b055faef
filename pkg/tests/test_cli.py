import json

import pytest

from nashmoser import cli


def run(argv, capsys):
    code = cli.main(argv)
    return code, capsys.readouterr()


def body(path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


def test_schedule_barp(capsys):
    code, out = run("schedule barp --k 3 --kappa 1 --gamma0 0 --gamma 1 --m 1 --r 1 --rprime 0".split(), capsys)
    rep = json.loads(out.out)
    assert code == 0 and rep["n_star"] == 7 and rep["pbar"] == pytest.approx(215)


def test_schedule_check_infeasible(capsys):
    code, out = run("schedule check --k 2 --kappa 1 --gamma0 0 --gamma 0".split(), capsys)
    assert code == 1 and json.loads(out.out)["feasible"] is False


def test_schedule_check_feasible_picks_parameters(capsys):
    code, out = run("schedule check --k 3 --eps 0.1".split(), capsys)
    assert code == 0 and json.loads(out.out)["alpha_in_window"]


def test_schedule_thetas(capsys):
    code, out = run("schedule thetas --eps 0.1 --k 3 --zeta 1.1 --jmax 3".split(), capsys)
    th = json.loads(out.out)["thetas"]
    assert code == 0 and th[0] == pytest.approx(1000) and th[1] == pytest.approx(1995.26, abs=0.01)


def test_schedule_window(capsys):
    code, out = run("schedule window --k 3 --N 7".split(), capsys)
    assert code == 0 and json.loads(out.out)["lo"] == pytest.approx(4 / 7)


@pytest.mark.parametrize("argv", [["schedule", "barp", "--k", "x"], ["bogus"], ["run", "relax", "--eps", "2"]])
def test_bad_flags_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


@pytest.mark.parametrize("sub", [[], ["schedule"], ["run"], ["sweep"], ["selftest"]])
def test_help_everywhere(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(sub + ["--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_run_relax_exact_preset(tmp_path, capsys):
    code, out = run(["run", "relax", "--preset", "exact-jinxin", "--eps", "0.2", "--n", "1024",
                     "--out", str(tmp_path)], capsys)
    assert code == 0
    res = json.loads((tmp_path / "result.json").read_text())
    assert res["final_res"] <= 1e-8 and res["config"]["version"] == "v1"
    head = (tmp_path / "trace.csv").read_text().splitlines()[:3]
    assert head[0].startswith("# generated") and head[1].startswith("# config") and head[2].startswith("# params")
    assert (tmp_path / "profile.csv").exists()


def test_run_is_deterministic(tmp_path, capsys):
    argv = ["run", "relax", "--eps", "0.1", "--n", "1024"]
    assert run(argv + ["--out", str(tmp_path / "a")], capsys)[0] == 0
    assert run(argv + ["--out", str(tmp_path / "b")], capsys)[0] == 0
    for name in ("trace.csv", "profile.csv"):
        assert body(tmp_path / "a" / name) == body(tmp_path / "b" / name)


def test_run_generic_c2_every_step(tmp_path, capsys):
    code, _ = run(["run", "relax", "--preset", "generic", "--eps", "0.1", "--out", str(tmp_path)], capsys)
    rows = [r for r in (tmp_path / "trace.csv").read_text().splitlines() if not r.startswith("#")]
    cols = rows[0].split(",")
    assert code == 0
    assert all(r.split(",")[cols.index("c2ii")] == "1" for r in rows[1:])


def test_run_hyperb_rough_newton_diverges(tmp_path, capsys):
    code, _ = run(["run", "hyperb", "--k", "4", "--eps", "0.1", "--newton", "--variant", "rough",
                   "--out", str(tmp_path)], capsys)
    assert code == 4


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"version": "v1", "preset": "exact-jinxin", "eps": [0.2], "n": 1024}))
    code, _ = run(["run", "relax", "--config", str(cfg), "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    assert json.loads((tmp_path / "o" / "result.json").read_text())["config"]["preset"] == "exact-jinxin"


@pytest.mark.parametrize("payload", [{"version": "v1", "colour": 1}, {"preset": "generic"},
                                     {"version": "v1", "params": {"kapa": 1}}])
def test_config_file_rejected(tmp_path, capsys, payload):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(payload))
    code, out = run(["run", "relax", "--config", str(cfg), "--out", str(tmp_path)], capsys)
    assert code == 2 and "error" in out.err


def test_sweep_needs_three_eps(capsys):
    code, out = run(["sweep", "relax", "--eps", "0.1"], capsys)
    assert code == 2 and "three" in out.err


def test_sweep_unknown_observable(capsys):
    code, _ = run(["sweep", "relax", "--observable", "banana"], capsys)
    assert code == 2


def test_sweep_residual_exponents(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("NM_THREADS", "1")
    code, out = run(["sweep", "relax", "--preset", "generic", "--eps", "0.2,0.1,0.05", "--n", "1024",
                     "--observable", "ru_d0,rv_d1", "--out", str(tmp_path)], capsys)
    lines = out.out.strip().splitlines()
    assert code == 0 and lines[0] == "observable,slope,theoretical,pass"
    assert all(line.endswith(",pass") for line in lines[1:])
    assert len(list(tmp_path.glob("member_eps*.json"))) == 3
    assert not list(tmp_path.glob("*.tmp"))


def test_selftest_command(capsys):
    code, out = run(["selftest", "--trials", "10"], capsys)
    assert code == 0 and json.loads(out.out)["passed"]
