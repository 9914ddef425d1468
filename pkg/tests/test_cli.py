import csv
import io
import json
import math

import pytest

from sosmix import cli


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def table(text):
    lines = text.splitlines()
    assert lines[0].startswith("# config: ")
    cfg = json.loads(lines[0][len("# config: "):])
    return cfg, list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


def test_coalesce_rows_are_deterministic(capsys):
    argv = ["coalesce", "--kind", "column", "--n", "16", "--beta", "1.0", "--seed", "7", "--replicas", "4"]
    code, first, _ = run(argv, capsys)
    assert code == 0
    cfg, rows = table(first)
    assert len(rows) == 4
    assert cfg["seed"] == 7 and cfg["n"] == 16
    assert all(r["timed_out"] == "0" and int(r["steps"]) > 0 for r in rows)
    assert [r["replica"] for r in rows] == ["0", "1", "2", "3"]
    _, second, _ = run(argv, capsys)
    assert first == second


def test_threads_do_not_change_output(capsys):
    base = ["coalesce", "--n", "10", "--seed", "3", "--replicas", "6"]
    _, one, _ = run(base, capsys)
    _, three, _ = run(base + ["--threads", "3"], capsys)
    assert one == three


def test_exact_stationary_mass(capsys):
    code, out, _ = run(["exact", "--n", "2", "--beta", "0.6931471805599453"], capsys)
    assert code == 0
    _, rows = table(out)
    assert len(rows) == 9
    row = next(r for r in rows if r["heights"] == "0 0")
    assert abs(float(row["mass"]) - 16 / 33) < 1e-9


def test_exact_stationary_mass_six_digit_beta(capsys):
    """Six-digit ln 2 moves the mass by ~1e-7; the CSV still matches the law at that beta."""
    beta = 0.693147
    _, out, _ = run(["exact", "--n", "2", "--beta", str(beta)], capsys)
    _, rows = table(out)
    weights = {}
    for h1 in range(3):
        for h2 in range(3):
            weights[f"{h1} {h2}"] = math.exp(-beta * (h1 + abs(h1 - h2) + h2))
    z = sum(weights.values())
    for r in rows:
        assert abs(float(r["mass"]) - weights[r["heights"]] / z) < 1e-12
    row = next(r for r in rows if r["heights"] == "0 0")
    assert abs(float(row["mass"]) - 16 / 33) < 1e-6


def test_exact_gap_and_tv_reports(capsys):
    code, out, _ = run(["exact", "--n", "1", "--cap", "1", "--beta", "0.6931471805599453", "--report", "gap"], capsys)
    assert code == 0
    _, rows = table(out)
    assert float(rows[0]["spectral_gap"]) == pytest.approx(5 / 16)
    code, out, _ = run(["exact", "--n", "2", "--report", "tv", "--kind", "column", "--t-max", "5"], capsys)
    _, rows = table(out)
    assert code == 0 and len(rows) == 6
    assert float(rows[-1]["tv"]) <= float(rows[0]["tv"])


def test_sweep_has_slope_column(capsys):
    code, out, _ = run(["sweep", "--kind", "column", "--n", "8,16,32", "--replicas", "8", "--seed", "1"], capsys)
    assert code == 0
    _, rows = table(out)
    assert [int(r["n"]) for r in rows] == [8, 16, 32]
    slopes = {r["slope"] for r in rows}
    assert len(slopes) == 1 and 1.5 < float(slopes.pop()) < 4.5


def test_unknown_flag_exits_2(capsys):
    code, _, err = run(["coalesce", "--n", "4", "--bogus", "1"], capsys)
    assert code == 2
    assert "usage" in err


def test_unknown_command_exits_2(capsys):
    assert run(["frobnicate"], capsys)[0] == 2


def test_exact_guard_rejected_before_compute(capsys):
    code, out, err = run(["exact", "--n", "7"], capsys)
    assert code == 2 and out == "" and "error" in err


def test_invalid_parameters_exit_2(capsys):
    assert run(["simulate", "--n", "4", "--beta", "-1", "--steps", "5"], capsys)[0] == 2
    assert run(["simulate", "--n", "4", "--kind", "glauber", "--steps", "5"], capsys)[0] == 2
    assert run(["coalesce", "--n", "4", "--threads", "0"], capsys)[0] == 2
    assert run(["equilibrium", "--n", "4", "--events", "Z:1"], capsys)[0] == 2


def test_timeouts_exit_3(capsys):
    code, out, _ = run(["coalesce", "--n", "16", "--kind", "single_site", "--replicas", "3", "--t-max", "5"], capsys)
    assert code == 3
    _, rows = table(out)
    assert all(r["timed_out"] == "1" for r in rows)


def test_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nn = 12\nbeta=0.5\nreplicas=2\nkind=single_site\n")
    code, out, _ = run(["coalesce", "--config", str(cfg), "--beta", "2.0"], capsys)
    assert code == 0
    conf, rows = table(out)
    assert conf["n"] == 12 and conf["beta"] == 2.0 and conf["kind"] == "single_site"
    assert len(rows) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour=blue\n")
    assert run(["coalesce", "--n", "4", "--config", str(bad)], capsys)[0] == 2
    assert run(["coalesce", "--n", "4", "--config", str(tmp_path / "missing.cfg")], capsys)[0] == 2


def test_config_row_replays_run(tmp_path, capsys):
    _, out, _ = run(["simulate", "--n", "6", "--steps", "300", "--stride", "100", "--seed", "5"], capsys)
    conf, _ = table(out)
    replay = ["simulate"]
    for k, v in conf.items():
        if k == "command" or v is None:
            continue
        replay += ["--" + k.replace("_", "-"), str(v)]
    _, again, _ = run(replay, capsys)
    assert again == out


def test_output_env_and_flag(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    code, out, _ = run(["equilibrium", "--n", "2", "--beta", "0.6931471805599453", "--seed", "9"], capsys)
    assert code == 0 and out == ""
    text = (tmp_path / "env" / "equilibrium-9.csv").read_text()
    _, rows = table(text)
    a = next(r for r in rows if r["event"] == "A")
    assert float(a["probability"]) == pytest.approx(7 / 33, rel=1e-12)
    target = tmp_path / "explicit.csv"
    run(["equilibrium", "--n", "2", "--output", str(target)], capsys)
    assert target.exists()


def test_equilibrium_samples(capsys):
    code, out, _ = run(["equilibrium", "--n", "5", "--samples", "20", "--conditioning", "A:2"], capsys)
    assert code == 0
    _, rows = table(out)
    assert len(rows) == 20
    assert all(min(map(int, r["heights"].split())) >= 2 for r in rows)


def test_drift_check_passes(capsys):
    code, out, _ = run(["drift-check", "--n", "8", "--pairs", "200", "--seed", "2"], capsys)
    assert code == 0
    _, rows = table(out)
    assert len(rows) == 200 and all(r["ok"] == "1" for r in rows)


def test_relax_descent_and_column_walk_run(capsys):
    code, out, _ = run(["relax", "--n", "8", "--beta", "0.5", "--replicas", "2"], capsys)
    assert code == 0 and len(table(out)[1]) == 2
    code, out, _ = run(["descent", "--n", "8", "--stride", "50"], capsys)
    assert code == 0
    series = [r["series"] for r in table(out)[1]]
    assert "trace" in series and series[-1] == "band"
    code, out, _ = run(["column-walk", "--n", "1", "--a", "4", "--b", "8", "--replicas", "2000",
                        "--height-mode", "unbounded"], capsys)
    assert code == 0
    row = table(out)[1][0]
    assert float(row["tv"]) <= 0.25
