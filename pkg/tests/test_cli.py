import csv
import json

import pytest

from fgplan import cli

SMALL = ["--map", "grid6x6", "--no-figures"]


def run(tmp_path, *argv):
    return cli.main([*argv, "--out", str(tmp_path)])


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_plan_writes_reports(tmp_path):
    assert run(tmp_path, "plan", "--map", "grid6x6", "--rule", "dp") == 0
    for name in ("value.json", "q.json", "policy.json", "arrows.txt", "rollouts.csv",
                 "convergence.csv", "value.png", "increments.png"):
        assert (tmp_path / name).stat().st_size > 0, name
    doc = json.loads((tmp_path / "value.json").read_text())
    assert doc["rule"] == "dp"
    assert all(r["goal_reached"] == "1" for r in rows(tmp_path / "rollouts.csv"))
    lines = (tmp_path / "arrows.txt").read_text().splitlines()
    assert len(lines) == 6 and all(len(l) == 6 for l in lines)
    assert sum(l.count("*") for l in lines) == 1


def test_plan_horizon_mode(tmp_path):
    assert run(tmp_path, "plan", *SMALL, "--horizon", "12", "--start", "0,0") == 0
    assert (tmp_path / "value.json").exists()


@pytest.mark.parametrize("argv", [
    ["plan", *SMALL, "--rule", "softdp", "--beta", "-1"],
    ["plan", *SMALL, "--rule", "viterbi"],
    ["plan", *SMALL, "--gamma", "1.5"],
    ["plan", *SMALL, "--intent-prob", "2"],
    ["plan", *SMALL, "--tol", "0"],
    ["plan", "--map", "no-such-map", "--no-figures"],
    ["plan", *SMALL, "--start", "9,9"],
    ["sweep", *SMALL, "--rule", "dp", "--param", "alpha", "--values", "1,2"],
    ["compare", *SMALL, "--rules", "dp"],
])
def test_input_errors_exit_2(tmp_path, capsys, argv):
    assert run(tmp_path, *argv) == cli.EXIT_INPUT
    assert "fgplan: error [" in capsys.readouterr().err


def test_non_convergence_exits_3(tmp_path):
    assert run(tmp_path, "plan", *SMALL, "--rule", "dp", "--max-iter", "3") == cli.EXIT_DIVERGED


def test_infeasible_exits_4(tmp_path):
    code = run(tmp_path, "decode", *SMALL, "--horizon", "1", "--start", "0,0", "--final", "5,5")
    assert code == cli.EXIT_INFEASIBLE


def test_sum_max_alpha_one_is_sum_product(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(a, "plan", *SMALL, "--rule", "sum-max", "--alpha", "1") == 0
    assert run(b, "plan", *SMALL, "--rule", "sum-product") == 0
    for name in ("value.json", "q.json", "policy.json"):
        da, db = (json.loads((d / name).read_text()) for d in (a, b))
        da.pop("rule"), db.pop("rule")
        assert da == db, name
    assert (a / "arrows.txt").read_bytes() == (b / "arrows.txt").read_bytes()


def test_compare_outputs(tmp_path):
    assert run(tmp_path, "compare", "--map", "grid6x6") == 0
    table = rows(tmp_path / "comparison.csv")
    assert [r["rule"] for r in table] == list(cli.REFERENCE_RULES)
    assert "wall_time_s" not in table[0]
    assert all(r["terminated_by"] == "tolerance" for r in table)
    inc = rows(tmp_path / "increments.csv")
    assert {r["rule"] for r in inc} == set(cli.REFERENCE_RULES)
    point = json.loads((tmp_path / "point_policy.json").read_text())
    assert point
    assert (tmp_path / "increments.png").exists() and (tmp_path / "point_policy.png").exists()


def test_compare_timing_column(tmp_path):
    assert run(tmp_path, "compare", *SMALL, "--rules", "dp,max-product", "--timing") == 0
    assert float(rows(tmp_path / "comparison.csv")[0]["wall_time_s"]) >= 0


def test_compare_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "compare", "--map", "grid6x6") == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == sorted(p.name for p in b.iterdir())
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_sweep(tmp_path):
    assert run(tmp_path, "sweep", "--map", "grid6x6", "--rule", "softdp",
               "--param", "beta", "--values", "0.2,20") == 0
    table = rows(tmp_path / "sweep.csv")
    assert [float(r["value"]) for r in table] == [0.2, 20.0]
    assert float(table[-1]["dp_argmax_agreement"]) == 1.0
    assert (tmp_path / "sweep.png").exists()


def test_sweep_gamma(tmp_path):
    assert run(tmp_path, "sweep", *SMALL, "--rule", "dp", "--param", "gamma",
               "--values", "0.5,0.9") == 0
    assert len(rows(tmp_path / "sweep.csv")) == 2


def test_decode(tmp_path):
    assert run(tmp_path, "decode", *SMALL, "--rule", "max-product", "--horizon", "20",
               "--start", "0,0") == 0
    doc = json.loads((tmp_path / "decode.json").read_text())
    cells = doc["progressive"]["cells"]
    assert cells[0] == [0, 0] and cells[-1] == [5, 5]
    assert len(cells) == 20 and len(doc["progressive"]["actions"]) == 20
    assert "connected" in doc["parallel"]


def test_hidden_oracle(capsys):
    assert "oracle" not in cli.build_parser().format_help()
    for rule in ("sum-product", "sum-max:2", "max-product", "dp", "max-rew-ent:1"):
        assert cli.main(["oracle", "--rule", rule]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["max_abs_error"] < 1e-9, rule


def test_thread_limit(tmp_path, monkeypatch):
    monkeypatch.setenv("FGPLAN_THREADS", "1")
    assert run(tmp_path, "plan", *SMALL, "--rule", "max-product") == 0
