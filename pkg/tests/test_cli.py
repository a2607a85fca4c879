import json


from megapt.cli import main
from megapt.scenario import builtin_case_study, serialize_scenario


def run_cli(*args: str) -> int:
    return main(list(args))


def test_solve_purple_reports_zero_web_risk(tmp_path, capsys):
    out = tmp_path / "out"
    code = run_cli(
        "solve", "--builtin", "case-study", "--scheme", "purple",
        "--c-a", "0.8", "--out", str(out),
    )
    assert code == 0
    risk_lines = (out / "risk.csv").read_text().strip().splitlines()
    web = next(line for line in risk_lines if line.startswith("web,"))
    assert web.split(",")[2] == "0"
    assert (out / "playbook.json").exists()
    assert (out / "value_trace.csv").exists()


def test_solve_red_weak_attacker_values_nonpositive(tmp_path):
    out = tmp_path / "out"
    assert run_cli(
        "solve", "--builtin", "case-study", "--scheme", "red",
        "--c-a", "0.2", "--out", str(out),
    ) == 0
    doc = json.loads((out / "playbook.json").read_text())
    assert all(v <= 0.0 for v in doc["values"].values())


def test_solve_malformed_scenario_is_input_error(tmp_path, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text("{this is not json")
    code = run_cli("solve", "--scenario", str(bad), "--out", str(tmp_path / "o"))
    assert code == 1
    assert "syntax error" in capsys.readouterr().err


def test_solve_scenario_file_round_trips(tmp_path):
    path = tmp_path / "scenario.json"
    path.write_text(serialize_scenario(builtin_case_study()))
    out = tmp_path / "out"
    assert run_cli("solve", "--scenario", str(path), "--scheme", "nash",
                   "--out", str(out)) == 0


def test_solve_nonconvergence_exit_code_still_writes(tmp_path):
    out = tmp_path / "out"
    code = run_cli(
        "solve", "--builtin", "case-study", "--scheme", "red",
        "--max-iters", "1", "--out", str(out),
    )
    assert code == 2
    assert (out / "playbook.json").exists()


def test_structured_reports_are_byte_identical(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert run_cli(
            "solve", "--builtin", "case-study", "--scheme", "purple",
            "--seed", "7", "--out", str(out),
        ) == 0
    assert (out1 / "playbook.json").read_bytes() == (out2 / "playbook.json").read_bytes()
    assert (out1 / "strategy_matrix.csv").read_bytes() == (out2 / "strategy_matrix.csv").read_bytes()


def test_adapt_builtin_change(tmp_path, capsys):
    out = tmp_path / "out"
    code = run_cli(
        "adapt", "--builtin", "case-study", "--scheme", "red",
        "--change", "builtin:app-lockdown", "--out", str(out),
    )
    assert code == 0
    after = (out / "strategy_after.csv").read_text().strip().splitlines()
    app_col = after[0].split(",").index("app")
    for line in after[1:]:
        cells = line.split(",")
        if cells[0] != "app":
            assert float(cells[app_col]) == 0.0
    diff = json.loads((out / "diff.json").read_text())
    assert diff["changed_profiles"] == ["app"]


def test_adapt_noop_change_file(tmp_path):
    from megapt.scenario import tree_to_json

    scenario = builtin_case_study()
    change = tmp_path / "noop.json"
    change.write_text(json.dumps({
        "kind": "replace_tree",
        "node": "app",
        "tree": tree_to_json(scenario.trees["app"]),
    }))
    out = tmp_path / "out"
    assert run_cli("adapt", "--builtin", "case-study", "--scheme", "red",
                   "--change", str(change), "--out", str(out)) == 0
    diff = json.loads((out / "diff.json").read_text())
    assert diff["empty"] is True
    assert diff["extra_iterations"] == 0


def test_adapt_unknown_node_change_is_input_error(tmp_path, capsys):
    change = tmp_path / "bad.json"
    change.write_text(json.dumps({"kind": "add_nodes", "count": 1, "template": "ghost"}))
    code = run_cli("adapt", "--builtin", "case-study", "--change", str(change),
                   "--out", str(tmp_path / "out"))
    assert code == 1
    assert "ghost" in capsys.readouterr().err


def test_bench_writes_rows(tmp_path):
    out = tmp_path / "out"
    code = run_cli("bench", "--users", "2,3", "--budget-s", "5",
                   "--out", str(out))
    assert code == 0
    lines = (out / "scaling.csv").read_text().strip().splitlines()
    assert lines[0] == "n_users,meta_ms,rl_ms,rl_states,rl_converged"
    assert len(lines) == 3


def test_bench_rejects_zero_users(tmp_path, capsys):
    assert run_cli("bench", "--users", "0", "--out", str(tmp_path / "o")) == 1
    assert "at least 2" in capsys.readouterr().err


def test_risk_sweep(tmp_path, capsys):
    out = tmp_path / "out"
    code = run_cli(
        "risk", "--builtin", "case-study", "--scheme", "purple",
        "--c-a-sweep", "0.2,0.5,0.8", "--out", str(out),
    )
    assert code == 0
    lines = (out / "risk_sweep.csv").read_text().strip().splitlines()
    web = next(line for line in lines if line.startswith("web,"))
    assert web.split(",")[1:] == ["0", "0", "0"]


def test_risk_fixed_defense_sweep_monotone(tmp_path):
    out = tmp_path / "out"
    assert run_cli(
        "risk", "--builtin", "case-study", "--scheme", "red",
        "--c-a-sweep", "0.2,0.5,0.8", "--out", str(out),
    ) == 0
    lines = (out / "risk_sweep.csv").read_text().strip().splitlines()
    web = [float(x) for x in
           next(line for line in lines if line.startswith("web,")).split(",")[1:]]
    assert web[0] <= web[1] + 1e-9
    assert web[1] <= web[2] + 1e-9


def test_risk_rejects_bad_vmax(tmp_path, capsys):
    assert run_cli("risk", "--builtin", "case-study", "--v-max", "-1",
                   "--out", str(tmp_path / "o")) == 1


def test_capability_override_validated(tmp_path, capsys):
    assert run_cli("solve", "--builtin", "case-study", "--c-a", "1.5",
                   "--out", str(tmp_path / "o")) == 1
    assert "c_a" in capsys.readouterr().err
