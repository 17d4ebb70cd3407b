import json
import subprocess
import sys

import pytest

from roughqbsde import scenarios as S
from roughqbsde.cli import ConfigError, load_config, main

SMALL = {
    "name": "small_rough", "kind": "bsde",
    "generator": {"type": "quad", "f": {"type": "truncated_constant", "c": 0.25, "K": 10.0}},
    "field": {"type": "sine", "amplitudes": [0.3, 0.2], "frequencies": [1.0, 1.0], "phases": [0.0, 0.5]},
    "driver": {"type": "brownian", "d": 2, "level": 5, "subfactor": 4, "seed": 2},
    "terminal": {"type": "identity"}, "forward": {"mu": 0.0, "sigma": 1.0, "x0": 0.0}, "T": 1.0,
    "discretization": {"n_steps": 8, "n_paths": 800, "basis": "poly2", "seed": 3},
    "route": "both",
    "oracles": [{"type": "finite"}, {"type": "route_agreement", "tol": 0.1}],
}


def write_config(tmp_path, scenarios, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps({"scenarios": scenarios}, indent=2))
    return str(path)


def run(args, tmp_path):
    return main(list(args) + ["--out", str(tmp_path / "out")])


def test_empty_config_passes(tmp_path, capsys):
    assert run(["run", write_config(tmp_path, [])], tmp_path) == 0
    assert "0/0 checks passed" in capsys.readouterr().out


def test_cole_hopf_builtin(tmp_path, capsys):
    assert run(["run", write_config(tmp_path, [{"builtin": "cole_hopf"}])], tmp_path) == 0
    out = capsys.readouterr().out
    assert "PASS cole_hopf" in out
    report = (tmp_path / "out" / "report.csv").read_text().splitlines()
    assert report[0].startswith("scenario,check,value,reference,tolerance,passed")
    assert (tmp_path / "out" / "cole_hopf" / "solution_doss_sussmann.csv").exists()


def test_small_fbm_hurst_rejected_before_running(tmp_path, capsys):
    bad = S.builtin("fbm_bsde") | {"name": "rough_fbm"}
    bad["driver"] = dict(bad["driver"], H=0.2)
    code = run(["run", write_config(tmp_path, [bad, {"builtin": "cole_hopf"}])], tmp_path)
    assert code != 0
    out = capsys.readouterr().out
    assert "H > 1/4" in out
    assert not (tmp_path / "out" / "cole_hopf").exists()


def test_all_validation_errors_listed(tmp_path, capsys):
    a = dict(SMALL, name="a", route="sideways")
    b = dict(SMALL, name="b", driver={"type": "file", "path": str(tmp_path / "missing.csv")})
    assert run(["run", write_config(tmp_path, [a, b])], tmp_path) == 2
    out = capsys.readouterr().out
    assert "sideways" in out and "missing.csv" in out


def test_parse_error_reports_line(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "scenarios": [\n    {"builtin": "cole_hopf",}\n  ]\n}\n')
    assert run(["run", str(path)], tmp_path) == 2
    assert "broken.json:3:" in capsys.readouterr().err
    with pytest.raises(ConfigError, match=":3:"):
        load_config(str(path))


def test_unknown_builtin_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, [{"builtin": "no_such_scenario"}]))


def test_failed_oracle_exits_one(tmp_path, capsys):
    sc = S.builtin("zero_generator") | {"oracles": [{"type": "value", "target": 5.0, "tol": 1e-3}]}
    assert run(["run", write_config(tmp_path, [sc])], tmp_path) == 1
    assert "FAIL zero_generator" in capsys.readouterr().out


def test_reruns_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, [SMALL])
    bodies = []
    for k in range(2):
        out = tmp_path / f"out{k}"
        assert main(["run", cfg, "--out", str(out), "--dump-flow", "--dump-zvonkin"]) == 0
        files = sorted(p for p in (out / "small_rough").iterdir() if p.suffix == ".csv")
        bodies.append({p.name: p.read_bytes() for p in files})
    assert set(bodies[0]) >= {"solution_doss_sussmann.csv", "solution_zvonkin.csv", "flow.csv", "zvonkin.csv"}
    assert bodies[0] == bodies[1]


def test_thread_count_leaves_csv_unchanged(tmp_path):
    cfg = write_config(tmp_path, [SMALL])
    for k, threads in enumerate((1, 3)):
        assert main(["run", cfg, "--out", str(tmp_path / f"t{k}"), "--threads", str(threads)]) == 0
    name = "small_rough/solution_zvonkin.csv"
    assert (tmp_path / "t0" / name).read_bytes() == (tmp_path / "t1" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = write_config(tmp_path, [S.builtin("zero_generator")])
    for seed in (1, 2):
        main(["run", cfg, "--out", str(tmp_path / f"s{seed}"), "--seed", str(seed)])
    name = "zero_generator/solution_doss_sussmann.csv"
    assert (tmp_path / "s1" / name).read_bytes() != (tmp_path / "s2" / name).read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ROUGHQBSDE_OUT", str(tmp_path / "env_out"))
    assert main(["run", write_config(tmp_path, [])]) == 0
    assert (tmp_path / "env_out" / "report.csv").exists()


def test_study_linear_bsde_decreasing(tmp_path):
    assert run(["study", write_config(tmp_path, [{"builtin": "linear_bsde"}]), "--levels", "3"], tmp_path) == 0
    lines = (tmp_path / "out" / "study_linear_bsde.csv").read_text().splitlines()
    assert lines[0] == "level,n_steps,n_paths,lift_level,value,reference,error"
    errors = [float(r.split(",")[-1]) for r in lines[1:]]
    assert len(errors) == 3 and errors[0] > errors[1] > errors[2]


def test_study_ode_rde_decreasing(tmp_path):
    assert run(["study", write_config(tmp_path, [{"builtin": "ode_rde_consistency"}]), "--levels", "3"],
               tmp_path) == 0
    lines = (tmp_path / "out" / "study_ode_rde_consistency.csv").read_text().splitlines()
    errors = [float(r.split(",")[-1]) for r in lines[1:]]
    assert errors[0] > errors[1] > errors[2]


def test_study_zero_generator_at_noise_floor(tmp_path):
    assert run(["study", write_config(tmp_path, [{"builtin": "zero_generator"}]), "--levels", "3"], tmp_path) == 0
    rows = [r.split(",") for r in (tmp_path / "out" / "study_zero_generator.csv").read_text().splitlines()[1:]]
    for r in rows:
        assert float(r[-1]) <= 4.0 / float(r[2]) ** 0.5


def test_study_needs_reference(tmp_path, capsys):
    assert run(["study", write_config(tmp_path, [{"builtin": "cole_hopf"}])], tmp_path) == 2
    assert "no convergence study" in capsys.readouterr().err


def test_run_needs_exactly_one_source(tmp_path):
    assert run(["run"], tmp_path) == 2
    assert run(["run", write_config(tmp_path, []), "--all-acceptance"], tmp_path) == 2


def test_list_and_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "roughqbsde", "list"], capture_output=True, text=True, check=True)
    names = res.stdout.split("\n")
    for n in S.ACCEPTANCE:
        assert f"{n} (acceptance)" in names
