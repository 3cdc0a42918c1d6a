import json
from pathlib import Path

import pytest

from geoshadow.cli import main
from geoshadow.config import build_curve, build_params, load_config, parse_override


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path), "--run-name", "run"])


def files(tmp_path):
    return sorted(p.name for p in (tmp_path / "run").iterdir())


def write(tmp_path, text):
    path = tmp_path / "cfg.toml"
    path.write_text(text)
    return str(path)


def test_check_a3_example(tmp_path, capsys):
    assert run(tmp_path, "check-a3", "--grid", "5") == 0
    out = capsys.readouterr().out
    assert "satisfied on 25/25" in out
    doc = json.loads((tmp_path / "run" / "check-a3-certificates-seed0.json").read_text())
    assert doc["all_satisfied"] and doc["config"]["fields"]["preset"] == "example"


def test_check_a3_two_fields(tmp_path):
    cfg = write(tmp_path, """
[fields]
preset = "custom"
[[fields.action]]
label = "a"
linear = [0.1, 0.0]
[[fields.action]]
label = "b"
linear = [0.0, 0.1]
""")
    assert run(tmp_path, "check-a3", "-c", cfg, "--grid", "3") == 1


@pytest.mark.parametrize("text", ["[fields\npreset=1", "[bogus]\nx = 1", "[model]\nzeta = 2",
                                  "[fields]\npreset = \"nope\""])
def test_malformed_config(tmp_path, capsys, text):
    assert run(tmp_path, "check-a3", "-c", write(tmp_path, text)) == 2
    assert "error" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run(tmp_path, "constants", "-c", str(tmp_path / "missing.toml")) == 2


def test_shadow_constant_curve(tmp_path):
    cfg = write(tmp_path, """
[model]
eta = 0.0
[curve]
kind = "constant"
point = [0.1, -0.2]
[planner]
horizon = 3
stay_horizon = 1.0
""")
    assert run(tmp_path, "shadow", "-c", cfg) == 0
    summary = json.loads((tmp_path / "run" / "shadow-summary-seed0.json").read_text())
    assert summary["max_error"] == 0.0


def test_shadow_rejects_large_eps(tmp_path, capsys):
    assert run(tmp_path, "shadow", "--epsilon", "0.05") == 2
    assert "usable bound" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_shadow_circle_outputs(tmp_path):
    assert run(tmp_path, "shadow", "--set", "planner.horizon=40") == 0
    assert files(tmp_path) == ["shadow-summary-seed0.json", "shadow-trajectory-seed0.csv"]
    csv = (tmp_path / "run" / "shadow-trajectory-seed0.csv").read_text()
    assert csv.splitlines()[0] == "i,symbol,u1,v1,tau"


def test_verify_unknown_experiment(tmp_path):
    assert run(tmp_path, "verify", "--set", 'verify.experiments=["nope"]') == 2


def test_verify_small_suite(tmp_path, capsys):
    code = run(tmp_path, "verify", "--set", "verify.trials=5", "--set", "verify.endpoint_trials=5",
               "--set", "verify.N=[5]", "--set", "planner.horizon=20", "--seed", "3")
    assert code == 0
    names = files(tmp_path)
    assert "verify-uniform_closeness-seed3.json" in names and "verify-shadowing-seed3.csv" in names


def test_sweep_needs_three(tmp_path):
    assert run(tmp_path, "sweep", "--set", "sweep.epsilons=[1e-2, 5e-3]") == 2


def test_sweep_line_decoupled(tmp_path, capsys):
    cfg = write(tmp_path, """
[model]
eta = 0.0
[curve]
kind = "line"
start = [-0.5, -0.3]
velocity = [0.7, 0.2]
[planner]
horizon = 20
""")
    assert run(tmp_path, "sweep", "-c", cfg) == 0
    rep = json.loads((tmp_path / "run" / "sweep-report-seed0.json").read_text())
    assert abs(rep["sweep"]["slope"] - 1.0) < 1e-6


def test_constants_command(tmp_path, capsys):
    assert run(tmp_path, "constants", "--set", "model.eta=0.0") == 0
    record = json.loads(capsys.readouterr().out)
    assert record["C1"] == 1.0


def test_output_dir_precedence(tmp_path, monkeypatch):
    env_dir = tmp_path / "env"
    monkeypatch.setenv("GEOSHADOW_OUTPUT_DIR", str(env_dir))
    assert main(["constants", "--run-name", "r"]) == 0
    assert (env_dir / "r").is_dir()
    flag_dir = tmp_path / "flag"
    assert main(["constants", "--run-name", "r", "--out", str(flag_dir)]) == 0
    assert (flag_dir / "r").is_dir()


def test_bad_arguments():
    assert main(["nope"]) == 2
    assert main([]) == 2


def test_override_parsing():
    assert parse_override("model.eta=0.25") == ("model.eta", 0.25)
    assert parse_override("curve.kind=line") == ("curve.kind", "line")
    assert parse_override("verify.N=[1, 2]") == ("verify.N", [1, 2])
    cfg = load_config(None, {"seed": 7, "model.epsilon": 0.005})
    assert cfg["seed"] == 7 and cfg["model"]["epsilon"] == 0.005


def test_identical_runs_identical_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["shadow", "--set", "planner.horizon=30", "--run-name", "x"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    for name in ("shadow-summary-seed0.json", "shadow-trajectory-seed0.csv"):
        assert (a / "x" / name).read_bytes() == (b / "x" / name).read_bytes()


CONFIGS = sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.toml"))


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_build(path):
    cfg = load_config(str(path))
    assert build_params(cfg).eps == cfg["model"]["epsilon"]
    build_curve(cfg)(0.0)
