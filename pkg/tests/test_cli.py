from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

import sbmlab.validation as validation
from sbmlab import cli
from sbmlab.errors import NonConvergence, StabilityViolation, StepTooLarge
from sbmlab.validation import CriterionResult

PD = ["phase-diagram", "--gamma", "0.1:3:6", "--eta", "0.1:3:5"]


def run(tmp_path, *args) -> int:
    return cli.main([*args, "--output-dir", str(tmp_path)])


def test_range_syntax() -> None:
    assert cli.parse_range("0:1:5") == (0.0, 0.25, 0.5, 0.75, 1.0)
    assert cli.parse_range("1,2.5,4") == (1.0, 2.5, 4.0)
    assert cli.parse_range("2.5") == (2.5,)
    assert cli.parse_range("3:7:1") == (3.0,)
    for bad in ("1:2", "1:2:0", "", "a,b"):
        with pytest.raises(ValueError):
            cli.parse_range(bad)


@given(a=st.floats(-10, 10), b=st.floats(-10, 10), n=st.integers(2, 500))
def test_range_is_inclusive(a, b, n) -> None:
    v = cli.parse_range(f"{a!r}:{b!r}:{n}")
    assert len(v) == n and v[0] == a and v[-1] == b


def test_phase_diagram_outputs_and_manifest(tmp_path) -> None:
    assert run(tmp_path, *PD) == 0
    rows = (tmp_path / "phase-diagram.csv").read_text().splitlines()
    assert rows[0] == "gamma,eta,phase,d,a,h_sq,mu,lambda_1,u_1"
    assert len(rows) == 1 + 30
    assert (tmp_path / "phase-diagram.png").stat().st_size > 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["version"] == cli.__version__ and man["seed"] == 0
    assert man["config_hash"] == cli.config_hash("phase-diagram", man["params"], 0, "csv")
    assert sorted(man["outputs"]) == ["phase-diagram.csv", "phase-diagram.png"]


def test_theory_outputs_are_byte_identical(tmp_path) -> None:
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["kl-sweep", "--gamma", "0.1:2:4", "--eta", "1,3"]
    assert run(a, *args) == 0 and run(b, *args, "--workers", "3") == 0
    for name in ("kl-sweep.csv", "manifest.json", "kl-sweep.png"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_stochastic_rerun_at_fixed_seed(tmp_path) -> None:
    args = ["langevin", "--n", "60", "--t-max", "0.5", "--n-seeds", "2", "--seed", "7", "--no-plots"]
    assert run(tmp_path / "a", *args) == 0 and run(tmp_path / "b", *args, "--workers", "2") == 0
    for name in ("langevin.csv", "langevin_seed7.csv", "langevin_seed8.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert not list((tmp_path / "a").glob("*.png"))


def test_config_file_and_flag_precedence(tmp_path) -> None:
    cfg = tmp_path / "run.ini"
    cfg.write_text("[run]\nseed = 5\nformat = json\n\n[phase-diagram]\ngamma = 0.5,1.5\neta = 2\n")
    out = tmp_path / "out"
    assert cli.main([*PD[:1], "--config", str(cfg), "--eta", "1,3", "--output-dir", str(out), "--no-plots"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["params"]["gamma"] == [0.5, 1.5]
    assert man["params"]["eta"] == [1.0, 3.0]
    assert man["seed"] == 5 and man["format"] == "json"
    assert len(json.loads((out / "phase-diagram.json").read_text())) == 4


@pytest.mark.parametrize(
    "text, needle",
    [
        ("[phase-diagram]\ngamma = 1\nbogus = 3\n", ":3: unknown key 'bogus'"),
        ("[run]\nseed = x\n", ":2: bad value for 'seed'"),
        ("[phase-diagram]\n\neta = 1:2\n", ":3: bad value for 'eta'"),
        ("[nonsense]\na = 1\n", ":1: unknown section"),
        ("gamma = 1\n", "no section headers"),
    ],
)
def test_config_errors_have_line_diagnostics(tmp_path, capsys, text, needle) -> None:
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    assert run(tmp_path, *PD, "--config", str(cfg)) == 2
    assert needle in capsys.readouterr().err


def test_other_command_sections_are_ignored(tmp_path) -> None:
    cfg = tmp_path / "multi.ini"
    cfg.write_text("[dmft]\nnu = 0.5\n\n[phase-diagram]\neta = 1\n")
    assert run(tmp_path, *PD[:3], "--config", str(cfg), "--no-plots") == 0


def test_output_dir_from_environment(tmp_path, monkeypatch) -> None:
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main([*PD, "--no-plots"]) == 0
    assert (tmp_path / "env" / "phase-diagram.csv").exists()


def test_argument_and_domain_errors_exit_2(tmp_path, capsys) -> None:
    assert run(tmp_path, "phase-diagram", "--gamma", "1:2") == 2
    assert run(tmp_path, "phase-diagram", "--gamma", "-1", "--eta", "1") == 2
    assert "DomainError" in capsys.readouterr().err
    assert run(tmp_path, "dmft", "--dt", "2.0", "--t-max", "4") == 2
    assert run(tmp_path, "phase-diagram", "--k", "3") == 2
    assert cli.main(["no-such-command"]) == 2


def test_error_classes_map_to_exit_codes() -> None:
    assert cli.exit_code_for(StepTooLarge("x")) == 2
    assert cli.exit_code_for(NonConvergence("x")) == 3
    assert cli.exit_code_for(StabilityViolation("x")) == 3


def test_numerical_failure_exits_3(tmp_path, monkeypatch) -> None:
    def boom(p, ctx):
        raise NonConvergence("corrector stalled")

    name = "dynamics-kl"
    monkeypatch.setitem(cli.COMMANDS, name, (boom, *cli.COMMANDS[name][1:]))
    assert run(tmp_path, name) == 3


def test_validate_exit_status(tmp_path, monkeypatch, capsys) -> None:
    fake = {
        1: lambda: CriterionResult(1, "always", True, "ok", 0.0),
        2: lambda: CriterionResult(2, "never", False, "broken", 0.0),
    }
    monkeypatch.setattr(validation, "CRITERIA", fake)
    assert run(tmp_path, "validate", "--criteria", "1") == 0
    assert run(tmp_path, "validate", "--criteria", "1,2") == 4
    out = capsys.readouterr().out
    assert "[PASS]  1 always" in out and "[FAIL]  2 never" in out
    assert run(tmp_path, "validate", "--criteria", "9") == 2


def test_tempered_json_is_nested(tmp_path) -> None:
    assert run(tmp_path, "tempered", "--omega", "2.2", "--gamma", "0.1,0.3,1", "--format", "json") == 0
    doc = json.loads((tmp_path / "tempered.json").read_text())
    assert [d["reverse"]["label"] for d in doc] == ["Warm", "Cold", "MAP"]
    assert doc[2]["reverse"]["eta_opt"] == "Infinity"


def test_double_descent_marks_minima(tmp_path) -> None:
    assert run(tmp_path, "double-descent", "--eta", "1,3", "--gamma", "0.02:3:120") == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["summary"]["eta_dd"] == pytest.approx(1.342, abs=5e-4)
    assert len(man["summary"]["local_minima"]["3"]) == 1
    assert man["summary"]["local_minima"]["1"] == []


def test_dmft_and_dynamics_commands(tmp_path) -> None:
    assert run(tmp_path / "d", "dmft", "--t-max", "2", "--checkpoint", "ck.bin", "--no-plots") == 0
    rows = (tmp_path / "d" / "dmft.csv").read_text().splitlines()
    assert rows[0] == "t,s_1,s_2,kappa,Q_t0,R_t0"
    assert (tmp_path / "d" / "ck.bin").exists()
    assert run(tmp_path / "k", "dynamics-kl", "--t-max", "2") == 0
    man = json.loads((tmp_path / "k" / "manifest.json").read_text())
    assert man["summary"]["early_stopping_time"] == pytest.approx(5 * np.log(2), abs=1e-9)


def test_help_documents_csv_schema(capsys) -> None:
    for name in cli.COMMANDS:
        assert cli.main([name, "--help"]) == 0
        assert "CSV columns" in capsys.readouterr().out


def test_config_hash_tracks_inputs() -> None:
    p = {"gamma": [0.1, 0.2]}
    h = cli.config_hash("kl-sweep", p, 0, "csv")
    assert h == cli.config_hash("kl-sweep", {"gamma": (0.1, 0.2)}, 0, "csv")
    assert h != cli.config_hash("kl-sweep", p, 1, "csv")
    assert h != cli.config_hash("kl-sweep", {"gamma": [0.1, 0.3]}, 0, "csv")
