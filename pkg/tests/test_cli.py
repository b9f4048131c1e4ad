import json

import pytest

from stowsim.cli import EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, main
from stowsim.errors import InvalidAffordance
from stowsim import sim as simmod


def test_run_writes_report_and_log(tmp_path, capsys):
    assert main(["run", "--seed", "1", "--pods", "3", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["pods"] == 3 and rep["valid"]
    assert (tmp_path / "attempts.csv").read_text().startswith("attempt_id,")
    assert json.loads(capsys.readouterr().out)["seed"] == 1


def test_run_set_override(capsys):
    assert main(["run", "--seed", "1", "--pods", "1", "--set", "timing.kickout_s=9"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["charge_seconds"] in (9.0, 12.0)


def test_run_bad_config_is_usage_error(capsys):
    assert main(["run", "--pods", "1", "--set", "planner.epsilon=0.5"]) == EXIT_USAGE
    assert "config error" in capsys.readouterr().err


def test_run_invariant_violation_exit_code(monkeypatch, capsys):
    def boom(*a, **k):
        raise InvalidAffordance("stale")

    monkeypatch.setattr(simmod, "execute", boom)
    assert main(["run", "--seed", "0", "--pods", "2"]) == EXIT_INVARIANT
    assert "run aborted" in capsys.readouterr().err


def test_fit_score_and_learned_run(tmp_path, capsys):
    assert main(["run", "--seed", "2", "--pods", "40", "--set", "planner.epsilon=0.05",
                 "--out", str(tmp_path)]) == EXIT_OK
    log = str(tmp_path / "attempts.csv")
    model = str(tmp_path / "m.json")
    assert main(["fit-risk", log, "-o", model]) == EXIT_OK
    capsys.readouterr()
    assert main(["score-log", model, log]) == EXIT_OK
    s = json.loads(capsys.readouterr().out)
    assert s["brier"] <= s["brier_constant"]
    assert main(["run", "--planner", "learned", "--model", model, "--pods", "2"]) == EXIT_OK


def test_fit_risk_on_missing_file(tmp_path):
    assert main(["fit-risk", str(tmp_path / "none.csv"), "-o", str(tmp_path / "m.json")]) == EXIT_USAGE


def test_ab_small(tmp_path, capsys):
    assert main(["ab", "--planner-b", "frequentist", "--pods-a", "4", "--pods-b", "4",
                 "--out", str(tmp_path)]) == EXIT_OK
    r = json.loads((tmp_path / "ab.json").read_text())
    assert r["n_A"] == 4 and 0 <= r["p_value"] <= 1


def test_ab_too_few_pods_is_invariant_error():
    assert main(["ab", "--pods-a", "1", "--pods-b", "1"]) == EXIT_INVARIANT


def test_dump_masks(tmp_path, capsys):
    assert main(["dump-masks", "--pod", "0", "--out", str(tmp_path)]) == EXIT_OK
    files = sorted(p.name for p in tmp_path.iterdir())
    assert any(f.endswith(".items.pgm") for f in files)
    assert any(f.endswith(".plank_insert.txt") for f in files)
    assert main(["dump-masks", "--pod", "1"]) == EXIT_OK
    assert "cat1=" in capsys.readouterr().out


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])
