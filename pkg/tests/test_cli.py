import json
from pathlib import Path

import pytest

from fluxsim.cli import build_parser, main, run_many, windows_csv
from fluxsim.core.dga import DgaSeed, generate_domains

TINY = {
    "master_seed": 4,
    "duration_ms": 1_200_000,
    "dga": {"alpha": 100, "beta": 10},
    "servers": {"count": 2},
    "bots": [{"count": 3, "jitter": {"min_ms": 5000, "max_ms": 20000}}],
    "command_schedule": [{"at_ms": 200_000, "kind": "GRAB_GPS_LOCATION"}],
}


def write_scenario(tmp_path, name, **overrides):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps({**TINY, **overrides}))
    return str(path)


def test_gen_domains_prints_the_list(capsys):
    assert main(["gen-domains", "--seed", "fluxsim", "--date", "2021-01-01", "--alpha", "20"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == list(generate_domains(DgaSeed.parse("fluxsim", "2021-01-01"), 20, ["com", "net", "org"]))


def test_gen_domains_to_file(tmp_path):
    out = tmp_path / "domains.txt"
    assert main(["gen-domains", "--seed", "s", "--date", "2021-01-01", "--alpha", "5", "--tlds", "io", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 5
    assert all(line.endswith(".io") for line in lines)


def test_windows_reference_table(capsys):
    assert main(["windows", "--alpha", "10000", "--beta", "100"]) == 0
    out = capsys.readouterr().out
    assert "49 KB" in out and "20 s" in out
    assert "2441 KB" in out and "1000 s" in out
    assert "beta,gamma" in out
    assert "100,100" in out


def test_windows_curve_csv(tmp_path):
    path = tmp_path / "curve.csv"
    assert main(["windows", "--alpha", "100", "--beta", "10", "--betas", "1,3,10", "--csv", str(path)]) == 0
    assert path.read_text() == "beta,gamma\n1,100\n10,10\n"


def test_windows_csv_helper():
    assert windows_csv(12, [4, 5]) == "beta,gamma\n4,3\n"


def test_bad_beta_is_a_config_error():
    assert main(["windows", "--alpha", "10000", "--beta", "3"]) == 2


def test_bad_scenario_exit_code(tmp_path, capsys):
    path = write_scenario(tmp_path, "bad", dga={"alpha": 10000, "beta": 3})
    assert main(["run", path, "--out", str(tmp_path / "out")]) == 2


def test_missing_scenario_exit_code(tmp_path):
    assert main(["run", str(tmp_path / "nope.json"), "--out", str(tmp_path / "out")]) == 2


def test_run_and_report(tmp_path, capsys):
    path = write_scenario(tmp_path, "tiny")
    out = tmp_path / "out"
    assert main(["run", path, "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("PASS tiny")
    before = (out / "report.csv").read_bytes()
    assert main(["report", str(out)]) == 0
    assert "hosts=3" in capsys.readouterr().out
    assert (out / "report.csv").read_bytes() == before


def test_failed_assertion_exit_code(tmp_path, capsys):
    path = write_scenario(tmp_path, "strict", assertions=[{"metric": "restores", "op": "above", "value": 0}])
    assert main(["run", path, "--out", str(tmp_path / "out")]) == 1
    assert capsys.readouterr().out.startswith("FAIL strict")


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FLUXSIM_SEED", "77")
    path = write_scenario(tmp_path, "tiny")
    out = tmp_path / "out"
    assert main(["run", path, "--out", str(out)]) == 0
    first = json.loads((out / "events.jsonl").read_text().splitlines()[0])
    assert first["scenario"]["master_seed"] == 77


def test_report_on_empty_directory(tmp_path):
    assert main(["report", str(tmp_path)]) == 2


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


@pytest.mark.asyncio
async def test_run_many_keeps_runs_separate(tmp_path):
    paths = [write_scenario(tmp_path, "one"), write_scenario(tmp_path, "two", master_seed=5)]
    results = await run_many(paths, tmp_path / "out", jobs=2)
    assert [r.name for r in results] == ["one", "two"]
    assert all(r.passed for r in results)
    assert (tmp_path / "out" / "one" / "events.jsonl").exists()
    assert (tmp_path / "out" / "two" / "events.jsonl").exists()


def test_parallel_runs_match_serial_runs(tmp_path):
    paths = [write_scenario(tmp_path, "one"), write_scenario(tmp_path, "two", master_seed=5)]
    assert main(["run", *paths, "--out", str(tmp_path / "serial")]) == 0
    assert main(["run", *paths, "--out", str(tmp_path / "parallel"), "--jobs", "2"]) == 0
    for name in ("one", "two"):
        serial = Path(tmp_path / "serial" / name / "events.jsonl").read_bytes()
        parallel = Path(tmp_path / "parallel" / name / "events.jsonl").read_bytes()
        assert serial == parallel
