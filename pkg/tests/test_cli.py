import json
import shutil
from pathlib import Path

import pytest

from nlsinverse.cli import (
    ManifestError,
    dump_manifest,
    load_manifest,
    main,
    render_summary,
    resolve_threads,
    run_manifest,
    validate_manifest,
)
from nlsinverse.records import read_table

MANIFESTS = Path(__file__).resolve().parents[1] / "manifests"


def _copy(tmp_path, name, edit=None):
    data = json.loads((MANIFESTS / f"{name}.json").read_text())
    if edit is not None:
        edit(data)
    path = tmp_path / f"{name}.json"
    path.write_text(dump_manifest(data))
    return path


def test_minimal_solve_writes_trajectory_and_log(tmp_path):
    path = _copy(tmp_path, "solve_minimal")
    out = tmp_path / "out"
    assert main(["solve", "--manifest", str(path), "--out", str(out)]) == 0
    assert (out / "trajectory.csv").exists() and (out / "run.log").exists()
    assert not (out / "FAILED").exists()
    log = (out / "run.log").read_text()
    assert "numpy" in log and "wall time" in log
    summary = (out / "summary.txt").read_text().splitlines()
    assert summary[:2] == ["subcommand: solve", "status: pass"]


def test_every_csv_starts_with_schema_line(tmp_path):
    path = _copy(tmp_path, "solve_minimal")
    run_manifest("solve", path, tmp_path / "o")
    csvs = sorted((tmp_path / "o").glob("*.csv"))
    assert len(csvs) == 2
    for p in csvs:
        first = p.read_text().splitlines()[0]
        assert first.startswith("# schema=") and first.endswith(" v1")


def test_unknown_generator_names_the_key(tmp_path, capsys):
    def edit(m):
        m["coefficients"]["q"]["generator"] = "wave"

    path = _copy(tmp_path, "solve_minimal", edit)
    out = tmp_path / "out"
    assert run_manifest("solve", path, out) == 2
    log = (out / "run.log").read_text()
    assert "$.coefficients.q.generator" in log and "'wave'" in log
    assert (out / "FAILED").exists()
    assert "$.coefficients.q.generator" in capsys.readouterr().err


def test_validation_lists_every_problem():
    manifest = json.loads((MANIFESTS / "solve_minimal.json").read_text())
    manifest["domain"]["points"] = "many"
    manifest["solver"]["tolerance"] = 1e-9
    manifest["data"]["generator"] = "nope"
    with pytest.raises(ManifestError) as info:
        validate_manifest(manifest, "solve")
    keys = {k for k, _ in info.value.problems}
    assert keys == {"$.domain.points", "$.solver.tolerance", "$.data.generator"}


def test_subcommand_must_match_operation(tmp_path):
    path = _copy(tmp_path, "solve_minimal")
    assert run_manifest("linearize", path, tmp_path / "o") == 2


def test_empty_ladder_gives_header_only_table(tmp_path):
    def edit(m):
        m["experiment"]["params"]["eps_ladder"] = []

    path = _copy(tmp_path, "linearize", edit)
    out = tmp_path / "out"
    assert run_manifest("linearize", path, out) == 0
    schema, meta, cols, rows = read_table(out / "convergence.csv")
    assert schema == "convergence" and cols == ["epsilon", "error", "fitted_order"] and rows == []
    assert "WARNING" in (out / "run.log").read_text() and "empty epsilon ladder" in (out / "run.log").read_text()


def test_runtime_failure_leaves_marker_and_summary(tmp_path):
    def edit(m):
        m["coefficients"]["q"] = {"generator": "constant", "params": {"value": 1.0}}
        m["experiment"]["params"] = {"amplitude": 1e4}
        m["solver"]["picard_max_iter"] = 5

    path = _copy(tmp_path, "solve_minimal", edit)
    out = tmp_path / "out"
    assert run_manifest("solve", path, out) == 3
    assert (out / "FAILED").read_text().startswith("runtime error")
    assert (out / "summary.txt").read_text().splitlines()[0].startswith("FAILED: ")


def test_failed_summary_puts_marker_first():
    text = render_summary("solve", {"checks": {"a": True}, "constants": {"C": 1.5}}, failed="boom")
    lines = text.splitlines()
    assert lines[0] == "FAILED: boom"
    assert "status: error" in lines and "constant C: 1.5" in lines


def test_stability_table_has_one_row_per_member(tmp_path):
    path = _copy(tmp_path, "recover_q")
    out = tmp_path / "out"
    assert run_manifest("recover-q", path, out) == 0
    schema, meta, cols, rows = read_table(out / "stability.csv")
    assert schema == "stability"
    assert cols == ["member_id", "pert_norm", "delta", "ratio", "pass"]
    assert len(rows) == 5


def test_manifest_round_trip_is_byte_identical(tmp_path):
    for src in sorted(MANIFESTS.glob("*.json")):
        text = src.read_text()
        assert dump_manifest(json.loads(text)) == text
        copy = tmp_path / src.name
        copy.write_text(dump_manifest(load_manifest(src)))
        assert copy.read_bytes() == src.read_bytes()


def test_rerun_gives_identical_csvs(tmp_path):
    path = _copy(tmp_path, "solve_minimal")
    run_manifest("solve", path, tmp_path / "a")
    run_manifest("solve", path, tmp_path / "b", threads=2)
    for p in sorted((tmp_path / "a").glob("*.csv")):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()
    assert (tmp_path / "a" / "summary.txt").read_bytes() == (tmp_path / "b" / "summary.txt").read_bytes()


def test_thread_precedence(monkeypatch):
    monkeypatch.delenv("NLSINVERSE_THREADS", raising=False)
    assert resolve_threads() == 1
    monkeypatch.setenv("NLSINVERSE_THREADS", "3")
    assert resolve_threads() == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("NLSINVERSE_THREADS", "x")
    with pytest.raises(ManifestError):
        resolve_threads()
    with pytest.raises(ManifestError):
        resolve_threads(0)


def test_missing_manifest_is_validation_error(tmp_path):
    assert run_manifest("solve", tmp_path / "absent.json", tmp_path / "o") == 2


def test_console_entry_point_is_installed():
    assert shutil.which("nlsinverse") is not None
