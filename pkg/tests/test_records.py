import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsinverse.records import fmt, read_table, render_table, write_table


def test_cell_formats():
    assert fmt(True) == "true" and fmt(np.bool_(False)) == "false"
    assert fmt(3) == "3" and fmt(np.int64(-2)) == "-2"
    assert fmt(0.1) == "0.1"
    assert fmt(float("nan")) == "nan" and fmt(-np.inf) == "-inf"
    assert fmt(None) == "" and fmt("bump1") == "bump1"


@settings(max_examples=100, deadline=None)
@given(v=st.floats(allow_nan=False, allow_infinity=False))
def test_floats_round_trip_exactly(v):
    assert float(fmt(v)) == v


def test_table_layout_and_round_trip(tmp_path):
    rows = [[0.1, "a", 1], [2e-300, "b", 0]]
    path = write_table(tmp_path / "t.csv", "demo", ["x", "name", "flag"], rows, {"k": 2.5, "list": [1, 2.0]})
    text = path.read_text()
    assert text.splitlines()[0] == "# schema=demo v1"
    assert "# list=1;2.0" in text
    schema, meta, cols, got = read_table(path)
    assert schema == "demo" and meta == {"k": "2.5", "list": "1;2.0"}
    assert cols == ["x", "name", "flag"]
    assert [float(r[0]) for r in got] == [0.1, 2e-300]
    # rendering twice gives identical bytes
    assert render_table("demo", ["x", "name", "flag"], rows, {"k": 2.5, "list": [1, 2.0]}) == text


def test_header_only_table(tmp_path):
    path = write_table(tmp_path / "e.csv", "convergence", ["epsilon", "error", "fitted_order"], [])
    _, _, cols, rows = read_table(path)
    assert cols == ["epsilon", "error", "fitted_order"] and rows == []


def test_row_width_checked():
    with pytest.raises(ValueError, match="cells"):
        render_table("demo", ["a", "b"], [[1]])


def test_missing_schema_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="schema"):
        read_table(p)
