import math
import os

import pytest

from app.services.reports import (
    atomic_open,
    column,
    flatten_witness,
    format_value,
    parse_value,
    read_csv,
    render_csv,
    write_csv,
    write_svg,
)


def test_format_value_sentinels():
    assert format_value(math.inf) == "inf"
    assert format_value(-math.inf) == "-inf"
    assert format_value(math.nan) == "nan"
    assert format_value(None) == ""
    assert format_value(True) == "1"
    assert format_value(12) == "12"
    assert format_value(0.1) == "0.10000000000000001"


def test_parse_value_reads_back_extended_reals():
    assert parse_value("inf") == math.inf
    assert parse_value("-inf") == -math.inf
    assert parse_value(format_value(1 / 3)) == 1 / 3
    assert parse_value("") is None
    assert parse_value("const:0.4") == "const:0.4"


def test_render_csv_rejects_ragged_rows():
    with pytest.raises(ValueError):
        render_csv(["a", "b"], [[1.0]])


def test_write_and_read_csv(tmp_path):
    path = str(tmp_path / "sub" / "table.csv")
    write_csv(path, ["R", "value"], [[0.1, math.inf], [0.2, 0.5]])
    header, rows = read_csv(path)
    assert header == ["R", "value"]
    assert column(header, rows, "value") == [math.inf, 0.5]
    assert not [f for f in os.listdir(tmp_path / "sub") if f.startswith(".tmp-")]


def test_atomic_open_keeps_old_file_on_error(tmp_path):
    path = str(tmp_path / "out.csv")
    with open(path, "w") as f:
        f.write("old\n")
    with pytest.raises(RuntimeError):
        with atomic_open(path) as f:
            f.write("partial")
            raise RuntimeError("interrupted")
    with open(path) as f:
        assert f.read() == "old\n"
    assert os.listdir(tmp_path) == ["out.csv"]


def test_write_svg_handles_infinite_points(tmp_path):
    path = str(tmp_path / "chart.svg")
    write_svg(path, [0.1, 0.2, 0.3], {"a": [0.5, 3.0, math.inf], "b": [0.1, math.nan, 0.2]}, title="demo")
    with open(path) as f:
        text = f.read()
    assert "<svg" in text


def test_svg_output_is_reproducible(tmp_path):
    first, second = str(tmp_path / "a.svg"), str(tmp_path / "b.svg")
    for path in (first, second):
        write_svg(path, [0.1, 0.2], {"a": [0.3, 0.4]})
    with open(first) as f, open(second) as g:
        assert f.read() == g.read()


def test_flatten_witness():
    assert flatten_witness(None) == ""
    assert flatten_witness([[0.5, 0.25], [0.25, 0.0]]) == "0.5;0.25;0.25;0"
