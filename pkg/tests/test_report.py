"""SVG rendering of sweep artifacts."""

import pytest

from congater.report import _series_from_rows, render_sweep_svg


def single_report():
    rows = [
        {"omega": 0.0, "task": 0.9, "probe_mean": 0.8, "probe_std": 0.01,
         "uncertainty": 0.2, "flip_retention": 1.0, "mrr10": None,
         "nfairr10": None},
        {"omega": 1.0, "task": 0.88, "probe_mean": 0.6, "probe_std": 0.02,
         "uncertainty": 0.4, "flip_retention": 0.9, "mrr10": None,
         "nfairr10": None},
    ]
    return {"attributes": ["gender"], "grid": [0.0, 1.0], "rows": rows}


def test_single_attribute_series():
    report = single_report()
    series = _series_from_rows(report["attributes"], report["rows"])
    assert set(series) == {"task", "probe_mean", "uncertainty",
                           "flip_retention"}
    assert series["task"] == [(0.0, 0.9), (1.0, 0.88)]


def test_none_values_are_skipped():
    report = single_report()
    report["rows"][1]["task"] = None
    series = _series_from_rows(report["attributes"], report["rows"])
    assert series["task"] == [(0.0, 0.9)]


def test_two_attribute_series_one_line_per_second_value():
    rows = [
        {"omega": {"a": x, "b": y}, "task": 0.5 + 0.1 * x - 0.05 * y}
        for x in (0.0, 1.0) for y in (0.0, 1.0)
    ]
    series = _series_from_rows(["a", "b"], rows)
    assert set(series) == {"task [b=0]", "task [b=1]"}
    assert series["task [b=0]"] == [(0.0, 0.5), (1.0, 0.6)]


def test_three_attributes_rejected():
    rows = [{"omega": {"a": 0.0, "b": 0.0, "c": 0.0}, "task": 0.5}]
    with pytest.raises(ValueError, match="one or two"):
        _series_from_rows(["a", "b", "c"], rows)


def test_svg_structure():
    svg = render_sweep_svg(single_report())
    assert svg.startswith("<svg ")
    assert svg.rstrip().endswith("</svg>")
    assert svg.count("<polyline") == 4
    assert "task" in svg and "probe_mean" in svg


def test_missing_keys_rejected():
    with pytest.raises(ValueError, match="rows"):
        render_sweep_svg({"attributes": ["g"], "grid": [0.0]})


def test_dict_probe_mean_becomes_per_attribute_series():
    rows = [{"omega": 0.0, "task": 0.9,
             "probe_mean": {"a": 0.7, "b": 0.8}, "uncertainty": None,
             "flip_retention": None, "mrr10": None, "nfairr10": None}]
    series = _series_from_rows(["gender"], rows)
    assert "probe_mean[a]" in series and "probe_mean[b]" in series
