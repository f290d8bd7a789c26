import pytest

from gradnorm import svg


def test_chart_structure():
    doc = svg.line_chart([("a", [0, 1, 2], [1.0, 2.0, 3.0]), ("b & c", [0, 1, 2], [3.0, 2.0, 1.0])],
                         title="t", xlabel="step", ylabel="y")
    assert doc.startswith("<?xml") and doc.rstrip().endswith("</svg>")
    assert doc.count("<path") == 2
    assert "b &amp; c" in doc


def test_deterministic():
    series = [("x", [0, 10, 20], [0.1, 0.05, 0.02])]
    assert svg.line_chart(series, logy=True) == svg.line_chart(series, logy=True)


def test_flat_series_is_horizontal():
    doc = svg.line_chart([("w", [0, 100, 200], [1.0, 1.0, 1.0])])
    d = doc.split('<path d="')[1].split('"')[0]
    assert len({p.split(",")[1] for p in d.replace("M", "").split(" L")}) == 1


def test_rejects_empty_and_ragged():
    with pytest.raises(ValueError):
        svg.line_chart([])
    with pytest.raises(ValueError):
        svg.line_chart([("a", [], [])])
    with pytest.raises(ValueError):
        svg.line_chart([("a", [1, 2], [1.0])])
    with pytest.raises(ValueError):
        svg.line_chart([("a", [1], [float("nan")])])


def test_log_axis_drops_nonpositive():
    doc = svg.line_chart([("a", [0, 1, 2], [0.0, 1.0, 10.0])], logy=True)
    d = doc.split('<path d="')[1].split('"')[0]
    assert d.count("L") == 1
