import xml.etree.ElementTree as ET

import pytest

from drlood.expcli import plots
from drlood.expcli.plots import Axes, Series, emit_svg_plot, render_svg

NS = "{http://www.w3.org/2000/svg}"


def test_single_point_line_is_valid_svg():
    root = ET.fromstring(render_svg([Series("a", [1.0], [0.5])], "line", title="t"))
    assert root.tag == f"{NS}svg"
    assert root.findall(f"{NS}circle")
    assert any(t.text == "a" for t in root.iter(f"{NS}text"))


def test_output_is_deterministic(tmp_path):
    series = [Series("x", [0, 1, 2], [0.2, 0.4, 0.3]), Series("y", [0, 1, 2], [0.5, 0.1, 0.9])]
    emit_svg_plot(series, "line", tmp_path / "a.svg", title="same")
    emit_svg_plot(series, "line", tmp_path / "b.svg", title="same")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_line_coordinates_are_hand_scaled():
    svg = render_svg([Series("s", [0.0, 10.0], [0.0, 1.0])], "line")
    root = ET.fromstring(svg)
    pts = root.find(f"{NS}polyline").get("points").split()
    # x: 0 -> LEFT, 10 -> LEFT + PLOT_W; y: 0 -> bottom edge, 1 -> top edge
    assert pts[0] == f"{plots.LEFT:.2f},{plots.TOP + plots.PLOT_H:.2f}"
    assert pts[1] == f"{plots.LEFT + plots.PLOT_W:.2f},{plots.TOP:.2f}"
    ax = Axes((0.0, 10.0), (0.0, 1.0))
    assert ax.px(2.5) == pytest.approx(70 + 0.25 * 400)
    assert ax.py(0.5) == pytest.approx(40 + 150)


def test_bars_rise_from_zero():
    root = ET.fromstring(render_svg([Series("m", ["a", "b"], [1.0, 0.5])], "bar"))
    bars = [r for r in root.findall(f"{NS}rect") if r.get("fill") == plots.COLORS[0]][:2]
    heights = [float(b.get("height")) for b in bars]
    assert heights[0] == pytest.approx(plots.PLOT_H, abs=0.01)
    assert heights[1] == pytest.approx(plots.PLOT_H / 2, abs=0.01)


def test_errors(tmp_path):
    with pytest.raises(ValueError):
        render_svg([], "line")
    with pytest.raises(ValueError):
        render_svg([Series("a", [1], [1])], "pie")
    with pytest.raises(OSError):
        emit_svg_plot([Series("a", [1], [1])], "line", tmp_path / "missing" / "x.svg")
