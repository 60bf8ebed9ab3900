"""Minimal standalone SVG line and bar charts with deterministic output."""
from dataclasses import dataclass
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 170, 40, 60
PLOT_W = WIDTH - LEFT - RIGHT
PLOT_H = HEIGHT - TOP - BOTTOM
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


@dataclass
class Series:
    name: str
    xs: list
    ys: list


def _fmt(v):
    return f"{v:.2f}"


def _range(values):
    lo, hi = min(values), max(values)
    if lo == hi:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    return lo, hi


class Axes:
    """Maps data coordinates to pixels inside the plot area."""

    def __init__(self, xlim, ylim):
        self.xlim, self.ylim = xlim, ylim

    def px(self, x):
        lo, hi = self.xlim
        return LEFT + (x - lo) / (hi - lo) * PLOT_W

    def py(self, y):
        lo, hi = self.ylim
        return TOP + PLOT_H - (y - lo) / (hi - lo) * PLOT_H


def _axes_svg(ax, title, xlabel, ylabel, xticks, n_yticks=5):
    out = [
        f'<rect x="{LEFT}" y="{TOP}" width="{PLOT_W}" height="{PLOT_H}" fill="none" stroke="#000"/>',
        f'<text x="{WIDTH / 2:.2f}" y="{TOP / 2 + 5:.2f}" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<text x="{LEFT + PLOT_W / 2:.2f}" y="{HEIGHT - 15}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>',
        f'<text x="18" y="{TOP + PLOT_H / 2:.2f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 18 {TOP + PLOT_H / 2:.2f})">{escape(ylabel)}</text>',
    ]
    lo, hi = ax.ylim
    for i in range(n_yticks + 1):
        v = lo + (hi - lo) * i / n_yticks
        y = ax.py(v)
        out.append(f'<line x1="{LEFT - 4}" y1="{_fmt(y)}" x2="{LEFT}" y2="{_fmt(y)}" stroke="#000"/>')
        out.append(f'<text x="{LEFT - 7}" y="{_fmt(y + 4)}" text-anchor="end" font-size="11">{v:.3g}</text>')
    for x, label in xticks:
        px = ax.px(x)
        out.append(f'<line x1="{_fmt(px)}" y1="{TOP + PLOT_H}" x2="{_fmt(px)}" y2="{TOP + PLOT_H + 4}" stroke="#000"/>')
        out.append(f'<text x="{_fmt(px)}" y="{TOP + PLOT_H + 18}" text-anchor="middle" font-size="11">{escape(str(label))}</text>')
    return out


def _legend_svg(names):
    out = []
    for i, name in enumerate(names):
        y = TOP + 10 + 20 * i
        x = LEFT + PLOT_W + 15
        color = COLORS[i % len(COLORS)]
        out.append(f'<rect x="{x}" y="{y}" width="12" height="12" fill="{color}"/>')
        out.append(f'<text x="{x + 18}" y="{y + 11}" font-size="12">{escape(name)}</text>')
    return out


def render_svg(series, kind, title="", xlabel="", ylabel="", xticks=None, ylim=None):
    """SVG text for ``series``.

    ``line``: xs are numbers; ``xticks`` is an optional list of (x, label).
    ``bar``: xs are category labels shared by all series, drawn as groups.
    """
    if not series or not any(len(s.ys) for s in series):
        raise ValueError("nothing to plot")
    if kind not in ("line", "bar"):
        raise ValueError(f"unknown plot kind {kind!r}")
    ys = [y for s in series for y in s.ys]
    if kind == "bar":
        ylim = ylim or _range([0.0, *ys])
        categories = list(dict.fromkeys(x for s in series for x in s.xs))
        ax = Axes((-0.5, len(categories) - 0.5), ylim)
        ticks = [(i, c) for i, c in enumerate(categories)]
    else:
        ylim = ylim or _range(ys)
        ax = Axes(_range([x for s in series for x in s.xs]), ylim)
        ticks = xticks if xticks is not None else [(x, f"{x:g}") for x in sorted({x for s in series for x in s.xs})]
    body = _axes_svg(ax, title, xlabel, ylabel, ticks)
    if kind == "bar":
        group = 0.8
        width = group / len(series)
        for j, s in enumerate(series):
            color = COLORS[j % len(COLORS)]
            for x, y in zip(s.xs, s.ys):
                i = categories.index(x)
                left = ax.px(i - group / 2 + j * width)
                right = ax.px(i - group / 2 + (j + 1) * width)
                top, base = ax.py(max(y, ylim[0])), ax.py(max(ylim[0], 0.0))
                body.append(f'<rect x="{_fmt(left)}" y="{_fmt(min(top, base))}" width="{_fmt(right - left)}" '
                            f'height="{_fmt(abs(base - top))}" fill="{color}"/>')
    else:
        for j, s in enumerate(series):
            color = COLORS[j % len(COLORS)]
            pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in zip(s.xs, s.ys))
            body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
            for x, y in zip(s.xs, s.ys):
                body.append(f'<circle cx="{_fmt(ax.px(x))}" cy="{_fmt(ax.py(y))}" r="3" fill="{color}"/>')
    body += _legend_svg([s.name for s in series])
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="#fff"/>', *body, "</svg>", ""])


def emit_svg_plot(series, kind, path, **kwargs):
    text = render_svg(series, kind, **kwargs)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path
