"""Static SVG rendering of sweep reports.

One polyline per metric series on a shared [0, 1]-style chart. The point
is a quick visual check of the trade-off curves, nothing more; anything
interactive belongs to the web UI.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN_LEFT, MARGIN_RIGHT = 60, 20
MARGIN_TOP, MARGIN_BOTTOM = 24, 60

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#17becf", "#e377c2"]


def _series_from_rows(attributes: list[str], rows: list[dict]) -> dict[str, list]:
    """Metric name -> list of (omega, value), skipping missing values.

    A single-attribute report yields one line per metric over omega. A
    two-attribute report collapses to the task metric, one line per value
    of the second attribute, over the first.
    """
    out: dict[str, list] = {}

    def push(name, x, value):
        if value is not None:
            out.setdefault(name, []).append((x, float(value)))

    if len(attributes) == 1:
        for row in rows:
            x = float(row["omega"])
            push("task", x, row.get("task"))
            for key in ("probe_mean", "uncertainty", "flip_retention",
                        "mrr10", "nfairr10"):
                value = row.get(key)
                if isinstance(value, dict):
                    for attr, v in sorted(value.items()):
                        push(f"{key}[{attr}]", x, v)
                else:
                    push(key, x, value)
    elif len(attributes) == 2:
        first, second = attributes
        for row in rows:
            omega = row["omega"]
            push(f"task [{second}={omega[second]:g}]", float(omega[first]),
                 row.get("task"))
    else:
        raise ValueError("can only render reports over one or two attributes")
    return {name: sorted(points) for name, points in out.items() if points}


def render_sweep_svg(report: dict) -> str:
    """Render a sweep report dict (the JSON artifact shape) into SVG text."""
    for key in ("attributes", "grid", "rows"):
        if key not in report:
            raise ValueError(f"sweep report is missing {key!r}")
    rows = report["rows"]
    if not rows:
        raise ValueError("sweep report has no rows")
    series = _series_from_rows(report["attributes"], rows)
    xs = [x for points in series.values() for x, _ in points]
    ys = [y for points in series.values() for _, y in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(1.0, max(ys))
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def sx(x):
        return MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
             f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
             f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    # axes and horizontal grid lines
    for i in range(5):
        y_val = y_lo + (y_hi - y_lo) * i / 4
        y_px = sy(y_val)
        parts.append(f'<line x1="{MARGIN_LEFT}" y1="{y_px:.1f}" '
                     f'x2="{WIDTH - MARGIN_RIGHT}" y2="{y_px:.1f}" '
                     'stroke="#ddd" stroke-width="1"/>')
        parts.append(f'<text x="{MARGIN_LEFT - 8}" y="{y_px + 4:.1f}" '
                     'font-size="11" text-anchor="end" fill="#444" '
                     f'font-family="sans-serif">{y_val:.2f}</text>')
    for x_val in sorted({x for x, _ in next(iter(series.values()))}):
        x_px = sx(x_val)
        parts.append(f'<line x1="{x_px:.1f}" y1="{MARGIN_TOP}" '
                     f'x2="{x_px:.1f}" y2="{HEIGHT - MARGIN_BOTTOM}" '
                     'stroke="#eee" stroke-width="1"/>')
        parts.append(f'<text x="{x_px:.1f}" y="{HEIGHT - MARGIN_BOTTOM + 16}" '
                     'font-size="11" text-anchor="middle" fill="#444" '
                     f'font-family="sans-serif">{x_val:g}</text>')
    axis = (f'<line x1="{MARGIN_LEFT}" y1="{HEIGHT - MARGIN_BOTTOM}" '
            f'x2="{WIDTH - MARGIN_RIGHT}" y2="{HEIGHT - MARGIN_BOTTOM}" '
            'stroke="#000" stroke-width="1"/>'
            f'<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" '
            f'y2="{HEIGHT - MARGIN_BOTTOM}" stroke="#000" stroke-width="1"/>')
    parts.append(axis)
    parts.append(f'<text x="{(MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2}" '
                 f'y="{HEIGHT - MARGIN_BOTTOM + 34}" font-size="12" '
                 'text-anchor="middle" fill="#000" font-family="sans-serif">'
                 'gate strength &#969;</text>')
    # one polyline per series plus a legend entry
    legend_x = MARGIN_LEFT + 8
    legend_y = HEIGHT - 14
    for i, (name, points) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in points)
        parts.append(f'<polyline points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="2"/>')
        for x, y in points:
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="2.5" '
                         f'fill="{color}"/>')
        parts.append(f'<rect x="{legend_x}" y="{legend_y - 9}" width="10" '
                     f'height="10" fill="{color}"/>')
        parts.append(f'<text x="{legend_x + 14}" y="{legend_y}" font-size="11" '
                     f'fill="#000" font-family="sans-serif">{escape(name)}</text>')
        legend_x += 18 + 7 * len(name)
    parts.append("</svg>")
    return "\n".join(parts)
