"""Plan-view trajectory plots.

`render_svg` writes a dependency-free SVG whose structure (one ``<polyline>``
per trajectory) is stable enough to test on element counts. The matplotlib
helpers render the same picture as a raster figure for reports.
"""

from __future__ import annotations

import colorsys
import csv
import io
import math
import re
from pathlib import Path as FsPath
from typing import Sequence
from xml.sax.saxutils import escape

from .engine import TRACE_HEADER
from .track import Path

PATH_COLOR = "#9a9a9a"


class TraceFormatError(ValueError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


def read_trace_csv(text: str) -> dict[int, list[tuple[float, float]]]:
    """Per-vehicle (x, y) sequences from a trace export. Row 1 is the header."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError(1, "empty trace file") from None
    if ",".join(header) != TRACE_HEADER:
        raise TraceFormatError(1, "unexpected header")
    ix, iy, iv = header.index("x"), header.index("y"), header.index("vehicle")
    out: dict[int, list[tuple[float, float]]] = {}
    for rowno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise TraceFormatError(rowno, f"expected {len(header)} fields, got {len(row)}")
        try:
            vid = int(row[iv])
            x, y = float(row[ix]), float(row[iy])
        except ValueError as exc:
            raise TraceFormatError(rowno, str(exc)) from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise TraceFormatError(rowno, "non-finite coordinate")
        out.setdefault(vid, []).append((x, y))
    if not out:
        raise TraceFormatError(2, "trace has no data rows")
    return out


_RATE_DIR = re.compile(r"rate_(\d+(?:\.\d+)?)")


def label_for(trace_file: str) -> str:
    """Legend label: the drop rate when the file sits in a ``rate_X`` directory."""
    m = _RATE_DIR.search(str(FsPath(trace_file).parent.name))
    if m:
        return f"drop {float(m.group(1)) * 100:.0f} %"
    return FsPath(trace_file).parent.name or FsPath(trace_file).stem


def _palette(n_runs: int, n_vehicles: int) -> list[list[str]]:
    colors = []
    for r in range(n_runs):
        hue = r / max(n_runs, 1)
        row = []
        for v in range(n_vehicles):
            light = 0.35 + 0.3 * (v / max(n_vehicles - 1, 1))
            red, green, blue = colorsys.hls_to_rgb(hue, light, 0.85)
            row.append(f"#{int(red * 255):02x}{int(green * 255):02x}{int(blue * 255):02x}")
        colors.append(row)
    return colors


def render_svg(path: Path, runs: Sequence[tuple[str, dict[int, list[tuple[float, float]]]]],
               px_per_m: float = 60.0, margin: float = 0.6) -> str:
    xs = list(path.x) + [x for _, tr in runs for pts in tr.values() for x, _ in pts]
    ys = list(path.y) + [y for _, tr in runs for pts in tr.values() for _, y in pts]
    xmin, xmax = math.floor(min(xs) - margin), math.ceil(max(xs) + margin)
    ymin, ymax = math.floor(min(ys) - margin), math.ceil(max(ys) + margin)
    pad = 40.0   # room for tick labels, px
    legend_w = 150.0
    width = (xmax - xmin) * px_per_m + 2 * pad + legend_w
    height = (ymax - ymin) * px_per_m + 2 * pad

    def sx(x):
        return pad + (x - xmin) * px_per_m

    def sy(y):
        return pad + (ymax - y) * px_per_m

    def points(pts):
        return " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
           f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif" font-size="11">',
           '<rect x="0" y="0" width="100%" height="100%" fill="white"/>']

    # axes frame with 1 m ticks
    out.append(f'<rect x="{sx(xmin):.2f}" y="{sy(ymax):.2f}" width="{(xmax - xmin) * px_per_m:.2f}" '
               f'height="{(ymax - ymin) * px_per_m:.2f}" fill="none" stroke="black" stroke-width="1"/>')
    for xt in range(xmin, xmax + 1):
        out.append(f'<line x1="{sx(xt):.2f}" y1="{sy(ymin):.2f}" x2="{sx(xt):.2f}" y2="{sy(ymin) + 4:.2f}" stroke="black"/>')
        out.append(f'<text x="{sx(xt):.2f}" y="{sy(ymin) + 16:.2f}" text-anchor="middle">{xt}</text>')
    for yt in range(ymin, ymax + 1):
        out.append(f'<line x1="{sx(xmin) - 4:.2f}" y1="{sy(yt):.2f}" x2="{sx(xmin):.2f}" y2="{sy(yt):.2f}" stroke="black"/>')
        out.append(f'<text x="{sx(xmin) - 7:.2f}" y="{sy(yt) + 4:.2f}" text-anchor="end">{yt}</text>')
    out.append(f'<text x="{sx((xmin + xmax) / 2):.2f}" y="{height - 6:.2f}" text-anchor="middle">x [m]</text>')
    out.append(f'<text x="12" y="{sy((ymin + ymax) / 2):.2f}" text-anchor="middle" '
               f'transform="rotate(-90 12 {sy((ymin + ymax) / 2):.2f})">y [m]</text>')

    ref = list(zip(path.x, path.y))
    if path.closed:
        ref.append(ref[0])
    out.append(f'<polyline class="reference" points="{points(ref)}" fill="none" stroke="{PATH_COLOR}" '
               f'stroke-width="6" stroke-opacity="0.5"/>')

    n_vehicles = max((len(tr) for _, tr in runs), default=1)
    colors = _palette(len(runs), n_vehicles)
    for r, (label, traces) in enumerate(runs):
        for v, vid in enumerate(sorted(traces)):
            out.append(f'<polyline class="trajectory" data-run="{escape(label)}" data-vehicle="{vid}" '
                       f'points="{points(traces[vid])}" fill="none" stroke="{colors[r][v]}" stroke-width="1.5"/>')

    lx = sx(xmax) + 15
    for r, (label, traces) in enumerate(runs):
        ly = pad + 10 + 18 * r
        out.append(f'<g class="legend-entry"><rect x="{lx:.2f}" y="{ly - 8:.2f}" width="14" height="8" '
                   f'fill="{colors[r][0]}"/><text x="{lx + 20:.2f}" y="{ly:.2f}">{escape(label)}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_runs_png(path: Path, runs: Sequence[tuple[str, dict[int, list[tuple[float, float]]]]], out_file):
    """Raster plan view of one or more runs, one panel per run."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = max(len(runs), 1)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.0), squeeze=False, sharey=True)
    ref_x = list(path.x) + ([path.x[0]] if path.closed else [])
    ref_y = list(path.y) + ([path.y[0]] if path.closed else [])
    for ax, (label, traces) in zip(axes[0], runs):
        ax.plot(ref_x, ref_y, color=PATH_COLOR, lw=4, alpha=0.5, label="reference")
        for vid in sorted(traces):
            xs, ys = zip(*traces[vid])
            ax.plot(xs, ys, lw=1.0, label=f"vehicle {vid}")
        ax.set_title(label, fontsize=10)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("y [m]")
    axes[0][-1].legend(fontsize=7, loc="center")
    fig.tight_layout()
    fig.savefig(out_file, dpi=150)
    plt.close(fig)
