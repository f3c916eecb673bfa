"""Aggregation over seeds, CSV persistence and plot-data emission."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass
class Series:
    """One seed's values at a grid of evaluation points."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise ValueError("x and y must have the same length")


@dataclass
class Summary:
    x: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n: int
    flags: list = field(default_factory=list)

    @property
    def single_seed(self) -> bool:
        return self.n == 1


def aggregate(runs: Sequence[Series]) -> Summary:
    """Per-point mean and standard error ``sd / sqrt(n)`` over independent seeds.

    A single seed gets standard error 0 and the ``single-seed`` flag.
    """
    if not runs:
        raise ValueError("need at least one run")
    x = runs[0].x
    for r in runs[1:]:
        if r.x.shape != x.shape or not np.array_equal(r.x, x):
            raise ValueError("runs have mismatched evaluation grids")
    ys = np.vstack([r.y for r in runs])
    n = len(runs)
    mean = ys.mean(axis=0)
    if n == 1:
        return Summary(x.copy(), mean, np.zeros_like(mean), 1, ["single-seed"])
    return Summary(x.copy(), mean, ys.std(axis=0, ddof=1) / math.sqrt(n), n)


def mean_stderr(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def separation(a, b) -> float:
    """``(mean(a) - mean(b)) / sqrt(se_a^2 + se_b^2)``; inf when both are exact."""
    ma, sa = mean_stderr(a)
    mb, sb = mean_stderr(b)
    se = math.hypot(sa, sb)
    if se == 0.0:
        return math.inf if ma > mb else (0.0 if ma == mb else -math.inf)
    return (ma - mb) / se


# ---------------------------------------------------------------------------
# CSV


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(fmt(x) for x in v)
    return str(v)


def write_csv(path, header: Sequence[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(h, "") for h in header]
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# plot data


def format_table(row_labels, col_labels, means, stderrs, corner: str = "", digits: int = 1) -> str:
    """Aligned text table whose cells read ``mean (stderr)``."""
    means = np.asarray(means, dtype=float)
    stderrs = np.asarray(stderrs, dtype=float)
    cells = [[f"{means[i, j]:.{digits}f} ({stderrs[i, j]:.{digits}f})" for j in range(len(col_labels))] for i in range(len(row_labels))]
    rows = [[corner] + [str(c) for c in col_labels]] + [[str(r)] + cells[i] for i, r in enumerate(row_labels)]
    widths = [max(len(row[k]) for row in rows) for k in range(len(rows[0]))]
    lines = ["  ".join(cell.rjust(widths[k]) for k, cell in enumerate(row)) for row in rows]
    return "\n".join(lines) + "\n"


def write_gnuplot(path, series: dict[str, Summary]) -> Path:
    """Whitespace-delimited blocks ``x mean stderr``, one block per series."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blocks = []
    for label, s in series.items():
        lines = [f"# {label}"]
        lines += [f"{fmt(float(a))} {fmt(float(b))} {fmt(float(c))}" for a, b, c in zip(s.x, s.mean, s.stderr)]
        blocks.append("\n".join(lines))
    path.write_text("\n\n\n".join(blocks) + ("\n" if blocks else ""))
    return path


_COLOURS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def render_svg(series: dict[str, Summary], title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Lines with one-standard-error bars; no external dependencies."""
    w, h = 520, 340
    left, right, top, bottom = 60, 120, 30, 45
    pts = [(x, m - e, m + e) for s in series.values() for x, m, e in zip(s.x, s.mean, s.stderr)]
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
    ]
    x0, x1 = left, w - right
    y0, y1 = h - bottom, top
    out.append(f'<polyline points="{x0},{y1} {x0},{y0} {x1},{y0}" fill="none" stroke="black"/>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{h - 10}" text-anchor="middle" font-size="11">{_esc(xlabel)}</text>')
    out.append(
        f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{_esc(ylabel)}</text>'
    )
    if pts:
        xs = [p[0] for p in pts]
        lo = min(p[1] for p in pts)
        hi = max(p[2] for p in pts)
        xlo, xhi = min(xs), max(xs)
        if xhi == xlo:
            xlo, xhi = xlo - 1, xhi + 1
        if hi == lo:
            lo, hi = lo - 1, hi + 1

        def sx(v):
            return x0 + (v - xlo) / (xhi - xlo) * (x1 - x0)

        def sy(v):
            return y0 - (v - lo) / (hi - lo) * (y0 - y1)

        for v, anchor, x, y in ((xlo, "middle", sx(xlo), y0 + 14), (xhi, "middle", sx(xhi), y0 + 14)):
            out.append(f'<text x="{x:.1f}" y="{y:.1f}" text-anchor="{anchor}" font-size="10">{v:g}</text>')
        for v in (lo, hi):
            out.append(f'<text x="{x0 - 4}" y="{sy(v) + 3:.1f}" text-anchor="end" font-size="10">{v:.4g}</text>')
        for k, (label, s) in enumerate(series.items()):
            colour = _COLOURS[k % len(_COLOURS)]
            if len(s.x):
                line = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(s.x, s.mean))
                out.append(f'<polyline points="{line}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
            for a, b, e in zip(s.x, s.mean, s.stderr):
                if e > 0:
                    out.append(
                        f'<line x1="{sx(a):.1f}" y1="{sy(b - e):.1f}" x2="{sx(a):.1f}" y2="{sy(b + e):.1f}" stroke="{colour}"/>'
                    )
            ly = top + 14 * (k + 1)
            out.append(f'<line x1="{x1 + 10}" y1="{ly - 4}" x2="{x1 + 28}" y2="{ly - 4}" stroke="{colour}" stroke-width="2"/>')
            out.append(f'<text x="{x1 + 32}" y="{ly}" font-size="10">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit_plot_data(series: dict[str, Summary], stem, title: str = "", xlabel: str = "", ylabel: str = "") -> list[Path]:
    """Write ``<stem>.dat`` (gnuplot) and ``<stem>.svg``; returns both paths."""
    stem = Path(stem)
    dat = write_gnuplot(stem.with_suffix(".dat"), series)
    svg = stem.with_suffix(".svg")
    svg.write_text(render_svg(series, title, xlabel, ylabel))
    return [dat, svg]
