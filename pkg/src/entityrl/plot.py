"""Dependency-free SVG training-curve figures from metrics CSV files."""

from __future__ import annotations

import csv
import math
from pathlib import Path

SERIES_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                 "#8c564b", "#e377c2", "#17becf")


def read_metrics_csv(path: str | Path) -> list[dict[str, float]]:
    """Rows of the training metrics schema, keyed by column name."""
    rows = []
    with open(path, newline="") as f:
        for record in csv.DictReader(f):
            rows.append({k: float(v) for k, v in record.items() if v != ""})
    return rows


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / count))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if span / (step * mult) <= count:
            step *= mult
            break
    first = math.ceil(lo / step) * step
    ticks = []
    value = first
    while value <= hi + 1e-9 * span:
        ticks.append(round(value, 10))
        value += step
    return ticks or [lo]


def _fmt(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return f"{value:g}"


def render_training_curves(series: list[tuple[str, list[tuple[float, float]]]],
                           title: str = "Training reward",
                           width: int = 640, height: int = 420) -> str:
    """One polyline per (label, [(env_steps, reward), ...]) series."""
    margin_l, margin_r, margin_t, margin_b = 70, 20, 40, 50
    plot_w = width - margin_l - margin_r
    plot_h = height - margin_t - margin_b
    points = [p for _, pts in series for p in pts]
    if not points:
        raise ValueError("no data points to plot")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x: float) -> float:
        return margin_l + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y: float) -> float:
        return margin_t + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
           f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="16" '
           f'font-family="sans-serif">{title}</text>']
    # axes and ticks
    out.append(f'<rect x="{margin_l}" y="{margin_t}" width="{plot_w}" height="{plot_h}" '
               f'fill="none" stroke="#333333"/>')
    for tick in _ticks(x_lo, x_hi):
        x = sx(tick)
        out.append(f'<line x1="{x:.1f}" y1="{margin_t + plot_h}" x2="{x:.1f}" '
                   f'y2="{margin_t + plot_h + 5}" stroke="#333333"/>')
        out.append(f'<text x="{x:.1f}" y="{margin_t + plot_h + 20}" text-anchor="middle" '
                   f'font-size="11" font-family="sans-serif">{_fmt(tick)}</text>')
    for tick in _ticks(y_lo, y_hi):
        y = sy(tick)
        out.append(f'<line x1="{margin_l - 5}" y1="{y:.1f}" x2="{margin_l}" y2="{y:.1f}" '
                   f'stroke="#333333"/>')
        out.append(f'<text x="{margin_l - 9}" y="{y + 4:.1f}" text-anchor="end" '
                   f'font-size="11" font-family="sans-serif">{_fmt(tick)}</text>')
    out.append(f'<text x="{margin_l + plot_w / 2:.1f}" y="{height - 12}" text-anchor="middle" '
               f'font-size="12" font-family="sans-serif">environment steps</text>')
    out.append(f'<text x="16" y="{margin_t + plot_h / 2:.1f}" text-anchor="middle" '
               f'font-size="12" font-family="sans-serif" '
               f'transform="rotate(-90 16 {margin_t + plot_h / 2:.1f})">mean episode reward</text>')
    # series
    for i, (label, pts) in enumerate(series):
        color = SERIES_COLORS[i % len(SERIES_COLORS)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = margin_t + 16 + 16 * i
        out.append(f'<line x1="{margin_l + 10}" y1="{ly - 4}" x2="{margin_l + 34}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{margin_l + 40}" y="{ly}" font-size="12" '
                   f'font-family="sans-serif">{label}</text>')
    out.append("</svg>")
    return "\n".join(out)


def plot_metrics_files(csv_paths: list[str | Path], out_path: str | Path,
                       title: str = "Training reward") -> None:
    series = []
    for path in csv_paths:
        rows = read_metrics_csv(path)
        pts = [(row["env_steps"], row["mean_episode_reward"]) for row in rows
               if "env_steps" in row and "mean_episode_reward" in row]
        if not pts:
            raise ValueError(f"{path}: no (env_steps, mean_episode_reward) rows")
        series.append((Path(path).stem if Path(path).stem != "metrics" else Path(path).parent.name, pts))
    Path(out_path).write_text(render_training_curves(series, title=title))
