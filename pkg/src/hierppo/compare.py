"""Cross-run comparison of 10-episode moving-average learning curves, as CSV and SVG."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from hierppo.errors import ConfigurationError
from hierppo.experiment import load_episode_curves, write_csv

log = logging.getLogger(__name__)

SERIES_COLUMNS = ("series", "env_step", "mean_moving_avg_10", "std_moving_avg_10", "n_seeds")
# hierarchy runs in blue, baseline in black, then anything else
PALETTE = {"hier": "#1f4fd8", "baseline": "#000000"}
EXTRA_COLORS = ("#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


@dataclass
class Series:
    name: str
    variant: str
    steps: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_seeds: int


def _seed_grid(curves):
    grids = [tuple(steps) for steps, _ in curves.values()]
    common = min(grids, key=len)
    return np.array(common, dtype=np.float64)


def _resample(steps, values, grid):
    return np.interp(grid, steps, values)


def build_series(name, variant, curves, grid=None):
    if grid is None:
        grid = _seed_grid(curves)
    stacked = []
    for steps, values in curves.values():
        if len(steps) == 0:
            continue
        if len(steps) != len(grid) or not np.array_equal(steps, grid):
            values = _resample(steps, values, grid)
        stacked.append(values)
    if not stacked:
        raise ConfigurationError(f"{name}: no seed has 10 or more episodes")
    arr = np.vstack(stacked)
    return Series(name, variant, grid, arr.mean(axis=0), arr.std(axis=0), arr.shape[0])


def _series_names(run_dirs, variants):
    names = []
    for d, v in zip(run_dirs, variants):
        base = os.path.basename(os.path.normpath(d)) or d
        names.append(f"{v}:{base}")
    # disambiguate a directory compared against itself
    seen = {}
    out = []
    for n in names:
        seen[n] = seen.get(n, 0) + 1
        out.append(n if seen[n] == 1 else f"{n}#{seen[n]}")
    return out


def run_compare(run_dirs, out_dir):
    """Write ``comparison.csv`` and ``comparison.svg`` to ``out_dir``; return the series."""
    if len(run_dirs) < 2:
        raise ConfigurationError("compare needs at least two run directories")
    loaded = [load_episode_curves(d) for d in run_dirs]
    variants = [v or "unknown" for v, _ in loaded]
    names = _series_names(run_dirs, variants)

    grids = [_seed_grid(curves) for _, curves in loaded]
    coarse = min(grids, key=len)
    if any(len(g) != len(coarse) or not np.array_equal(g, coarse) for g in grids):
        log.warning("runs use different step grids; resampling to the coarser grid (%d points)",
                    len(coarse))
        coarse = coarse[(coarse >= max(g[0] for g in grids)) & (coarse <= min(g[-1] for g in grids))]
        if len(coarse) == 0:
            raise ConfigurationError("runs share no overlapping env_step range")
    series = [build_series(n, v, curves, coarse)
              for n, v, (_, curves) in zip(names, variants, loaded)]

    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for s in series:
        rows.extend((s.name, int(x), m, sd, s.n_seeds) for x, m, sd in zip(s.steps, s.mean, s.std))
    write_csv(os.path.join(out_dir, "comparison.csv"), SERIES_COLUMNS, rows)
    svg = render_svg(series, title="Average reward over a 10-episode window")
    tmp = os.path.join(out_dir, "comparison.svg.tmp")
    with open(tmp, "w") as fh:
        fh.write(svg)
    os.replace(tmp, os.path.join(out_dir, "comparison.svg"))
    return series


def _nice_ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** np.floor(np.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = np.ceil(lo / step) * step
    return [float(v) for v in np.arange(start, hi + step * 0.5, step)]


def render_svg(series, title="", width=720, height=440):
    """Line plot with a shaded +/- one std band per series, axes, ticks and a legend."""
    left, right, top, bottom = 80, 170, 40, 60
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([s.steps for s in series])
    lows = np.concatenate([s.mean - s.std for s in series])
    highs = np.concatenate([s.mean + s.std for s in series])
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = float(lows.min()), float(highs.max())
    if x1 == x0:
        x1 = x0 + 1.0
    pad = 0.05 * (y1 - y0 or 1.0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (y1 - y) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _nice_ticks(x0, x1):
        if x0 <= t <= x1:
            parts.append(f'<line x1="{px(t):.1f}" y1="{top + ph}" x2="{px(t):.1f}" y2="{top + ph + 5}" stroke="#444"/>')
            parts.append(f'<text x="{px(t):.1f}" y="{top + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _nice_ticks(y0, y1):
        if y0 <= t <= y1:
            parts.append(f'<line x1="{left}" y1="{py(t):.1f}" x2="{left + pw}" y2="{py(t):.1f}" stroke="#e5e5e5"/>')
            parts.append(f'<text x="{left - 6}" y="{py(t) + 4:.1f}" text-anchor="end">{t:g}</text>')
    parts.append(f'<text x="{left + pw / 2:.1f}" y="{height - 15}" text-anchor="middle">environment steps</text>')
    parts.append(f'<text transform="translate(20 {top + ph / 2:.1f}) rotate(-90)" text-anchor="middle">'
                 f'episode return (moving average)</text>')

    extra = iter(EXTRA_COLORS * 4)
    for i, s in enumerate(series):
        color = PALETTE.get(s.variant) if s.variant in PALETTE and \
            sum(t.variant == s.variant for t in series[:i]) == 0 else next(extra)
        upper = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(s.steps, s.mean + s.std))
        lower = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(s.steps[::-1], (s.mean - s.std)[::-1]))
        parts.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.12" stroke="none"/>')
        line = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(s.steps, s.mean))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.8"/>')
        ly = top + 14 + 18 * i
        parts.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 36}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{left + pw + 42}" y="{ly + 4}">{escape(s.name)} (n={s.n_seeds})</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
