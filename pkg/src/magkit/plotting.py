"""Deterministic SVG plots of run directories (fixed viewport, no timestamps)."""
from pathlib import Path

import numpy as np

from . import _io
from .errors import ValidationError

WIDTH, HEIGHT, PAD = 640, 480, 48
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"]


def _f(x):
    return _io.fmt(float(x))


class _Frame:
    """Affine map from data bounds onto the fixed viewport."""

    def __init__(self, xs, ys):
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        self.x0, self.x1 = self._span(xs)
        self.y0, self.y1 = self._span(ys)

    @staticmethod
    def _span(v):
        lo, hi = float(np.min(v)), float(np.max(v))
        if hi - lo < 1e-12:
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi

    def __call__(self, x, y):
        px = PAD + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2 * PAD)
        py = HEIGHT - PAD - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2 * PAD)
        return round(float(px), 3), round(float(py), 3)


def _svg(body, title, frame, xlabel, ylabel):
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{PAD}" y="{PAD}" width="{WIDTH - 2 * PAD}" height="{HEIGHT - 2 * PAD}" fill="none" stroke="black"/>',
        f'<text x="{WIDTH // 2}" y="{PAD // 2}" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>',
        f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{xlabel}</text>',
        f'<text x="14" y="{HEIGHT // 2}" text-anchor="middle" font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT // 2})">{ylabel}</text>',
        f'<text x="{PAD}" y="{HEIGHT - PAD + 14}" font-family="sans-serif" font-size="10">{_f(frame.x0)}</text>',
        f'<text x="{WIDTH - PAD}" y="{HEIGHT - PAD + 14}" text-anchor="end" font-family="sans-serif" font-size="10">'
        f'{_f(frame.x1)}</text>',
        f'<text x="{PAD - 4}" y="{HEIGHT - PAD}" text-anchor="end" font-family="sans-serif" font-size="10">{_f(frame.y0)}</text>',
        f'<text x="{PAD - 4}" y="{PAD + 10}" text-anchor="end" font-family="sans-serif" font-size="10">{_f(frame.y1)}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _polyline(frame, xs, ys, color):
    pts = " ".join(f"{_f(px)},{_f(py)}" for px, py in (frame(x, y) for x, y in zip(xs, ys)))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def _write(path, text):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _load(path):
    header, rows = _io.read_csv(path)
    if not rows:
        raise ValidationError(f"{path.name} has no data rows")
    if header[0] == "clock":
        header, rows = header[1:], [r[1:] for r in rows]
    return header, np.array(rows, dtype=float)


def _trajectory(run):
    files = sorted(run.glob("trajectory*.csv"))
    if not files:
        raise ValidationError(f"{run}: no trajectory CSV found")
    curves = []
    for f in files:
        header, data = _load(f)
        pos = [i for i, h in enumerate(header) if h.startswith("pos_")]
        if len(pos) >= 2:
            curves.append((data[:, pos[0]], data[:, pos[1]]))
            labels = (header[pos[0]], header[pos[1]])
        else:
            curves.append((data[:, 0], data[:, pos[0]]))
            labels = (header[0], header[pos[0]])
    frame = _Frame(np.concatenate([c[0] for c in curves]), np.concatenate([c[1] for c in curves]))
    body = [_polyline(frame, xs, ys, COLORS[i % len(COLORS)]) for i, (xs, ys) in enumerate(curves)]
    return [_write(run / "trajectory.svg", _svg(body, "trajectory", frame, *labels))]


def _cloud_film(run):
    path = run / "clouds.csv"
    if not path.exists():
        raise ValidationError(f"{run}: clouds.csv not found")
    header, data = _load(path)
    starts = np.flatnonzero(data[:, 1] == 0)
    ends = list(starts[1:]) + [len(data)]
    coords = data[:, 2:]
    if coords.shape[1] >= 2:
        xs_all, ys_all = coords[:, 0], coords[:, 1]
        labels = ("coord_0", "coord_1")
    else:
        xs_all, ys_all = coords[:, 0], data[:, 1]
        labels = ("coord_0", "particle_id")
    frame = _Frame(xs_all, ys_all)
    out = []
    for j, (a, b) in enumerate(zip(starts, ends)):
        dots = []
        for x, y in zip(xs_all[a:b], ys_all[a:b]):
            px, py = frame(x, y)
            dots.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="1.5" fill="{COLORS[0]}" fill-opacity="0.6"/>')
        title = f"snapshot {j} at time {_f(data[a, 0])} ({b - a} particles)"
        out.append(_write(run / f"cloud_{j:03d}.svg", _svg(dots, title, frame, *labels)))
    return out


def fit_loglog_slope(x, y):
    """Least-squares slope of log y against log x over positive pairs."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        raise ValidationError("need at least two positive points for a log-log fit")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def _error_curves(run):
    path = run / "error_curves.csv"
    if not path.exists():
        raise ValidationError(f"{run}: error_curves.csv not found")
    header, data = _load(path)
    x, y = data[:, 0], data[:, 1]
    slope = fit_loglog_slope(x, y)
    ok = (x > 0) & (y > 0)
    lx, ly = np.log10(x[ok]), np.log10(y[ok])
    frame = _Frame(lx, ly)
    body = [_polyline(frame, lx, ly, COLORS[0])]
    for u, v in zip(lx, ly):
        px, py = frame(u, v)
        body.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="3" fill="{COLORS[0]}"/>')
    body.append(f'<text x="{WIDTH - PAD - 8}" y="{PAD + 20}" text-anchor="end" font-family="sans-serif" '
                f'font-size="12">fitted slope {_f(round(slope, 6))}</text>')
    labels = (f"log10 {header[0]}", f"log10 {header[1]}")
    return [_write(run / "error_curves.svg", _svg(body, "error curve", frame, *labels))]


PLOTS = {"trajectory": _trajectory, "cloud-film": _cloud_film, "error-curves": _error_curves}


def plot_run(run, what):
    """Render ``what`` from the CSVs in ``run``; returns the written paths."""
    run = Path(run)
    if what not in PLOTS:
        raise ValidationError(f"unknown plot {what!r}")
    if not run.is_dir():
        raise ValidationError(f"{run}: not a directory")
    return PLOTS[what](run)
