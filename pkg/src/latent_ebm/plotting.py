"""Dependency-free SVG scatter and trajectory plots for 2-D samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_text

VIEW = 400.0
MARGIN = 20.0


@dataclass
class PlotStyle:
    bounds: tuple[float, float] = (-6.0, 6.0)
    radius: float = 1.2
    color: str = "#1f77b4"
    opacity: float = 0.4
    cross_size: float = 5.0
    line_color: str = "#d62728"


def _to_px(xy: np.ndarray, bounds) -> np.ndarray:
    lo, hi = bounds
    u = (xy - lo) / (hi - lo)
    span = VIEW - 2 * MARGIN
    return np.stack([MARGIN + u[:, 0] * span, VIEW - MARGIN - u[:, 1] * span], 1)


def svg_text(samples=None, centers=None, trajectory=None, style: PlotStyle | None = None) -> str:
    """SVG document: axes, one circle per sample, crosses at ``centers``, one polyline per chain.

    ``trajectory`` has shape (steps, chains, 2); each chain becomes a polyline with
    one point per recorded step.
    """
    st = style or PlotStyle()
    if st.bounds[1] <= st.bounds[0]:
        raise ValueError("plot bounds must be increasing")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {VIEW:g} {VIEW:g}" '
           f'width="{VIEW:g}" height="{VIEW:g}">',
           '<rect x="0" y="0" width="100%" height="100%" fill="white"/>']
    origin = _to_px(np.zeros((1, 2)), st.bounds)[0]
    out.append(f'<line class="axis" x1="{MARGIN:g}" y1="{origin[1]:.3f}" x2="{VIEW - MARGIN:g}" '
               f'y2="{origin[1]:.3f}" stroke="black" stroke-width="0.5"/>')
    out.append(f'<line class="axis" x1="{origin[0]:.3f}" y1="{MARGIN:g}" x2="{origin[0]:.3f}" '
               f'y2="{VIEW - MARGIN:g}" stroke="black" stroke-width="0.5"/>')
    if samples is not None:
        pts = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
        for x, y in _to_px(pts, st.bounds):
            out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="{st.radius:g}" fill="{st.color}" '
                       f'fill-opacity="{st.opacity:g}"/>')
    if centers is not None:
        c = st.cross_size
        for x, y in _to_px(np.asarray(centers, dtype=np.float64).reshape(-1, 2), st.bounds):
            out.append(f'<path class="mode" d="M{x - c:.3f} {y - c:.3f}L{x + c:.3f} {y + c:.3f}'
                       f'M{x - c:.3f} {y + c:.3f}L{x + c:.3f} {y - c:.3f}" stroke="black" stroke-width="1"/>')
    if trajectory is not None:
        traj = np.asarray(trajectory, dtype=np.float64)
        if traj.ndim == 2:
            traj = traj[:, None, :]
        if traj.ndim != 3 or traj.shape[2] != 2:
            raise ValueError(f"trajectory must have shape (steps, chains, 2), got {traj.shape}")
        for j in range(traj.shape[1]):
            px = _to_px(traj[:, j], st.bounds)
            pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in px)
            out.append(f'<polyline points="{pts}" fill="none" stroke="{st.line_color}" stroke-width="0.8"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_svg(path, samples=None, centers=None, trajectory=None, style: PlotStyle | None = None) -> None:
    atomic_write_text(path, svg_text(samples, centers, trajectory, style))
