"""Rasterize playground states to RGB frames (PPM sequence friendly)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .image_io import write_ppm
from .playground import COLORS, FIREBALL, Playground

BACKGROUND = (12, 12, 16)
ZONE_ALPHA = 0.25


def _fill_circle(img: np.ndarray, cx: float, cy: float, radius: float,
                 color, alpha: float = 1.0) -> None:
    h, w = img.shape[:2]
    x0 = max(int(np.floor(cx - radius)), 0)
    x1 = min(int(np.ceil(cx + radius)) + 1, w)
    y0 = max(int(np.floor(cy - radius)), 0)
    y1 = min(int(np.ceil(cy + radius)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    mask = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 <= radius**2
    patch = img[y0:y1, x0:x1].astype(np.float64)
    patch[mask] = (1.0 - alpha) * patch[mask] + alpha * np.asarray(color, dtype=np.float64)
    img[y0:y1, x0:x1] = patch.astype(np.uint8)


def render_playground(pg: Playground, scale: float = 1.0) -> np.ndarray:
    """Top-down view; sim y-up is flipped into image rows."""
    w = int(round(pg.room_w * scale))
    h = int(round(pg.room_h * scale))
    img = np.empty((h, w, 3), dtype=np.uint8)
    img[:] = BACKGROUND

    def to_image(pos):
        return pos[0] * scale, h - pos[1] * scale

    if pg.drop_zone is not None:
        cx, cy = to_image(pg.drop_zone[0])
        _fill_circle(img, cx, cy, pg.drop_zone[1] * scale, (40, 70, 40), alpha=0.5)
    for e in pg.entities:
        cx, cy = to_image(e.position)
        if e.kind == FIREBALL and e.interaction_radius > e.body_radius:
            _fill_circle(img, cx, cy, e.interaction_radius * scale, e.color, alpha=ZONE_ALPHA)
        _fill_circle(img, cx, cy, e.body_radius * scale, e.color)
    ax, ay = to_image(pg.agent.position)
    _fill_circle(img, ax, ay, pg.agent.body_radius * scale, COLORS["agent"])
    # heading tick: small dot at the rim, in front of the agent
    tip = pg.agent.position + pg.agent.body_radius * 0.7 * np.array(
        [np.cos(pg.agent.heading), np.sin(pg.agent.heading)])
    tx, ty = to_image(tip)
    _fill_circle(img, tx, ty, max(2.0 * scale, 1.5), (255, 255, 255))
    return img


def save_frame(pg: Playground, directory: str | Path, index: int, scale: float = 1.0) -> Path:
    """Write frame_<index>.ppm into `directory` and return its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"frame_{index:06d}.ppm"
    write_ppm(path, render_playground(pg, scale))
    return path
