"""Frame -> entity-set extraction by connected-component color segmentation.

Game-like frames are split into blobs: maximal 8-connected components of
pixels sharing one exact RGB value, excluding the background color (the
modal color by default). Each blob yields a normalized 8-feature vector
[r, g, b, x, y, dx, dy, s] where x, y is the centroid over width/height,
dx, dy the bounding box over width/height, and s the frame-stack slot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

FEATURE_COLUMNS = ("r", "g", "b", "x", "y", "dx", "dy", "s")
_STRUCTURE_8 = np.ones((3, 3), dtype=bool)


@dataclass
class Blob:
    color: tuple[int, int, int]
    centroid: tuple[float, float]  # (x, y) fractional pixels
    bbox: tuple[int, int]          # (dx, dy) extent in pixels
    min_corner: tuple[int, int]    # (x0, y0) top-left of the bbox
    area: int


def check_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be (H, W, 3), got {frame.shape}")
    if frame.size == 0:
        raise ValueError("frame must be non-empty")
    return frame.astype(np.uint8, copy=False)


def _pack_colors(frame: np.ndarray) -> np.ndarray:
    f = frame.astype(np.uint32)
    return (f[:, :, 0] << 16) | (f[:, :, 1] << 8) | f[:, :, 2]


def modal_color(frame: np.ndarray) -> tuple[int, int, int]:
    """Most frequent pixel color; the default background."""
    packed = _pack_colors(check_frame(frame))
    values, counts = np.unique(packed, return_counts=True)
    best = int(values[np.argmax(counts)])
    return ((best >> 16) & 0xFF, (best >> 8) & 0xFF, best & 0xFF)


def quantize(frame: np.ndarray, levels: int) -> np.ndarray:
    """Optional pre-pass for noisy inputs: snap channels to `levels` buckets."""
    if levels < 2 or levels > 256:
        raise ValueError(f"levels must be in [2, 256], got {levels}")
    frame = check_frame(frame)
    step = 256 // levels
    return ((frame // step) * step + step // 2).clip(0, 255).astype(np.uint8)


def extract_blobs(frame: np.ndarray, min_area: int = 1,
                  background: tuple[int, int, int] | None = None) -> list[Blob]:
    """Segment one frame into colored blobs.

    One Blob per maximal 8-connected component of identical RGB value,
    background excluded. Output is ordered by bbox top-left corner
    (y, then x), with color/area as deterministic tie-breaks.
    """
    frame = check_frame(frame)
    packed = _pack_colors(frame)
    if background is None:
        background = modal_color(frame)
    bg = (int(background[0]) << 16) | (int(background[1]) << 8) | int(background[2])

    blobs: list[Blob] = []
    for value in np.unique(packed):
        if int(value) == bg:
            continue
        labels, count = ndimage.label(packed == value, structure=_STRUCTURE_8)
        if not count:
            continue
        color = (int(value) >> 16 & 0xFF, int(value) >> 8 & 0xFF, int(value) & 0xFF)
        areas = np.bincount(labels.ravel())[1:]
        slices = ndimage.find_objects(labels)
        for label in range(1, count + 1):
            area = int(areas[label - 1])
            if area < min_area:
                continue
            sl_y, sl_x = slices[label - 1]
            ys, xs = np.nonzero(labels[sl_y, sl_x] == label)
            cy = float(np.mean(ys)) + sl_y.start
            cx = float(np.mean(xs)) + sl_x.start
            blobs.append(Blob(
                color=color,
                centroid=(cx, cy),
                bbox=(sl_x.stop - sl_x.start, sl_y.stop - sl_y.start),
                min_corner=(sl_x.start, sl_y.start),
                area=area,
            ))
    blobs.sort(key=lambda blob: (blob.min_corner[1], blob.min_corner[0],
                                 blob.color, blob.area, blob.centroid))
    return blobs


def blobs_to_features(blobs: list[Blob], frame_dims: tuple[int, int],
                      stack_index: int = 0, stack_count: int = 1) -> np.ndarray:
    """Normalize blobs to (N, 8) rows of [r, g, b, x, y, dx, dy, s]."""
    if not 0 <= stack_index < stack_count:
        raise ValueError(f"need 0 <= stack_index < stack_count, got {stack_index}/{stack_count}")
    width, height = frame_dims
    out = np.zeros((len(blobs), 8), dtype=np.float64)
    for i, blob in enumerate(blobs):
        out[i, 0:3] = np.asarray(blob.color, dtype=np.float64) / 255.0
        out[i, 3] = blob.centroid[0] / width
        out[i, 4] = blob.centroid[1] / height
        out[i, 5] = blob.bbox[0] / width
        out[i, 6] = blob.bbox[1] / height
        out[i, 7] = stack_index / stack_count
    return out


def stack_frames(per_frame_features: list[np.ndarray]) -> np.ndarray:
    """Union of per-frame feature lists; no cross-frame entity matching."""
    if not per_frame_features:
        raise ValueError("need at least one frame of features")
    parts = [np.asarray(f, dtype=np.float64).reshape(-1, 8) for f in per_frame_features]
    return np.concatenate(parts, axis=0)


def extract_frame_stack(frames: list[np.ndarray], min_area: int = 1,
                        background: tuple[int, int, int] | None = None) -> np.ndarray:
    """Full pipeline: segment each frame, tag stack slots, take the union."""
    count = len(frames)
    feats = []
    for s, frame in enumerate(frames):
        frame = check_frame(frame)
        blobs = extract_blobs(frame, min_area=min_area, background=background)
        feats.append(blobs_to_features(blobs, (frame.shape[1], frame.shape[0]), s, count))
    return stack_frames(feats)


def write_entity_csv(path: str | Path, rows: list[tuple[int, np.ndarray]]) -> None:
    """rows: (frame_index, (N, 8) features); values at 9 significant digits."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("frame_index",) + FEATURE_COLUMNS)
        for frame_index, features in rows:
            for row in np.asarray(features).reshape(-1, 8):
                writer.writerow([frame_index] + [f"{v:.9g}" for v in row])
