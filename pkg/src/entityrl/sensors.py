"""Observation extraction: ego-centric entity sets, graphs, and a 1D strip.

Entity features are ego-centric: each visible entity contributes
[kind one-hot | distance / range | sin(bearing) | cos(bearing)] with the
bearing measured relative to the agent heading. The visual strip is a
panoramic ray cast returning (r, g, b, depth) per ray. Graphs add an edge
list over the same nodes, either fully connected or k-nearest-neighbour,
plus a marked edge between visible portals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .playground import COLORS, PORTAL_BLUE, PORTAL_RED, WALL, Playground

DEFAULT_RANGE = 400.0
EDGE_SPATIAL = 0
EDGE_PORTAL = 1
AGENT_KIND = "agent"


@dataclass
class EntityFeature:
    kind_onehot: np.ndarray
    distance: float
    sin_alpha: float
    cos_alpha: float


@dataclass
class EntitySet:
    """Variable-cardinality set observation: rows of (onehot | d | sin | cos)."""

    features: np.ndarray  # (N, len(kinds) + 3) float64
    kinds: tuple[str, ...]

    @property
    def cardinality(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return len(self.kinds) + 3

    def feature(self, i: int) -> EntityFeature:
        row = self.features[i]
        k = len(self.kinds)
        return EntityFeature(row[:k].copy(), float(row[k]), float(row[k + 1]), float(row[k + 2]))

    def kind_of(self, i: int) -> str:
        return self.kinds[int(np.argmax(self.features[i, : len(self.kinds)]))]

    def positions(self) -> np.ndarray:
        """Planar reconstruction (d cos a, d sin a) in normalized units."""
        k = len(self.kinds)
        d = self.features[:, k]
        return np.stack([d * self.features[:, k + 2], d * self.features[:, k + 1]], axis=1)


@dataclass
class GraphObs:
    nodes: EntitySet
    edges: np.ndarray       # (E, 2) int64 directed (src, dst)
    edge_kinds: np.ndarray  # (E,) int8, EDGE_SPATIAL or EDGE_PORTAL
    has_agent_node: bool = False
    degraded_to_full: bool = False

    @property
    def num_nodes(self) -> int:
        return self.nodes.cardinality


@dataclass
class VisualStrip:
    """R rays of (r, g, b, depth); colors in [0,1], depth normalized."""

    rays: np.ndarray  # (R, 4) float64

    @property
    def ray_count(self) -> int:
        return self.rays.shape[0]

    def as_channels(self) -> np.ndarray:
        """(4, R) channel-major array for the conv encoder."""
        return np.ascontiguousarray(self.rays.T)


def _occluded_mask(rel: np.ndarray, dist_sq: np.ndarray, radii: np.ndarray,
                   opaque: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """For each candidate target, is the agent->center segment blocked?

    rel: (N, 2) entity offsets from the agent; occluders are all opaque
    entities other than the target itself.
    """
    n = rel.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    dots = rel @ rel.T                      # dots[j, i] = <rel_j, rel_i>
    denom = np.where(dist_sq > 0.0, dist_sq, 1.0)
    t = np.clip(dots / denom[None, :], 0.0, 1.0)  # t[j, i]: param of closest point
    # squared distance from occluder j to segment 0->rel_i
    seg_d2 = dist_sq[:, None] - 2.0 * t * dots + (t * t) * dist_sq[None, :]
    blocked = seg_d2 < (radii[:, None] ** 2)
    blocked &= opaque[:, None]
    np.fill_diagonal(blocked, False)
    occluded = blocked.any(axis=0)
    occluded[~candidates] = False
    return occluded


def sense_entities(pg: Playground, max_range: float = DEFAULT_RANGE,
                   occlusion: bool = True, include_walls: bool = False) -> EntitySet:
    """Ego-centric set of non-occluded entities within `max_range`.

    Fireball interaction zones are transparent; only bodies occlude. Walls
    bound the room and are excluded from the set unless `include_walls`
    adds one pseudo-entity per wall at its nearest point.
    """
    kinds = pg.kinds + ((WALL,) if include_walls else ())
    kind_index = {k: i for i, k in enumerate(kinds)}
    agent = pg.agent
    entities = pg.entities
    n = len(entities)
    rows = []
    if n:
        rel = np.stack([e.position for e in entities]) - agent.position
        dist_sq = np.einsum("ij,ij->i", rel, rel)
        dist = np.sqrt(dist_sq)
        radii = np.array([e.body_radius for e in entities])
        opaque = np.ones(n, dtype=bool)  # bodies occlude; zones do not
        in_range = dist <= max_range
        if occlusion:
            occ = _occluded_mask(rel, dist_sq, radii, opaque, in_range)
        else:
            occ = np.zeros(n, dtype=bool)
        visible = in_range & ~occ
        alpha = np.arctan2(rel[:, 1], rel[:, 0]) - agent.heading
        for i in np.flatnonzero(visible):
            rows.append(_feature_row(kinds, kind_index[entities[i].kind],
                                     dist[i] / max_range, alpha[i]))
    if include_walls:
        rows.extend(_wall_rows(pg, kinds, kind_index[WALL], max_range))
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(kinds) + 3)
    return EntitySet(features=features, kinds=kinds)


def _feature_row(kinds, kind_idx: int, d_norm: float, alpha: float) -> np.ndarray:
    row = np.zeros(len(kinds) + 3)
    row[kind_idx] = 1.0
    row[len(kinds)] = d_norm
    if d_norm > 0.0:
        row[len(kinds) + 1] = math.sin(alpha)
        row[len(kinds) + 2] = math.cos(alpha)
    else:
        row[len(kinds) + 2] = 1.0
    return row


def _wall_rows(pg: Playground, kinds, wall_idx: int, max_range: float):
    ax, ay = pg.agent.position
    nearest = [np.array([0.0, ay]), np.array([pg.room_w, ay]),
               np.array([ax, 0.0]), np.array([ax, pg.room_h])]
    rows = []
    for point in nearest:
        rel = point - pg.agent.position
        dist = float(np.hypot(*rel))
        if dist <= max_range:
            alpha = math.atan2(rel[1], rel[0]) - pg.agent.heading
            rows.append(_feature_row(kinds, wall_idx, dist / max_range, alpha))
    return rows


def sense_visual(pg: Playground, rays: int = 128,
                 max_range: float = DEFAULT_RANGE) -> VisualStrip:
    """Panoramic strip: ray k at bearing heading + 2*pi*k/rays, nearest hit."""
    if rays < 1:
        raise ValueError(f"rays must be >= 1, got {rays}")
    agent = pg.agent
    angles = agent.heading + 2.0 * math.pi * np.arange(rays) / rays
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (R, 2)

    best_t = np.full(rays, np.inf)
    best_color = np.zeros((rays, 3))

    entities = pg.entities
    if entities:
        centers = np.stack([e.position for e in entities]) - agent.position
        radii = np.array([e.body_radius for e in entities])
        colors = np.array([e.color for e in entities], dtype=np.float64)
        b = dirs @ centers.T                       # (R, N)
        c = np.einsum("ij,ij->i", centers, centers) - radii**2
        disc = b * b - c[None, :]
        ok = disc >= 0.0
        sqrt_disc = np.sqrt(np.where(ok, disc, 0.0))
        t_near = b - sqrt_disc
        t_far = b + sqrt_disc
        t_hit = np.where(t_near > 1e-9, t_near, t_far)  # inside a body: exit point
        t_hit = np.where(ok & (t_hit > 1e-9), t_hit, np.inf)
        idx = np.argmin(t_hit, axis=1)
        t_best = t_hit[np.arange(rays), idx]
        update = t_best < best_t
        best_t = np.where(update, t_best, best_t)
        best_color[update] = colors[idx[update]] / 255.0

    wall_t = _wall_hits(agent.position, dirs, pg.room_w, pg.room_h)
    update = wall_t < best_t
    best_t = np.where(update, wall_t, best_t)
    best_color[update] = np.array(COLORS[WALL], dtype=np.float64) / 255.0

    miss = best_t > max_range
    depth = np.where(miss, 1.0, best_t / max_range)
    color = np.where(miss[:, None], 0.0, best_color)
    return VisualStrip(rays=np.concatenate([color, depth[:, None]], axis=1))


def _wall_hits(origin: np.ndarray, dirs: np.ndarray, w: float, h: float) -> np.ndarray:
    """First intersection parameter of each unit ray with the room boundary."""
    t = np.full(dirs.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for plane, axis, lo, hi in ((0.0, 0, 0.0, h), (w, 0, 0.0, h),
                                    (0.0, 1, 0.0, w), (h, 1, 0.0, w)):
            o = origin[axis]
            d = dirs[:, axis]
            tc = (plane - o) / d
            other = origin[1 - axis] + tc * dirs[:, 1 - axis]
            valid = (tc > 1e-9) & np.isfinite(tc) & (other >= lo - 1e-9) & (other <= hi + 1e-9)
            t = np.where(valid & (tc < t), tc, t)
    return t


def extend_with_agent_node(entity_set: EntitySet) -> EntitySet:
    """Prefix an agent node; the kind vocabulary grows by one agent tag."""
    kinds = entity_set.kinds + (AGENT_KIND,)
    n, k = entity_set.cardinality, len(entity_set.kinds)
    features = np.zeros((n + 1, k + 4))
    features[0, k] = 1.0          # agent tag
    features[0, k + 3] = 1.0      # distance 0, bearing 0 -> cos = 1
    features[1:, :k] = entity_set.features[:, :k]
    features[1:, k + 1:] = entity_set.features[:, k:]
    return EntitySet(features=features, kinds=kinds)


def build_graph(entity_set: EntitySet, mode: str = "full", k: int = 2,
                include_agent_node: bool = True, self_loops: bool = False) -> GraphObs:
    """Connect the entity set into a directed graph observation.

    "full" emits every ordered pair; "knn" links each node to its k nearest
    neighbours in the reconstructed ego plane. Visible portal pairs are
    always linked both ways with a portal-tagged edge. knn with k >= node
    count degrades to fully connected and flags the result.
    """
    if mode not in ("full", "knn"):
        raise ValueError(f"graph mode must be 'full' or 'knn', got {mode!r}")
    nodes = extend_with_agent_node(entity_set) if include_agent_node else entity_set
    n = nodes.cardinality
    degraded = False

    if mode == "knn" and k >= n:
        mode, degraded = "full", True

    if mode == "full":
        src, dst = np.divmod(np.arange(n * n), n)
        keep = np.ones(n * n, dtype=bool) if self_loops else (src != dst)
        edges = np.stack([src[keep], dst[keep]], axis=1).astype(np.int64)
    else:
        pos = nodes.positions()
        diff = pos[:, None, :] - pos[None, :, :]
        d2 = np.einsum("ijk,ijk->ij", diff, diff)
        np.fill_diagonal(d2, np.inf)
        order = np.argsort(d2, axis=1, kind="stable")  # ties -> lower index
        neigh = order[:, :k]
        src = np.repeat(np.arange(n), k)
        edges = np.stack([src, neigh.reshape(-1)], axis=1).astype(np.int64)
        if self_loops:
            loops = np.stack([np.arange(n)] * 2, axis=1).astype(np.int64)
            edges = np.concatenate([edges, loops], axis=0)

    edge_kinds = np.zeros(len(edges), dtype=np.int8)
    portals = _portal_indices(nodes)
    if portals is not None:
        a, b = portals
        for s, d in ((a, b), (b, a)):
            hit = (edges[:, 0] == s) & (edges[:, 1] == d)
            if hit.any():
                edge_kinds[hit] = EDGE_PORTAL
            else:
                edges = np.concatenate([edges, np.array([[s, d]], dtype=np.int64)], axis=0)
                edge_kinds = np.concatenate([edge_kinds, np.array([EDGE_PORTAL], dtype=np.int8)])

    return GraphObs(nodes=nodes, edges=edges, edge_kinds=edge_kinds,
                    has_agent_node=include_agent_node, degraded_to_full=degraded)


def _portal_indices(nodes: EntitySet) -> tuple[int, int] | None:
    kinds = nodes.kinds
    if PORTAL_RED not in kinds or PORTAL_BLUE not in kinds:
        return None
    onehot = nodes.features[:, : len(kinds)]
    red = np.flatnonzero(onehot[:, kinds.index(PORTAL_RED)] == 1.0)
    blue = np.flatnonzero(onehot[:, kinds.index(PORTAL_BLUE)] == 1.0)
    if len(red) == 0 or len(blue) == 0:
        return None
    return int(red[0]), int(blue[0])
