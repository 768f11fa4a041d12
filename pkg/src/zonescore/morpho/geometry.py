"""Planar geometry primitives on numpy arrays.

Rings are ``(n, 2)`` arrays of vertices without the closing duplicate;
polylines are ``(m, 2)`` vertex arrays. Coordinates are metres in a
projected frame.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

EPS = 1e-12


def as_ring(coords) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise ValueError("ring must be an (n, 2) coordinate array")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if not np.all(np.isfinite(ring)):
        raise ValueError("ring has non-finite coordinates")
    return ring


def as_polyline(coords) -> np.ndarray:
    line = np.asarray(coords, dtype=float)
    if line.ndim != 2 or line.shape[1] != 2 or len(line) < 2:
        raise ValueError("polyline must be an (m>=2, 2) coordinate array")
    return line


def _next(ring: np.ndarray) -> np.ndarray:
    return np.concatenate((ring[1:], ring[:1]))


def signed_area(ring: np.ndarray) -> float:
    # Shift to the first vertex to limit cancellation for far-from-origin coordinates.
    x = ring[:, 0] - ring[0, 0]
    y = ring[:, 1] - ring[0, 1]
    return 0.5 * float(np.dot(x[:-1], y[1:]) - np.dot(x[1:], y[:-1]))


def area(ring: np.ndarray) -> float:
    return abs(signed_area(ring))


def centroid(ring: np.ndarray) -> np.ndarray:
    """Area centroid; falls back to the vertex mean for zero-area rings."""
    origin = ring[0]
    p = ring - origin
    q = _next(p)
    cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    a = cross.sum() / 2.0
    if abs(a) < EPS:
        return ring.mean(axis=0)
    cx = ((p[:, 0] + q[:, 0]) * cross).sum() / (6.0 * a)
    cy = ((p[:, 1] + q[:, 1]) * cross).sum() / (6.0 * a)
    return np.array([cx, cy]) + origin


def ring_edges(ring: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return ring, _next(ring)


def polyline_segments(line: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return line[:-1], line[1:]


def point_in_ring(pt, ring: np.ndarray, tol: float = 1e-9) -> bool:
    """Even-odd ray casting; points within ``tol`` of an edge count as inside."""
    x, y = float(pt[0]), float(pt[1])
    inside = False
    pts = ring.tolist()
    x1, y1 = pts[-1]
    for x2, y2 in pts:
        dx, dy = x2 - x1, y2 - y1
        len2 = dx * dx + dy * dy
        t = 0.0 if len2 == 0 else min(1.0, max(0.0, ((x - x1) * dx + (y - y1) * dy) / len2))
        if math.hypot(x - x1 - t * dx, y - y1 - t * dy) <= tol:
            return True
        if (y1 > y) != (y2 > y) and x < x1 + (y - y1) * dx / dy:
            inside = not inside
        x1, y1 = x2, y2
    return inside


def point_segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distances from every point to every segment a[j]-b[j].

    ``points`` is (..., n, 2) and the segments (..., m, 2); leading batch
    dimensions broadcast, and the result is (..., n, m).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    abx = (b[..., 0] - a[..., 0])[..., None, :]
    aby = (b[..., 1] - a[..., 1])[..., None, :]
    len2 = abx * abx + aby * aby
    apx = points[..., :, 0, None] - a[..., None, :, 0]
    apy = points[..., :, 1, None] - a[..., None, :, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (apx * abx + apy * aby) / len2
    t = np.where(len2 > 0, np.clip(t, 0.0, 1.0), 0.0)
    return np.hypot(apx - t * abx, apy - t * aby)


def _orient(p, q, r):
    return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])


def segments_intersect(a1, b1, a2, b2) -> np.ndarray:
    """Pairwise proper crossings between segment sets (..., n) x (..., m); touching is left to the distance test."""
    a1, b1 = a1[..., :, None, :], b1[..., :, None, :]
    a2, b2 = a2[..., None, :, :], b2[..., None, :, :]
    d1 = _orient(a2, b2, a1)
    d2 = _orient(a2, b2, b1)
    d3 = _orient(a1, b1, a2)
    d4 = _orient(a1, b1, b2)
    return ((d1 > 0) != (d2 > 0)) & ((d3 > 0) != (d4 > 0)) & (d1 != 0) & (d2 != 0) & (d3 != 0) & (d4 != 0)


def edge_sets_distance(ea: np.ndarray, eb: np.ndarray, a2: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """Distance between segment sets, batched over a leading axis.

    ``ea``/``eb`` are (G, n, 2); ``a2``/``b2`` are (m, 2), shared by all G sets,
    or (G, m, 2). Returns (G,) with 0 where any pair of segments crosses.
    """
    d = np.minimum(point_segment_distances(ea, a2, b2), point_segment_distances(eb, a2, b2)).min(axis=(-2, -1))
    verts = np.concatenate((a2, b2), axis=-2)
    back = point_segment_distances(verts, ea, eb).min(axis=(-2, -1))
    d = np.minimum(d, back)
    crossing = segments_intersect(ea, eb, a2, b2).any(axis=(-2, -1))
    return np.where(crossing, 0.0, d)


def segment_set_distance(a1: np.ndarray, b1: np.ndarray, a2: np.ndarray, b2: np.ndarray) -> float:
    """Minimum distance between two sets of segments (0 if any pair crosses)."""
    return float(edge_sets_distance(a1[None], b1[None], a2, b2)[0])


def polyline_distance(point, line: np.ndarray) -> float:
    a, b = polyline_segments(line)
    return float(point_segment_distances(np.asarray(point, dtype=float)[None, :], a, b).min())


def ring_to_polyline_distance(ring: np.ndarray, line: np.ndarray) -> float:
    a1, b1 = ring_edges(ring)
    a2, b2 = polyline_segments(line)
    return segment_set_distance(a1, b1, a2, b2)


class GridIndex:
    """Uniform-grid bucket index over bounding boxes for point queries."""

    def __init__(self, rings: list[np.ndarray], cell: float | None = None):
        self.rings = rings
        boxes = np.array([[r[:, 0].min(), r[:, 1].min(), r[:, 0].max(), r[:, 1].max()] for r in rings]) if rings else np.zeros((0, 4))
        self.boxes = boxes
        if cell is None:
            spans = np.maximum(boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1]) if len(boxes) else np.array([1.0])
            cell = float(np.median(spans)) if len(spans) else 1.0
        self.cell = max(cell, 1e-6)
        self.buckets: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i, (x0, y0, x1, y1) in enumerate(boxes):
            for gx in range(math.floor(x0 / self.cell), math.floor(x1 / self.cell) + 1):
                for gy in range(math.floor(y0 / self.cell), math.floor(y1 / self.cell) + 1):
                    self.buckets[(gx, gy)].append(i)

    def candidates(self, pt) -> list[int]:
        key = (math.floor(pt[0] / self.cell), math.floor(pt[1] / self.cell))
        out = []
        for i in self.buckets.get(key, ()):
            x0, y0, x1, y1 = self.boxes[i]
            if x0 - 1e-9 <= pt[0] <= x1 + 1e-9 and y0 - 1e-9 <= pt[1] <= y1 + 1e-9:
                out.append(i)
        return out

    def containing(self, pt) -> int | None:
        """Index of the first ring (in input order) containing ``pt``."""
        for i in self.candidates(pt):
            if point_in_ring(pt, self.rings[i]):
                return i
        return None
