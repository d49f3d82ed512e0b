"""Planar polygon primitives used by the scene model.

All polygons are (V, 2) float arrays of vertices in order, implicitly closed.
Point containment is boundary-inclusive (points within BOUNDARY_EPS of an
edge count as inside); the *_strict variants exclude the boundary.  Every
query has a vectorized form over an (N, 2) point array; scalar callers go
through the same code path so results are bit-identical.
"""

from __future__ import annotations

import numpy as np

BOUNDARY_EPS = 1e-9


def as_polygon(vertices) -> np.ndarray:
    poly = np.asarray(vertices, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise ValueError("polygon must be an (V>=3, 2) array")
    return poly


def polygon_signed_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise vertex order."""
    x, y = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    return float(0.5 * np.sum(x * y2 - x2 * y))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    """Area centroid. Falls back to the vertex mean for near-zero area."""
    x, y = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x, -1), np.roll(y, -1)
    cross = x * y2 - x2 * y
    area = 0.5 * np.sum(cross)
    if abs(area) < 1e-12:
        return poly.mean(axis=0)
    cx = np.sum((x + x2) * cross) / (6.0 * area)
    cy = np.sum((y + y2) * cross) / (6.0 * area)
    return np.array([cx, cy])


def polygon_bounds(poly: np.ndarray) -> tuple[float, float, float, float]:
    return (
        float(poly[:, 0].min()),
        float(poly[:, 1].min()),
        float(poly[:, 0].max()),
        float(poly[:, 1].max()),
    )


def points_to_boundary_distance(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest polygon edge. (N,) for (N, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dist = np.full(pts.shape[0], np.inf)
    nxt = np.roll(poly, -1, axis=0)
    for a, b in zip(poly, nxt):
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-30:
            d = np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1])
        else:
            t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
            d = np.hypot(pts[:, 0] - proj[:, 0], pts[:, 1] - proj[:, 1])
        np.minimum(dist, d, out=dist)
    return dist


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Boundary-inclusive containment mask for an (N, 2) point array.

    Crossing-number test with the half-open vertex convention, plus an
    explicit on-boundary check so edge and vertex points count as inside.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x = pts[:, 0:1]
    y = pts[:, 1:2]
    x1 = poly[None, :, 0]
    y1 = poly[None, :, 1]
    x2 = np.roll(poly[:, 0], -1)[None, :]
    y2 = np.roll(poly[:, 1], -1)[None, :]

    crosses = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (y - y1) / (y2 - y1)
        xint = x1 + t * (x2 - x1)
    hit = crosses & (x < xint)
    inside = (np.count_nonzero(hit, axis=1) % 2) == 1
    on_edge = points_to_boundary_distance(pts, poly) <= BOUNDARY_EPS
    return inside | on_edge


def points_in_polygon_strict(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Containment mask excluding points on (or within eps of) the boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    inside = points_in_polygon(pts, poly)
    on_edge = points_to_boundary_distance(pts, poly) <= BOUNDARY_EPS
    return inside & ~on_edge


def point_in_polygon(point, poly: np.ndarray) -> bool:
    return bool(points_in_polygon(np.asarray(point, dtype=np.float64)[None, :], poly)[0])


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p, eps=BOUNDARY_EPS) -> bool:
    """p collinear with a-b assumed; is p within the segment's bounding box?"""
    return (
        min(a[0], b[0]) - eps <= p[0] <= max(a[0], b[0]) + eps
        and min(a[1], b[1]) - eps <= p[1] <= max(a[1], b[1]) + eps
    )


def segments_intersect(p1, p2, q1, q2) -> bool:
    """True if segments touch or cross anywhere (endpoints included)."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True
    if abs(d1) <= BOUNDARY_EPS and _on_segment(q1, q2, p1):
        return True
    if abs(d2) <= BOUNDARY_EPS and _on_segment(q1, q2, p2):
        return True
    if abs(d3) <= BOUNDARY_EPS and _on_segment(p1, p2, q1):
        return True
    if abs(d4) <= BOUNDARY_EPS and _on_segment(p1, p2, q2):
        return True
    return False


def segments_properly_cross(p1, p2, q1, q2) -> bool:
    """True only if the segment interiors cross (touching does not count)."""
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    return ((d1 > BOUNDARY_EPS and d2 < -BOUNDARY_EPS) or (d1 < -BOUNDARY_EPS and d2 > BOUNDARY_EPS)) and (
        (d3 > BOUNDARY_EPS and d4 < -BOUNDARY_EPS) or (d3 < -BOUNDARY_EPS and d4 > BOUNDARY_EPS)
    )


def polygon_is_simple(poly: np.ndarray) -> bool:
    """No repeated vertices, no zero-length edges, no non-adjacent edge contact."""
    n = poly.shape[0]
    if n < 3:
        return False
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n)]
    for a, b in edges:
        if np.hypot(b[0] - a[0], b[1] - a[1]) <= BOUNDARY_EPS:
            return False
    for i in range(n):
        for j in range(i + 1, n):
            adjacent = j == i + 1 or (i == 0 and j == n - 1)
            a, b = edges[i]
            c, d = edges[j]
            if adjacent:
                # Shared endpoint is fine; collinear overlap beyond it is not.
                shared = b if j == i + 1 else a
                other_i = a if j == i + 1 else b
                other_j = d if j == i + 1 else c
                if abs(_orient(other_i, shared, other_j)) <= BOUNDARY_EPS and _on_segment(
                    other_i, other_j, shared
                ):
                    # The three points are collinear with the shared vertex
                    # between the two outer ones -> edges fold back on
                    # themselves only if the outer points lie on the same side.
                    v1 = other_i - shared
                    v2 = other_j - shared
                    if v1 @ v2 > 0:
                        return False
                continue
            if segments_intersect(a, b, c, d):
                return False
    return True


def polygon_contains_polygon(outer: np.ndarray, inner: np.ndarray) -> bool:
    """Inner lies inside outer; touching the outer boundary is allowed."""
    if not bool(points_in_polygon(inner, outer).all()):
        return False
    n_out = outer.shape[0]
    n_in = inner.shape[0]
    for i in range(n_in):
        a, b = inner[i], inner[(i + 1) % n_in]
        for j in range(n_out):
            c, d = outer[j], outer[(j + 1) % n_out]
            if segments_properly_cross(a, b, c, d):
                return False
    return True


def polygons_overlap(p: np.ndarray, q: np.ndarray) -> bool:
    """Interiors intersect; edge-to-edge touching does not count as overlap."""
    np_, nq = p.shape[0], q.shape[0]
    for i in range(np_):
        a, b = p[i], p[(i + 1) % np_]
        for j in range(nq):
            c, d = q[j], q[(j + 1) % nq]
            if segments_properly_cross(a, b, c, d):
                return True
    if points_in_polygon_strict(p, q).any():
        return True
    if points_in_polygon_strict(q, p).any():
        return True
    return False


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def wrap_angle(angle):
    """Wrap to [0, 2*pi). Values already in range pass through unchanged."""
    two_pi = 2.0 * np.pi
    wrapped = np.mod(angle, two_pi)
    # mod can return 2*pi itself for tiny negative inputs
    return np.where(wrapped >= two_pi, 0.0, wrapped) if isinstance(wrapped, np.ndarray) else (
        0.0 if wrapped >= two_pi else wrapped
    )


def angle_difference(a, b):
    """Unsigned difference between two angles, in [0, pi]."""
    d = np.abs(np.mod(a - b + np.pi, 2.0 * np.pi) - np.pi)
    return d
