"""Shared 2D geometry helpers: angles, frames, ray casting."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    t = math.fmod(theta, TWO_PI)
    if t <= -math.pi:
        t += TWO_PI
    elif t > math.pi:
        t -= TWO_PI
    return t


def rot2(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def world_to_body(pose: tuple[float, float, float], point_xy) -> np.ndarray:
    """Express a world-frame 2D point in the body frame of `pose` (x, y, theta)."""
    x, y, th = pose
    d = np.asarray(point_xy, dtype=float) - np.array([x, y])
    c, s = math.cos(th), math.sin(th)
    return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])


def body_to_world(pose: tuple[float, float, float], point_xy) -> np.ndarray:
    x, y, th = pose
    p = np.asarray(point_xy, dtype=float)
    c, s = math.cos(th), math.sin(th)
    return np.array([x + c * p[0] - s * p[1], y + s * p[0] + c * p[1]])


def rectangle_segments(x0: float, y0: float, x1: float, y1: float) -> list:
    """Axis-aligned rectangle boundary as 4 segments, counter-clockwise."""
    return [
        ((x0, y0), (x1, y0)),
        ((x1, y0), (x1, y1)),
        ((x1, y1), (x0, y1)),
        ((x0, y1), (x0, y0)),
    ]


def segments_to_array(segments) -> np.ndarray:
    """Pack [((ax,ay),(bx,by)), ...] into an (M, 4) float array."""
    if not segments:
        return np.zeros((0, 4))
    return np.array([[a[0], a[1], b[0], b[1]] for a, b in segments], dtype=float)


_EPS = 1e-12


def raycast(origin, angles: np.ndarray, segments: np.ndarray, max_range: float) -> np.ndarray:
    """Cast rays from `origin` at world-frame `angles` against (M,4) segments.

    Returns one range per angle; `max_range` is the no-hit sentinel. Vectorized
    over the full beams x segments grid (scenes are small enough that no
    acceleration structure is warranted).
    """
    n = len(angles)
    out = np.full(n, max_range, dtype=float)
    if segments.shape[0] == 0:
        return out
    ox, oy = float(origin[0]), float(origin[1])
    dx = np.cos(angles)[:, None]          # (N,1)
    dy = np.sin(angles)[:, None]
    ax = segments[None, :, 0]             # (1,M)
    ay = segments[None, :, 1]
    ex = (segments[:, 2] - segments[:, 0])[None, :]
    ey = (segments[:, 3] - segments[:, 1])[None, :]
    denom = dx * ey - dy * ex
    rx = ax - ox
    ry = ay - oy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rx * ey - ry * ex) / denom
        u = (rx * dy - ry * dx) / denom
    valid = (np.abs(denom) > _EPS) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    best = t.min(axis=1)
    hit = best <= max_range
    out[hit] = best[hit]
    return out


def segment_blocks(p, q, segments: np.ndarray, skip: slice | None = None) -> bool:
    """True if the open segment p->q crosses any of the given segments.

    `skip` optionally excludes a contiguous row range (e.g. the segments that
    belong to the object being sighted).
    """
    if segments.shape[0] == 0:
        return False
    if skip is not None:
        keep = np.ones(segments.shape[0], dtype=bool)
        keep[skip] = False
        segments = segments[keep]
        if segments.shape[0] == 0:
            return False
    px, py = float(p[0]), float(p[1])
    dx = float(q[0]) - px
    dy = float(q[1]) - py
    ax = segments[:, 0]
    ay = segments[:, 1]
    ex = segments[:, 2] - segments[:, 0]
    ey = segments[:, 3] - segments[:, 1]
    denom = dx * ey - dy * ex
    rx = ax - px
    ry = ay - py
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rx * ey - ry * ex) / denom
        u = (rx * dy - ry * dx) / denom
    valid = (np.abs(denom) > _EPS) & (t > 1e-9) & (t < 1.0 - 1e-9) & (u >= 0.0) & (u <= 1.0)
    return bool(valid.any())


def point_in_rect(p, x0: float, y0: float, x1: float, y1: float) -> bool:
    return x0 <= p[0] <= x1 and y0 <= p[1] <= y1
