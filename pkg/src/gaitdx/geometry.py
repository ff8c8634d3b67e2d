"""Planar convex hulls and outer common tangents.

Points are ``(x, y)`` pairs. Orientation (counterclockwise) is taken in the
mathematical sense of those coordinates, i.e. positive signed area.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

Point = tuple[float, float]


class GeometryError(ValueError):
    pass


def cross(o: Point, a: Point, b: Point) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[Sequence[float]]) -> list[Point]:
    """Counterclockwise hull vertices (monotone chain), collinear points dropped.

    A single distinct point yields ``[p]``; collinear input yields its two
    extreme points.
    """
    pts = sorted(set((float(p[0]), float(p[1])) for p in points))
    if not pts:
        return []
    if len(pts) <= 2:
        return pts

    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and hull[0] == hull[1]:
        return hull[:1]
    return hull


def polygon_centroid(poly: Sequence[Point]) -> Point:
    """Vertex mean; sufficient for deciding which side of a line a hull lies on."""
    arr = np.asarray(poly, dtype=np.float64)
    c = arr.mean(axis=0)
    return float(c[0]), float(c[1])


def _axes(poly: Sequence[Point]) -> list[Point]:
    n = len(poly)
    if n == 1:
        return []
    axes = []
    edges = [(poly[i], poly[(i + 1) % n]) for i in range(n if n > 2 else 1)]
    for a, b in edges:
        ex, ey = b[0] - a[0], b[1] - a[1]
        axes.append((-ey, ex))
        if n == 2:
            axes.append((ex, ey))
    return axes


def hulls_overlap(a: Sequence[Point], b: Sequence[Point]) -> bool:
    """Separating-axis test; touching hulls count as overlapping."""
    axes = _axes(a) + _axes(b)
    if len(a) == 1 and len(b) == 1:
        if a[0] == b[0]:
            return True
        axes.append((b[0][0] - a[0][0], b[0][1] - a[0][1]))
    elif not axes:
        return True
    for ax, ay in axes:
        pa = [p[0] * ax + p[1] * ay for p in a]
        pb = [p[0] * ax + p[1] * ay for p in b]
        if max(pa) < min(pb) or max(pb) < min(pa):
            return False
    return True


def bridge_lines(rear: Sequence[Point], fore: Sequence[Point]) -> list[tuple[Point, Point]]:
    """The two outer common tangents of disjoint hulls as ``(rear_pt, fore_pt)``.

    They are exactly the edges of the hull of the union that join a vertex
    of one hull to a vertex of the other.
    """
    tagged: dict[Point, int] = {}
    for p in rear:
        tagged[(float(p[0]), float(p[1]))] = 0
    for p in fore:
        tagged[(float(p[0]), float(p[1]))] = 1
    hull = convex_hull(tagged.keys())
    n = len(hull)
    lines = []
    for i in range(n):
        p, q = hull[i], hull[(i + 1) % n]
        if tagged[p] != tagged[q]:
            lines.append((p, q) if tagged[p] == 0 else (q, p))
    if len(lines) != 2:
        raise GeometryError(f"expected 2 outer common tangents, found {len(lines)}")
    return lines


def line_angle_deg(rear_pt: Point, fore_pt: Point) -> float:
    """Angle of the rear->fore direction relative to the ``+y`` (anterior) axis.

    Positive when the line leans toward ``+x``.
    """
    dx, dy = fore_pt[0] - rear_pt[0], fore_pt[1] - rear_pt[1]
    return math.degrees(math.atan2(dx, dy))


def common_tangents(
    rear_hull: Sequence[Point], fore_hull: Sequence[Point], medial_positive_x: bool = True
) -> tuple[float, float]:
    """Return ``(medial_angle_deg, lateral_angle_deg)`` of the outer tangents.

    The medial tangent is the one on the ``+x`` side of the rear-to-fore
    centroid line when ``medial_positive_x`` (left foot), else the ``-x`` side.
    """
    if not rear_hull or not fore_hull:
        raise GeometryError("common tangents need two nonempty hulls")
    if hulls_overlap(rear_hull, fore_hull):
        raise GeometryError("rearfoot and forefoot hulls overlap")
    lines = bridge_lines(rear_hull, fore_hull)
    c_rear, c_fore = polygon_centroid(rear_hull), polygon_centroid(fore_hull)

    def on_plus_x(line):
        mid = ((line[0][0] + line[1][0]) / 2, (line[0][1] + line[1][1]) / 2)
        # right of the rear->fore direction, which is +x when heading +y
        return cross(c_rear, c_fore, mid) < 0

    plus = [ln for ln in lines if on_plus_x(ln)]
    minus = [ln for ln in lines if not on_plus_x(ln)]
    if len(plus) != 1 or len(minus) != 1:
        # collinear configuration: both tangents coincide with the centroid line
        plus, minus = lines[:1], lines[1:]
    medial, lateral = (plus[0], minus[0]) if medial_positive_x else (minus[0], plus[0])
    return line_angle_deg(*medial), line_angle_deg(*lateral)
