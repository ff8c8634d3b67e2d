"""Classical plantar-pressure characteristics.

Footprint geometry follows these conventions:

* the footprint mask keeps cells strictly above ``critical_fraction`` times
  the image maximum;
* the foot axis is the principal axis of the masked cell coordinates,
  signed to point along ``+y`` (the walking direction on the plate);
* "thirds" are equal slices of the masked extent along that axis
  (posterior, middle, anterior);
* the medial side is ``+x`` of the axis for a left foot and ``-x`` for a
  right foot.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .geometry import GeometryError, common_tangents, convex_hull
from .preprocess import (
    DEFAULT_CRITICAL_FRACTION,
    PressureImage,
    aggregate_average,
    aggregate_max,
    aggregate_sum,
)
from .recording import Foot, Recording

_TIE = 1e-9


class FeatureError(ValueError):
    pass


class Region(enum.IntEnum):
    OUTSIDE = 0
    HEEL = 1
    MM = 2  # medial midfoot
    MF = 3  # medial forefoot
    LM = 4  # lateral midfoot
    LF = 5  # lateral forefoot


REGIONS = (Region.HEEL, Region.MM, Region.MF, Region.LM, Region.LF)


@dataclass(frozen=True, eq=False)
class FootprintMask:
    mask: np.ndarray
    critical_value: float

    @property
    def area(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True, eq=False)
class RegionMap:
    assignment: np.ndarray  # (H, W) int, values of Region

    def area(self, region: Region) -> int:
        return int((self.assignment == region).sum())


@dataclass(frozen=True)
class CopPoint:
    frame_index: int
    x: float
    y: float
    total_pressure: float


@dataclass(frozen=True)
class FeatureSet:
    fpa_degrees: float  # toe-out positive for either foot
    arch_index: float
    pmi_percent: float
    cop_path_length: float
    cop_mean_lateral_offset: float
    pp_regional: tuple[float, ...]
    mp_regional: tuple[float, ...]
    pti_regional: tuple[float, ...]

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.fpa_degrees,
                self.arch_index,
                self.pmi_percent,
                self.cop_path_length,
                self.cop_mean_lateral_offset,
                *self.pp_regional,
                *self.mp_regional,
                *self.pti_regional,
            ],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


_REGION_NAMES = [r.name.lower() for r in REGIONS]
FOOT_FEATURE_NAMES = (
    ["fpa", "arch_index", "pmi", "cop_path_length", "cop_mean_lateral_offset"]
    + [f"pp_{n}" for n in _REGION_NAMES]
    + [f"mp_{n}" for n in _REGION_NAMES]
    + [f"pti_{n}" for n in _REGION_NAMES]
)
FEATURE_NAMES = [f"left_{n}" for n in FOOT_FEATURE_NAMES] + [f"right_{n}" for n in FOOT_FEATURE_NAMES]


def _cells(img) -> np.ndarray:
    return img.cells if isinstance(img, PressureImage) else np.asarray(img, dtype=np.float64)


def _foot_of(img, foot: Foot | None) -> Foot:
    if foot is not None:
        return Foot(foot)
    if isinstance(img, PressureImage):
        return img.foot
    return Foot.LEFT


def footprint_mask(img, critical_fraction: float = DEFAULT_CRITICAL_FRACTION) -> FootprintMask:
    if not 0.0 < critical_fraction < 1.0:
        raise ValueError("critical_fraction must lie in (0, 1)")
    cells = _cells(img)
    critical = critical_fraction * float(cells.max()) if cells.size else 0.0
    mask = cells > critical
    if critical <= 0:
        mask = np.zeros_like(mask)  # all-zero image: empty footprint
    return FootprintMask(mask, critical)


def _coords(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    return np.column_stack([xs, ys]).astype(np.float64)


def foot_axis(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(centroid, unit_axis)`` of the masked cells as ``(x, y)`` vectors."""
    pts = _coords(mask)
    if len(pts) == 0:
        raise FeatureError("empty footprint")
    centroid = pts.mean(axis=0)
    if len(pts) == 1:
        return centroid, np.array([0.0, 1.0])
    cov = np.cov((pts - centroid).T, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    if abs(evals[1] - evals[0]) <= 1e-9 * max(abs(evals[1]), 1.0):
        return centroid, np.array([0.0, 1.0])
    axis = evecs[:, 1]
    if axis[1] < 0 or (axis[1] == 0 and axis[0] < 0):
        axis = -axis
    return centroid, axis / np.linalg.norm(axis)


def medial_unit(axis: np.ndarray, foot: Foot) -> np.ndarray:
    # (ay, -ax) is +x when the axis is +y
    plus_x = np.array([axis[1], -axis[0]])
    return plus_x if foot is Foot.LEFT else -plus_x


def _thirds(s: np.ndarray) -> np.ndarray:
    """0/1/2 = posterior/middle/anterior slice of the axial coordinates ``s``."""
    lo, hi = s.min(), s.max()
    length = hi - lo
    if length <= _TIE:
        return np.zeros(s.shape, dtype=int)
    b1, b2 = lo + length / 3.0, lo + 2.0 * length / 3.0
    out = np.ones(s.shape, dtype=int)
    out[s < b1 - _TIE] = 0
    out[s >= b2 - _TIE] = 2
    return out


# ---------------------------------------------------------------------------
# foot progression angle


def boundary_points(cells: np.ndarray, critical: float) -> tuple[np.ndarray, np.ndarray]:
    """Footprint outline at sub-cell resolution.

    Returns ``(points, owners)``: masked cell centres plus the linearly
    interpolated crossings of the critical level between each masked cell
    and its unmasked 4-neighbours (outside the grid counts as 0). ``owners``
    holds the ``(row, col)`` of the masked cell each point belongs to.
    """
    padded = np.pad(np.asarray(cells, dtype=np.float64), 1)
    inside = padded > critical
    pts, owners = [], []
    ys, xs = np.nonzero(inside)
    pts.append(np.column_stack([xs - 1.0, ys - 1.0]))
    owners.append(np.column_stack([ys - 1, xs - 1]))
    for dy, dx in ((0, 1), (1, 0)):
        a = padded[: padded.shape[0] - dy, : padded.shape[1] - dx]
        b = padded[dy:, dx:]
        ia, ib = inside[: inside.shape[0] - dy, : inside.shape[1] - dx], inside[dy:, dx:]
        i, j = np.nonzero(ia != ib)
        va, vb = a[i, j], b[i, j]
        t = (critical - va) / (vb - va)
        pts.append(np.column_stack([j - 1 + t * dx, i - 1 + t * dy]))
        a_owns = ia[i, j]
        owners.append(np.column_stack([np.where(a_owns, i, i + dy) - 1, np.where(a_owns, j, j + dx) - 1]))
    return np.concatenate(pts), np.concatenate(owners).astype(np.intp)


def compute_fpa(img, critical_fraction: float = DEFAULT_CRITICAL_FRACTION) -> float:
    """Foot progression angle in image terms, degrees.

    The footprint is cut into thirds along its principal axis; the rearfoot
    and forefoot outlines are the boundary points owned by masked cells in
    the posterior and anterior thirds. The result is the mean angle of the
    two outer common tangents of their hulls, measured from ``+y`` and
    positive toward ``+x``.
    """
    fm = footprint_mask(img, critical_fraction)
    mask = fm.mask
    if not mask.any():
        raise FeatureError("empty footprint")
    centroid, axis = foot_axis(mask)
    third = np.full(mask.shape, -1, dtype=int)
    ys, xs = np.nonzero(mask)
    third[ys, xs] = _thirds((_coords(mask) - centroid) @ axis)
    points, owners = boundary_points(_cells(img), fm.critical_value)
    owner_third = third[owners[:, 0], owners[:, 1]]
    rear, fore = points[owner_third == 0], points[owner_third == 2]
    if len(rear) == 0:
        raise FeatureError("empty rearfoot")
    if len(fore) == 0:
        raise FeatureError("empty forefoot")
    medial, lateral = common_tangents(convex_hull(rear), convex_hull(fore))
    return 0.5 * (medial + lateral)


# ---------------------------------------------------------------------------
# arch index and regions


def exclude_toes(mask: np.ndarray) -> np.ndarray:
    """Drop small components (<10% of the largest) lying anterior to it."""
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n <= 1:
        return mask.copy()
    areas = ndimage.sum(mask, labels, index=np.arange(1, n + 1))
    main = int(np.argmax(areas)) + 1
    _, axis = foot_axis(labels == main)
    centroids = ndimage.center_of_mass(mask, labels, index=np.arange(1, n + 1))
    # center_of_mass returns (row, col)
    main_s = centroids[main - 1][1] * axis[0] + centroids[main - 1][0] * axis[1]
    keep = mask.copy()
    for idx in range(1, n + 1):
        if idx == main:
            continue
        cy, cx = centroids[idx - 1]
        anterior = cx * axis[0] + cy * axis[1] > main_s
        if areas[idx - 1] < 0.1 * areas[main - 1] and anterior:
            keep[labels == idx] = False
    return keep


def arch_index(img, critical_fraction: float = DEFAULT_CRITICAL_FRACTION) -> float:
    """Middle-third contact area over total contact area, toes excluded."""
    mask = footprint_mask(img, critical_fraction).mask
    if not mask.any():
        raise FeatureError("empty footprint")
    mask = exclude_toes(mask)
    return arch_index_of_mask(mask)


def arch_index_of_mask(mask: np.ndarray) -> float:
    centroid, axis = foot_axis(mask)
    s = (_coords(mask) - centroid) @ axis
    return float(np.count_nonzero(_thirds(s) == 1)) / len(s)


def region_map(img, critical_fraction: float = DEFAULT_CRITICAL_FRACTION, foot: Foot | None = None) -> RegionMap:
    mask = footprint_mask(img, critical_fraction).mask
    if not mask.any():
        raise FeatureError("empty footprint")
    return region_map_of_mask(mask, _foot_of(img, foot))


def region_map_of_mask(mask: np.ndarray, foot: Foot) -> RegionMap:
    centroid, axis = foot_axis(mask)
    rel = _coords(mask) - centroid
    third = _thirds(rel @ axis)
    medial = rel @ medial_unit(axis, foot) >= -_TIE
    ys, xs = np.nonzero(mask)
    assignment = np.zeros(mask.shape, dtype=np.int8)
    regions = np.where(
        third == 0,
        Region.HEEL,
        np.where(third == 1, np.where(medial, Region.MM, Region.LM), np.where(medial, Region.MF, Region.LF)),
    )
    assignment[ys, xs] = regions
    return RegionMap(assignment)


# ---------------------------------------------------------------------------
# impulse and centre of pressure


def pmi(r: Recording, critical_fraction: float = DEFAULT_CRITICAL_FRACTION, regions: RegionMap | None = None) -> float:
    """Percent of mid- and forefoot impulse carried by the medial regions."""
    total = aggregate_sum(r)
    impulse = total.cells * r.dt
    if regions is None:
        regions = region_map(total, critical_fraction, r.foot)
    a = regions.assignment
    medial = impulse[(a == Region.MM) | (a == Region.MF)].sum()
    lateral = impulse[(a == Region.LM) | (a == Region.LF)].sum()
    if medial + lateral <= 0:
        raise FeatureError("zero mid/forefoot impulse")
    return float(100.0 * (medial / (medial + lateral)))


def cop_trajectory(r: Recording) -> list[CopPoint]:
    frames = r.frames
    totals = frames.sum(axis=(1, 2))
    if not (totals > 0).any():
        raise FeatureError("all frames are zero")
    H, W = frames.shape[1:]
    xs = frames.sum(axis=1) @ np.arange(W, dtype=np.float64)
    ys = frames.sum(axis=2) @ np.arange(H, dtype=np.float64)
    return [
        CopPoint(k, float(xs[k] / totals[k]), float(ys[k] / totals[k]), float(totals[k]))
        for k in np.flatnonzero(totals > 0)
    ]


def cop_path_length(points: list[CopPoint]) -> float:
    if len(points) < 2:
        return 0.0
    xy = np.array([[p.x, p.y] for p in points])
    return float(np.sqrt((np.diff(xy, axis=0) ** 2).sum(axis=1)).sum())


def cop_mean_lateral_offset(points: list[CopPoint], centroid: np.ndarray, axis: np.ndarray) -> float:
    """Mean perpendicular distance of the COP from the foot-axis line."""
    xy = np.array([[p.x, p.y] for p in points])
    perp = np.array([axis[1], -axis[0]])
    return float(np.abs((xy - centroid) @ perp).mean())


# ---------------------------------------------------------------------------
# PP / MP / PTI


@dataclass(frozen=True, eq=False)
class PressureSummary:
    pp: PressureImage
    mp: PressureImage
    pti: PressureImage
    regions: RegionMap
    pp_regional: tuple[float, ...]
    mp_regional: tuple[float, ...]
    pti_regional: tuple[float, ...]


def regional_means(cells: np.ndarray, regions: RegionMap) -> tuple[float, ...]:
    out = []
    for region in REGIONS:
        sel = regions.assignment == region
        out.append(float(cells[sel].mean()) if sel.any() else 0.0)
    return tuple(out)


def pp_mp_pti(r: Recording, critical_fraction: float = DEFAULT_CRITICAL_FRACTION) -> PressureSummary:
    pp = aggregate_max(r)
    mp = aggregate_average(r)
    total = aggregate_sum(r)
    pti = PressureImage(total.kind, total.cells * r.dt, total.source)
    regions = region_map(total, critical_fraction, r.foot)
    return PressureSummary(
        pp,
        mp,
        pti,
        regions,
        regional_means(pp.cells, regions),
        regional_means(mp.cells, regions),
        regional_means(pti.cells, regions),
    )


# ---------------------------------------------------------------------------
# assembled features


def compute_features(r: Recording, critical_fraction: float = DEFAULT_CRITICAL_FRACTION) -> FeatureSet:
    total = aggregate_sum(r)
    mask = footprint_mask(total, critical_fraction).mask
    if not mask.any():
        raise FeatureError(f"{r.subject_id}/{r.foot.value}: empty footprint")
    try:
        fpa = compute_fpa(total, critical_fraction)
    except GeometryError as exc:
        raise FeatureError(f"foot progression angle: {exc}") from exc
    # image angle is +x-leaning; toe-out leans laterally, which is -x for a left foot
    toe_out = -fpa if r.foot is Foot.LEFT else fpa
    summary = pp_mp_pti(r, critical_fraction)
    cop = cop_trajectory(r)
    centroid, axis = foot_axis(mask)
    return FeatureSet(
        fpa_degrees=float(toe_out),
        arch_index=arch_index(total, critical_fraction),
        pmi_percent=pmi(r, critical_fraction, summary.regions),
        cop_path_length=cop_path_length(cop),
        cop_mean_lateral_offset=cop_mean_lateral_offset(cop, centroid, axis),
        pp_regional=summary.pp_regional,
        mp_regional=summary.mp_regional,
        pti_regional=summary.pti_regional,
    )


def feature_vector(left: Recording, right: Recording, critical_fraction: float = DEFAULT_CRITICAL_FRACTION) -> np.ndarray:
    """40 numbers: the left foot's 20 features then the right foot's.

    Order per foot follows ``FOOT_FEATURE_NAMES``.
    """
    if left.foot is not Foot.LEFT or right.foot is not Foot.RIGHT:
        raise ValueError("feature_vector expects (left, right) recordings")
    return np.concatenate(
        [compute_features(left, critical_fraction).vector(), compute_features(right, critical_fraction).vector()]
    )
