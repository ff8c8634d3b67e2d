"""Frame aggregation, orientation normalization and grayscale conversion."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .recording import Foot, Label, Recording, validate

DEFAULT_SIDE = 64
DEFAULT_CRITICAL_FRACTION = 0.05


class ImageKind(enum.Enum):
    MAX = "max"
    SUM = "sum"
    AVERAGE = "average"


class EmptyFootprintError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PressureImage:
    kind: ImageKind
    cells: np.ndarray
    source: tuple[str, Foot]

    @property
    def foot(self) -> Foot:
        return self.source[1]


@dataclass(frozen=True, eq=False)
class GrayscaleImage:
    pixels: np.ndarray  # (side, side) uint8

    @property
    def side(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GrayscaleImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(eq=False)
class CaseBundle:
    """One measurement case: six grayscale images keyed by ``(kind, foot)``."""

    subject_id: str
    label: Label
    images: dict[tuple[ImageKind, Foot], GrayscaleImage]
    case_id: str = ""
    features: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.images) != 6:
            raise ValueError(f"a case needs 6 images, got {len(self.images)}")
        sides = {img.side for img in self.images.values()}
        if len(sides) != 1:
            raise ValueError(f"case images must share one side, got {sorted(sides)}")

    @property
    def side(self) -> int:
        return next(iter(self.images.values())).side

    def pair(self, kind: ImageKind) -> np.ndarray:
        """Left and right images of ``kind`` stacked as a ``(2, S, S)`` array."""
        try:
            left = self.images[(kind, Foot.LEFT)]
            right = self.images[(kind, Foot.RIGHT)]
        except KeyError as exc:
            raise KeyError(f"case {self.subject_id}/{self.case_id} lacks image {exc}") from None
        return np.stack([left.pixels, right.pixels]).astype(np.float64)


def _checked(r: Recording) -> np.ndarray:
    problems = validate(r)
    if problems:
        raise ValueError("invalid recording: " + "; ".join(problems[:3]))
    return r.frames


def aggregate_max(r: Recording) -> PressureImage:
    return PressureImage(ImageKind.MAX, _checked(r).max(axis=0), (r.subject_id, r.foot))


def _sum_in_order(frames: np.ndarray) -> np.ndarray:
    # frame-by-frame accumulation: the rounding is fixed by frame order alone,
    # unlike ndarray.sum whose pairwise scheme depends on memory layout
    total = np.zeros(frames.shape[1:], dtype=np.float64)
    for frame in frames:
        total += frame
    return total


def aggregate_sum(r: Recording) -> PressureImage:
    return PressureImage(ImageKind.SUM, _sum_in_order(_checked(r)), (r.subject_id, r.foot))


def nonzero_count(r: Recording) -> np.ndarray:
    """Per-cell number of frames with a nonzero reading."""
    return np.count_nonzero(_checked(r), axis=0)


def aggregate_average(r: Recording) -> PressureImage:
    """Per-cell mean over the frames where that cell is nonzero (0 if never)."""
    frames = _checked(r)
    total = _sum_in_order(frames)
    counts = np.count_nonzero(frames, axis=0)
    cells = np.zeros_like(total)
    hit = counts > 0
    cells[hit] = total[hit] / counts[hit]
    return PressureImage(ImageKind.AVERAGE, cells, (r.subject_id, r.foot))


AGGREGATORS = {
    ImageKind.MAX: aggregate_max,
    ImageKind.SUM: aggregate_sum,
    ImageKind.AVERAGE: aggregate_average,
}


# ---------------------------------------------------------------------------
# resampling


def bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` (``(..., H, W)``) at fractional ``(ys, xs)``.

    Outside the grid the image is treated as zero, so values fade to 0 over
    one cell beyond the border.
    """
    H, W = img.shape[-2:]
    padded = np.pad(img, [(0, 0)] * (img.ndim - 2) + [(1, 1), (1, 1)])
    y = np.clip(np.asarray(ys, dtype=np.float64) + 1.0, 0.0, H + 1.0)
    x = np.clip(np.asarray(xs, dtype=np.float64) + 1.0, 0.0, W + 1.0)
    y0 = np.minimum(np.floor(y).astype(np.intp), H)
    x0 = np.minimum(np.floor(x).astype(np.intp), W)
    fy, fx = y - y0, x - x0
    top = padded[..., y0, x0] * (1 - fx) + padded[..., y0, x0 + 1] * fx
    bottom = padded[..., y0 + 1, x0] * (1 - fx) + padded[..., y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bottom * fy


def rotate(img: np.ndarray, angle_deg: float, center: tuple[float, float]) -> np.ndarray:
    """Rotate the trailing ``(H, W)`` plane(s) by ``angle_deg`` about ``center=(x, y)``.

    Positive angles turn a ``+y`` pointing direction toward ``+x``, so the
    tangent angles reported by :mod:`gaitdx.geometry` grow by ``angle_deg``.
    Bilinear, clipped at 0.
    """
    H, W = img.shape[-2:]
    cx, cy = center
    th = math.radians(angle_deg)
    c, s = math.cos(th), math.sin(th)
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    X, Y = xx - cx, yy - cy
    src_x = cx + X * c - Y * s
    src_y = cy + X * s + Y * c
    return np.maximum(bilinear_sample(img, src_y, src_x), 0.0)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Pixel-centre aligned bilinear resize with edge clamping."""
    h, w = img.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    return bilinear_sample(img, ys[:, None], xs[None, :])


def fit_to_canvas(cells: np.ndarray, side: int) -> np.ndarray:
    """Crop to the nonzero bounding box and fit into ``side x side``, centred."""
    canvas = np.zeros((side, side), dtype=np.float64)
    rows = np.flatnonzero(cells.any(axis=1))
    if rows.size == 0:
        return canvas
    cols = np.flatnonzero(cells.any(axis=0))
    crop = cells[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    h, w = crop.shape
    scale = side / max(h, w)
    nh = min(side, max(1, int(math.floor(h * scale + 0.5))))
    nw = min(side, max(1, int(math.floor(w * scale + 0.5))))
    top, left = (side - nh) // 2, (side - nw) // 2
    canvas[top : top + nh, left : left + nw] = resize_bilinear(crop, nh, nw)
    return canvas


def to_grayscale(img: PressureImage | np.ndarray, side: int = DEFAULT_SIDE) -> GrayscaleImage:
    """Brighter pixels for larger values; the image maximum maps to 255."""
    if side < 1:
        raise ValueError("side must be >= 1")
    cells = img.cells if isinstance(img, PressureImage) else np.asarray(img, dtype=np.float64)
    canvas = fit_to_canvas(cells, side)
    peak = canvas.max()
    if peak <= 0:
        return GrayscaleImage(np.zeros((side, side), dtype=np.uint8))
    pixels = np.floor(255.0 * canvas / peak + 0.5)
    return GrayscaleImage(np.clip(pixels, 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# orientation


def normalize_orientation(
    r: Recording, critical_fraction: float = DEFAULT_CRITICAL_FRACTION
) -> Recording:
    """Rotate every frame about the footprint centroid so the FPA becomes 0."""
    from .features import compute_fpa, footprint_mask

    total = aggregate_sum(r)
    mask = footprint_mask(total, critical_fraction).mask
    if not mask.any():
        raise EmptyFootprintError(f"{r.subject_id}/{r.foot.value}: no cell exceeds the critical value")
    fpa = compute_fpa(total, critical_fraction)
    ys, xs = np.nonzero(mask)
    frames = rotate(r.frames, -fpa, (xs.mean(), ys.mean()))
    return r.with_frames(frames)


def build_case(
    left: Recording,
    right: Recording,
    side: int = DEFAULT_SIDE,
    critical_fraction: float = DEFAULT_CRITICAL_FRACTION,
    orient: bool = True,
    case_id: str = "",
) -> CaseBundle:
    if left.subject_id != right.subject_id:
        raise ValueError(f"subject mismatch: {left.subject_id!r} vs {right.subject_id!r}")
    if left.label is not right.label:
        raise ValueError(f"label mismatch for {left.subject_id}: {left.label.value} vs {right.label.value}")
    if left.foot is not Foot.LEFT or right.foot is not Foot.RIGHT:
        raise ValueError("build_case expects (left, right) recordings")
    images = {}
    for rec in (left, right):
        if orient:
            rec = normalize_orientation(rec, critical_fraction)
        elif not (rec.frames > 0).any():
            raise EmptyFootprintError(f"{rec.subject_id}/{rec.foot.value}: empty recording")
        for kind, aggregate in AGGREGATORS.items():
            images[(kind, rec.foot)] = to_grayscale(aggregate(rec), side)
    return CaseBundle(left.subject_id, left.label, images, case_id)
