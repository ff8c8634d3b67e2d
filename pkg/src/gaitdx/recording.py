"""Plantar-pressure recordings: data model, PPR text I/O, validation and a
seeded synthetic gait generator.

Grid convention used throughout the package: a frame is an ``(H, W)`` array,
row index ``i`` is the ``y`` coordinate and column index ``j`` is ``x``.
Walking direction on the plate is ``+y`` (heel at low rows, toes at high
rows). For a left foot the medial side is ``+x``; right feet are mirrored.

Randomness: every draw comes from numpy's ``PCG64`` bit generator seeded
through ``SeedSequence(seed, spawn_key=(stream,))``. Stream 0 assigns labels,
stream ``1 + s`` drives subject ``s``. PCG64 and SeedSequence are fully
specified, so datasets are reproducible across platforms.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

PPR_MAGIC = "ppr"
PPR_VERSION = 1


class Foot(enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class Label(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNKNOWN = "unknown"


class PPRError(ValueError):
    """Base class for PPR parse failures; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MalformedHeaderError(PPRError):
    pass


class DimensionMismatchError(PPRError):
    pass


class NegativeValueError(PPRError):
    pass


class TruncatedFrameError(PPRError):
    pass


@dataclass(frozen=True, eq=False)
class Recording:
    """A time-ordered stack of pressure frames, ``frames.shape == (K, H, W)``."""

    frames: np.ndarray
    sample_rate_hz: float
    subject_id: str
    foot: Foot
    label: Label = Label.UNKNOWN

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3:
            raise ValueError(f"frames must be 3-D (K, H, W), got shape {frames.shape}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "foot", Foot(self.foot))
        object.__setattr__(self, "label", Label(self.label))

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def grid_height(self) -> int:
        return self.frames.shape[1]

    @property
    def grid_width(self) -> int:
        return self.frames.shape[2]

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate_hz

    def with_frames(self, frames: np.ndarray) -> "Recording":
        return Recording(frames, self.sample_rate_hz, self.subject_id, self.foot, self.label)

    def __eq__(self, other):
        if not isinstance(other, Recording):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.foot is other.foot
            and self.label is other.label
            and self.sample_rate_hz == other.sample_rate_hz
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )

    __hash__ = None


@dataclass(frozen=True)
class SubjectMeta:
    subject_id: str
    label: Label
    walk_count: int
    # generator ground truth, kept for inspection; not used by any model
    affected_foot: Foot | None = None
    lateral_offset: float = 0.0
    forefoot_scale: float = 1.0

    def __post_init__(self):
        if self.walk_count < 1:
            raise ValueError("walk_count must be >= 1")


def validate(r: Recording) -> list[str]:
    """Return invariant violations of ``r``; empty list means valid."""
    problems = []
    frames = r.frames
    if frames.shape[0] == 0:
        problems.append("frames: empty frame sequence")
    if frames.shape[1] < 1 or frames.shape[2] < 1:
        problems.append(f"grid: non-positive dimensions {frames.shape[2]}x{frames.shape[1]}")
    if not r.subject_id:
        problems.append("subject_id: empty")
    elif any(ch.isspace() for ch in r.subject_id):
        problems.append("subject_id: contains whitespace")
    if not (math.isfinite(r.sample_rate_hz) and r.sample_rate_hz > 0):
        problems.append(f"sample_rate_hz: must be positive, got {r.sample_rate_hz}")
    bad = ~np.isfinite(frames)
    for k, i, j in np.argwhere(bad):
        problems.append(f"frames[k={k}, i={i}, j={j}]: non-finite value")
    for k, i, j in np.argwhere(frames < 0):
        problems.append(f"frames[k={k}, i={i}, j={j}]: negative value {frames[k, i, j]!r}")
    return problems


# ---------------------------------------------------------------------------
# PPR text format


def _format_value(v: float) -> str:
    # repr() is the shortest string that round-trips a double exactly
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def save_recording(r: Recording, path) -> None:
    problems = validate(r)
    if problems:
        raise ValueError("refusing to save invalid recording: " + "; ".join(problems[:5]))
    K, H, W = r.frames.shape
    lines = [
        f"{PPR_MAGIC} {PPR_VERSION}",
        f"{W} {H} {K} {r.sample_rate_hz!r}",
        f"{r.subject_id} {r.foot.value} {r.label.value}",
    ]
    for frame in r.frames.tolist():
        for row in frame:
            lines.append(" ".join(_format_value(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def load_recording(path) -> Recording:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_recording(text)


def parse_recording(text: str) -> Recording:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def line_at(n: int) -> str:
        if n > len(lines):
            raise MalformedHeaderError("unexpected end of file in header", n)
        return lines[n - 1].rstrip("\r")

    magic = line_at(1).split()
    if len(magic) != 2 or magic[0] != PPR_MAGIC:
        raise MalformedHeaderError(f"expected '{PPR_MAGIC} {PPR_VERSION}'", 1)
    if magic[1] != str(PPR_VERSION):
        raise MalformedHeaderError(f"unsupported version {magic[1]!r}", 1)

    dims = line_at(2).split()
    if len(dims) != 4:
        raise MalformedHeaderError("expected 'W H K sample_rate_hz'", 2)
    try:
        W, H, K = (int(tok) for tok in dims[:3])
        rate = float(dims[3])
    except ValueError:
        raise MalformedHeaderError("non-numeric grid or rate field", 2) from None
    if W < 1 or H < 1 or K < 1:
        raise MalformedHeaderError("W, H and K must be positive", 2)
    if not (math.isfinite(rate) and rate > 0):
        raise MalformedHeaderError("sample rate must be positive", 2)

    meta = line_at(3).split()
    if len(meta) != 3:
        raise MalformedHeaderError("expected 'subject_id foot label'", 3)
    subject_id, foot_tok, label_tok = meta
    try:
        foot = Foot(foot_tok)
    except ValueError:
        raise MalformedHeaderError(f"unknown foot {foot_tok!r}", 3) from None
    try:
        label = Label(label_tok)
    except ValueError:
        raise MalformedHeaderError(f"unknown label {label_tok!r}", 3) from None

    frames = np.empty((K, H, W), dtype=np.float64)
    n = 3
    for k in range(K):
        for i in range(H):
            n += 1
            if n > len(lines) or not lines[n - 1].strip():
                raise TruncatedFrameError(
                    f"frame {k} has {i} of {H} rows", min(n, len(lines) + 1)
                )
            toks = lines[n - 1].split()
            if len(toks) != W:
                raise DimensionMismatchError(f"expected {W} values, found {len(toks)}", n)
            try:
                row = [float(t) for t in toks]
            except ValueError:
                raise DimensionMismatchError("non-numeric value", n) from None
            for v in row:
                if not math.isfinite(v):
                    raise NegativeValueError(f"non-finite value {v!r}", n)
                if v < 0:
                    raise NegativeValueError(f"negative value {v!r}", n)
            frames[k, i] = row
    if n < len(lines) and any(line.strip() for line in lines[n:]):
        raise DimensionMismatchError(f"trailing data after {K} frames", n + 1)
    return Recording(frames, rate, subject_id, foot, label)


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SynthConfig:
    grid_width: int = 32
    grid_height: int = 32
    frame_count: int = 160
    sample_rate_hz: float = 100.0
    # class signal, applied to the affected foot of positive subjects
    lateral_offset_range: tuple[float, float] = (1.5, 3.0)
    forefoot_scale_range: tuple[float, float] = (0.6, 0.8)
    affected_side: str = "random"  # "left", "right" or "random" per subject
    # sensor model
    noise_low: float = 0.9
    noise_high: float = 1.1
    sensor_noise: float = 1.0
    sensor_floor: float = 1.0
    resolution: float = 0.1  # power of ten

    def __post_init__(self):
        if self.affected_side not in ("left", "right", "random"):
            raise ValueError(f"affected_side must be left/right/random, got {self.affected_side!r}")
        if self.grid_width < 16 or self.grid_height < 16:
            raise ValueError("synthetic grid must be at least 16x16")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")


def subject_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream,))))


@dataclass
class _FootModel:
    length: float
    width: float
    arch: float  # fraction of the midfoot width in contact, lateral side
    toe_out_deg: float
    heel_x: float
    heel_y: float
    body_weight: float
    lateral_offset: float
    forefoot_scale: float
    cop_bias: float
    stance_shape: float
    gains: np.ndarray = field(default_factory=lambda: np.ones(4))


def _soft_ellipse(u, v, cu, cv, au, av):
    d2 = ((u - cu) / au) ** 2 + ((v - cv) / av) ** 2
    return np.exp(-(d2**2))


def _render_left_foot(m: _FootModel, cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Render one left-foot rollout as a (K, H, W) array."""
    H, W, K = cfg.grid_height, cfg.grid_width, cfg.frame_count
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    theta = math.radians(-m.toe_out_deg)  # left toe-out points toward -x
    ax, ay = math.sin(theta), math.cos(theta)
    dx, dy = xx - m.heel_x, yy - m.heel_y
    v = dx * ax + dy * ay  # along the foot, heel -> toe
    u = dx * ay - dy * ax  # across the foot, medial positive

    L, Wd = m.length, m.width
    heel = _soft_ellipse(u, v, 0.0, 0.14 * L, 0.26 * Wd, 0.15 * L)
    # lateral border sits just inside the heel-to-forefoot line
    mid_half = 0.4 * Wd * m.arch
    mid_center = -0.33 * Wd + mid_half
    midfoot = _soft_ellipse(u, v, mid_center, 0.43 * L, max(mid_half, 0.6), 0.17 * L)
    fore = _soft_ellipse(u, v, 0.04 * Wd, 0.71 * L, 0.5 * Wd, 0.12 * L)
    toes = _soft_ellipse(u, v, 0.12 * Wd, 0.92 * L, 0.42 * Wd, 0.055 * L)
    g = m.gains
    capacity = np.maximum.reduce([g[0] * heel, g[1] * midfoot, g[2] * fore, g[3] * toes])

    ff = 1.0 - (1.0 - m.forefoot_scale) / (1.0 + np.exp(-(v - 0.6 * L) / 0.8))

    phase = (np.arange(K) + 0.5) / K
    # monotone heel -> toe travel of the loading centre
    travel = phase + m.stance_shape * np.sin(2 * math.pi * phase) / (2 * math.pi)
    vc = (0.08 + 0.86 * travel) * L
    uc = m.cop_bias - 0.15 * Wd + 0.3 * Wd * phase - m.lateral_offset
    amp = 0.7 + 0.3 * (
        np.exp(-(((phase - 0.2) / 0.12) ** 2)) + np.exp(-(((phase - 0.78) / 0.12) ** 2))
    )
    ramp = np.minimum(1.0, np.minimum(phase, 1.0 - phase) / 0.06)
    amp = m.body_weight * amp * ramp

    sig_v, sig_u = 0.24 * L, 0.55 * Wd
    load = np.exp(
        -((v[None] - vc[:, None, None]) ** 2) / (2 * sig_v**2)
        - ((u[None] - uc[:, None, None]) ** 2) / (2 * sig_u**2)
    )
    p = amp[:, None, None] * (capacity * ff)[None] * load
    p = p * rng.uniform(cfg.noise_low, cfg.noise_high, size=p.shape)
    p = p + rng.uniform(-cfg.sensor_noise, cfg.sensor_noise, size=p.shape) - cfg.sensor_floor
    p = np.maximum(p, 0.0)
    decimals = max(0, int(round(-math.log10(cfg.resolution))))
    return np.round(p, decimals)


def _draw_subject(rng, cfg: SynthConfig, positive: bool):
    length = rng.uniform(0.66, 0.8) * cfg.grid_height
    base = dict(
        length=length,
        width=length * rng.uniform(0.36, 0.42),
        arch=rng.uniform(0.3, 0.75),
        toe_out=rng.uniform(2.0, 12.0),
        body_weight=rng.uniform(150.0, 300.0),
        cop_bias=rng.uniform(-0.6, 0.6),
        stance_shape=rng.uniform(-0.4, 0.4),
        gains=np.array([1.0, rng.uniform(0.35, 0.6), rng.uniform(0.8, 1.0), rng.uniform(0.45, 0.7)]),
    )
    affected = None
    offset, scale = 0.0, 1.0
    if positive:
        if cfg.affected_side == "random":
            affected = Foot.LEFT if rng.random() < 0.5 else Foot.RIGHT
        else:
            affected = Foot(cfg.affected_side)
        offset = rng.uniform(*cfg.lateral_offset_range)
        scale = rng.uniform(*cfg.forefoot_scale_range)
    return base, affected, offset, scale


def _walk_model(rng, cfg: SynthConfig, base: dict, offset: float, scale: float) -> _FootModel:
    H, W = cfg.grid_height, cfg.grid_width
    length = base["length"] * rng.uniform(0.98, 1.02)
    return _FootModel(
        length=length,
        width=base["width"] * rng.uniform(0.97, 1.03),
        arch=float(np.clip(base["arch"] + rng.uniform(-0.05, 0.05), 0.2, 0.85)),
        toe_out_deg=base["toe_out"] + rng.uniform(-1.5, 1.5),
        heel_x=W / 2.0 - 0.5 + rng.uniform(-1.5, 1.5),
        heel_y=(H - length) / 2.0 + rng.uniform(-1.0, 1.0),
        body_weight=base["body_weight"] * rng.uniform(0.95, 1.05),
        lateral_offset=offset,
        forefoot_scale=scale,
        cop_bias=base["cop_bias"] + rng.uniform(-0.2, 0.2),
        stance_shape=base["stance_shape"],
        gains=base["gains"],
    )


def synth_subject(
    seed: int, index: int, positive: bool, walks: int, cfg: SynthConfig | None = None
) -> tuple[SubjectMeta, list[Recording]]:
    """Generate one subject's walks; ``walks`` left/right recording pairs."""
    cfg = cfg or SynthConfig()
    rng = subject_rng(seed, 1 + index)
    subject_id = f"S{index + 1:03d}"
    label = Label.POSITIVE if positive else Label.NEGATIVE
    base, affected, offset, scale = _draw_subject(rng, cfg, positive)
    recordings = []
    for _walk in range(walks):
        for foot in (Foot.LEFT, Foot.RIGHT):
            hit = affected is foot
            model = _walk_model(rng, cfg, base, offset if hit else 0.0, scale if hit else 1.0)
            frames = _render_left_foot(model, cfg, rng)
            if foot is Foot.RIGHT:
                frames = frames[:, :, ::-1]
            recordings.append(Recording(frames, cfg.sample_rate_hz, subject_id, foot, label))
    meta = SubjectMeta(subject_id, label, walks, affected, offset, scale)
    return meta, recordings


def _check_counts(subject_count: int, positive_fraction: float, walks_per_subject: int):
    if subject_count < 2:
        raise ValueError("subject_count must be >= 2")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError("positive_fraction must lie in [0, 1]")
    if walks_per_subject < 1:
        raise ValueError("walks_per_subject must be >= 1")


def subject_labels(subject_count: int, positive_fraction: float, seed: int) -> np.ndarray:
    """Boolean positive flag per subject; exactly round(n * fraction) positives."""
    n_pos = int(round(subject_count * positive_fraction))
    flags = np.zeros(subject_count, dtype=bool)
    flags[:n_pos] = True
    return subject_rng(seed, 0).permutation(flags)


def iter_synthetic_subjects(
    subject_count: int,
    positive_fraction: float,
    walks_per_subject: int,
    seed: int,
    config: SynthConfig | None = None,
) -> Iterator[tuple[SubjectMeta, list[Recording]]]:
    """Lazily yield ``(meta, recordings)`` per subject.

    Each subject's recordings are ordered walk by walk, left foot first.
    """
    _check_counts(subject_count, positive_fraction, walks_per_subject)
    flags = subject_labels(subject_count, positive_fraction, seed)
    for s in range(subject_count):
        yield synth_subject(seed, s, bool(flags[s]), walks_per_subject, config)


def generate_synthetic_dataset(
    subject_count: int,
    positive_fraction: float,
    walks_per_subject: int,
    seed: int,
    config: SynthConfig | None = None,
) -> tuple[list[Recording], list[SubjectMeta]]:
    recordings: list[Recording] = []
    metas: list[SubjectMeta] = []
    for meta, recs in iter_synthetic_subjects(
        subject_count, positive_fraction, walks_per_subject, seed, config
    ):
        metas.append(meta)
        recordings.extend(recs)
    return recordings, metas


def recording_filename(subject_id: str, walk: int, foot: Foot) -> str:
    return f"{subject_id}_w{walk + 1}_{foot.value}.ppr"


def write_synthetic_dataset(
    out_dir,
    subject_count: int,
    positive_fraction: float,
    walks_per_subject: int,
    seed: int,
    config: SynthConfig | None = None,
) -> dict:
    """Write one ``.ppr`` per recording plus ``manifest.json``; return the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    subjects = []
    for meta, recs in iter_synthetic_subjects(
        subject_count, positive_fraction, walks_per_subject, seed, config
    ):
        subjects.append({"subject_id": meta.subject_id, "label": meta.label.value})
        for n, rec in enumerate(recs):
            walk = n // 2
            name = recording_filename(rec.subject_id, walk, rec.foot)
            save_recording(rec, os.path.join(out_dir, name))
            entries.append(
                {
                    "file": name,
                    "subject_id": rec.subject_id,
                    "walk": walk + 1,
                    "foot": rec.foot.value,
                    "label": rec.label.value,
                }
            )
    manifest = {
        "format": "ppr 1",
        "seed": seed,
        "subject_count": subject_count,
        "positive_fraction": positive_fraction,
        "walks_per_subject": walks_per_subject,
        "subjects": subjects,
        "recordings": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest_pairs(data_dir) -> list[tuple[Recording, Recording, str]]:
    """Read a synth directory and return ``(left, right, case_id)`` per walk."""
    with open(os.path.join(data_dir, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    grouped: dict[tuple[str, int], dict[str, str]] = {}
    for entry in manifest["recordings"]:
        grouped.setdefault((entry["subject_id"], int(entry["walk"])), {})[entry["foot"]] = entry["file"]
    pairs = []
    for (subject_id, walk), files in sorted(grouped.items()):
        if set(files) != {"left", "right"}:
            raise ValueError(f"{subject_id} walk {walk}: need both feet, found {sorted(files)}")
        left = load_recording(os.path.join(data_dir, files["left"]))
        right = load_recording(os.path.join(data_dir, files["right"]))
        pairs.append((left, right, f"w{walk}"))
    return pairs
