import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitdx.features import (
    FEATURE_NAMES,
    FOOT_FEATURE_NAMES,
    FeatureError,
    Region,
    REGIONS,
    arch_index,
    arch_index_of_mask,
    compute_features,
    compute_fpa,
    cop_path_length,
    cop_trajectory,
    exclude_toes,
    feature_vector,
    footprint_mask,
    pmi,
    pp_mp_pti,
    region_map,
)
from gaitdx.preprocess import aggregate_max, aggregate_sum
from gaitdx.recording import Foot, synth_subject

from conftest import make_recording


def foot_image(angle_deg=0.0, size=40, center=(19.5, 19.5), lean=0.0):
    """Analytic footprint, mirror-symmetric about its own axis when ``lean`` is 0.

    Rendered directly at ``angle_deg`` (turning +y toward +x), so rotated
    copies carry no resampling error.
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    X, Y = xx - center[0], yy - center[1]
    th = math.radians(angle_deg)
    u = X * math.cos(th) - Y * math.sin(th)
    v = X * math.sin(th) + Y * math.cos(th)
    u = u - lean * v

    def blob(cu, cv, au, av):
        return np.clip(1.0 - ((u - cu) / au) ** 2 - ((v - cv) / av) ** 2, 0.0, None)

    heel = blob(0, -10, 4.0, 4.5)
    mid = blob(0, 0, 2.5, 8.0) * 0.6
    fore = blob(0, 9, 5.5, 5.0)
    return 100.0 * np.maximum(np.maximum(heel, mid), fore)


# ---------------------------------------------------------------------------
# mask


def test_mask_examples(rng):
    assert footprint_mask(np.full((4, 5), 3.0), 0.05).mask.all()
    one = np.zeros((6, 6))
    one[2, 3] = 7.0
    m = footprint_mask(one, 0.05)
    assert m.area == 1 and m.mask[2, 3]
    assert footprint_mask(np.zeros((3, 3))).area == 0
    img = rng.uniform(0, 1, size=(8, 8)) ** 3
    want = np.zeros((8, 8), dtype=bool)
    vmax = max(max(row) for row in img.tolist())
    for i in range(8):
        for j in range(8):
            want[i, j] = img[i, j] > 0.05 * vmax
    assert np.array_equal(footprint_mask(img, 0.05).mask, want)


# ---------------------------------------------------------------------------
# FPA


def test_fpa_symmetric_is_zero():
    assert abs(compute_fpa(foot_image(0.0))) <= 1.0


@pytest.mark.parametrize("theta", [-20.0, -10.0, -5.0, 5.0, 10.0, 20.0])
def test_fpa_follows_analytic_rotation(theta):
    assert compute_fpa(foot_image(theta)) == pytest.approx(theta, abs=2.0)


def test_fpa_heel_only_contact():
    heel = np.zeros((10, 10))
    heel[4, 5] = 50.0
    with pytest.raises(FeatureError, match="forefoot"):
        compute_fpa(heel)
    with pytest.raises(FeatureError):
        compute_fpa(np.zeros((5, 5)))


def test_fpa_equivariance_on_synthetic_feet():
    from gaitdx.preprocess import rotate

    for index in range(3):
        _, recs = synth_subject(5, index, index == 1, 1)
        for r in recs:
            img = aggregate_sum(r).cells
            ys, xs = np.nonzero(footprint_mask(img).mask)
            base = compute_fpa(img)
            for theta in (-20.0, -7.5, 12.0, 20.0):
                turned = rotate(img, theta, (xs.mean(), ys.mean()))
                assert compute_fpa(turned) - base == pytest.approx(theta, abs=2.0)


def test_toe_out_sign_per_foot():
    # a left foot whose toes point toward -x (lateral) toes out
    img = foot_image(-8.0)
    left = make_recording(img[None], foot=Foot.LEFT)
    right = make_recording(img[:, ::-1][None], foot=Foot.RIGHT)
    fl, fr = compute_features(left), compute_features(right)
    assert fl.fpa_degrees == pytest.approx(8.0, abs=2.0)
    assert fr.fpa_degrees == pytest.approx(fl.fpa_degrees, abs=1e-9)


# ---------------------------------------------------------------------------
# arch index


def test_arch_index_examples():
    high_arch = np.zeros((16, 8))
    high_arch[0:5, 2:6] = 1.0
    high_arch[10:15, 1:7] = 1.0
    assert arch_index(high_arch) == 0.0
    rect = np.zeros((20, 10))
    rect[2:17, 3:8] = 1.0
    assert arch_index(rect) == pytest.approx(1 / 3, abs=5 / 75)
    with pytest.raises(FeatureError):
        arch_index(np.zeros((4, 4)))


def test_toes_are_excluded():
    foot = np.zeros((24, 10))
    foot[1:19, 2:8] = 1.0
    with_toe = foot.copy()
    with_toe[21:23, 4:6] = 1.0
    assert np.array_equal(exclude_toes(with_toe > 0), foot > 0)
    assert arch_index(with_toe) == arch_index(foot)
    # a small blob behind the heel is not a toe
    behind = np.zeros((24, 10))
    behind[5:23, 2:8] = 1.0
    behind[1:3, 4:6] = 1.0
    assert exclude_toes(behind > 0).sum() == (behind > 0).sum()


def arch_oracle(mask):
    # independent route: principal direction from an SVD of centred coordinates
    ys, xs = np.nonzero(mask)
    pts = np.column_stack([xs, ys]).astype(float)
    c = pts - pts.mean(axis=0)
    axis = np.linalg.svd(c, full_matrices=False)[2][0]
    if axis[1] < 0 or (axis[1] == 0 and axis[0] < 0):
        axis = -axis  # posterior-to-anterior follows +y on the plate
    s = c @ axis
    lo, hi = s.min(), s.max()
    third = (hi - lo) / 3
    count = sum(1 for v in s if lo + third - 1e-9 <= v < lo + 2 * third - 1e-9)
    return count / len(s)


def test_arch_index_counting_oracle():
    rng = np.random.default_rng(31)
    done = 0
    while done < 60:
        h, w = (int(v) for v in rng.integers(6, 14, size=2))
        mask = rng.random((h + 4, w)) < 0.7
        mask[:, :] &= np.arange(h + 4)[:, None] < h  # keep a tall blob
        if mask.sum() < 3:
            continue
        ys, xs = np.nonzero(mask)
        cov = np.cov(np.column_stack([xs, ys]).T.astype(float), bias=True)
        ev = np.linalg.eigvalsh(cov)
        if ev[1] - ev[0] < 1e-6 * max(ev[1], 1.0):
            continue  # isotropic: direction is a convention, not an oracle check
        assert arch_index_of_mask(mask) == pytest.approx(arch_oracle(mask), abs=1e-12)
        done += 1


# ---------------------------------------------------------------------------
# regions and PMI


def test_region_map_symmetric_rectangle():
    rect = np.zeros((20, 12))
    rect[2:17, 3:9] = 1.0
    rm = region_map(rect, foot=Foot.LEFT)
    assert abs(rm.area(Region.MM) - rm.area(Region.LM)) <= 1
    assert abs(rm.area(Region.MF) - rm.area(Region.LF)) <= 1
    assert all(rm.area(r) > 0 for r in REGIONS)
    # left foot medial is +x
    assert rm.assignment[10, 8] == Region.MM and rm.assignment[10, 3] == Region.LM
    rr = region_map(rect, foot=Foot.RIGHT)
    assert rr.assignment[10, 8] == Region.LM


def test_region_map_heel_only():
    img = np.zeros((8, 8))
    img[4, 4] = 3.0
    rm = region_map(img)
    assert rm.area(Region.HEEL) == 1 and sum(rm.area(r) for r in REGIONS) == 1


def test_regions_partition_footprint(rng):
    for _ in range(40):
        img = rng.uniform(0, 1, size=(12, 9)) * (rng.random((12, 9)) < 0.8)
        if not img.any():
            continue
        rm = region_map(img, 0.05, Foot.LEFT)
        mask = footprint_mask(img, 0.05).mask
        assert sum(rm.area(r) for r in REGIONS) == mask.sum()
        assert np.array_equal(rm.assignment != Region.OUTSIDE, mask)


def test_pmi_medial_and_symmetric():
    img = np.zeros((20, 12))
    img[2:17, 3:9] = 10.0
    frames = np.stack([img, img])
    assert pmi(make_recording(frames)) == pytest.approx(50.0, abs=2.0)
    rm = region_map(img, foot=Foot.LEFT)
    medial_only = frames.copy()
    lateral = (rm.assignment == Region.LM) | (rm.assignment == Region.LF)
    medial_only[:, lateral] = 0.0
    heel = rm.assignment == Region.HEEL
    medial_only[:, heel] = 0.0
    assert pmi(make_recording(medial_only), regions=rm) == 100.0
    with pytest.raises(FeatureError):
        pmi(make_recording(np.zeros((2, 20, 12))), regions=rm)


def test_pmi_region_impulse_oracle():
    _, recs = synth_subject(8, 1, True, 1)
    for r in recs:
        rm = region_map(aggregate_sum(r), 0.05, r.foot)
        med = lat = 0.0
        K, H, W = r.frames.shape
        for i in range(H):
            for j in range(W):
                reg = rm.assignment[i, j]
                imp = sum(r.frames[k, i, j] for k in range(K)) / r.sample_rate_hz
                if reg in (Region.MM, Region.MF):
                    med += imp
                elif reg in (Region.LM, Region.LF):
                    lat += imp
        assert pmi(r) == pytest.approx(100 * med / (med + lat), rel=1e-9)
        assert 0.0 <= pmi(r) <= 100.0


# ---------------------------------------------------------------------------
# COP and PP/MP/PTI


def test_cop_examples():
    frames = np.zeros((4, 6, 7))
    frames[:, 2, 5] = 9.0
    pts = cop_trajectory(make_recording(frames))
    assert all((p.x, p.y) == (5.0, 2.0) for p in pts) and cop_path_length(pts) == 0.0
    two = np.zeros((2, 1, 5))
    two[0, 0, 0] = 1.0
    two[1, 0, 4] = 1.0
    assert cop_path_length(cop_trajectory(make_recording(two))) == 4.0
    with pytest.raises(FeatureError):
        cop_trajectory(make_recording(np.zeros((3, 2, 2))))


def test_cop_weighted_mean_oracle(rng):
    frames = rng.uniform(0, 1, size=(6, 5, 4)) * (rng.random((6, 5, 4)) < 0.6)
    frames[2] = 0.0
    pts = cop_trajectory(make_recording(frames))
    assert [p.frame_index for p in pts] == [k for k in range(6) if frames[k].sum() > 0]
    for p in pts:
        f = frames[p.frame_index]
        tot = sum(f[i, j] for i in range(5) for j in range(4))
        assert p.x == pytest.approx(sum(j * f[i, j] for i in range(5) for j in range(4)) / tot)
        assert p.y == pytest.approx(sum(i * f[i, j] for i in range(5) for j in range(4)) / tot)


def test_pp_mp_pti_definitions():
    img = np.zeros((20, 12))
    img[2:17, 3:9] = 4.0
    frames = np.stack([img] * 30)
    s = pp_mp_pti(make_recording(frames, rate=100.0))
    assert np.array_equal(s.pp.cells, aggregate_max(make_recording(frames)).cells)
    np.testing.assert_allclose(s.pti.cells[img > 0], 4.0 * 30 / 100.0)
    np.testing.assert_allclose(s.mp.cells[img > 0], 4.0)


def test_regional_means_oracle():
    _, recs = synth_subject(4, 0, False, 1)
    r = recs[0]
    s = pp_mp_pti(r)
    for n, region in enumerate(REGIONS):
        vals = [s.pp.cells[i, j] for i, j in zip(*np.nonzero(s.regions.assignment == region))]
        assert s.pp_regional[n] == pytest.approx(sum(vals) / len(vals) if vals else 0.0)


@pytest.fixture(scope="module")
def pair():
    _, recs = synth_subject(12, 3, True, 1)
    return recs[0], recs[1]


def test_feature_vector_layout(pair):
    left, right = pair
    vec = feature_vector(left, right)
    assert vec.shape == (40,) and len(FEATURE_NAMES) == 40 and len(FOOT_FEATURE_NAMES) == 20
    np.testing.assert_array_equal(vec[:20], compute_features(left).vector())
    np.testing.assert_array_equal(vec[20:], compute_features(right).vector())
    with pytest.raises(ValueError):
        feature_vector(right, left)


def test_mirrored_feet_give_equal_halves(pair):
    left, _ = pair
    mirrored = make_recording(left.frames[:, :, ::-1], subject=left.subject_id, foot=Foot.RIGHT)
    vec = feature_vector(left, mirrored)
    np.testing.assert_allclose(vec[:20], vec[20:], rtol=1e-9, atol=1e-9)


@settings(max_examples=8, deadline=None)
@given(c=st.sampled_from([0.5, 2.0, 3.7, 250.0]))
def test_scale_invariance(pair, c):
    r = pair[0]
    scaled = r.with_frames(r.frames * c)
    a, b = compute_features(r), compute_features(scaled)
    assert np.array_equal(footprint_mask(aggregate_sum(r)).mask, footprint_mask(aggregate_sum(scaled)).mask)
    for name in ("fpa_degrees", "arch_index", "pmi_percent", "cop_path_length", "cop_mean_lateral_offset"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-9, abs=1e-9)
    for name in ("pp_regional", "mp_regional", "pti_regional"):
        np.testing.assert_allclose(getattr(b, name), np.array(getattr(a, name)) * c, rtol=1e-9)


def test_feature_ranges(pair):
    for r in pair:
        f = compute_features(r)
        assert 0.0 <= f.arch_index <= 1.0 and 0.0 <= f.pmi_percent <= 100.0
        assert set(f.to_dict()) >= {"fpa_degrees", "pp_regional"}
