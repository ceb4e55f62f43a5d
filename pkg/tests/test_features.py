import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import pixel_iou

from poseparse.core import ImageRGB, InvalidInputError, PoseJoints, PotentialStack, SegmentMask, centroid, morph
from poseparse.features import (
    PBG_DIM,
    Dictionary,
    FeatureContext,
    SkinModel,
    assemble_feature,
    assign_part_type,
    assign_type,
    code_pbg,
    fcn_feature,
    kmeans,
    learn_dictionary,
    load_dictionaries,
    o2p_pool,
    pair_geometry,
    pairwise_code,
    pairwise_cpbg,
    pbg,
    pbg_bins,
    read_feature_matrix,
    save_dictionaries,
    sector,
    skin_pool,
    write_feature_matrix,
)
from poseparse.synthdata import GeneratorConfig, generate_scene


def disc_mask(h, w, cx, cy, r):
    yy, xx = np.mgrid[:h, :w]
    return SegmentMask((xx - cx) ** 2 + (yy - cy) ** 2 <= r * r)


def sector_oracle(dx, dy_up):
    if dx == 0 and dy_up == 0:
        return 0
    ang = math.degrees(math.atan2(dy_up, dx)) % 360.0
    if ang == 0:
        return 0
    return math.ceil(ang / 45.0 - 1e-12) - 1


def pbg_oracle(seg: SegmentMask, joints: PoseJoints) -> np.ndarray:
    """Scale bins from padded morphology, sectors from atan2."""
    pad = 12
    big = SegmentMask(np.pad(seg.bits, pad))
    inner = np.pad(morph(seg, 10, "erode").bits, pad)
    outer = morph(big, 10, "dilate").bits
    cx, cy = centroid(seg)
    out = np.zeros(PBG_DIM)
    for j, (x, y) in enumerate(joints.xy):
        px, py = int(math.floor(x + 0.5)) + pad, int(math.floor(y + 0.5)) + pad
        inside = 0 <= py < outer.shape[0] and 0 <= px < outer.shape[1]
        scale = 0 if inside and inner[py, px] else 1 if inside and outer[py, px] else 2
        out[j * 24 + scale * 8 + sector_oracle(x - cx, cy - y)] = 1
    return out


# --- sectors and PBG ------------------------------------------------------------------


@pytest.mark.parametrize(
    "dx,dy,expected",
    [(1, 0, 0), (1, 1, 0), (0, 1, 1), (-1, 1, 2), (-1, 0, 3), (-1, -1, 4), (0, -1, 5), (1, -1, 6), (2, -1, 7), (0, 0, 0)],
)
def test_sector_boundaries(dx, dy, expected):
    assert sector(dx, dy) == expected == sector_oracle(dx, dy)


@given(st.integers(-50, 50), st.integers(-50, 50))
def test_sector_matches_atan2(dx, dy):
    assert sector(dx, dy) == sector_oracle(dx, dy)


def test_pbg_disc_joint_at_centre():
    seg = disc_mask(100, 100, 50, 50, 30)
    joints = PoseJoints(np.tile([50.0, 50.0], (14, 1)))
    f = pbg(seg, joints)
    assert f.sum() == 14
    assert all(f[j * 24 + 0] == 1 for j in range(14))


def test_pbg_far_east_joint():
    seg = disc_mask(40, 40, 20, 20, 3)
    xy = np.tile([20.0, 20.0], (14, 1))
    xy[4] = [520.0, 20.0]
    f = pbg(seg, PoseJoints(xy))
    assert f[4 * 24 + 16] == 1


def test_pbg_null_segment():
    with pytest.raises(InvalidInputError):
        pbg(SegmentMask.null(5, 5), PoseJoints(np.zeros((14, 2))))


@given(arrays(bool, (24, 24)), arrays(float, (14, 2), elements=st.floats(-15, 40, allow_nan=False)))
def test_pbg_matches_oracle(bits, xy):
    assume(bits.any())
    seg = SegmentMask(bits)
    f = pbg(seg, PoseJoints(xy))
    assert f.sum() == 14
    assert np.array_equal(f.reshape(14, 24).sum(axis=1), np.ones(14))
    assert np.array_equal(f, pbg_oracle(seg, PoseJoints(xy)))


@given(arrays(bool, (12, 12)), arrays(int, (14, 2), elements=st.integers(-5, 16)), st.integers(0, 20), st.integers(0, 20))
def test_pbg_translation_invariant(bits, xy, tx, ty):
    assume(bits.any())
    big = np.zeros((60, 60), bool)
    big[20 : 32, 20 : 32] = bits
    moved = np.zeros_like(big)
    moved[20 + ty : 32 + ty, 20 + tx : 32 + tx] = bits
    j = PoseJoints(xy + 20.0)
    jm = PoseJoints(xy + 20.0 + [tx, ty])
    assert np.array_equal(pbg(SegmentMask(big), j), pbg(SegmentMask(moved), jm))


def test_pbg_boundary_direction_survives_shifts():
    # centroid (2.2, 3.8), joint 7.8 right and 7.8 up: exactly 45 degrees, the lower sector 0
    xs, ys = np.array([1, 2, 2, 2, 4]), np.array([4, 3, 4, 5, 3])
    seen = set()
    for t in range(40):
        bits = np.zeros((80, 80), bool)
        bits[ys + t, xs + t] = True
        xy = np.tile([10.0 + t, -4.0 + t], (14, 1))
        seen.add(int(pbg_bins(SegmentMask(bits), PoseJoints(xy))[0]))
    assert seen == {1 * 8 + 0}


# --- dictionaries and codes -------------------------------------------------------------


def test_kmeans_distinct_inputs_become_prototypes():
    x = np.eye(5)
    d = learn_dictionary(x, 5, 0)
    assert sorted(map(tuple, d.prototypes)) == sorted(map(tuple, x))


def test_kmeans_two_groups_give_group_means(rng):
    a = rng.normal(0, 0.1, (20, 3))
    b = rng.normal(5, 0.1, (30, 3)) + [0, 10, 0]
    d = learn_dictionary(np.vstack([a, b]), 2, 3)
    got = sorted(map(tuple, d.prototypes))
    want = sorted([tuple(a.mean(axis=0)), tuple(b.mean(axis=0))])
    assert np.allclose(got, want, atol=1e-12)


def test_kmeans_deterministic_and_errors(rng):
    x = rng.random((40, 4))
    assert np.array_equal(learn_dictionary(x, 4, 9).prototypes, learn_dictionary(x, 4, 9).prototypes)
    with pytest.raises(InvalidInputError):
        learn_dictionary(x[:3], 4, 0)


def test_kmeans_handles_duplicate_points():
    x = np.vstack([np.zeros((10, 2)), np.ones((1, 2))])
    centers, labels = kmeans(x, 3, 0)
    assert centers.shape == (3, 2)
    assert np.isfinite(centers).all()


def test_code_examples():
    f = np.array([1.0, 0.0, 0.0])
    assert np.allclose(code_pbg(f, Dictionary(f[None])), [1.0, 1.0])
    d2 = Dictionary(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    assert np.allclose(code_pbg(f, d2)[2:], [0.5, 0.5])
    tiny = code_pbg(f, Dictionary(np.random.default_rng(0).random((4, 3))), 1e-9)
    assert np.allclose(tiny[:4], 1.0, atol=1e-8) and np.allclose(tiny[4:], 0.25, atol=1e-8)
    with pytest.raises(InvalidInputError):
        code_pbg(f, d2, 0.0)
    with pytest.raises(InvalidInputError):
        code_pbg(np.zeros(4), d2)


@given(arrays(float, (6,), elements=st.floats(0, 1)), arrays(float, (5, 6), elements=st.floats(0, 1)), st.floats(0.1, 10))
def test_code_properties(f, protos, lam):
    c = code_pbg(f, Dictionary(protos), lam)
    d = np.linalg.norm(protos - f, axis=1)
    assert np.allclose(c[:5], np.exp(-lam * d), rtol=1e-12)
    assert abs(c[5:].sum() - 1) < 1e-9
    assert np.all((c > 0) & (c <= 1))


def test_pairwise_codes():
    j = PoseJoints(np.tile([10.0, 10.0], (14, 1)))
    a = disc_mask(30, 30, 10, 10, 4)
    b = disc_mask(30, 30, 20, 20, 4)
    proto = np.concatenate([pbg(a, j), pbg(b, j)])
    other = np.roll(proto, 3)
    d = Dictionary(np.vstack([other, proto] + [np.roll(proto, k) for k in range(5, 11)]))
    c = pairwise_cpbg(a, b, j, d)
    assert c.shape == (16,)
    assert c[1] == 1.0 and c[8 + 1] == c[8:].max()
    assert abs(c[8:].sum() - 1) < 1e-9
    null = SegmentMask.null(30, 30)
    assert np.array_equal(pairwise_cpbg(null, null, j, d), np.zeros(16))
    with pytest.raises(InvalidInputError):
        pairwise_cpbg(a, null, j, d)
    with pytest.raises(InvalidInputError):
        pairwise_cpbg(a, b, j, Dictionary(np.zeros((8, 5))))
    assert np.array_equal(pairwise_code(None, proto[:PBG_DIM], d), np.zeros(16))


def test_assign_type_rules():
    protos = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]])
    d = Dictionary(protos)
    assert assign_type(np.array([5.0, 5.0]), d) == 4
    assert assign_type(np.array([0.0, 0.0]), Dictionary(np.array([[1.0, 0.0], [-1.0, 0.0]]))) == 1
    assert assign_part_type(SegmentMask.null(4, 4), PoseJoints(np.zeros((14, 2))), d) == 0


def test_assigned_types_match_kmeans_clusters():
    feats, segs = [], []
    for i in range(30):
        s = generate_scene(21, i)
        face = s.labels.part_mask(2)
        if face.area:
            feats.append(pbg(face, s.joints))
            segs.append((face, s.joints))
    x = np.array(feats)
    centers, labels = kmeans(x, 4, 0)
    d = Dictionary(centers)
    for (seg, j), lab in zip(segs, labels):
        assert assign_part_type(seg, j, d) == lab + 1


# --- appearance blocks ---------------------------------------------------------------------


def o2p_oracle(image, seg):
    px = image.pixels
    h, w, _ = px.shape
    gray = px.mean(axis=2)
    gy, gx = np.gradient(gray)
    acc = np.zeros((7, 7))
    n = 0
    for y in range(h):
        for x in range(w):
            if seg.bits[y, x]:
                d = np.array([*px[y, x], abs(gx[y, x]), abs(gy[y, x]), x / w, y / h])
                acc += np.outer(d, d)
                n += 1
    m = acc / n
    return np.array([m[i, j] for i in range(7) for j in range(i, 7)])


def test_o2p_gray_and_oracle(rng):
    img = ImageRGB(np.full((12, 12, 3), 0.5))
    seg = disc_mask(12, 12, 6, 6, 3)
    v = o2p_pool(img, seg)
    assert v.shape == (28,)
    # (0,0), (0,1), (0,2) and (1,1) entries of the RGB block
    assert np.allclose(v[[0, 1, 2, 7]], 0.25)
    assert np.array_equal(v, o2p_pool(img, seg))
    noisy = ImageRGB(rng.random((9, 11, 3)))
    seg = SegmentMask(rng.random((9, 11)) < 0.5)
    assert np.allclose(o2p_pool(noisy, seg), o2p_oracle(noisy, seg))
    with pytest.raises(InvalidInputError):
        o2p_pool(img, SegmentMask.null(12, 12))


@pytest.fixture(scope="module")
def fitted_skin():
    px = []
    for i in range(10):
        s = generate_scene(5, i)
        for p in (2, 5, 6, 8, 9):
            px.append(s.image.pixels[s.labels.labels == p])
    return SkinModel.fit(np.concatenate(px))


def test_skin_model(fitted_skin):
    m = fitted_skin
    r, g = m.mean
    rgb = np.array([r, g, 1 - r - g])
    img = ImageRGB(np.tile(rgb, (6, 6, 1)))
    seg = disc_mask(6, 6, 3, 3, 2)
    assert np.allclose(skin_pool(img, seg, m), [1.0, 1.0, 1.0])
    for bg in GeneratorConfig().palettes["background"][:2]:
        img = ImageRGB(np.tile(bg, (6, 6, 1)))
        assert skin_pool(img, seg, m)[0] < 0.1
    noisy = ImageRGB(np.random.default_rng(0).random((6, 6, 3)))
    v = skin_pool(noisy, seg, m)
    assert np.all((v >= 0) & (v <= 1))
    assert SkinModel.from_dict(m.to_dict()).mean.tolist() == m.mean.tolist()
    with pytest.raises(InvalidInputError):
        skin_pool(img, SegmentMask.null(6, 6), m)


def test_fcn_feature_exact_one_hot():
    s = generate_scene(1, 3)
    maps = np.stack([(s.labels.labels == p).astype(float) for p in range(12)])
    pots = PotentialStack(maps)
    for p in range(1, 12):
        seg = s.labels.part_mask(p)
        if seg.area == 0:
            continue
        f = fcn_feature(seg, pots)
        assert f.shape == (36,)
        block3 = f[24:]
        assert block3[p] == 1.0 and np.count_nonzero(block3) == 1


def test_fcn_feature_uniform_half():
    pots = PotentialStack(np.full((2, 8, 8), 0.5))
    f = fcn_feature(disc_mask(8, 8, 4, 4, 2), pots)
    assert np.allclose(f[:4], 0.5)


def test_fcn_feature_half_cover_iou():
    labels = np.zeros((10, 10), int)
    labels[0:4, 0:4] = 1
    pots = PotentialStack(np.stack([(labels == p).astype(float) for p in range(2)]))
    bits = np.zeros((10, 10), bool)
    bits[0:2, 0:4] = True  # half of mask 1
    bits[5:7, 5:9] = True  # the same amount outside
    seg = SegmentMask(bits)
    f = fcn_feature(seg, pots)
    assert f[4 + 1] == pytest.approx(pixel_iou(bits, labels == 1)) == pytest.approx(8 / 24)


@given(arrays(bool, (8, 8)), st.integers(0, 1000))
def test_fcn_iou_block_matches_brute_force(bits, seed):
    assume(bits.any())
    maps = np.random.default_rng(seed).random((3, 8, 8))
    pots = PotentialStack(maps / maps.sum(axis=0))
    f = fcn_feature(SegmentMask(bits), pots)
    lab = pots.argmax_labels
    for j in range(3):
        assert f[6 + j] == pytest.approx(pixel_iou(bits, lab == j))


def test_fcn_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        fcn_feature(disc_mask(8, 8, 4, 4, 2), PotentialStack(np.full((2, 9, 8), 0.5)))


# --- assembly --------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def context(fitted_skin):
    s = generate_scene(2, 1)
    rng = np.random.default_rng(1)
    d = Dictionary(rng.random((132 // 2, PBG_DIM)) < 0.05)
    return s, FeatureContext(s.image, s.joints, s.potentials, fitted_skin, d, 4.0)


def test_assemble_norm_and_blocks(context):
    s, ctx = context
    seg = s.labels.part_mask(4) if s.labels.part_mask(4).area else s.labels.part_mask(3)
    vec, layout = assemble_feature(seg, context=ctx)
    assert layout.sizes == (28, 3, 36, 336, 132) and layout.dim == 535
    assert abs(np.linalg.norm(vec) - 1) < 1e-9
    raw = {
        "o2p": o2p_pool(s.image, seg),
        "pbg": pbg(seg, s.joints),
        "fcn": fcn_feature(seg, s.potentials),
    }
    scale = None
    for name, r in raw.items():
        blk = layout.block(vec, name)
        want = r / np.linalg.norm(r)
        k = np.linalg.norm(blk)
        scale = k if scale is None else scale
        assert k == pytest.approx(scale)
        assert np.allclose(blk / k, want)
    same, _ = assemble_feature(seg, s.joints, s.potentials, ctx.unary_dict, 4.0, image=s.image, skin_model=ctx.skin_model)
    assert np.allclose(same, vec)


def test_assemble_far_shift_keeps_pbg(context):
    _, ctx = context
    h, w = 128, 64
    joints = PoseJoints(np.tile([32.0, 10.0], (14, 1)))
    a = np.zeros((h, w), bool)
    b = np.zeros((h, w), bool)
    a[90:100, 20:30] = True
    b[90:100, 26:36] = True
    fa = pbg(SegmentMask(a), joints)
    fb = pbg(SegmentMask(b), joints)
    assert np.array_equal(fa, fb)


# --- pair geometry ----------------------------------------------------------------------------


def test_pair_geometry_examples():
    a = disc_mask(40, 40, 15, 15, 5)
    assert np.allclose(pair_geometry(a, a), [0, 0, 0, 0, 1, 1])
    moved = disc_mask(40, 40, 22, 15, 5)
    diag = math.hypot(40, 40)
    g = pair_geometry(a, moved)
    assert g[0] == pytest.approx(7 / diag) and g[2] == 0
    big = np.zeros((40, 40), bool)
    big[0:20, 0:20] = True
    small = np.zeros((40, 40), bool)
    small[0:10, 0:10] = True
    assert pair_geometry(SegmentMask(big), SegmentMask(small))[4] == pytest.approx(0.5)
    assert np.array_equal(pair_geometry(a, SegmentMask.null(40, 40)), np.zeros(6))


@given(arrays(bool, (10, 10)), arrays(bool, (10, 10)))
def test_pair_geometry_swap(a, b):
    assume(a.any() and b.any())
    ga = pair_geometry(SegmentMask(a), SegmentMask(b), 7.0)
    gb = pair_geometry(SegmentMask(b), SegmentMask(a), 7.0)
    assert np.allclose(ga[[0, 2]], -gb[[0, 2]])
    assert ga[4] == pytest.approx(1 / gb[4])
    assert np.all(np.isfinite(ga)) and ga[4] > 0


# --- files -----------------------------------------------------------------------------------


def test_dictionary_and_matrix_files(tmp_path, context):
    _, ctx = context
    pairs = {("hair", "face"): Dictionary(np.ones((8, 2 * PBG_DIM)) * 0.25, "hair|face")}
    save_dictionaries(tmp_path / "d.json", {"face": ctx.unary_dict}, pairs, 4.0)
    unary, back_pairs, lam = load_dictionaries(tmp_path / "d.json")
    assert lam == 4.0
    assert np.array_equal(unary["face"].prototypes, ctx.unary_dict.prototypes)
    assert np.array_equal(back_pairs[("hair", "face")].prototypes, pairs[("hair", "face")].prototypes)
    m = np.random.default_rng(0).random((3, 535)).astype(np.float32)
    write_feature_matrix(tmp_path / "f.bin", m, ctx.layout, {"ids": [0, 1, 2]})
    back, layout, side = read_feature_matrix(tmp_path / "f.bin")
    assert np.array_equal(back, m) and layout == ctx.layout and side["ids"] == [0, 1, 2]
