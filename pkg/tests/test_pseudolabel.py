import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from poseforge.errors import (InvalidBBox, InvalidThreshold, LengthMismatch, NoCertainPixels,
                              NonInvertibleTransform)
from poseforge.geometry import BBox
from poseforge.pseudolabel import (BACKGROUND, FOREGROUND, UNCERTAIN, iterate_pseudo_labels, labels_from_pgm,
                                   labels_to_pgm, make_pseudo_labels, merge_tta, perturb_bbox, seg_loss,
                                   tta_transforms)
from poseforge.selfsup import SimilarityTransform2D, hflip_transform
from poseforge.synth import gen_noisy_segmenter, gen_scene
from poseforge.io import read_pgm, write_pgm

FULL = BBox(0, 0, 100, 100)


def _bilinear(img, x, y):
    # edge-clamped bilinear sample at continuous pixel coordinates (centers at +0.5)
    h, w = img.shape
    u = min(max(x - 0.5, 0.0), w - 1.0)
    v = min(max(y - 0.5, 0.0), h - 1.0)
    j0, i0 = int(np.floor(u)), int(np.floor(v))
    j1, i1 = min(j0 + 1, w - 1), min(i0 + 1, h - 1)
    a, b = u - j0, v - i0
    return ((1 - a) * (1 - b) * img[i0, j0] + a * (1 - b) * img[i0, j1]
            + (1 - a) * b * img[i1, j0] + a * b * img[i1, j1])


def test_merge_identity(rng):
    m = rng.uniform(size=(9, 11))
    assert np.array_equal(merge_tta([m], [SimilarityTransform2D()]), m)


def test_merge_flip_involution(rng):
    m = rng.uniform(size=(9, 11))
    out = merge_tta([m, m[:, ::-1]], [SimilarityTransform2D(), hflip_transform(11)])
    assert np.max(np.abs(out - m)) < 1e-12


def test_merge_mixed_scales_against_oracle(rng):
    shape = (16, 20)
    views = tta_transforms(shape, scales=(0.75, 1.0, 1.5), flips=(False,))
    maps = [rng.uniform(size=vs) for _, vs in views]
    got = merge_tta(maps, [T for T, _ in views], shape)
    want = np.zeros(shape)
    for (T, _), m in zip(views, maps):
        for i in range(shape[0]):
            for j in range(shape[1]):
                x, y = T.apply(np.array([[j + 0.5, i + 0.5]]))[0]
                want[i, j] += _bilinear(m, x, y)
    want /= len(maps)
    assert np.max(np.abs(got - want)) < 1e-10


def test_merge_errors(rng):
    m = rng.uniform(size=(4, 4))
    with pytest.raises(LengthMismatch):
        merge_tta([m, m], [SimilarityTransform2D()])
    with pytest.raises(NonInvertibleTransform):
        merge_tta([m], [np.eye(3)])


def test_tta_default_set():
    views = tta_transforms((64, 64))
    assert len(views) == 6
    assert sorted({vs for _, vs in views}) == [(48, 48), (64, 64), (80, 80)]


def test_label_examples():
    box = BBox(0, 0, 2, 1)
    prob = np.array([[0.9, 0.65, 0.99]])
    labels = make_pseudo_labels(prob, [box], 0.7)
    assert labels.tolist() == [[FOREGROUND, UNCERTAIN, BACKGROUND]]


def test_label_boundaries():
    prob = np.array([[0.7, 1 - 0.7, 0.3000001, 0.6999999]])
    assert make_pseudo_labels(prob, [FULL], 0.7).tolist() == [[FOREGROUND, BACKGROUND, UNCERTAIN, UNCERTAIN]]


def test_label_errors():
    with pytest.raises(InvalidThreshold):
        make_pseudo_labels(np.zeros((2, 2)), [FULL], 0.5)
    with pytest.raises(InvalidThreshold):
        make_pseudo_labels(np.zeros((2, 2)), [FULL], 1.0)
    with pytest.raises(InvalidBBox):
        make_pseudo_labels(np.zeros((2, 2)), [(0, 0, 1, 1)], 0.7)


def _classify(p, sigma):
    if p >= sigma:
        return FOREGROUND
    if p <= 1 - sigma:
        return BACKGROUND
    return UNCERTAIN


def _random_case(rng):
    h, w = rng.integers(4, 24, size=2)
    prob = rng.uniform(size=(h, w))
    # push some mass onto the thresholds
    hit = rng.uniform(size=(h, w)) < 0.1
    prob[hit] = rng.choice([0.3, 0.7], size=hit.sum())
    boxes = []
    for _ in range(rng.integers(1, 4)):
        x0, y0 = rng.uniform(-3, w), rng.uniform(-3, h)
        boxes.append(BBox(x0, y0, x0 + rng.uniform(0.1, w), y0 + rng.uniform(0.1, h)))
    return prob, boxes


def test_label_fuzz():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        prob, boxes = _random_case(rng)
        labels = make_pseudo_labels(prob, boxes, 0.7)
        inside = np.zeros(prob.shape, bool)
        for b in boxes:
            inside |= b.pixel_mask(prob.shape)
        assert not np.any((labels == FOREGROUND) & ~inside)
        i, j = rng.integers(prob.shape[0]), rng.integers(prob.shape[1])
        want = _classify(prob[i, j], 0.7) if inside[i, j] else BACKGROUND
        assert labels[i, j] == want


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.51, 0.99))
def test_label_monotone(p, q, sigma):
    lo, hi = sorted((p, q))
    rank = {BACKGROUND: 0, UNCERTAIN: 1, FOREGROUND: 2}
    a = make_pseudo_labels(np.array([[lo]]), [FULL], sigma)[0, 0]
    b = make_pseudo_labels(np.array([[hi]]), [FULL], sigma)[0, 0]
    assert rank[a] <= rank[b]


def test_pgm_round_trip(tmp_path, rng):
    labels = rng.integers(0, 3, size=(7, 9)).astype(np.uint8)
    img = labels_to_pgm(labels)
    assert set(np.unique(img)) <= {0, 128, 255}
    write_pgm(tmp_path / "l.pgm", img)
    assert np.array_equal(labels_from_pgm(read_pgm(tmp_path / "l.pgm")), labels)


def test_seg_loss_near_perfect():
    labels = np.array([[FOREGROUND, BACKGROUND], [UNCERTAIN, FOREGROUND]], np.uint8)
    pred = np.where(labels == FOREGROUND, 1 - 1e-7, 1e-7)
    loss, _ = seg_loss(pred, labels)
    assert loss == pytest.approx(-np.log(1 - 1e-7), rel=1e-9)


def test_seg_loss_all_uncertain():
    with pytest.raises(NoCertainPixels):
        seg_loss(np.full((3, 3), 0.5), np.full((3, 3), UNCERTAIN, np.uint8))


def test_seg_loss_naive_oracle(rng):
    p = rng.uniform(size=(12, 10))
    labels = rng.integers(0, 3, size=(12, 10)).astype(np.uint8)
    total, count = 0.0, 0
    for i in range(12):
        for j in range(10):
            q = min(max(p[i, j], 1e-7), 1 - 1e-7)
            if labels[i, j] == FOREGROUND:
                total -= np.log(q)
                count += 1
            elif labels[i, j] == BACKGROUND:
                total -= np.log(1 - q)
                count += 1
    loss, _ = seg_loss(p, labels)
    assert loss == pytest.approx(total / count, abs=1e-12)


def test_seg_loss_uncertain_pixels_inert(rng):
    p = rng.uniform(0.01, 0.99, size=(8, 8))
    labels = rng.integers(0, 3, size=(8, 8)).astype(np.uint8)
    loss, grad = seg_loss(p, labels)
    unc = labels == UNCERTAIN
    assert np.all(grad[unc] == 0)
    q = p.copy()
    q[unc] = rng.uniform(size=unc.sum())
    assert seg_loss(q, labels)[0] == loss


def test_seg_loss_gradient(rng):
    p = rng.uniform(0.05, 0.95, size=(6, 5))
    labels = rng.integers(0, 3, size=(6, 5)).astype(np.uint8)
    _, grad = seg_loss(p, labels)
    h = 1e-6
    fd = np.zeros_like(p)
    for idx in np.ndindex(p.shape):
        e = np.zeros_like(p)
        e[idx] = h
        fd[idx] = (seg_loss(p + e, labels)[0] - seg_loss(p - e, labels)[0]) / (2 * h)
    assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) < 1e-7


def test_seg_loss_minimizer(rng):
    labels = rng.integers(0, 3, size=(6, 6)).astype(np.uint8)
    best = np.where(labels == FOREGROUND, 1 - 1e-7, 1e-7)
    base = seg_loss(best, labels)[0]
    for _ in range(200):
        assert seg_loss(rng.uniform(size=(6, 6)), labels)[0] >= base


def test_seg_loss_shape_mismatch():
    from poseforge.errors import DimensionMismatch
    with pytest.raises(DimensionMismatch):
        seg_loss(np.zeros((2, 2)), np.zeros((3, 3), np.uint8))


def test_perturb_zero_and_containment():
    tight = BBox(10.5, 20, 30, 41.25)
    assert perturb_bbox(tight, 3, max_expand=0.0) == tight
    for seed in range(500):
        out = perturb_bbox(tight, seed, image_size=(48, 48))
        assert out.contains(tight)
        assert out.x_min >= 0 and out.y_min >= 0 and out.x_max <= 48 and out.y_max <= 48
    with pytest.raises(InvalidBBox):
        perturb_bbox((0, 0, 1, 1), 0)


def test_perturb_distribution():
    tight = BBox(10, 10, 30, 50)
    rng = np.random.default_rng(11)
    fw, fh = [], []
    for _ in range(10_000):
        b = perturb_bbox(tight, rng)
        fw.append(b.width / tight.width - 1)
        fh.append(b.height / tight.height - 1)
    for f in (fw, fh):
        assert stats.kstest(f, stats.uniform(0, 0.15).cdf).statistic < 0.02


def _scene_inputs(seeds, schedule):
    fxs = [gen_scene("cube", s) for s in seeds]
    segs = [gen_noisy_segmenter(fx, schedule) for fx in fxs]
    return fxs, segs


def test_iterate_noise_free():
    fxs, segs = _scene_inputs([1, 2], (0.0,) * 5)
    run = iterate_pseudo_labels(segs, [f.gt_mask for f in fxs], [[f.tight_bbox] for f in fxs], rounds=5)
    assert run.mean_iou == [1.0] * 5
    views = tta_transforms(fxs[0].gt_mask.shape)
    merged = merge_tta([segs[0](0, T, vs) for T, vs in views], [T for T, _ in views], fxs[0].gt_mask.shape)
    saturated = (merged == 0) | (merged == 1)
    assert saturated.mean() > 0.9
    assert not np.any((run.labels[0][0] == UNCERTAIN) & saturated)


def test_iterate_single_round():
    fxs, segs = _scene_inputs([3], (0.5,))
    run = iterate_pseudo_labels(segs, [f.gt_mask for f in fxs], [[f.tight_bbox] for f in fxs], rounds=1)
    assert len(run.labels) == len(run.iou) == 1
    assert run.to_csv().count("\n") == 2


def test_iterate_default_schedule_non_decreasing():
    fxs, segs = _scene_inputs(range(4), (3.0, 2.4, 1.8, 1.3, 0.9))
    run = iterate_pseudo_labels(segs, [f.gt_mask for f in fxs], [[f.tight_bbox] for f in fxs], rounds=5)
    for i in range(4):
        traj = [r[i] for r in run.iou]
        assert all(b >= a for a, b in zip(traj, traj[1:]))


def test_iterate_thread_invariance():
    fxs, segs = _scene_inputs(range(5), (3.0, 2.4, 1.8))
    args = (segs, [f.gt_mask for f in fxs], [[f.tight_bbox] for f in fxs])
    a = iterate_pseudo_labels(*args, rounds=3, threads=1)
    b = iterate_pseudo_labels(*args, rounds=3, threads=8)
    assert a.to_csv() == b.to_csv()
    assert all(np.array_equal(x, y) for ra, rb in zip(a.labels, b.labels) for x, y in zip(ra, rb))


def test_iterate_length_mismatch():
    with pytest.raises(LengthMismatch):
        iterate_pseudo_labels([lambda *a: None], [], [])
