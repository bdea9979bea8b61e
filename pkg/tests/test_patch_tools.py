import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from common.errors import ConfigurationError, ContractError, DimensionError, InputError, OutOfBoundsError
from patch_tools.boxes import BoundingBox, crop_patch, iou
from patch_tools.detection_metrics import (
    average_precision,
    detection_metrics,
    evaluate_detections,
    match_detections,
)
from patch_tools.image_io import read_image, resize_patch, to_uint8, write_png


def box(x0, y0, x1, y1, conf=1.0):
    return BoundingBox(float(x0), float(y0), float(x1), float(y1), conf)


def random_boxes(rng, n, grid=12):
    out = []
    for _ in range(n):
        x0, y0 = rng.integers(0, grid - 1, size=2)
        w, h = rng.integers(1, 5, size=2)
        out.append(box(x0, y0, x0 + w, y0 + h, float(rng.choice([0.2, 0.4, 0.6, 0.8, 0.9]))))
    return out


# -- boxes and cropping ------------------------------------------------------
def test_iou_examples():
    a = box(0, 0, 2, 2)
    assert iou(a, a) == 1.0
    assert iou(a, box(5, 5, 6, 6)) == 0.0
    assert iou(a, box(2, 0, 4, 2)) == 0.0
    assert iou(a, box(1, 1, 3, 3)) == pytest.approx(1 / 7, abs=1e-12)


@given(st.lists(st.integers(0, 10), min_size=8, max_size=8))
def test_iou_symmetric_and_bounded(coords):
    a = box(coords[0], coords[1], coords[0] + 1 + coords[2], coords[1] + 1 + coords[3])
    b = box(coords[4], coords[5], coords[4] + 1 + coords[6], coords[5] + 1 + coords[7])
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, b) == iou(b, a)


def test_degenerate_boxes_are_rejected():
    with pytest.raises(ContractError):
        box(1, 0, 1, 2)
    with pytest.raises(ContractError):
        box(0, 0, 2, 2, conf=1.5)


def test_crop_patch_examples():
    image = np.arange(48, dtype=np.float64).reshape(4, 4, 3) / 48.0
    patch = crop_patch(image, box(0, 0, 2, 2))
    assert patch.shape == (2, 2, 3)
    np.testing.assert_array_equal(patch, image[0:2, 0:2])
    assert crop_patch(image, box(0, 0, 2, 2, conf=0.4), min_confidence=0.5) is None
    with pytest.raises(OutOfBoundsError):
        crop_patch(image, box(3, 3, 5, 5))


def test_crop_rounds_half_up():
    image = np.zeros((6, 6, 3))
    patch = crop_patch(image, box(0.5, 1.5, 2.5, 4.4))
    # pixels x 1..3, y 2..4
    assert patch.shape == (2, 2, 3)
    with pytest.raises(DimensionError):
        crop_patch(np.zeros((4, 4)), box(0, 0, 2, 2))


@given(x0=st.integers(0, 10), y0=st.integers(0, 10), w=st.integers(1, 6), h=st.integers(1, 6))
def test_crop_size_equals_box_size(x0, y0, w, h):
    image = np.zeros((16, 16, 3))
    assert crop_patch(image, box(x0, y0, x0 + w, y0 + h)).shape == (h, w, 3)


# -- matching and metrics ----------------------------------------------------
def test_single_exact_prediction_is_a_true_positive():
    result = match_detections([box(0, 0, 2, 2, 0.9)], [box(0, 0, 2, 2)])
    assert (result.tp, result.fp, result.fn_count) == (1, 0, 0)


def test_higher_confidence_prediction_wins_the_ground_truth():
    result = match_detections([box(0, 0, 2, 2.2, 0.6), box(0, 0, 2, 2.1, 0.9)], [box(0, 0, 2, 2)])
    by_conf = {lab.confidence: lab.is_tp for lab in result.labels}
    assert by_conf == {0.9: True, 0.6: False}


def test_invalid_threshold():
    for t in (0.0, 1.5):
        with pytest.raises(ConfigurationError):
            match_detections([], [], t)


def test_metrics_with_one_false_positive():
    result = match_detections([box(0, 0, 2, 2, 0.9), box(8, 8, 10, 10, 0.8)], [box(0, 0, 2, 2)], 0.5)
    record = detection_metrics(result.labels, result.fn_count, 0.5)
    assert record.precision == 0.5 and record.recall == 1.0
    assert record.f1 == pytest.approx(2 / 3)
    assert record.ap == 1.0


def test_metrics_with_only_a_disjoint_prediction():
    result = match_detections([box(8, 8, 10, 10, 0.8)], [box(0, 0, 2, 2)], 0.5)
    record = detection_metrics(result.labels, result.fn_count)
    assert (record.precision, record.recall, record.f1, record.ap) == (0.0, 0.0, 0.0, 0.0)


def test_stricter_thresholds_do_not_raise_scores():
    gts = [box(0, 0, 4, 4), box(10, 10, 14, 14)]
    preds = [box(0, 0, 4, 4, 0.9), box(10, 10, 14, 15, 0.7), box(1, 1, 5, 5, 0.6), box(20, 20, 21, 21, 0.5)]
    report = evaluate_detections([(preds, gts)])
    frame = report.to_frame()
    assert list(frame["iou_threshold"]) == [0.5, 0.75, 0.90]
    for column in ("precision", "recall", "ap"):
        assert frame[column].is_monotonic_decreasing
    for record in report.records.values():
        assert record.tp + record.fn == len(gts)
        assert record.tp + record.fp == len(preds)


box_strategy = st.builds(
    lambda x, y, w, h, conf: box(x, y, x + w, y + h, conf),
    st.integers(0, 10), st.integers(0, 10), st.integers(1, 5), st.integers(1, 5),
    st.sampled_from([0.2, 0.4, 0.6, 0.8, 0.9]),
)


@settings(max_examples=200, deadline=None)
@given(
    images=st.lists(
        st.tuples(st.lists(box_strategy, max_size=8), st.lists(box_strategy, max_size=5)), min_size=1, max_size=3
    ),
    thresholds=st.lists(st.floats(0.05, 1.0), min_size=2, max_size=4, unique=True),
)
def test_scores_never_rise_with_the_iou_threshold(images, thresholds):
    thresholds = sorted(thresholds)
    report = evaluate_detections(images, thresholds=thresholds)
    records = [report[t] for t in thresholds]
    for loose, strict in zip(records, records[1:]):
        assert strict.tp <= loose.tp
        for name in ("precision", "recall", "ap"):
            assert getattr(strict, name) <= getattr(loose, name) + 1e-12


def test_pooled_evaluation_respects_min_confidence():
    images = [([box(0, 0, 2, 2, 0.9), box(4, 4, 6, 6, 0.3)], [box(0, 0, 2, 2)]),
              ([box(0, 0, 3, 3, 0.7)], [box(0, 0, 3, 3), box(5, 5, 7, 7)])]
    record = evaluate_detections(images, thresholds=(0.5,), min_confidence=0.5)[0.5]
    assert (record.tp, record.fp, record.fn) == (2, 0, 1)


# -- brute-force oracles -----------------------------------------------------
def raster_iou(a: BoundingBox, b: BoundingBox, grid=20) -> float:
    ys, xs = np.mgrid[0:grid, 0:grid] + 0.5
    in_a = (xs > a.x_min) & (xs < a.x_max) & (ys > a.y_min) & (ys < a.y_max)
    in_b = (xs > b.x_min) & (xs < b.x_max) & (ys > b.y_min) & (ys < b.y_max)
    return (in_a & in_b).sum() / (in_a | in_b).sum()


def reference_match(preds, gts, threshold):
    overlaps = np.array([[raster_iou(p, g) for g in gts] for p in preds]).reshape(len(preds), len(gts))
    order = np.argsort([-p.confidence for p in preds], kind="stable")
    free = np.ones(len(gts), dtype=bool)
    hits = []
    for i in order:
        candidates = np.where(free & (overlaps[i] >= threshold), overlaps[i], -1.0)
        j = int(np.argmax(candidates)) if len(gts) else 0
        hit = len(gts) > 0 and candidates[j] >= 0
        if hit:
            free[j] = False
        hits.append((preds[i].confidence, hit))
    return hits, int(free.sum())


def staircase_ap(hits, n_gt):
    if n_gt == 0 or not hits:
        return 0.0
    ranked = sorted(hits, key=lambda h: -h[0])
    area, tp, prev_recall = 0.0, 0, 0.0
    for k, (_, hit) in enumerate(ranked, start=1):
        tp += hit
        recall = tp / n_gt
        area += (recall - prev_recall) * (tp / k)
        prev_recall = recall
    return area


def test_random_iou_matches_raster_count():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b = random_boxes(rng, 2)
        assert iou(a, b) == pytest.approx(raster_iou(a, b), abs=1e-12)


def test_random_matching_and_ap_match_reference():
    rng = np.random.default_rng(1)
    for trial in range(1000):
        n_pred = 50 if trial % 100 == 0 else int(rng.integers(0, 12))
        preds, gts = random_boxes(rng, n_pred), random_boxes(rng, int(rng.integers(0, 8)))
        threshold = float(rng.choice([0.3, 0.5, 0.75]))
        result = match_detections(preds, gts, threshold)
        hits, fn = reference_match(preds, gts, threshold)
        assert (result.tp, result.fp, result.fn_count) == (sum(h for _, h in hits), sum(not h for _, h in hits), fn)
        assert average_precision(result.labels, len(gts)) == pytest.approx(staircase_ap(hits, len(gts)), abs=1e-12)


# -- image io ----------------------------------------------------------------
def test_png_keeps_8bit_pixels(tmp_path):
    pixels = np.random.default_rng(2).uniform(size=(5, 7, 3))
    read = read_image(write_png(pixels, tmp_path / "p.png"))
    np.testing.assert_array_equal(to_uint8(read), to_uint8(pixels))


def test_ppm_images_are_readable(tmp_path):
    body = bytes(range(12))
    (tmp_path / "p.ppm").write_bytes(b"P6\n2 2\n255\n" + body)
    pixels = read_image(tmp_path / "p.ppm")
    assert pixels.shape == (2, 2, 3)
    assert pixels[0, 0, 1] == pytest.approx(1 / 255)


def test_unreadable_image(tmp_path):
    (tmp_path / "bad.png").write_bytes(b"not an image")
    with pytest.raises(InputError):
        read_image(tmp_path / "bad.png")


def test_resize_patch():
    patch = np.full((6, 4, 3), 0.5)
    assert resize_patch(patch, 8).shape == (8, 8, 3)
    same = np.zeros((8, 8, 3))
    assert resize_patch(same, 8) is same
