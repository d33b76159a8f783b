"""Smoke tests for the _sedcore python module."""

import math
import os
import sys
import tempfile

import numpy as np

import _sedcore as sc


def test_geometry():
    assert sc.iou([0, 0, 10, 10], [0, 0, 10, 10]) == 1.0
    assert abs(sc.iou([0, 0, 10, 10], [5, 0, 15, 10]) - 1 / 3) < 1e-12
    assert sc.iou([0, 0, 10, 10], [10, 10, 20, 20]) == 0.0
    assert abs(sc.giou([0, 0, 1, 1], [2, 0, 3, 1]) + 1 / 3) < 1e-12

    delta = sc.encode_box([0, 0, 20, 20], [0, 0, 10, 10])
    assert abs(delta[0] - 0.5) < 1e-12 and abs(delta[2] - math.log(2)) < 1e-12
    back = sc.decode_box(delta, [0, 0, 10, 10])
    assert max(abs(a - b) for a, b in zip(back, [0, 0, 20, 20])) < 1e-9

    dets = np.array([
        [0, 0, 10, 10, 0, 0.9],
        [1, 1, 11, 11, 0, 0.8],
        [30, 30, 40, 40, 1, 0.7],
    ])
    kept = sc.nms(dets, 0.5)
    assert kept.shape == (2, 6)
    assert kept[0, 5] == 0.9 and kept[1, 5] == 0.7


def test_divergences_and_reweighting():
    assert abs(sc.kl_div([1.0, 0.0], [0.5, 0.5]) - math.log(2)) < 1e-12
    assert abs(sc.js_div([1.0, 0.0], [0.0, 1.0]) - math.log(2)) < 1e-12
    assert sc.grad_norm([1.0, 0.0], [0.0, 1.0]) == 1.0
    value, counts, empty = sc.reweighted_mean([0.4, 0.6], [0.2, 0.7], 2)
    assert value == 0.5 and counts == [1, 1] and not empty

    report = sc.total_loss(1.0, 0.0, 2.0, 0.0, 3.0, 0.0, 8, 8)
    assert abs(report["total"] - 5.0) < 1e-12


def test_ema_schedule():
    assert sc.current_alpha("step", 0.99, 0.9, 120000, 180000, 0) == 0.99
    assert sc.current_alpha("step", 0.99, 0.9, 120000, 180000, 120000) == 0.9
    assert abs(sc.current_alpha("cosine", 0.996, 0.9, 0, 1000, 1000) - 0.9) < 1e-12


def test_matching():
    cost = np.array([[1.0, 2.0], [3.0, 1.0]])
    pairs = sc.solve_assignment(cost)
    assert pairs == [(0, 0), (1, 1)]

    probs = np.array([[1.0, 0.0], [0.0, 1.0]])
    boxes = np.array([[0, 0, 4, 4], [10, 10, 14, 14]], dtype=float)
    perm = [1, 0]
    pairs = sc.match_predictions(probs, boxes, probs[perm], boxes[perm], 1.0)
    assert sorted(pairs) == [(0, 1), (1, 0)]


def test_scenes_and_model():
    cfg = sc.DatasetConfig()
    cfg.image_size = 64
    cfg.min_object_size = 6
    cfg.max_object_size = 40
    img, boxes = sc.generate_scene(7, cfg)
    assert img.shape == (64, 64, 3)
    assert boxes.shape[1] == 5 and 1 <= boxes.shape[0] <= cfg.max_objects
    img2, _ = sc.generate_scene(7, cfg)
    assert np.array_equal(img, img2)

    half = sc.downsample(img, 1)
    assert half.shape == (32, 32, 3)
    strong = sc.strong_augment(img, seed=3)
    assert strong.shape == img.shape and strong.min() >= 0 and strong.max() <= 1
    weak, record = sc.weak_augment(img, seed=4)
    assert weak.shape == img.shape and 0.8 <= record["resize_factor"] <= 1.0

    model = sc.Model.init(4, 8, 8, 3, 4.0, seed=1)
    levels = model.forward(img)
    assert [lv["grid_h"] for lv in levels] == [16, 8, 4]
    probs = levels[0]["probs"]
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    dets = model.predict(img, 0.0, 0.5)
    assert dets.shape[1] == 6
    assert (np.diff(dets[:, 5]) <= 1e-12).all()  # sorted by score

    cls_loss, reg_loss = model.scale_consistency(img, s=1, reweight=True, bins=10)
    assert cls_loss >= 0 and reg_loss >= 0

    teacher = sc.Model.init(4, 8, 8, 3, 4.0, seed=2)
    dcls, dreg = model.self_distill(teacher, img, mode="soft")
    assert dcls >= 0 and dreg >= 0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.sedckpt")
        model.save(path)
        back = sc.Model.load(path)
        assert np.array_equal(back.forward(img)[0]["probs"], probs)


def test_compute_ap():
    gts = [np.array([[0, 0, 10, 10, 0], [20, 20, 30, 30, 1]], dtype=float)]
    dets = [np.array([[0, 0, 10, 10, 0, 1.0], [20, 20, 30, 30, 1, 0.9]], dtype=float)]
    rep = sc.compute_ap(dets, gts)
    assert rep["ap50"] == 1.0 and rep["map"] == 1.0


def main():
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print(f"{len(tests)} smoke tests passed")


if __name__ == "__main__":
    main()
