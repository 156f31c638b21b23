"""評価指標のテスト（閾値ごとのループで書き下した参照実装との比較を含む）"""

import numpy as np
import pytest

from vcp_cosod.core.exceptions import MetricInputError
from vcp_cosod.metrics.saliency_metrics import (
    SaliencyEvaluator,
    e_measure,
    f_measure,
    mae,
    precision_recall_curves,
    s_measure,
)

EPS = np.spacing(1)


def _blob_gt(size, rng):
    gt = np.zeros((size, size), dtype=bool)
    y0, x0 = rng.integers(2, size // 2, size=2)
    gt[y0:y0 + size // 3, x0:x0 + size // 3] = True
    return gt


def _random_instance(rng, size=16):
    return rng.uniform(size=(size, size)), _blob_gt(size, rng)


def _normalised(pred):
    """8bit 化したうえで各マップを [0, 1] に伸ばす（py_sod_metrics の前処理）"""
    p = np.round(pred * 255).astype(np.uint8) / 255
    if p.max() != p.min():
        p = (p - p.min()) / (p.max() - p.min())
    return p


def _levels(pred):
    return (_normalised(pred) * 255).astype(np.uint8)


def _f_oracle(pred, gt, beta2=0.3):
    levels = _levels(pred)
    curve = []
    for t in range(256):
        b = levels >= t
        tp = np.sum(b & gt)
        p = tp / b.sum() if b.sum() else 0.0
        r = tp / gt.sum() if gt.sum() else 0.0
        curve.append((1 + beta2) * p * r / (beta2 * p + r) if p * r > 0 else 0.0)
    return np.array(curve)


def _e_oracle(pred, gt):
    levels = _levels(pred)
    g = gt.astype(np.float64)
    n = g.size
    curve = []
    for t in range(256):
        b = (levels >= t).astype(np.float64)
        if g.sum() == 0:
            total = n - b.sum()
        elif g.sum() == n:
            total = b.sum()
        else:
            fb, fg = b - b.mean(), g - g.mean()
            align = 2 * fb * fg / (fb ** 2 + fg ** 2 + EPS)
            total = np.sum((align + 1) ** 2 / 4)
        curve.append(min(total / (n - 1 + EPS), 1.0))
    return np.array(curve)


def _ssim_oracle(p, g):
    n = p.size
    x, y = p.mean(), g.mean()
    sx = ((p - x) ** 2).sum() / (n - 1)
    sy = ((g - y) ** 2).sum() / (n - 1)
    sxy = ((p - x) * (g - y)).sum() / (n - 1)
    a = 4 * x * y * sxy
    b = (x ** 2 + y ** 2) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def _s_oracle(pred, gt):
    """構造類似度の参照手順をそのまま書き下したもの"""
    pred = _normalised(pred)
    y = gt.mean()
    if y == 0:
        return 1 - pred.mean()
    if y == 1:
        return pred.mean()
    fg = np.where(gt, pred, 0)
    bg = np.where(~gt, 1 - pred, 0)

    def obj(values):
        mu = values.mean()
        return 2 * mu / (mu ** 2 + 1 + values.std(ddof=1) + EPS)

    u = gt.mean()
    o = u * obj(fg[gt]) + (1 - u) * obj(bg[~gt])

    h, w = gt.shape
    rows, cols = np.nonzero(gt)
    cy, cx = int(np.round(rows.mean())) + 1, int(np.round(cols.mean())) + 1
    g = gt.astype(np.float64)
    area = h * w
    w1 = cx * cy / area
    w2 = cy * (w - cx) / area
    w3 = (h - cy) * cx / area
    w4 = 1 - w1 - w2 - w3
    r = (w1 * _ssim_oracle(pred[:cy, :cx], g[:cy, :cx]) + w2 * _ssim_oracle(pred[:cy, cx:], g[:cy, cx:])
         + w3 * _ssim_oracle(pred[cy:, :cx], g[cy:, :cx]) + w4 * _ssim_oracle(pred[cy:, cx:], g[cy:, cx:]))
    return max(0.0, 0.5 * o + 0.5 * r)


class TestMAE:
    def test_examples(self):
        gt = np.array([[1, 1], [0, 0]])
        assert mae(gt.astype(float), gt) == 0
        assert mae(1.0 - gt, gt) == 1
        assert mae(np.full((2, 2), 0.25), gt) == pytest.approx(0.5)

    def test_complement_symmetry(self, rng):
        pred, gt = _random_instance(rng)
        assert mae(pred, gt) == pytest.approx(mae(1 - pred, ~gt), abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(MetricInputError):
            mae(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_non_binary_gt(self):
        with pytest.raises(MetricInputError):
            mae(np.zeros((2, 2)), np.full((2, 2), 0.5))

    def test_prediction_out_of_range(self):
        with pytest.raises(MetricInputError):
            mae(np.full((2, 2), 1.5), np.zeros((2, 2)))

    def test_maps_must_be_2d(self):
        with pytest.raises(MetricInputError):
            mae(np.zeros(4), np.zeros(4))


class TestFMeasure:
    def test_perfect_prediction(self):
        gt = np.zeros((8, 8), dtype=bool)
        gt[2:5, 2:6] = True
        _, mean, best = f_measure(gt.astype(float), gt)
        assert best == pytest.approx(1.0)
        assert mean <= best

    def test_all_zero_prediction(self):
        gt = np.zeros((4, 4), dtype=bool)
        gt[0] = True
        curve, _, _ = f_measure(np.zeros((4, 4)), gt)
        # t = 0 は全画素を前景とみなす
        assert np.all(curve[1:] == 0)
        assert curve[0] == pytest.approx(1.3 * 0.25 / (0.3 * 0.25 + 1))

    def test_four_pixel_example(self):
        curve, _, best = f_measure(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([[1, 0], [0, 0]]))
        assert curve[128] == pytest.approx(1.3 * 0.5 / (0.3 * 0.5 + 1), abs=1e-9)
        assert curve[0] == pytest.approx(1.3 * 0.25 / (0.3 * 0.25 + 1), abs=1e-9)
        assert best == pytest.approx(curve[128])

    def test_empty_gt(self):
        curve, _, _ = f_measure(np.full((4, 4), 0.7), np.zeros((4, 4)))
        assert np.all(curve == 0)

    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            pred, gt = _random_instance(rng)
            curve, mean, best = f_measure(pred, gt)
            np.testing.assert_allclose(curve, _f_oracle(pred, gt), atol=1e-6)
            assert best >= mean

    def test_precision_recall_ranges(self, rng):
        pred, gt = _random_instance(rng)
        precision, recall = precision_recall_curves(pred, gt)
        assert precision.shape == recall.shape == (256,)
        assert np.all((precision >= 0) & (precision <= 1))
        assert recall[0] == pytest.approx(1.0)
        assert np.all(np.diff(recall) <= 1e-12)


class TestSMeasure:
    def test_perfect_prediction(self):
        gt = np.zeros((8, 8), dtype=bool)
        gt[1:4, 2:7] = True
        assert s_measure(gt.astype(float), gt) == pytest.approx(1.0, abs=1e-9)

    def test_constant_mean_prediction_is_below_one(self):
        gt = np.zeros((8, 8), dtype=bool)
        gt[2:6, 2:6] = True
        assert s_measure(np.full((8, 8), gt.mean()), gt) < 1

    def test_degenerate_gt(self):
        pred = np.full((4, 4), 0.2)
        assert s_measure(pred, np.zeros((4, 4))) == pytest.approx(0.8)
        assert s_measure(pred, np.ones((4, 4))) == pytest.approx(0.2)

    def test_matches_reference_8x8(self):
        rng = np.random.default_rng(2)
        pred, gt = _random_instance(rng, size=8)
        assert s_measure(pred, gt) == pytest.approx(_s_oracle(pred, gt), abs=1e-6)

    def test_matches_reference_random(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            pred, gt = _random_instance(rng)
            value = s_measure(pred, gt)
            assert value == pytest.approx(_s_oracle(pred, gt), abs=1e-6)
            assert 0 <= value <= 1


class TestEMeasure:
    def test_perfect_prediction(self):
        gt = np.zeros((8, 8), dtype=bool)
        gt[3:7, 1:4] = True
        _, mean, best = e_measure(gt.astype(float), gt)
        assert best == pytest.approx(1.0, abs=1e-9)
        assert mean <= best

    def test_inverted_prediction(self):
        gt = np.zeros((8, 8), dtype=bool)
        gt[3:7, 1:4] = True
        curve, _, _ = e_measure(1.0 - gt, gt)
        assert curve[128] < 1e-9

    def test_degenerate_gt(self):
        pred = np.full((4, 4), 0.1)
        pred[0] = 0.9
        curve, _, _ = e_measure(pred, np.zeros((4, 4)))
        assert curve[128] == pytest.approx(12 / 15)
        curve, _, _ = e_measure(pred, np.ones((4, 4)))
        assert curve[128] == pytest.approx(4 / 15)

    def test_matches_reference_8x8(self):
        rng = np.random.default_rng(4)
        pred, gt = _random_instance(rng, size=8)
        curve, _, _ = e_measure(pred, gt)
        np.testing.assert_allclose(curve, _e_oracle(pred, gt), atol=1e-6)

    def test_matches_reference_random(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            pred, gt = _random_instance(rng)
            curve, mean, best = e_measure(pred, gt)
            np.testing.assert_allclose(curve, _e_oracle(pred, gt), atol=1e-6)
            assert 0 <= mean <= best <= 1


class TestEvaluator:
    def test_perfect_and_complement(self):
        gt = np.zeros((16, 16), dtype=bool)
        gt[4:10, 5:12] = True
        evaluator = SaliencyEvaluator()
        evaluator.step(gt.astype(float), gt)
        results = evaluator.get_results()
        assert results["MAE"] == 0
        assert results["S_m"] == pytest.approx(1.0, abs=1e-9)
        assert results["E_m_max"] == pytest.approx(1.0, abs=1e-9)
        assert results["F_m_max"] == pytest.approx(1.0)

        evaluator.reset()
        evaluator.step(1.0 - gt, gt)
        assert evaluator.get_results()["MAE"] == 1

    def test_curves_are_pointwise_means(self, rng):
        evaluator = SaliencyEvaluator()
        instances = [_random_instance(rng) for _ in range(3)]
        for pred, gt in instances:
            evaluator.step(pred, gt)
        results = evaluator.get_results()
        expected = np.mean([f_measure(p, g)[0] for p, g in instances], axis=0)
        np.testing.assert_allclose(results["fm_curve"], expected)
        assert results["F_m"] == pytest.approx(expected.mean())
        assert results["F_m_max"] == pytest.approx(expected.max())
        assert results["S_m"] == pytest.approx(np.mean([s_measure(p, g) for p, g in instances]))
        assert len(evaluator) == 3

    def test_empty(self):
        with pytest.raises(MetricInputError):
            SaliencyEvaluator().get_results()
