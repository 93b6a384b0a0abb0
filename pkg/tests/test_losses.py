import math

import numpy as np
import pytest

from pmsfm.errors import DegenerateScaleError, EmptyDomainError, ValidationError
from pmsfm.geometry import Pointmap
from pmsfm.losses import PointmapPairBatch, conf_loss, norm_factor, regr_loss


def make_pm(points, mask=None, conf=None):
    points = np.asarray(points, dtype=float)
    h, w = points.shape[:2]
    if mask is None:
        mask = np.ones((h, w), dtype=bool)
    if conf is None:
        conf = np.ones((h, w))
    return Pointmap(w, h, points, conf, np.asarray(mask, dtype=bool))


def random_batch(rng, w=6, h=5, alpha=0.2):
    def rand_pm():
        return make_pm(rng.normal(size=(h, w, 3)) + 2.0,
                       mask=rng.uniform(size=(h, w)) > 0.3)
    return PointmapPairBatch(predicted=(rand_pm(), rand_pm()),
                             ground_truth=(rand_pm(), rand_pm()), alpha=alpha)


def norm_factor_oracle(batch):
    """Scalar loop over the intersection masks, both views."""
    total, count = 0.0, 0
    for v in range(2):
        m = batch.predicted[v].mask & batch.ground_truth[v].mask
        for j in range(batch.predicted[v].height):
            for i in range(batch.predicted[v].width):
                if m[j, i]:
                    total += math.sqrt(sum(c * c for c in batch.predicted[v].points[j, i]))
                    count += 1
    return total / count


def regr_oracle(batch):
    """Per-pixel scalar implementation of the normalized regression loss."""
    z = norm_factor_oracle(batch)
    gt_swapped = PointmapPairBatch(predicted=batch.ground_truth,
                                   ground_truth=batch.predicted, alpha=batch.alpha)
    z_bar = norm_factor_oracle(gt_swapped)
    out = []
    for v in range(2):
        m = batch.predicted[v].mask & batch.ground_truth[v].mask
        h, w = m.shape
        grid = np.zeros((h, w))
        for j in range(h):
            for i in range(w):
                if m[j, i]:
                    d = (batch.predicted[v].points[j, i] / z
                         - batch.ground_truth[v].points[j, i] / z_bar)
                    grid[j, i] = math.sqrt(sum(c * c for c in d))
        out.append(grid)
    return out


class TestNormFactor:
    def test_constant_distance(self):
        pts = np.zeros((2, 3, 3))
        pts[..., 0] = 2.0  # all points at distance 2
        pm = make_pm(pts)
        assert norm_factor(pm, pm) == pytest.approx(2.0, abs=0)

    def test_single_point_mean(self):
        pm1 = make_pm([[[3.0, 4.0, 0.0], [9.0, 9.0, 9.0]]],
                      mask=[[True, False]])
        pm2 = make_pm(np.ones((1, 2, 3)), mask=[[False, False]])
        assert norm_factor(pm1, pm2) == pytest.approx(5.0, abs=0)

    def test_empty_domain(self):
        pm = make_pm(np.ones((1, 2, 3)), mask=[[False, False]])
        with pytest.raises(EmptyDomainError):
            norm_factor(pm, pm)

    @pytest.mark.parametrize("seed", range(8))
    def test_masked_pair_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pm1 = make_pm(rng.normal(size=(4, 5, 3)), mask=rng.uniform(size=(4, 5)) > 0.4)
        pm2 = make_pm(rng.normal(size=(4, 5, 3)), mask=rng.uniform(size=(4, 5)) > 0.4)
        total, count = 0.0, 0
        for pm in (pm1, pm2):
            for j in range(4):
                for i in range(5):
                    if pm.mask[j, i]:
                        total += np.linalg.norm(pm.points[j, i])
                        count += 1
        assert norm_factor(pm1, pm2) == pytest.approx(total / count, rel=1e-14)


class TestRegrLoss:
    def test_perfect_prediction_any_scale(self, rng):
        gt1 = make_pm(rng.normal(size=(3, 4, 3)))
        gt2 = make_pm(rng.normal(size=(3, 4, 3)))
        for s in (1e-3, 1.0, 1e3):
            pred1 = make_pm(gt1.points * s)
            pred2 = make_pm(gt2.points * s)
            batch = PointmapPairBatch((pred1, pred2), (gt1, gt2))
            grids = regr_loss(batch)
            assert max(g.max() for g in grids.losses) <= 1e-12

    def test_single_point_scale_collapse(self):
        pred = make_pm([[[0.0, 0.0, 1.0]]])
        gt = make_pm([[[0.0, 0.0, 2.0]]])
        empty = make_pm(np.ones((1, 1, 3)), mask=[[False]])
        batch = PointmapPairBatch((pred, empty), (gt, empty))
        grids = regr_loss(batch)
        assert grids.losses[0][0, 0] == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("seed", range(8))
    def test_scalar_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        batch = random_batch(rng)
        grids = regr_loss(batch)
        expected = regr_oracle(batch)
        for v in range(2):
            assert np.max(np.abs(grids.losses[v] - expected[v])) <= 1e-12

    @pytest.mark.parametrize("s", [1e-3, 1.0, 1e3])
    def test_scale_invariance(self, s, rng):
        batch = random_batch(rng)
        base = regr_loss(batch)
        scaled_pred = tuple(make_pm(pm.points * s, pm.mask) for pm in batch.predicted)
        scaled = regr_loss(PointmapPairBatch(scaled_pred, batch.ground_truth))
        for v in range(2):
            assert np.max(np.abs(base.losses[v] - scaled.losses[v])) <= 1e-10
        # likewise scaling the ground-truth pair
        scaled_gt = tuple(make_pm(pm.points * s, pm.mask) for pm in batch.ground_truth)
        scaled2 = regr_loss(PointmapPairBatch(batch.predicted, scaled_gt))
        for v in range(2):
            assert np.max(np.abs(base.losses[v] - scaled2.losses[v])) <= 1e-10

    def test_mask_monotonicity(self, rng):
        batch = random_batch(rng)
        masks = batch.valid_masks()
        off = np.argwhere(~masks[0])
        if len(off) == 0:
            pytest.skip("all pixels already valid")
        j, i = off[0]
        grown0 = batch.predicted[0].mask.copy()
        grown0[j, i] = True
        gt0 = batch.ground_truth[0].mask.copy()
        gt0[j, i] = True
        batch2 = PointmapPairBatch(
            (make_pm(batch.predicted[0].points, grown0), batch.predicted[1]),
            (make_pm(batch.ground_truth[0].points, gt0), batch.ground_truth[1]))
        m2 = batch2.valid_masks()
        assert sum(m.sum() for m in m2) == sum(m.sum() for m in masks) + 1
        # only that pixel's exclusion flag changed
        assert np.array_equal(m2[0] ^ masks[0], np.eye(1, masks[0].size,
                              j * masks[0].shape[1] + i, dtype=bool).reshape(masks[0].shape))

    def test_degenerate_scale(self):
        zero = make_pm(np.zeros((1, 2, 3)))
        with pytest.raises(DegenerateScaleError):
            regr_loss(PointmapPairBatch((zero, zero), (zero, zero)))


def conf_oracle(batch, raw):
    """Pixel-by-pixel application of the confidence-weighted sum."""
    grids = regr_oracle(batch)
    total = 0.0
    for v in range(2):
        m = batch.predicted[v].mask & batch.ground_truth[v].mask
        for j in range(m.shape[0]):
            for i in range(m.shape[1]):
                if m[j, i]:
                    c = 1.0 + math.exp(raw[v][j, i])
                    total += c * grids[v][j, i] - batch.alpha * math.log(c)
    return total


class TestConfLoss:
    def test_perfect_alpha_zero(self, rng):
        gt1, gt2 = make_pm(rng.normal(size=(3, 3, 3))), make_pm(rng.normal(size=(3, 3, 3)))
        batch = PointmapPairBatch((gt1, gt2), (gt1, gt2), alpha=0.0)
        raw = (rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
        assert conf_loss(batch, raw) == pytest.approx(0.0, abs=1e-12)

    def test_perfect_alpha_positive_closed_form(self, rng):
        gt1, gt2 = make_pm(rng.normal(size=(3, 3, 3))), make_pm(rng.normal(size=(3, 3, 3)))
        alpha = 0.7
        batch = PointmapPairBatch((gt1, gt2), (gt1, gt2), alpha=alpha)
        raw = (rng.normal(size=(3, 3)), rng.normal(size=(3, 3)))
        expected = -alpha * sum(np.log1p(np.exp(r)).sum() for r in raw)
        got = conf_loss(batch, raw)
        assert got < 0
        assert got == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_scalar_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        batch = random_batch(rng, alpha=0.3)
        raw = (rng.normal(size=(5, 6)), rng.normal(size=(5, 6)))
        assert conf_loss(batch, raw) == pytest.approx(conf_oracle(batch, raw),
                                                      rel=1e-10, abs=1e-10)

    def test_low_confidence_limit(self, rng):
        # raw -> -inf: effective confidence -> 1, loss -> unweighted sum
        batch = random_batch(rng, alpha=0.5)
        raw = (np.full((5, 6), -30.0), np.full((5, 6), -30.0))
        grids = regr_loss(batch)
        assert conf_loss(batch, raw) == pytest.approx(grids.total(), abs=1e-8)

    def test_monotone_in_regression_error(self, rng):
        gt = make_pm(rng.normal(size=(2, 2, 3)) + 3.0)
        raw = (np.zeros((2, 2)), np.zeros((2, 2)))
        prev = None
        for eps in (0.0, 0.05, 0.1, 0.2):
            pred = make_pm(gt.points + eps * np.array([1.0, 0.0, 0.0]))
            batch = PointmapPairBatch((pred, pred), (gt, gt), alpha=0.2)
            val = conf_loss(batch, raw)
            if prev is not None:
                assert val >= prev - 1e-12
            prev = val

    def test_nonfinite_raw_rejected(self, rng):
        batch = random_batch(rng)
        raw = (np.full((5, 6), np.nan), np.zeros((5, 6)))
        with pytest.raises(ValidationError):
            conf_loss(batch, raw)
