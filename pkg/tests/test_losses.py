import math

import numpy as np
import pytest

from oracles import plane_distance
from panosphere.geometry import cached_erp_directions
from panosphere.losses import (
    LossBranch,
    LossWeights,
    angular_discrepancy,
    distance_to_normal,
    loss_dis,
    loss_nor,
    total_loss,
)


def test_unit_sphere_normals_are_radial():
    h, w = 64, 128
    normals, valid = distance_to_normal(np.ones((h, w)))
    d = cached_erp_directions(h, w)
    band = slice(4, h - 4)
    assert valid[band].all()
    np.testing.assert_allclose(normals[band], -d[band], atol=1e-4)
    np.testing.assert_allclose(np.linalg.norm(normals[valid], axis=-1), 1.0, atol=1e-9)
    assert not valid[0].any()
    assert not normals[~valid].any()


def test_plane_normal_constant():
    h, w = 128, 256
    d = cached_erp_directions(h, w)
    dist = plane_distance(d, 2.0)
    front = np.isfinite(dist) & (d[..., 2] > 0.3)
    mask = front.astype(float)
    normals, valid = distance_to_normal(np.where(front, dist, 0.0), mask)
    assert valid.sum() > 1000
    np.testing.assert_allclose(normals[valid], np.broadcast_to([0, 0, -1], normals[valid].shape),
                               atol=1e-3)


def test_normals_scale_invariant():
    rng = np.random.default_rng(0)
    dist = 1.0 + 0.1 * rng.random((32, 64))
    a, va = distance_to_normal(dist)
    b, vb = distance_to_normal(3.0 * dist)
    np.testing.assert_array_equal(va, vb)
    np.testing.assert_allclose(a[va], b[vb], atol=1e-12)


def test_mask_invalidates_stencil():
    mask = np.ones((16, 32))
    mask[8, 10] = 0
    _, valid = distance_to_normal(np.ones((16, 32)), mask)
    for r, c in [(8, 10), (8, 9), (8, 11), (7, 10), (9, 10)]:
        assert not valid[r, c]
    assert valid[8, 13]


def test_loss_dis_examples():
    gt = np.array([[1.0, 2.0, 3.0]])
    assert loss_dis(gt, gt) == 0.0
    assert loss_dis(gt + 1, gt) == pytest.approx(1.0)
    mask = np.array([[1, 0, 1]])
    assert loss_dis(gt + np.array([[1.0, 5.0, 1.0]]), gt, mask) == pytest.approx(1.0)


def test_loss_nor_examples():
    a = np.array([[[0.0, 0.0, 1.0]]])
    assert loss_nor(a, a) == 0.0
    assert loss_nor(a, -a) == pytest.approx(2.0)
    assert loss_nor(np.array([[[1.0, 0, 0]]]), np.array([[[0, 1.0, 0]]])) == pytest.approx(2.0)


def test_loss_nor_bounds_and_angular_agreement(rng):
    n1 = rng.normal(size=(8, 8, 3))
    n1 /= np.linalg.norm(n1, axis=-1, keepdims=True)
    n2 = rng.normal(size=(8, 8, 3))
    n2 /= np.linalg.norm(n2, axis=-1, keepdims=True)
    assert 0 <= loss_nor(n1, n2) <= 4
    per_pixel = np.abs(n1 - n2).sum(axis=-1)
    ang = angular_discrepancy(n1, n2)
    assert np.all((per_pixel > 0) == (ang > 0))
    assert np.all(angular_discrepancy(n1, n1) < 1e-12)


def test_total_loss_examples():
    _, gt = (None, 1.0 + 0.1 * np.random.default_rng(0).random((16, 32)))
    res = total_loss(gt, gt)
    assert res.total == 0.0 and res.dis == 0.0 and res.nor == 0.0
    # median alignment removes a global scale
    assert total_loss(3.0 * gt, gt).total == pytest.approx(0.0, abs=1e-12)
    pred = gt * (1 + 0.05 * np.random.default_rng(1).standard_normal(gt.shape))
    full = total_loss(pred, gt)
    assert full.total == pytest.approx(full.dis + 2 * full.nor)
    only_nor = total_loss(pred, gt, weights=LossWeights(0.0, 1.0))
    assert only_nor.total == pytest.approx(full.nor)


def test_total_loss_median_example():
    pred = np.array([[1.0, 2.0]])
    gt = np.array([[2.0, 4.0]])
    assert total_loss(pred, gt, weights=LossWeights(1.0, 0.0)).dis == 0.0


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 1.0)
    with pytest.raises(ValueError):
        LossWeights(0.0, 0.0)


def test_total_loss_gradient_on_frozen_branch():
    rng = np.random.default_rng(3)
    h, w = 8, 16
    gt = 2.0 + 0.3 * rng.random((h, w))
    pred = gt * (1 + 0.1 * rng.standard_normal((h, w)))
    res = total_loss(pred, gt, return_grad=True)
    assert isinstance(res.branch, LossBranch)
    eps = 1e-6
    num = np.zeros_like(pred)
    for idx in np.ndindex(pred.shape):
        p = pred.copy()
        p[idx] += eps
        fp = total_loss(p, gt, branch=res.branch).total
        p[idx] -= 2 * eps
        fm = total_loss(p, gt, branch=res.branch).total
        num[idx] = (fp - fm) / (2 * eps)
    rel = np.linalg.norm(res.grad - num) / np.linalg.norm(num)
    assert rel < 1e-6
    # frozen evaluation at the base point equals the plain loss
    assert total_loss(pred, gt, branch=res.branch).total == pytest.approx(res.total, rel=1e-12)


def test_dead_zone_gives_zero_subgradient():
    gt = 1.0 + 0.1 * np.random.default_rng(2).random((8, 16))
    res = total_loss(gt.copy(), gt, weights=LossWeights(1.0, 0.0), return_grad=True)
    assert not res.grad.any()


def test_latitude_weighting_changes_mean():
    gt = np.ones((8, 16))
    pred = gt.copy()
    pred[1] = 3.0
    pred[4] = 0.5
    plain = loss_dis(pred, gt)
    weighted = loss_dis(pred, gt, latitude_weighting=True)
    assert plain != pytest.approx(weighted)
    assert math.isfinite(weighted)


def test_external_gt_normals():
    gt = np.ones((16, 32))
    n, v = distance_to_normal(gt)
    res = total_loss(gt, gt, gt_normals=n, gt_normals_valid=v)
    assert res.total == 0.0
