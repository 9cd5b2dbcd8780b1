import numpy as np
import pytest

from oracles import naive_metrics
from panosphere.alignment import AlignmentMode
from panosphere.metrics import MetricReport, eval_dataset, eval_pair


def test_identity():
    gt = np.array([1.0, 2.0, 3.0])
    r = eval_pair(gt, gt)
    assert (r.absrel, r.rmse, r.delta1, r.delta2) == (0.0, 0.0, 100.0, 100.0)
    assert r.n_valid == 3 and r.alignment == "median"


def test_delta_boundary_is_strict():
    gt = np.array([1.0, 2.0, 4.0])
    r = eval_pair(1.25 * gt, gt, mode="none")
    assert r.delta1 == 0.0 and r.delta2 == 100.0


def test_hand_example():
    r = eval_pair(np.array([1.0, 2.0, 4.0]), np.array([1.0, 2.0, 3.0]), mode=AlignmentMode.NONE)
    assert r.absrel == pytest.approx(100 / 9, abs=1e-12)
    assert round(r.absrel, 2) == 11.11
    assert r.delta1 == pytest.approx(200 / 3)
    assert round(r.delta1, 2) == 66.67


def test_rmse_variants():
    pred = np.array([1.0, 2.0, 4.0, 4.0])
    gt = np.array([1.0, 2.0, 3.0, 2.0])
    conv = eval_pair(pred, gt, mode="none").rmse
    literal = eval_pair(pred, gt, mode="none", rmse_literal=True).rmse
    assert conv == pytest.approx(100 * np.sqrt(5 / 4))
    assert literal == pytest.approx(100 * np.sqrt(5) / 4)


def test_matches_loop_oracle(rng):
    for _ in range(50):
        h, w = rng.integers(1, 9, size=2)
        pred = rng.uniform(0.1, 10, (h, w))
        gt = rng.uniform(0.1, 10, (h, w))
        r = eval_pair(pred, gt, mode="none")
        ref = naive_metrics(pred, gt)
        for key in ref:
            assert getattr(r, key) == pytest.approx(ref[key], abs=1e-12)


def test_mask_and_errors():
    pred = np.array([1.0, 2.0, 9.0])
    gt = np.array([1.0, 2.0, 3.0])
    r = eval_pair(pred, gt, np.array([1, 1, 0]), mode="none")
    assert r.absrel == 0.0 and r.n_valid == 2
    with pytest.raises(ValueError, match="positive"):
        eval_pair(pred, np.array([1.0, 0.0, 3.0]), np.ones(3))
    with pytest.raises(ValueError, match="no valid"):
        eval_pair(pred, gt, np.zeros(3))


def test_dataset_aggregation():
    gt = np.array([1.0, 2.0, 3.0])
    one = eval_pair(np.array([1.0, 2.0, 4.0]), gt, mode="none")
    agg = eval_dataset([(np.array([1.0, 2.0, 4.0]), gt, None)], mode="none")
    assert agg.absrel == one.absrel and agg.delta1 == one.delta1
    twice = eval_dataset([(np.array([1.0, 2.0, 4.0]), gt, None)] * 2, mode="none")
    assert twice.absrel == pytest.approx(one.absrel) and twice.n_images == 2
    # per-image AbsRel 10% and 20% average to 15%
    r = eval_dataset([(np.array([1.1]), np.array([1.0]), None),
                      (np.array([1.2]), np.array([1.0]), None)], mode="none")
    assert r.absrel == pytest.approx(15.0)


def test_dataset_records_failures():
    gt = np.array([1.0, 2.0])
    r = eval_dataset([(gt, gt, None), (gt, gt, np.zeros(2))])
    assert r.n_images == 1 and r.n_failed == 1 and r.errors[0]["index"] == 1
    with pytest.raises(ValueError):
        eval_dataset([(gt, gt, np.zeros(2))])
    with pytest.raises(ValueError):
        eval_dataset([])


def test_pooling_differs_from_per_image():
    a = (np.array([1.0, 1.0, 1.0, 1.0]), np.array([1.0, 1.0, 1.0, 2.0]), None)
    b = (np.array([2.0]), np.array([2.0]), None)
    per_image = eval_dataset([a, b], mode="none")
    pooled = eval_dataset([a, b], mode="none", pool_pixels=True)
    assert per_image.absrel == pytest.approx(50 / 4 / 2)
    assert pooled.absrel == pytest.approx(50 / 5)


def test_report_table_and_dict():
    r = MetricReport(11.111, 5.0, 66.667, 100.0, 3)
    table = r.table("demo")
    assert "AbsRel" in table and "11.11" in table and "66.67" in table
    assert r.to_dict()["delta2"] == 100.0


def test_invariants(rng):
    gt = rng.uniform(0.5, 5, (8, 8))
    pred = gt * rng.uniform(0.7, 1.4, (8, 8))
    base = eval_pair(pred, gt)
    for c in (0.1, 1.0, 10.0):
        r = eval_pair(c * pred, gt)
        assert r.delta1 == base.delta1 and r.delta2 == base.delta2
        assert r.absrel == pytest.approx(base.absrel, rel=1e-12)
    base = eval_pair(pred, gt, mode="affine")
    for a, b in ((2.0, 3.0), (-1.0, 5.0)):
        r = eval_pair(a * pred + b, gt, mode="affine")
        assert r.absrel == pytest.approx(base.absrel, abs=1e-9)
        assert r.rmse == pytest.approx(base.rmse, abs=1e-9)
        assert r.delta1 == base.delta1
    assert base.delta1 <= base.delta2
