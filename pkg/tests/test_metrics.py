import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geofuse import metrics
from geofuse.errors import ContractViolation


def brute_confusion(pred, true, K, ignore=(255,)):
    c = np.zeros((K, K), dtype=np.int64)
    for p, t in zip(pred.ravel(), true.ravel()):
        if t in ignore:
            continue
        c[t, p] += 1
    return c


def oracle_miou_acc(pred, true, K, ignore=(255,)):
    keep = ~np.isin(true, ignore)
    p, t = pred[keep], true[keep]
    ious = []
    for k in range(K):
        inter = np.sum((p == k) & (t == k))
        union = np.sum((p == k) | (t == k))
        if union:
            ious.append(inter / union)
    return float(np.mean(ious)), float(np.mean(p == t))


def random_case(seed, K=5, shape=(16, 16)):
    rng = np.random.default_rng(seed)
    true = rng.integers(0, K, shape)
    true[rng.uniform(size=shape) < 0.1] = 255
    pred = rng.integers(0, K, shape)
    return pred, true


def test_all_ignored_leaves_counts_unchanged():
    acc = metrics.ConfusionAccumulator(3)
    acc.accumulate(np.zeros((4, 4), int), np.full((4, 4), 255))
    assert acc.counted == 0 and acc.ignored == 16
    with pytest.raises(ContractViolation):
        metrics.miou_acc(acc)


def test_perfect_prediction_is_diagonal():
    t = np.array([[0, 1], [1, 0]])
    acc = metrics.ConfusionAccumulator(2).accumulate(t, t)
    assert np.count_nonzero(acc.counts - np.diag(np.diag(acc.counts))) == 0
    assert metrics.miou_acc(acc) == (1.0, 1.0)


def test_fully_confused_class_has_zero_iou():
    t = np.array([0, 0, 1, 1, 2])
    p = np.array([0, 0, 0, 0, 2])
    acc = metrics.ConfusionAccumulator(3).accumulate(p, t)
    assert acc.per_class_iou()[1] == 0.0


def test_zero_union_class_excluded():
    t = np.array([0, 1])
    acc = metrics.ConfusionAccumulator(4).accumulate(t, t)
    assert metrics.miou_acc(acc)[0] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_random_case_matches_brute_force(seed):
    pred, true = random_case(seed)
    acc = metrics.ConfusionAccumulator(5).accumulate(pred, true)
    np.testing.assert_array_equal(acc.counts, brute_confusion(pred, true, 5))
    assert metrics.miou_acc(acc) == oracle_miou_acc(pred, true, 5)
    assert acc.total_seen == pred.size


def test_out_of_range_label_raises():
    with pytest.raises(ContractViolation):
        metrics.ConfusionAccumulator(3).accumulate(np.array([0]), np.array([3]))
    with pytest.raises(ContractViolation):
        metrics.ConfusionAccumulator(3).accumulate(np.array([5]), np.array([0]))


def test_ignore_label_set():
    acc = metrics.ConfusionAccumulator(3, ignore_label={0, 255})
    acc.accumulate(np.array([1, 2, 1]), np.array([0, 255, 1]))
    assert acc.counted == 1 and acc.ignored == 2


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_accumulation_order_independent(seed, n_batches):
    rng = np.random.default_rng(seed)
    batches = [random_case(int(s), shape=(4, 5)) for s in rng.integers(0, 1 << 30, n_batches)]
    a = metrics.ConfusionAccumulator(5)
    for p, t in batches:
        a.accumulate(p, t)
    parts = [metrics.ConfusionAccumulator(5).accumulate(p, t) for p, t in reversed(batches)]
    b = parts[0]
    for part in parts[1:]:
        b = b + part
    np.testing.assert_array_equal(a.counts, b.counts)
    assert a.ignored == b.ignored


def test_ignored_pixel_prediction_toggle():
    pred, true = random_case(7)
    m1 = metrics.miou_acc(metrics.ConfusionAccumulator(5).accumulate(pred, true))
    pred2 = pred.copy()
    pred2[true == 255] = (pred2[true == 255] + 1) % 5
    m2 = metrics.miou_acc(metrics.ConfusionAccumulator(5).accumulate(pred2, true))
    assert m1 == m2


def test_rmse_trivial_cases():
    t = np.arange(12, dtype=np.float32).reshape(3, 4)
    assert metrics.rmse_rmselog(t, t) == (0.0, 0.0)
    assert metrics.rmse_rmselog(t + 2, t)[0] == pytest.approx(2.0, abs=1e-12)


def test_rmse_random_vs_fp64_oracle():
    rng = np.random.default_rng(3)
    p = rng.uniform(-1, 20, (16, 16)).astype(np.float32)
    t = rng.uniform(0, 20, (16, 16)).astype(np.float32)
    mask = rng.uniform(size=(16, 16)) < 0.8
    rmse, rlog = metrics.rmse_rmselog(p, t, mask)
    pd, td = p.astype(np.float64)[mask], t.astype(np.float64)[mask]
    ref = np.sqrt(np.mean((pd - td) ** 2))
    ref_log = np.sqrt(np.mean((np.log1p(np.maximum(pd, 0)) - np.log1p(td)) ** 2))
    assert abs(rmse - ref) / ref < 1e-7 and abs(rlog - ref_log) / ref_log < 1e-7
    acc = metrics.RegressionAccumulator().accumulate(p[:8], t[:8], mask[:8]).merge(
        metrics.RegressionAccumulator().accumulate(p[8:], t[8:], mask[8:]))
    np.testing.assert_allclose(acc.result(), (ref, ref_log), rtol=1e-12)


def test_rmse_empty_mask_raises():
    with pytest.raises(ContractViolation):
        metrics.rmse_rmselog(np.zeros(3), np.zeros(3), np.zeros(3, bool))


def test_csv_roundtrip(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text(metrics.CSV_HEADER + "\n" + metrics.csv_row(1, 0.5, 0.25, 0.75) + "\n")
    (row,) = metrics.read_csv(path)
    assert row["epoch"] == 1 and row["acc"] == 0.75 and np.isnan(row["rmse"])
