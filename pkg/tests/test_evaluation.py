import csv

import numpy as np
import pytest

from lsr.errors import ConstantInput, EmptyInput, ZeroPupilDistance
from lsr.evaluation import (DEFAULT_CED_THRESHOLDS, ced_curve,
                            discrepancy_error_correlation, nme, nme_batch,
                            spearman, write_ced_csv, write_correlation_csv,
                            write_nme_csv)
from lsr.geometry import SimilarityTransform


def rand_shape(seed, n=10):
    return np.random.default_rng(seed).uniform(0, 100, size=(n, 2))


def test_nme_zero_for_exact_prediction():
    gt = rand_shape(0)
    assert nme(gt, gt, (0, 1)) == 0.0


def test_nme_single_offset_landmark():
    L = 8
    gt = rand_shape(1, L)
    gt[0] = [0.0, 0.0]
    gt[1] = [50.0, 0.0]          # pupil distance D = 50
    pred = gt.copy()
    pred[5] += [3.0, 4.0]        # error d = 5
    assert nme(pred, gt, (0, 1)) == pytest.approx(100.0 * 5.0 / (L * 50.0),
                                                  abs=1e-12)


def test_nme_percent_scale_interpretation():
    # a 10.5%-of-pupil mean offset reads as NME 10.5
    gt = rand_shape(2)
    gt[0] = [0.0, 0.0]
    gt[1] = [100.0, 0.0]
    pred = gt + np.array([10.5, 0.0])
    assert nme(pred, gt, (0, 1)) == pytest.approx(10.5, abs=1e-9)


def test_nme_similarity_invariance():
    rng = np.random.default_rng(3)
    gt = rand_shape(4)
    pred = gt + rng.normal(size=gt.shape)
    base = nme(pred, gt, (0, 1))
    t = SimilarityTransform(2.3, 0.8, 11.0, -4.0)
    assert nme(t.apply(pred), t.apply(gt), (0, 1)) == pytest.approx(base, abs=1e-9)


def test_nme_errors():
    gt = rand_shape(5)
    with pytest.raises(ValueError):
        nme(gt[:5], gt, (0, 1))
    bad = gt.copy()
    bad[1] = bad[0]
    with pytest.raises(ZeroPupilDistance):
        nme(gt, bad, (0, 1))


def test_nme_batch_mean():
    gts = [rand_shape(i) for i in range(6, 10)]
    preds = [g + 1.0 for g in gts]
    res = nme_batch(preds, gts, (0, 1), tag="demo")
    assert res.tag == "demo"
    assert res.mean == pytest.approx(np.mean(res.errors), abs=1e-12)
    with pytest.raises(EmptyInput):
        nme_batch([], [], (0, 1))


def test_ced_all_below_min_threshold():
    curve = ced_curve([0.01, 0.02, 0.005], thresholds=(0.1, 0.5, 1.0))
    assert all(frac == 1.0 for _, frac in curve.points)


def test_ced_matches_counting_oracle():
    rng = np.random.default_rng(11)
    errors = rng.uniform(0, 12, size=200)
    curve = ced_curve(errors)
    for t, frac in curve.points:
        assert frac == np.sum(np.sort(errors) <= t) / 200.0


def test_ced_monotone_and_reaches_one():
    rng = np.random.default_rng(12)
    errors = rng.exponential(5.0, size=100)
    curve = ced_curve(errors)
    fracs = [f for _, f in curve.points]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))
    assert curve.points[-1][1] == 1.0
    assert curve.points[-1][0] >= errors.max()


def test_ced_validation():
    with pytest.raises(EmptyInput):
        ced_curve([])
    with pytest.raises(ValueError):
        ced_curve([1.0], thresholds=(0.5, 0.5))


def test_spearman_monotone_extremes():
    x = np.arange(10.0)
    assert spearman(x, x**3) == pytest.approx(1.0, abs=1e-12)
    assert spearman(x, -x) == pytest.approx(-1.0, abs=1e-12)


def brute_force_spearman(x, y):
    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i:j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return r

    rx, ry = ranks(np.asarray(x)), ranks(np.asarray(y))
    rx -= rx.mean()
    ry -= ry.mean()
    return np.sum(rx * ry) / np.sqrt(np.sum(rx**2) * np.sum(ry**2))


def test_spearman_matches_rank_oracle():
    rng = np.random.default_rng(13)
    x = rng.normal(size=50)
    y = rng.normal(size=50)
    assert spearman(x, y) == pytest.approx(brute_force_spearman(x, y), abs=1e-12)
    # with ties
    xt = np.round(rng.uniform(0, 3, size=50))
    yt = np.round(rng.uniform(0, 3, size=50))
    assert spearman(xt, yt) == pytest.approx(brute_force_spearman(xt, yt), abs=1e-12)


def test_spearman_monotone_transform_invariance():
    rng = np.random.default_rng(14)
    x = rng.normal(size=40)
    y = rng.normal(size=40)
    base = spearman(x, y)
    assert spearman(np.exp(x), y) == pytest.approx(base, abs=1e-12)
    assert spearman(x, 3.0 * y + 7.0) == pytest.approx(base, abs=1e-12)


def test_spearman_constant_input():
    with pytest.raises(ConstantInput):
        spearman(np.ones(5), np.arange(5.0))
    with pytest.raises(ValueError):
        spearman([1.0, 2.0], [3.0, 4.0])


def test_correlation_report_sorted_by_error():
    rng = np.random.default_rng(15)
    errors = rng.uniform(size=30)
    scores = errors + rng.normal(scale=0.1, size=30)
    rep = discrepancy_error_correlation(scores, errors)
    assert rep.count == 30
    assert -1.0 <= rep.spearman_rho <= 1.0
    errs = [e for _, e in rep.pairs]
    assert errs == sorted(errs)


def test_correlation_handles_infinite_scores():
    errors = np.array([1.0, 2.0, 3.0, 4.0])
    scores = np.array([0.5, np.inf, 1.0, np.inf])
    rep = discrepancy_error_correlation(scores, errors)
    assert np.isfinite(rep.spearman_rho)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_csv_outputs(tmp_path):
    res = nme_batch([rand_shape(1) + 1.0], [rand_shape(1)], (0, 1))
    write_nme_csv(tmp_path / "nme.csv", res)
    rows = read_csv(tmp_path / "nme.csv")
    assert rows[0] == ["sample_id", "error"]
    assert float(rows[1][1]) == res.errors[0]

    curve = ced_curve([1.0, 2.0, 3.0])
    write_ced_csv(tmp_path / "ced.csv", curve)
    rows = read_csv(tmp_path / "ced.csv")
    assert rows[0] == ["threshold", "fraction"]
    assert float(rows[-1][1]) == 1.0

    rep = discrepancy_error_correlation([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    write_correlation_csv(tmp_path / "corr.csv", rep)
    rows = read_csv(tmp_path / "corr.csv")
    assert rows[0] == ["sample_id", "score", "error"]
    assert len(rows) == 4


def test_default_thresholds_grid():
    assert DEFAULT_CED_THRESHOLDS[0] == 0.0
    assert DEFAULT_CED_THRESHOLDS[-1] == 15.0
    diffs = np.diff(DEFAULT_CED_THRESHOLDS)
    assert np.allclose(diffs, 0.1, atol=1e-9)
