import math

import numpy as np
import pytest

from dydiff.metrics import crps_ensemble, crps_sum, csi, gaussian_crps, pool2d, psnr


def brute_crps(ens, y):
    ens = np.asarray(ens, dtype=float)
    M = len(ens)
    skill = np.mean(np.abs(ens - y), axis=0)
    spread = sum(np.abs(ens[i] - ens[j]) for i in range(M) for j in range(M))
    return np.mean(skill - spread / (2 * M * M))


def test_identical_members_score_zero():
    y = np.random.default_rng(0).standard_normal((3, 4, 4))
    assert crps_ensemble(np.stack([y] * 5), y) == 0.0


def test_sorted_estimator_matches_pairwise_sum():
    rng = np.random.default_rng(1)
    ens, y = rng.standard_normal((7, 2, 5, 5)), rng.standard_normal((2, 5, 5))
    assert crps_ensemble(ens, y) == pytest.approx(brute_crps(ens, y), rel=1e-12)


def test_gaussian_closed_form_at_zero():
    assert gaussian_crps(0.0, 1.0, 0.0) == pytest.approx(2 / math.sqrt(2 * math.pi) - 1 / math.sqrt(math.pi), rel=1e-14)
    assert gaussian_crps(0.0, 1.0, 0.0) == pytest.approx(0.23370, abs=1e-5)


def test_standard_normal_ensemble():
    ens = np.random.default_rng(2).standard_normal(100000)
    assert abs(crps_ensemble(ens, np.array(0.0)) - 0.23370) < 0.002


def test_pooling_over_full_extent_is_crps_of_means():
    rng = np.random.default_rng(3)
    ens, y = rng.standard_normal((6, 2, 2)), rng.standard_normal((2, 2))
    assert crps_ensemble(ens, y, "avg", 2) == pytest.approx(brute_crps(ens.mean(axis=(1, 2)), y.mean()), rel=1e-12)
    assert crps_ensemble(ens, y, "max", 2) == pytest.approx(brute_crps(ens.max(axis=(1, 2)), y.max()), rel=1e-12)


def test_pool2d_stride_one():
    x = np.arange(16.0).reshape(4, 4)
    out = pool2d(x, 3, "avg")
    assert out.shape == (2, 2)
    assert out[0, 1] == x[0:3, 1:4].mean()
    assert pool2d(x, 2, "max")[2, 0] == 13.0
    assert pool2d(x, 1) is not None and np.array_equal(pool2d(x, 1), x)
    with pytest.raises(ValueError):
        pool2d(x, 5)
    with pytest.raises(ValueError):
        pool2d(x, 2, "median")


def test_crps_errors():
    with pytest.raises(ValueError):
        crps_ensemble(np.zeros((1, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        crps_ensemble(np.zeros((2, 3)), np.zeros(4))
    with pytest.raises(ValueError):
        crps_ensemble(np.zeros((2, 3, 3)), np.zeros((3, 3)), "avg", 0)


def test_csi_contingency():
    truth = np.array([[1, 1, 0, 0], [0, 0, 0, 1]], dtype=float)
    pred = np.array([[1, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    # hits 2, misses 1, false alarms 1
    assert csi(pred, truth, 0.5) == 0.5
    assert csi(truth, truth, 0.5) == 1.0
    assert csi(1 - truth, truth, 0.5) == 0.0
    assert csi(np.zeros((3, 3)), np.zeros((3, 3)), 0.5) == 1.0
    # the threshold itself counts as an event
    assert csi(np.full((2, 2), 0.5), np.full((2, 2), 0.5), 0.5) == 1.0


def test_csi_with_pooling():
    truth = np.zeros((4, 4))
    truth[0, 0] = 4.0
    pred = np.zeros((4, 4))
    pred[1, 1] = 4.0
    assert csi(pred, truth, 1.0) == 0.0
    # stride-1 2x2 mean pooling: truth reaches 1.0 in one window, pred in the
    # four windows covering (1, 1); one hit, three false alarms
    assert csi(pred, truth, 1.0, window=2) == 0.25


def test_psnr():
    y = np.zeros(4)
    assert psnr(y, y, 1.0) == math.inf
    assert psnr(np.full(4, 0.1), y, 1.0) == pytest.approx(20.0)
    with pytest.raises(ValueError):
        psnr(y, y, 0.0)


def test_crps_sum():
    rng = np.random.default_rng(4)
    ens, y = rng.standard_normal((5, 6, 3)), rng.standard_normal((6, 3))
    res = crps_sum(ens, y)
    expect = brute_crps(ens.sum(-1), y.sum(-1)) * 6 / np.abs(y.sum(-1)).sum()
    assert res.normalized and res.value == pytest.approx(expect, rel=1e-12)
    raw = crps_sum(ens, np.zeros((6, 3)))
    assert not raw.normalized and raw.value == pytest.approx(brute_crps(ens.sum(-1), np.zeros(6)) * 6)
    with pytest.raises(ValueError):
        crps_sum(ens[:1], y)
