"""
Tests for reliability binning, diversity and the composite scores
"""

import math

import numpy as np
import pytest

import calibration_metrics as metrics
from lab_errors import ContractViolation, DomainError


def test_constant_confidence_at_accuracy_is_calibrated():
    report = metrics.evaluate(np.full(4, 0.75), [True, True, True, False])
    assert report.ece == pytest.approx(0.0, abs=1e-12)
    assert report.std_conf == 0.0
    assert not report.passes_both


def test_overconfident_single_bin():
    report = metrics.evaluate(np.ones(10), [True, False] * 5)
    assert report.ece == pytest.approx(0.5)
    assert report.mce == pytest.approx(0.5)
    assert report.bins[-1].count == 10


def test_hand_binned_case():
    report = metrics.evaluate([0.2, 0.2, 0.8, 0.8], [False, False, True, True], n_bins=10)
    assert report.ece == pytest.approx(0.2)
    assert [b.count for b in report.bins if b.count] == [2, 2]
    assert report.n == 4


def hand_binned_errors(conf, correct, n_bins):
    """ECE and MCE from explicit edge comparisons and running sums"""
    sums = [[0.0, 0.0, 0] for _ in range(n_bins)]
    for c, y in zip(conf, correct):
        for b in range(n_bins):
            lo, hi = b / n_bins, (b + 1) / n_bins
            if lo <= c < hi or (b == n_bins - 1 and c == 1.0):
                sums[b][0] += c
                sums[b][1] += float(y)
                sums[b][2] += 1
                break
    gaps = [(abs(s_conf - s_acc) / count, count) for s_conf, s_acc, count in sums if count]
    return sum(g * count for g, count in gaps) / len(conf), max(g for g, _ in gaps)


def test_errors_match_hand_binned_oracle():
    rng = np.random.default_rng(12)
    for _ in range(20):
        n, n_bins = int(rng.integers(1, 60)), int(rng.integers(1, 20))
        conf = rng.uniform(0, 1, n)
        correct = rng.random(n) < 0.6
        report = metrics.evaluate(conf, correct, n_bins)
        ece, mce = hand_binned_errors(conf, correct, n_bins)
        assert abs(report.ece - ece) <= 1e-12
        assert abs(report.mce - mce) <= 1e-12


def test_bin_edges():
    report = metrics.evaluate([0.0, 0.5, 1.0], [True, True, True], n_bins=2)
    assert [b.count for b in report.bins] == [1, 2]
    assert report.n_bins == 2
    assert (report.bins[0].lo, report.bins[0].hi) == (0.0, 0.5)


def test_errors_recomputable_from_rows():
    rng = np.random.default_rng(0)
    conf = rng.uniform(0, 1, 500)
    report = metrics.evaluate(conf, rng.random(500) < conf)
    rows = metrics.reliability_rows(report)
    assert len(rows) == metrics.DEFAULT_BINS
    bins = [metrics.ReliabilityBin(*row) for row in rows]
    assert metrics.bin_errors(bins) == (report.ece, report.mce)


def test_ece_is_permutation_invariant():
    rng = np.random.default_rng(1)
    conf = rng.uniform(0, 1, 200)
    correct = rng.random(200) < 0.7
    order = rng.permutation(200)
    assert metrics.evaluate(conf, correct).ece == pytest.approx(metrics.evaluate(conf[order], correct[order]).ece)


def test_adding_calibrated_bin_only_reweights():
    conf = np.array([0.9] * 10)
    correct = np.array([True] * 6 + [False] * 4)
    before = metrics.evaluate(conf, correct).ece
    extra_conf = np.full(10, 0.2)
    extra_correct = np.array([True] * 2 + [False] * 8)
    after = metrics.evaluate(np.concatenate([conf, extra_conf]), np.concatenate([correct, extra_correct])).ece
    assert after == pytest.approx(before * 10 / 20)


def test_evaluate_validation():
    with pytest.raises(ContractViolation):
        metrics.evaluate([], [])
    with pytest.raises(ContractViolation):
        metrics.evaluate([0.5], [True, False])
    with pytest.raises(ContractViolation):
        metrics.evaluate([0.5], [True], n_bins=0)
    with pytest.raises(DomainError):
        metrics.evaluate([1.2], [True])


def test_gate_thresholds():
    assert metrics.passes_gate(0.099, 0.151)
    assert not metrics.passes_gate(0.10, 0.2)
    assert not metrics.passes_gate(0.05, 0.15)


def test_gate_in_report():
    conf = np.array([0.1] * 50 + [0.9] * 50)
    correct = np.array([True] * 5 + [False] * 45 + [True] * 45 + [False] * 5)
    report = metrics.evaluate(conf, correct)
    assert report.ece == pytest.approx(0.0, abs=1e-12)
    assert report.std_conf == pytest.approx(0.4)
    assert report.passes_both


def test_diversity():
    assert metrics.diversity([0.3, 0.3, 0.3]) == (0.0, 0.0)
    std, normalized = metrics.diversity([0.0, 1.0, 0.0, 1.0])
    assert (std, normalized) == (0.5, 1.0)
    with pytest.raises(ContractViolation):
        metrics.diversity([0.5])


def test_reported_baseline_spread_fails_diversity_bar():
    assert not metrics.passes_gate(0.0, 0.021)


def test_score_cal():
    assert metrics.score_cal(0.8, 0.3, 0.7, beta=0.0, gamma=0.0) == pytest.approx(0.8)
    assert metrics.score_cal(0.8, 0.0, 1.0, beta=1.0, gamma=1.0) == pytest.approx(1.6)
    assert metrics.score_cal(0.9, 0.1, 0.5) == pytest.approx(0.9 * math.exp(-0.1) * 1.5)
    with pytest.raises(ContractViolation):
        metrics.score_cal(0.9, 0.1, 0.5, beta=-1.0)


def test_guess_vs_abstain():
    assert metrics.guess_vs_abstain(0.0, 0.4) == (0.6, 0.6)
    assert metrics.guess_vs_abstain(0.7, 0.0) == (1.0, 1.0)
    guess, abstain = metrics.guess_vs_abstain(0.3, 0.5)
    assert guess == pytest.approx(0.65)
    assert abstain == pytest.approx(0.5)
    with pytest.raises(DomainError):
        metrics.guess_vs_abstain(1.5, 0.5)


def test_report_dict():
    payload = metrics.evaluate([0.2, 0.7], [False, True], n_bins=4).to_dict()
    assert payload["n_bins"] == 4
    assert len(payload["bins"]) == 4
