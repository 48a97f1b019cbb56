"""
Tests for entropy, mutual information and the information bounds
"""

import math

import numpy as np
import pytest

import information_theory as info
from dataset_factory import make_channel
from information_theory import JointDistribution
from lab_errors import ContractViolation, DomainError


def random_joint(rng, k):
    weights = rng.dirichlet(np.ones(k))
    return JointDistribution(np.sort(rng.uniform(0.01, 0.99, k)) + np.arange(k) * 1e-9, weights / weights.sum(),
                             rng.uniform(0, 1, k))


def test_binary_entropy():
    assert info.binary_entropy(0.5) == pytest.approx(1.0)
    assert info.binary_entropy(0.0) == 0.0
    assert info.binary_entropy(1.0) == 0.0
    assert info.binary_entropy(0.25) == pytest.approx(0.8113, abs=1e-4)
    assert info.binary_entropy(0.3) == pytest.approx(info.binary_entropy(0.7))
    with pytest.raises(DomainError):
        info.binary_entropy(1.1)


def test_entropy_bits():
    assert info.entropy_bits([0.25] * 4) == pytest.approx(2.0)
    assert info.entropy_bits([1.0]) == 0.0


def test_joint_validation():
    with pytest.raises(ContractViolation):
        JointDistribution([0.2, 0.1], [0.5, 0.5], [0.2, 0.1])
    with pytest.raises(ContractViolation):
        JointDistribution([0.2, 0.4], [0.5, 0.6], [0.2, 0.4])
    with pytest.raises(ContractViolation):
        JointDistribution([0.2, 0.4], [0.5, 0.5], [0.2, 1.4])


def test_mutual_information_cases():
    assert info.mutual_information(JointDistribution([0.2, 0.8], [0.5, 0.5], [0.6, 0.6])) == pytest.approx(0.0)
    assert info.mutual_information(JointDistribution([0.2, 0.8], [0.5, 0.5], [0.0, 1.0])) == pytest.approx(1.0)


def test_natural_channel_enumeration():
    joint = info.uniform_channel_joint(4)
    np.testing.assert_allclose(joint.levels, [0.125, 0.375, 0.625, 0.875])
    h_s = info.binary_entropy(0.5)
    h_s_given_c = np.mean([info.binary_entropy(c) for c in joint.levels])
    mi = info.mutual_information(joint)
    assert mi == pytest.approx(h_s - h_s_given_c)
    assert mi < 1.0


def test_gap_for_deterministic_threshold_signal():
    joint = JointDistribution([0.125, 0.375, 0.625, 0.875], [0.25] * 4, [0.0, 0.0, 1.0, 1.0])
    assert info.entropy_bits(joint.weights) == pytest.approx(2.0)
    assert info.mutual_information(joint) == pytest.approx(1.0)
    assert info.information_gap(joint) == pytest.approx(1.0)


def test_single_level_has_no_gap():
    assert info.information_gap(info.uniform_channel_joint(1)) == pytest.approx(0.0)


def test_uniform_gap_bound_over_random_conditionals():
    rng = np.random.default_rng(0)
    for k in range(3, 17):
        levels = (np.arange(k) + 0.5) / k
        for _ in range(100 if k == 8 else 10):
            joint = JointDistribution(levels, np.full(k, 1.0 / k), rng.uniform(0, 1, k))
            assert info.information_gap(joint) >= math.log2(k) - 1.0 - 1e-9


def test_mutual_information_bounds_on_random_joints():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        joint = random_joint(rng, int(rng.integers(1, 9)))
        mi = info.mutual_information(joint)
        ceiling = min(info.binary_entropy(joint.p_success), info.entropy_bits(joint.weights))
        assert -1e-9 <= mi <= ceiling + 1e-9
        assert ceiling <= 1.0 + 1e-9


def test_coarsening_never_increases_information():
    rng = np.random.default_rng(2)
    for _ in range(200):
        joint = random_joint(rng, int(rng.integers(2, 8)))
        i = int(rng.integers(0, joint.k - 1))
        merged = info.coarsen(joint, i)
        assert merged.k == joint.k - 1
        assert merged.p_success == pytest.approx(joint.p_success)
        assert info.mutual_information(merged) <= info.mutual_information(joint) + 1e-9


def test_coarsen_needs_neighbour():
    with pytest.raises(ContractViolation):
        info.coarsen(info.uniform_channel_joint(3), 2)


def test_ece_lower_bound():
    assert info.ece_lower_bound(4, 1, 2.0) == pytest.approx(0.09375)
    assert info.ece_lower_bound(4, 4, 2.0) == 0.0
    assert info.ece_lower_bound(10, 2, math.log2(10)) == pytest.approx((1 - 2 / 10) / 20)
    with pytest.raises(ContractViolation):
        info.ece_lower_bound(0, 1, 1.0)


def test_ece_lower_bound_monotonicity():
    by_n = [info.ece_lower_bound(5, n, 4.0) for n in range(1, 20)]
    assert all(a >= b for a, b in zip(by_n, by_n[1:]))
    by_h = [info.ece_lower_bound(5, 3, h) for h in np.linspace(0, 6, 25)]
    assert all(a <= b for a, b in zip(by_h, by_h[1:]))


def test_empirical_mi_independent_signal():
    rng = np.random.default_rng(3)
    conf = rng.uniform(0, 1, 10_000)
    correct = rng.random(10_000) < 0.6
    assert info.empirical_mi_from_run(conf, correct, 8) == pytest.approx(0.0, abs=0.05)


def test_empirical_mi_determined_signal():
    correct = np.array([True, False] * 500)
    conf = np.where(correct, 0.95, 0.05)
    assert info.empirical_mi_from_run(conf, correct, 10) == pytest.approx(1.0, abs=1e-9)


def test_empirical_mi_on_channel_stays_below_one_bit():
    channel = make_channel(5, 20_000, seed=4)
    mi = info.empirical_mi_from_run(channel.levels[channel.level_index], channel.outcomes.astype(bool), 5)
    assert 0.0 < mi <= 1.0 + 1e-9
    assert mi == pytest.approx(info.mutual_information(info.uniform_channel_joint(5)), abs=0.01)


def test_empirical_mi_validation():
    with pytest.raises(ContractViolation):
        info.empirical_mi_from_run([0.5], [True], 4)
    with pytest.raises(DomainError):
        info.empirical_mi_from_run([0.5, 1.5], [True, False], 2)


def test_tradeoff_check():
    result = info.tradeoff_check(0.05, 0.2, [0.25, 0.75], accuracy=0.9)
    assert result.lhs == pytest.approx(0.05 ** 2 + 0.8 ** 2)
    assert result.floor == pytest.approx(((0.25 - 0.9) ** 2 + (0.75 - 0.9) ** 2) / 8)
    assert result.holds
