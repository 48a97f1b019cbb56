#!/usr/bin/env python3
"""
Information Analysis
Exact entropy and mutual information (in bits) between a binary correctness
signal and discrete true-confidence levels, and the bounds derived from them
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import entr
from scipy.stats import entropy

from lab_errors import ContractViolation, DomainError, InvariantViolation

logger = logging.getLogger(__name__)

TOLERANCE = 1e-9
LN2 = math.log(2.0)


@dataclass(frozen=True)
class JointDistribution:
    """P(C* = c_i) = weights[i] and P(S = 1 | C* = c_i) = conditional[i]"""
    levels: np.ndarray
    weights: np.ndarray
    conditional: np.ndarray

    def __post_init__(self):
        for name in ("levels", "weights", "conditional"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(-1))
        k = self.levels.size
        if k < 1 or self.weights.size != k or self.conditional.size != k:
            raise ContractViolation(f"joint distribution: need k >= 1 matching arrays, got "
                                    f"{self.levels.size}/{self.weights.size}/{self.conditional.size}")
        if np.any(np.diff(self.levels) <= 0):
            raise ContractViolation("joint distribution: levels must be strictly increasing")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ContractViolation(f"joint distribution: weights must sum to 1 (got {self.weights.sum()!r})")
        if np.any(self.conditional < 0) or np.any(self.conditional > 1):
            raise ContractViolation("joint distribution: conditionals must lie in [0, 1]")

    @property
    def k(self) -> int:
        return int(self.levels.size)

    @property
    def p_success(self) -> float:
        return float(self.weights @ self.conditional)


def entropy_bits(weights: Sequence[float]) -> float:
    return float(entropy(np.asarray(weights, dtype=np.float64), base=2))


def binary_entropy(p: float) -> float:
    """h(p) in bits with 0 log 0 = 0"""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"binary_entropy: p must lie in [0, 1], got {p}")
    return float(min(1.0, (entr(p) + entr(1.0 - p)) / LN2))


def mutual_information(j: JointDistribution) -> float:
    """I(S; C*) = H(S) - H(S | C*)"""
    h_s = binary_entropy(j.p_success)
    h_s_given_c = float(sum(w * binary_entropy(q) for w, q in zip(j.weights, j.conditional)))
    mi = max(0.0, h_s - h_s_given_c)
    ceiling = min(h_s, entropy_bits(j.weights))
    if mi > ceiling + TOLERANCE:
        raise InvariantViolation(f"I(S;C*)={mi} exceeds min(H(S), H(C*))={ceiling}")
    return min(mi, ceiling)


def information_gap(j: JointDistribution) -> float:
    """H(C*) - I(S; C*), the part of the level entropy the signal cannot carry"""
    gap = entropy_bits(j.weights) - mutual_information(j)
    if np.allclose(j.weights, 1.0 / j.k, rtol=0.0, atol=1e-12) and gap < math.log2(j.k) - 1.0 - TOLERANCE:
        raise InvariantViolation(f"gap {gap} below log2(k) - 1 for a uniform source with k={j.k}")
    return gap


def ece_lower_bound(k: int, n: int, entropy_bits: float) -> float:
    """Leading term max(0, (1 - n / 2^H) / (2k))"""
    if k < 1 or n < 1:
        raise ContractViolation(f"ece_lower_bound: need k >= 1 and n >= 1, got k={k}, n={n}")
    return max(0.0, (1.0 - n / 2.0 ** entropy_bits) / (2.0 * k))


def uniform_channel_joint(k: int) -> JointDistribution:
    """Uniform weights over levels (i + 0.5)/k with P(S=1 | c_i) = c_i"""
    if k < 1:
        raise ContractViolation(f"uniform_channel_joint: k must be >= 1, got {k}")
    levels = (np.arange(k) + 0.5) / k
    return JointDistribution(levels, np.full(k, 1.0 / k), levels)


def coarsen(j: JointDistribution, i: int) -> JointDistribution:
    """Merge adjacent levels i and i + 1"""
    if not 0 <= i < j.k - 1:
        raise ContractViolation(f"coarsen: level index {i} has no right neighbour (k={j.k})")
    w = j.weights[i] + j.weights[i + 1]
    if w > 0:
        level = (j.weights[i] * j.levels[i] + j.weights[i + 1] * j.levels[i + 1]) / w
        cond = (j.weights[i] * j.conditional[i] + j.weights[i + 1] * j.conditional[i + 1]) / w
    else:
        level = 0.5 * (j.levels[i] + j.levels[i + 1])
        cond = 0.5 * (j.conditional[i] + j.conditional[i + 1])

    def merged(values, value):
        return np.concatenate([values[:i], [value], values[i + 2:]])

    weights = merged(j.weights, w)
    return JointDistribution(merged(j.levels, level), weights / weights.sum(), merged(j.conditional, cond))


def empirical_mi_from_run(conf: Sequence[float], correct: Sequence[bool], k_bins: int) -> float:
    """Plug-in I(S; C) after quantising confidence into k equal-width bins"""
    conf = np.asarray(conf, dtype=np.float64).reshape(-1)
    correct = np.asarray(correct).reshape(-1).astype(np.float64)
    if k_bins < 1 or conf.size < k_bins or conf.size != correct.size:
        raise ContractViolation(f"empirical_mi_from_run: need n >= k_bins >= 1 and matching lengths "
                                f"(n={conf.size}, outcomes={correct.size}, k={k_bins})")
    if np.any(conf < 0) or np.any(conf > 1):
        raise DomainError("empirical_mi_from_run: confidences must lie in [0, 1]")
    index = np.minimum((conf * k_bins).astype(np.int64), k_bins - 1)
    counts = np.bincount(index, minlength=k_bins)
    hits = np.bincount(index, weights=correct, minlength=k_bins)
    used = counts > 0
    weights = counts[used] / conf.size
    joint = JointDistribution((np.flatnonzero(used) + 0.5) / k_bins, weights / weights.sum(),
                              hits[used] / counts[used])
    return mutual_information(joint)


@dataclass(frozen=True)
class TradeoffResult:
    lhs: float
    floor: float
    holds: bool


def tradeoff_check(ece: float, diversity_norm: float, levels: Sequence[float], accuracy: float,
                   alpha: float = 1.0) -> TradeoffResult:
    """ECE^2 + alpha (1 - diversity)^2 against the floor sum_i (c_i - accuracy)^2 / k^3"""
    levels = np.asarray(levels, dtype=np.float64).reshape(-1)
    if levels.size < 1 or alpha < 0:
        raise ContractViolation("tradeoff_check: need at least one level and alpha >= 0")
    lhs = ece ** 2 + alpha * (1.0 - diversity_norm) ** 2
    floor = float(np.sum((levels - accuracy) ** 2) / levels.size ** 3)
    return TradeoffResult(lhs, floor, lhs >= floor)
