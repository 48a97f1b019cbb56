#!/usr/bin/env python3
"""
Calibration Metrics
Binned calibration error, confidence diversity, the calibrated-and-diverse gate,
calibration-aware scoring and the guess-versus-abstain comparison
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from lab_errors import ContractViolation, DomainError, InvariantViolation

DEFAULT_BINS = 15
ECE_THRESHOLD = 0.10
STD_THRESHOLD = 0.15
MAX_BERNOULLI_VAR = 0.25
RELIABILITY_COLUMNS = ("bin_lo", "bin_hi", "count", "avg_conf", "avg_acc")


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    avg_conf: float
    avg_acc: float


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    ece: float
    mce: float
    mean_conf: float
    std_conf: float
    n_bins: int
    bins: List[ReliabilityBin] = field(default_factory=list)
    passes_both: bool = False

    @property
    def n(self) -> int:
        return sum(b.count for b in self.bins)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def passes_gate(ece: float, std_conf: float) -> bool:
    """Calibrated (ECE < 0.10) and diverse (std > 0.15)"""
    return ece < ECE_THRESHOLD and std_conf > STD_THRESHOLD


def bin_errors(bins: Sequence[ReliabilityBin]) -> Tuple[float, float]:
    """(ECE, MCE) recomputed from reliability rows"""
    n = sum(b.count for b in bins)
    gaps = [(b.count, abs(b.avg_conf - b.avg_acc)) for b in bins if b.count > 0]
    if n == 0:
        return 0.0, 0.0
    return sum(c / n * g for c, g in gaps), max(g for _, g in gaps)


def evaluate(conf: Sequence[float], correct: Sequence[bool], n_bins: int = DEFAULT_BINS) -> EvalReport:
    """
    Equal-width reliability bins on [0, 1]

    Bin i covers [i/B, (i+1)/B) except the last, which is closed on the right.
    Empty bins are reported with zero count and skipped by ECE and MCE.
    """
    conf = np.asarray(conf, dtype=np.float64).reshape(-1)
    correct = np.asarray(correct).reshape(-1).astype(bool)
    if conf.size == 0:
        raise ContractViolation("evaluate: empty input")
    if conf.size != correct.size:
        raise ContractViolation(f"evaluate: {conf.size} confidences but {correct.size} outcomes")
    if n_bins < 1:
        raise ContractViolation(f"evaluate: n_bins must be >= 1, got {n_bins}")
    if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
        raise DomainError("evaluate: confidences must lie in [0, 1]")

    index = np.minimum((conf * n_bins).astype(np.int64), n_bins - 1)
    bins = []
    for i in range(n_bins):
        members = index == i
        count = int(members.sum())
        bins.append(ReliabilityBin(
            lo=i / n_bins, hi=(i + 1) / n_bins, count=count,
            avg_conf=float(conf[members].mean()) if count else 0.0,
            avg_acc=float(correct[members].mean()) if count else 0.0,
        ))
    ece, mce = bin_errors(bins)
    if mce + 1e-12 < ece:
        raise InvariantViolation(f"MCE {mce} below ECE {ece}")
    std_conf = float(conf.std())
    return EvalReport(
        accuracy=float(correct.mean()), ece=ece, mce=mce, mean_conf=float(conf.mean()), std_conf=std_conf,
        n_bins=n_bins, bins=bins, passes_both=passes_gate(ece, std_conf),
    )


def diversity(conf: Sequence[float]) -> Tuple[float, float]:
    """(std with denominator n, var / 0.25)"""
    conf = np.asarray(conf, dtype=np.float64).reshape(-1)
    if conf.size < 2:
        raise ContractViolation(f"diversity: needs n >= 2, got {conf.size}")
    var = float(conf.var())
    return math.sqrt(var), var / MAX_BERNOULLI_VAR


def score_cal(accuracy: float, ece: float, diversity_norm: float, beta: float = 1.0, gamma: float = 1.0) -> float:
    """accuracy * exp(-beta * ece) * (1 + gamma * diversity)"""
    if beta < 0 or gamma < 0:
        raise ContractViolation(f"score_cal: beta and gamma must be nonnegative, got {beta}, {gamma}")
    if not (0 <= accuracy <= 1 and ece >= 0 and diversity_norm >= 0):
        raise DomainError(f"score_cal: invalid inputs accuracy={accuracy}, ece={ece}, diversity={diversity_norm}")
    return accuracy * math.exp(-beta * ece) * (1.0 + gamma * diversity_norm)


def guess_vs_abstain(p_correct_on_uncertain: float, frac_uncertain: float) -> Tuple[float, float]:
    """Accuracy-only score when guessing versus abstaining on the uncertain fraction"""
    p, frac = p_correct_on_uncertain, frac_uncertain
    if not (0 <= p <= 1 and 0 <= frac <= 1):
        raise DomainError(f"guess_vs_abstain: inputs must lie in [0, 1], got {p}, {frac}")
    guess = (1.0 - frac) + frac * p
    abstain = 1.0 - frac
    if guess < abstain:
        raise InvariantViolation(f"guessing ({guess}) does not dominate abstaining ({abstain})")
    return guess, abstain


def reliability_rows(report: EvalReport) -> List[List[Any]]:
    return [[b.lo, b.hi, b.count, b.avg_conf, b.avg_acc] for b in report.bins]
