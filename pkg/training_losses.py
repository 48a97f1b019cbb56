#!/usr/bin/env python3
"""
Training Objectives
Cross-entropy, the composite classification + confidence objective, negative-reward
penalties and Brier scoring with a diversity bonus. Every loss is built from
autodiff ops so it is differentiable on the active tape.
"""

import logging
import math
from typing import Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

import autodiff_engine as ad
from autodiff_engine import Tensor
from lab_errors import ContractViolation, DomainError

logger = logging.getLogger(__name__)

DIVERSITY_EPS = 1e-6
ANNEAL_FLOOR_FRACTION = 0.1

ArrayLike = Union[np.ndarray, Sequence[float], Sequence[bool]]


class NegativeRewardParams(BaseModel):
    """Reward weights for confident/uncertain and correct/incorrect predictions"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    lambda1: float = Field(0.5, ge=0.0)
    lambda2: float = Field(2.0, ge=0.0)
    kappa1: float = Field(0.2, ge=0.0)
    kappa2: float = Field(0.1, ge=0.0)
    mu1: float = Field(0.3, ge=0.0)
    mu2: float = Field(1.0, ge=0.0)
    alpha: float = Field(1.0, ge=0.0)
    certain_threshold: float = Field(0.5, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _penalty_regime(self):
        if self.lambda2 <= self.lambda1:
            logger.debug(f"lambda2={self.lambda2} <= lambda1={self.lambda1}: outside the bimodal convergence regime")
        return self


def _column(conf: Tensor, n: int, what: str) -> None:
    if conf.shape != (n, 1):
        raise ContractViolation(f"{what}: confidence must have shape [{n}, 1], got {list(conf.shape)}")


def _flags(values: ArrayLike, what: str) -> np.ndarray:
    flags = np.asarray(values)
    if flags.ndim != 1:
        raise ContractViolation(f"{what}: expected a 1-D array, got shape {list(flags.shape)}")
    return flags.astype(bool)


def _one_minus(conf: Tensor) -> Tensor:
    return ad.add_scalar(ad.mul_scalar(conf, -1.0), 1.0)


def cross_entropy(class_probs: Tensor, labels: ArrayLike) -> Tensor:
    """-mean_i log p_i[y_i] with the log clamped at 1e-12"""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if class_probs.data.ndim != 2 or class_probs.shape[0] != labels.size:
        raise ContractViolation(f"cross_entropy: probs {list(class_probs.shape)} do not match {labels.size} labels")
    n, k = class_probs.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractViolation(f"cross_entropy: labels must lie in 0..{k - 1}")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    log_likelihood = ad.sum_all(ad.mul(Tensor(onehot), ad.safe_log(class_probs)))
    return ad.mul_scalar(log_likelihood, -1.0 / n)


def negative_reward_simple(correct: ArrayLike, conf: Tensor,
                           p: NegativeRewardParams = NegativeRewardParams()) -> Tuple[Tensor, Tensor]:
    """
    Per-example rewards r_i and the loss term -alpha * mean(r)

    r_i = -lambda1 * (1 - c_i)^2 for correct predictions and -lambda2 * c_i^2 otherwise,
    so the term added to the classification loss is a nonnegative penalty.

    Returns:
        (rewards [n, 1], loss term scalar)
    """
    correct = _flags(correct, "negative_reward_simple")
    _column(conf, correct.size, "negative_reward_simple")
    low_conf_weight = Tensor((-p.lambda1 * correct).reshape(-1, 1))
    high_conf_weight = Tensor((-p.lambda2 * ~correct).reshape(-1, 1))
    rewards = ad.add(ad.mul(low_conf_weight, ad.square(_one_minus(conf))),
                     ad.mul(high_conf_weight, ad.square(conf)))
    return rewards, ad.mul_scalar(ad.mean(rewards), -p.alpha)


def confidence_mass_penalty(conf: Tensor, p: NegativeRewardParams = NegativeRewardParams()) -> Tensor:
    """
    alpha * (lambda1 + lambda2) * mean(c^2)

    Charges every unit of confidence regardless of correctness. Added to a Brier
    anchor of weight lambda, the per-example optimum is 1[correct] * lambda /
    (lambda + alpha * (lambda1 + lambda2)), so all confidences shrink together as
    alpha grows.
    """
    if conf.data.ndim != 2 or conf.shape[1] != 1:
        raise ContractViolation(f"confidence_mass_penalty: confidence must be a column, got {list(conf.shape)}")
    return ad.mul_scalar(ad.mean(ad.square(conf)), p.alpha * (p.lambda1 + p.lambda2))


def negative_reward_full(labels: ArrayLike, class_probs: Tensor, conf: Tensor, uncert: Tensor,
                         p: NegativeRewardParams = NegativeRewardParams()) -> Tensor:
    """
    Mean three-case reward

    certain (uncert < threshold) and correct:  -lambda1 (1 - c)^2 + mu1
    certain and wrong:                         -lambda2 c^2 - mu2
    uncertain:                                  kappa1 if correct else -kappa2
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = labels.size
    _column(conf, n, "negative_reward_full")
    if uncert.shape != conf.shape or class_probs.data.ndim != 2 or class_probs.shape[0] != n:
        raise ContractViolation(f"negative_reward_full: shapes disagree (probs {list(class_probs.shape)}, "
                                f"conf {list(conf.shape)}, uncert {list(uncert.shape)}, labels [{n}])")
    correct = np.argmax(class_probs.data, axis=1) == labels
    certain = uncert.data.reshape(-1) < p.certain_threshold

    certain_correct = certain & correct
    certain_wrong = certain & ~correct
    offsets = (p.mu1 * certain_correct - p.mu2 * certain_wrong
               + ~certain * np.where(correct, p.kappa1, -p.kappa2))
    rewards = ad.add(
        ad.add(ad.mul(Tensor((-p.lambda1 * certain_correct).reshape(-1, 1)), ad.square(_one_minus(conf))),
               ad.mul(Tensor((-p.lambda2 * certain_wrong).reshape(-1, 1)), ad.square(conf))),
        Tensor(offsets.reshape(-1, 1)))
    return ad.mean(rewards)


def confidence_std(conf: Tensor) -> Tensor:
    """Population standard deviation of a confidence column"""
    n = conf.shape[0]
    centring = Tensor(np.eye(n) - np.full((n, n), 1.0 / n))
    return ad.sqrt(ad.mean(ad.square(ad.matmul(centring, conf))))


def brier_confidence_loss(conf: Tensor, correct: ArrayLike) -> Tensor:
    """mean (c_i - 1[correct_i])^2"""
    correct = _flags(correct, "brier_confidence_loss")
    _column(conf, correct.size, "brier_confidence_loss")
    return ad.mean(ad.square(ad.sub(conf, Tensor(correct.astype(np.float64).reshape(-1, 1)))))


def brier_diversity(conf: Tensor, correct: ArrayLike, beta: float, eps: float = DIVERSITY_EPS) -> Tensor:
    """Brier score minus beta * log(std(c) + eps)"""
    correct = _flags(correct, "brier_diversity")
    if correct.size < 2:
        raise ContractViolation(f"brier_diversity: needs n >= 2 for a standard deviation, got {correct.size}")
    if eps <= 0:
        raise ContractViolation(f"brier_diversity: eps must be positive, got {eps}")
    brier = brier_confidence_loss(conf, correct)
    diversity = ad.safe_log(ad.add_scalar(confidence_std(conf), eps))
    return ad.sub(brier, ad.mul_scalar(diversity, beta))


def confidence_target_loss(conf: Tensor, targets: ArrayLike) -> Tensor:
    """mean (c_i - target_i)^2 against continuous targets in [0, 1]"""
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    _column(conf, targets.size, "confidence_target_loss")
    if np.any(targets < 0) or np.any(targets > 1):
        raise DomainError("confidence_target_loss: targets must lie in [0, 1]")
    return ad.mean(ad.square(ad.sub(conf, Tensor(targets.reshape(-1, 1)))))


def composite_loss(cls_loss: Tensor, conf_loss: Tensor, lam: float) -> Tensor:
    """cls_loss + lambda * conf_loss"""
    if cls_loss.size != 1 or conf_loss.size != 1:
        raise ContractViolation("composite_loss: both terms must be scalars")
    return ad.add(cls_loss, ad.mul_scalar(conf_loss, lam))


def cosine_anneal(step: int, total: int, base: float, floor: float) -> float:
    """floor + (base - floor)(1 + cos(pi step / total)) / 2"""
    if total < 1 or not 0 <= step <= total:
        raise ContractViolation(f"cosine_anneal: need 0 <= step <= total and total >= 1, got {step}/{total}")
    return floor + 0.5 * (base - floor) * (1.0 + math.cos(math.pi * step / total))


# Closed forms used as oracles by the property checks

def negative_reward_fixed_points(p: NegativeRewardParams, eps: float = 1e-3) -> Tuple[float, float]:
    """Optimal confidence for likely-correct and likely-wrong inputs: (l1/(l1+eps), eps/(l2+eps))"""
    if eps <= 0:
        raise ContractViolation(f"negative_reward_fixed_points: eps must be positive, got {eps}")
    return p.lambda1 / (p.lambda1 + eps), eps / (p.lambda2 + eps)


def brier_decomposition(c: float, p: float) -> float:
    """Expected Brier score of constant confidence c against Bernoulli(p) outcomes"""
    if not (0.0 <= c <= 1.0 and 0.0 <= p <= 1.0):
        raise DomainError(f"brier_decomposition: c and p must lie in [0, 1], got {c}, {p}")
    return (c - p) ** 2 + p * (1.0 - p)


def brier_collapse_targets(accuracy: float) -> Tuple[float, float]:
    """Limit confidences (correct, incorrect) = (accuracy, 1 - accuracy) under binary correctness supervision"""
    if not 0.0 <= accuracy <= 1.0:
        raise DomainError(f"brier_collapse_targets: accuracy must lie in [0, 1], got {accuracy}")
    return accuracy, 1.0 - accuracy
