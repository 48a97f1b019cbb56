#!/usr/bin/env python3
"""
Post-hoc Calibration
Temperature scaling, Platt scaling and isotonic regression fitted on held-out
confidences, plus the variance-compression report for a fitted map
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Union

import numpy as np
from scipy.special import expit, log_softmax, logit, softmax
from sklearn.isotonic import IsotonicRegression

import calibration_metrics as metrics
from autodiff_engine import Tensor
from lab_errors import ContractViolation, FitError

logger = logging.getLogger(__name__)

TEMPERATURE_BOUNDS = (0.05, 20.0)
TEMPERATURE_MAX_STEP = 0.5
PLATT_RIDGE = 1e-8
SCORE_CLIP = 1e-6

ArrayOrTensor = Union[np.ndarray, Tensor, Sequence[float]]


class MapKind(str, Enum):
    IDENTITY = "identity"
    TEMPERATURE = "temperature"
    PLATT = "platt"
    ISOTONIC = "isotonic"


@dataclass(frozen=True)
class CalibrationMap:
    """A fitted monotone map from scores (or logits) to calibrated confidence"""
    kind: MapKind = MapKind.IDENTITY
    temperature: float = 1.0
    a: float = -1.0
    b: float = 0.0
    breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "kind", MapKind(self.kind))
        object.__setattr__(self, "breakpoints", np.asarray(self.breakpoints, dtype=np.float64))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.kind is MapKind.TEMPERATURE and not self.temperature > 0:
            raise ContractViolation(f"temperature must be positive, got {self.temperature}")
        if self.kind is MapKind.ISOTONIC:
            x, y = self.breakpoints, self.values
            if x.size == 0 or x.shape != y.shape:
                raise ContractViolation("isotonic map needs matching nonempty breakpoints and values")
            if np.any(np.diff(x) <= 0) or np.any(np.diff(y) < 0) or y.min() < 0 or y.max() > 1:
                raise ContractViolation("isotonic map needs increasing breakpoints and nondecreasing values in [0, 1]")

    def to_json(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {"kind": self.kind.value}
        if self.kind is MapKind.TEMPERATURE:
            payload["temperature"] = self.temperature
        elif self.kind is MapKind.PLATT:
            payload.update(a=self.a, b=self.b)
        elif self.kind is MapKind.ISOTONIC:
            payload.update(breakpoints=self.breakpoints.tolist(), values=self.values.tolist())
        return payload

    @classmethod
    def from_json(cls, payload: Dict[str, Any]) -> "CalibrationMap":
        return cls(**payload)


def _array(values: ArrayOrTensor) -> np.ndarray:
    return np.array(values.data if isinstance(values, Tensor) else values, dtype=np.float64)


def confidence_logits(conf_logit: ArrayOrTensor) -> np.ndarray:
    """[0, z] rows, so softmax(row / T)[1] == sigmoid(z / T)"""
    z = _array(conf_logit).reshape(-1, 1)
    return np.hstack([np.zeros_like(z), z])


def _nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    return float(-log_softmax(logits / temperature, axis=1)[np.arange(labels.size), labels].mean())


def fit_temperature(logits: ArrayOrTensor, labels: Sequence[int], iters: int = 1000, lr: float = 0.1) -> CalibrationMap:
    """
    Gradient descent on the mean NLL of softmax(z / T) over u = log T, starting at T = 1

    Steps are clipped to +-0.5 in log space and the result is clamped to [0.05, 20].

    Raises:
        FitError: the NLL became non-finite
    """
    z = _array(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if z.ndim != 2 or z.shape[0] != labels.size or labels.size < 1:
        raise ContractViolation(f"fit_temperature: logits {list(z.shape)} do not match {labels.size} labels")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise ContractViolation(f"fit_temperature: labels must lie in 0..{z.shape[1] - 1}")
    onehot = np.zeros_like(z)
    onehot[np.arange(labels.size), labels] = 1.0

    u = 0.0
    for _ in range(iters):
        temperature = float(np.exp(u))
        p = softmax(z / temperature, axis=1)
        grad = -float(((p - onehot) * z).sum(axis=1).mean()) / temperature
        if not np.isfinite(grad):
            raise FitError(f"temperature fit: non-finite gradient at T={temperature:.4g}")
        step = float(np.clip(lr * grad, -TEMPERATURE_MAX_STEP, TEMPERATURE_MAX_STEP))
        u -= step
        if abs(step) < 1e-12:
            break

    temperature = float(np.exp(u))
    if not np.isfinite(_nll(z, labels, float(np.clip(temperature, *TEMPERATURE_BOUNDS)))):
        raise FitError("temperature fit: non-finite NLL")
    clamped = float(np.clip(temperature, *TEMPERATURE_BOUNDS))
    if clamped != temperature:
        logger.warning(f"temperature {temperature:.4g} clamped to {clamped}")
    logger.debug(f"fitted temperature T={clamped:.4f}")
    return CalibrationMap(MapKind.TEMPERATURE, temperature=clamped)


def _outcomes(scores: ArrayOrTensor, correct: Sequence[bool], what: str):
    s = _array(scores).reshape(-1)
    y = np.asarray(correct).reshape(-1).astype(np.float64)
    if s.size != y.size or s.size < 1:
        raise ContractViolation(f"{what}: {s.size} scores but {y.size} outcomes")
    if np.any(s < 0) or np.any(s > 1):
        raise ContractViolation(f"{what}: scores must lie in [0, 1]")
    return s, y


def fit_platt(scores: ArrayOrTensor, correct: Sequence[bool], iters: int = 100, lr: float = 1.0) -> CalibrationMap:
    """
    Logistic fit g(s) = 1 / (1 + exp(a x + b)) on x = logit(s)

    Damped Newton steps on the mean log loss, starting from the identity (a=-1, b=0).

    Raises:
        FitError: only one outcome value present, or the fit diverged
    """
    s, y = _outcomes(scores, correct, "fit_platt")
    if y.min() == y.max():
        raise FitError("Platt fit needs both correct and incorrect examples")
    x = logit(np.clip(s, SCORE_CLIP, 1 - SCORE_CLIP))
    design = np.stack([x, np.ones_like(x)], axis=1)
    w = np.array([-1.0, 0.0])
    for _ in range(iters):
        q = expit(-(design @ w))
        grad = design.T @ (y - q) / y.size
        hessian = (design * (q * (1 - q))[:, None]).T @ design / y.size + PLATT_RIDGE * np.eye(2)
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError as e:
            raise FitError(f"Platt fit: singular Hessian ({e})") from e
        w = w - lr * step
        if not np.all(np.isfinite(w)):
            raise FitError("Platt fit diverged")
        if np.max(np.abs(step)) < 1e-10:
            break
    logger.debug(f"fitted Platt a={w[0]:.4f} b={w[1]:.4f}")
    return CalibrationMap(MapKind.PLATT, a=float(w[0]), b=float(w[1]))


def platt_log_loss(cal: CalibrationMap, scores: ArrayOrTensor, correct: Sequence[bool]) -> float:
    s, y = _outcomes(scores, correct, "platt_log_loss")
    z = cal.a * logit(np.clip(s, SCORE_CLIP, 1 - SCORE_CLIP)) + cal.b
    # log g = -log(1 + e^z), log(1 - g) = z - log(1 + e^z)
    return float(np.mean(np.logaddexp(0.0, z) - (1 - y) * z))


def fit_isotonic(scores: ArrayOrTensor, correct: Sequence[bool], bounded: bool = False) -> CalibrationMap:
    """
    Pool-adjacent-violators on score-sorted outcomes (tied scores pooled first)

    bounded=True clips the fitted values to [min(scores), max(scores)], so the map
    never sends a confidence outside the range the model produced and cannot
    spread the distribution past its own extremes.
    """
    s, y = _outcomes(scores, correct, "fit_isotonic")
    if s.size == 1:
        return CalibrationMap(MapKind.ISOTONIC, breakpoints=s, values=s.copy() if bounded else y)
    low, high = (float(s.min()), float(s.max())) if bounded else (0.0, 1.0)
    regression = IsotonicRegression(y_min=low, y_max=high, increasing=True, out_of_bounds="clip").fit(s, y)
    x, v = regression.X_thresholds_, regression.y_thresholds_
    keep = np.concatenate([[True], np.diff(x) > 0])
    return CalibrationMap(MapKind.ISOTONIC, breakpoints=x[keep], values=np.clip(v[keep], 0.0, 1.0))


def apply_calibration(cal: CalibrationMap, inputs: ArrayOrTensor) -> np.ndarray:
    """
    Calibrated confidences

    Temperature maps take [n, K] logits and return softmax(z / T); Platt and
    isotonic maps take 1-D scores. Isotonic maps evaluate a right-continuous step
    function clamped at both ends.
    """
    x = _array(inputs)
    if cal.kind is MapKind.IDENTITY:
        return x
    if cal.kind is MapKind.TEMPERATURE:
        if x.ndim != 2:
            raise ContractViolation(f"temperature map needs [n, K] logits, got shape {list(x.shape)}")
        return softmax(x / cal.temperature, axis=1)
    if x.ndim != 1:
        raise ContractViolation(f"{cal.kind.value} map needs 1-D scores, got shape {list(x.shape)}")
    if np.any(x < 0) or np.any(x > 1):
        raise ContractViolation(f"{cal.kind.value} map needs scores in [0, 1]")
    if cal.kind is MapKind.PLATT:
        return expit(-(cal.a * logit(np.clip(x, SCORE_CLIP, 1 - SCORE_CLIP)) + cal.b))
    index = np.clip(np.searchsorted(cal.breakpoints, x, side="right") - 1, 0, cal.values.size - 1)
    return cal.values[index]


def calibrate_confidence(cal: CalibrationMap, conf: ArrayOrTensor,
                         conf_logit: Optional[ArrayOrTensor] = None) -> np.ndarray:
    """Apply a map to the confidence head; temperature maps use its pre-sigmoid logit"""
    if cal.kind is MapKind.TEMPERATURE:
        if conf_logit is None:
            raise ContractViolation("temperature map needs the confidence logits")
        return apply_calibration(cal, confidence_logits(conf_logit))[:, 1]
    return apply_calibration(cal, _array(conf).reshape(-1))


@dataclass(frozen=True)
class CompressionReport:
    delta_var: float
    bound: float
    ece_after: float
    holds: bool


def compression_report(before: Sequence[float], after: Sequence[float], accuracy: float,
                       correct: Optional[Sequence[bool]] = None, n_bins: int = metrics.DEFAULT_BINS) -> CompressionReport:
    """
    Variance removed by a calibration map against the bound (mean(before) - acc)^2 / 4 - ECE(after)^2

    Without per-example outcomes the ECE term falls back to |mean(after) - accuracy|.
    """
    before = np.asarray(before, dtype=np.float64).reshape(-1)
    after = np.asarray(after, dtype=np.float64).reshape(-1)
    if before.shape != after.shape or before.size == 0:
        raise ContractViolation(f"compression_report: lengths differ ({before.size} vs {after.size})")
    if correct is not None:
        ece_after = metrics.evaluate(np.clip(after, 0.0, 1.0), correct, n_bins).ece
    else:
        ece_after = abs(float(after.mean()) - accuracy)
    delta_var = float(before.var() - after.var())
    bound = (float(before.mean()) - accuracy) ** 2 / 4.0 - ece_after ** 2
    return CompressionReport(delta_var, bound, ece_after, delta_var >= bound)
