#!/usr/bin/env python3
"""
Training Engine
Adam optimisation of the dual-head network under the baseline, negative-reward,
fixed negative-reward, Brier + diversity, distillation and three-stage regimes,
with per-epoch telemetry
"""

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

import autodiff_engine as ad
import calibration_model as cm
import result_store
import training_losses as tl
from autodiff_engine import Mode, Tape
from calibration_model import ModelOutput, ModelParams, TrainedModel
from dataset_factory import Dataset
from lab_errors import ContractViolation, TrainingDivergence
from training_losses import NegativeRewardParams

logger = logging.getLogger(__name__)

HYPERPARAMETERS_PATH = Path(__file__).parent / "config" / "hyperparameters.json"
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
TRACE_COLUMNS = ("epoch", "loss", "mean_reward", "mean_conf", "std_conf", "train_acc", "stage")


def load_hyperparameters(path: Path = HYPERPARAMETERS_PATH) -> Dict[str, float]:
    """Fixed hyperparameter table; built-in values when the file is absent"""
    defaults = {
        "learning_rate": 0.001, "batch_size": 32, "hidden_dim": 64, "dropout": 0.1,
        "weight_decay": 1e-4, "epochs": 200, "lambda": 1.0, "beta": 1.0,
    }
    if path.exists():
        with open(path, "r", encoding="utf-8") as f:
            defaults.update(json.load(f).get("training", {}))
    return defaults


HYPERPARAMETERS = load_hyperparameters()


class TrainMethod(str, Enum):
    BASELINE = "baseline"
    NEG_REWARD = "neg_reward"
    NEG_REWARD_FIXED = "neg_reward_fixed"
    BRIER_DIVERSITY = "brier_diversity"
    MULTI_STAGE = "multi_stage"
    DISTILL = "distill"


class TrainConfig(BaseModel):
    """One training run; `lambda` weights the confidence term of the composite loss"""
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    method: TrainMethod = TrainMethod.BASELINE
    epochs: int = Field(int(HYPERPARAMETERS["epochs"]), ge=1)
    batch_size: int = Field(int(HYPERPARAMETERS["batch_size"]), ge=2)
    lr: float = Field(float(HYPERPARAMETERS["learning_rate"]), gt=0.0)
    weight_decay: float = Field(float(HYPERPARAMETERS["weight_decay"]), ge=0.0)
    lam: float = Field(float(HYPERPARAMETERS["lambda"]), ge=0.0, alias="lambda")
    nr: NegativeRewardParams = NegativeRewardParams()
    beta: float = Field(float(HYPERPARAMETERS["beta"]), ge=0.0)
    seed: int = 0
    hidden_dim: int = Field(int(HYPERPARAMETERS["hidden_dim"]), ge=1)
    dropout: float = Field(float(HYPERPARAMETERS["dropout"]), ge=0.0, lt=1.0)
    anneal_floor: float = Field(tl.ANNEAL_FLOOR_FRACTION, ge=0.0, le=1.0)
    stage_epochs: Optional[Tuple[int, int, int]] = None

    @field_validator("stage_epochs")
    @classmethod
    def _nonnegative_stages(cls, value):
        if value is not None and (any(e < 0 for e in value) or sum(value) < 1):
            raise ValueError("stage_epochs must be nonnegative with a positive total")
        return value

    def stage_budget(self) -> Tuple[int, int, int]:
        """Epochs per stage; equal thirds of `epochs` unless set explicitly"""
        if self.stage_epochs is not None:
            return self.stage_epochs
        third = self.epochs // 3
        return third, third, self.epochs - 2 * third


@dataclass
class TrainingRecord:
    epoch: int
    loss: float
    mean_reward: float
    mean_conf: float
    std_conf: float
    train_acc: float
    stage: int = 0
    std_conf_correct: float = 0.0


@dataclass
class TrainingTrace:
    """Per-epoch records; stage 0 marks single-stage methods"""
    method: str
    records: List[TrainingRecord] = field(default_factory=list)
    stage_boundaries: List[int] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=np.float64)

    def to_dict(self) -> Dict:
        return {"method": self.method, "stage_boundaries": list(self.stage_boundaries),
                "records": [asdict(r) for r in self.records]}


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState, lr: float,
              wd: float, t: int, frozen: FrozenSet[str] = frozenset()) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One Adam update with decoupled weight decay

    Frozen names keep their values and moment buffers untouched.
    """
    if t < 1:
        raise ContractViolation(f"adam_step: t must be >= 1, got {t}")
    updated, m, v = dict(params), dict(state.m), dict(state.v)
    for name, w in params.items():
        if name in frozen:
            continue
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(w)
        if g.shape != w.shape:
            raise ContractViolation(f"adam_step: gradient for {name} has shape {list(g.shape)}, "
                                    f"parameter has {list(w.shape)}")
        m[name] = ADAM_BETA1 * m.get(name, np.zeros_like(w)) + (1 - ADAM_BETA1) * g
        v[name] = ADAM_BETA2 * v.get(name, np.zeros_like(w)) + (1 - ADAM_BETA2) * g * g
        m_hat = m[name] / (1 - ADAM_BETA1 ** t)
        v_hat = v[name] / (1 - ADAM_BETA2 ** t)
        updated[name] = w - lr * (m_hat / (np.sqrt(v_hat) + ADAM_EPS) + wd * w)
    return updated, AdamState(m, v, t)


def assembled_loss(method: TrainMethod, output: ModelOutput, labels: np.ndarray, config: TrainConfig,
                   alpha: Optional[float] = None, nr: Optional[NegativeRewardParams] = None,
                   targets: Optional[np.ndarray] = None, stage: int = 0,
                   correct: Optional[np.ndarray] = None) -> Tuple[ad.Tensor, float]:
    """
    Per-method objective on one minibatch

    Args:
        correct: correctness flags supervising the confidence head; the argmax of
            `output` when omitted. Training passes eval-mode correctness so dropout
            noise does not flip the targets.

    Returns:
        (scalar loss tensor, mean reward of the batch)
    """
    nr = nr or config.nr
    alpha = nr.alpha if alpha is None else alpha
    probs, conf = output.class_probs, output.confidence
    if correct is None:
        correct = output.predictions() == labels
    correct = np.asarray(correct, dtype=bool).reshape(-1)
    if correct.size != conf.shape[0]:
        raise ContractViolation(f"assembled_loss: {correct.size} correctness flags for {conf.shape[0]} rows")
    # Reward telemetry for methods that do not optimise a reward
    passive_reward = float(np.mean(np.where(correct, -nr.lambda1 * (1 - conf.data[:, 0]) ** 2,
                                            -nr.lambda2 * conf.data[:, 0] ** 2)))

    if method is TrainMethod.MULTI_STAGE:
        if stage == 1:
            return tl.cross_entropy(probs, labels), passive_reward
        if stage == 2:
            return tl.brier_confidence_loss(conf, correct), passive_reward
        method = TrainMethod.BASELINE

    ce = tl.cross_entropy(probs, labels)
    if method is TrainMethod.BASELINE:
        return tl.composite_loss(ce, tl.brier_confidence_loss(conf, correct), config.lam), passive_reward
    if method is TrainMethod.NEG_REWARD:
        nr = nr.model_copy(update={"alpha": alpha})
        rewards, _ = tl.negative_reward_simple(correct, conf, nr)
        anchored = tl.composite_loss(ce, tl.brier_confidence_loss(conf, correct), config.lam)
        return ad.add(anchored, tl.confidence_mass_penalty(conf, nr)), float(rewards.data.mean())
    if method is TrainMethod.NEG_REWARD_FIXED:
        reward = tl.negative_reward_full(labels, probs, conf, cm.uncertainty(output), nr)
        return ad.sub(ce, ad.mul_scalar(reward, alpha)), reward.item()
    if method is TrainMethod.BRIER_DIVERSITY:
        return tl.composite_loss(ce, tl.brier_diversity(conf, correct, config.beta), config.lam), passive_reward
    if method is TrainMethod.DISTILL:
        if targets is None:
            raise ContractViolation("distill: confidence targets are required")
        return tl.composite_loss(ce, tl.confidence_target_loss(conf, targets), config.lam), passive_reward
    raise ContractViolation(f"unknown training method {method}")


class _Run:
    """Mutable state threaded through the epochs of one training run"""

    def __init__(self, config: TrainConfig, data: Dataset, params: ModelParams, targets: Optional[np.ndarray],
                 member: Optional[int]):
        self.config = config
        self.data = data
        self.params = params
        self.targets = targets
        self.member = member
        self.rng = np.random.default_rng(config.seed)
        self.adam = AdamState()
        self.epoch = 0
        self.trace = TrainingTrace(config.method.value)
        self.initial_error = 1.0 - self.snapshot()[2]

    def snapshot(self) -> Tuple[float, float, float, float]:
        """(mean conf, std conf, accuracy, std conf on correct) on the training set in eval mode"""
        output = cm.forward(self.params, self.data.features, Mode.EVAL)
        conf = output.confidence_values()
        correct = output.predictions() == self.data.labels
        std_correct = float(conf[correct].std()) if correct.any() else 0.0
        return float(conf.mean()), float(conf.std()), float(correct.mean()), std_correct

    def batches(self) -> List[np.ndarray]:
        order = self.rng.permutation(self.data.n)
        size = self.config.batch_size
        return [b for b in (order[i:i + size] for i in range(0, self.data.n, size)) if b.size >= 2]

    def schedule(self, step: int, total: int) -> Tuple[float, NegativeRewardParams]:
        nr = self.config.nr
        if self.config.method is not TrainMethod.NEG_REWARD_FIXED:
            return nr.alpha, nr
        alpha = tl.cosine_anneal(min(step, max(total - 1, 1)), max(total - 1, 1), nr.alpha,
                                 nr.alpha * self.config.anneal_floor)
        error = 1.0 - (self.trace.records[-1].train_acc if self.trace.records else 1.0 - self.initial_error)
        if self.initial_error > 0:
            nr = nr.model_copy(update={"lambda2": nr.lambda2 * error / self.initial_error})
        return alpha, nr

    def run_epochs(self, epochs: int, stage: int = 0, frozen: FrozenSet[str] = frozenset()):
        for step in range(epochs):
            self.epoch += 1
            alpha, nr = self.schedule(step, epochs)
            losses, rewards = [], []
            for index in self.batches():
                targets = None if self.targets is None else self.targets[index]
                labels = self.data.labels[index]
                correct = cm.forward(self.params, self.data.features[index], Mode.EVAL).predictions() == labels
                with Tape():
                    output = cm.forward(self.params, self.data.features[index], Mode.TRAIN, self.rng,
                                        self.config.dropout)
                    loss, reward = assembled_loss(self.config.method, output, labels, self.config,
                                                  alpha=alpha, nr=nr, targets=targets, stage=stage, correct=correct)
                    grads = ad.backward(loss).by_name()
                value = loss.item()
                if not np.isfinite(value):
                    raise TrainingDivergence(self.epoch, self.member, f"loss={value}")
                weights, self.adam = adam_step(self.params.weights, grads, self.adam, self.config.lr,
                                               self.config.weight_decay, self.adam.t + 1, frozen)
                self.params = cm.update_running_stats(
                    ModelParams(self.params.input_dim, self.params.num_classes, self.params.hidden_dim,
                                weights, self.params.running), output)
                losses.append(value)
                rewards.append(reward)
            if not losses:
                raise ContractViolation(f"training set of {self.data.n} rows yields no batch of >= 2 rows")

            mean_conf, std_conf, acc, std_correct = self.snapshot()
            record = TrainingRecord(self.epoch, float(np.mean(losses)), float(np.mean(rewards)), mean_conf,
                                    std_conf, acc, stage, std_correct)
            if not all(np.isfinite([record.loss, record.mean_conf, record.std_conf])):
                raise TrainingDivergence(self.epoch, self.member, "non-finite telemetry")
            self.trace.records.append(record)
            logger.debug(f"[{self.config.method.value}] epoch {self.epoch} loss={record.loss:.4f} "
                         f"acc={acc:.3f} conf={mean_conf:.3f}±{std_conf:.3f}")


def _start(config: TrainConfig, train_ds: Dataset, init_params: Optional[ModelParams],
           confidence_targets: Optional[Sequence[float]], member: Optional[int]) -> _Run:
    if train_ds.n < 2:
        raise ContractViolation(f"train: need at least 2 training rows, got {train_ds.n}")
    num_classes = max(train_ds.num_classes, 2)
    if init_params is None:
        params = cm.init_model(train_ds.d, num_classes, config.seed, config.hidden_dim)
    else:
        if init_params.input_dim != train_ds.d or init_params.num_classes < num_classes:
            raise ContractViolation(f"train: warm-start model ({init_params.input_dim} -> {init_params.num_classes}) "
                                    f"does not fit data (d={train_ds.d}, K={num_classes})")
        params = init_params.copy()
    targets = None
    if confidence_targets is not None:
        targets = np.asarray(confidence_targets, dtype=np.float64).reshape(-1)
        if targets.size != train_ds.n:
            raise ContractViolation(f"train: {targets.size} confidence targets for {train_ds.n} rows")
    if config.method is TrainMethod.DISTILL and targets is None:
        raise ContractViolation("train: method 'distill' needs confidence_targets")
    return _Run(config, train_ds, params, targets, member)


def _finish(run: _Run, val_ds: Optional[Dataset]) -> Tuple[TrainedModel, TrainingTrace]:
    model = TrainedModel(run.params, run.config.method.value, run.config.seed)
    final = run.trace.records[-1]
    message = f"[{run.config.method.value}] seed={run.config.seed} done: train acc {final.train_acc:.3f}"
    if val_ds is not None and val_ds.n:
        val_acc = float(np.mean(model.predict(val_ds.features).predictions() == val_ds.labels))
        message += f", val acc {val_acc:.3f}"
    logger.info(message)
    return model, run.trace


def train(config: TrainConfig, train_ds: Dataset, val_ds: Optional[Dataset] = None,
          init_params: Optional[ModelParams] = None, confidence_targets: Optional[Sequence[float]] = None,
          member: Optional[int] = None) -> Tuple[TrainedModel, TrainingTrace]:
    """
    Train one model

    Args:
        config: method and hyperparameters
        train_ds: training data; minibatches are reshuffled every epoch from config.seed
        val_ds: only reported
        init_params: warm start instead of seeded initialisation
        confidence_targets: per-row targets for the distill method
        member: ensemble member index, carried into divergence errors

    Raises:
        TrainingDivergence: the loss became non-finite
    """
    if config.method is TrainMethod.MULTI_STAGE:
        return train_multi_stage(config, train_ds, val_ds, init_params=init_params, member=member)
    run = _start(config, train_ds, init_params, confidence_targets, member)
    logger.info(f"[{config.method.value}] training {config.epochs} epochs on {train_ds.n} rows (seed {config.seed})")
    run.run_epochs(config.epochs)
    return _finish(run, val_ds)


def train_multi_stage(config: TrainConfig, train_ds: Dataset, val_ds: Optional[Dataset] = None,
                      init_params: Optional[ModelParams] = None,
                      member: Optional[int] = None) -> Tuple[TrainedModel, TrainingTrace]:
    """
    Classification, then confidence with encoder and class head frozen, then joint

    Stage boundaries (cumulative epochs after stages 1 and 2) are stored on the trace.
    """
    config = config.model_copy(update={"method": TrainMethod.MULTI_STAGE})
    run = _start(config, train_ds, init_params, None, member)
    budget = config.stage_budget()
    frozen_stage2 = frozenset(cm.trainable_names()) - cm.CONF_HEAD_PARAMS
    for stage, epochs in enumerate(budget, start=1):
        if epochs:
            logger.info(f"[multi_stage] stage {stage}: {epochs} epochs")
            run.run_epochs(epochs, stage=stage, frozen=frozen_stage2 if stage == 2 else frozenset())
        if stage < 3:
            run.trace.stage_boundaries.append(run.epoch)
    return _finish(run, val_ds)


def variance_collapse_sim(c0: Sequence[float], eta_lambda: float, steps: int) -> np.ndarray:
    """
    Iterate c <- c - eta_lambda (c - 1) and record pairwise confidence gaps

    Returns:
        [steps + 1, pairs] array of |c_t(a) - c_t(b)| for every pair a < b
    """
    c = np.asarray(c0, dtype=np.float64).reshape(-1)
    if not 0.0 < eta_lambda < 2.0:
        raise ContractViolation(f"variance_collapse_sim: eta*lambda must lie in (0, 2), got {eta_lambda}")
    if c.size < 2 or np.any(c <= 0) or np.any(c >= 1):
        raise ContractViolation("variance_collapse_sim: need at least two starting confidences inside (0, 1)")
    if steps < 0:
        raise ContractViolation(f"variance_collapse_sim: steps must be >= 0, got {steps}")
    pairs = list(itertools.combinations(range(c.size), 2))
    gaps = np.empty((steps + 1, len(pairs)))
    for t in range(steps + 1):
        gaps[t] = [abs(c[a] - c[b]) for a, b in pairs]
        c = c - eta_lambda * (c - 1.0)
    return gaps


def dump_trace_csv(trace: TrainingTrace, path: Union[str, Path]) -> Path:
    rows = [[getattr(r, column) for column in TRACE_COLUMNS] for r in trace.records]
    return result_store.write_csv(path, TRACE_COLUMNS, rows)
