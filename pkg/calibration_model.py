#!/usr/bin/env python3
"""
Dual-Head Calibration Network
Shared two-layer encoder (Linear -> BatchNorm -> ReLU -> Dropout -> Linear -> BatchNorm -> ReLU)
feeding a softmax class head and a sigmoid confidence head
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

import autodiff_engine as ad
from autodiff_engine import Mode, Tensor
from lab_errors import ContractViolation

logger = logging.getLogger(__name__)

HIDDEN_DIM = 64
CHECKPOINT_MAGIC = "CALIBLAB-CKPT-v1"

# Parameter order is part of the checkpoint format and of seeded initialisation
PARAM_ORDER = (
    "enc1.weight", "enc1.bias", "bn1.gamma", "bn1.beta",
    "enc2.weight", "enc2.bias", "bn2.gamma", "bn2.beta",
    "pred.weight", "pred.bias", "conf.weight", "conf.bias",
)
RUNNING_ORDER = ("bn1.running_mean", "bn1.running_var", "bn2.running_mean", "bn2.running_var")
ENCODER_PARAMS = frozenset(name for name in PARAM_ORDER if name.split(".")[0] in ("enc1", "bn1", "enc2", "bn2"))
PRED_HEAD_PARAMS = frozenset(("pred.weight", "pred.bias"))
CONF_HEAD_PARAMS = frozenset(("conf.weight", "conf.bias"))


@dataclass
class ModelParams:
    """Trainable weights plus batchnorm running statistics"""
    input_dim: int
    num_classes: int
    hidden_dim: int
    weights: Dict[str, np.ndarray]
    running: Dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.input_dim, self.num_classes, self.hidden_dim,
                           {k: v.copy() for k, v in self.weights.items()},
                           {k: v.copy() for k, v in self.running.items()})

    def expected_shapes(self) -> Dict[str, Tuple[int, ...]]:
        d, h, k = self.input_dim, self.hidden_dim, self.num_classes
        return {
            "enc1.weight": (d, h), "enc1.bias": (h,), "bn1.gamma": (h,), "bn1.beta": (h,),
            "enc2.weight": (h, h), "enc2.bias": (h,), "bn2.gamma": (h,), "bn2.beta": (h,),
            "pred.weight": (h, k), "pred.bias": (k,), "conf.weight": (h, 1), "conf.bias": (1,),
            "bn1.running_mean": (h,), "bn1.running_var": (h,),
            "bn2.running_mean": (h,), "bn2.running_var": (h,),
        }

    def validate(self):
        shapes = self.expected_shapes()
        for name, value in {**self.weights, **self.running}.items():
            if value.shape != shapes[name]:
                raise ContractViolation(f"parameter {name}: expected shape {list(shapes[name])}, got {list(value.shape)}")
            if not np.all(np.isfinite(value)):
                raise ContractViolation(f"parameter {name} contains non-finite values")
        for name in ("bn1.running_var", "bn2.running_var"):
            if np.any(self.running[name] < 0):
                raise ContractViolation(f"{name} must be nonnegative")

    def equals(self, other: "ModelParams") -> bool:
        """Bit-exact comparison of every weight and running statistic"""
        return (self.weights.keys() == other.weights.keys()
                and all(np.array_equal(v, other.weights[k]) for k, v in self.weights.items())
                and all(np.array_equal(v, other.running[k]) for k, v in self.running.items()))


@dataclass
class ModelOutput:
    """Forward results; `class_probs` and `confidence` are the (y_hat, c) pair"""
    class_probs: Tensor
    confidence: Tensor
    logits: Tensor
    conf_logit: Tensor
    param_ids: Dict[str, int] = field(default_factory=dict)
    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def predictions(self) -> np.ndarray:
        return np.argmax(self.class_probs.data, axis=1)

    def confidence_values(self) -> np.ndarray:
        return self.confidence.data.reshape(-1).copy()


def init_model(input_dim: int, num_classes: int, seed: int, hidden_dim: int = HIDDEN_DIM) -> ModelParams:
    """He-normal weights, zero biases, identity batchnorm; deterministic per seed"""
    if input_dim < 1 or num_classes < 2 or hidden_dim < 1:
        raise ContractViolation(f"init_model: need input_dim >= 1, num_classes >= 2, hidden_dim >= 1; "
                                f"got {input_dim}, {num_classes}, {hidden_dim}")
    rng = np.random.default_rng(seed)
    h = hidden_dim

    def he(fan_in: int, fan_out: int) -> np.ndarray:
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))

    weights = {
        "enc1.weight": he(input_dim, h), "enc1.bias": np.zeros(h),
        "bn1.gamma": np.ones(h), "bn1.beta": np.zeros(h),
        "enc2.weight": he(h, h), "enc2.bias": np.zeros(h),
        "bn2.gamma": np.ones(h), "bn2.beta": np.zeros(h),
        "pred.weight": he(h, num_classes), "pred.bias": np.zeros(num_classes),
        "conf.weight": he(h, 1), "conf.bias": np.zeros(1),
    }
    running = {
        "bn1.running_mean": np.zeros(h), "bn1.running_var": np.ones(h),
        "bn2.running_mean": np.zeros(h), "bn2.running_var": np.ones(h),
    }
    return ModelParams(input_dim, num_classes, hidden_dim, weights, running)


def forward(params: ModelParams, batch: Union[np.ndarray, Tensor], mode: Mode = Mode.EVAL,
            rng: Optional[np.random.Generator] = None,
            dropout_rate: float = ad.DROPOUT_RATE) -> ModelOutput:
    """
    Run the network on a batch

    Args:
        params: model parameters
        batch: [n, input_dim] features
        mode: train (batch statistics, dropout) or eval (running statistics, no dropout)
        rng: generator for dropout masks, required in train mode
        dropout_rate: dropout probability after the first block

    Returns:
        ModelOutput; when a tape is active the parameters are registered as named
        trainable leaves and their node ids are returned in `param_ids`
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 2 or x.shape[1] != params.input_dim:
        raise ContractViolation(f"forward: expected batch [n, {params.input_dim}], got {list(x.shape)}")
    if not np.all(np.isfinite(x.data)):
        raise ContractViolation("forward: batch contains non-finite values")
    if mode is Mode.TRAIN and x.shape[0] < 2:
        raise ContractViolation(f"forward: train mode needs at least 2 rows for batch statistics, got {x.shape[0]}")

    tape = ad.current_tape()
    if tape is not None:
        leaves = {name: tape.leaf(params.weights[name], name=name) for name in PARAM_ORDER}
    else:
        leaves = {name: Tensor(params.weights[name]) for name in PARAM_ORDER}

    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    def block(inputs: Tensor, layer: str, bn: str) -> Tensor:
        pre = ad.add(ad.matmul(inputs, leaves[f"{layer}.weight"]), leaves[f"{layer}.bias"])
        if mode is Mode.TRAIN:
            n = pre.shape[0]
            batch_stats[bn] = (pre.data.mean(axis=0), pre.data.var(axis=0) * n / (n - 1))
        normed = ad.batchnorm(pre, leaves[f"{bn}.gamma"], leaves[f"{bn}.beta"],
                              params.running[f"{bn}.running_mean"], params.running[f"{bn}.running_var"], mode)
        return ad.relu(normed)

    hidden = ad.dropout(block(x, "enc1", "bn1"), dropout_rate, mode, rng)
    features = block(hidden, "enc2", "bn2")

    logits = ad.add(ad.matmul(features, leaves["pred.weight"]), leaves["pred.bias"])
    conf_logit = ad.add(ad.matmul(features, leaves["conf.weight"]), leaves["conf.bias"])
    output = ModelOutput(
        class_probs=ad.softmax_rows(logits),
        confidence=ad.sigmoid(conf_logit),
        logits=logits,
        conf_logit=conf_logit,
        param_ids={name: t.node_id for name, t in leaves.items()} if tape is not None else {},
        batch_stats=batch_stats,
    )
    return output


def update_running_stats(params: ModelParams, output: ModelOutput,
                         momentum: float = ad.BATCHNORM_MOMENTUM) -> ModelParams:
    """running <- momentum * running + (1 - momentum) * batch, per batchnorm layer"""
    updated = dict(params.running)
    for bn, (batch_mean, batch_var) in output.batch_stats.items():
        updated[f"{bn}.running_mean"] = momentum * params.running[f"{bn}.running_mean"] + (1 - momentum) * batch_mean
        updated[f"{bn}.running_var"] = momentum * params.running[f"{bn}.running_var"] + (1 - momentum) * batch_var
    return ModelParams(params.input_dim, params.num_classes, params.hidden_dim, params.weights, updated)


def uncertainty(output: ModelOutput) -> Tensor:
    """uncert = 1 - confidence"""
    return ad.add_scalar(ad.mul_scalar(output.confidence, -1.0), 1.0)


@dataclass
class TrainedModel:
    """Fitted parameters in eval mode plus the method that produced them"""
    params: ModelParams
    method: str = "baseline"
    seed: int = 0

    def predict(self, features: np.ndarray) -> ModelOutput:
        return forward(self.params, np.asarray(features, dtype=np.float64), Mode.EVAL)


# Checkpoints

def checkpoint_dict(params: ModelParams) -> Dict[str, Any]:
    tensors = {name: {"shape": list(value.shape), "data": value.reshape(-1).tolist()}
               for name, value in list(params.weights.items()) + list(params.running.items())}
    return {
        "magic": CHECKPOINT_MAGIC,
        "input_dim": params.input_dim,
        "num_classes": params.num_classes,
        "hidden_dim": params.hidden_dim,
        "tensors": tensors,
    }


def params_from_dict(payload: Dict[str, Any]) -> ModelParams:
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ContractViolation(f"not a model checkpoint (magic {payload.get('magic')!r})")
    tensors = payload["tensors"]

    def load(name: str) -> np.ndarray:
        entry = tensors[name]
        return np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])

    params = ModelParams(int(payload["input_dim"]), int(payload["num_classes"]), int(payload["hidden_dim"]),
                         {name: load(name) for name in PARAM_ORDER},
                         {name: load(name) for name in RUNNING_ORDER})
    params.validate()
    return params


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(checkpoint_dict(params), f)
    logger.debug(f"checkpoint written to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    with open(path, "r", encoding="utf-8") as f:
        return params_from_dict(json.load(f))


def trainable_names() -> List[str]:
    return list(PARAM_ORDER)
