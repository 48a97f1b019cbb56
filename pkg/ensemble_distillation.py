#!/usr/bin/env python3
"""
Ensemble Distillation and Multi-Agent Confidence Sharing
Ensemble disagreement as a continuous confidence target, student distillation,
accuracy-weighted expert consensus across domains, and the aleatoric trend check
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import softmax
from scipy.stats import spearmanr

import calibration_model as cm
import result_store
from calibration_model import TrainedModel
from cpu_manager import RunThrottler
from dataset_factory import Dataset, RegionalNoiseData
from lab_errors import ContractViolation, TrainingDivergence
from training_engine import TrainConfig, TrainMethod, train

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
MANIFEST = "manifest.json"


@dataclass
class Ensemble:
    members: List[TrainedModel]
    seeds: np.ndarray
    sigma_max: float

    def __post_init__(self):
        self.seeds = np.asarray(self.seeds, dtype=np.int64)
        if len(self.members) < 2 or len(self.members) != self.seeds.size:
            raise ContractViolation(f"ensemble needs >= 2 members with one seed each, got "
                                    f"{len(self.members)} members and {self.seeds.size} seeds")
        if not self.sigma_max > 0:
            raise ContractViolation(f"sigma_max must be positive, got {self.sigma_max}")

    @property
    def size(self) -> int:
        return len(self.members)

    def subset(self, m: int, data: Dataset) -> "Ensemble":
        """First m members, with sigma_max recomputed over `data`"""
        members = self.members[:m]
        return Ensemble(members, self.seeds[:m], sigma_max_over(members, data.features))


def member_probabilities(members: Sequence[TrainedModel], x: np.ndarray) -> np.ndarray:
    """[M, n, K] class probabilities in eval mode"""
    return np.stack([m.predict(x).class_probs.data for m in members])


def disagreement_variance(probs: np.ndarray) -> np.ndarray:
    """mean_m ||p_m - p_bar||^2 per input"""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[0] < 2:
        raise ContractViolation(f"disagreement: expected [M>=2, n, K] probabilities, got {list(probs.shape)}")
    centred = probs - probs.mean(axis=0, keepdims=True)
    return (centred ** 2).sum(axis=2).mean(axis=0)


def disagreement_from_probs(probs: np.ndarray, sigma_max: float) -> np.ndarray:
    """c_target = clip(1 - variance / sigma_max, 0, 1)"""
    if not sigma_max > 0:
        raise ContractViolation(f"sigma_max must be positive, got {sigma_max}")
    return np.clip(1.0 - disagreement_variance(probs) / sigma_max, 0.0, 1.0)


def sigma_max_over(members: Sequence[TrainedModel], x: np.ndarray) -> float:
    return max(float(disagreement_variance(member_probabilities(members, x)).max()), SIGMA_FLOOR)


def disagreement_target(e: Ensemble, x: np.ndarray) -> np.ndarray:
    return disagreement_from_probs(member_probabilities(e.members, np.asarray(x, dtype=np.float64)), e.sigma_max)


def _train_member(job: Tuple[TrainConfig, Dataset, int]) -> TrainedModel:
    config, data, member = job
    model, _ = train(config, data, member=member)
    return model


def train_ensemble(m: int, config: TrainConfig, data: Dataset, seeds: Optional[Sequence[int]] = None,
                   workers: int = 1, pool: Optional[np.ndarray] = None) -> Ensemble:
    """
    Train m members that differ only in seed (config.seed + 0..m-1 unless given)

    sigma_max is taken over `pool` when given (held-out rows the members never fit),
    otherwise over the training rows.

    Raises:
        TrainingDivergence: naming the member that diverged
    """
    if m < 2:
        raise ContractViolation(f"train_ensemble: need M >= 2, got {m}")
    seeds = [config.seed + i for i in range(m)] if seeds is None else [int(s) for s in seeds]
    if len(seeds) != m:
        raise ContractViolation(f"train_ensemble: {len(seeds)} seeds for {m} members")
    reference = data.features if pool is None else np.asarray(pool, dtype=np.float64)
    if reference.ndim != 2 or reference.shape[0] == 0 or reference.shape[1] != data.d:
        raise ContractViolation(f"train_ensemble: sigma_max pool must be [n > 0, {data.d}], "
                                f"got {list(reference.shape)}")
    logger.info(f"training {m}-member ensemble ({config.method.value}) on {data.n} rows")
    jobs = [(config.model_copy(update={"seed": s}), data, i) for i, s in enumerate(seeds)]
    members = RunThrottler(workers).map(_train_member, jobs)
    sigma_max = sigma_max_over(members, reference)
    logger.info(f"ensemble sigma_max={sigma_max:.4g} over {reference.shape[0]} rows")
    return Ensemble(members, np.asarray(seeds), sigma_max)


def distill_student(e: Ensemble, data: Dataset, lam: float, config: TrainConfig) -> TrainedModel:
    """Fresh model trained on CE + lam * (c - c_target)^2 with disagreement targets"""
    targets = disagreement_target(e, data.features)
    student_config = config.model_copy(update={"method": TrainMethod.DISTILL, "lam": lam})
    model, trace = train(student_config, data, confidence_targets=targets)
    logger.info(f"student distilled: conf {trace.records[-1].mean_conf:.3f}±{trace.records[-1].std_conf:.3f}")
    return model


# Multi-agent rounds

@dataclass
class AgentPool:
    agents: List[TrainedModel]
    domains: Dict[str, Dataset]
    domain_assignments: Dict[int, List[str]] = field(default_factory=dict)
    rankings: Dict[str, List[float]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.rankings:
            self.rankings = self.evaluate_rankings()

    def evaluate_rankings(self) -> Dict[str, List[float]]:
        """Accuracy of every agent on every domain"""
        return {
            name: [float(np.mean(a.predict(ds.features).predictions() == ds.labels)) for a in self.agents]
            for name, ds in self.domains.items()
        }

    def experts(self, domain: str) -> List[int]:
        """Top half of agents by accuracy on `domain` (ties keep agent order)"""
        scores = self.rankings[domain]
        order = sorted(range(len(scores)), key=lambda i: -scores[i])
        return order[:len(scores) // 2]


def consensus_confidence(expert_confs: np.ndarray, expert_accs: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Accuracy-weighted mean of expert confidences

    Returns:
        (consensus [n], weights [E]); weights are softmax(accuracies)
    """
    confs = np.atleast_2d(np.asarray(expert_confs, dtype=np.float64))
    accs = np.asarray(expert_accs, dtype=np.float64).reshape(-1)
    if accs.size == 0 or confs.shape[0] != accs.size:
        raise ContractViolation(f"consensus: {confs.shape[0]} expert rows for {accs.size} accuracies")
    weights = softmax(accs)
    return weights @ confs, weights


def build_agent_pool(n_agents: int, config: TrainConfig, domains: Dict[str, Dataset], workers: int = 1) -> AgentPool:
    """Agent i trains on every domain except the (i mod K)-th, with seed config.seed + i"""
    if n_agents < 2 or not domains:
        raise ContractViolation("build_agent_pool: need >= 2 agents and at least one domain")
    names = sorted(domains)
    assignments: Dict[int, List[str]] = {}
    jobs = []
    for i in range(n_agents):
        held_out = names[i % len(names)] if len(names) > 1 else None
        assignments[i] = [name for name in names if name != held_out]
        parts = [domains[name] for name in assignments[i]]
        data = Dataset(np.vstack([p.features for p in parts]), np.concatenate([p.labels for p in parts]),
                       name=f"agent{i}")
        jobs.append((config.model_copy(update={"seed": config.seed + i}), data, i))
    agents = RunThrottler(workers).map(_train_member, jobs)
    return AgentPool(agents, dict(domains), assignments)


def multi_agent_round(pool: AgentPool, source: str, target: str, config: TrainConfig) -> AgentPool:
    """
    Experts on `source` share consensus confidence on `target`; novices are fine-tuned on it

    Novices start from their current weights and train with the distillation loss
    against (labels, consensus confidence) of the target domain.
    """
    if len(pool.agents) < 2:
        raise ContractViolation("multi_agent_round: need at least 2 agents")
    for name in (source, target):
        if name not in pool.domains or pool.domains[name].n == 0:
            raise ContractViolation(f"multi_agent_round: domain {name!r} missing or empty")
    experts = pool.experts(source)
    if not experts:
        raise ContractViolation(f"multi_agent_round: no experts on domain {source!r}")

    target_ds = pool.domains[target]
    expert_confs = np.stack([pool.agents[i].predict(target_ds.features).confidence_values() for i in experts])
    consensus, weights = consensus_confidence(expert_confs, [pool.rankings[source][i] for i in experts])
    logger.info(f"round {source}->{target}: experts {experts} weights {np.round(weights, 3).tolist()}")

    distill = config.model_copy(update={"method": TrainMethod.DISTILL})
    agents = list(pool.agents)
    for i, agent in enumerate(pool.agents):
        if i in experts:
            continue
        try:
            model, _ = train(distill.model_copy(update={"seed": config.seed + i}), target_ds,
                             init_params=agent.params, confidence_targets=consensus, member=i)
        except TrainingDivergence:
            logger.error(f"agent {i} diverged during fine-tuning on {target!r}")
            raise
        agents[i] = TrainedModel(model.params, agent.method, agent.seed)
    return AgentPool(agents, pool.domains, pool.domain_assignments)


# Aleatoric trend

@dataclass
class AleatoricReport:
    sizes: List[int]
    correlations: List[float]
    region_means: List[List[float]]
    injected_variance: List[float]

    def to_dict(self) -> Dict:
        return {"sizes": self.sizes, "correlations": self.correlations,
                "region_means": self.region_means, "injected_variance": self.injected_variance}


def aleatoric_convergence_check(noise: RegionalNoiseData, sizes: Sequence[int], config: TrainConfig,
                                workers: int = 1) -> AleatoricReport:
    """
    Spearman correlation between per-region mean c_ensemble and 1 - p(1-p) for nested sub-ensembles

    One ensemble of max(sizes) members is trained; each size uses its first members.
    Correlations are NaN when either side is constant across regions.
    """
    sizes = sorted(int(s) for s in sizes)
    if not sizes or sizes[0] < 2:
        raise ContractViolation(f"aleatoric_convergence_check: sizes must all be >= 2, got {sizes}")
    full = train_ensemble(sizes[-1], config, noise.dataset, workers=workers)
    regions = np.unique(noise.region_ids)
    clean_signal = 1.0 - noise.injected_variance[regions]

    correlations, region_means = [], []
    for m in sizes:
        sub = full.subset(m, noise.dataset)
        targets = disagreement_target(sub, noise.dataset.features)
        means = [float(targets[noise.region_ids == r].mean()) for r in regions]
        region_means.append(means)
        rho = float(spearmanr(means, clean_signal)[0]) if len(regions) > 1 else float("nan")
        correlations.append(rho)
        logger.info(f"M={m}: region c_ensemble {np.round(means, 3).tolist()} spearman={rho:.3f}")
    return AleatoricReport(sizes, correlations, region_means, noise.injected_variance[regions].tolist())


# Persistence

def save_ensemble(e: Ensemble, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    files = []
    for i, member in enumerate(e.members):
        files.append(cm.save_checkpoint(member.params, directory / f"member_{i}.json").name)
    result_store.write_json(directory / MANIFEST, {
        "seeds": e.seeds.tolist(), "sigma_max": e.sigma_max, "members": files,
        "method": e.members[0].method,
    })
    return directory


def load_ensemble(directory: Union[str, Path]) -> Ensemble:
    directory = Path(directory)
    manifest = result_store.read_json(directory / MANIFEST)
    members = [TrainedModel(cm.load_checkpoint(directory / name), manifest.get("method", "baseline"), int(seed))
               for name, seed in zip(manifest["members"], manifest["seeds"])]
    return Ensemble(members, np.asarray(manifest["seeds"]), float(manifest["sigma_max"]))
