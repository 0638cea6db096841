"""Two-regime training: parallel task/attribute cycles, or post-hoc gating.

Both regimes alternate the same two kinds of passes over the data:

  * task pass: all omegas 0, update Theta (embedding, blocks, task head)
    with the task loss alone;
  * attribute pass: the target attribute's omega set to 1 (others 0),
    Theta frozen, update that attribute's gates and adversary heads with
    task + warmup * lambda * attribute loss.

Training only ever sees omega in {0, 1}; fractional omegas are an
inference-time knob.  "Frozen" means the optimizer never touches the group:
parameter values are bit-identical before and after the pass.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from congater import objectives, tensor
from congater.data import Example, RankingExample
from congater.encoder import EncoderModel
from congater.objectives import LossConfig
from congater.tensor import NumericsError, Tensor

logger = logging.getLogger(__name__)

REGIMES = ("parallel", "posthoc")
TASKS = ("classification", "ranking")


@dataclass
class TrainConfig:
    regime: str = "parallel"
    task: str = "classification"
    epochs_task: int = 5
    epochs_attr: int = 5
    batch_size: int = 64
    task_lr: float = 2e-5
    attr_lr: float = 1e-4
    weight_decay: float = 0.01
    cosine_decay: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.epochs_task < 1 or self.epochs_attr < 0:
            raise ValueError("epochs_task must be >= 1 and epochs_attr >= 0")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.task_lr <= 0 or self.attr_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")


@dataclass
class RunLog:
    regime: str
    task: str
    seed: int
    records: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, **record) -> None:
        self.records.append(record)

    def to_dict(self) -> dict:
        return {"regime": self.regime, "task": self.task, "seed": self.seed,
                "records": self.records, "provenance": self.provenance}


class AdamW:
    """Adam with decoupled weight decay; deterministic given call order.

    Parameters whose grad is None are skipped outright: a group that took no
    part in the loss neither moves nor decays.  An explicit zero gradient
    still decays, matching the decoupled update rule.
    """

    def __init__(self, params: list[Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        if lr <= 0:
            raise ValueError(f"lr must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr_scale: float = 1.0) -> None:
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        lr = self.lr * lr_scale
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise NumericsError(f"non-finite gradient for parameter {i} of shape {p.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.values = p.values - lr * (m_hat / (np.sqrt(v_hat) + self.eps)
                                        + self.weight_decay * p.values)


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _zero_all(model: EncoderModel) -> None:
    for p in model.all_params():
        p.grad = None


def _classification_losses(model: EncoderModel, examples: list, idx: np.ndarray,
                           omegas: dict[str, float], attribute: str | None,
                           training_rng) -> tuple[Tensor, Tensor | None]:
    tokens = [examples[i].tokens for i in idx]
    labels = [examples[i].task_label for i in idx]
    z = model.encode(tokens, omegas, training=True, rng=training_rng)
    task = objectives.cross_entropy(model.predict(z), labels)
    attr_loss = None
    if attribute is not None:
        attr_labels = [examples[i].attr_labels[attribute] for i in idx]
        attr_loss = objectives.adversarial_loss(z, attr_labels, model.adversaries[attribute])
    return task, attr_loss


def _ranking_losses(model: EncoderModel, examples: list, idx: np.ndarray,
                    omegas: dict[str, float], attribute: str | None,
                    training_rng) -> tuple[Tensor, Tensor | None]:
    task_terms: list[Tensor] = []
    attr_terms: list[Tensor] = []
    for i in idx:
        ex = examples[i]
        zq = model.encode(ex.query, omegas, training=True, rng=training_rng)
        zd = model.encode([c.tokens for c in ex.candidates], omegas,
                          training=True, rng=training_rng)
        scores = zd @ zq
        rels = np.array([c.rel for c in ex.candidates], dtype=np.float64)
        task_terms.append(objectives.listnet_loss(rels, scores))
        if attribute is not None:
            neutrality = np.array([c.neutrality for c in ex.candidates])
            attr_terms.append(objectives.fairness_regularizer(scores, neutrality))
    scale = 1.0 / len(task_terms)
    task = task_terms[0] * scale
    for term in task_terms[1:]:
        task = task + term * scale
    attr_loss = None
    if attr_terms:
        attr_loss = attr_terms[0] * scale
        for term in attr_terms[1:]:
            attr_loss = attr_loss + term * scale
    return task, attr_loss


def _check_attribute_labels(examples: list, attributes: list[str], task: str) -> None:
    if task != "classification":
        return
    for name in attributes:
        if any(name not in ex.attr_labels for ex in examples):
            raise ValueError(f"attribute {name!r} has no labels in the training data")


class _Trainer:
    def __init__(self, model: EncoderModel, examples: list, cfg: TrainConfig,
                 losses: LossConfig):
        self.model = model
        self.examples = list(examples)
        if not self.examples:
            raise ValueError("empty training set")
        self.cfg = cfg
        self.losses = losses
        self.attributes = [name for name, kind in model.config.attributes.items()
                           if kind != "none"]
        _check_attribute_labels(self.examples, self.attributes, cfg.task)
        self.loss_fn = (_classification_losses if cfg.task == "classification"
                        else _ranking_losses)
        self.shuffle_rng = np.random.default_rng(cfg.seed)
        self.dropout_rng = np.random.default_rng(cfg.seed + 1)
        self.opt_theta = AdamW(model.theta_params(), lr=cfg.task_lr,
                               weight_decay=cfg.weight_decay)
        self.opt_attr = {
            name: AdamW(model.gate_params(name)
                        + (model.adversary_params(name) if name in model.adversaries else []),
                        lr=cfg.attr_lr, weight_decay=cfg.weight_decay)
            for name in self.attributes
        }
        self.theta_step = 0
        self.theta_steps_total = max(1, cfg.epochs_task * math.ceil(len(self.examples)
                                                                    / cfg.batch_size))

    def _theta_lr_scale(self) -> float:
        if not self.cfg.cosine_decay:
            return 1.0
        progress = min(1.0, self.theta_step / self.theta_steps_total)
        return 0.5 * (1.0 + math.cos(math.pi * progress))

    def task_epoch(self, log: RunLog, epoch: int, phase: str) -> None:
        start = time.perf_counter()
        omegas = {name: 0.0 for name in self.attributes}
        total, count = 0.0, 0
        for idx in _batches(len(self.examples), self.cfg.batch_size, self.shuffle_rng):
            _zero_all(self.model)
            task, _ = self.loss_fn(self.model, self.examples, idx, omegas, None,
                                   self.dropout_rng)
            task.backward()
            self.opt_theta.step(self._theta_lr_scale())
            self.theta_step += 1
            total += task.item() * len(idx)
            count += len(idx)
        log.add(phase=phase, epoch=epoch, omega=omegas, task_loss=total / count,
                attr_losses={})
        logger.info("%s epoch %d: task_loss=%.6f (%.2fs)", phase, epoch,
                    total / count, time.perf_counter() - start)

    def attribute_epoch(self, log: RunLog, epoch: int, phase: str,
                        warmup_epoch: int) -> None:
        for name in self.attributes:
            start = time.perf_counter()
            omegas = {a: (1.0 if a == name else 0.0) for a in self.attributes}
            scale = objectives.warmup_scale(warmup_epoch, self.losses.warmup_epochs)
            lam = self.losses.weight(name)
            task_total, attr_total, count = 0.0, 0.0, 0
            for idx in _batches(len(self.examples), self.cfg.batch_size, self.shuffle_rng):
                _zero_all(self.model)
                task, attr_loss = self.loss_fn(self.model, self.examples, idx, omegas,
                                               name, self.dropout_rng)
                combined = task + attr_loss * (lam * scale)
                combined.backward()
                self.opt_attr[name].step()
                task_total += task.item() * len(idx)
                attr_total += attr_loss.item() * len(idx)
                count += len(idx)
            log.add(phase=phase, epoch=epoch, omega=omegas,
                    task_loss=task_total / count,
                    attr_losses={name: attr_total / count}, warmup=scale)
            logger.info("%s epoch %d [%s]: attr_loss=%.6f (%.2fs)", phase, epoch,
                        name, attr_total / count, time.perf_counter() - start)


def train_parallel(model: EncoderModel, examples: list, cfg: TrainConfig,
                   losses: LossConfig) -> RunLog:
    """One cycle per task epoch: a Theta pass, then gate passes, interleaved."""
    if cfg.regime != "parallel":
        raise ValueError(f"train_parallel got regime {cfg.regime!r}")
    trainer = _Trainer(model, examples, cfg, losses)
    log = RunLog(regime="parallel", task=cfg.task, seed=cfg.seed)
    for cycle in range(cfg.epochs_task):
        trainer.task_epoch(log, cycle, "task")
        if cycle < cfg.epochs_attr:
            trainer.attribute_epoch(log, cycle, "attribute", warmup_epoch=cycle)
    return log


def train_posthoc(model: EncoderModel, examples: list, cfg: TrainConfig,
                  losses: LossConfig) -> RunLog:
    """Phase 1 trains Theta alone; phase 2 freezes it and trains the gates."""
    if cfg.regime != "posthoc":
        raise ValueError(f"train_posthoc got regime {cfg.regime!r}")
    trainer = _Trainer(model, examples, cfg, losses)
    log = RunLog(regime="posthoc", task=cfg.task, seed=cfg.seed)
    for epoch in range(cfg.epochs_task):
        trainer.task_epoch(log, epoch, "phase1")
    for epoch in range(cfg.epochs_attr):
        trainer.attribute_epoch(log, epoch, "phase2", warmup_epoch=epoch)
    return log


def train(model: EncoderModel, examples: list, cfg: TrainConfig,
          losses: LossConfig) -> RunLog:
    if not examples:
        raise ValueError("cannot train on an empty example list")
    wanted = RankingExample if cfg.task == "ranking" else Example
    for i, ex in enumerate(examples):
        if not isinstance(ex, wanted):
            raise TypeError(f"{cfg.task} training expects {wanted.__name__}, "
                            f"example {i} is {type(ex).__name__}")
    if cfg.regime == "parallel":
        return train_parallel(model, examples, cfg, losses)
    return train_posthoc(model, examples, cfg, losses)
