"""Training objectives.

Classification runs combine a task cross-entropy with gradient-reversed
adversary heads; ranking runs combine a list-wise softmax cross-entropy
(KL to the label distribution) with a neutrality-matching regularizer.
The total is always  task + sum_i warmup * lambda_i * attr_i.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from congater import tensor
from congater.tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def _softmax(values: np.ndarray) -> np.ndarray:
    shifted = values - values.max()
    ex = np.exp(shifted)
    return ex / ex.sum()


def cross_entropy(probs: Tensor, labels) -> Tensor:
    """Mean negative log probability of the true labels.

    ``probs`` rows must already be distributions; a zero probability at a
    label is clamped at 1e-12 and logged rather than poisoning the loss.
    """
    if probs.ndim != 2:
        raise ShapeError(f"cross_entropy needs (n, classes) probabilities, got {probs.shape}")
    n, classes = probs.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ShapeError(f"labels shape {y.shape} does not match {n} rows")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"label out of range 0..{classes - 1}")
    sums = probs.values.sum(axis=1)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValueError("cross_entropy rows must sum to 1")
    clamped = int((probs.values[np.arange(n), y] < PROB_FLOOR).sum())
    if clamped:
        log.warning("cross_entropy clamped %d zero label probabilities", clamped)
    onehot = np.zeros((n, classes))
    onehot[np.arange(n), y] = 1.0
    picked = tensor.tsum(tensor.log(tensor.clamp_min(probs, PROB_FLOOR)) * Tensor(onehot))
    return picked * (-1.0 / n)


def adversarial_loss(z: Tensor, labels, heads) -> Tensor:
    """Mean attribute cross-entropy over an ensemble, through gradient reversal.

    The reversal makes the encoder *hurt* the attribute heads while the heads
    themselves still learn to read z; callers route the parameter updates.
    """
    if not heads:
        raise ValueError("adversarial_loss needs a non-empty ensemble")
    reversed_z = tensor.grad_reverse(z)
    total = None
    for head in heads:
        term = cross_entropy(head(reversed_z), labels)
        total = term if total is None else total + term
    return total * (1.0 / len(heads))


def listnet_loss(relevance, scores: Tensor) -> Tensor:
    """List-wise task loss: KL(softmax(relevance) || softmax(scores)).

    Natural log throughout.  ``relevance`` is a constant; gradients flow only
    through ``scores``.
    """
    rel = relevance.values if isinstance(relevance, Tensor) else np.asarray(relevance, dtype=np.float64)
    if scores.ndim != 1 or rel.shape != scores.shape:
        raise ShapeError(f"listnet_loss needs matching 1-D lists, got {rel.shape} and {scores.shape}")
    if scores.shape[0] < 2:
        raise ShapeError("listnet_loss needs at least two candidates")
    p = _softmax(rel)
    q = tensor.softmax_rows(scores)
    log_q = tensor.log(tensor.clamp_min(q, PROB_FLOOR))
    return tensor.tsum(Tensor(p) * (Tensor(np.log(p)) - log_q))


def fairness_regularizer(scores: Tensor, neutrality) -> Tensor:
    """Neutrality-matching loss: KL(softmax(scores) || softmax(neutrality)).

    Pushes the score distribution over a candidate list toward the list's
    neutrality profile.  Natural log; neutrality is a constant target.
    """
    target = neutrality.values if isinstance(neutrality, Tensor) else np.asarray(neutrality, dtype=np.float64)
    if scores.ndim != 1 or target.shape != scores.shape:
        raise ShapeError(f"fairness_regularizer needs matching 1-D lists, got {scores.shape} and {target.shape}")
    if scores.shape[0] < 2:
        raise ShapeError("fairness_regularizer needs at least two candidates")
    if target.min() < 0.0:
        raise ValueError("neutrality scores must be nonnegative")
    if target.max() == 0.0:
        raise ValueError("neutrality scores are all zero; the target distribution is undefined")
    q = _softmax(target)
    p = tensor.softmax_rows(scores)
    log_p = tensor.log(tensor.clamp_min(p, PROB_FLOOR))
    return tensor.tsum(p * (log_p - Tensor(np.log(q))))


def warmup_scale(epoch: int, warmup_epochs: int) -> float:
    """Linear ramp for the attribute weight: min(1, (epoch + 1) / warmup)."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    if warmup_epochs <= 0:
        return 1.0
    return min(1.0, (epoch + 1) / warmup_epochs)


@dataclass
class LossConfig:
    """Weights for combining task and attribute losses."""

    lambdas: dict[str, float] = field(default_factory=dict)
    warmup_epochs: int = 3

    def __post_init__(self):
        for name, lam in self.lambdas.items():
            if not (math.isfinite(lam) and lam >= 0.0):
                raise ValueError(f"lambda for {name!r} must be finite and nonnegative, got {lam}")
        if self.warmup_epochs < 0:
            raise ValueError(f"warmup_epochs must be nonnegative, got {self.warmup_epochs}")

    def weight(self, attribute: str) -> float:
        if attribute not in self.lambdas:
            raise KeyError(f"no lambda configured for attribute {attribute!r}")
        return self.lambdas[attribute]


def total_loss(task_loss: Tensor, attr_losses: dict[str, Tensor],
               config: LossConfig, epoch: int) -> Tensor:
    """task + sum over attributes of warmup * lambda * attribute loss."""
    scale = warmup_scale(epoch, config.warmup_epochs)
    total = task_loss
    for name in sorted(attr_losses):
        total = total + attr_losses[name] * (config.weight(name) * scale)
    return total
