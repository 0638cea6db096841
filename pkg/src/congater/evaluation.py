"""Probing harness, fairness metrics, and the omega-sweep runner.

Probes are measurement devices: freshly seeded two-layer heads trained on
frozen embeddings.  They never touch encoder parameters, which tests audit
bit-exactly.  The sweep runner re-encodes the data at every grid point, so a
report row is exactly what a standalone evaluation at that omega would say.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from congater import objectives, tensor
from congater.encoder import EncoderModel, TwoLayerHead
from congater.tensor import Tensor
from congater.training import AdamW

log = logging.getLogger(__name__)

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(11))


def balanced_accuracy(preds, labels, n_classes: int | None = None) -> float:
    """Mean per-class recall over the classes present in the labels."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape or labels.size == 0:
        raise ValueError("preds and labels must be nonempty and equal length")
    classes = range(n_classes) if n_classes else sorted(set(labels.tolist()))
    recalls = []
    for cls in classes:
        mask = labels == cls
        if not mask.any():
            log.warning("balanced_accuracy: class %s has no instances; excluded", cls)
            continue
        recalls.append(float((preds[mask] == cls).mean()))
    if not recalls:
        raise ValueError("no class has any instances")
    return float(np.mean(recalls))


@dataclass
class GapReport:
    tpr: dict[tuple[int, int], float]
    gap: float


def gap_metric(preds, task_labels, group_labels) -> GapReport:
    """Root mean square of per-class TPR differences between two groups."""
    preds = np.asarray(preds)
    task_labels = np.asarray(task_labels)
    group_labels = np.asarray(group_labels)
    groups = sorted(set(group_labels.tolist()))
    if len(groups) != 2:
        raise ValueError(f"gap_metric needs exactly 2 groups, got {groups}")
    tpr: dict[tuple[int, int], float] = {}
    diffs = []
    for cls in sorted(set(task_labels.tolist())):
        rates = []
        for group in groups:
            mask = (task_labels == cls) & (group_labels == group)
            if not mask.any():
                log.warning("gap_metric: empty cell (class=%s, group=%s); class excluded",
                            cls, group)
                rates = []
                break
            rate = float((preds[mask] == cls).mean())
            tpr[(group, cls)] = rate
            rates.append(rate)
        if rates:
            diffs.append((rates[0] - rates[1]) ** 2)
    if not diffs:
        raise ValueError("every class had an empty (class, group) cell")
    return GapReport(tpr, math.sqrt(sum(diffs) / len(diffs)))


def uncertainty(probs) -> float:
    """Entropy of a distribution in natural log; 0 * log 0 = 0."""
    p = np.asarray(probs, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-6 or (p < 0).any():
        raise ValueError("uncertainty needs a probability distribution")
    nonzero = p[p > 0]
    return float(-(nonzero * np.log(nonzero)).sum())


def mrr_at_k(ranked_relevance: list[list[int]], k: int = 10) -> float:
    """Mean reciprocal rank of the first relevant document within the top k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not ranked_relevance:
        raise ValueError("no rankings given")
    total = 0.0
    for rels in ranked_relevance:
        for rank, rel in enumerate(rels[:k], start=1):
            if rel:
                total += 1.0 / rank
                break
    return total / len(ranked_relevance)


def fairr(neutralities: list[float], k: int) -> float:
    """Discounted neutrality sum over the top k positions."""
    return sum(n / math.log2(r + 1) for r, n in enumerate(neutralities[:k], start=1))


def nfairr_at_k(ranked_neutralities: list[list[float]],
                background_neutralities: list[float], k: int = 10) -> float:
    """Mean FaiRR normalized by the ideal reordering of the background top-k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not background_neutralities:
        raise ValueError("background set is empty")
    ideal = fairr(sorted(background_neutralities, reverse=True), k)
    if ideal == 0.0:
        raise ValueError("degenerate background: ideal FaiRR is zero")
    scores = [min(1.0, fairr(ns, k) / ideal) for ns in ranked_neutralities]
    if not scores:
        raise ValueError("no rankings given")
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# probing


@dataclass
class ProbeConfig:
    n_probes: int = 5
    epochs: int = 30
    lr: float = 1e-4
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.n_probes < 1 or self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("invalid probe configuration")


@dataclass
class ProbeReport:
    mean: float
    std: float
    scores: list[float]


def train_probes(train_embeddings: np.ndarray, train_labels,
                 eval_embeddings: np.ndarray, eval_labels,
                 cfg: ProbeConfig | None = None) -> ProbeReport:
    """Train independently seeded two-layer heads on frozen embeddings.

    The embeddings are plain arrays; nothing here can reach the encoder.
    Returns mean and std of balanced accuracy on the held-out pairs.
    """
    cfg = cfg or ProbeConfig()
    train_labels = np.asarray(train_labels, dtype=np.int64)
    eval_labels = np.asarray(eval_labels, dtype=np.int64)
    classes = int(max(train_labels.max(), eval_labels.max())) + 1
    if len(set(train_labels.tolist())) < 2:
        raise ValueError("probe training labels cover a single class")
    # One global scalar keeps probe optimization well-conditioned whatever
    # the embedding magnitude; relative geometry is left untouched.
    scale = max(float(train_embeddings.std()), 1e-8)
    train_embeddings = train_embeddings / scale
    eval_embeddings = eval_embeddings / scale
    dim = train_embeddings.shape[1]
    n = train_embeddings.shape[0]
    scores = []
    for member in range(cfg.n_probes):
        rng = np.random.default_rng(cfg.seed * 1000 + member)
        head = TwoLayerHead(dim, classes, rng)
        opt = AdamW(head.params(), lr=cfg.lr, weight_decay=0.0)
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                opt.zero_grad()
                probs = head(Tensor(train_embeddings[idx]))
                objectives.cross_entropy(probs, train_labels[idx]).backward()
                opt.step()
        preds = head(Tensor(eval_embeddings)).values.argmax(axis=1)
        scores.append(balanced_accuracy(preds, eval_labels))
    return ProbeReport(float(np.mean(scores)), float(np.std(scores)), scores)


# ---------------------------------------------------------------------------
# prediction flips


@dataclass
class FlipMatrix:
    grid: list[float]
    retention: list[float]
    retention_by_class: dict[int, list[float]]


def prediction_flips(model: EncoderModel, examples: list, attribute: str,
                     grid: list[float]) -> FlipMatrix:
    """Fraction of items keeping their omega=0 label as omega moves."""
    if 0.0 not in grid:
        raise ValueError("flip grid must include omega = 0")
    tokens = [ex.tokens for ex in examples]
    base = model.predict(model.encode(tokens, {attribute: 0.0})).values.argmax(axis=1)
    classes = sorted(set(base.tolist()))
    retention: list[float] = []
    by_class: dict[int, list[float]] = {cls: [] for cls in classes}
    for omega in grid:
        preds = model.predict(model.encode(tokens, {attribute: omega})).values.argmax(axis=1)
        kept = preds == base
        retention.append(float(kept.mean()))
        for cls in classes:
            mask = base == cls
            by_class[cls].append(float(kept[mask].mean()))
    return FlipMatrix(list(grid), retention, by_class)


# ---------------------------------------------------------------------------
# omega sweep


@dataclass
class EvalBundle:
    """Everything a sweep needs beyond the model itself."""

    kind: str                                   # classification | ranking
    probe_train: list = field(default_factory=list)
    eval_examples: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    background_neutralities: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("classification", "ranking"):
            raise ValueError(f"unknown bundle kind {self.kind!r}")


@dataclass
class SweepRow:
    omega: dict[str, float]
    task: float
    probes: dict[str, ProbeReport]
    uncertainty: float | None
    flip_retention: float | None
    mrr10: float | None
    nfairr10: float | None


@dataclass
class SweepReport:
    attributes: list[str]
    grid: list[float]
    rows: list[SweepRow]

    def _row_dict(self, row: SweepRow) -> dict:
        single = len(self.attributes) == 1
        omega = row.omega[self.attributes[0]] if single else row.omega
        if row.probes:
            if single and self.attributes[0] in row.probes:
                report = row.probes[self.attributes[0]]
                probe_mean, probe_std = report.mean, report.std
            else:
                probe_mean = {a: r.mean for a, r in row.probes.items()}
                probe_std = {a: r.std for a, r in row.probes.items()}
        else:
            probe_mean = probe_std = None
        return {"omega": omega, "task": row.task, "probe_mean": probe_mean,
                "probe_std": probe_std, "uncertainty": row.uncertainty,
                "flip_retention": row.flip_retention, "mrr10": row.mrr10,
                "nfairr10": row.nfairr10}

    def to_dict(self) -> dict:
        return {"attributes": self.attributes, "grid": list(self.grid),
                "rows": [self._row_dict(r) for r in self.rows]}

    def to_csv(self) -> str:
        out = io.StringIO()
        omega_cols = [f"omega_{a}" for a in self.attributes] if len(self.attributes) > 1 \
            else ["omega"]
        writer = csv.writer(out)
        writer.writerow(omega_cols + ["task", "probe_mean", "probe_std", "uncertainty",
                                      "flip_retention", "mrr10", "nfairr10"])
        for row in self.rows:
            rendered = self._row_dict(row)
            omegas = [row.omega[a] for a in self.attributes]
            cells = []
            for name in ("task", "probe_mean", "probe_std", "uncertainty",
                         "flip_retention", "mrr10", "nfairr10"):
                value = rendered[name]
                if isinstance(value, dict):
                    value = ";".join(f"{k}={v:.6f}" for k, v in sorted(value.items()))
                cells.append("" if value is None else value)
            writer.writerow(list(omegas) + cells)
        return out.getvalue()


def check_grid(grid) -> list[float]:
    values = sorted(dict.fromkeys(float(g) for g in grid))
    if not values or values[0] < 0.0 or values[-1] > 1.0:
        raise ValueError(f"omega grid must lie in [0, 1], got {grid}")
    if 0.0 not in values:
        raise ValueError("omega grid must contain 0")
    if len(values) > 1 and 1.0 not in values:
        # The single-point grid {0} is allowed as a base-model diagnostic.
        raise ValueError("omega grid must contain 1")
    return values


def _grid_points(attributes: list[str], grid: list[float]) -> list[dict[str, float]]:
    points = [{}]
    for attr in attributes:
        points = [p | {attr: g} for p in points for g in grid]
    return points


def omega_sweep(model: EncoderModel, bundle: EvalBundle, attributes: list[str],
                grid=DEFAULT_GRID, probe_cfg: ProbeConfig | None = None,
                k: int = 10) -> SweepReport:
    """Evaluate the model at every omega grid point.

    Classification rows carry task accuracy, per-attribute probe scores,
    mean uncertainty, and retention of the omega=0 labels; ranking rows
    carry MRR@k and NFaiRR@k.
    """
    grid = check_grid(grid)
    if not attributes:
        raise ValueError("omega_sweep needs at least one attribute")
    points = _grid_points(list(attributes), grid)
    rows = []
    base_preds = None
    for omegas in points:
        if bundle.kind == "classification":
            row = _classification_row(model, bundle, omegas, probe_cfg, base_preds)
            preds = row.pop("_preds")
            if base_preds is None and all(v == 0.0 for v in omegas.values()):
                base_preds = preds
            rows.append(SweepRow(**row))
        else:
            rows.append(SweepRow(**_ranking_row(model, bundle, omegas, k)))
    return SweepReport(list(attributes), grid, rows)


def _classification_row(model: EncoderModel, bundle: EvalBundle,
                        omegas: dict[str, float], probe_cfg: ProbeConfig | None,
                        base_preds: np.ndarray | None) -> dict:
    eval_tokens = [ex.tokens for ex in bundle.eval_examples]
    eval_task = np.array([ex.task_label for ex in bundle.eval_examples])
    z_eval = model.encode(eval_tokens, omegas).values
    probs = model.predict(Tensor(z_eval)).values
    preds = probs.argmax(axis=1)
    task = float((preds == eval_task).mean())
    entropies = [uncertainty(p) for p in probs]
    z_train = model.encode([ex.tokens for ex in bundle.probe_train], omegas).values
    probes = {}
    for attr in model.config.attributes:
        if model.config.attributes[attr] == "none":
            continue
        train_y = [ex.attr_labels[attr] for ex in bundle.probe_train]
        eval_y = [ex.attr_labels[attr] for ex in bundle.eval_examples]
        probes[attr] = train_probes(z_train, train_y, z_eval, eval_y, probe_cfg)
    retention = None if base_preds is None else float((preds == base_preds).mean())
    if base_preds is None:
        retention = 1.0
    return {"omega": dict(omegas), "task": task, "probes": probes,
            "uncertainty": float(np.mean(entropies)), "flip_retention": retention,
            "mrr10": None, "nfairr10": None, "_preds": preds}


def rank_candidates(model: EncoderModel, query: list[int],
                    candidate_tokens: list[list[int]],
                    omegas: dict[str, float]) -> tuple[np.ndarray, np.ndarray]:
    """Scores and the descending-score order for one query."""
    zq = model.encode(query, omegas).values
    zd = model.encode(candidate_tokens, omegas).values
    scores = zd @ zq
    order = np.argsort(-scores, kind="stable")
    return scores, order


def _ranking_row(model: EncoderModel, bundle: EvalBundle,
                 omegas: dict[str, float], k: int) -> dict:
    ranked_rels = []
    ranked_neutralities = []
    for ex in bundle.queries:
        _, order = rank_candidates(model, ex.query, [c.tokens for c in ex.candidates],
                                   omegas)
        ranked_rels.append([ex.candidates[i].rel for i in order])
        ranked_neutralities.append([ex.candidates[i].neutrality for i in order])
    return {"omega": dict(omegas),
            "task": mrr_at_k(ranked_rels, k),
            "probes": {}, "uncertainty": None, "flip_retention": None,
            "mrr10": mrr_at_k(ranked_rels, k),
            "nfairr10": nfairr_at_k(ranked_neutralities,
                                    bundle.background_neutralities, k)}
