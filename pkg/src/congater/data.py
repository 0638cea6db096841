"""Synthetic datasets with planted, tunable attribute-task correlation.

The generated vocabulary is partitioned into disjoint blocks:

  id 0                  reserved unknown token
  topic blocks          one per task class; topic tokens carry the task signal
  marker blocks         one per (attribute, class); markers carry the
                        attribute signal and double as the neutrality
                        word lists
  filler                everything else, uninformative

Classification: each example draws its markers from the block of its
attribute class with probability rho_corr, otherwise from a uniformly random
class of that attribute.  At rho_corr = 0 markers carry no information; at
rho_corr = 1 a marker-count rule recovers the attribute exactly.

Retrieval: relevance follows query-document topic overlap, and relevant
documents are more likely to carry markers (probability rho_corr vs
1 - rho_corr for irrelevant ones).  That plants the tension the fairness
regularizer trades against: demoting marked documents costs MRR and buys
neutrality.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNKNOWN_ID = 0
SPLIT_WEIGHTS = (63, 12, 15)


@dataclass
class Example:
    tokens: list[int]
    task_label: int
    attr_labels: dict[str, int]


@dataclass
class Candidate:
    tokens: list[int]
    rel: int
    neutrality: float


@dataclass
class RankingExample:
    query: list[int]
    candidates: list[Candidate]

    def __post_init__(self):
        if len(self.candidates) < 2:
            raise ValueError("a ranking example needs at least 2 candidates")
        if not any(c.rel == 1 for c in self.candidates):
            raise ValueError("a ranking example needs at least one relevant candidate")
        for c in self.candidates:
            if not 0.0 <= c.neutrality <= 1.0:
                raise ValueError(f"neutrality {c.neutrality} outside [0, 1]")


@dataclass
class SynthConfig:
    n_examples: int = 10000
    vocab_size: int = 512
    seq_length: int = 32
    task_classes: int = 2
    attributes: dict[str, int] = field(default_factory=lambda: {"gender": 2})
    rho_corr: float = 0.9
    topic_share: float = 0.5
    marker_share: float = 0.125
    markers_per_example: int = 4
    topic_density: float = 0.65
    n_queries: int = 300
    candidates_per_query: int = 10
    background_docs: int = 400
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho_corr <= 1.0:
            raise ValueError(f"rho_corr must be in [0, 1], got {self.rho_corr}")
        if self.n_examples < 1 or self.task_classes < 2 or self.seq_length < 2:
            raise ValueError("n_examples, task_classes and seq_length out of range")
        if not self.attributes:
            raise ValueError("at least one attribute is required")
        total_markers = self.markers_per_example * len(self.attributes)
        if total_markers >= self.seq_length:
            raise ValueError("markers_per_example leaves no room for topic tokens")


@dataclass
class VocabLayout:
    vocab_size: int
    topic_blocks: list[list[int]]
    marker_blocks: dict[str, list[list[int]]]
    filler: list[int]

    def all_blocks(self) -> list[list[int]]:
        """Every block in layout order; together with id 0 they tile the vocab."""
        out = list(self.topic_blocks)
        for blocks in self.marker_blocks.values():
            out.extend(blocks)
        out.append(self.filler)
        return out


def layout(cfg: SynthConfig) -> VocabLayout:
    """Partition the vocabulary into topic, marker and filler blocks."""
    marker_classes = sum(cfg.attributes.values())
    topic_total = int(cfg.vocab_size * cfg.topic_share)
    marker_total = int(cfg.vocab_size * cfg.marker_share)
    topic_size = topic_total // cfg.task_classes
    marker_size = marker_total // marker_classes
    needed = 1 + topic_size * cfg.task_classes + marker_size * marker_classes
    if topic_size < 1 or marker_size < 1 or needed >= cfg.vocab_size:
        raise ValueError(f"vocab_size {cfg.vocab_size} too small for "
                         f"{cfg.task_classes} topics and {marker_classes} marker classes")
    next_id = 1
    topic_blocks = []
    for _ in range(cfg.task_classes):
        topic_blocks.append(list(range(next_id, next_id + topic_size)))
        next_id += topic_size
    marker_blocks: dict[str, list[list[int]]] = {}
    for name in cfg.attributes:
        blocks = []
        for _ in range(cfg.attributes[name]):
            blocks.append(list(range(next_id, next_id + marker_size)))
            next_id += marker_size
        marker_blocks[name] = blocks
    filler = list(range(next_id, cfg.vocab_size))
    return VocabLayout(cfg.vocab_size, topic_blocks, marker_blocks, filler)


def wordlists(cfg: SynthConfig) -> dict[str, set[int]]:
    """Marker blocks as word lists, keyed '<attribute>/<class>'."""
    vocab = layout(cfg)
    return {f"{name}/{cls}": set(block)
            for name, blocks in vocab.marker_blocks.items()
            for cls, block in enumerate(blocks)}


def doc_neutrality(tokens: list[int], lists: dict[str, set[int]]) -> float:
    """max(0, 1 - wordlist hits / document length)."""
    if not tokens:
        raise ValueError("empty document has no neutrality")
    flagged = set().union(*lists.values()) if lists else set()
    hits = sum(1 for t in tokens if t in flagged)
    return max(0.0, 1.0 - hits / len(tokens))


def split_counts(n: int) -> tuple[int, int, int]:
    """63:12:15 train/val/test."""
    total = sum(SPLIT_WEIGHTS)
    train = round(n * SPLIT_WEIGHTS[0] / total)
    val = round(n * SPLIT_WEIGHTS[1] / total)
    return train, val, n - train - val


def _make_example(cfg: SynthConfig, vocab: VocabLayout,
                  rng: np.random.Generator) -> Example:
    task_label = int(rng.integers(cfg.task_classes))
    attr_labels = {name: int(rng.integers(classes))
                   for name, classes in cfg.attributes.items()}
    tokens: list[int] = []
    for name, classes in cfg.attributes.items():
        for _ in range(cfg.markers_per_example):
            if rng.random() < cfg.rho_corr:
                cls = attr_labels[name]
            else:
                cls = int(rng.integers(classes))
            block = vocab.marker_blocks[name][cls]
            tokens.append(int(block[rng.integers(len(block))]))
    while len(tokens) < cfg.seq_length:
        if rng.random() < cfg.topic_density:
            block = vocab.topic_blocks[task_label]
        else:
            block = vocab.filler
        tokens.append(int(block[rng.integers(len(block))]))
    order = rng.permutation(len(tokens))
    return Example([tokens[i] for i in order], task_label, attr_labels)


def gen_classification(cfg: SynthConfig) -> tuple[list[Example], list[Example], list[Example]]:
    """Seed-deterministic train/val/test Example sets."""
    vocab = layout(cfg)
    rng = np.random.default_rng(cfg.seed)
    examples = [_make_example(cfg, vocab, rng) for _ in range(cfg.n_examples)]
    n_train, n_val, _ = split_counts(cfg.n_examples)
    return (examples[:n_train], examples[n_train:n_train + n_val],
            examples[n_train + n_val:])


def _make_document(cfg: SynthConfig, vocab: VocabLayout, rng: np.random.Generator,
                   topic: int, marked: bool, lists: dict[str, set[int]]) -> tuple[list[int], float]:
    tokens: list[int] = []
    if marked:
        name = list(cfg.attributes)[int(rng.integers(len(cfg.attributes)))]
        blocks = vocab.marker_blocks[name]
        block = blocks[int(rng.integers(len(blocks)))]
        tokens += [int(block[rng.integers(len(block))])
                   for _ in range(cfg.markers_per_example)]
    while len(tokens) < cfg.seq_length:
        if rng.random() < cfg.topic_density:
            block = vocab.topic_blocks[topic]
        else:
            block = vocab.filler
        tokens.append(int(block[rng.integers(len(block))]))
    order = rng.permutation(len(tokens))
    tokens = [tokens[i] for i in order]
    return tokens, doc_neutrality(tokens, lists)


def gen_retrieval(cfg: SynthConfig) -> tuple[list[RankingExample], list[RankingExample],
                                             list[RankingExample], list[list[int]]]:
    """Seed-deterministic train/val/test RankingExample sets + background docs."""
    vocab = layout(cfg)
    lists = wordlists(cfg)
    rng = np.random.default_rng(cfg.seed)
    query_len = max(4, cfg.seq_length // 4)
    queries: list[RankingExample] = []
    for _ in range(cfg.n_queries):
        topic = int(rng.integers(cfg.task_classes))
        block = vocab.topic_blocks[topic]
        query = [int(block[rng.integers(len(block))]) for _ in range(query_len)]
        n_rel = int(rng.integers(1, min(4, cfg.candidates_per_query)))
        candidates: list[Candidate] = []
        for j in range(cfg.candidates_per_query):
            rel = 1 if j < n_rel else 0
            doc_topic = topic if rel else int((topic + 1 + rng.integers(cfg.task_classes - 1))
                                              % cfg.task_classes)
            threshold = cfg.rho_corr if rel else 1.0 - cfg.rho_corr
            marked = bool(rng.random() < threshold)
            tokens, neutrality = _make_document(cfg, vocab, rng, doc_topic, marked, lists)
            candidates.append(Candidate(tokens, rel, neutrality))
        order = rng.permutation(len(candidates))
        queries.append(RankingExample(query, [candidates[i] for i in order]))
    background: list[list[int]] = []
    marked_rate = 0.5
    for _ in range(cfg.background_docs):
        topic = int(rng.integers(cfg.task_classes))
        marked = bool(rng.random() < marked_rate)
        tokens, _ = _make_document(cfg, vocab, rng, topic, marked, lists)
        background.append(tokens)
    n_train, n_val, _ = split_counts(cfg.n_queries)
    return (queries[:n_train], queries[n_train:n_train + n_val],
            queries[n_train + n_val:], background)


def balance_upsample(examples: list[Example], attribute: str) -> list[Example]:
    """Equalize attribute class counts within each task label by repetition.

    Only ever applied to training splits; validation and test stay as drawn.
    """
    by_cell: dict[tuple[int, int], list[Example]] = {}
    task_labels = sorted({ex.task_label for ex in examples})
    attr_values = sorted({ex.attr_labels[attribute] for ex in examples})
    for ex in examples:
        by_cell.setdefault((ex.task_label, ex.attr_labels[attribute]), []).append(ex)
    for task_label in task_labels:
        for value in attr_values:
            if not by_cell.get((task_label, value)):
                raise ValueError(f"empty cell (task={task_label}, {attribute}={value}); "
                                 "cannot upsample")
    out = list(examples)
    for task_label in task_labels:
        target = max(len(by_cell[(task_label, value)]) for value in attr_values)
        for value in attr_values:
            cell = by_cell[(task_label, value)]
            deficit = target - len(cell)
            for i in range(deficit):
                out.append(cell[i % len(cell)])
    return out


# ---------------------------------------------------------------------------
# serialization


def save_jsonl(path: str | Path, dataset: list) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for item in dataset:
            if isinstance(item, Example):
                fh.write(json.dumps({"tokens": item.tokens, "task_label": item.task_label,
                                     "attrs": item.attr_labels}) + "\n")
            elif isinstance(item, RankingExample):
                fh.write(json.dumps({"query": item.query,
                                     "candidates": [{"tokens": c.tokens, "rel": c.rel}
                                                    for c in item.candidates]}) + "\n")
            else:
                raise TypeError(f"cannot serialize {type(item).__name__}")


def save_background(path: str | Path, docs: list[list[int]]) -> None:
    with Path(path).open("w") as fh:
        for tokens in docs:
            fh.write(json.dumps({"tokens": tokens}) + "\n")


def load_background(path: str | Path) -> list[list[int]]:
    docs = []
    for line_no, obj in _read_lines(path):
        tokens = _check_tokens(obj.get("tokens"), line_no)
        docs.append(tokens)
    return docs


def _read_lines(path: str | Path):
    with Path(path).open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{line_no}: not valid JSON: {err}") from None
            if not isinstance(obj, dict):
                raise ValueError(f"{path}:{line_no}: expected a JSON object")
            yield line_no, obj


def _check_tokens(tokens, where: str, field_name: str = "tokens") -> list[int]:
    if not isinstance(tokens, list) or not tokens \
            or not all(isinstance(t, int) and t >= 0 for t in tokens):
        raise ValueError(f"{where}: {field_name!r} must be a nonempty "
                         "list of nonnegative ints")
    return tokens


def load_jsonl(path: str | Path, schema: str,
               lists: dict[str, set[int]] | None = None) -> list:
    """Load a dataset; schema is 'classification' or 'ranking'.

    Ranking neutrality is computed at load time from the word lists.
    Malformed lines are reported by number.
    """
    if schema == "classification":
        out_cls: list[Example] = []
        for line_no, obj in _read_lines(path):
            where = f"{path}:{line_no}"
            tokens = _check_tokens(obj.get("tokens"), where)
            if not isinstance(obj.get("task_label"), int):
                raise ValueError(f"{where}: missing or non-int 'task_label'")
            attrs = obj.get("attrs")
            if not isinstance(attrs, dict) or \
                    not all(isinstance(v, int) for v in attrs.values()):
                raise ValueError(f"{where}: 'attrs' must map names to ints")
            out_cls.append(Example(tokens, obj["task_label"], dict(attrs)))
        return out_cls
    if schema == "ranking":
        if lists is None:
            raise ValueError("ranking schema needs word lists for neutrality")
        out_rank: list[RankingExample] = []
        for line_no, obj in _read_lines(path):
            where = f"{path}:{line_no}"
            query = _check_tokens(obj.get("query"), where, "query")
            raw = obj.get("candidates")
            if not isinstance(raw, list) or len(raw) < 2:
                raise ValueError(f"{where}: need at least 2 candidates")
            candidates = []
            for c in raw:
                if not isinstance(c, dict) or c.get("rel") not in (0, 1):
                    raise ValueError(f"{where}: candidate 'rel' must be 0 or 1")
                tokens = _check_tokens(c.get("tokens"), where)
                candidates.append(Candidate(tokens, c["rel"],
                                            doc_neutrality(tokens, lists)))
            try:
                out_rank.append(RankingExample(query, candidates))
            except ValueError as err:
                raise ValueError(f"{where}: {err}") from None
        return out_rank
    raise ValueError(f"unknown schema {schema!r}")


def save_wordlists(directory: str | Path, lists: dict[str, set[int]]) -> None:
    """One file per '<attribute>/<class>' key, one token id per line."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for key, ids in lists.items():
        name = key.replace("/", ".") + ".txt"
        (directory / name).write_text("".join(f"{t}\n" for t in sorted(ids)))


def load_wordlists(directory: str | Path) -> dict[str, set[int]]:
    directory = Path(directory)
    lists: dict[str, set[int]] = {}
    for file in sorted(directory.glob("*.txt")):
        key = file.stem.replace(".", "/", 1)
        ids = set()
        for line_no, line in enumerate(file.read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ids.add(int(line))
            except ValueError:
                raise ValueError(f"{file}:{line_no}: not a token id: {line!r}") from None
        lists[key] = ids
    return lists


def tokenize(text: str, vocab_size: int) -> list[int]:
    """Whitespace split over the closed id vocabulary; unknown words map to 0."""
    out = []
    for piece in text.split():
        try:
            value = int(piece)
        except ValueError:
            value = UNKNOWN_ID
        out.append(value if 0 <= value < vocab_size else UNKNOWN_ID)
    return out
