"""Desk-scale encoders with per-attribute gate modules.

Two backbones share the same gating semantics:

  * ``transformer``: token embedding -> L blocks of multi-head attention and
    a tanh feed-forward, post-norm residuals, first-token pooling.
  * ``mlp``: mean of token embeddings -> 2 dense tanh layers.  This variant
    batches whole datasets as one 2-D tensor and is the fast test tier.

After each block every configured attribute contributes its module: a
ConGaterLayer steered by that attribute's omega, an always-on AdapterLayer,
or nothing.  When several gates are active on a block they are fused by
elementwise product on the block's output, not chained.

Trainable tensors are partitioned into Theta (embedding, blocks, task head),
one gate group per attribute, and one adversary-head group per attribute.
The partition is disjoint and exhaustive; training code updates groups, never
loose tensors.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from congater import tensor
from congater.gates import AdapterLayer, ConGaterLayer, check_omega, fuse_gates
from congater.tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

MODULE_KINDS = ("congater", "adapter", "none")
ENCODER_KINDS = ("transformer", "mlp")


@dataclass
class EncoderConfig:
    vocab_size: int = 512
    hidden: int = 48
    blocks: int = 2
    heads: int = 2
    ff_width: int = 192
    max_length: int = 32
    kind: str = "transformer"
    task_classes: int = 2
    attributes: dict[str, str] = field(default_factory=dict)
    attr_classes: dict[str, int] = field(default_factory=dict)
    bottleneck_factor: int = 8
    adversary_ensemble: int = 5
    dropout: float = 0.1
    layer_norm_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ValueError(f"encoder kind must be one of {ENCODER_KINDS}, got {self.kind!r}")
        if self.blocks < 1:
            raise ValueError(f"need at least one block, got {self.blocks}")
        if self.kind == "transformer" and self.hidden % self.heads != 0:
            raise ValueError(f"hidden={self.hidden} not divisible by heads={self.heads}")
        if self.vocab_size < 1 or self.max_length < 1 or self.task_classes < 2:
            raise ValueError("vocab_size, max_length and task_classes must be positive (classes >= 2)")
        if self.adversary_ensemble < 1:
            raise ValueError(f"ensemble size must be >= 1, got {self.adversary_ensemble}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        for name, module_kind in self.attributes.items():
            if module_kind not in MODULE_KINDS:
                raise ValueError(f"attribute {name!r} has unknown module kind {module_kind!r}")
            if module_kind != "none" and self.attr_classes.get(name, 0) < 2:
                raise ValueError(f"attribute {name!r} needs attr_classes >= 2")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "hidden": self.hidden, "blocks": self.blocks,
            "heads": self.heads, "ff_width": self.ff_width, "max_length": self.max_length,
            "kind": self.kind, "task_classes": self.task_classes,
            "attributes": dict(self.attributes), "attr_classes": dict(self.attr_classes),
            "bottleneck_factor": self.bottleneck_factor,
            "adversary_ensemble": self.adversary_ensemble, "dropout": self.dropout,
            "layer_norm_eps": self.layer_norm_eps, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        scale = 1.0 / math.sqrt(n_in)
        self.w = Tensor(rng.uniform(-scale, scale, (n_in, n_out)), requires_grad=True)
        self.b = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class TwoLayerHead:
    """Adversary/probe head: two dense layers with tanh between, softmax out."""

    def __init__(self, n_in: int, classes: int, rng: np.random.Generator):
        self.l1 = Linear(n_in, n_in, rng)
        self.l2 = Linear(n_in, classes, rng)

    def __call__(self, z: Tensor) -> Tensor:
        return tensor.softmax_rows(self.l2(tensor.tanh(self.l1(z))))

    def params(self) -> list[Tensor]:
        return [self.l1.w, self.l1.b, self.l2.w, self.l2.b]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return self.l1.named(f"{prefix}.l1") | self.l2.named(f"{prefix}.l2")


class TransformerBlock:
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        d = config.hidden
        self.head_dim = d // config.heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.q = [Linear(d, self.head_dim, rng) for _ in range(config.heads)]
        self.k = [Linear(d, self.head_dim, rng) for _ in range(config.heads)]
        self.v = [Linear(d, self.head_dim, rng) for _ in range(config.heads)]
        self.out = Linear(d, d, rng)
        self.ln1_gain = Tensor(np.ones(d), requires_grad=True)
        self.ln1_bias = Tensor(np.zeros(d), requires_grad=True)
        self.ff1 = Linear(d, config.ff_width, rng)
        self.ff2 = Linear(config.ff_width, d, rng)
        self.ln2_gain = Tensor(np.ones(d), requires_grad=True)
        self.ln2_bias = Tensor(np.zeros(d), requires_grad=True)
        self.eps = config.layer_norm_eps
        self.dropout = config.dropout

    def __call__(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        pieces = []
        for q, k, v in zip(self.q, self.k, self.v):
            scores = (q(x) @ tensor.transpose(k(x))) * self.scale
            pieces.append(tensor.softmax_rows(scores) @ v(x))
        attended = self.out(tensor.concat_cols(pieces))
        if training and rng is not None:
            attended = tensor.dropout(attended, self.dropout, rng, True)
        x = tensor.layer_norm(x + attended, self.ln1_gain, self.ln1_bias, self.eps)
        ff = self.ff2(tensor.tanh(self.ff1(x)))
        if training and rng is not None:
            ff = tensor.dropout(ff, self.dropout, rng, True)
        return tensor.layer_norm(x + ff, self.ln2_gain, self.ln2_bias, self.eps)

    def params(self) -> list[Tensor]:
        out: list[Tensor] = []
        for group in (self.q, self.k, self.v):
            for lin in group:
                out += [lin.w, lin.b]
        out += [self.out.w, self.out.b, self.ln1_gain, self.ln1_bias,
                self.ff1.w, self.ff1.b, self.ff2.w, self.ff2.b,
                self.ln2_gain, self.ln2_bias]
        return out

    def named(self, prefix: str) -> dict[str, Tensor]:
        names: dict[str, Tensor] = {}
        for tag, group in (("q", self.q), ("k", self.k), ("v", self.v)):
            for i, lin in enumerate(group):
                names |= lin.named(f"{prefix}.attn.{tag}{i}")
        names |= self.out.named(f"{prefix}.attn.out")
        names |= {f"{prefix}.ln1.gain": self.ln1_gain, f"{prefix}.ln1.bias": self.ln1_bias}
        names |= self.ff1.named(f"{prefix}.ff1") | self.ff2.named(f"{prefix}.ff2")
        names |= {f"{prefix}.ln2.gain": self.ln2_gain, f"{prefix}.ln2.bias": self.ln2_bias}
        return names


class DenseBlock:
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        self.lin = Linear(config.hidden, config.hidden, rng)
        self.dropout = config.dropout

    def __call__(self, x: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        out = tensor.tanh(self.lin(x))
        if training and rng is not None:
            out = tensor.dropout(out, self.dropout, rng, True)
        return out

    def params(self) -> list[Tensor]:
        return [self.lin.w, self.lin.b]

    def named(self, prefix: str) -> dict[str, Tensor]:
        return self.lin.named(f"{prefix}.dense")


class EncoderModel:
    def __init__(self, config: EncoderConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.embedding = Tensor(rng.normal(0.0, 1.0, (config.vocab_size, config.hidden)),
                                requires_grad=True)
        block_cls = TransformerBlock if config.kind == "transformer" else DenseBlock
        self.blocks = [block_cls(config, rng) for _ in range(config.blocks)]
        # Per attribute, one module per block (or none).
        self.modules: dict[str, list] = {}
        for name, module_kind in config.attributes.items():
            if module_kind == "congater":
                self.modules[name] = [ConGaterLayer(config.hidden, config.bottleneck_factor, rng)
                                      for _ in range(config.blocks)]
            elif module_kind == "adapter":
                self.modules[name] = [AdapterLayer(config.hidden, config.bottleneck_factor, rng)
                                      for _ in range(config.blocks)]
        self.task_head = Linear(config.hidden, config.task_classes, rng)
        self.adversaries: dict[str, list[TwoLayerHead]] = {
            name: [TwoLayerHead(config.hidden, config.attr_classes[name], rng)
                   for _ in range(config.adversary_ensemble)]
            for name, module_kind in config.attributes.items() if module_kind != "none"
        }
        self._warned_adapter_omega = False
        self.provenance: dict = {}

    # ------------------------------------------------------------------
    # forward

    def _check_omegas(self, omegas: dict[str, float] | None) -> dict[str, float]:
        omegas = dict(omegas or {})
        unknown = set(omegas) - set(self.config.attributes)
        if unknown:
            raise KeyError(f"unknown attribute(s) in omega map: {sorted(unknown)}")
        resolved = {}
        for name, module_kind in self.config.attributes.items():
            value = check_omega(omegas.get(name, 0.0))
            if module_kind == "adapter" and name in omegas and not self._warned_adapter_omega:
                log.warning("attribute %r uses an adapter module; omega is ignored", name)
                self._warned_adapter_omega = True
            resolved[name] = value
        return resolved

    def _apply_modules(self, h: Tensor, block_index: int, omegas: dict[str, float]) -> Tensor:
        gates = []
        for name, module_kind in self.config.attributes.items():
            if module_kind == "congater" and omegas[name] > 0.0:
                gates.append(self.modules[name][block_index].gate(h, omegas[name]))
        if gates:
            h = h * (gates[0] if len(gates) == 1 else fuse_gates(gates))
        for name, module_kind in self.config.attributes.items():
            if module_kind == "adapter":
                h = self.modules[name][block_index](h)
        return h

    def _check_tokens(self, ids: list[int]) -> None:
        if not ids:
            raise ShapeError("empty token sequence")
        if len(ids) > self.config.max_length:
            raise ShapeError(f"sequence length {len(ids)} exceeds max_length {self.config.max_length}")
        low, high = min(ids), max(ids)
        if low < 0 or high >= self.config.vocab_size:
            raise ShapeError(f"token id out of range 0..{self.config.vocab_size - 1}")

    def encode(self, tokens, omegas: dict[str, float] | None = None,
               training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Pooled embeddings: one sequence -> (d,), a batch -> (n, d)."""
        omegas = self._check_omegas(omegas)
        single = bool(tokens) and isinstance(tokens[0], int)
        batch = [tokens] if single else list(tokens)
        for ids in batch:
            self._check_tokens(list(ids))
        if self.config.kind == "transformer":
            rows = [self._encode_sequence(list(ids), omegas, training, rng) for ids in batch]
            z = rows[0] if len(rows) == 1 and single else tensor.concat_rows(rows)
        else:
            z = self._encode_mlp(batch, omegas, training, rng)
            if single:
                z = tensor.take_row(z, 0)
        return z

    def _encode_sequence(self, ids: list[int], omegas: dict[str, float],
                         training: bool, rng) -> Tensor:
        x = tensor.embedding_rows(self.embedding, ids)
        for i, block in enumerate(self.blocks):
            x = block(x, training, rng)
            x = self._apply_modules(x, i, omegas)
        return tensor.take_row(x, 0)

    def _encode_mlp(self, batch: list[list[int]], omegas: dict[str, float],
                    training: bool, rng) -> Tensor:
        lengths = {len(ids) for ids in batch}
        if len(lengths) == 1:
            x = tensor.embedding_mean(self.embedding, batch)
        else:
            # Group ragged sequences by length, then restore original order.
            by_len: dict[int, list[int]] = {}
            for pos, ids in enumerate(batch):
                by_len.setdefault(len(ids), []).append(pos)
            chunks, positions = [], []
            for length in sorted(by_len):
                rows = by_len[length]
                chunks.append(tensor.embedding_mean(self.embedding, [batch[r] for r in rows]))
                positions += rows
            stacked = tensor.concat_rows(chunks)
            order = np.argsort(positions)
            x = tensor.concat_rows([tensor.take_row(stacked, int(i)) for i in order])
        for i, block in enumerate(self.blocks):
            x = block(x, training, rng)
            x = self._apply_modules(x, i, omegas)
        return x

    def predict(self, z: Tensor) -> Tensor:
        """Task class probabilities for pooled embeddings."""
        return tensor.softmax_rows(self.task_head(z))

    def adversary_predict(self, z: Tensor, attribute: str) -> list[Tensor]:
        """Each ensemble member's probabilities, read through grad_reverse."""
        if attribute not in self.adversaries:
            raise KeyError(f"no adversary ensemble for attribute {attribute!r}")
        reversed_z = tensor.grad_reverse(z)
        return [head(reversed_z) for head in self.adversaries[attribute]]

    # ------------------------------------------------------------------
    # parameter partition

    def theta_params(self) -> list[Tensor]:
        out = [self.embedding]
        for block in self.blocks:
            out += block.params()
        out += [self.task_head.w, self.task_head.b]
        return out

    def gate_params(self, attribute: str) -> list[Tensor]:
        if attribute not in self.modules:
            raise KeyError(f"attribute {attribute!r} has no trainable module")
        out: list[Tensor] = []
        for layer in self.modules[attribute]:
            out += layer.params()
        return out

    def adversary_params(self, attribute: str) -> list[Tensor]:
        if attribute not in self.adversaries:
            raise KeyError(f"no adversary ensemble for attribute {attribute!r}")
        out: list[Tensor] = []
        for head in self.adversaries[attribute]:
            out += head.params()
        return out

    def all_params(self) -> list[Tensor]:
        out = self.theta_params()
        for name in self.modules:
            out += self.gate_params(name)
        for name in self.adversaries:
            out += self.adversary_params(name)
        return out

    def named_params(self) -> dict[str, Tensor]:
        names: dict[str, Tensor] = {"embedding": self.embedding}
        for i, block in enumerate(self.blocks):
            names |= block.named(f"blocks.{i}")
        for attr in sorted(self.modules):
            for i, layer in enumerate(self.modules[attr]):
                if isinstance(layer, ConGaterLayer):
                    names |= {f"gates.{attr}.{i}.w1": layer.w1, f"gates.{attr}.{i}.b1": layer.b1,
                              f"gates.{attr}.{i}.w2": layer.w2, f"gates.{attr}.{i}.b2": layer.b2}
                else:
                    names |= {f"gates.{attr}.{i}.down": layer.down,
                              f"gates.{attr}.{i}.down_bias": layer.down_bias,
                              f"gates.{attr}.{i}.up": layer.up,
                              f"gates.{attr}.{i}.up_bias": layer.up_bias}
        names |= self.task_head.named("task_head")
        for attr in sorted(self.adversaries):
            for m, head in enumerate(self.adversaries[attr]):
                names |= head.named(f"adversaries.{attr}.{m}")
        return names
