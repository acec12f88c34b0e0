"""The table-filling extraction network.

A small token encoder produces contextual features; separate affine maps
derive subject-side and object-side token features; the table-filling step
scores every (subject token, object token) cell for every relation; the
feature-reasoning step pools the relation tables back into per-token
features, refines them with self- and cross-attention, and feeds them into
the next filling iteration.  The final tables are argmax-decoded into the
tag grids consumed by :mod:`tritable.tagging`.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from . import numcore as nc
from .numcore import AttentionParams, Parameter, Tensor
from .schema import Dataset, Sentence, Triple
from .tagging import NUM_LABELS, TagTable, decode_tables

UNK_ID = 0


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d: int = 32                    # feature width
    heads: int = 4                 # attention head count
    iterations: int = 3            # fill/reason rounds
    relations: int = 1
    labels: int = NUM_LABELS
    enc_layers: int = 1
    vocab: int = 64                # embedding rows, including the UNK row
    max_len: int = 64
    seed: int = 0
    ablate_reasoning: bool = False  # skip the reasoning step entirely
    single_head: bool = False       # reasoning attention runs with one head

    def __post_init__(self) -> None:
        if self.labels != NUM_LABELS:
            raise ModelError(f"label count is fixed at {NUM_LABELS}")
        if self.d % self.heads != 0:
            raise ModelError(f"width {self.d} not divisible by {self.heads} heads")
        if self.iterations < 1:
            raise ModelError("iterations must be >= 1")
        if min(self.d, self.relations, self.enc_layers + 1, self.vocab,
               self.max_len) < 1:
            raise ModelError("config dimensions must be positive")

    @property
    def reason_heads(self) -> int:
        return 1 if self.single_head else self.heads


class TokenVocab:
    """Surface-token vocabulary; id 0 is reserved for unknown tokens."""

    def __init__(self, tokens: Iterable[str]):
        self.tokens: tuple[str, ...] = tuple(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise ModelError("token vocabulary has duplicates")
        self._ids = {tok: i + 1 for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens) + 1

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self._ids.get(t, UNK_ID) for t in tokens], dtype=np.int64)

    @classmethod
    def from_sentences(cls, sentences: Iterable[Sentence]) -> "TokenVocab":
        seen: dict[str, None] = {}
        for s in sentences:
            for tok in s.tokens:
                seen.setdefault(tok, None)
        return cls(seen.keys())


def sinusoid_positions(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = np.exp(np.arange(0, d, 2, dtype=np.float64) * (-np.log(10000.0) / d))
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq[: d // 2])
    return pe


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


def init_params(config: ModelConfig) -> dict[str, Parameter]:
    """Seeded parameter construction; insertion order is the persistence order."""
    rng = np.random.default_rng(config.seed)
    d, labels = config.d, config.labels
    params: dict[str, Parameter] = {}

    def mat(name: str, fan_in: int, fan_out: int) -> None:
        params[name] = Parameter(name, _xavier(rng, fan_in, fan_out))

    def vec(name: str, size: int) -> None:
        params[name] = Parameter(name, np.zeros(size))

    def attention(prefix: str) -> None:
        for p in ("wq", "wk", "wv", "wo"):
            mat(f"{prefix}.{p}", d, d)
        for p in ("bq", "bk", "bv", "bo"):
            vec(f"{prefix}.{p}", d)

    # Unit-scale embeddings keep token identity from being drowned out by
    # the O(1) positional signal.
    params["tok_emb"] = Parameter(
        "tok_emb", rng.normal(0.0, 1.0, size=(config.vocab, d)))
    for i in range(config.enc_layers):
        attention(f"enc{i}.att")
        mat(f"enc{i}.ffn.w1", d, 2 * d)
        vec(f"enc{i}.ffn.b1", 2 * d)
        mat(f"enc{i}.ffn.w2", 2 * d, d)
        vec(f"enc{i}.ffn.b2", d)
    mat("subj.w", d, d)
    vec("subj.b", d)
    mat("obj.w", d, d)
    vec("obj.b", d)
    for r in range(config.relations):
        # Damped so the initial cell logits stay near uniform: the pairwise
        # feature products already carry variance O(d).
        params[f"table.w{r}"] = Parameter(
            f"table.w{r}", 0.1 * _xavier(rng, d, labels))
        vec(f"table.b{r}", labels)
    wide = config.relations * labels
    mat("pool_s.w", wide, d)
    vec("pool_s.b", d)
    mat("pool_o.w", wide, d)
    vec("pool_o.b", d)
    for stream in ("s", "o"):
        attention(f"reason_{stream}.self")
        attention(f"reason_{stream}.cross")
    mat("reason.ffn.w", d, d)
    vec("reason.ffn.b", d)
    return params


class Model:
    """Bundle of config, vocabularies, and trainable parameters.

    A frozen parameter set is safe to share across concurrent ``extract``
    calls; training mutates parameters and must own the model exclusively.
    """

    def __init__(self, config: ModelConfig, token_vocab: TokenVocab,
                 relation_names: Sequence[str],
                 params: dict[str, Parameter] | None = None):
        if len(relation_names) != config.relations:
            raise ModelError(
                f"{len(relation_names)} relation names for R={config.relations}")
        if token_vocab.size > config.vocab:
            raise ModelError(
                f"token vocabulary needs {token_vocab.size} rows, config has {config.vocab}")
        self.config = config
        self.token_vocab = token_vocab
        self.relation_names = tuple(relation_names)
        self.params = params if params is not None else init_params(config)
        self._positions = sinusoid_positions(config.max_len, config.d)
        self.call_counts = {"fill": 0, "reason": 0}

    @classmethod
    def build(cls, config: ModelConfig, dataset: Dataset) -> "Model":
        """Derive token and relation vocabularies from a corpus and size the
        embedding table accordingly."""
        token_vocab = TokenVocab.from_sentences(dataset.sentences)
        config = replace(config, vocab=token_vocab.size,
                         relations=len(dataset.vocab))
        return cls(config, token_vocab, dataset.vocab.names)

    # -- parameter access helpers ------------------------------------------

    def _att(self, prefix: str) -> AttentionParams:
        p = self.params
        return AttentionParams(
            wq=p[f"{prefix}.wq"], bq=p[f"{prefix}.bq"],
            wk=p[f"{prefix}.wk"], bk=p[f"{prefix}.bk"],
            wv=p[f"{prefix}.wv"], bv=p[f"{prefix}.bv"],
            wo=p[f"{prefix}.wo"], bo=p[f"{prefix}.bo"])

    def zero_grads(self) -> None:
        nc.zero_grads(self.params.values())

    # -- forward pieces ------------------------------------------------------

    def encode_tokens(self, tokens: Sequence[str]) -> Tensor:
        """Contextual token features [n, d]; unknown tokens map to the UNK row."""
        n = len(tokens)
        if n > self.config.max_len:
            raise ModelError(f"{n} tokens exceeds max length {self.config.max_len}")
        ids = self.token_vocab.encode(tokens)
        x = nc.add(nc.take_rows(self.params["tok_emb"], ids),
                   Tensor(self._positions[:n]))
        for i in range(self.config.enc_layers):
            att = nc.multi_head_attention(x, x, x, self.config.heads,
                                          self._att(f"enc{i}.att"))
            x = nc.add(att, x)
            p = self.params
            hidden = nc.relu(nc.linear(x, p[f"enc{i}.ffn.w1"], p[f"enc{i}.ffn.b1"]))
            x = nc.add(nc.linear(hidden, p[f"enc{i}.ffn.w2"], p[f"enc{i}.ffn.b2"]), x)
        return x

    def init_subject_object(self, enc: Tensor) -> tuple[Tensor, Tensor]:
        p = self.params
        return (nc.linear(enc, p["subj.w"], p["subj.b"]),
                nc.linear(enc, p["obj.w"], p["obj.b"]))

    def fill_tables(self, subj: Tensor, obj: Tensor) -> Tensor:
        """Score every token pair for every relation: [n, n, R * labels].

        Cell (i, j) of relation r is the affine image of
        ReLU(subj[i] * obj[j]) under that relation's projection; the
        relation tables live side by side along the last axis.
        """
        self.call_counts["fill"] += 1
        p = self.params
        cells = nc.relu(nc.pair_product(subj, obj))
        w_all = nc.concat([p[f"table.w{r}"] for r in range(self.config.relations)],
                          axis=1)
        b_all = nc.concat([p[f"table.b{r}"] for r in range(self.config.relations)],
                          axis=0)
        return nc.linear(cells, w_all, b_all)

    def reason_features(self, tables: Tensor, enc: Tensor,
                        subj: Tensor, obj: Tensor) -> tuple[Tensor, Tensor]:
        """Refresh subject/object features from the current tables.

        Each stream pools the unified table along the opposite axis, projects
        to width d, runs self-attention then cross-attention against the
        encoder output, applies the shared ReLU feed-forward, and adds the
        incoming stream features as a residual.
        """
        self.call_counts["reason"] += 1
        p = self.params
        heads = self.config.reason_heads
        pooled = {"s": nc.maxpool_axis(tables, axis=1),
                  "o": nc.maxpool_axis(tables, axis=0)}
        incoming = {"s": subj, "o": obj}
        out = {}
        for stream in ("s", "o"):
            feat = nc.linear(pooled[stream], p[f"pool_{stream}.w"],
                             p[f"pool_{stream}.b"])
            feat = nc.multi_head_attention(feat, feat, feat, heads,
                                           self._att(f"reason_{stream}.self"))
            feat = nc.multi_head_attention(feat, enc, enc, heads,
                                           self._att(f"reason_{stream}.cross"))
            feat = nc.relu(nc.linear(feat, p["reason.ffn.w"], p["reason.ffn.b"]))
            out[stream] = nc.add(feat, incoming[stream])
        return out["s"], out["o"]

    def forward(self, tokens: Sequence[str]) -> Tensor:
        """Final cell logits, shaped [n, n, relations, labels]."""
        self.call_counts = {"fill": 0, "reason": 0}
        cfg = self.config
        enc = self.encode_tokens(tokens)
        subj, obj = self.init_subject_object(enc)
        rounds = 1 if cfg.ablate_reasoning else cfg.iterations
        tables = self.fill_tables(subj, obj)
        for _ in range(rounds - 1):
            subj, obj = self.reason_features(tables, enc, subj, obj)
            tables = self.fill_tables(subj, obj)
        n = len(tokens)
        return nc.reshape(tables, (n, n, cfg.relations, cfg.labels))

    # -- prediction -----------------------------------------------------------

    def predict_tables(self, logits: Tensor) -> list[TagTable]:
        """Per-cell softmax then argmax; ties break toward the lowest label."""
        probs = np.exp(logits.data - logits.data.max(axis=-1, keepdims=True))
        probs /= probs.sum(axis=-1, keepdims=True)
        labels = probs.argmax(axis=-1)  # first maximum wins
        return [TagTable(r, labels[:, :, r])
                for r in range(self.config.relations)]

    def extract(self, sentence: Sentence) -> list[Triple]:
        logits = self.forward(sentence.tokens)
        return decode_tables(self.predict_tables(logits))

    # -- persistence ------------------------------------------------------------

    def save(self, path: str) -> None:
        """Write manifest.json plus one little-endian float64 file per parameter."""
        os.makedirs(os.path.join(path, "params"), exist_ok=True)
        manifest = {
            "config": asdict(self.config),
            "relations": list(self.relation_names),
            "token_vocab": list(self.token_vocab.tokens),
            "params": [{"name": p.name, "shape": list(p.data.shape)}
                       for p in self.params.values()],
        }
        with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for p in self.params.values():
            with open(os.path.join(path, "params", p.name + ".bin"), "wb") as fh:
                fh.write(p.data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str) -> "Model":
        with open(os.path.join(path, "manifest.json"), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        config = ModelConfig(**manifest["config"])
        params: dict[str, Parameter] = {}
        for entry in manifest["params"]:
            name, shape = entry["name"], tuple(entry["shape"])
            with open(os.path.join(path, "params", name + ".bin"), "rb") as fh:
                data = np.frombuffer(fh.read(), dtype="<f8").reshape(shape).copy()
            params[name] = Parameter(name, data)
        return cls(config, TokenVocab(manifest["token_vocab"]),
                   manifest["relations"], params)
