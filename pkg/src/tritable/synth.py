"""Seeded synthetic corpus generator with known triples and controllable
overlap patterns.

Sentences are built from chains.  A plain chain lays out a subject entity
followed by (trigger token, object entity) pairs, yielding one triple per
pair that shares the chain's subject; an entity-pair chain puts two trigger
tokens between one subject and one object, yielding two relations over the
same pair.  Trigger tokens are relation-specific and entity tokens are
disjoint from filler tokens, so a small encoder can learn the task.

Every emitted sentence is verified roundtrip-safe for the tagging codec;
unsafe draws are rejected and resampled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import OverlapPattern, overlap_category
from .schema import Dataset, Entity, RelationVocab, Sentence, Triple
from .tagging import is_roundtrip_safe

_CONT_TOKENS = 4  # continuation-token pool for multi-token entities


class GenerationError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    sentences: int
    relations: int
    seed: int = 0
    min_len: int = 3
    max_len: int = 30
    vocab_size: int = 80
    triple_weights: tuple[float, ...] = (0.45, 0.30, 0.15, 0.07, 0.03)
    pattern_weights: tuple[float, ...] = (0.60, 0.25, 0.15)  # Normal, SEO, EPO
    entity_len_weights: tuple[float, ...] = (0.60, 0.25, 0.15)  # lengths 1..3
    repeat_relations: bool = True   # allow one relation twice in a sentence
    correlated: bool = False        # paired relations co-occur on shared subjects
    max_rejects: int = 500

    def __post_init__(self) -> None:
        if self.sentences < 0 or self.relations < 1:
            raise GenerationError("need a non-negative count and >= 1 relation")
        if not (1 <= self.min_len <= self.max_len):
            raise GenerationError("bad length range")
        for w in (self.triple_weights, self.pattern_weights, self.entity_len_weights):
            if min(w) < 0 or sum(w) <= 0:
                raise GenerationError("weights must be non-negative, not all zero")
        if len(self.pattern_weights) != 3 or len(self.entity_len_weights) != 3:
            raise GenerationError("pattern and entity-length mixes take 3 weights")
        if self.correlated and self.relations < 2:
            raise GenerationError("correlated corpora need at least 2 relations")
        if self.vocab_size < self.relations + _CONT_TOKENS + 24:
            raise GenerationError(
                f"vocab size {self.vocab_size} too small for {self.relations} relations")


class _Pools:
    def __init__(self, cfg: SynthConfig):
        self.triggers = [f"t{r}" for r in range(cfg.relations)]
        self.cont = [f"c{i}" for i in range(_CONT_TOKENS)]
        free = cfg.vocab_size - cfg.relations - _CONT_TOKENS
        n_entity = max(16, free * 2 // 3)
        self.entities = [f"e{i}" for i in range(n_entity)]
        self.fillers = [f"f{i}" for i in range(max(8, free - n_entity))]


def _choice(rng: np.random.Generator, options: Sequence, weights: Sequence[float]):
    w = np.asarray(weights, dtype=np.float64)
    return options[rng.choice(len(options), p=w / w.sum())]


def _pick_relations(rng: np.random.Generator, cfg: SynthConfig, count: int,
                    distinct: bool) -> list[int]:
    if distinct or not cfg.repeat_relations:
        if count > cfg.relations:
            raise GenerationError(
                f"cannot draw {count} distinct relations out of {cfg.relations}")
        return list(rng.choice(cfg.relations, size=count, replace=False))
    return list(rng.integers(0, cfg.relations, size=count))


class _Builder:
    """Accumulates tokens for one sentence and records entity spans."""

    def __init__(self, rng: np.random.Generator, pools: _Pools, cfg: SynthConfig,
                 heads: list[str]):
        self.rng = rng
        self.pools = pools
        self.cfg = cfg
        self.tokens: list[str] = []
        self.heads = heads  # per-sentence unique entity head tokens

    def filler(self, count: int) -> None:
        for _ in range(count):
            self.tokens.append(self.pools.fillers[
                self.rng.integers(0, len(self.pools.fillers))])

    def entity(self) -> Entity:
        length = _choice(self.rng, [1, 2, 3], self.cfg.entity_len_weights)
        head = len(self.tokens)
        self.tokens.append(self.heads.pop())
        for _ in range(length - 1):
            self.tokens.append(self.pools.cont[
                self.rng.integers(0, len(self.pools.cont))])
        return Entity(head, len(self.tokens) - 1)

    def trigger(self, relation: int) -> None:
        self.tokens.append(self.pools.triggers[relation])


def _plan_counts(rng: np.random.Generator, cfg: SynthConfig) -> tuple[int, OverlapPattern]:
    k = _choice(rng, list(range(1, len(cfg.triple_weights) + 1)), cfg.triple_weights)
    pattern = _choice(rng, list(OverlapPattern), cfg.pattern_weights)
    if k == 1:
        pattern = OverlapPattern.NORMAL
    if pattern is OverlapPattern.EPO and cfg.relations < 2:
        # the same entity pair needs two distinct relations
        pattern = OverlapPattern.SEO if cfg.repeat_relations else OverlapPattern.NORMAL
    if (pattern is OverlapPattern.SEO and cfg.relations < 2
            and not cfg.repeat_relations):
        pattern = OverlapPattern.NORMAL
    return k, pattern


def _generate_plain(rng: np.random.Generator, cfg: SynthConfig,
                    pools: _Pools) -> tuple[list[str], list[Triple], OverlapPattern]:
    k, pattern = _plan_counts(rng, cfg)
    heads = list(rng.choice(pools.entities, size=2 * k + 2, replace=False))
    b = _Builder(rng, pools, cfg, heads)
    triples: list[Triple] = []

    b.filler(int(rng.integers(0, 3)))
    in_chain = False
    if pattern is OverlapPattern.EPO:
        r1, r2 = _pick_relations(rng, cfg, 2, distinct=True)
        subj = b.entity()
        b.trigger(r1)
        b.trigger(r2)
        obj = b.entity()
        triples += [Triple(subj, r1, obj), Triple(subj, r2, obj)]
        chains, in_chain = k - 2, True
    elif pattern is OverlapPattern.SEO:
        shared = min(k, int(rng.integers(2, 4)))
        if not cfg.repeat_relations:
            shared = min(shared, cfg.relations)
        rels = _pick_relations(rng, cfg, shared, distinct=False)
        subj = b.entity()
        for r in rels:
            b.trigger(r)
            triples.append(Triple(subj, r, b.entity()))
        chains, in_chain = k - shared, True
    else:
        chains = k
    for _ in range(chains):
        if in_chain:
            b.filler(int(rng.integers(1, 4)))  # gap between chains only
        in_chain = True
        subj = b.entity()
        r = _pick_relations(rng, cfg, 1, distinct=False)[0]
        b.trigger(r)
        triples.append(Triple(subj, r, b.entity()))
    b.filler(int(rng.integers(0, 3)))
    while len(b.tokens) < cfg.min_len:
        b.filler(1)
    return b.tokens, triples, pattern


def _generate_correlated(rng: np.random.Generator, cfg: SynthConfig,
                         pools: _Pools) -> tuple[list[str], list[Triple], OverlapPattern]:
    """One chain whose base relation implies a partner triple.

    Layout is subject, trigger for the base relation, its object, then a
    second object with no trigger of its own; the partner relation (base + 1)
    holds between the subject and that second object.  Detecting the partner
    triple requires context beyond a local trigger cue.
    """
    pairs = cfg.relations // 2
    base = 2 * int(rng.integers(0, pairs))
    heads = list(rng.choice(pools.entities, size=3, replace=False))
    b = _Builder(rng, pools, cfg, heads)
    b.filler(int(rng.integers(0, 3)))
    subj = b.entity()
    b.trigger(base)
    first = b.entity()
    b.filler(int(rng.integers(0, 2)))
    second = b.entity()
    b.filler(int(rng.integers(0, 3)))
    while len(b.tokens) < cfg.min_len:
        b.filler(1)
    triples = [Triple(subj, base, first), Triple(subj, base + 1, second)]
    return b.tokens, triples, OverlapPattern.SEO


def _normalize_vocab(sentences: list[Sentence], names: list[str]) -> Dataset:
    # Re-index relations in first-seen order so that save -> load roundtrips
    # reproduce the dataset exactly.
    seen: dict[str, int] = {}
    for s in sentences:
        for t in s.triples:
            seen.setdefault(names[t.relation], len(seen))
    remap = {old: seen[name] for old, name in enumerate(names) if name in seen}
    out = []
    for s in sentences:
        triples = [Triple(t.subject, remap[t.relation], t.object) for t in s.triples]
        out.append(Sentence(id=s.id, tokens=s.tokens, triples=triples))
    ordered = sorted(seen, key=seen.get)
    return Dataset(out, RelationVocab(ordered))


def generate(cfg: SynthConfig) -> Dataset:
    """Generate a corpus; deterministic for a given config.

    Draws that exceed the length range, are not roundtrip-safe, or miss
    their planned overlap pattern are rejected and resampled; exceeding
    ``max_rejects`` for one sentence raises GenerationError.
    """
    rng = np.random.default_rng(cfg.seed)
    pools = _Pools(cfg)
    names = [f"r{r}" for r in range(cfg.relations)]
    sentences: list[Sentence] = []

    for index in range(cfg.sentences):
        for attempt in range(cfg.max_rejects + 1):
            if attempt == cfg.max_rejects:
                raise GenerationError(
                    f"sentence {index}: no valid draw in {cfg.max_rejects} attempts;"
                    " the configuration is too constrained")
            maker = _generate_correlated if cfg.correlated else _generate_plain
            tokens, triples, planned = maker(rng, cfg, pools)
            if len(tokens) > cfg.max_len:
                continue
            sentence = Sentence(id=f"s{index}", tokens=tokens, triples=triples)
            if overlap_category(sentence.triples) is not planned:
                continue
            if not is_roundtrip_safe(sentence):
                continue
            sentences.append(sentence)
            break

    return _normalize_vocab(sentences, names)


def split_dataset(dataset: Dataset, sizes: Sequence[int]) -> list[Dataset]:
    """Cut a corpus into consecutive disjoint splits sharing one vocabulary."""
    if sum(sizes) > len(dataset.sentences):
        raise GenerationError(f"cannot split {len(dataset.sentences)} sentences "
                              f"into parts of sizes {list(sizes)}")
    parts, offset = [], 0
    for size in sizes:
        parts.append(Dataset(dataset.sentences[offset:offset + size], dataset.vocab))
        offset += size
    return parts
