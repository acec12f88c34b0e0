"""Corpus data model, JSON Lines serialization, and the relation vocabulary.

A corpus is a sequence of tokenized sentences, each carrying gold triples
(subject span, relation, object span).  Spans are token-level with inclusive
end indices.  The wire format is one JSON object per line::

    {"id": "s1", "tokens": ["a", "b", "c"],
     "triples": [{"subject": [0, 0], "relation": "r0", "object": [2, 2]}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator

DEFAULT_MAX_LEN = 512


class CorpusError(ValueError):
    """A corpus file or in-memory sentence violates the format contract."""


@dataclass(frozen=True)
class Entity:
    """Token span with inclusive endpoints; single-token iff head == tail."""

    head: int
    tail: int

    def __post_init__(self) -> None:
        if not (0 <= self.head <= self.tail):
            raise CorpusError(f"bad entity span [{self.head}, {self.tail}]")

    @property
    def single(self) -> bool:
        return self.head == self.tail

    def span(self) -> tuple[int, int]:
        return (self.head, self.tail)


@dataclass(frozen=True)
class Triple:
    subject: Entity
    relation: int
    object: Entity

    def sort_key(self) -> tuple[int, int, int, int, int]:
        return (self.relation, self.subject.head, self.subject.tail,
                self.object.head, self.object.tail)


@dataclass
class Sentence:
    id: str
    tokens: list[str]
    triples: list[Triple] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.tokens) < 1:
            raise CorpusError(f"sentence {self.id!r} has no tokens")
        n = len(self.tokens)
        seen: set[Triple] = set()
        for t in self.triples:
            if t.subject.tail >= n or t.object.tail >= n:
                raise CorpusError(
                    f"sentence {self.id!r}: triple span out of range for {n} tokens")
            if t in seen:
                raise CorpusError(f"sentence {self.id!r}: duplicate triple")
            seen.add(t)

    def __len__(self) -> int:
        return len(self.tokens)


class RelationVocab:
    """Ordered, immutable mapping between relation names and dense ids."""

    def __init__(self, names: Iterable[str]):
        self.names: tuple[str, ...] = tuple(names)
        if len(set(self.names)) != len(self.names):
            raise CorpusError("relation names must be unique")
        if any(not n for n in self.names):
            raise CorpusError("relation names must be non-empty")
        self._index = {n: i for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RelationVocab) and self.names == other.names

    def __repr__(self) -> str:
        return f"RelationVocab({list(self.names)!r})"

    def index(self, name: str) -> int:
        if name not in self._index:
            raise CorpusError(f"unknown relation name {name!r}")
        return self._index[name]

    def name(self, idx: int) -> str:
        return self.names[idx]

    def to_json(self) -> str:
        return json.dumps(list(self.names))

    @classmethod
    def from_json(cls, text: str) -> "RelationVocab":
        return cls(json.loads(text))


@dataclass
class Dataset:
    sentences: list[Sentence]
    vocab: RelationVocab

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self) -> Iterator[Sentence]:
        return iter(self.sentences)

    def __eq__(self, other: object) -> bool:
        return (isinstance(other, Dataset)
                and self.vocab == other.vocab
                and self.sentences == other.sentences)


def _parse_span(raw: object, sid: str) -> Entity:
    if (not isinstance(raw, list) or len(raw) != 2
            or not all(isinstance(x, int) for x in raw)):
        raise CorpusError(f"sentence {sid!r}: span must be [head, tail], got {raw!r}")
    try:
        return Entity(raw[0], raw[1])
    except CorpusError as exc:
        raise CorpusError(f"sentence {sid!r}: {exc}") from None


def load_jsonl(data: bytes | str, vocab: RelationVocab | None = None,
               max_len: int = DEFAULT_MAX_LEN) -> Dataset:
    """Parse a JSON Lines corpus into a validated Dataset.

    The relation vocabulary is built from relation names in first-seen order
    unless an explicit ``vocab`` is supplied, in which case every name in the
    corpus must already be present in it.
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    explicit = vocab is not None
    names: list[str] = list(vocab.names) if explicit else []
    name_ids = {n: i for i, n in enumerate(names)}
    sentences: list[Sentence] = []
    seen_ids: set[str] = set()

    for lineno, line in enumerate(data.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from None
        if not isinstance(obj, dict) or not {"id", "tokens", "triples"} <= obj.keys():
            raise CorpusError(f"line {lineno}: expected object with id/tokens/triples")
        sid = str(obj["id"])
        if sid in seen_ids:
            raise CorpusError(f"line {lineno}: duplicate sentence id {sid!r}")
        seen_ids.add(sid)
        tokens = obj["tokens"]
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise CorpusError(f"sentence {sid!r}: tokens must be a list of strings")
        if len(tokens) > max_len:
            raise CorpusError(
                f"sentence {sid!r}: {len(tokens)} tokens exceeds max length {max_len}")
        triples = []
        for t in obj["triples"]:
            rel_name = t.get("relation")
            if not isinstance(rel_name, str) or not rel_name:
                raise CorpusError(f"sentence {sid!r}: bad relation name {rel_name!r}")
            if rel_name not in name_ids:
                if explicit:
                    raise CorpusError(
                        f"sentence {sid!r}: relation {rel_name!r} not in vocabulary")
                name_ids[rel_name] = len(names)
                names.append(rel_name)
            triples.append(Triple(
                subject=_parse_span(t.get("subject"), sid),
                relation=name_ids[rel_name],
                object=_parse_span(t.get("object"), sid),
            ))
        sentences.append(Sentence(id=sid, tokens=tokens, triples=triples))

    return Dataset(sentences, vocab if explicit else RelationVocab(names))


def save_jsonl(dataset: Dataset) -> bytes:
    """Serialize a Dataset back to JSON Lines, one sentence per line.

    Relations are written by name.  Reloading without an explicit vocabulary
    reproduces the dataset exactly whenever the vocabulary is in first-seen
    order (which holds for every generated corpus); otherwise pass
    ``dataset.vocab`` to :func:`load_jsonl` for an exact roundtrip.
    """
    lines = []
    for s in dataset.sentences:
        obj = {
            "id": s.id,
            "tokens": s.tokens,
            "triples": [
                {"subject": list(t.subject.span()),
                 "relation": dataset.vocab.name(t.relation),
                 "object": list(t.object.span())}
                for t in s.triples
            ],
        }
        lines.append(json.dumps(obj, ensure_ascii=False))
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def load_jsonl_file(path: str, vocab: RelationVocab | None = None,
                    max_len: int = DEFAULT_MAX_LEN) -> Dataset:
    with open(path, "rb") as fh:
        return load_jsonl(fh.read(), vocab=vocab, max_len=max_len)


def save_jsonl_file(dataset: Dataset, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(save_jsonl(dataset))
