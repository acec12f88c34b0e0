"""Token-pair tagging codec: triples to per-relation label grids and back.

Each relation gets an n-by-n grid where rows index subject token positions
and columns index object token positions.  Eight labels encode a triple:

* ``SS``   at (s.head, o.head) when subject and object are both single tokens
* ``CCH``/``CCT`` at the head pair / tail pair when both are multi-token
* ``CEH``/``CET`` when only the subject is multi-token (column fixed)
* ``ECH``/``ECT`` when only the object is multi-token (row fixed)
* ``NULL`` everywhere else

Decoding walks each grid and pairs head cells with the nearest compatible
unconsumed tail cell below/right of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .schema import Entity, Sentence, Triple


class Label(IntEnum):
    NULL = 0
    SS = 1
    CCH = 2
    CCT = 3
    CEH = 4
    CET = 5
    ECH = 6
    ECT = 7


LABELS: tuple[Label, ...] = tuple(Label)
NUM_LABELS = len(LABELS)

_CELL_CODES = {Label.NULL: ".", Label.SS: "S", Label.CCH: "H", Label.CCT: "T",
               Label.CEH: "h", Label.CET: "t", Label.ECH: "x", Label.ECT: "z"}


class TaggingError(ValueError):
    pass


@dataclass
class TagTable:
    """Label grid for one relation; ``grid[i, j]`` labels the pair (i, j)."""

    relation: int
    grid: np.ndarray

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.int64)
        if self.grid.ndim != 2 or self.grid.shape[0] != self.grid.shape[1]:
            raise TaggingError(f"table grid must be square, got {self.grid.shape}")

    @property
    def side(self) -> int:
        return self.grid.shape[0]


def _triple_cells(t: Triple) -> list[tuple[int, int, Label]]:
    s, o = t.subject, t.object
    if s.single and o.single:
        return [(s.head, o.head, Label.SS)]
    if not s.single and not o.single:
        return [(s.head, o.head, Label.CCH), (s.tail, o.tail, Label.CCT)]
    if not s.single:
        return [(s.head, o.head, Label.CEH), (s.tail, o.head, Label.CET)]
    return [(s.head, o.head, Label.ECH), (s.head, o.tail, Label.ECT)]


def encode_tables(sentence: Sentence, relations: int) -> tuple[list[TagTable], int]:
    """Encode gold triples into one label grid per relation.

    Triples are placed in sentence order; a triple whose target cells are not
    all NULL is skipped entirely (first writer wins, and skipping the whole
    triple keeps head and tail cell counts balanced).  Returns the tables and
    the number of skipped triples.
    """
    n = len(sentence)
    grids = [np.zeros((n, n), dtype=np.int64) for _ in range(relations)]
    conflicts = 0
    for t in sentence.triples:
        if t.relation >= relations:
            raise TaggingError(
                f"sentence {sentence.id!r}: relation id {t.relation} >= {relations}")
        grid = grids[t.relation]
        cells = _triple_cells(t)
        if any(grid[i, j] != Label.NULL for i, j, _ in cells):
            conflicts += 1
            continue
        for i, j, label in cells:
            grid[i, j] = label
    return [TagTable(r, g) for r, g in enumerate(grids)], conflicts


def _cells_with(grid: np.ndarray, label: Label) -> list[tuple[int, int]]:
    rows, cols = np.nonzero(grid == label)
    return list(zip(rows.tolist(), cols.tolist()))  # row-major order


def _decode_one(table: TagTable) -> set[Triple]:
    grid, r = table.grid, table.relation
    out: set[Triple] = set()

    for i, j in _cells_with(grid, Label.SS):
        out.add(Triple(Entity(i, i), r, Entity(j, j)))

    # Complex/complex pairs: scan heads row-major, each head takes the
    # unconsumed tail at (k, l), k >= i, l >= j, with minimal (k-i)+(l-j);
    # ties prefer smaller k, then smaller l.
    tails = _cells_with(grid, Label.CCT)
    consumed = [False] * len(tails)
    for i, j in _cells_with(grid, Label.CCH):
        best = None
        for idx, (k, l) in enumerate(tails):
            if consumed[idx] or k < i or l < j:
                continue
            key = ((k - i) + (l - j), k, l)
            if best is None or key < best[0]:
                best = (key, idx)
        if best is not None:
            _, idx = best
            consumed[idx] = True
            k, l = tails[idx]
            out.add(Triple(Entity(i, k), r, Entity(j, l)))

    # Complex subject, single object: tail shares the column.
    tails = _cells_with(grid, Label.CET)
    consumed = [False] * len(tails)
    for i, j in _cells_with(grid, Label.CEH):
        best = None
        for idx, (k, l) in enumerate(tails):
            if consumed[idx] or l != j or k < i:
                continue
            if best is None or k < best[0]:
                best = (k, idx)
        if best is not None:
            consumed[best[1]] = True
            out.add(Triple(Entity(i, best[0]), r, Entity(j, j)))

    # Single subject, complex object: tail shares the row.
    tails = _cells_with(grid, Label.ECT)
    consumed = [False] * len(tails)
    for i, j in _cells_with(grid, Label.ECH):
        best = None
        for idx, (k, l) in enumerate(tails):
            if consumed[idx] or k != i or l < j:
                continue
            if best is None or l < best[0]:
                best = (l, idx)
        if best is not None:
            consumed[best[1]] = True
            out.add(Triple(Entity(i, i), r, Entity(j, best[0])))

    return out


def decode_tables(tables: list[TagTable]) -> list[Triple]:
    """Decode label grids into a deduplicated, canonically sorted triple list."""
    sides = {t.side for t in tables}
    if len(sides) > 1:
        raise TaggingError(f"tables disagree on side length: {sorted(sides)}")
    triples: set[Triple] = set()
    for table in tables:
        triples |= _decode_one(table)
    return sorted(triples, key=Triple.sort_key)


def is_roundtrip_safe(sentence: Sentence) -> bool:
    """True iff encoding then decoding provably reproduces the gold triples."""
    relations = max((t.relation for t in sentence.triples), default=0) + 1
    tables, conflicts = encode_tables(sentence, relations)
    if conflicts:
        return False
    decoded = decode_tables(tables)
    return decoded == sorted(set(sentence.triples), key=Triple.sort_key)


def format_table(table: TagTable) -> str:
    """Render a grid as characters, one per cell, '.' for NULL."""
    return "\n".join(
        "".join(_CELL_CODES[Label(v)] for v in row) for row in table.grid
    )
