"""Loop words and the surgeries performed on them at occurrences of an edge.

A word is a finite sequence of oriented edges ``(edge_id, +/-1)``. Closed words
(loops) are read cyclically. Holonomies are ordered left to right::

    holonomy([a1, a2, ..., an]) = Q[a1]^w1 @ Q[a2]^w2 @ ... @ Q[an]^wn

so that ``holonomy(concat(p, q)) == holonomy(p) @ holonomy(q)``.

Positions passed to the surgeries are 0-based indices into the word.
Words are stored raw: no backtrack cancellation, no canonical rotation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from masterloop.lattice_complex import CellComplex

__all__ = [
    "EdgeRef",
    "LoopWord",
    "NULL_LOOP",
    "OccurrenceTable",
    "LoopWordError",
    "parse_loop",
    "format_loop",
    "occurrences",
    "excise",
    "inverse",
    "power",
    "concat",
    "rotate",
    "negative_merger",
    "positive_merger",
    "positive_split",
    "negative_split",
    "positive_twist",
    "negative_twist",
    "holonomy",
    "wilson",
]


class LoopWordError(ValueError):
    """Malformed word, invalid occurrence position or bad orientation pairing."""


@dataclass(frozen=True, order=True)
class EdgeRef:
    edge: int
    orientation: int

    def __post_init__(self):
        if self.edge < 0:
            raise LoopWordError(f"negative edge id {self.edge}")
        if self.orientation not in (1, -1):
            raise LoopWordError(f"orientation must be +1 or -1, got {self.orientation}")

    def flipped(self) -> "EdgeRef":
        return EdgeRef(self.edge, -self.orientation)

    def __str__(self):
        return f"{self.edge}{'+' if self.orientation > 0 else '-'}"


@dataclass(frozen=True)
class LoopWord:
    """A word of oriented edges; the empty word is the null loop."""

    word: tuple[EdgeRef, ...] = ()
    complex: "CellComplex | None" = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "word", tuple(self.word))
        if self.complex is not None:
            self.complex.validate_word(self.word)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], complex=None) -> "LoopWord":
        return cls(tuple(EdgeRef(int(e), int(s)) for e, s in pairs), complex)

    @property
    def is_null(self) -> bool:
        return len(self.word) == 0

    def bind(self, complex: "CellComplex") -> "LoopWord":
        """Attach to a cell complex, checking the word is a closed path there."""
        return LoopWord(self.word, complex)

    def edges(self) -> set[int]:
        return {r.edge for r in self.word}

    def __len__(self):
        return len(self.word)

    def __iter__(self):
        return iter(self.word)

    def __getitem__(self, i):
        return self.word[i]

    def __str__(self):
        return format_loop(self)


NULL_LOOP = LoopWord(())

_TOKEN = re.compile(r"^(\d+)([+-])$")


def parse_loop(text: str) -> LoopWord:
    """Parse whitespace-separated ``<edge_id><+|->`` tokens, e.g. ``"1+ 2+ 3- 4-"``."""
    tokens = text.split()
    if not tokens:
        raise LoopWordError("empty loop word")
    refs = []
    for tok in tokens:
        m = _TOKEN.match(tok)
        if m is None:
            raise LoopWordError(f"malformed token {tok!r}")
        refs.append(EdgeRef(int(m.group(1)), 1 if m.group(2) == "+" else -1))
    return LoopWord(tuple(refs))


def format_loop(loop: LoopWord) -> str:
    return " ".join(str(r) for r in loop.word)


@dataclass(frozen=True)
class OccurrenceTable:
    """Positions of ``edge`` in a word together with their orientations."""

    edge: int
    positions: tuple[int, ...]
    orientations: tuple[int, ...]

    @property
    def A(self) -> tuple[int, ...]:
        return tuple(p for p, w in zip(self.positions, self.orientations) if w == 1)

    @property
    def B(self) -> tuple[int, ...]:
        return tuple(p for p, w in zip(self.positions, self.orientations) if w == -1)

    @property
    def C(self) -> tuple[tuple[int, int], ...]:
        return tuple(zip(self.positions, self.orientations))

    @property
    def m(self) -> int:
        return len(self.positions)

    @property
    def t(self) -> int:
        return sum(self.orientations)

    def omega(self, x: int) -> int:
        return self.orientations[self.positions.index(x)]


def occurrences(loop: LoopWord, e: int) -> OccurrenceTable:
    pos, ori = [], []
    for i, r in enumerate(loop.word):
        if r.edge == e:
            pos.append(i)
            ori.append(r.orientation)
    return OccurrenceTable(e, tuple(pos), tuple(ori))


def _check_position(loop: LoopWord, x: int, e: int | None = None) -> EdgeRef:
    if not 0 <= x < len(loop.word):
        raise LoopWordError(f"position {x} outside word of length {len(loop.word)}")
    ref = loop.word[x]
    if e is not None and ref.edge != e:
        raise LoopWordError(f"position {x} holds edge {ref.edge}, not edge {e}")
    return ref


def _words(refs) -> LoopWord:
    return LoopWord(tuple(refs))


def rotate(loop: LoopWord, k: int) -> LoopWord:
    n = len(loop.word)
    if n == 0:
        return loop
    k %= n
    return LoopWord(loop.word[k:] + loop.word[:k], loop.complex)


def concat(*words: LoopWord) -> LoopWord:
    return _words(r for w in words for r in w.word)


def inverse(loop: LoopWord) -> LoopWord:
    """Reverse the word and flip every orientation."""
    return LoopWord(tuple(r.flipped() for r in reversed(loop.word)), loop.complex)


def power(word: LoopWord, sign: int) -> LoopWord:
    if sign == 1:
        return word
    if sign == -1:
        return inverse(word)
    raise LoopWordError(f"exponent must be +1 or -1, got {sign}")


def excise(loop: LoopWord, x: int, e: int | None = None) -> LoopWord:
    """Remove the edge at position ``x`` and read the rest starting just after it."""
    _check_position(loop, x, e)
    w = loop.word
    return _words(w[x + 1:] + w[:x])


def _merger_data(l1: LoopWord, x: int, l2: LoopWord, y: int):
    r1 = _check_position(l1, x)
    r2 = _check_position(l2, y, r1.edge)
    return r1, r2, excise(l1, x), excise(l2, y)


def negative_merger(l1: LoopWord, x: int, l2: LoopWord, y: int) -> LoopWord:
    """``(l1 minus e_x) (l2 minus e_y)^(-w_x w_y)``."""
    r1, r2, a, b = _merger_data(l1, x, l2, y)
    return concat(a, power(b, -r1.orientation * r2.orientation))


def positive_merger(l1: LoopWord, x: int, l2: LoopWord, y: int) -> LoopWord:
    """``(l1 minus e_x) e^(w_x) (l2 minus e_y)^(w_x w_y) e^(w_x)``."""
    r1, r2, a, b = _merger_data(l1, x, l2, y)
    ex = _words([EdgeRef(r1.edge, r1.orientation)])
    return concat(a, ex, power(b, r1.orientation * r2.orientation), ex)


def _segments(loop: LoopWord, x: int, y: int):
    """Return (e_x, e_y, word strictly between x and y, word strictly between y and x)."""
    if x == y:
        raise LoopWordError("split and twist need two distinct occurrences")
    rx = _check_position(loop, x)
    ry = _check_position(loop, y, rx.edge)
    n = len(loop.word)
    r = loop.word[x:] + loop.word[:x]
    k = (y - x) % n
    return rx, ry, _words(r[1:k]), _words(r[k + 1:])


def _require_sign(rx: EdgeRef, ry: EdgeRef, sign: int, what: str):
    if rx.orientation * ry.orientation != sign:
        raise LoopWordError(f"{what} needs w_x w_y = {sign:+d}")


def positive_split(loop: LoopWord, x: int, y: int) -> tuple[LoopWord, LoopWord]:
    rx, ry, p_plus, p_minus = _segments(loop, x, y)
    _require_sign(rx, ry, 1, "positive split")
    return concat(p_plus, _words([ry])), concat(p_minus, _words([rx]))


def negative_split(loop: LoopWord, x: int, y: int) -> tuple[LoopWord, LoopWord]:
    rx, ry, p_plus, p_minus = _segments(loop, x, y)
    _require_sign(rx, ry, -1, "negative split")
    return p_plus, p_minus


def positive_twist(loop: LoopWord, x: int, y: int) -> LoopWord:
    """Twist at an oppositely oriented pair: ``P+ e^(w_y) P-^(-1) e^(w_x)``.

    ``P+`` runs from x to y and ``P-`` from y back to x. The edge exponents are
    placed so that the trace identity behind the Laplacian holds with
    left-to-right holonomies.
    """
    rx, ry, p_plus, p_minus = _segments(loop, x, y)
    _require_sign(rx, ry, -1, "positive twist")
    return concat(p_plus, _words([ry]), inverse(p_minus), _words([rx]))


def negative_twist(loop: LoopWord, x: int, y: int) -> LoopWord:
    """Twist at an equally oriented pair: split, invert the second half and merge."""
    first, second = positive_split(loop, x, y)
    second_inv = inverse(second)
    return negative_merger(first, len(first) - 1, second_inv, 0)


# ---------------------------------------------------------------------------
# holonomy


def _dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def holonomy(loop: LoopWord, links: np.ndarray) -> np.ndarray:
    """Ordered product of link matrices; ``links`` has shape ``(..., E, N, N)``.

    Inverse links are taken as conjugate transposes, exact on the group.
    """
    links = np.asarray(links)
    if links.ndim < 3 or links.shape[-1] != links.shape[-2]:
        raise ValueError(f"links must have shape (..., E, N, N), got {links.shape}")
    n_edges, n = links.shape[-3], links.shape[-1]
    batch = links.shape[:-3]
    out = None
    for r in loop.word:
        if r.edge >= n_edges:
            raise ValueError(f"edge {r.edge} not present in a configuration with {n_edges} edges")
        u = links[..., r.edge, :, :]
        if r.orientation < 0:
            u = _dagger(u)
        out = u.copy() if out is None else out @ u
    if out is None:
        out = np.broadcast_to(np.eye(n, dtype=links.dtype), batch + (n, n)).copy()
    return out


def wilson(loop: LoopWord, links: np.ndarray) -> np.ndarray:
    """Trace of the holonomy (complex for unitary groups); the null loop gives N."""
    return np.trace(holonomy(loop, links), axis1=-2, axis2=-1)


def word_pairs(loop: LoopWord) -> list[tuple[int, int]]:
    return [(r.edge, r.orientation) for r in loop.word]


def from_sequence(seq: Sequence[tuple[int, int]]) -> LoopWord:
    return LoopWord.from_pairs(seq)
