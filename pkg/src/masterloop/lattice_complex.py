"""Hypercubic 2-complexes: vertices, oriented edges, oriented plaquettes.

Edges are numbered by vertex (lexicographic) and then by axis; edge
``(v, mu)`` runs from ``v`` to ``v + e_mu``. Plaquettes are numbered by
lower corner and then by axis pair ``mu < nu``; the boundary of plaquette
``(v, mu, nu)`` is the path right, up, left, down::

    (v, mu)+  (v+mu, nu)+  (v+nu, mu)-  (v, nu)-
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from masterloop.loop_algebra import EdgeRef, LoopWord, LoopWordError, inverse, occurrences

__all__ = ["CellComplex", "PlaquetteOccurrence", "build_rect_lattice", "plaquettes_containing", "boundary_word"]


@dataclass(frozen=True)
class PlaquetteOccurrence:
    plaquette: int
    position: int
    omega: int
    t_p: int


@dataclass(frozen=True, eq=False)
class CellComplex:
    dims: tuple[int, ...]
    periodic: bool
    vertices: tuple[tuple[int, ...], ...]
    edges: tuple[tuple[int, int], ...]  # (tail vertex id, head vertex id)
    edge_keys: tuple[tuple[tuple[int, ...], int], ...]  # (vertex, axis)
    plaquettes: tuple[tuple[EdgeRef, ...], ...]
    plaquette_keys: tuple[tuple[tuple[int, ...], int, int], ...]
    _edge_index: dict = field(repr=False, default_factory=dict)
    _incidence: dict = field(repr=False, default_factory=dict)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_plaquettes(self) -> int:
        return len(self.plaquettes)

    def edge_id(self, vertex: Sequence[int], axis: int) -> int:
        key = (tuple(int(c) for c in vertex), int(axis))
        try:
            return self._edge_index[key]
        except KeyError:
            raise KeyError(f"no edge at vertex {key[0]} along axis {axis}") from None

    def check_edge(self, e: int) -> None:
        if not 0 <= e < self.n_edges:
            raise ValueError(f"edge {e} does not exist (complex has {self.n_edges} edges)")

    def validate_word(self, word: Sequence[EdgeRef]) -> None:
        """Raise unless ``word`` is a closed edge path in this complex."""
        if not word:
            return
        ends = []
        for r in word:
            if not 0 <= r.edge < self.n_edges:
                raise LoopWordError(f"edge {r.edge} does not exist (complex has {self.n_edges} edges)")
            a, b = self.edges[r.edge]
            ends.append((a, b) if r.orientation > 0 else (b, a))
        for i, (_, head) in enumerate(ends):
            tail_next = ends[(i + 1) % len(ends)][0]
            if head != tail_next:
                raise LoopWordError(f"word is not a closed path: step {i} ends at vertex "
                                    f"{self.vertices[head]} but step {(i + 1) % len(ends)} starts at "
                                    f"{self.vertices[tail_next]}")

    def boundary(self, p: int, orientation: int = 1) -> LoopWord:
        return boundary_word(self, p, orientation)

    def reoriented(self, edge_flips: Sequence[bool] = (), plaquette_flips: Sequence[bool] = ()) -> "CellComplex":
        """Same complex with some edges and plaquettes given the opposite orientation.

        Flipping edge ``e`` swaps its endpoints and negates its sign in every
        boundary word; flipping a plaquette replaces its boundary by the inverse.
        """
        ef = list(edge_flips) + [False] * (self.n_edges - len(edge_flips))
        pf = list(plaquette_flips) + [False] * (self.n_plaquettes - len(plaquette_flips))
        edges = tuple((b, a) if f else (a, b) for (a, b), f in zip(self.edges, ef))
        plaqs = []
        for word, f in zip(self.plaquettes, pf):
            w = tuple(EdgeRef(r.edge, -r.orientation if ef[r.edge] else r.orientation) for r in word)
            if f:
                w = tuple(r.flipped() for r in reversed(w))
            plaqs.append(w)
        return _assemble(self.dims, self.periodic, self.vertices, edges, self.edge_keys, tuple(plaqs),
                         self.plaquette_keys)


def _assemble(dims, periodic, vertices, edges, edge_keys, plaquettes, plaquette_keys) -> CellComplex:
    index = {k: i for i, k in enumerate(edge_keys)}
    incidence: dict[int, list[PlaquetteOccurrence]] = {e: [] for e in range(len(edges))}
    for p, word in enumerate(plaquettes):
        lw = LoopWord(word)
        for e in sorted({r.edge for r in word}):
            occ = occurrences(lw, e)
            for x, w in occ.C:
                incidence[e].append(PlaquetteOccurrence(p, x, w, occ.t))
    c = CellComplex(tuple(dims), periodic, vertices, edges, edge_keys, plaquettes, plaquette_keys,
                    index, {e: tuple(v) for e, v in incidence.items()})
    for w in plaquettes:
        c.validate_word(w)
    return c


def build_rect_lattice(dims: Sequence[int], periodic: bool = False) -> CellComplex:
    """Box of ``dims`` unit cells with free (or periodic) boundary."""
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise ValueError(f"every extent must be >= 1, got {list(dims)}")
    nv = dims if periodic else tuple(d + 1 for d in dims)
    vertices = tuple(itertools.product(*(range(n) for n in nv)))
    vid = {v: i for i, v in enumerate(vertices)}
    d = len(dims)

    def shift(v, mu):
        w = list(v)
        w[mu] += 1
        if periodic:
            w[mu] %= dims[mu]
        return tuple(w)

    edges, keys = [], []
    for v in vertices:
        for mu in range(d):
            if not periodic and v[mu] >= dims[mu]:
                continue
            edges.append((vid[v], vid[shift(v, mu)]))
            keys.append((v, mu))
    if not edges:
        raise ValueError("lattice has no edges")
    index = {k: i for i, k in enumerate(keys)}

    plaqs, pkeys = [], []
    for v in vertices:
        for mu, nu in itertools.combinations(range(d), 2):
            if not periodic and (v[mu] >= dims[mu] or v[nu] >= dims[nu]):
                continue
            plaqs.append((
                EdgeRef(index[(v, mu)], 1),
                EdgeRef(index[(shift(v, mu), nu)], 1),
                EdgeRef(index[(shift(v, nu), mu)], -1),
                EdgeRef(index[(v, nu)], -1),
            ))
            pkeys.append((v, mu, nu))
    return _assemble(dims, periodic, vertices, tuple(edges), tuple(keys), tuple(plaqs), tuple(pkeys))


def plaquettes_containing(c: CellComplex, e: int, positive_only: bool = False) -> list[PlaquetteOccurrence]:
    """Occurrences of edge ``e`` in plaquette boundaries.

    With ``positive_only`` each positively oriented plaquette appears once per
    occurrence of ``e``. Otherwise both orientations ``p`` and ``p^-1`` are
    listed; ``p^-1`` entries carry ``plaquette = -(p + 1)`` and negated ``t_p``.
    """
    c.check_edge(e)
    pos = list(c._incidence[e])
    if positive_only:
        return pos
    neg = []
    for occ in pos:
        length = len(c.plaquettes[occ.plaquette])
        neg.append(PlaquetteOccurrence(-(occ.plaquette + 1), length - 1 - occ.position, -occ.omega, -occ.t_p))
    return pos + neg


def boundary_word(c: CellComplex, p: int, orientation: int = 1) -> LoopWord:
    if not 0 <= p < c.n_plaquettes:
        raise ValueError(f"plaquette {p} does not exist (complex has {c.n_plaquettes})")
    w = LoopWord(c.plaquettes[p], c)
    if orientation == 1:
        return w
    if orientation == -1:
        return inverse(w)
    raise ValueError("orientation must be +1 or -1")


def describe(c: CellComplex) -> str:
    """Edge and plaquette id tables in plain text."""
    lines = [f"lattice dims={list(c.dims)} periodic={c.periodic}: "
             f"{len(c.vertices)} vertices, {c.n_edges} edges, {c.n_plaquettes} plaquettes", "", "edges:",
             f"{'id':>4}  {'vertex':<12} {'axis':>4}  {'tail':<12} {'head':<12}"]
    for i, ((v, mu), (a, b)) in enumerate(zip(c.edge_keys, c.edges)):
        lines.append(f"{i:>4}  {str(v):<12} {mu:>4}  {str(c.vertices[a]):<12} {str(c.vertices[b]):<12}")
    lines += ["", "plaquettes:", f"{'id':>4}  {'corner':<12} {'axes':<6}  boundary"]
    for i, (v, mu, nu) in enumerate(c.plaquette_keys):
        word = " ".join(str(r) for r in c.plaquettes[i])
        lines.append(f"{i:>4}  {str(v):<12} {mu},{nu:<4}  {word}")
    return "\n".join(lines)


def edge_counts(dims: Sequence[int], periodic: bool = False) -> tuple[int, int]:
    """Closed-form numbers of edges and plaquettes of a box."""
    dims = list(dims)
    d = len(dims)
    nv = [n if periodic else n + 1 for n in dims]
    edges = sum(dims[mu] * int(np.prod([nv[nu] for nu in range(d) if nu != mu])) for mu in range(d))
    plaqs = 0
    for mu, nu in itertools.combinations(range(d), 2):
        plaqs += dims[mu] * dims[nu] * int(np.prod([nv[k] for k in range(d) if k not in (mu, nu)]))
    return edges, plaqs
