import itertools

import numpy as np
import pytest

from masterloop import loop_algebra as la
from masterloop.lattice_complex import (boundary_word, build_rect_lattice, describe, edge_counts,
                                        plaquettes_containing)


@pytest.mark.parametrize("dims,counts", [([1, 1], (4, 1)), ([2, 1], (7, 2)), ([2, 2], (12, 4))])
def test_counts(dims, counts):
    c = build_rect_lattice(dims)
    assert (c.n_edges, c.n_plaquettes) == counts


def test_counts_match_closed_form():
    for d in (1, 2, 3):
        for dims in itertools.product(range(1, 5), repeat=d):
            if np.prod(dims) > 100:
                continue
            for periodic in (False, True):
                c = build_rect_lattice(dims, periodic)
                assert (c.n_edges, c.n_plaquettes) == edge_counts(dims, periodic)


def test_zero_extent_rejected():
    with pytest.raises(ValueError):
        build_rect_lattice([0, 2])
    with pytest.raises(ValueError):
        build_rect_lattice([])


def test_boundaries_close():
    for dims in ([1, 1], [3, 2], [2, 2, 2]):
        for periodic in (False, True):
            c = build_rect_lattice(dims, periodic)
            for p in range(c.n_plaquettes):
                w = c.boundary(p)
                assert len(w) == 4
                c.validate_word(w.word)
                assert [r.orientation for r in w] == [1, 1, -1, -1]


def test_single_square():
    c = build_rect_lattice([1, 1])
    w = boundary_word(c, 0, 1)
    assert la.format_loop(w) == "0+ 3+ 2- 1-"
    assert boundary_word(c, 0, -1) == la.inverse(w)
    q = np.broadcast_to(np.eye(3), (4, 3, 3))
    assert np.allclose(la.holonomy(w, q), np.eye(3))
    for e in range(4):
        occ = plaquettes_containing(c, e, positive_only=True)
        assert len(occ) == 1 and abs(occ[0].t_p) == 1
    with pytest.raises(ValueError):
        boundary_word(c, 1, 1)
    with pytest.raises(ValueError):
        boundary_word(c, 0, 2)


def test_shared_edge():
    c = build_rect_lattice([2, 1])
    e = c.edge_id((1, 0), 1)
    occ = plaquettes_containing(c, e, positive_only=True)
    assert sorted(o.plaquette for o in occ) == [0, 1]
    assert sorted(o.t_p for o in occ) == [-1, 1]
    both = plaquettes_containing(c, e)
    assert len(both) == 4
    for o in both:
        p = o.plaquette if o.plaquette >= 0 else -o.plaquette - 1
        word = c.boundary(p, 1 if o.plaquette >= 0 else -1)
        assert word[o.position] == la.EdgeRef(e, o.omega)
        assert la.occurrences(word, e).t == o.t_p


def test_one_dimensional_complex_has_no_plaquettes():
    c = build_rect_lattice([3])
    assert c.n_plaquettes == 0
    assert plaquettes_containing(c, 1) == []


def test_invalid_edge():
    c = build_rect_lattice([1, 1])
    with pytest.raises(ValueError):
        plaquettes_containing(c, 4)
    with pytest.raises(KeyError):
        c.edge_id((5, 5), 0)


def test_incidence_symmetry():
    for dims in itertools.product(range(1, 4), repeat=2):
        c = build_rect_lattice(dims)
        for e in range(c.n_edges):
            listed = {o.plaquette for o in plaquettes_containing(c, e, positive_only=True)}
            direct = {p for p in range(c.n_plaquettes) if e in c.boundary(p).edges()}
            assert listed == direct


def test_reoriented_complex():
    c = build_rect_lattice([2, 1])
    flipped = c.reoriented(edge_flips=[True, False, False, False, True], plaquette_flips=[False, True])
    assert flipped.edges[0] == c.edges[0][::-1]
    for p in range(flipped.n_plaquettes):
        flipped.validate_word(flipped.plaquettes[p])
    assert flipped.boundary(1) == la.inverse(
        la.LoopWord(tuple(la.EdgeRef(r.edge, -r.orientation if r.edge in (0, 4) else r.orientation)
                          for r in c.plaquettes[1])))


def test_describe_tables():
    text = describe(build_rect_lattice([2, 2]))
    lines = text.splitlines()
    edge_rows = lines[lines.index("edges:") + 2:lines.index("plaquettes:") - 1]
    plaq_rows = lines[lines.index("plaquettes:") + 2:]
    assert len(edge_rows) == 12 and len(plaq_rows) == 4
    c = build_rect_lattice([2, 2])
    for p, row in enumerate(plaq_rows):
        word = " ".join(row.split()[-4:])
        assert la.parse_loop(word) == c.boundary(p)
