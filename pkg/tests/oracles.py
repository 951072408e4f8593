"""Independent numerical oracles used by the tests.

The abelian single-plaquette models are exactly solvable: a product of
Wilson values is a sum of characters exp(i n.phi) of the four link angles, and
only multiples of the plaquette's own signed incidence vector survive the
integral. What is left is a one dimensional integral over the plaquette angle,
evaluated here by adaptive quadrature.
"""

import itertools
from functools import lru_cache

import numpy as np
from scipy import integrate


@lru_cache(maxsize=None)
def plaquette_moment(k: int, a: float) -> float:
    """E[cos(k theta)] for the density proportional to exp(a cos theta) on the circle."""
    num = integrate.quad(lambda t: np.cos(k * t) * np.exp(a * np.cos(t)), -np.pi, np.pi, epsabs=1e-13)[0]
    den = integrate.quad(lambda t: np.exp(a * np.cos(t)), -np.pi, np.pi, epsabs=1e-13)[0]
    return num / den


def _charge(word, n_edges):
    v = np.zeros(n_edges, int)
    for r in word:
        v[r.edge] += r.orientation
    return v


def abelian_expectation(loops, family, beta, plaquette, n_edges):
    """E[prod W(loop)] for U(1) or SO(2) on a lattice with a single plaquette."""
    if family == "U":
        a, sign_choices = beta, [(1,) * len(loops)]
    elif family == "SO":
        a, sign_choices = 4 * beta, list(itertools.product((1, -1), repeat=len(loops)))
    else:
        raise ValueError(family)
    p = _charge(plaquette, n_edges)
    charges = [_charge(w, n_edges) for w in loops]
    total = 0.0
    for signs in sign_choices:
        n = sum((s * q for s, q in zip(signs, charges)), np.zeros(n_edges, int))
        k = _multiple(n, p)
        if k is not None:
            total += plaquette_moment(abs(k), a)
    return total


def _multiple(n, p):
    if not n.any():
        return 0
    i = int(np.flatnonzero(p)[0])
    k = n[i] // p[i]
    return int(k) if np.array_equal(n, k * p) else None


def random_word(rng, n_edges, length, e=None, m=None):
    """Random word; optionally forced to contain edge ``e`` exactly ``m`` times."""
    from masterloop.loop_algebra import LoopWord

    while True:
        pairs = [(int(rng.integers(n_edges)), int(rng.choice([1, -1]))) for _ in range(length)]
        if e is None:
            return LoopWord.from_pairs(pairs)
        count = sum(1 for k, _ in pairs if k == e)
        if (m is None and count >= 1) or count == m:
            return LoopWord.from_pairs(pairs)
