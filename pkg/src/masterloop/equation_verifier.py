"""Monte Carlo checks of the master loop equations and of integration by parts.

Every term of the loop equation is the expectation of a product of Wilson
values. All terms are measured on one shared sample stream, and the residual
``lhs - rhs`` is estimated as a single linear combination of batch means, so
its standard error reflects the correlation between the two sides.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from masterloop import group_geometry as gg
from masterloop import loop_algebra as la
from masterloop import yang_mills_sampler as ym
from masterloop.group_geometry import GroupSpec, TangentVector
from masterloop.lattice_complex import CellComplex, plaquettes_containing
from masterloop.loop_algebra import LoopWord
from masterloop.yang_mills_sampler import ChainParams, Estimate

log = logging.getLogger(__name__)

__all__ = [
    "Term",
    "TermRecord",
    "TermReport",
    "IbpCheck",
    "PairReport",
    "NonConvergence",
    "enumerate_terms_so",
    "enumerate_terms_un",
    "verify_mle",
    "verify_ibp",
    "verify_exchangeable_pair",
    "verify_extrinsic_sd",
    "ambient_derivatives",
    "extrinsic_laplacian",
    "extrinsic_pairing",
    "gauge_transform",
    "reorient_loops",
    "reorient_links",
    "generator_check",
]

TERM_KINDS = ("twist+", "twist-", "split+", "split-", "merger+", "merger-", "deform+", "deform-", "su_correction")


class NonConvergence(RuntimeError):
    """The residual standard error stayed above the requested ceiling."""


@dataclass(frozen=True)
class Term:
    """``coefficient * E[prod_k W(loops[k])]`` generated by a surgery at ``indices``."""

    kind: str
    indices: tuple
    coefficient: complex
    loops: tuple[LoopWord, ...]

    @property
    def key(self) -> str:
        return "|".join(la.format_loop(w) if len(w) else "()" for w in self.loops)


def _check_first(loops: Sequence[LoopWord], e: int, c: CellComplex | None):
    if not loops:
        raise ValueError("need at least one loop")
    if c is not None:
        c.check_edge(e)
    occ = la.occurrences(loops[0], e)
    if occ.m == 0:
        raise ValueError(f"edge {e} does not occur in the distinguished loop {la.format_loop(loops[0])}")
    return occ


def _positive_plaquettes(c: CellComplex, e: int) -> list[int]:
    return sorted({o.plaquette for o in plaquettes_containing(c, e, positive_only=True)})


def _deformations(l1: LoopWord, e: int, c: CellComplex, rest: tuple, coef: float) -> list[Term]:
    out = []
    o1 = la.occurrences(l1, e)
    for p in _positive_plaquettes(c, e):
        word = c.boundary(p)
        for x, y in itertools.product(o1.positions, la.occurrences(word, e).positions):
            out.append(Term("deform-", (x, y, p), coef, (la.negative_merger(l1, x, word, y),) + rest))
            out.append(Term("deform+", (x, y, p), -coef, (la.positive_merger(l1, x, word, y),) + rest))
    return out


def enumerate_terms_so(loops: Sequence[LoopWord], e: int, c: CellComplex, N: int, beta: float,
                       flip_twist_signs: bool = False) -> tuple[Term, list[Term]]:
    """Left-hand term and right-hand terms of the SO(N) master loop equation.

    ``flip_twist_signs`` negates both twist sums; it exists only to show that
    the alternative sign reading is rejected by the data.
    """
    occ = _check_first(loops, e, c)
    l1, others = loops[0], tuple(loops[1:])
    lhs = Term("lhs", (), (N - 1) * occ.m, tuple(loops))
    ts = -1.0 if flip_twist_signs else 1.0
    terms: list[Term] = []
    for (x, wx), (y, wy) in itertools.permutations(occ.C, 2):
        if wx * wy == 1:
            terms.append(Term("twist-", (x, y), ts, (la.negative_twist(l1, x, y),) + others))
            terms.append(Term("split+", (x, y), -1.0, la.positive_split(l1, x, y) + others))
        else:
            terms.append(Term("twist+", (x, y), -ts, (la.positive_twist(l1, x, y),) + others))
            terms.append(Term("split-", (x, y), 1.0, la.negative_split(l1, x, y) + others))
    for i in range(1, len(loops)):
        li = loops[i]
        rest = tuple(w for j, w in enumerate(loops) if j not in (0, i))
        for x, y in itertools.product(occ.positions, la.occurrences(li, e).positions):
            terms.append(Term("merger-", (i, x, y), 1.0, (la.negative_merger(l1, x, li, y),) + rest))
            terms.append(Term("merger+", (i, x, y), -1.0, (la.positive_merger(l1, x, li, y),) + rest))
    terms += _deformations(l1, e, c, others, beta * N)
    return lhs, terms


def enumerate_terms_un(loops: Sequence[LoopWord], e: int, c: CellComplex, spec: GroupSpec,
                       beta: float) -> tuple[Term, list[Term]]:
    """Left-hand term and right-hand terms of the U(N) / SU(N) master loop equation."""
    if spec.is_real:
        raise ValueError("use enumerate_terms_so for SO(N)")
    occ = _check_first(loops, e, c)
    n, eta = spec.N, spec.eta
    l1, others = loops[0], tuple(loops[1:])
    t_all = sum(la.occurrences(w, e).t for w in loops)
    lhs = Term("lhs", (), occ.m * n - eta * occ.t * t_all / n, tuple(loops))
    terms: list[Term] = []
    for (x, wx), (y, wy) in itertools.permutations(occ.C, 2):
        if wx * wy == 1:
            terms.append(Term("split+", (x, y), -1.0, la.positive_split(l1, x, y) + others))
        else:
            terms.append(Term("split-", (x, y), 1.0, la.negative_split(l1, x, y) + others))
    for i in range(1, len(loops)):
        li = loops[i]
        rest = tuple(w for j, w in enumerate(loops) if j not in (0, i))
        for (x, wx), (y, wy) in itertools.product(occ.C, la.occurrences(li, e).C):
            if wx * wy == -1:
                terms.append(Term("merger-", (i, x, y), 1.0, (la.negative_merger(l1, x, li, y),) + rest))
            else:
                terms.append(Term("merger+", (i, x, y), -1.0, (la.positive_merger(l1, x, li, y),) + rest))
    terms += _deformations(l1, e, c, others, beta * n / 2)
    if eta:
        for p in _positive_plaquettes(c, e):
            for sign in (1, -1):
                word = c.boundary(p, sign)
                tq = la.occurrences(word, e).t
                if tq == 0:
                    continue
                terms.append(Term("su_correction", (p if sign == 1 else -(p + 1),),
                                  -eta * beta / 2 * occ.t * tq, (l1, la.inverse(word)) + others))
    return lhs, terms


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class TermRecord:
    kind: str
    indices: tuple
    coefficient: complex
    estimate: Estimate
    words: tuple[str, ...] = ()


@dataclass
class TermReport:
    terms: list[TermRecord]
    lhs_coefficient: float
    lhs: Estimate
    rhs: Estimate
    residual: Estimate
    zscore: float
    threshold: float = 4.0
    stderr_floor: float = 1e-12
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.zscore < self.threshold)

    def rows(self) -> list[dict]:
        """CSV rows; estimates are of the Wilson products, before multiplying by the coefficient."""
        k = self.lhs_coefficient if self.lhs_coefficient else 1.0
        out = [{"term_kind": "lhs", "indices": "", "coefficient": _fmt(self.lhs_coefficient),
                "estimate_re": self.lhs.mean.real / k, "estimate_im": self.lhs.mean.imag / k,
                "stderr": self.lhs.stderr / abs(k)}]
        for t in self.terms:
            out.append({"term_kind": t.kind, "indices": " ".join(str(i) for i in t.indices),
                        "coefficient": _fmt(t.coefficient), "estimate_re": t.estimate.mean.real,
                        "estimate_im": t.estimate.mean.imag, "stderr": t.estimate.stderr})
        return out

    def summary(self) -> dict:
        return {"lhs": _cplx(self.lhs), "rhs": _cplx(self.rhs), "residual": _cplx(self.residual),
                "zscore": self.zscore, "threshold": self.threshold, "stderr_floor": self.stderr_floor,
                "pass": self.passed, "n_terms": len(self.terms), **self.diagnostics}


def _fmt(c) -> str:
    c = complex(c)
    return repr(c.real) if c.imag == 0 else repr(c)


def _cplx(est: Estimate) -> dict:
    return {"re": est.mean.real, "im": est.mean.imag, "stderr": est.stderr, "n_samples": est.n_samples}


def _z(est: Estimate, floor: float) -> float:
    return est.zscore(0.0, floor)


def _product_fn(loops: Sequence[LoopWord]):
    loops = tuple(loops)

    def fn(links):
        out = np.ones(links.shape[:-3], complex)
        for w in loops:
            out = out * la.wilson(w, links)
        return out

    return fn


def _run(c: CellComplex, params: ChainParams, observables: dict, haar_samples: int | None = None):
    if params.beta == 0.0 and haar_samples:
        return ym.haar_stream(c, params.spec, observables, haar_samples, params.seed, params.n_batches)
    return ym.run_chain(c, params, observables)


def verify_mle(loops: Sequence[LoopWord], e: int, c: CellComplex, params: ChainParams, threshold: float = 4.0,
               stderr_floor: float = 1e-12, max_stderr: float | None = None,
               flip_twist_signs: bool = False) -> TermReport:
    """Estimate every term of the master loop equation on one sample stream.

    The distinguished loop is ``loops[0]``. The report passes when the residual
    zscore, with its standard error floored at ``stderr_floor``, is below
    ``threshold``.
    """
    spec = params.spec
    if spec.is_real:
        lhs, terms = enumerate_terms_so(loops, e, c, spec.N, params.beta, flip_twist_signs)
    else:
        lhs, terms = enumerate_terms_un(loops, e, c, spec, params.beta)
    obs = {lhs.key: _product_fn(lhs.loops)}
    for t in terms:
        obs.setdefault(t.key, _product_fn(t.loops))
    res = ym.run_chain(c, params, obs)
    records = [TermRecord(t.kind, t.indices, t.coefficient, res.estimate(t.key),
                          tuple(la.format_loop(w) for w in t.loops)) for t in terms]
    lhs_est = res.estimate_combination({lhs.key: lhs.coefficient})
    rhs_coeffs: dict[str, complex] = {}
    for t in terms:
        rhs_coeffs[t.key] = rhs_coeffs.get(t.key, 0) + t.coefficient
    rhs_est = res.estimate_combination(rhs_coeffs) if rhs_coeffs else Estimate(0j, 0.0, lhs_est.n_samples)
    resid_coeffs = {k: -v for k, v in rhs_coeffs.items()}
    resid_coeffs[lhs.key] = resid_coeffs.get(lhs.key, 0) + lhs.coefficient
    resid = res.estimate_combination(resid_coeffs)
    if max_stderr is not None and resid.stderr > max_stderr:
        raise NonConvergence(f"residual stderr {resid.stderr:.3g} above {max_stderr:.3g}")
    diag = {"group": str(spec), "beta": params.beta, "sampler": params.sampler, "acceptance": res.acceptance,
            "step": res.step, "loops": [la.format_loop(w) for w in loops], "edge": e, **res.diagnostics}
    return TermReport(records, float(np.real(lhs.coefficient)), lhs_est, rhs_est, resid, _z(resid, stderr_floor),
                      threshold, stderr_floor, diag)


# ---------------------------------------------------------------------------
# integration by parts, intrinsic


@dataclass
class IbpCheck:
    lhs: Estimate
    rhs: Estimate
    residual: Estimate
    zscore: float
    threshold: float = 4.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.zscore < self.threshold)

    def summary(self) -> dict:
        return {"lhs": _cplx(self.lhs), "rhs": _cplx(self.rhs), "residual": _cplx(self.residual),
                "zscore": self.zscore, "threshold": self.threshold, "pass": self.passed, **self.diagnostics}


def _values(loops, links):
    return [la.wilson(w, links) for w in loops]


def _prod(vals, skip=(), shape=()):
    out = np.ones(shape, complex)
    for i, v in enumerate(vals):
        if i not in skip:
            out = out * v
    return out


def product_grad(loops: Sequence[LoopWord], e: int, links: np.ndarray, spec: GroupSpec) -> TangentVector:
    """Gradient at edge ``e`` of ``prod_k W(loops[k])`` (zero for the empty product)."""
    g = links[..., e, :, :]
    shape = links.shape[:-3]
    out = TangentVector(g, np.zeros_like(g, dtype=complex), np.zeros_like(g, dtype=complex))
    vals = _values(loops, links)
    for a, w in enumerate(loops):
        out = out + gg.grad_wilson(w, e, links, spec).scaled(_prod(vals, (a,), shape))
    return out


def product_laplacian(loops: Sequence[LoopWord], e: int, links: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Laplacian at edge ``e`` of ``prod_k W(loops[k])`` by the product rule."""
    shape = links.shape[:-3]
    vals = _values(loops, links)
    grads = [gg.grad_wilson(w, e, links, spec) for w in loops]
    out = np.zeros(shape, complex)
    for a, w in enumerate(loops):
        out = out + gg.laplacian_wilson(w, e, links, spec) * _prod(vals, (a,), shape)
    for a, b in itertools.combinations(range(len(loops)), 2):
        out = out + 2 * gg.cinner(grads[a], grads[b]) * _prod(vals, (a, b), shape)
    return out


def _action_tangent(links, c, beta, spec, e):
    g = links[..., e, :, :]
    return TangentVector(g, ym.action_gradient(links, c, beta, spec, e))


def verify_ibp(f: Sequence[LoopWord], g: Sequence[LoopWord], e: int, measure: str, params: ChainParams,
               c: CellComplex, samples: int = 200_000, threshold: float = 4.0,
               stderr_floor: float = 1e-12) -> IbpCheck:
    """Paired estimate of ``E[g Lap f]`` against ``-E[<grad f, grad g>]`` (plus the action term).

    ``f`` and ``g`` are products of Wilson loops; an empty sequence is the constant 1.
    ``measure`` is ``"haar"`` (exact i.i.d. sampling) or ``"yang-mills"`` (chain).
    """
    spec = params.spec
    f, g = tuple(f), tuple(g)
    c.check_edge(e)
    if measure not in ("haar", "yang-mills"):
        raise ValueError(f"unknown measure {measure!r}")
    ym_measure = measure == "yang-mills" and params.beta != 0

    def lhs(links):
        return _product_fn(g)(links) * product_laplacian(f, e, links, spec)

    def rhs(links):
        gf = product_grad(f, e, links, spec)
        out = -gg.cinner(gf, product_grad(g, e, links, spec))
        if ym_measure:
            out = out - _product_fn(g)(links) * gg.cinner(gf, _action_tangent(links, c, params.beta, spec, e))
        return out

    obs = {"lhs": lhs, "rhs": rhs}
    if measure == "haar":
        res = ym.haar_stream(c, spec, obs, samples, params.seed, params.n_batches)
    else:
        res = ym.run_chain(c, params, obs)
    resid = res.estimate_combination({"lhs": 1, "rhs": -1})
    return IbpCheck(res.estimate("lhs"), res.estimate("rhs"), resid, _z(resid, stderr_floor), threshold,
                    {"measure": measure, "group": str(spec)})


# ---------------------------------------------------------------------------
# exchangeable pairs


@dataclass
class PairLevel:
    eps: float
    lhs: Estimate
    rhs: Estimate
    residual: Estimate
    zscore: float
    scaled_lhs: Estimate
    scaled_rhs: Estimate
    err_lhs: Estimate
    err_rhs: Estimate


@dataclass
class PairReport:
    levels: list[PairLevel]
    target_lhs: Estimate
    target_rhs: Estimate
    ratios_lhs: list[float]
    ratios_rhs: list[float]
    threshold: float = 4.0
    ratio_range: tuple[float, float] = (2.0, 8.0)

    @property
    def identity_passed(self) -> bool:
        return all(lv.zscore < self.threshold for lv in self.levels)

    @property
    def trend_passed(self) -> bool:
        lo, hi = self.ratio_range
        return all(lo <= r <= hi for r in self.ratios_lhs + self.ratios_rhs)

    @property
    def passed(self) -> bool:
        return self.identity_passed and self.trend_passed

    def summary(self) -> dict:
        return {
            "levels": [{"eps": lv.eps, "lhs": _cplx(lv.lhs), "rhs": _cplx(lv.rhs), "zscore": lv.zscore,
                        "scaled_lhs": _cplx(lv.scaled_lhs), "scaled_rhs": _cplx(lv.scaled_rhs),
                        "err_lhs": _cplx(lv.err_lhs), "err_rhs": _cplx(lv.err_rhs)} for lv in self.levels],
            "target_lhs": _cplx(self.target_lhs), "target_rhs": _cplx(self.target_rhs),
            "ratios_lhs": self.ratios_lhs, "ratios_rhs": self.ratios_rhs, "pass": self.passed,
        }


def verify_exchangeable_pair(f: Sequence[LoopWord], g: Sequence[LoopWord], eps: Sequence[float], spec: GroupSpec,
                             e: int = 0, n_edges: int | None = None, samples: int = 20_000, seed: int = 0,
                             n_batches: int = 50, threshold: float = 4.0, chunk: int = 1000) -> PairReport:
    """Exchangeable-pair identity with ``U' = exp(+-eps A_k) U`` at edge ``e`` and Haar ``U``.

    For every Haar sample the move is averaged exactly over all ``2 d`` choices
    of direction and sign (``d = dim G``). The scaled quantities ``2d/eps^2``
    times each side are compared, sample by sample, with ``g Lap f`` and
    ``-<grad f, grad g>``; the ratios of these errors across successive
    halvings of ``eps`` should be close to 4.
    """
    f, g = tuple(f), tuple(g)
    eps = [float(x) for x in eps]
    if any(x <= 0 for x in eps):
        raise ValueError("eps must be positive")
    if n_edges is None:
        n_edges = 1 + max([e] + [r.edge for w in f + g for r in w])
    fn, gn = _product_fn(f), _product_fn(g)
    basis = gg.algebra_basis(spec)
    d = spec.dim
    moves = {x: [ym._expm_algebra(s * x * a, spec) for a in basis for s in (1, -1)] for x in eps}

    def make(x, which):
        def obs(links):
            f0, g0 = fn(links), gn(links)
            lhs = np.zeros_like(f0)
            rhs = np.zeros_like(f0)
            for m in moves[x]:
                moved = links.copy()
                moved[..., e, :, :] = m @ links[..., e, :, :]
                df = fn(moved) - f0
                lhs = lhs + df * g0
                rhs = rhs - 0.5 * df * (gn(moved) - g0)
            lhs, rhs = lhs / (2 * d), rhs / (2 * d)
            scale = 2 * d / x**2
            if which == "lhs":
                return lhs
            if which == "rhs":
                return rhs
            if which == "err_lhs":
                return scale * lhs - g0 * product_laplacian(f, e, links, spec)
            return scale * rhs + gg.cinner(product_grad(f, e, links, spec), product_grad(g, e, links, spec))
        return obs

    obs = {"t_lhs": lambda L: gn(L) * product_laplacian(f, e, L, spec),
           "t_rhs": lambda L: -gg.cinner(product_grad(f, e, L, spec), product_grad(g, e, L, spec))}
    for x in eps:
        for which in ("lhs", "rhs", "err_lhs", "err_rhs"):
            obs[f"{which}@{x}"] = make(x, which)
    c = _edge_bag(n_edges)
    res = ym.haar_stream(c, spec, obs, samples, seed, n_batches, chunk=chunk)
    levels = []
    for x in eps:
        scale = 2 * d / x**2
        resid = res.estimate_combination({f"lhs@{x}": 1, f"rhs@{x}": -1})
        levels.append(PairLevel(
            x, res.estimate(f"lhs@{x}"), res.estimate(f"rhs@{x}"), resid, _z(resid, 1e-15),
            res.estimate_combination({f"lhs@{x}": scale}), res.estimate_combination({f"rhs@{x}": scale}),
            res.estimate(f"err_lhs@{x}"), res.estimate(f"err_rhs@{x}")))
    ratios_l = [abs(a.err_lhs.mean) / abs(b.err_lhs.mean) for a, b in zip(levels, levels[1:])]
    ratios_r = [abs(a.err_rhs.mean) / abs(b.err_rhs.mean) for a, b in zip(levels, levels[1:])]
    return PairReport(levels, res.estimate("t_lhs"), res.estimate("t_rhs"), ratios_l, ratios_r, threshold)


def _edge_bag(n_edges: int) -> CellComplex:
    """A complex with ``n_edges`` edges and no plaquettes, for Haar sampling only."""
    from masterloop.lattice_complex import _assemble

    return _assemble((n_edges,), False, ((0,),), tuple((0, 0) for _ in range(n_edges)),
                     tuple(((k,), 0) for k in range(n_edges)), (), ())


# ---------------------------------------------------------------------------
# extrinsic form on SO(N)


def ambient_derivatives(loop: LoopWord, e: int, links: np.ndarray):
    """Value, first and second ambient partial derivatives of ``Tr Q(loop)`` in the entries of ``Q_e``.

    Inverse links are written as transposes, so the trace is a polynomial in
    the entries ``q_aj`` of ``q = Q_e``. Returns ``(W, D, H)`` with
    ``D[..., a, j] = dW/dq_aj`` and ``H[..., b, i, a, j] = d2W/dq_bi dq_aj``.
    """
    links = np.asarray(links)
    n = links.shape[-1]
    shape = links.shape[:-3]
    w = la.wilson(loop, links)
    occ = la.occurrences(loop, e)
    d = np.zeros(shape + (n, n), links.dtype)
    h = np.zeros(shape + (n, n, n, n), links.dtype)
    for x, wx in occ.C:
        r = la.holonomy(la.excise(loop, x), links)
        d = d + (np.swapaxes(r, -1, -2) if wx == 1 else r)
    for (x, wx), (y, wy) in itertools.permutations(occ.C, 2):
        _, _, pp, pm = la._segments(loop, x, y)
        a_, b_ = la.holonomy(pp, links), la.holonomy(pm, links)
        if wx == 1 and wy == 1:
            h = h + np.einsum("...jb,...ia->...biaj", a_, b_)
        elif wx == 1:
            h = h + np.einsum("...ji,...ba->...biaj", a_, b_)
        elif wy == 1:
            h = h + np.einsum("...ab,...ij->...biaj", a_, b_)
        else:
            h = h + np.einsum("...ai,...bj->...biaj", a_, b_)
    return w, d, h


def product_ambient(loops: Sequence[LoopWord], e: int, links: np.ndarray):
    """``(f, D, H)`` of a product of Wilson loops by the product rule."""
    links = np.asarray(links)
    n = links.shape[-1]
    shape = links.shape[:-3]
    parts = [ambient_derivatives(w, e, links) for w in loops]
    vals = [p[0] for p in parts]
    f = _prod(vals, (), shape).real
    d = np.zeros(shape + (n, n))
    h = np.zeros(shape + (n, n, n, n))
    for a, (_, da, ha) in enumerate(parts):
        ca = _prod(vals, (a,), shape).real
        d = d + ca[..., None, None] * da
        h = h + ca[..., None, None, None, None] * ha
    for a, b in itertools.permutations(range(len(parts)), 2):
        cab = _prod(vals, (a, b), shape).real
        h = h + cab[..., None, None, None, None] * np.einsum("...bi,...aj->...biaj", parts[b][1], parts[a][1])
    return f, d, h


def extrinsic_laplacian(q: np.ndarray, d: np.ndarray, h: np.ndarray) -> np.ndarray:
    """``-(N-1) sum q_aj D_aj + sum H_aj,aj - sum q_ai q_bj H_bi,aj`` on SO(N)."""
    n = q.shape[-1]
    first = -(n - 1) * np.einsum("...aj,...aj->...", q, d)
    second = np.einsum("...ajaj->...", h)
    third = np.einsum("...ai,...bj,...biaj->...", q, q, h)
    return first + second - third


def extrinsic_pairing(q: np.ndarray, df: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """``sum Df_aj Dg_aj - sum q_ai q_bj Df_aj Dg_bi``: the gradient pairing from ambient derivatives."""
    return np.einsum("...aj,...aj->...", df, dg) - np.einsum("...ai,...bj,...aj,...bi->...", q, q, df, dg)


@dataclass
class ExtrinsicReport:
    lhs: Estimate
    rhs: Estimate
    residual: Estimate
    zscore: float
    intrinsic_gap: Estimate
    threshold: float = 4.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.zscore < self.threshold)

    def summary(self) -> dict:
        return {"lhs": _cplx(self.lhs), "rhs": _cplx(self.rhs), "residual": _cplx(self.residual),
                "zscore": self.zscore, "intrinsic_gap": _cplx(self.intrinsic_gap), "pass": self.passed,
                **self.diagnostics}


def _ambient_action(links, c, beta, n, e):
    dS = np.zeros(links.shape[:-3] + (n, n))
    for p in sorted({o.plaquette for o in plaquettes_containing(c, e, positive_only=True)}):
        dS = dS + ambient_derivatives(c.boundary(p), e, links)[1]
    return beta * n * dS


def verify_extrinsic_sd(f: Sequence[LoopWord], g: Sequence[LoopWord], e: int, measure: str, params: ChainParams,
                        c: CellComplex, samples: int = 200_000, threshold: float = 4.0,
                        stderr_floor: float = 1e-12) -> ExtrinsicReport:
    """Schwinger-Dyson equation in ambient coordinates on SO(N).

    Left side ``(N-1) E[g sum q_aj df/dq_aj]``; right side the second-order
    ambient terms plus the gradient pairing (and the action pairing under the
    Yang-Mills measure). The intrinsic form is measured on the same stream:
    ``intrinsic_gap`` estimates the pointwise difference between the two forms,
    which must vanish identically.
    """
    spec = params.spec
    if not spec.is_real:
        raise ValueError(f"the extrinsic form is only available for SO(N), not {spec}")
    if measure not in ("haar", "yang-mills"):
        raise ValueError(f"unknown measure {measure!r}")
    f, g = tuple(f), tuple(g)
    n = spec.N
    ym_measure = measure == "yang-mills" and params.beta != 0

    def sides(links):
        q = links[..., e, :, :]
        fv, df, hf = product_ambient(f, e, links)
        gv, dg, _ = product_ambient(g, e, links)
        lhs = (n - 1) * gv * np.einsum("...aj,...aj->...", q, df)
        second = np.einsum("...ajaj->...", hf) - np.einsum("...ai,...bj,...biaj->...", q, q, hf)
        rhs = gv * second + extrinsic_pairing(q, df, dg)
        intrinsic = gv * product_laplacian(f, e, links, spec).real + gg.cinner(
            product_grad(f, e, links, spec), product_grad(g, e, links, spec)).real
        if ym_measure:
            dS = _ambient_action(links, c, params.beta, n, e)
            rhs = rhs + gv * extrinsic_pairing(q, df, dS)
            intrinsic = intrinsic + gv * gg.cinner(product_grad(f, e, links, spec),
                                                   _action_tangent(links, c, params.beta, spec, e)).real
        # lhs - rhs equals -(intrinsic expression) pointwise
        return lhs, rhs, (lhs - rhs) + intrinsic

    obs = {"lhs": lambda L: sides(L)[0], "rhs": lambda L: sides(L)[1], "gap": lambda L: sides(L)[2]}
    if measure == "haar":
        res = ym.haar_stream(c, spec, obs, samples, params.seed, params.n_batches)
    else:
        res = ym.run_chain(c, params, obs)
    resid = res.estimate_combination({"lhs": 1, "rhs": -1})
    return ExtrinsicReport(res.estimate("lhs"), res.estimate("rhs"), resid, _z(resid, stderr_floor),
                           res.estimate("gap"), threshold, {"measure": measure, "group": str(spec)})


# ---------------------------------------------------------------------------
# invariance helpers and diagnostics


def gauge_transform(links: np.ndarray, c: CellComplex, h: np.ndarray) -> np.ndarray:
    """Apply vertex gauge elements ``h[v]``: ``Q_e -> h[tail] Q_e h[head]^-1``."""
    links = np.asarray(links)
    out = links.copy()
    for k, (a, b) in enumerate(c.edges):
        out[..., k, :, :] = h[..., a, :, :] @ links[..., k, :, :] @ np.conj(np.swapaxes(h[..., b, :, :], -1, -2))
    return out


def reorient_loops(loops: Sequence[LoopWord], edge_flips: Sequence[bool]) -> list[LoopWord]:
    """Rewrite loop words for a complex in which the flagged edges are reversed."""
    flips = set(i for i, f in enumerate(edge_flips) if f)
    return [LoopWord(tuple(la.EdgeRef(r.edge, -r.orientation if r.edge in flips else r.orientation)
                           for r in w.word)) for w in loops]


def reorient_links(links: np.ndarray, edge_flips: Sequence[bool]) -> np.ndarray:
    """Configuration with reversed edges carrying the inverse matrix."""
    out = np.array(links, copy=True)
    for i, f in enumerate(edge_flips):
        if f:
            out[..., i, :, :] = np.conj(np.swapaxes(out[..., i, :, :], -1, -2))
    return out


def generator_check(loop: LoopWord, links: np.ndarray, c: CellComplex, params: ChainParams, dt: float = 1e-4,
                    pairs: int = 20_000, seed: int = 0) -> tuple[float, float, float]:
    """Compare ``(E f(Q_dt) - f(Q)) / dt`` for one Langevin step with ``(Lap f + <grad S, grad f>) / 2``.

    ``links`` is a single configuration ``(E, N, N)``. Antithetic noise pairs
    remove the first-order noise term from the Monte Carlo average. Returns
    ``(empirical, exact, stderr)`` for the real part of the Wilson value.
    """
    spec = params.spec
    rng = np.random.default_rng(seed)
    f0 = la.wilson(loop, links).real
    exact = 0.0
    for e in range(c.n_edges):
        exact += 0.5 * gg.laplacian_wilson(loop, e, links, spec).real
        grad = gg.grad_wilson(loop, e, links, spec)
        exact += 0.5 * gg.cinner(TangentVector(grad.base, grad.re), _action_tangent(links, c, params.beta, spec,
                                                                                     e)).real
    drift = np.stack([ym.action_gradient(links, c, params.beta, spec, e) for e in range(c.n_edges)])
    a = np.conj(np.swapaxes(links, -1, -2)) @ drift
    a = 0.5 * (a - np.conj(np.swapaxes(a, -1, -2)))
    if spec.family == "SU":
        a = a - (np.trace(a, axis1=-2, axis2=-1) / spec.N)[..., None, None] * np.eye(spec.N)
    xi = gg.random_algebra(spec, rng, (pairs, c.n_edges))
    vals = []
    for s in (1, -1):
        new = links @ ym._expm_algebra(0.5 * dt * a + s * np.sqrt(dt) * xi, spec)
        vals.append(la.wilson(loop, new).real)
    samples = (0.5 * (vals[0] + vals[1]) - f0) / dt
    return float(samples.mean()), float(exact), float(samples.std(ddof=1) / np.sqrt(pairs))
