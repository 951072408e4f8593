"""Monte Carlo sampling of the lattice Yang-Mills measure.

The target density on ``G^E`` relative to Haar measure is ``exp(S(Q))`` with

    S(Q) = beta * N * sum_p f(Q(boundary p)),   f = Tr (SO) or Re Tr (SU, U).

Chains are vectorised: a configuration array has shape ``(C, E, N, N)`` and
``C`` independent chains advance together. Observables are accumulated into
batch sums on the fly, so arbitrarily long runs use constant memory.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from masterloop import group_geometry as gg
from masterloop import loop_algebra as la
from masterloop.group_geometry import GroupSpec
from masterloop.lattice_complex import CellComplex, plaquettes_containing

log = logging.getLogger(__name__)

__all__ = [
    "Configuration",
    "ChainParams",
    "Estimate",
    "ChainResult",
    "SamplerError",
    "action",
    "identity_configuration",
    "haar_configuration",
    "metropolis_sweep",
    "langevin_step",
    "action_gradient",
    "accept",
    "haar_stream",
    "run_chain",
    "estimate",
    "combine_estimates",
]

Observable = Callable[[np.ndarray], np.ndarray]


class SamplerError(RuntimeError):
    pass


@dataclass
class Configuration:
    """Links of one or many chains, shape ``(E, N, N)`` or ``(C, E, N, N)``."""

    spec: GroupSpec
    links: np.ndarray

    @property
    def n_chains(self) -> int | None:
        return self.links.shape[0] if self.links.ndim == 4 else None

    def residual(self) -> float:
        return gg.membership_residual(self.links, self.spec)


@dataclass(frozen=True)
class ChainParams:
    beta: float
    spec: GroupSpec
    sweeps: int
    burn_in: int = 0
    step: float = 0.4
    dt: float = 0.01
    seed: int = 0
    n_batches: int = 50
    chains: int = 1
    sampler: str = "metropolis"
    tune: bool = True
    repair_tol: float = 1e-9
    measure_every: int = 1

    def __post_init__(self):
        if not self.sweeps > self.burn_in >= 0:
            raise ValueError(f"need sweeps > burn_in >= 0, got sweeps={self.sweeps}, burn_in={self.burn_in}")
        if self.step <= 0 or self.dt <= 0:
            raise ValueError("step and dt must be positive")
        if self.sampler not in ("metropolis", "langevin"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.n_batches < 2:
            raise ValueError("need at least 2 batches")
        n_meas = (self.sweeps - self.burn_in) // self.measure_every
        if self.chains * n_meas < 2 * self.n_batches:
            raise ValueError("too few post burn-in samples for the requested number of batches")

    @property
    def post_burn_in(self) -> int:
        return self.sweeps - self.burn_in


@dataclass(frozen=True)
class Estimate:
    mean: complex
    stderr: float
    n_samples: int
    n_batches: int = 0
    batched: bool = True

    @property
    def real(self) -> float:
        return float(np.real(self.mean))

    def zscore(self, target: complex = 0.0, floor: float = 0.0) -> float:
        return float(abs(self.mean - target) / max(self.stderr, floor)) if max(self.stderr, floor) > 0 else (
            0.0 if self.mean == target else np.inf)

    def __sub__(self, other: "Estimate") -> "Estimate":
        # only valid for independent estimates
        return Estimate(self.mean - other.mean, float(np.hypot(self.stderr, other.stderr)),
                        min(self.n_samples, other.n_samples), min(self.n_batches, other.n_batches))


def _stderr(batch_means: np.ndarray) -> float:
    k = batch_means.shape[0]
    re = np.var(batch_means.real, ddof=1) / k
    im = np.var(batch_means.imag, ddof=1) / k if np.iscomplexobj(batch_means) else 0.0
    return float(np.sqrt(re + im))


def estimate(samples: np.ndarray, n_batches: int = 50) -> Estimate:
    """Batch-means estimate of the mean of a sample stream.

    ``samples`` has shape ``(T,)`` for one chain or ``(T, C)`` for ``C`` chains.
    With at least ``n_batches`` chains the batches are groups of whole chains;
    otherwise each chain is cut into contiguous time blocks.
    """
    x = np.asarray(samples)
    if x.ndim == 1:
        x = x[:, None]
    t, c = x.shape
    acc = _Accumulator(1, c, t, n_batches)
    for i in range(t):
        acc.add(i, x[i][None, :])
    return acc.estimate(np.array([1.0]))


def combine_estimates(parts: list[Estimate]) -> Estimate:
    """Merge estimates of the same quantity from independent runs (weighted by samples)."""
    w = np.array([p.n_samples for p in parts], float)
    w /= w.sum()
    mean = complex(np.sum(w * np.array([p.mean for p in parts])))
    se = float(np.sqrt(np.sum((w * np.array([p.stderr for p in parts])) ** 2)))
    return Estimate(mean, se, sum(p.n_samples for p in parts), sum(p.n_batches for p in parts))


class _Accumulator:
    """Streaming batch sums for a set of observables over ``C`` chains."""

    def __init__(self, n_obs: int, chains: int, n_times: int, n_batches: int):
        if chains * n_times < 2 or n_batches < 2:
            raise SamplerError("insufficient samples for batch means")
        self.chains, self.n_times = chains, n_times
        if chains >= n_batches:
            self.per_chain = 1
            self.chain_batch = (np.arange(chains) * n_batches) // chains
            self.total = n_batches
        else:
            self.per_chain = -(-n_batches // chains)
            if self.per_chain > n_times:
                raise SamplerError("insufficient samples for batch means")
            self.chain_batch = np.arange(chains) * self.per_chain
            self.total = chains * self.per_chain
        self.sums = np.zeros((self.total, n_obs), complex)
        self.counts = np.zeros(self.total, int)

    def add(self, t: int, values: np.ndarray):
        """``values`` has shape ``(n_obs, C)`` for sample time ``t``."""
        b = self.chain_batch + (t * self.per_chain) // self.n_times
        np.add.at(self.sums, b, values.T)
        np.add.at(self.counts, b, 1)

    def batch_means(self) -> np.ndarray:
        ok = self.counts > 0
        return self.sums[ok] / self.counts[ok, None]

    def estimate(self, coeffs: np.ndarray) -> Estimate:
        bm = self.batch_means() @ np.asarray(coeffs, complex)
        n = int(self.counts.sum())
        w = self.counts[self.counts > 0] / n
        mean = complex(np.sum(w * bm))
        return Estimate(mean, _stderr(bm), n, len(bm))


@dataclass
class ChainResult:
    names: list[str]
    accumulator: _Accumulator
    params: ChainParams
    final: Configuration
    acceptance: float = float("nan")
    step: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    def estimate(self, name: str) -> Estimate:
        c = np.zeros(len(self.names))
        c[self.names.index(name)] = 1.0
        return self.accumulator.estimate(c)

    def estimate_combination(self, coeffs: Mapping[str, complex]) -> Estimate:
        c = np.zeros(len(self.names), complex)
        for k, v in coeffs.items():
            c[self.names.index(k)] += v
        return self.accumulator.estimate(c)

    def batch_means(self) -> np.ndarray:
        return self.accumulator.batch_means()


# ---------------------------------------------------------------------------


def _f(tr: np.ndarray, spec: GroupSpec) -> np.ndarray:
    return np.real(tr)


def action(links: np.ndarray, c: CellComplex, beta: float, spec: GroupSpec) -> np.ndarray:
    """``S(Q) = beta N sum_p f(Q(dp))`` over positively oriented plaquettes."""
    links = np.asarray(links)
    if links.shape[-3] != c.n_edges or links.shape[-1] != spec.N:
        raise ValueError(f"configuration shape {links.shape} does not match {c.n_edges} edges of {spec}")
    total = np.zeros(links.shape[:-3])
    for p in range(c.n_plaquettes):
        total = total + _f(la.wilson(c.boundary(p), links), spec)
    return beta * spec.N * total


def identity_configuration(c: CellComplex, spec: GroupSpec, chains: int | None = None) -> Configuration:
    shape = (c.n_edges, spec.N, spec.N) if chains is None else (chains, c.n_edges, spec.N, spec.N)
    links = np.broadcast_to(np.eye(spec.N, dtype=spec.dtype), shape).copy()
    return Configuration(spec, links)


def haar_configuration(c: CellComplex, spec: GroupSpec, rng: np.random.Generator,
                       chains: int | None = None) -> Configuration:
    size = (c.n_edges,) if chains is None else (chains, c.n_edges)
    return Configuration(spec, gg.haar_sample(spec, rng, size))


def _expm_algebra(a: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Exponential of (batched) Lie algebra elements via a Hermitian eigendecomposition."""
    h = -1j * a
    lam, v = np.linalg.eigh(h)
    out = (v * np.exp(1j * lam)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    return out.real.copy() if spec.is_real else out


class _Staples:
    """For each edge, the plaquette boundaries through it with the rest of the word."""

    def __init__(self, c: CellComplex):
        self.by_edge = []
        for e in range(c.n_edges):
            items, simple = [], True
            for occ in plaquettes_containing(c, e, positive_only=True):
                word = c.boundary(occ.plaquette)
                if la.occurrences(word, e).m > 1:
                    simple = False
                items.append((occ.plaquette, occ.position, occ.omega, la.excise(word, occ.position), word))
            self.by_edge.append((items, simple))


def _local_f(c: CellComplex, staples: _Staples, links: np.ndarray, e: int, g: np.ndarray, spec: GroupSpec,
             rests=None):
    """Sum of f over plaquettes containing ``e`` with link ``e`` replaced by ``g``."""
    items, simple = staples.by_edge[e]
    if not items:
        return np.zeros(links.shape[:-3]), rests
    if simple:
        if rests is None:
            rests = [la.holonomy(rest, links) for _, _, _, rest, _ in items]
        total = 0.0
        seen = set()
        for (p, _, w, _, _), r in zip(items, rests):
            if p in seen:
                continue
            seen.add(p)
            u = g if w == 1 else np.conj(np.swapaxes(g, -1, -2))
            total = total + np.real(np.einsum("...ij,...ji->...", u, r))
        return total, rests
    trial = links.copy()
    trial[..., e, :, :] = g
    total = 0.0
    for p in sorted({it[0] for it in items}):
        total = total + _f(la.wilson(c.boundary(p), trial), spec)
    return total, None


def accept(delta_s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Metropolis rule: accept with probability ``min(1, exp(delta_s))`` given uniforms ``u``."""
    return np.log(u) < delta_s


def _random_unit_algebra(spec: GroupSpec, rng: np.random.Generator, size) -> np.ndarray:
    z = rng.standard_normal(tuple(size) + (spec.dim,))
    z /= np.linalg.norm(z, axis=-1, keepdims=True)
    return np.tensordot(z, gg.algebra_basis(spec), axes=([-1], [0]))


def metropolis_sweep(cfg: Configuration, c: CellComplex, params: ChainParams, rng: np.random.Generator,
                     step: float | None = None, _staples: _Staples | None = None) -> tuple[Configuration, float]:
    """One Metropolis proposal per edge, ``g -> exp(step xi) g`` with a unit direction ``xi``.

    Returns the new configuration and the mean acceptance rate of the sweep.
    """
    spec = params.spec
    step = params.step if step is None else step
    staples = _staples or _Staples(c)
    links = cfg.links.copy()
    batch = links.shape[:-3]
    coupling = params.beta * spec.N
    accepted = 0.0
    for e in range(c.n_edges):
        g = links[..., e, :, :]
        xi = _random_unit_algebra(spec, rng, batch)
        g_new = _expm_algebra(step * xi, spec) @ g
        u = rng.random(batch)
        if coupling == 0.0:
            acc = np.ones(batch, bool)
        else:
            old, rests = _local_f(c, staples, links, e, g, spec)
            new, _ = _local_f(c, staples, links, e, g_new, spec, rests)
            acc = accept(coupling * (new - old), u)
        links[..., e, :, :] = np.where(acc[..., None, None], g_new, g)
        accepted += float(np.mean(acc))
    return Configuration(spec, links), accepted / c.n_edges


def action_gradient(links: np.ndarray, c: CellComplex, beta: float, spec: GroupSpec, e: int) -> np.ndarray:
    """Intrinsic gradient of the action with respect to link ``e`` (ambient matrix at ``Q_e``)."""
    out = np.zeros_like(links[..., e, :, :])
    for p in sorted({o.plaquette for o in plaquettes_containing(c, e, positive_only=True)}):
        out = out + gg.grad_wilson(c.boundary(p), e, links, spec).re
    return beta * spec.N * out


def langevin_step(cfg: Configuration, c: CellComplex, params: ChainParams, rng: np.random.Generator,
                  dt: float | None = None, diagnostics: dict | None = None,
                  max_residual: float = 1e-6) -> Configuration:
    """Geodesic Euler step of ``dQ = grad S / 2 dt + dB`` for every link at once.

    ``Q_e <- Q_e exp(dt/2 Q_e^-1 grad_e S + sqrt(dt) xi)`` with ``xi`` a standard
    Gaussian in an orthonormal basis of the Lie algebra.
    """
    spec = params.spec
    dt = params.dt if dt is None else dt
    links = cfg.links
    batch = links.shape[:-3]
    drift = np.stack([action_gradient(links, c, params.beta, spec, e) for e in range(c.n_edges)], axis=-3)
    a = np.conj(np.swapaxes(links, -1, -2)) @ drift
    a = 0.5 * (a - np.conj(np.swapaxes(a, -1, -2)))
    if spec.family == "SU":
        a = a - (np.trace(a, axis1=-2, axis2=-1) / spec.N)[..., None, None] * np.eye(spec.N)
    noise = gg.random_algebra(spec, rng, batch + (c.n_edges,))
    new = links @ _expm_algebra(0.5 * dt * a + np.sqrt(dt) * noise, spec)
    eye = np.eye(spec.N)
    res = np.abs(np.conj(np.swapaxes(new, -1, -2)) @ new - eye).max(axis=(-3, -2, -1))
    bad = ~np.isfinite(res) | (res > max_residual)
    if np.any(bad):
        log.warning("Langevin step dt=%g rejected in %d chain(s): constraint residual %.2e",
                    dt, int(np.sum(bad)), float(np.nanmax(np.where(np.isfinite(res), res, np.inf))))
        new = np.where(bad[..., None, None, None], links, new)
        if diagnostics is not None:
            diagnostics["rejected"] = diagnostics.get("rejected", 0) + int(np.sum(bad))
    return Configuration(spec, new)


def _repair(cfg: Configuration, tol: float) -> Configuration:
    if cfg.residual() > tol:
        return Configuration(cfg.spec, gg.reunitarize(cfg.links, cfg.spec))
    return cfg


def run_chain(c: CellComplex, params: ChainParams, observables: Mapping[str, Observable],
              start: Configuration | None = None, progress: bool = False) -> ChainResult:
    """Run ``params.chains`` chains and accumulate batch means of ``observables``.

    Each observable maps a link array ``(C, E, N, N)`` to values of shape ``(C,)``.
    Metropolis proposals are tuned during burn-in towards 30-60% acceptance.
    """
    rng = np.random.default_rng(params.seed)
    spec = params.spec
    cfg = start if start is not None else haar_configuration(c, spec, rng, params.chains)
    if cfg.links.ndim == 3:
        cfg = Configuration(spec, np.broadcast_to(cfg.links, (params.chains,) + cfg.links.shape).copy())
    names = list(observables)
    fns = [observables[k] for k in names]
    n_meas = params.post_burn_in // params.measure_every
    acc = _Accumulator(len(names), params.chains, n_meas, params.n_batches)
    staples = _Staples(c)
    step = params.step
    rates = []
    diag: dict = {}
    t = 0
    for sweep in range(params.sweeps):
        if params.sampler == "metropolis":
            cfg, rate = metropolis_sweep(cfg, c, params, rng, step, staples)
            if sweep < params.burn_in:
                if params.tune and sweep % 5 == 4:
                    if rate > 0.6:
                        step = min(step * 1.15, np.pi)
                    elif rate < 0.3:
                        step /= 1.15
            else:
                rates.append(rate)
        else:
            cfg = langevin_step(cfg, c, params, rng, diagnostics=diag)
        if sweep % 50 == 49:
            cfg = _repair(cfg, params.repair_tol)
        if sweep >= params.burn_in and (sweep - params.burn_in) % params.measure_every == 0 and t < n_meas:
            vals = np.array([np.broadcast_to(f(cfg.links), (params.chains,)) for f in fns])
            acc.add(t, vals)
            t += 1
        if progress and sweep % 100 == 0:
            log.info("sweep %d/%d", sweep, params.sweeps)
    cfg = _repair(cfg, params.repair_tol)
    return ChainResult(names, acc, params, cfg, float(np.mean(rates)) if rates else float("nan"), step,
                       {"max_residual": cfg.residual(), **diag})


def haar_stream(c: CellComplex, spec: GroupSpec, observables: Mapping[str, Observable], samples: int,
                seed: int = 0, n_batches: int = 50, chunk: int = 2000) -> ChainResult:
    """Exact i.i.d. Haar sampling (the beta = 0 measure) with the same accumulator interface."""
    rng = np.random.default_rng(seed)
    names = list(observables)
    fns = [observables[k] for k in names]
    n_chunks = -(-samples // chunk)
    acc = _Accumulator(len(names), chunk, n_chunks, n_batches)
    cfg = None
    for t in range(n_chunks):
        cfg = haar_configuration(c, spec, rng, chunk)
        acc.add(t, np.array([f(cfg.links) for f in fns]))
    params = ChainParams(beta=0.0, spec=spec, sweeps=n_chunks + 1, burn_in=1, seed=seed, n_batches=n_batches,
                         chains=chunk)
    return ChainResult(names, acc, params, cfg)


def with_sampler(params: ChainParams, **kw) -> ChainParams:
    return replace(params, **kw)
