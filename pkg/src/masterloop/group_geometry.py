"""Riemannian geometry of SO(N), SU(N) and U(N) with the bi-invariant metric.

The metric is half the Euclidean one, ``<X, Y> = Re Tr(X^dagger Y) / 2``.
Tangent vectors at ``g`` are stored as ambient matrices ``g A`` with ``A`` in
the Lie algebra. Gradients of complex valued functions are kept as a pair
``(grad Re f, grad Im f)`` and paired with the complex bilinear extension of
the metric.

All closed forms accept link arrays with leading batch axes, ``(..., E, N, N)``,
so they can be evaluated over a whole Monte Carlo stream at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from masterloop import loop_algebra as la
from masterloop.loop_algebra import LoopWord

__all__ = [
    "GroupSpec",
    "TangentVector",
    "algebra_basis",
    "frame",
    "haar_sample",
    "expm",
    "metric",
    "cinner",
    "project_tangent",
    "is_member",
    "membership_residual",
    "tangency_residual",
    "reunitarize",
    "grad_wilson",
    "grad_inner",
    "grad_inner_action",
    "trace_LR",
    "trace_LR_frame_sum",
    "laplacian_wilson",
    "fd_directional",
    "fd_laplacian",
]

FAMILIES = ("SO", "SU", "U")


@dataclass(frozen=True)
class GroupSpec:
    family: str
    N: int

    def __post_init__(self):
        fam = self.family.upper()
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise ValueError(f"unknown group family {self.family!r}; expected one of {FAMILIES}")
        if self.N < 1 or (fam in ("SO", "SU") and self.N < 2):
            raise ValueError(f"invalid N={self.N} for {fam}")

    @property
    def eta(self) -> int:
        return 1 if self.family == "SU" else 0

    @property
    def is_real(self) -> bool:
        return self.family == "SO"

    @property
    def dtype(self):
        return np.float64 if self.is_real else np.complex128

    @property
    def dim(self) -> int:
        n = self.N
        return {"SO": n * (n - 1) // 2, "U": n * n, "SU": n * n - 1}[self.family]

    def __str__(self):
        return f"{self.family}({self.N})"

    @classmethod
    def parse(cls, text: str) -> "GroupSpec":
        """``"SU(2)"`` or ``"SU2"``."""
        t = text.strip().upper().replace("(", "").replace(")", "")
        fam = t.rstrip("0123456789")
        return cls(fam, int(t[len(fam):]))


@dataclass(frozen=True)
class TangentVector:
    """Tangent vector at ``base``; ``im`` is the imaginary part of a complexified vector."""

    base: np.ndarray
    re: np.ndarray
    im: np.ndarray | None = None

    def scaled(self, c) -> "TangentVector":
        """Multiply by a complex scalar (or array of scalars broadcast over batch axes)."""
        c = np.asarray(c)[..., None, None]
        im = np.zeros_like(self.re) if self.im is None else self.im
        return TangentVector(self.base, c.real * self.re - c.imag * im, c.real * im + c.imag * self.re)

    def __add__(self, other: "TangentVector") -> "TangentVector":
        if self.im is None and other.im is None:
            return TangentVector(self.base, self.re + other.re)
        zi = np.zeros_like(self.re)
        a = zi if self.im is None else self.im
        b = zi if other.im is None else other.im
        return TangentVector(self.base, self.re + other.re, a + b)


def _dagger(a):
    return np.conj(np.swapaxes(a, -1, -2))


def _tr(a):
    return np.trace(a, axis1=-2, axis2=-1)


@lru_cache(maxsize=None)
def _basis(family: str, n: int) -> np.ndarray:
    spec = GroupSpec(family, n)
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            a = np.zeros((n, n), dtype=spec.dtype)
            a[i, j], a[j, i] = 1, -1
            out.append(a)
    if not spec.is_real:
        for i in range(n):
            for j in range(i + 1, n):
                a = np.zeros((n, n), dtype=complex)
                a[i, j] = a[j, i] = 1j
                out.append(a)
        if family == "U":
            for i in range(n):
                a = np.zeros((n, n), dtype=complex)
                a[i, i] = np.sqrt(2) * 1j
                out.append(a)
        else:
            # orthonormal basis of traceless real diagonals
            for k in range(1, n):
                h = np.zeros(n)
                h[:k] = 1.0
                h[k] = -k
                h /= np.sqrt(k * (k + 1))
                out.append(np.diag(np.sqrt(2) * 1j * h))
    b = np.array(out, dtype=spec.dtype).reshape(len(out), n, n)
    b.setflags(write=False)
    return b


def algebra_basis(spec: GroupSpec) -> np.ndarray:
    """Orthonormal basis of the Lie algebra, shape ``(dim, N, N)``."""
    return _basis(spec.family, spec.N)


def frame(g: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Orthonormal frame ``g A_k`` of the tangent space at ``g``, shape ``(..., dim, N, N)``."""
    g = np.asarray(g)
    return g[..., None, :, :] @ algebra_basis(spec)


def metric(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 0.5 * np.real(np.sum(np.conj(x) * y, axis=(-2, -1)))


def _parts(v: TangentVector):
    return v.re, (np.zeros_like(v.re) if v.im is None else v.im)


def cinner(u: TangentVector, v: TangentVector) -> np.ndarray:
    """Complex bilinear extension of the metric to complexified tangent vectors."""
    ur, ui = _parts(u)
    vr, vi = _parts(v)
    return metric(ur, vr) - metric(ui, vi) + 1j * (metric(ur, vi) + metric(ui, vr))


def project_tangent(g: np.ndarray, x: np.ndarray, spec: GroupSpec) -> np.ndarray:
    g = np.asarray(g)
    x = np.asarray(x)
    if g.shape[-2:] != x.shape[-2:] or g.shape[-1] != spec.N:
        raise ValueError(f"dimension mismatch: g {g.shape}, X {x.shape} for {spec}")
    p = 0.5 * x - 0.5 * g @ _dagger(x) @ g
    if spec.family == "SU":
        tr = np.asarray(1j * np.imag(_tr(_dagger(g) @ x)))
        p = p - (tr / spec.N)[..., None, None] * g
    return p


def tangency_residual(g: np.ndarray, x: np.ndarray, spec: GroupSpec) -> float:
    """How far ``g^-1 X`` is from the Lie algebra (max abs entry)."""
    a = _dagger(g) @ x
    r = np.abs(a + _dagger(a)).max()
    if spec.family == "SU":
        r = max(r, np.abs(_tr(a)).max())
    return float(r)


def membership_residual(g: np.ndarray, spec: GroupSpec) -> float:
    g = np.asarray(g)
    eye = np.eye(spec.N)
    r = float(np.abs(_dagger(g) @ g - eye).max())
    if spec.family in ("SO", "SU"):
        r = max(r, float(np.abs(np.linalg.det(g) - 1).max()))
    return r


def is_member(g: np.ndarray, spec: GroupSpec, tol: float = 1e-10) -> bool:
    return membership_residual(g, spec) < tol


def reunitarize(g: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Nearest group element via the polar decomposition, with the determinant fixed."""
    u, _, vh = np.linalg.svd(g)
    q = u @ vh
    if spec.family == "SU":
        det = np.linalg.det(q)
        q = q / (det ** (1.0 / spec.N))[..., None, None]
    elif spec.family == "SO":
        q = q.real
    return q


def expm(a: np.ndarray) -> np.ndarray:
    return scipy.linalg.expm(a)


def random_algebra(spec: GroupSpec, rng: np.random.Generator, size=()) -> np.ndarray:
    """Standard Gaussian element of the Lie algebra (unit variance per frame coordinate)."""
    size = tuple(np.atleast_1d(size)) if size != () else ()
    z = rng.standard_normal(size + (spec.dim,))
    return np.tensordot(z, algebra_basis(spec), axes=([-1], [0]))


def haar_sample(spec: GroupSpec, rng: np.random.Generator, size=()) -> np.ndarray:
    """Haar distributed group elements of shape ``size + (N, N)``.

    QR of a Gaussian matrix with the phases of ``diag(R)`` absorbed into ``Q``.
    SO(N) flips the first column of determinant -1 samples; SU(N) divides by
    the principal N-th root of the determinant.
    """
    size = tuple(np.atleast_1d(size)) if size != () else ()
    n = spec.N
    if spec.is_real:
        z = rng.standard_normal(size + (n, n))
    else:
        z = (rng.standard_normal(size + (n, n)) + 1j * rng.standard_normal(size + (n, n))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    ph = d / np.abs(d)
    q = q * ph[..., None, :]
    if spec.family == "SO":
        det = np.linalg.det(q)
        q[..., :, 0] *= np.sign(det)[..., None]
    elif spec.family == "SU":
        det = np.linalg.det(q)
        q = q / (det ** (1.0 / n))[..., None, None]
    return q


# ---------------------------------------------------------------------------
# closed forms for Wilson loops


def _rest_holonomies(loop: LoopWord, e: int, links: np.ndarray):
    occ = la.occurrences(loop, e)
    rests = [la.holonomy(la.excise(loop, x), links) for x in occ.positions]
    return occ, rests


def _pow(r: np.ndarray, w: int) -> np.ndarray:
    return r if w == 1 else _dagger(r)


def grad_wilson(loop: LoopWord, e: int, links: np.ndarray, spec: GroupSpec) -> TangentVector:
    """Gradient of ``W = Tr Q(loop)`` with respect to the link on edge ``e``.

    For SU(N) and U(N) the result is complexified, ``(grad Re W, grad Im W)``.
    """
    links = np.asarray(links)
    g = links[..., e, :, :]
    occ, rests = _rest_holonomies(loop, e, links)
    re = np.zeros_like(g)
    if spec.is_real:
        for w, r in zip(occ.orientations, rests):
            re = re + _pow(r, -w) - g @ _pow(r, w) @ g
        return TangentVector(g, re)
    im = np.zeros_like(g)
    wl = la.wilson(loop, links)[..., None, None]
    c = spec.eta * 2j / spec.N
    for w, r in zip(occ.orientations, rests):
        a, b = _pow(r, -w), g @ _pow(r, w) @ g
        re = re + a - b + c * w * wl.imag * g
        im = im + 1j * w * (a + b) - c * w * wl.real * g
    return TangentVector(g, re, im)


def _merger_sums(l1: LoopWord, l2: LoopWord, e: int, links: np.ndarray):
    """Wilson sums of negative and positive mergers, split by w_x w_y = -1 / +1."""
    o1, o2 = la.occurrences(l1, e), la.occurrences(l2, e)
    batch = np.asarray(links).shape[:-3]
    sums = {k: np.zeros(batch, dtype=complex) for k in ("neg-", "neg+", "pos-", "pos+")}
    for x, wx in o1.C:
        for y, wy in o2.C:
            s = "+" if wx * wy == 1 else "-"
            sums["neg" + s] = sums["neg" + s] + la.wilson(la.negative_merger(l1, x, l2, y), links)
            sums["pos" + s] = sums["pos" + s] + la.wilson(la.positive_merger(l1, x, l2, y), links)
    return o1, o2, sums


def grad_inner(l1: LoopWord, l2: LoopWord, e: int, links: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Closed form of ``<grad W1, grad W2>`` at edge ``e`` in terms of merged loops."""
    o1, o2, s = _merger_sums(l1, l2, e, links)
    if spec.is_real:
        return np.real(s["neg-"] + s["neg+"] - s["pos-"] - s["pos+"])
    out = 2 * s["neg-"] - 2 * s["pos+"]
    if spec.eta:
        out = out + 2 * o1.t * o2.t / spec.N * la.wilson(l1, links) * la.wilson(l2, links)
    return out


def grad_inner_action(l1: LoopWord, l2: LoopWord, e: int, links: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Closed form of ``<grad W1, grad Re W2>``, the building block of the action term."""
    o1, o2, s = _merger_sums(l1, l2, e, links)
    out = s["neg-"] + s["neg+"] - s["pos-"] - s["pos+"]
    if spec.is_real:
        return np.real(out)
    if spec.eta:
        w1 = la.wilson(l1, links)
        out = out + o1.t * o2.t / spec.N * (w1 * la.wilson(l2, links) - w1 * la.wilson(la.inverse(l2), links))
    return out


def trace_LR(g: np.ndarray, x: np.ndarray, y: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Trace of ``P_g L_X R_Y P_g`` on the tangent space at ``g``."""
    g, x, y = map(np.asarray, (g, x, y))
    if not (g.shape[-1] == x.shape[-1] == y.shape[-1] == spec.N):
        raise ValueError("dimension mismatch")
    if spec.is_real:
        return 0.5 * _tr(x) * _tr(y) - 0.5 * _tr(g.T @ x.T @ g @ y)
    out = np.real(_tr(x) * _tr(y))
    if spec.eta:
        out = out - np.real(_tr(_dagger(g) @ x @ g @ y)) / spec.N
    return out


def trace_LR_frame_sum(g, x, y, spec: GroupSpec) -> float:
    """Brute force ``sum_k <F_k, X F_k Y>`` over an orthonormal frame."""
    f = frame(g, spec)
    return float(np.sum(metric(f, x @ f @ y)))


def _pair_sums(loop: LoopWord, e: int, links: np.ndarray):
    occ = la.occurrences(loop, e)
    batch = np.asarray(links).shape[:-3]
    split_same = np.zeros(batch, complex)
    split_opp = np.zeros(batch, complex)
    twist_same = np.zeros(batch, complex)
    twist_opp = np.zeros(batch, complex)
    for x, wx in occ.C:
        for y, wy in occ.C:
            if x == y:
                continue
            if wx * wy == 1:
                a, b = la.positive_split(loop, x, y)
                split_same = split_same + la.wilson(a, links) * la.wilson(b, links)
                twist_same = twist_same + la.wilson(la.negative_twist(loop, x, y), links)
            else:
                a, b = la.negative_split(loop, x, y)
                split_opp = split_opp + la.wilson(a, links) * la.wilson(b, links)
                twist_opp = twist_opp + la.wilson(la.positive_twist(loop, x, y), links)
    return occ, split_same, split_opp, twist_same, twist_opp


def laplacian_wilson(loop: LoopWord, e: int, links: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Laplace-Beltrami operator in the link ``e`` applied to ``W = Tr Q(loop)``."""
    occ, ss, so, ts, to = _pair_sums(loop, e, links)
    w = la.wilson(loop, links)
    n = spec.N
    if spec.is_real:
        return np.real(-(n - 1) * occ.m * w - ss + ts + so - to)
    return -2 * ss + 2 * so - (2 * occ.m * n - 2 * spec.eta * occ.t**2 / n) * w


# ---------------------------------------------------------------------------
# finite difference oracles

FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-4


def _moved(links: np.ndarray, e: int, a: np.ndarray, eps: float) -> np.ndarray:
    out = np.array(links, copy=True)
    out[..., e, :, :] = links[..., e, :, :] @ expm(eps * a)
    return out


def fd_directional(fn, links: np.ndarray, e: int, spec: GroupSpec, step: float = FD_STEP_FIRST) -> np.ndarray:
    """Central differences of ``fn(links)`` along each frame direction at edge ``e``.

    Returns an array of shape ``(dim,)`` (complex if ``fn`` is complex).
    """
    vals = []
    for a in algebra_basis(spec):
        vals.append((fn(_moved(links, e, a, step)) - fn(_moved(links, e, a, -step))) / (2 * step))
    return np.array(vals)


def fd_laplacian(fn, links: np.ndarray, e: int, spec: GroupSpec, step: float = FD_STEP_SECOND):
    """Sum over the frame of second differences of ``fn`` along geodesics at edge ``e``."""
    f0 = fn(links)
    total = 0.0
    for a in algebra_basis(spec):
        total = total + (fn(_moved(links, e, a, step)) + fn(_moved(links, e, a, -step)) - 2 * f0) / step**2
    return total
