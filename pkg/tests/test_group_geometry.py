import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masterloop import group_geometry as gg
from masterloop import loop_algebra as la
from masterloop.group_geometry import GroupSpec, TangentVector
from masterloop.loop_algebra import parse_loop
from oracles import random_word

SPECS = [GroupSpec("SO", 2), GroupSpec("SO", 3), GroupSpec("SO", 4), GroupSpec("U", 1), GroupSpec("U", 2),
         GroupSpec("U", 3), GroupSpec("SU", 2), GroupSpec("SU", 3)]
ids = [str(s) for s in SPECS]


def test_spec_basics():
    assert GroupSpec("SU", 3).eta == 1 and GroupSpec("U", 3).eta == 0 and GroupSpec("SO", 3).eta == 0
    assert GroupSpec.parse("SU(2)") == GroupSpec("SU", 2)
    assert [GroupSpec("SO", 4).dim, GroupSpec("U", 3).dim, GroupSpec("SU", 3).dim] == [6, 9, 8]
    with pytest.raises(ValueError):
        GroupSpec("SO", 1)
    with pytest.raises(ValueError):
        GroupSpec("Sp", 2)


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_haar_membership(spec):
    g = gg.haar_sample(spec, np.random.default_rng(0), (200,))
    assert gg.membership_residual(g, spec) < 1e-10
    if spec.family != "U":
        assert np.abs(np.linalg.det(g) - 1).max() < 1e-10


def test_haar_moments():
    rng = np.random.default_rng(1)
    n = 200_000
    g = gg.haar_sample(GroupSpec("SO", 3), rng, (n,))
    x = g[:, 0, 0]
    assert abs(x.mean()) < 4 * x.std() / np.sqrt(n)
    # E[g_ij g_kl] = delta_ik delta_jl / N
    for (i, j, k, l) in [(0, 0, 0, 0), (0, 1, 0, 1), (0, 0, 1, 1), (0, 1, 1, 0), (2, 2, 2, 2)]:
        s = g[:, i, j] * g[:, k, l]
        expect = (i == k) * (j == l) / 3
        assert abs(s.mean() - expect) < 4 * s.std() / np.sqrt(n)
    u = gg.haar_sample(GroupSpec("U", 3), rng, (n,))
    s = np.abs(np.trace(u, axis1=1, axis2=2)) ** 2
    assert abs(s.mean() - 1) < 4 * s.std() / np.sqrt(n)


def test_u1_haar_matches_uniform_angle():
    th = np.angle(gg.haar_sample(GroupSpec("U", 1), np.random.default_rng(2), (100_000,))[:, 0, 0])
    hist, _ = np.histogram(th, bins=8, range=(-np.pi, np.pi))
    assert np.abs(hist / 12_500 - 1).max() < 0.05


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_frame_orthonormal(spec):
    g = gg.haar_sample(spec, np.random.default_rng(3))
    f = gg.frame(g, spec)
    assert len(f) == spec.dim
    gram = gg.metric(f[:, None], f[None, :])
    assert np.abs(gram - np.eye(spec.dim)).max() < 1e-12
    for x in f:
        assert gg.tangency_residual(g, x, spec) < 1e-12


def test_frame_counts():
    assert len(gg.frame(np.eye(4), GroupSpec("SO", 4))) == 6
    f = gg.frame(np.eye(2, dtype=complex), GroupSpec("SU", 2))
    assert len(f) == 3 and np.abs(np.trace(f, axis1=1, axis2=2)).max() < 1e-12


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_projection(spec):
    rng = np.random.default_rng(4)
    g = gg.haar_sample(spec, rng)
    x = rng.standard_normal((spec.N, spec.N)) + (0 if spec.is_real else 1j * rng.standard_normal((spec.N, spec.N)))
    y = rng.standard_normal((spec.N, spec.N)) + (0 if spec.is_real else 1j * rng.standard_normal((spec.N, spec.N)))
    px = gg.project_tangent(g, x, spec)
    assert gg.tangency_residual(g, px, spec) < 1e-12
    assert np.abs(gg.project_tangent(g, px, spec) - px).max() < 1e-12
    assert abs(gg.metric(px, y) - gg.metric(x, gg.project_tangent(g, y, spec))) < 1e-12
    t = g @ gg.random_algebra(spec, rng)
    assert np.abs(gg.project_tangent(g, t, spec) - t).max() < 1e-12
    with pytest.raises(ValueError):
        gg.project_tangent(g, np.eye(spec.N + 1), spec)


def test_projection_kills_normal():
    rng = np.random.default_rng(5)
    spec = GroupSpec("SO", 3)
    g = gg.haar_sample(spec, rng)
    s = rng.standard_normal((3, 3))
    assert np.abs(gg.project_tangent(g, g @ (s + s.T), spec)).max() < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(SPECS))
def test_metric_bi_invariance(seed, spec):
    rng = np.random.default_rng(seed)
    g, h = gg.haar_sample(spec, rng, (2,))
    x, y = g @ gg.random_algebra(spec, rng), g @ gg.random_algebra(spec, rng)
    m = gg.metric(x, y)
    assert abs(gg.metric(h @ x, h @ y) - m) < 1e-12
    assert abs(gg.metric(x @ h, y @ h) - m) < 1e-12


def test_reunitarize():
    rng = np.random.default_rng(6)
    for spec in SPECS:
        g = gg.haar_sample(spec, rng, (10,))
        noisy = g + 1e-7 * rng.standard_normal(g.shape)
        fixed = gg.reunitarize(noisy, spec)
        assert gg.membership_residual(fixed, spec) < 1e-12
        assert np.abs(fixed - g).max() < 1e-6


def test_expm_lands_in_group():
    rng = np.random.default_rng(7)
    for spec in SPECS:
        a = gg.random_algebra(spec, rng, (5,))
        assert gg.membership_residual(gg.expm(a), spec) < 1e-12


# ---------------------------------------------------------------- closed forms


def _cf_directional(grad, g, spec):
    return np.array([gg.cinner(grad, TangentVector(g, f)) for f in gg.frame(g, spec)])


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_gradient_against_finite_differences(spec):
    rng = np.random.default_rng(8)
    for _ in range(15):
        loop = random_word(rng, 4, int(rng.integers(1, 9)), 0)
        if la.occurrences(loop, 0).m > 4:
            continue
        q = gg.haar_sample(spec, rng, (4,))
        grad = gg.grad_wilson(loop, 0, q, spec)
        assert gg.tangency_residual(q[0], grad.re, spec) < 1e-10
        if grad.im is not None:
            assert gg.tangency_residual(q[0], grad.im, spec) < 1e-10
        fd = gg.fd_directional(lambda L: la.wilson(loop, L), q, 0, spec)
        cf = _cf_directional(grad, q[0], spec)
        assert np.abs(fd - cf).max() / max(1, np.abs(cf).max()) < 1e-6


def test_gradient_self_loop_and_absent_edge():
    rng = np.random.default_rng(9)
    spec = GroupSpec("SO", 3)
    q = gg.haar_sample(spec, rng, (2,))
    grad = gg.grad_wilson(parse_loop("0+"), 0, q, spec)
    assert np.abs(grad.re - (np.eye(3) - q[0] @ q[0])).max() < 1e-12
    a = q[0].T @ grad.re
    assert np.abs(a + a.T).max() < 1e-12
    assert np.abs(gg.grad_wilson(parse_loop("1+"), 0, q, spec).re).max() == 0


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_laplacian_against_finite_differences(spec):
    rng = np.random.default_rng(10)
    for _ in range(10):
        loop = random_word(rng, 4, int(rng.integers(1, 9)), 0)
        if la.occurrences(loop, 0).m > 4:
            continue
        q = gg.haar_sample(spec, rng, (4,))
        lap = gg.laplacian_wilson(loop, 0, q, spec)
        fd = gg.fd_laplacian(lambda L: la.wilson(loop, L), q, 0, spec)
        assert abs(lap - fd) / max(1, abs(fd)) < 1e-4


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_laplacian_eigenfunction(spec):
    rng = np.random.default_rng(11)
    q = gg.haar_sample(spec, rng, (3,))
    loop = parse_loop("0+ 1+ 2- 1+")
    w = la.wilson(loop, q)
    lam = -(spec.N - 1) if spec.is_real else -(2 * spec.N - 2 * spec.eta / spec.N)
    assert abs(gg.laplacian_wilson(loop, 0, q, spec) - lam * w) < 1e-10


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_inner_products_against_direct_pairing(spec):
    rng = np.random.default_rng(12)
    for _ in range(20):
        l1 = random_word(rng, 4, int(rng.integers(1, 7)), 0)
        l2 = random_word(rng, 4, int(rng.integers(1, 7)))
        q = gg.haar_sample(spec, rng, (4,))
        g1, g2 = gg.grad_wilson(l1, 0, q, spec), gg.grad_wilson(l2, 0, q, spec)
        assert abs(gg.grad_inner(l1, l2, 0, q, spec) - gg.cinner(g1, g2)) < 1e-10
        re2 = TangentVector(g2.base, g2.re)
        assert abs(gg.grad_inner_action(l1, l2, 0, q, spec) - gg.cinner(g1, re2)) < 1e-10


def test_inner_product_examples():
    rng = np.random.default_rng(13)
    spec = GroupSpec("SO", 3)
    q = gg.haar_sample(spec, rng, (2,))
    loop = parse_loop("0+ 1+")
    expect = 3 - np.trace(np.linalg.matrix_power(q[1] @ q[0], 2))
    assert abs(gg.grad_inner(loop, loop, 0, q, spec) - expect) < 1e-12
    assert gg.grad_inner(loop, parse_loop("1+"), 0, q, spec) == 0
    su2 = GroupSpec("SU", 2)
    q = gg.haar_sample(su2, rng, (3,))
    l1, l2 = parse_loop("0+ 1+"), parse_loop("0- 2+")
    direct = gg.cinner(gg.grad_wilson(l1, 0, q, su2), gg.grad_wilson(l2, 0, q, su2))
    assert abs(gg.grad_inner(l1, l2, 0, q, su2) - direct) < 1e-10


def test_action_pairing_correction_is_visible_for_su3():
    rng = np.random.default_rng(14)
    spec = GroupSpec("SU", 3)
    q = gg.haar_sample(spec, rng, (3,))
    l1, l2 = parse_loop("0+ 1+"), parse_loop("0+ 2+")
    g1, g2 = gg.grad_wilson(l1, 0, q, spec), gg.grad_wilson(l2, 0, q, spec)
    direct = gg.cinner(g1, TangentVector(g2.base, g2.re))
    o = gg._merger_sums(l1, l2, 0, q)[2]
    no_correction = o["neg-"] + o["neg+"] - o["pos-"] - o["pos+"]
    assert abs(direct - no_correction) > 1e-3
    assert abs(gg.grad_inner_action(l1, l2, 0, q, spec) - direct) < 1e-10


@pytest.mark.parametrize("spec", SPECS, ids=ids)
def test_trace_formula(spec):
    rng = np.random.default_rng(15)
    for _ in range(10):
        g = gg.haar_sample(spec, rng)
        x = rng.standard_normal((spec.N, spec.N)) + (0 if spec.is_real else 1j * rng.standard_normal((spec.N,) * 2))
        y = rng.standard_normal((spec.N, spec.N)) + (0 if spec.is_real else 1j * rng.standard_normal((spec.N,) * 2))
        assert abs(gg.trace_LR(g, x, y, spec) - gg.trace_LR_frame_sum(g, x, y, spec)) < 1e-10


def test_trace_formula_identity_values():
    for n in (2, 3, 4):
        i = np.eye(n)
        assert abs(gg.trace_LR(i, i, i, GroupSpec("SO", n)) - (n * n - n) / 2) < 1e-12
        assert abs(gg.trace_LR(i, i, i, GroupSpec("SU", n)) - (n * n - 1)) < 1e-12
        assert abs(gg.trace_LR(i, i, i, GroupSpec("U", n)) - n * n) < 1e-12
