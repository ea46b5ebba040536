import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import expm_multiply
from scipy.special import ive

from osgood.graph import empty_graph, path_graph, random_connected_graph, star_graph
from osgood.semigroup import (SemigroupError, SemigroupOperator, check_chapman_kolmogorov, check_jensen,
                              check_semigroup_axioms, heat_kernel)
from osgood.source_term import ExpMinusOne, Power

METHODS = ["eigen", "krylov", "expm"]


def two_vertex_closed_form(t):
    e = np.exp(-2 * t)
    return np.array([(1 + e) / 2, (1 - e) / 2])


def dense_oracle(g, t, phi):
    """exp(-tL) phi straight from scipy's scaling-and-squaring on L itself."""
    return sla.expm(-t * g.laplacian_matrix().toarray()) @ phi


# -- apply ------------------------------------------------------------------

@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
def test_two_vertex_closed_form(method, t):
    sg = SemigroupOperator(path_graph(2), method)
    np.testing.assert_allclose(sg.apply(t, [1.0, 0.0]), two_vertex_closed_form(t), atol=1e-12)


@pytest.mark.parametrize("method", METHODS)
def test_zero_time_identity(method, rng):
    sg = SemigroupOperator(random_connected_graph(10, rng), method)
    phi = rng.normal(size=10)
    np.testing.assert_array_equal(sg.apply(0.0, phi), phi)


@pytest.mark.parametrize("method", METHODS)
def test_constants_preserved(method, rng):
    sg = SemigroupOperator(random_connected_graph(30, rng), method)
    for t in [0.01, 1.0, 100.0, 1e4]:
        np.testing.assert_allclose(sg.apply(t, np.ones(30)), 1.0, atol=1e-10)


def test_negative_time_rejected():
    with pytest.raises(SemigroupError):
        SemigroupOperator(path_graph(3)).apply(-1.0, np.ones(3))


def test_edgeless_graph_is_identity():
    sg = SemigroupOperator(empty_graph(3))
    np.testing.assert_array_equal(sg.apply(5.0, [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
    np.testing.assert_allclose(sg.integral(5.0, [1.0, 2.0, 3.0]), [5.0, 10.0, 15.0])


@pytest.mark.parametrize("method", METHODS)
@pytest.mark.parametrize("seed", range(3))
def test_matches_scipy_expm(method, seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(40, rng)
    sg = SemigroupOperator(g, method)
    phi = rng.random(40)
    for t in [0.05, 1.0, 20.0]:
        np.testing.assert_allclose(sg.apply(t, phi), dense_oracle(g, t, phi), rtol=1e-9, atol=1e-11)


@pytest.mark.parametrize("n", [200, 500])
def test_krylov_agrees_with_dense(n):
    rng = np.random.default_rng(n)
    g = random_connected_graph(n, rng)
    phi = rng.random(n)
    dense = SemigroupOperator(g, "eigen")
    kry = SemigroupOperator(g, "krylov")
    for t in [0.1, 3.0, 50.0]:
        np.testing.assert_allclose(kry.apply(t, phi), dense.apply(t, phi), atol=1e-8 * np.abs(phi).max())


def test_krylov_matches_expm_multiply():
    g = path_graph(3000)
    phi = np.zeros(3000)
    phi[1500] = 1.0
    sg = SemigroupOperator(g)
    assert sg.method == "krylov"
    ref = expm_multiply(-10.0 * g.laplacian_matrix(), phi)
    np.testing.assert_allclose(sg.apply(10.0, phi), ref, atol=1e-10)


@pytest.mark.parametrize("method", METHODS)
def test_integral_against_quadrature(method, rng):
    g = random_connected_graph(15, rng)
    sg = SemigroupOperator(g, method)
    phi = rng.random(15)
    t = 2.0
    x, w = np.polynomial.legendre.leggauss(40)
    s = 0.5 * t * (x + 1)
    ref = 0.5 * t * sum(wi * dense_oracle(g, si, phi) for si, wi in zip(s, w))
    np.testing.assert_allclose(sg.integral(t, phi), ref, rtol=1e-10, atol=1e-12)


def test_integral_block_matches_columns(rng):
    sg = SemigroupOperator(random_connected_graph(12, rng))
    block = rng.random((12, 3))
    out = sg.integral(0.7, block)
    for j in range(3):
        np.testing.assert_allclose(out[:, j], sg.integral(0.7, block[:, j]), atol=1e-14)


def test_apply_many_and_each(rng):
    sg = SemigroupOperator(random_connected_graph(20, rng))
    phi = rng.random(20)
    times = np.array([0.0, 0.3, 2.0, 9.0])
    rows = sg.apply_many(times, phi)
    for k, t in enumerate(times):
        np.testing.assert_allclose(rows[k], sg.apply(t, phi), atol=1e-14)
    block = rng.random((4, 20))
    each = sg.apply_each(times, block)
    for k, t in enumerate(times):
        np.testing.assert_allclose(each[k], sg.apply(t, block[k]), atol=1e-14)


# -- structural properties --------------------------------------------------

@given(st.integers(0, 100_000), st.sampled_from([0.01, 0.1, 1.0, 10.0, 100.0]))
@settings(max_examples=60, deadline=None)
def test_positivity_and_sub_markov(seed, t):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(int(rng.integers(2, 30)), rng)
    sg = SemigroupOperator(g)
    phi = rng.random(g.n)
    out = sg.apply(t, phi)
    assert out.min() >= -1e-12
    assert out.max() <= 1 + 1e-12


@given(st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_semigroup_law(seed):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(int(rng.integers(2, 30)), rng)
    sg = SemigroupOperator(g)
    phi = rng.normal(size=g.n)
    t, s = rng.exponential(2.0, 2)
    lhs = sg.apply(t, sg.apply(s, phi))
    assert np.max(np.abs(lhs - sg.apply(t + s, phi))) <= 1e-8 * np.abs(phi).max()


def test_axiom_report_on_random_graphs():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        sg = SemigroupOperator(random_connected_graph(30, rng))
        rep = check_semigroup_axioms(sg, [0.1, 1.0, 10.0], rng)
        assert rep.passed, rep.to_dict()


# -- heat kernel ------------------------------------------------------------

def test_heat_kernel_two_vertex():
    sg = SemigroupOperator(path_graph(2))
    for t in [0.1, 1.0]:
        assert heat_kernel(sg, t, 0, 0).value == pytest.approx((1 + np.exp(-2 * t)) / 2, rel=1e-13)


def test_heat_kernel_symmetry_and_consistency(rng):
    g = random_connected_graph(25, rng)
    sg = SemigroupOperator(g)
    K = sg.kernel(0.8)
    assert np.max(np.abs(K - K.T)) <= 1e-10
    assert K.min() >= -1e-14
    phi = rng.random(25)
    np.testing.assert_allclose(K @ (phi * g.measure), sg.apply(0.8, phi), atol=1e-13)
    np.testing.assert_allclose(K @ g.measure, 1.0, atol=1e-10)


def test_heat_kernel_entry_definition(rng):
    g = star_graph(4, center_mass=3.0, leaf_mass=0.5)
    sg = SemigroupOperator(g)
    e = np.zeros(5)
    e[2] = 1.0
    assert sg.heat_kernel(1.3, 0, 2).value == pytest.approx(sg.apply(1.3, e)[0] / 0.5, rel=1e-12)


@pytest.mark.parametrize("t", [25.0, 100.0])
def test_path_on_diagonal_bessel(t):
    # p_t(0, 0) on Z equals exp(-2t) I_0(2t); the truncation at +-2000 is invisible at t <= 100
    sg = SemigroupOperator(path_graph(4001, centered=True))
    val = sg.heat_kernel(t, 0, 0).value
    assert val == pytest.approx(ive(0, 2 * t), rel=1e-9)
    assert val * np.sqrt(t) == pytest.approx(0.2821, abs=0.02)


# -- Jensen -----------------------------------------------------------------

def test_jensen_constant_zero_slack(rng):
    sg = SemigroupOperator(random_connected_graph(10, rng))
    rep = check_jensen(sg, Power(1.0), 2.0, np.full(10, 1.5))
    assert abs(rep.min_slack) <= 1e-12
    assert rep.passed


def test_jensen_two_vertex():
    sg = SemigroupOperator(path_graph(2))
    rep = check_jensen(sg, Power(1.0), 0.5, [1.0, 0.0])
    assert np.all(rep.slack >= 0)
    # closed form: S f(phi) = S phi = (c, s); f(S phi) = (c^2, s^2)
    c, s = two_vertex_closed_form(0.5)
    np.testing.assert_allclose(rep.slack, [c - c * c, s - s * s], atol=1e-14)


def test_jensen_rejects_negative():
    with pytest.raises(SemigroupError):
        check_jensen(SemigroupOperator(path_graph(2)), Power(1.0), 1.0, [-1.0, 0.0])


@given(st.integers(0, 100_000), st.sampled_from([0.1, 1.0, 10.0]),
       st.sampled_from([Power(1.0), Power(2.0), ExpMinusOne()]))
@settings(max_examples=100, deadline=None)
def test_jensen_property(seed, t, f):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(int(rng.integers(2, 21)), rng)
    phi = rng.uniform(0, 3, g.n) * (rng.random(g.n) < 0.6)
    assert check_jensen(SemigroupOperator(g), f, t, phi).passed


# -- Chapman-Kolmogorov -----------------------------------------------------

def test_ck_two_vertex():
    assert check_chapman_kolmogorov(SemigroupOperator(path_graph(2)), 1.0, 1.0) <= 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_ck_random(seed):
    sg = SemigroupOperator(random_connected_graph(20, np.random.default_rng(seed)))
    for t in [0.1, 1.0, 5.0]:
        assert check_chapman_kolmogorov(sg, t, t) <= 1e-8


def test_ck_columns_above_dense_limit():
    sg = SemigroupOperator(path_graph(2500))
    assert check_chapman_kolmogorov(sg, 1.0, 2.0, columns=[0, 1250]) <= 1e-8


def test_kernel_continuity_in_t(rng):
    sg = SemigroupOperator(random_connected_graph(20, rng))
    assert np.max(np.abs(sg.kernel(1.0 + 1e-8) - sg.kernel(1.0))) <= 1e-6


def test_alternate_route_differs():
    sg = SemigroupOperator(path_graph(10))
    assert sg.alternate().method != sg.method
