import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csdwave import model
from csdwave.errors import SingularJetError
from csdwave.taylor import GHK_SWITCH, Jet, exp, field_jet, ghk_kernel, log, power, sigmoid

from conftest import REFERENCE_EQUILIBRIA


def fd_weights(offsets, k):
    """Weights w with sum_i w_i f(x + o_i h) = h^k f^(k)(x) + O(h^n)."""
    o = np.asarray(offsets, float)
    V = np.vander(o, increasing=True).T
    rhs = np.zeros(o.size)
    rhs[k] = math.factorial(k)
    return np.linalg.solve(V, rhs)


STENCIL = np.arange(-4, 5)


def taylor_coefficient_fd(fun, k, h):
    """k-th Taylor coefficient of a scalar function of s at 0 by central differences."""
    w = fd_weights(STENCIL, k)
    return sum(wi * fun(oi * h) for wi, oi in zip(w, STENCIL)) / h**k / math.factorial(k)


def test_product_truncates():
    a, b = Jet([1.0, 1.0, 0.0, 0.0]), Jet([1.0, -1.0, 0.0, 0.0])
    np.testing.assert_array_equal((a * b).c, [1.0, 0.0, -1.0, 0.0])


def test_geometric_series():
    np.testing.assert_allclose(Jet([1.0, -1.0, 0, 0, 0]).recip().c, np.ones(5), rtol=0, atol=0)


int_coeffs = arrays(np.float64, 9, elements=st.integers(-50, 50).map(float))


@given(int_coeffs, int_coeffs)
def test_product_matches_brute_force_convolution(a, b):
    expected = [sum(a[i] * b[k - i] for i in range(k + 1)) for k in range(9)]
    np.testing.assert_array_equal((Jet(a) * Jet(b)).c, expected)


@given(int_coeffs, int_coeffs, int_coeffs)
def test_product_associative_on_integers(a, b, c):
    A, B, C = Jet(a), Jet(b), Jet(c)
    np.testing.assert_array_equal(((A * B) * C).c, (A * (B * C)).c)


@given(int_coeffs, arrays(np.float64, 9, elements=st.floats(-3, 3)))
def test_division_inverts_product(a, b):
    b = b.copy()
    b[0] = 1.0 + abs(b[0])
    np.testing.assert_allclose(((Jet(a) * Jet(b)) / Jet(b)).c, a, atol=1e-8 * (1 + np.abs(a).max()))


def test_division_by_zero_constant():
    with pytest.raises(SingularJetError):
        Jet([1.0, 1.0]) / Jet([0.0, 1.0])


def test_pow_int_matches_repeated_product():
    u = Jet([2.0, 1.0, -1.0, 0.5])
    np.testing.assert_allclose((u**5).c, (u * u * u * u * u).c, rtol=1e-14)
    np.testing.assert_allclose(u.pow_int(-2).c, (1.0 / (u * u)).c, rtol=1e-14)


def test_exp_series():
    e = exp(Jet.variable(0.0, 5))
    np.testing.assert_allclose(e.c, [1 / math.factorial(k) for k in range(6)], rtol=1e-15)


def test_log_series():
    np.testing.assert_allclose(log(Jet.variable(1.0, 4)).c, [0.0, 1.0, -0.5, 1 / 3, -0.25], rtol=1e-15)


@given(arrays(np.float64, 8, elements=st.floats(-2, 2)))
def test_exp_log_round_trip(c):
    c = c.copy()
    c[0] = 0.5 + abs(c[0])
    u = Jet(c)
    np.testing.assert_allclose(exp(log(u)).c, c, atol=1e-12 * max(1.0, np.abs(c).max()) * 1e3)


def test_log_of_nonpositive():
    with pytest.raises(SingularJetError):
        log(Jet([0.0, 1.0]))
    with pytest.raises(SingularJetError):
        power(Jet([-1.0, 1.0]), 0.5)


@pytest.mark.parametrize("a", [0.5, -1.5, 2.7])
def test_real_power_against_binomial_series(a):
    # (1 + s)^a = sum binom(a, k) s^k
    expected = [math.prod(a - j for j in range(k)) / math.factorial(k) for k in range(7)]
    np.testing.assert_allclose(power(Jet.variable(1.0, 6), a).c, expected, rtol=1e-13, atol=1e-15)


def test_sigmoid_derivatives():
    u0 = 0.3
    sj = sigmoid(Jet.variable(u0, 3))
    s = 1 / (1 + math.exp(-u0))
    assert sj.derivative(1) == pytest.approx(s * (1 - s), rel=1e-14)
    assert sj.derivative(2) == pytest.approx(s * (1 - s) * (1 - 2 * s), rel=1e-13)


@pytest.mark.parametrize("phi0", [0.0, 3e-5, -8e-5, 0.2, -3.0, 12.0])
def test_ghk_kernel_jet_coefficients(phi0):
    j = ghk_kernel(Jet.variable(phi0, 6))
    k = lambda s: ghk_kernel(phi0 + s)  # noqa: E731
    assert j.c[0] == pytest.approx(ghk_kernel(phi0), rel=1e-14)
    for order in (1, 2, 3):
        fd = taylor_coefficient_fd(k, order, 0.05)
        assert j.c[order] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_ghk_kernel_jet_continuous_across_switch():
    a = ghk_kernel(Jet.variable(GHK_SWITCH * (1 - 1e-9), 8))
    b = ghk_kernel(Jet.variable(GHK_SWITCH * (1 + 1e-9), 8))
    np.testing.assert_allclose(a.c[:4], b.c[:4], rtol=1e-8, atol=1e-10)


def test_vector_jets_elementwise():
    u = Jet(np.array([[1.0, 2.0], [1.0, -1.0], [0.5, 0.0]]))
    np.testing.assert_allclose(exp(u).c[:, 1], exp(Jet([2.0, -1.0, 0.0])).c)


def test_mixed_orders_rejected():
    with pytest.raises(ValueError):
        Jet([1.0, 2.0]) + Jet([1.0, 2.0, 3.0])


def test_csv_round_trip(tmp_path):
    u = Jet([1.0, -2.5, 1e-17, 3.0])
    u.to_csv(tmp_path / "j.csv")
    np.testing.assert_array_equal(Jet.from_csv(tmp_path / "j.csv").c, u.c)


def test_numpy_ufuncs_dispatch_to_jets():
    u = Jet.variable(0.7, 4)
    np.testing.assert_array_equal(np.exp(u).c, u.exp().c)
    np.testing.assert_array_equal((np.float64(2.0) * u).c, (2.0 * u).c)


# -- model functions on jets -------------------------------------------------------

def test_f_along_a_curve(rng):
    z = 12.0
    x0, x1, x2 = -60.0, 3.0, -1.5
    jet = model.f_tilde(Jet([x0, x1, x2, 0.0]), z)
    assert jet.c[1] == pytest.approx(model.f_x(x0, z) * x1, rel=1e-12, abs=1e-12)
    curve = lambda s: model.f_tilde(x0 + x1 * s + x2 * s * s, z)  # noqa: E731
    assert jet.c[2] == pytest.approx(taylor_coefficient_fd(curve, 2, 1e-2), rel=1e-6)


def _wave(c):
    return lambda W: model.wave_rhs(W, c)


def test_field_jet_at_equilibrium():
    base = np.array([*REFERENCE_EQUILIBRIA["p_r"], 0.0])
    F = field_jet(_wave(0.073), [Jet.constant(v, 5) for v in base])
    for fj in F:
        assert abs(fj.c[0]) < 1e-8
        assert np.all(fj.c[1:] == 0)


def test_field_jet_first_order_is_jacobian(rng):
    base = np.array([*REFERENCE_EQUILIBRIA["p_r"], 0.0])
    J = model.wave_jacobian(base, 0.073)
    for _ in range(3):
        v = rng.normal(size=4)
        F = field_jet(_wave(0.073), [Jet([b, vi]) for b, vi in zip(base, v)])
        fd = np.empty(4)
        h = 1e-6
        fd = (model.wave_rhs(base + h * v, 0.073) - model.wave_rhs(base - h * v, 0.073)) / (2 * h)
        np.testing.assert_allclose([fj.c[1] for fj in F], J @ v, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose([fj.c[1] for fj in F], fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("k", [2, 3])
def test_field_jet_higher_orders_against_differences(k, rng):
    base = np.array([*REFERENCE_EQUILIBRIA["p_l1"], 0.01])
    W = np.vstack([base, rng.normal(size=4), 0.3 * rng.normal(size=4), 0.1 * rng.normal(size=4)])
    F = field_jet(_wave(0.073), [Jet(W[:, i]) for i in range(4)])
    curve = lambda s: model.wave_rhs(W[0] + W[1] * s + W[2] * s**2 + W[3] * s**3, 0.073)  # noqa: E731
    for comp in (0, 1, 3):
        fd = taylor_coefficient_fd(lambda s: curve(s)[comp], k, 0.05)
        assert F[comp].c[k] == pytest.approx(fd, rel=1e-5), comp
