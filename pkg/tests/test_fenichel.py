import numpy as np
import pytest

from csdwave import fenichel as fn
from csdwave import model
from csdwave import parameterization as pm

C = 0.0731
POINTS = [(100.0, 0.5), (50.0, 1.0), (30.0, 2.0), (150.0, -0.3)]


@pytest.fixture(scope="module")
def zr(cm):
    return next(e for e in cm.equilibria() if e.label == "p_r").z


@pytest.fixture(scope="module")
def c_tilde():
    return fn.find_c_tilde()


def test_corrections_vanish_at_w0(cm):
    for z in (30.0, 100.0):
        m0, m1, m2, n0, n1, n2 = fn.expansion_terms(z, 0.0, C)
        assert m1 == 0 and n1 == 0
        assert m0 == cm.X(z, "r") and n0 == cm.Y(z)


def test_second_order_vanishes_at_rest(zr):
    _, m1, m2, _, n1, n2 = fn.expansion_terms(zr, 0.0, C)
    assert abs(m2) < 1e-10 and abs(n2) < 1e-10


def test_first_order_odd_in_w():
    for z, w in POINTS:
        a, b = fn.expansion_terms(z, w, C), fn.expansion_terms(z, -w, C)
        assert a[1] == pytest.approx(-b[1], rel=1e-12)
        assert a[4] == pytest.approx(-b[4], rel=1e-12)


@pytest.mark.parametrize("z,w", POINTS)
def test_residual_drops_with_order(z, w):
    r = [np.max(np.abs(fn.invariance_residual(z, w, C, order=k))) for k in (0, 1, 2)]
    assert r[1] < r[0] / 10
    assert r[2] < r[1] / 3


def test_rest_is_equilibrium(zr):
    np.testing.assert_allclose(fn.restricted_rhs(zr, 0.0, C), [0.0, 0.0], atol=1e-9)


def test_restricted_rhs_at_w0(cm):
    # the second-order term is nonzero off the rest point, so compare through order 1
    for z in (30.0, 100.0):
        out = fn.restricted_rhs(z, 0.0, C, order=1)
        assert out[0] == 0.0
        assert out[1] == pytest.approx(-cm.H(z, "r"), rel=1e-10, abs=1e-12)


@pytest.mark.parametrize("z,w", POINTS)
def test_restricted_rhs_is_4d_slow_field(z, w):
    u = fn.embed(z, w, C)
    np.testing.assert_allclose(fn.restricted_rhs(z, w, C), model.wave_rhs(u, C)[2:], rtol=1e-12)


def test_embedding_near_rest_is_invariant(zr):
    rng = np.random.default_rng(7)
    for dz, w in zip(rng.uniform(-1e-2, 1e-2, 10), rng.uniform(-1e-3, 1e-3, 10)):
        z = zr + dz
        assert np.max(np.abs(fn.invariance_residual(z, w, C))) < 1e-6
        u = fn.embed(z, w, C)
        assert abs(fn.restricted_rhs(z, w, C)[1] - model.wave_rhs(u, C)[3]) < 1e-6


@pytest.mark.parametrize("z,w", POINTS)
def test_jacobian_vs_fd(z, w):
    J = fn.restricted_jacobian(z, w, C)
    fd = np.zeros((2, 2))
    for j, h in enumerate((1e-4 * max(1.0, z), 1e-5)):
        e = np.zeros(2)
        e[j] = h
        fd[:, j] = (fn.restricted_rhs(z + e[0], w + e[1], C)
                    - fn.restricted_rhs(z - e[0], w - e[1], C)) / (2 * h)
    np.testing.assert_allclose(J, fd, rtol=1e-5, atol=1e-9)
    assert J[0, 0] == 0 and J[0, 1] == 1


def test_rest_is_saddle(zr):
    lam = np.linalg.eigvals(fn.restricted_jacobian(zr, 0.0, C))
    assert lam.real.min() < 0 < lam.real.max()
    mu, v = fn.stable_direction(C)
    assert mu < 0 and v[0] < 0


def test_c_tilde(c_tilde):
    assert abs(c_tilde.c - 0.073135) < 5e-4
    assert abs(c_tilde.mismatch[2]) < 1e-8
    assert abs(c_tilde.hit_s[2] - pm.SECTION_Z) < 1e-12


def test_agrees_with_parameterization(c_tilde):
    ref = pm.find_c_hat()
    assert abs(c_tilde.c - ref.c) < 1e-4
    other = pm.match(c_tilde.c)
    assert np.max(np.abs(c_tilde.hit_s - other.hit_s)) < 1e-3


def test_embedded_stable_and_csv(c_tilde, tmp_path):
    lifted = c_tilde.embedded_stable()
    assert lifted.shape == (4, c_tilde.stable.t.size)
    np.testing.assert_allclose(lifted[:, -1], c_tilde.hit_s)
    c_tilde.to_csv(tmp_path / "orbit.csv")
    data = np.loadtxt(tmp_path / "orbit.csv", delimiter=",", skiprows=1)
    assert data.shape == (c_tilde.unstable.t.size + c_tilde.stable.t.size - 1, 5)
    assert np.all(np.diff(data[:, 0]) >= 0)
