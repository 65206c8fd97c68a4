import numpy as np
import pytest

from csdwave import manifold, model
from csdwave.errors import DomainError, NearSingularError

from conftest import REFERENCE_EQUILIBRIA


def sig_digits_equal(a, b, digits=9):
    return abs(a - b) <= 0.5 * 10 ** (np.floor(np.log10(abs(b))) - digits + 1)


def test_branch_values_at_equilibria(cm):
    x1, y1, z1 = REFERENCE_EQUILIBRIA["p_l1"]
    assert cm.X(z1, "l") == pytest.approx(x1, rel=1e-11)
    assert cm.Y(z1) == pytest.approx(y1, rel=1e-11)
    xr, yr, zr = REFERENCE_EQUILIBRIA["p_r"]
    assert cm.X(zr, "r") == pytest.approx(xr, rel=1e-11)
    assert manifold.branch_solve(zr, "r") == pytest.approx(xr, rel=1e-11)
    assert manifold.y_solve(zr) == pytest.approx(yr, rel=1e-11)


def test_branch_residuals(cm, p):
    for br in manifold.BRANCHES:
        t = cm.table(br)
        rf, rg = t.residuals(p)
        assert rf < 1e-10 and rg < 1e-10, br


def test_branch_ordering(cm):
    zL, zR = cm.fold_L.z, cm.fold_R.z
    z = np.linspace(zL, zR, 50)[1:-1]
    xl, xm, xr = cm.X(z, "l"), cm.X(z, "m"), cm.X(z, "r")
    assert np.all(xl < xm) and np.all(xm < xr)


def test_vectorized_matches_scalar(cm):
    z = np.linspace(2.0, 18.0, 7)
    np.testing.assert_allclose(cm.X(z, "l"), [cm.X(float(v), "l") for v in z], rtol=1e-12)
    np.testing.assert_allclose(cm.Y(z), [cm.Y(float(v)) for v in z], rtol=1e-12)


@pytest.mark.parametrize("z, br", [(20.0, "l"), (5.0, "m"), (19.0, "m"), (5.0, "r")])
def test_outside_branch_domain(cm, z, br):
    with pytest.raises(DomainError):
        cm.X(z, br)


def test_unknown_branch(cm):
    with pytest.raises(ValueError):
        cm.X(10.0, "q")


def test_fold_location(cm):
    assert cm.fold_R.z == pytest.approx(18.276, abs=1e-3)
    assert cm.fold_L.z < cm.fold_R.z
    for f in (cm.fold_L, cm.fold_R):
        assert abs(model.f_tilde(f.x, f.z)) < 1e-10
        assert abs(model.f_x(f.x, f.z)) < 1e-10
    assert manifold.find_folds() == (cm.fold_L, cm.fold_R)


def test_f_x_changes_sign_across_folds(cm):
    for f in (cm.fold_L, cm.fold_R):
        lo, hi = f.x - 0.5, f.x + 0.5
        zlo = cm._Z(np.array([lo]))[0]
        zhi = cm._Z(np.array([hi]))[0]
        assert np.sign(model.f_x(lo, zlo)) != np.sign(model.f_x(hi, zhi))


def test_middle_branch_only_between_folds(cm):
    lo, hi = cm.domain("m")
    assert lo == cm.fold_L.z and hi == cm.fold_R.z
    assert cm.domain("l")[1] == cm.fold_R.z
    assert cm.domain("r")[0] == cm.fold_L.z


@pytest.mark.parametrize("side", [-1.0, 1.0])
def test_fold_newton_from_both_sides(cm, side):
    for f in (cm.fold_L, cm.fold_R):
        g = cm._fold_newton(f.x + side * 0.3)
        assert abs(g.z - f.z) < 1e-8 and abs(g.x - f.x) < 1e-8


def test_branches_meet_at_folds(cm):
    d = 1e-9
    zR = cm.fold_R.z
    assert abs(cm.X(zR - d, "l") - cm.X(zR - d, "m")) < 1e-3
    zL = cm.fold_L.z
    assert abs(cm.X(zL + d, "m") - cm.X(zL + d, "r")) < 1e-3


def test_sign_structure(cm):
    for br, sign in (("l", -1), ("m", 1), ("r", -1)):
        lo, hi = cm.domain(br)
        z = np.linspace(lo, hi, 200)[1:-1]
        z = z[(z >= 1.0) & (z <= 250.0)]
        assert np.all(np.sign(model.f_x(cm.X(z, br), z)) == sign), br
    z = np.linspace(1.0, 250.0, 300)
    assert np.all(model.g_y(cm.Y(z), z) < 0)


def test_H_zeros(cm):
    z1 = REFERENCE_EQUILIBRIA["p_l1"][2]
    z2 = REFERENCE_EQUILIBRIA["p_l2"][2]
    assert abs(cm.H(z1, "l")) < 1e-8
    assert abs(cm.H(z2, "l")) < 1e-8
    assert abs(manifold.H_star(REFERENCE_EQUILIBRIA["p_r"][2], "r")) < 1e-8
    assert cm.dH(z1, "l") < 0 < cm.dH(z2, "l")


def test_H_middle_has_no_zero(cm):
    lo, hi = cm.domain("m")
    z = np.linspace(lo, hi, 1000)[1:-1]
    assert np.min(np.abs(cm.H(z, "m"))) > 0
    assert np.all(np.sign(cm.H(z, "m")) == np.sign(cm.H(z[0], "m")))


@pytest.mark.parametrize("br", manifold.BRANCHES)
def test_dH_against_finite_differences(cm, br):
    lo, hi = cm.domain(br)
    lo, hi = max(lo, 1.0), min(hi, 250.0)
    for z in np.linspace(lo, hi, 12)[1:-1]:
        h = 1e-5 * max(1.0, z)
        fd = (cm.H(z + h, br) - cm.H(z - h, br)) / (2 * h)
        assert cm.dH(z, br) == pytest.approx(fd, rel=1e-6, abs=1e-12)


def test_dH_near_fold_is_singular(cm):
    with pytest.raises(NearSingularError):
        manifold.dH_star(cm.fold_R.z, "l")


def test_equilibria_match_published_table(cm):
    eqs = {e.label: e for e in cm.equilibria()}
    assert set(eqs) == set(REFERENCE_EQUILIBRIA)
    for label, ref in REFERENCE_EQUILIBRIA.items():
        e = eqs[label]
        for got, want in zip((e.x, e.y, e.z), ref):
            assert sig_digits_equal(got, want), (label, got, want)
        assert np.max(np.abs(model.fgh((e.x, e.y, e.z)))) < 1e-8
    assert [e.branch for e in cm.equilibria()] == ["l", "l", "r"]


@pytest.mark.parametrize("c", [0.01, 0.04, 0.073, 0.1])
def test_equilibrium_stability(cm, c):
    kinds = {e.label: e.stability(c) for e in cm.equilibria()}
    assert kinds == {"p_l1": "saddle", "p_l2": "unstable", "p_r": "saddle"}
    for e in cm.equilibria():
        lm, lp = e.slow_eigenvalues(c)
        J = e.slow_jacobian(c)
        assert np.real(lm + lp) == pytest.approx(np.trace(J))
        assert np.real(lm * lp) == pytest.approx(np.linalg.det(J))


def test_fast_eigenvalues(cm):
    for e in cm.equilibria():
        l1, l2 = e.fast_eigenvalues(0.073)
        assert l2 < 0
        assert l1 == pytest.approx(model.f_x(e.x, e.z) / 0.073)


def test_csv_exports(tmp_path, p):
    manifold.write_H_curves(tmp_path / "H.csv", p, n=50)
    manifold.write_slow_eigenvalues(tmp_path / "slow.csv", p, n=5)
    manifold.write_fast_eigenvalues(tmp_path / "fast.csv", 0.073, p, n=50)
    rows = (tmp_path / "H.csv").read_text().splitlines()
    assert rows[0] == "branch,z,H" and len(rows) == 151
    fast = np.loadtxt(tmp_path / "fast.csv", delimiter=",", skiprows=1, usecols=(1, 2, 3))
    assert np.all(fast[:, 2] < 0)
    assert len((tmp_path / "slow.csv").read_text().splitlines()) == 1 + 5 * 3


def test_branch_table_csv(tmp_path, cm):
    t = cm.table("r", np.linspace(20.0, 200.0, 5))
    t.to_csv(tmp_path / "r.csv")
    data = np.loadtxt(tmp_path / "r.csv", delimiter=",", skiprows=1, usecols=(1, 2, 3))
    np.testing.assert_array_equal(data[:, 1], t.x)
