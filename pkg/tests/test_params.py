import pytest

from csdwave.params import DEFAULT, ParameterSet


def test_extracellular_volume_fraction():
    p = DEFAULT
    assert p.Omega_e == p.alpha0 * (p.Omega_n + p.Omega_a)
    q = p.replace(alpha0=0.3)
    assert q.Omega_e == 0.3 * (q.Omega_n + q.Omega_a)


def test_total_potassium_matches_reference_state():
    p = DEFAULT
    assert p.K_tot == pytest.approx(p.Omega_e * 3.5 + p.Omega_n * 135.0 + p.Omega_a * 135.0)


@pytest.mark.parametrize("name", ["g_Na", "P_K", "Omega_n", "S_A", "dx"])
def test_nonpositive_constants_rejected(name):
    with pytest.raises(ValueError):
        DEFAULT.replace(**{name: 0.0})


def test_text_round_trip(tmp_path):
    q = DEFAULT.replace(rho_N=4.5, h_p=0.97)
    path = tmp_path / "params.txt"
    q.save(path)
    assert ParameterSet.load(path) == q


def test_partial_file_keeps_defaults():
    q = ParameterSet.loads("# comment\nrho_A = 6.0\n\n g_L=0.4 # trailing\n")
    assert q.rho_A == 6.0 and q.g_L == 0.4 and q.g_K == DEFAULT.g_K


@pytest.mark.parametrize("text", ["unknown = 1", "g_K 15", "g_K = abc"])
def test_malformed_file(text):
    with pytest.raises(ValueError):
        ParameterSet.loads(text)


def test_digest_tracks_values():
    assert DEFAULT.digest() == ParameterSet().digest()
    assert DEFAULT.digest() != DEFAULT.replace(g_K=15.000001).digest()


def test_unit_conversions():
    assert DEFAULT.D_K_mm2_ms == pytest.approx(1.96e-6)
    assert DEFAULT.RTF == pytest.approx(1000 * 8.31 * 310 / 96485)
