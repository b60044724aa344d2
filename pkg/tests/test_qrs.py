import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spin1qrs import presets
from spin1qrs.errors import ConvergenceError, ParityError
from spin1qrs.qrs import (QRSParams, build_rabi_hamiltonian, chi_elements, convergence_check,
                          diagonalize, dressed_energies, dressed_site, field_operator,
                          parity_diagonal, parity_label, z_elements)


def unit_params(g, n_fock=40):
    return QRSParams(0.9, 1.0, g, n_fock)


def test_params_validation():
    with pytest.raises(ValueError):
        QRSParams(-1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        QRSParams(1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        QRSParams(1.0, 1.0, -0.1)
    with pytest.raises(ValueError):
        QRSParams(1.0, 1.0, 0.1, n_fock=1)


def test_decoupled_spectrum():
    w = np.linalg.eigvalsh(build_rabi_hamiltonian(unit_params(0.0, 10)))
    np.testing.assert_allclose(w[:3], [-0.45, 0.45, 0.55], atol=1e-14)


def test_hamiltonian_is_hermitian():
    h = build_rabi_hamiltonian(unit_params(0.7))
    assert np.array_equal(h, h.conj().T)
    assert h.shape == (80, 80)


def test_ground_energy_converged(ref_species):
    A, _ = ref_species
    lo = np.linalg.eigvalsh(build_rabi_hamiltonian(A))[0]
    hi = np.linalg.eigvalsh(build_rabi_hamiltonian(A.with_cutoff(120)))[0]
    assert abs(lo - hi) < 1e-9 * A.omega_r
    assert convergence_check(A, 4) < 1e-9


def test_convergence_check_raises_for_tiny_cutoff():
    with pytest.raises(ConvergenceError):
        convergence_check(unit_params(0.9, 6), 4)


def test_diagonalize_trivial():
    h = np.zeros((4, 4))
    h[0, 0], h[1, 1], h[2, 2], h[3, 3] = 1.0, 2.0, 3.0, 4.0
    spec = diagonalize(h, 2)
    np.testing.assert_allclose(spec.kept_energies, [1.0, 2.0])
    np.testing.assert_allclose(np.abs(spec.kept_states), np.eye(4)[:, :2])


def test_ground_state_parity_decoupled():
    spec = diagonalize(build_rabi_hamiltonian(unit_params(0.0, 10)), 3)
    assert spec.parities[0] == 1


def test_species_b_level_parities(ref_species):
    _, B = ref_species
    spec = diagonalize(build_rabi_hamiltonian(B), 4)
    p = spec.kept_parities
    assert p[0] == p[2] != p[1]


@pytest.mark.parametrize("q,n,expected", [(0, 0, 1), (1, 0, -1), (0, 1, -1)])
def test_parity_label_basis_states(q, n, expected):
    state = np.zeros(2 * 5)
    state[q * 5 + n] = 1.0
    assert parity_label(state) == expected


def test_parity_label_rejects_mixed_state():
    state = np.zeros(10)
    state[0] = state[1] = 1 / np.sqrt(2)
    with pytest.raises(ParityError):
        parity_label(state)


def test_chi_decoupled_ladder():
    spec = diagonalize(build_rabi_hamiltonian(QRSParams(5.0, 1.0, 0.0, 12)), 4)
    chi = chi_elements(spec)
    # lowest four levels are |g,0..3> when omega_q is large
    for n in range(3):
        assert abs(abs(chi[n + 1, n]) - np.sqrt(n + 1)) < 1e-12
    assert np.all(np.diag(chi) == 0)


def test_z_decoupled_diagonal():
    spec = diagonalize(build_rabi_hamiltonian(QRSParams(5.0, 1.0, 0.0, 12)), 4)
    z = z_elements(spec)
    np.testing.assert_allclose(np.diag(z), 2 * np.arange(4) + 1, atol=1e-12)


def test_chi_matches_doubled_cutoff(ref_species):
    A, _ = ref_species
    c60 = chi_elements(diagonalize(build_rabi_hamiltonian(A), 4))[1, 0]
    c120 = chi_elements(diagonalize(build_rabi_hamiltonian(A.with_cutoff(120)), 4))[1, 0]
    assert abs(c60 - c120) < 1e-8 * abs(c120)


def test_z_equals_chi_squared_full(ref_species):
    _, B = ref_species
    spec = diagonalize(build_rabi_hamiltonian(B), 4)
    chi_full = chi_elements(spec, full=True)
    z = z_elements(spec)
    np.testing.assert_allclose((chi_full @ chi_full)[:4, :4], z, atol=1e-6 * np.abs(z).max())


def test_z_opposite_parity_zero(ref_sites):
    for site in ref_sites:
        par = site.spectrum.kept_parities
        assert np.all(site.z[~np.equal.outer(par, par)] == 0)


def test_dressed_energies_shift():
    spec = diagonalize(build_rabi_hamiltonian(QRSParams(5.0, 1.0, 0.0, 12)), 3)
    z = z_elements(spec)
    np.testing.assert_array_equal(dressed_energies(spec, z), spec.kept_energies)
    eps = dressed_energies(spec, z, P_left=0.01)
    np.testing.assert_allclose(eps - spec.kept_energies, 0.01 * (2 * np.arange(3) + 1), atol=1e-14)
    with pytest.raises(ValueError):
        dressed_energies(spec, z, P_left=-1.0)


def test_dressed_site_epsilon_identity(ref_sites):
    for site in ref_sites:
        expected = site.spectrum.kept_energies + site.P_sum * np.diag(site.z)
        assert np.array_equal(site.epsilon, expected)


def test_species_gap_separation(ref_sites):
    # at the quoted J the 1<-0 gaps differ by about 78 C_xy: above the 10 C guard, short of 100 C
    a, b = ref_sites
    C_xy = 0.75 * presets.F_QUOTED * presets.PQ_QUOTED
    sep = abs(a.transition(1, 0) - b.transition(1, 0)) / C_xy
    assert 10 < sep < 100
    assert sep == pytest.approx(78.33, abs=0.01)


def test_truncation_weight_reported(ref_sites):
    assert ref_sites[0].truncation_weight() > 0


@settings(max_examples=25, deadline=None)
@given(g=st.floats(0.0, 1.0), wq=st.floats(0.2, 2.0))
def test_parity_commutes_with_hamiltonian(g, wq):
    p = QRSParams(wq, 1.0, g, 30)
    h = build_rabi_hamiltonian(p)
    pi = np.diag(parity_diagonal(30))
    assert np.linalg.norm(h @ pi - pi @ h) < 1e-10 * np.linalg.norm(h)


@settings(max_examples=20, deadline=None)
@given(g=st.floats(0.05, 1.0))
def test_chi_selection_rule_and_symmetry(g):
    spec = diagonalize(build_rabi_hamiltonian(unit_params(g, 40)), 4)
    chi = chi_elements(spec)
    par = spec.kept_parities
    assert np.all(chi * (1 + np.outer(par, par)) == 0)
    np.testing.assert_allclose(chi, chi.T, atol=1e-10)
    raw = spec.operator_elements(field_operator(40))
    assert np.max(np.abs(raw[np.equal.outer(par, par)])) < 1e-10


@settings(max_examples=15, deadline=None)
@given(g=st.floats(0.0, 1.0))
def test_spectrum_invariants(g):
    spec = diagonalize(build_rabi_hamiltonian(unit_params(g, 40)), 4)
    assert np.all(np.diff(spec.energies) >= 0)
    np.testing.assert_allclose(np.linalg.norm(spec.states, axis=0), 1.0, atol=1e-10)
    assert np.all(np.abs(spec.parity_magnitudes[:4] - 1) < 1e-8)


def test_dressed_site_accepts_precomputed_spectrum(ref_species):
    A, _ = ref_species
    spec = diagonalize(build_rabi_hamiltonian(A), 4)
    s = dressed_site(A, 4, spectrum=spec)
    assert s.spectrum is spec and s.n_kept == 4 and s.species == "A"
