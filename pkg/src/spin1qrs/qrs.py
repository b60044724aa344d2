"""Single-site quantum Rabi system: Hamiltonian, parity-labelled spectrum, field matrix elements.

Basis convention: product basis {|g>, |e>} x {|0>, ..., |n_fock-1>} with flat index
``q * n_fock + n``; ``sigma_z |g> = -|g>``. All energies are angular frequencies (rad/s).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ParityError

PARITY_TOL = 1e-6
CHI_ENFORCE_TOL = 1e-10
CHI_FAIL_TOL = 1e-8
Z_CROSSCHECK_RTOL = 1e-6


@dataclass(frozen=True)
class QRSParams:
    omega_q: float
    omega_r: float
    g: float
    n_fock: int = 60
    species_tag: str = "A"

    def __post_init__(self):
        if not self.omega_q > 0:
            raise ValueError(f"omega_q must be positive, got {self.omega_q}")
        if not self.omega_r > 0:
            raise ValueError(f"omega_r must be positive, got {self.omega_r}")
        if not self.g >= 0:
            raise ValueError(f"g must be non-negative, got {self.g}")
        if int(self.n_fock) != self.n_fock or self.n_fock < 2:
            raise ValueError(f"n_fock must be an integer >= 2, got {self.n_fock}")

    def with_cutoff(self, n_fock: int) -> "QRSParams":
        return QRSParams(self.omega_q, self.omega_r, self.g, n_fock, self.species_tag)


def _annihilation(n_fock: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_fock, dtype=float)), 1)


def field_operator(n_fock: int) -> np.ndarray:
    """(a + a^dagger) on the qubit x Fock product space."""
    a = _annihilation(n_fock)
    return np.kron(np.eye(2), a + a.T)


def field_squared_operator(n_fock: int) -> np.ndarray:
    """(a + a^dagger)^2 from a^2 + a^dagger^2 + 2 a^dagger a + 1, exact inside the cutoff.

    Differs from ``field_operator(n)**2`` only in the last Fock diagonal entry.
    """
    n = np.arange(n_fock, dtype=float)
    a2 = np.diag(np.sqrt(n[2:] * n[1:-1]), 2)
    op = a2 + a2.T + np.diag(2.0 * n + 1.0)
    return np.kron(np.eye(2), op)


def sigma_x_operator(n_fock: int) -> np.ndarray:
    return np.kron(np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(n_fock))


def sigma_z_operator(n_fock: int) -> np.ndarray:
    return np.kron(np.diag([-1.0, 1.0]), np.eye(n_fock))


def parity_diagonal(n_fock: int) -> np.ndarray:
    """Diagonal of exp(i pi (a^dagger a + sigma^+ sigma^-)) in the product basis."""
    q = np.repeat([0, 1], n_fock)
    n = np.tile(np.arange(n_fock), 2)
    return np.where((q + n) % 2 == 0, 1.0, -1.0)


def build_rabi_hamiltonian(params: QRSParams) -> np.ndarray:
    """H = (w_q/2) sigma_z + w_r a^dagger a + g sigma_x (a + a^dagger), real symmetric."""
    n_fock = int(params.n_fock)
    if n_fock < 2:
        raise ValueError("n_fock must be >= 2")
    a = _annihilation(n_fock)
    h = 0.5 * params.omega_q * sigma_z_operator(n_fock)
    h = h + params.omega_r * np.kron(np.eye(2), a.T @ a)
    h = h + params.g * np.kron(np.array([[0.0, 1.0], [1.0, 0.0]]), a + a.T)
    return h


def parity_expectation(state: np.ndarray) -> float:
    state = np.asarray(state)
    if state.size % 2:
        raise ValueError("state dimension must be 2 * n_fock")
    diag = parity_diagonal(state.size // 2)
    return float(np.real(np.vdot(state, diag * state)))


def parity_label(state: np.ndarray, tol: float = PARITY_TOL) -> int:
    """Sign of <state|Pi|state>; raises ParityError when the label is not sharp."""
    value = parity_expectation(state)
    if abs(value) < 1.0 - tol:
        raise ParityError(f"parity expectation {value:.3e} is not within {tol} of +-1")
    return 1 if value > 0 else -1


@dataclass(frozen=True)
class QRSSpectrum:
    """Full eigendecomposition of one QRS; the lowest ``n_kept`` levels are retained.

    ``energies``/``states``/``parities`` cover every level below the cutoff so that
    closure sums over all levels stay available.
    """

    energies: np.ndarray
    states: np.ndarray
    parities: np.ndarray
    n_kept: int
    parity_magnitudes: np.ndarray = field(repr=False, default=None)

    @property
    def n_fock(self) -> int:
        return self.states.shape[0] // 2

    @property
    def kept_energies(self) -> np.ndarray:
        return self.energies[: self.n_kept]

    @property
    def kept_states(self) -> np.ndarray:
        return self.states[:, : self.n_kept]

    @property
    def kept_parities(self) -> np.ndarray:
        return self.parities[: self.n_kept]

    def operator_elements(self, op: np.ndarray, full: bool = False) -> np.ndarray:
        v = self.states if full else self.kept_states
        return v.T @ op @ v


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def diagonalize(h: np.ndarray, n_kept: int, degeneracy_tol: float = 1e-9) -> QRSSpectrum:
    """Ascending eigenpairs of a QRS Hamiltonian with sharp parity labels.

    Degenerate blocks are rotated onto parity eigenvectors. Each eigenvector's
    largest-magnitude component is made positive.
    """
    h = np.asarray(h)
    dim = h.shape[0]
    if h.shape != (dim, dim) or dim % 2:
        raise ValueError("Hamiltonian must be square with even dimension 2 * n_fock")
    if not 1 <= n_kept <= dim:
        raise ValueError(f"n_kept must lie in [1, {dim}], got {n_kept}")
    if np.iscomplexobj(h):
        if np.max(np.abs(h.imag)) > 1e-12 * max(np.max(np.abs(h)), 1.0):
            raise ValueError("QRS Hamiltonian is expected to be real")
        h = h.real
    energies, vectors = np.linalg.eigh(h)
    pdiag = parity_diagonal(dim // 2)

    scale = max(np.max(np.abs(energies)), 1.0)
    start = 0
    while start < dim:
        stop = start + 1
        while stop < dim and energies[stop] - energies[stop - 1] <= degeneracy_tol * scale:
            stop += 1
        if stop - start > 1:
            block = vectors[:, start:stop]
            pb = block.T @ (pdiag[:, None] * block)
            _, rot = np.linalg.eigh(pb)
            vectors[:, start:stop] = block @ rot
        start = stop

    vectors = _fix_phases(vectors)
    expectations = np.einsum("ij,i,ij->j", vectors, pdiag, vectors)
    magnitudes = np.abs(expectations)
    bad = np.nonzero(magnitudes[:n_kept] < 1.0 - PARITY_TOL)[0]
    if bad.size:
        raise ParityError(
            f"kept levels {bad.tolist()} have parity expectation magnitudes "
            f"{magnitudes[bad].tolist()}; increase n_fock or check degeneracies"
        )
    parities = np.where(expectations > 0, 1, -1)
    return QRSSpectrum(energies, vectors, parities, int(n_kept), magnitudes)


def chi_elements(spectrum: QRSSpectrum, full: bool = False) -> np.ndarray:
    """<k|(a + a^dagger)|j> in the dressed basis with same-parity entries zeroed."""
    x = spectrum.operator_elements(field_operator(spectrum.n_fock), full=full)
    par = spectrum.parities if full else spectrum.kept_parities
    same = np.equal.outer(par, par)
    raw = np.abs(x[same])
    worst = raw.max() if raw.size else 0.0
    if worst > CHI_FAIL_TOL:
        raise ParityError(f"same-parity field element {worst:.3e} exceeds {CHI_FAIL_TOL}")
    if worst > CHI_ENFORCE_TOL and not full:
        warnings.warn(f"same-parity field element {worst:.3e} above {CHI_ENFORCE_TOL}")
    x = x.copy()
    x[same] = 0.0
    return x


def z_elements(spectrum: QRSSpectrum, check: bool = True) -> np.ndarray:
    """<k|(a + a^dagger)^2|j> in the kept dressed basis.

    With ``check`` the direct value is compared against the closure sum over every
    level below the cutoff.
    """
    n = spectrum.n_kept
    z = spectrum.operator_elements(field_squared_operator(spectrum.n_fock))
    par = spectrum.kept_parities
    z[~np.equal.outer(par, par)] = 0.0
    if check:
        chi_full = chi_elements(spectrum, full=True)
        summed = (chi_full @ chi_full)[:n, :n]
        err = np.max(np.abs(summed - z))
        if err > Z_CROSSCHECK_RTOL * max(np.max(np.abs(z)), 1.0):
            raise ConvergenceError(
                f"direct and closure-summed (a+a^dagger)^2 differ by {err:.3e}; "
                "raise n_fock"
            )
    return z


@dataclass(frozen=True)
class MatrixElements:
    chi: np.ndarray
    z: np.ndarray


def dressed_energies(spectrum: QRSSpectrum, z: np.ndarray, P_left: float = 0.0,
                     P_right: float = 0.0) -> np.ndarray:
    """On-site energies shifted by the diagonal of the SQUID squeezing terms."""
    if P_left < 0 or P_right < 0:
        raise ValueError("P values must be non-negative")
    return spectrum.kept_energies + (P_left + P_right) * np.diag(z)


@dataclass(frozen=True)
class DressedSite:
    """One chain site: QRS spectrum, dressed-basis operator tables, shifted energies."""

    params: QRSParams
    spectrum: QRSSpectrum
    elements: MatrixElements
    epsilon: np.ndarray
    P_sum: float
    sigma_x: np.ndarray
    sigma_z: np.ndarray

    @property
    def n_kept(self) -> int:
        return self.spectrum.n_kept

    @property
    def species(self) -> str:
        return self.params.species_tag

    @property
    def chi(self) -> np.ndarray:
        return self.elements.chi

    @property
    def z(self) -> np.ndarray:
        return self.elements.z

    def transition(self, k: int, j: int) -> float:
        return float(self.epsilon[k] - self.epsilon[j])

    def truncation_weight(self) -> float:
        """Summed |chi_kj|^2 from kept levels k into discarded levels j."""
        chi_full = chi_elements(self.spectrum, full=True)
        n = self.n_kept
        return float(np.sum(chi_full[:n, n:] ** 2))


def dressed_site(params: QRSParams, n_kept: int = 4, P_left: float = 0.0,
                 P_right: float = 0.0, spectrum: QRSSpectrum | None = None) -> DressedSite:
    if spectrum is None:
        spectrum = diagonalize(build_rabi_hamiltonian(params), n_kept)
    chi = chi_elements(spectrum)
    z = z_elements(spectrum)
    eps = dressed_energies(spectrum, z, P_left, P_right)
    sx = spectrum.operator_elements(sigma_x_operator(spectrum.n_fock))
    sz = spectrum.operator_elements(sigma_z_operator(spectrum.n_fock))
    return DressedSite(params, spectrum, MatrixElements(chi, z), eps,
                       float(P_left + P_right), sx, sz)


def convergence_check(params: QRSParams, n_kept: int, tol: float = 1e-9) -> float:
    """Max kept-eigenvalue change between n_fock and 2 n_fock, in units of omega_r.

    Raises ConvergenceError above ``tol``.
    """
    lo = np.linalg.eigvalsh(build_rabi_hamiltonian(params))[:n_kept]
    hi = np.linalg.eigvalsh(build_rabi_hamiltonian(params.with_cutoff(2 * params.n_fock)))[:n_kept]
    err = float(np.max(np.abs(lo - hi)) / params.omega_r)
    if err > tol:
        raise ConvergenceError(f"kept spectrum moves by {err:.3e} omega_r on cutoff doubling")
    return err
