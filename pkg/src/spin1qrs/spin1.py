"""Exact spin-1 reference: operators, target Hamiltonians, propagators and the fidelity metric."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Sequence

import numpy as np

DENSE_DIM_LIMIT = 4**4


@dataclass(frozen=True)
class Spin1Ops:
    S_X: np.ndarray
    S_Y: np.ndarray
    S_Z: np.ndarray


@lru_cache(maxsize=1)
def _ops() -> Spin1Ops:
    up = np.zeros((3, 3), dtype=complex)
    up[1, 0] = up[2, 1] = 1.0
    sx = (up + up.conj().T) / np.sqrt(2)
    sy = (-1j * up + 1j * up.conj().T) / np.sqrt(2)
    sz = -1j * (sx @ sy - sy @ sx)
    for m in (sx, sy, sz):
        m.setflags(write=False)
    return Spin1Ops(sx, sy, sz)


def spin1_ops() -> Spin1Ops:
    """S_X, S_Y on {|0>,|1>,|2>} and S_Z = -i [S_X, S_Y] (works out to diag(-1, 0, 1))."""
    return _ops()


def _axis(name: str) -> np.ndarray:
    ops = spin1_ops()
    return {"x": ops.S_X, "y": ops.S_Y, "z": ops.S_Z}[name.lower()]


def site_operator(op: np.ndarray, site: int, N: int, d: int = 3) -> np.ndarray:
    """``op`` (3x3) on one site of an N-site chain whose sites have ``d >= 3`` levels."""
    local = np.zeros((d, d), dtype=complex)
    local[:3, :3] = op
    mats = [local if i == site else np.eye(d) for i in range(N)]
    return reduce(np.kron, mats)


def bond_sum(axes: Sequence[str], N: int, d: int = 3) -> np.ndarray:
    """sum over open-chain bonds of sum_{a in axes} S_a^l S_a^{l+1}."""
    out = np.zeros((d**N, d**N), dtype=complex)
    for a in axes:
        op = _axis(a)
        for ell in range(N - 1):
            out += site_operator(op, ell, N, d) @ site_operator(op, ell + 1, N, d)
    return out


def field_sum(axis: str, N: int, d: int = 3) -> np.ndarray:
    op = _axis(axis)
    return sum(site_operator(op, ell, N, d) for ell in range(N))


def pair_hamiltonian(alpha: str, beta: str, C: float, N: int, d: int = 3) -> np.ndarray:
    """C sum_l (S_alpha S_alpha + S_beta S_beta) over nearest neighbours."""
    return C * bond_sum((alpha, beta), N, d)


def xx_hamiltonian(C: float, N: int, d: int = 3) -> np.ndarray:
    return C * bond_sum(("x",), N, d)


@dataclass(frozen=True)
class ModelSpec:
    """Target model. ``couplings`` is (lambda_x, lambda_y, lambda_z) or (J, B) for Ising."""

    kind: str
    N: int
    couplings: tuple

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind in ("heisenberg", "xxz"):
            if len(self.couplings) != 3:
                raise ValueError(f"{kind} needs (lambda_x, lambda_y, lambda_z)")
            if kind == "xxz" and not np.isclose(self.couplings[0], self.couplings[1]):
                raise ValueError("xxz requires lambda_x == lambda_y")
        elif kind == "ising":
            if len(self.couplings) != 2:
                raise ValueError("ising needs (J, B)")
        else:
            raise ValueError(f"unknown model kind {self.kind!r}")


def model_hamiltonian(spec: ModelSpec, d: int = 3) -> np.ndarray:
    N = spec.N
    if spec.kind in ("heisenberg", "xxz"):
        lx, ly, lz = spec.couplings
        return lx * bond_sum("x", N, d) + ly * bond_sum("y", N, d) + lz * bond_sum("z", N, d)
    J, B = spec.couplings
    return J * bond_sum("x", N, d) + B * field_sum("x", N, d)


def exact_propagator(h: np.ndarray, t: float, max_dim: int = DENSE_DIM_LIMIT) -> np.ndarray:
    """exp(-i H t) by Hermitian eigendecomposition."""
    h = np.asarray(h)
    if h.shape[0] > max_dim:
        raise ValueError(f"dimension {h.shape[0]} exceeds the dense limit {max_dim}")
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def rotations(N: int = 1, d: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Global R_X = prod exp(-i S_X pi/2) and R_Y = prod exp(-i S_Y pi/2)."""
    ops = spin1_ops()
    rx1 = exact_propagator(ops.S_X, np.pi / 2)
    ry1 = exact_propagator(ops.S_Y, np.pi / 2)

    def glob(u):
        local = np.eye(d, dtype=complex)
        local[:3, :3] = u
        return reduce(np.kron, [local] * N)

    return glob(rx1), glob(ry1)


def heisenberg_couplings_from_pairs(C_xy: float, C_yz: float, C_zx: float) -> tuple[float, float, float]:
    return C_xy + C_zx, C_xy + C_yz, C_yz + C_zx


def pairs_from_heisenberg(lx: float, ly: float, lz: float) -> tuple[float, float, float]:
    """Inverse of the pair decomposition: (C_xy, C_yz, C_zx)."""
    return (lx + ly - lz) / 2, (ly + lz - lx) / 2, (lx + lz - ly) / 2


def _psd_factor(m: np.ndarray, fail: float = 1e-6) -> np.ndarray:
    """A with m = A A^dagger; eigenvalues below the rounding floor are dropped."""
    w, v = np.linalg.eigh((m + m.conj().T) / 2)
    if w.min() < -fail:
        raise ValueError(f"matrix has eigenvalue {w.min():.3e} below -{fail}")
    floor = m.shape[0] * np.finfo(float).eps * max(w.max(), 0.0)
    keep = w > floor
    return v[:, keep] * np.sqrt(w[keep])


def uhlmann_fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """F = Tr sqrt(sqrt(rho) sigma sqrt(rho)), not squared.

    A state vector on either side uses the exact form sqrt(<psi|sigma|psi>); two density
    matrices use the nuclear norm of A^dagger B with rho = A A^dagger, sigma = B B^dagger.
    """
    rho, sigma = np.asarray(rho), np.asarray(sigma)
    if rho.shape[0] != sigma.shape[0] or rho.ndim > 2 or sigma.ndim > 2:
        raise ValueError(f"dimension mismatch {rho.shape} vs {sigma.shape}")
    if rho.ndim == 1 and sigma.ndim == 1:
        f = abs(np.vdot(rho, sigma))
    elif rho.ndim == 1 or sigma.ndim == 1:
        psi, m = (rho, sigma) if rho.ndim == 1 else (sigma, rho)
        if m.shape != (psi.size, psi.size):
            raise ValueError(f"dimension mismatch {rho.shape} vs {sigma.shape}")
        w = np.linalg.eigvalsh((m + m.conj().T) / 2).min()
        if w < -1e-6:
            raise ValueError(f"density matrix eigenvalue {w:.3e} below -1e-6")
        f = np.sqrt(max(np.real(np.vdot(psi, m @ psi)), 0.0))
    else:
        if rho.shape != sigma.shape:
            raise ValueError(f"dimension mismatch {rho.shape} vs {sigma.shape}")
        a, b = _psd_factor(rho), _psd_factor(sigma)
        f = np.sum(np.linalg.svd(a.conj().T @ b, compute_uv=False)) if a.size and b.size else 0.0
    return min(max(float(f), 0.0), 1.0)


def haar_random_state(dim: int, seed) -> np.ndarray:
    """Complex Gaussian vector normalized to one; deterministic for a given seed."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return psi / np.linalg.norm(psi)
