"""SQUID-mediated couplings and assembly of the chain Hamiltonian in the dressed product basis.

Product-basis ordering follows ``np.kron``: site 0 is the most significant index.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

from .qrs import QRSParams, build_rabi_hamiltonian, diagonalize, dressed_site

LINEARIZATION_LIMIT = 0.1


@dataclass(frozen=True)
class CircuitParams:
    phi_o: float
    I_c: float
    Z: float
    C: float
    omega_r: float
    phi_offset: float

    def __post_init__(self):
        for name in ("phi_o", "I_c", "Z", "C", "omega_r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not abs(self.phi_offset) < math.pi / 2:
            raise ValueError("|phi_offset| must be below pi/2")


def effective_PQ(circuit: CircuitParams) -> tuple[float, float]:
    """Static (P) and flux-modulated (Q) resonator couplings of one grounded SQUID."""
    cos = math.cos(circuit.phi_offset)
    if cos <= 0:
        raise ValueError("cos(phi_offset) must be positive")
    scale = circuit.phi_o * circuit.omega_r / (4.0 * circuit.I_c * circuit.Z**2 * circuit.C)
    return scale / cos, scale * math.sin(circuit.phi_offset) / cos**2


def resonator_mode_numbers(position: str, n: int, length: float) -> float:
    """Wavenumber of mode ``n``: quarter-wave edge resonator or half-wave bulk resonator."""
    if n < 0:
        raise ValueError("mode index must be non-negative")
    if not length > 0:
        raise ValueError("length must be positive")
    if position == "edge":
        return math.pi * (n + 0.5) / length
    if position == "bulk":
        if n == 0:
            raise ValueError("bulk mode n=0 is the null mode")
        return n * math.pi / length
    raise ValueError(f"position must be 'edge' or 'bulk', got {position!r}")


def _tone_arrays(tones) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    arr = np.asarray(tones, dtype=float).reshape(-1, 3)
    return arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()


@dataclass(frozen=True)
class FluxSignal:
    """Normalized SQUID flux sum_n gamma_n cos(nu_n t + phase_n) + dc."""

    components: tuple = ()
    dc: float = 0.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        comps = tuple(tuple(float(x) for x in c) for c in self.components)
        if any(len(c) != 3 for c in comps):
            raise ValueError("flux components are (gamma, nu, phase) triples")
        if not all(math.isfinite(x) for c in comps for x in c):
            raise ValueError("flux components must be finite")
        object.__setattr__(self, "components", comps)

    def __call__(self, t):
        amp, freq, phase = self.arrays()
        t = np.asarray(t, dtype=float)
        return self.dc + np.sum(amp * np.cos(np.multiply.outer(t, freq) + phase), axis=-1)

    def arrays(self):
        return _tone_arrays(self.components) if self.components else (np.zeros(0),) * 3

    @property
    def max_excursion(self) -> float:
        """Upper bound on max_t |flux|."""
        return abs(self.dc) + sum(abs(c[0]) for c in self.components)

    def check_linearization(self, limit: float = LINEARIZATION_LIMIT) -> float:
        value = self.max_excursion
        if value > limit:
            warnings.warn(
                f"flux excursion bound {value:.3g} exceeds {limit}; "
                "the small-signal expansion of the SQUID energy is questionable",
                stacklevel=2,
            )
        return value

    @classmethod
    def off(cls) -> "FluxSignal":
        return cls(())


def _per_squid(values, n_squids: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full((n_squids, 2), float(arr))
    elif arr.shape == (n_squids,):
        arr = np.repeat(arr[:, None], 2, axis=1)
    if arr.shape != (n_squids, 2):
        raise ValueError(f"{name} must be scalar, length N-1, or shape (N-1, 2)")
    if np.any(arr < 0):
        raise ValueError(f"{name} must be non-negative")
    return arr


@dataclass(frozen=True)
class ChainConfig:
    """Interleaved chain of dressed sites.

    ``P[s]`` and ``Q[s]`` hold the (left-site, right-site) couplings of SQUID ``s``
    sitting between sites ``s`` and ``s+1``.
    """

    sites: tuple
    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        sites = tuple(self.sites)
        object.__setattr__(self, "sites", sites)
        if len(sites) < 2:
            raise ValueError("a chain needs at least two sites")
        for a, b in zip(sites, sites[1:]):
            if a.species == b.species:
                raise ValueError("adjacent sites must belong to different species")
        object.__setattr__(self, "P", _per_squid(self.P, len(sites) - 1, "P"))
        object.__setattr__(self, "Q", _per_squid(self.Q, len(sites) - 1, "Q"))

    @property
    def N(self) -> int:
        return len(self.sites)

    @property
    def dims(self) -> tuple:
        return tuple(s.n_kept for s in self.sites)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_kept(self) -> int:
        return self.sites[0].n_kept

    def P_on_site(self, ell: int) -> tuple[float, float]:
        left = self.P[ell - 1, 1] if ell > 0 else 0.0
        right = self.P[ell, 0] if ell < self.N - 1 else 0.0
        return float(left), float(right)


def build_chain(species_params: Sequence[QRSParams], N: int, P, Q, n_kept: int = 4) -> ChainConfig:
    """Diagonalize each species once and lay out A-B-A-... with per-site P shifts."""
    if N < 2:
        raise ValueError("N must be >= 2")
    if len(species_params) != 2:
        raise ValueError("exactly two species are required")
    spectra = [diagonalize(build_rabi_hamiltonian(p), n_kept) for p in species_params]
    Pm = _per_squid(P, N - 1, "P")
    sites = []
    for ell in range(N):
        left = Pm[ell - 1, 1] if ell > 0 else 0.0
        right = Pm[ell, 0] if ell < N - 1 else 0.0
        k = ell % 2
        sites.append(dressed_site(species_params[k], n_kept, left, right, spectrum=spectra[k]))
    return ChainConfig(tuple(sites), Pm, Q)


def embed(ops: dict, dims: Sequence[int]) -> np.ndarray:
    """Kronecker product with ``ops[site]`` on the listed sites and identities elsewhere."""
    mats = [ops.get(i, np.eye(d)) for i, d in enumerate(dims)]
    return reduce(np.kron, mats)


def product_diagonal(diags: Sequence[np.ndarray]) -> np.ndarray:
    """Sum over sites of per-site diagonals on the product basis."""
    total = np.zeros(1)
    for d in diags:
        total = np.add.outer(total, np.asarray(d, dtype=float)).ravel()
    return total


def global_parity(chain: ChainConfig) -> np.ndarray:
    """Diagonal of the product of site parities."""
    out = np.ones(1)
    for s in chain.sites:
        out = np.multiply.outer(out, s.spectrum.kept_parities.astype(float)).ravel()
    return out


def bare_energies(chain: ChainConfig) -> np.ndarray:
    return product_diagonal([s.epsilon for s in chain.sites])


def static_coupling(chain: ChainConfig) -> np.ndarray:
    """Off-diagonal static part: single-site squeezing transitions and the P cross terms."""
    dims = chain.dims
    v = np.zeros((chain.dim, chain.dim))
    for ell, site in enumerate(chain.sites):
        z_off = site.z - np.diag(np.diag(site.z))
        p_sum = sum(chain.P_on_site(ell))
        if p_sum:
            v += p_sum * embed({ell: z_off}, dims)
    for s in range(chain.N - 1):
        coeff = 2.0 * math.sqrt(chain.P[s, 0] * chain.P[s, 1])
        if coeff:
            v -= coeff * embed({s: chain.sites[s].chi, s + 1: chain.sites[s + 1].chi}, dims)
    return v


def modulation_operator(chain: ChainConfig, squid: int) -> np.ndarray:
    """Operator multiplying the normalized flux of one SQUID."""
    dims = chain.dims
    left, right = chain.sites[squid], chain.sites[squid + 1]
    ql, qr = chain.Q[squid]
    m = ql * embed({squid: left.z}, dims) + qr * embed({squid + 1: right.z}, dims)
    m -= 2.0 * math.sqrt(ql * qr) * embed({squid: left.chi, squid + 1: right.chi}, dims)
    return m


def drive_operator(chain: ChainConfig, site: int) -> np.ndarray:
    return embed({site: chain.sites[site].chi}, chain.dims)


def build_static_chain(chain: ChainConfig) -> np.ndarray:
    return np.diag(bare_energies(chain)) + static_coupling(chain)


def build_modulated_chain(chain: ChainConfig, signals: Sequence[FluxSignal], t: float) -> np.ndarray:
    if len(signals) != chain.N - 1:
        raise ValueError(f"expected {chain.N - 1} flux signals, got {len(signals)}")
    h = build_static_chain(chain)
    for s, sig in enumerate(signals):
        if sig is None:
            continue
        value = float(sig(t))
        if value:
            h = h + value * modulation_operator(chain, s)
    return h


@dataclass
class ChainHamiltonian:
    """H(t) = diag(energies) + static + sum_c w_c(t) channel_c, with multi-tone w_c.

    ``interaction(t)`` gives the same operator in the interaction picture of the
    diagonal part. Array layout is what the compiled propagation kernel consumes.
    """

    energies: np.ndarray
    static: np.ndarray
    channel_ops: np.ndarray
    tone_amp: np.ndarray
    tone_freq: np.ndarray
    tone_phase: np.ndarray
    labels: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.energies.size

    def weights(self, t: float) -> np.ndarray:
        return np.sum(self.tone_amp * np.cos(self.tone_freq * t + self.tone_phase), axis=1)

    def coupling(self, t: float) -> np.ndarray:
        v = self.static.astype(complex)
        w = self.weights(t)
        for k in range(w.size):
            v = v + w[k] * self.channel_ops[k]
        return v

    def lab(self, t: float) -> np.ndarray:
        return np.diag(self.energies).astype(complex) + self.coupling(t)

    def interaction(self, t: float) -> np.ndarray:
        ph = np.exp(1j * self.energies * t)
        return ph[:, None] * self.coupling(t) * ph.conj()[None, :]

    def max_frequency(self) -> float:
        """Largest angular frequency present in the interaction-picture operator."""
        mask = np.abs(self.static) > 0
        for op in self.channel_ops:
            mask |= np.abs(op) > 0
        gaps = np.abs(np.subtract.outer(self.energies, self.energies))[mask]
        spread = gaps.max() if gaps.size else 0.0
        top = np.max(np.abs(self.tone_freq)) if self.tone_freq.size else 0.0
        return float(spread + top)


def chain_hamiltonian(chain: ChainConfig, flux: Sequence[FluxSignal | None] | None = None,
                      drives: Sequence | None = None, include_static: bool = True) -> ChainHamiltonian:
    """Structured chain Hamiltonian for flux signals per SQUID and drives per site.

    ``drives[ell]`` is any object with an ``arrays()`` method returning
    (amplitude, frequency, phase) tone arrays, or None.
    """
    ops, tones, labels = [], [], []
    if flux is not None:
        if len(flux) != chain.N - 1:
            raise ValueError(f"expected {chain.N - 1} flux signals, got {len(flux)}")
        for s, sig in enumerate(flux):
            if sig is None or not sig.components:
                continue
            sig.check_linearization()
            ops.append(modulation_operator(chain, s))
            tones.append(sig.arrays())
            labels.append(f"flux[{s}]")
            if sig.dc:
                ops.append(ops[-1])
                tones.append((np.array([sig.dc]), np.zeros(1), np.zeros(1)))
                labels.append(f"flux_dc[{s}]")
    if drives is not None:
        if len(drives) != chain.N:
            raise ValueError(f"expected {chain.N} drive entries, got {len(drives)}")
        for ell, drv in enumerate(drives):
            if drv is None:
                continue
            ops.append(drive_operator(chain, ell))
            tones.append(drv.arrays())
            labels.append(f"drive[{ell}]")
    n_t = max([len(t[0]) for t in tones], default=1)
    amp = np.zeros((len(ops), n_t))
    freq = np.zeros((len(ops), n_t))
    phase = np.zeros((len(ops), n_t))
    for k, (a, f, p) in enumerate(tones):
        amp[k, : a.size], freq[k, : f.size], phase[k, : p.size] = a, f, p
    dim = chain.dim
    channel_ops = np.array(ops, dtype=complex) if ops else np.zeros((0, dim, dim), dtype=complex)
    static = static_coupling(chain) if include_static else np.zeros((dim, dim))
    return ChainHamiltonian(bare_energies(chain), static.astype(complex), channel_ops,
                            amp, freq, phase, labels)
