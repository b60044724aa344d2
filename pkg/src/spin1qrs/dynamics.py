"""Propagation of chain states: full flux-driven model, effective gates, Lindblad dynamics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.constants as const
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply
from numba import njit

from .circuit import ChainHamiltonian
from .errors import LeakageError, PropagationError
from .pulses import GateSchedule, ROTATION_PHASE, Segment
from .qrs import DressedSite, field_operator, sigma_x_operator, sigma_z_operator
from .spin1 import bond_sum, field_sum

DENSE_SUPEROP_LIMIT = 1024
LEAKAGE_LIMIT = 1e-6


# ---------------------------------------------------------------- states


@dataclass(frozen=True)
class ChainState:
    """Pure vector or density matrix over the per-site truncated dressed bases."""

    data: np.ndarray
    dims: tuple
    time: float = 0.0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=complex)
        dim = int(np.prod(self.dims))
        if data.shape not in ((dim,), (dim, dim)):
            raise ValueError(f"state shape {data.shape} does not match dims {self.dims}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    def density(self) -> np.ndarray:
        return np.outer(self.data, self.data.conj()) if self.is_pure else self.data

    def validate(self, tol: float = 1e-8) -> None:
        if self.is_pure:
            drift = abs(np.linalg.norm(self.data) - 1.0)
            if drift > tol:
                raise PropagationError(f"state norm deviates from 1 by {drift:.3e}")
            return
        rho = self.data
        herm = np.max(np.abs(rho - rho.conj().T))
        if herm > 1e-10:
            raise PropagationError(f"density matrix not Hermitian ({herm:.3e})")
        tr = abs(np.trace(rho) - 1.0)
        if tr > tol:
            raise PropagationError(f"trace deviates from 1 by {tr:.3e}")
        w = np.linalg.eigvalsh(rho).min()
        if w < -tol:
            raise PropagationError(f"minimum eigenvalue {w:.3e}")


def spin1_mask(dims: Sequence[int], levels: int = 3) -> np.ndarray:
    mask = np.ones(1, dtype=bool)
    for d in dims:
        mask = np.logical_and.outer(mask, np.arange(d) < levels).ravel()
    return mask


def embed_spin1(psi: np.ndarray, dims: Sequence[int]) -> np.ndarray:
    """Place a 3^N vector (or matrix) into the product space with per-site dims."""
    mask = spin1_mask(dims)
    psi = np.asarray(psi)
    if psi.ndim == 1:
        out = np.zeros(mask.size, dtype=complex)
        out[mask] = psi
    else:
        out = np.zeros((mask.size, mask.size), dtype=complex)
        out[np.ix_(mask, mask)] = psi
    return out


def leakage(state: ChainState | np.ndarray, dims: Sequence[int] | None = None) -> float:
    """Population outside the per-site {|0>, |1>, |2>} subspace."""
    if isinstance(state, ChainState):
        data, dims = state.data, state.dims
    else:
        data = np.asarray(state)
    out = ~spin1_mask(dims)
    if data.ndim == 1:
        p = float(np.sum(np.abs(data[out]) ** 2))
    else:
        p = float(np.sum(np.real(np.diag(data))[out]))
    return min(max(p, 0.0), 1.0)


# ---------------------------------------------------------------- dissipation


def thermal_occupation(omega, T: float):
    """Bose occupation 1/(exp(hbar omega / k_B T) - 1); exactly zero at T = 0."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("thermal occupation needs omega > 0")
    if T < 0:
        raise ValueError("temperature must be non-negative")
    if T == 0:
        out = np.zeros_like(omega)
    else:
        x = const.hbar * omega / (const.k * T)
        out = 1.0 / np.expm1(x)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Channel:
    site: int
    k: int
    j: int
    omega: float
    gamma: float
    nbar: float

    @property
    def down(self) -> float:
        return self.gamma * (1.0 + self.nbar)

    @property
    def up(self) -> float:
        return self.gamma * self.nbar


@dataclass(frozen=True)
class DissipatorSet:
    """Dressed-basis decay and thermal excitation channels for every site."""

    channels: tuple
    dims: tuple
    temperature: float = 0.0
    kappas: tuple = (0.0, 0.0, 0.0)
    omitted_rate: float = 0.0

    def __post_init__(self):
        for c in self.channels:
            if c.gamma < 0 or c.nbar < 0:
                raise ValueError("dissipation rates must be non-negative")

    def __len__(self):
        return len(self.channels)

    def jump_operators(self) -> list[tuple[sp.csr_matrix, float]]:
        """(L, rate) pairs for D[L] with L = |j><k| (down) and |k><j| (up) embedded per site."""
        ops = []
        for c in self.channels:
            for (a, b), rate in (((c.j, c.k), c.down), ((c.k, c.j), c.up)):
                if rate <= 0:
                    continue
                local = sp.csr_matrix(([1.0], ([a], [b])), shape=(self.dims[c.site],) * 2)
                left = sp.identity(int(np.prod(self.dims[: c.site])), format="csr")
                right = sp.identity(int(np.prod(self.dims[c.site + 1:])), format="csr")
                ops.append((sp.kron(sp.kron(left, local), right, format="csr"), float(rate)))
        return ops

    def rate_table(self) -> list[dict]:
        return [{"site": c.site, "k": c.k, "j": c.j, "omega_rad_s": c.omega, "gamma": c.gamma,
                 "nbar": c.nbar, "down": c.down, "up": c.up} for c in self.channels]


def _channel_rate(site: DressedSite, k: int, j: int, omega: float, chi, sx, sz, kappa_c, kappa_x, kappa_z):
    p = site.params
    return omega * (kappa_c / p.omega_r * chi[k, j] ** 2 + kappa_x / p.omega_q * sx[k, j] ** 2
                    + kappa_z / p.omega_q * sz[k, j] ** 2)


def build_dissipators(sites: Sequence[DressedSite], kappa_c: float, kappa_x: float,
                      kappa_z: float, T: float, n_omitted: int = 4) -> DissipatorSet:
    """Rates Gamma_kj = omega_kj (kappa_c chi^2 / omega_r + kappa_x sx^2 / omega_q + kappa_z sz^2 / omega_q).

    ``omitted_rate`` sums the rates of the next ``n_omitted`` levels above the cutoff.
    """
    if min(kappa_c, kappa_x, kappa_z) < 0:
        raise ValueError("kappa values must be non-negative")
    channels = []
    omitted = 0.0
    if kappa_c or kappa_x or kappa_z:
        for ell, site in enumerate(sites):
            n = site.n_kept
            for k in range(1, n):
                for j in range(k):
                    omega = site.transition(k, j)
                    if omega <= 0:
                        raise ValueError(f"non-positive transition {k}->{j} on site {ell}; spectrum unsorted")
                    g = _channel_rate(site, k, j, omega, site.chi, site.sigma_x, site.sigma_z,
                                      kappa_c, kappa_x, kappa_z)
                    if g > 0:
                        channels.append(Channel(ell, k, j, omega, g, thermal_occupation(omega, T)))
            spec = site.spectrum
            top = min(n + n_omitted, spec.energies.size)
            v = spec.states[:, :top]
            chi = v.T @ field_operator(spec.n_fock) @ v
            sx = v.T @ sigma_x_operator(spec.n_fock) @ v
            sz = v.T @ sigma_z_operator(spec.n_fock) @ v
            for k in range(n, top):
                for j in range(k):
                    omega = spec.energies[k] - spec.energies[j]
                    omitted += _channel_rate(site, k, j, omega, chi, sx, sz, kappa_c, kappa_x, kappa_z)
    dims = tuple(s.n_kept for s in sites)
    return DissipatorSet(tuple(channels), dims, T, (kappa_c, kappa_x, kappa_z), float(omitted))


# ---------------------------------------------------------------- options


@dataclass(frozen=True)
class PropagationOptions:
    method: str = "rk45"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float | None = None
    sample_times: tuple = ()
    norm_budget: float | None = None
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.method not in ("rk45", "magnus2"):
            raise ValueError("method is 'rk45' (adaptive step-doubling RK4) or 'magnus2'")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be positive")
        ts = tuple(float(t) for t in self.sample_times)
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("sample_times must be non-decreasing")
        object.__setattr__(self, "sample_times", ts)

    def resolved_max_step(self, nu_max: float) -> float:
        limit = (2 * math.pi / nu_max) / 20 if nu_max > 0 else math.inf
        return min(self.max_step or limit, limit)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    n_steps: int = 0
    n_rejected: int = 0
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------- compiled kernel


@njit(cache=True)
def _hint(t, E, static, ops, amp, freq, phase, out):
    dim = E.size
    nch = ops.shape[0]
    nt = amp.shape[1]
    w = np.zeros(nch)
    for c in range(nch):
        s = 0.0
        for n in range(nt):
            if amp[c, n] != 0.0:
                s += amp[c, n] * math.cos(freq[c, n] * t + phase[c, n])
        w[c] = s
    ph = np.exp(1j * E * t)
    for a in range(dim):
        for b in range(dim):
            v = static[a, b]
            for c in range(nch):
                v += w[c] * ops[c, a, b]
            out[a, b] = ph[a] * v * np.conj(ph[b])


@njit(cache=True)
def _rk4(t, y, h, k1, E, static, ops, amp, freq, phase, H):
    _hint(t + 0.5 * h, E, static, ops, amp, freq, phase, H)
    k2 = -1j * (H @ (y + 0.5 * h * k1))
    k3 = -1j * (H @ (y + 0.5 * h * k2))
    _hint(t + h, E, static, ops, amp, freq, phase, H)
    k4 = -1j * (H @ (y + h * k3))
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _integrate(E, static, ops, amp, freq, phase, y0, t0, samples, h0, max_step, atol, rtol, max_steps):
    dim = E.size
    ns = samples.size
    out = np.empty((ns, y0.shape[0], y0.shape[1]), dtype=np.complex128)
    H = np.empty((dim, dim), dtype=np.complex128)
    y = y0.copy()
    t = t0
    h_est = min(h0, max_step)
    idx = 0
    steps = 0
    rejected = 0
    status = 0
    while idx < ns and samples[idx] <= t:
        out[idx] = y
        idx += 1
    while idx < ns:
        if steps + rejected >= max_steps:
            status = 2
            break
        remaining = samples[idx] - t
        h = min(h_est, remaining)
        _hint(t, E, static, ops, amp, freq, phase, H)
        k1 = -1j * (H @ y)
        y_full = _rk4(t, y, h, k1, E, static, ops, amp, freq, phase, H)
        y_half = _rk4(t, y, 0.5 * h, k1, E, static, ops, amp, freq, phase, H)
        _hint(t + 0.5 * h, E, static, ops, amp, freq, phase, H)
        k1h = -1j * (H @ y_half)
        y_two = _rk4(t + 0.5 * h, y_half, 0.5 * h, k1h, E, static, ops, amp, freq, phase, H)
        err = 0.0
        for a in range(y.shape[0]):
            for b in range(y.shape[1]):
                e = abs(y_two[a, b] - y_full[a, b]) / 15.0
                sc = atol + rtol * max(abs(y_two[a, b]), abs(y[a, b]))
                if e / sc > err:
                    err = e / sc
        if err <= 1.0:
            y = y_two + (y_two - y_full) / 15.0
            steps += 1
            if h >= remaining:
                t = samples[idx]
                while idx < ns and samples[idx] <= t:
                    out[idx] = y
                    idx += 1
            else:
                t = t + h
            fac = 4.0 if err == 0.0 else min(4.0, 0.9 * err ** -0.2)
            if h == h_est or fac < 1.0:
                h_est = min(h * fac, max_step)
        else:
            rejected += 1
            h_est = h * max(0.2, 0.9 * err ** -0.2)
            if h_est < 1e-14 * max(abs(t), 1e-30) or h_est == 0.0:
                status = 1
                break
    return out, steps, rejected, status


# ---------------------------------------------------------------- generic integrators


def _adaptive_rk4(f: Callable, y0: np.ndarray, t0: float, samples: np.ndarray, h0: float,
                  max_step: float, atol: float, rtol: float, max_steps: int, post=None):
    """Step-doubling RK4 with local extrapolation for arbitrary right-hand sides."""

    def rk4(t, y, h, k1):
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    out = []
    y, t, h_est = y0.copy(), t0, min(h0, max_step)
    steps = rejected = 0
    idx = 0
    while idx < len(samples) and samples[idx] <= t:
        out.append(y.copy())
        idx += 1
    while idx < len(samples):
        if steps + rejected >= max_steps:
            raise PropagationError(f"step budget {max_steps} exhausted at t = {t:.6e}")
        remaining = samples[idx] - t
        h = min(h_est, remaining)
        k1 = f(t, y)
        y_full = rk4(t, y, h, k1)
        y_half = rk4(t, y, h / 2, k1)
        y_two = rk4(t + h / 2, y_half, h / 2, f(t + h / 2, y_half))
        scale = atol + rtol * np.maximum(np.abs(y_two), np.abs(y))
        err = float(np.max(np.abs(y_two - y_full) / 15.0 / scale))
        if err <= 1.0:
            y = y_two + (y_two - y_full) / 15.0
            if post is not None:
                y = post(y)
            steps += 1
            if h >= remaining:
                t = samples[idx]
                while idx < len(samples) and samples[idx] <= t:
                    out.append(y.copy())
                    idx += 1
            else:
                t += h
            fac = 4.0 if err == 0 else min(4.0, 0.9 * err ** -0.2)
            if h == h_est or fac < 1.0:
                h_est = min(h * fac, max_step)
        else:
            rejected += 1
            h_est = h * max(0.2, 0.9 * err ** -0.2)
            if h_est < 1e-14 * max(abs(t), 1e-30):
                raise PropagationError(f"step size underflow at t = {t:.6e}")
    return np.array(out), steps, rejected


def _expm_hermitian(h: np.ndarray, tau: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * tau)) @ v.conj().T


def _magnus2(hfun: Callable, y0: np.ndarray, t0: float, samples: np.ndarray, max_step: float):
    out = []
    y, t = y0.copy(), t0
    steps = 0
    for s in samples:
        while s - t > 1e-15 * max(abs(s), 1.0):
            h = min(max_step, s - t)
            y = _expm_hermitian(hfun(t + h / 2), h) @ y
            t += h
            steps += 1
        t = s
        out.append(y.copy())
    return np.array(out), steps


# ---------------------------------------------------------------- unitary propagation


def _as_columns(psi0) -> tuple[np.ndarray, bool, tuple | None]:
    if isinstance(psi0, ChainState):
        if not psi0.is_pure:
            raise ValueError("propagate_unitary needs a pure state")
        return psi0.data[:, None].copy(), True, psi0.dims
    arr = np.asarray(psi0, dtype=complex)
    if arr.ndim == 1:
        return arr[:, None].copy(), True, None
    return arr.copy(), False, None


def propagate_unitary(H, psi0, opts: PropagationOptions, t0: float = 0.0,
                      picture: str = "interaction") -> Trajectory:
    """Schroedinger evolution sampled at ``opts.sample_times``.

    ``H`` is a ChainHamiltonian (compiled kernel; ``picture`` selects the
    interaction picture of the diagonal part or the lab frame), a constant
    Hermitian matrix, or a callable t -> matrix. ``psi0`` may be a ChainState, a
    vector, or a matrix of column states (e.g. the identity for the propagator).
    """
    y0, single, dims = _as_columns(psi0)
    samples = np.asarray(opts.sample_times, dtype=float)
    if samples.size and samples[0] < t0:
        raise ValueError("sample times precede t0")
    budget = opts.norm_budget if opts.norm_budget is not None else 10 * opts.abs_tol
    norms0 = np.linalg.norm(y0, axis=0)

    if isinstance(H, ChainHamiltonian):
        if picture not in ("interaction", "lab"):
            raise ValueError("picture is 'interaction' or 'lab'")
        E = H.energies - np.mean(H.energies)
        nu_max = H.max_frequency()
        static = H.static.astype(complex)
        if picture == "lab":
            static = static + np.diag(E)
            nu_max = max(nu_max, float(np.ptp(E)))
            E = np.zeros_like(E)
        max_step = opts.resolved_max_step(nu_max)
        if opts.method == "magnus2":
            hfun = H.interaction if picture == "interaction" else H.lab
            states, steps = _magnus2(hfun, y0, t0, samples, max_step)
            rejected = 0
        elif samples.size:
            ops = np.ascontiguousarray(H.channel_ops, dtype=complex)
            if ops.shape[0] == 0:
                ops = np.zeros((1, H.dim, H.dim), dtype=complex)
                amp = np.zeros((1, 1))
                freq = np.zeros((1, 1))
                phase = np.zeros((1, 1))
            else:
                amp, freq, phase = H.tone_amp, H.tone_freq, H.tone_phase
            states, steps, rejected, status = _integrate(
                E.astype(float), np.ascontiguousarray(static), ops, amp.astype(float),
                freq.astype(float), phase.astype(float), np.ascontiguousarray(y0), float(t0),
                samples, max_step, max_step, opts.abs_tol, opts.rel_tol, opts.max_steps)
            if status == 1:
                raise PropagationError("step size underflow in compiled kernel")
            if status == 2:
                raise PropagationError(f"step budget {opts.max_steps} exhausted")
        else:
            states, steps, rejected = np.zeros((0,) + y0.shape, complex), 0, 0
    else:
        if callable(H):
            hfun = H
        else:
            hc = np.asarray(H, dtype=complex)
            hfun = lambda t: hc  # noqa: E731
        max_step = opts.max_step or math.inf
        if opts.method == "magnus2":
            if not math.isfinite(max_step):
                raise ValueError("magnus2 needs max_step")
            states, steps = _magnus2(hfun, y0, t0, samples, max_step)
            rejected = 0
        else:
            span = (samples[-1] - t0) if samples.size else 0.0
            h0 = min(max_step, span / 100 if span > 0 else 1.0)
            states, steps, rejected = _adaptive_rk4(
                lambda t, y: -1j * (hfun(t) @ y), y0, t0, samples, h0, max_step,
                opts.abs_tol, opts.rel_tol, opts.max_steps)

    drift = 0.0
    if len(states):
        drift = float(np.max(np.abs(np.linalg.norm(states, axis=1) - norms0[None, :])))
    diag = {"norm_drift": drift, "method": opts.method}
    if drift > budget:
        raise PropagationError(f"norm drift {drift:.3e} exceeds budget {budget:.3e} "
                               f"after {steps} steps ({rejected} rejected)")
    if single:
        states = states[:, :, 0]
    return Trajectory(samples, states, steps, rejected, diag)


# ---------------------------------------------------------------- Lindblad


def liouvillian(h, jumps: Sequence[tuple]) -> sp.csr_matrix:
    """Column-stacking superoperator of -i[H, .] + sum rate D[L]."""
    h = sp.csr_matrix(h)
    dim = h.shape[0]
    eye = sp.identity(dim, format="csr")
    L = -1j * (sp.kron(eye, h) - sp.kron(h.T, eye))
    for op, rate in jumps:
        op = sp.csr_matrix(op)
        ldl = (op.conj().T @ op)
        L = L + rate * (sp.kron(op.conj(), op) - 0.5 * sp.kron(eye, ldl) - 0.5 * sp.kron(ldl.T, eye))
    return sp.csr_matrix(L)


def _dissipator_apply(rho, jumps):
    out = np.zeros_like(rho)
    for op, rate in jumps:
        orho = op @ rho
        out += rate * (orho @ op.conj().T - 0.5 * (op.conj().T @ orho + (rho @ op.conj().T) @ op))
    return out


def _rho_monitor(rho):
    return (float(abs(np.trace(rho) - 1.0)), float(np.linalg.eigvalsh((rho + rho.conj().T) / 2).min()))


def propagate_lindblad(H, dissipators: DissipatorSet | None, rho0, opts: PropagationOptions,
                       t0: float = 0.0) -> Trajectory:
    """Master-equation evolution sampled at ``opts.sample_times``.

    A constant matrix ``H`` is handled exactly through the Liouvillian exponential;
    ChainHamiltonian (interaction picture) or callable ``H`` use adaptive RK4 with
    Hermitian symmetrization after every step.
    """
    if isinstance(rho0, ChainState):
        rho = rho0.density()
    else:
        rho = np.asarray(rho0, dtype=complex)
        if rho.ndim == 1:
            rho = np.outer(rho, rho.conj())
    samples = np.asarray(opts.sample_times, dtype=float)
    jumps = dissipators.jump_operators() if dissipators is not None else []
    dim = rho.shape[0]

    if isinstance(H, ChainHamiltonian) or callable(H):
        hfun = H.interaction if isinstance(H, ChainHamiltonian) else H
        dense_jumps = [(op.toarray(), r) for op, r in jumps]
        max_step = opts.max_step or (
            opts.resolved_max_step(H.max_frequency()) if isinstance(H, ChainHamiltonian) else math.inf)

        def rhs(t, r):
            hh = hfun(t)
            return -1j * (hh @ r - r @ hh) + _dissipator_apply(r, dense_jumps)

        span = (samples[-1] - t0) if samples.size else 0.0
        h0 = min(max_step, span / 100 if span > 0 else 1.0)
        states, steps, rejected = _adaptive_rk4(
            rhs, rho, t0, samples, h0, max_step, opts.abs_tol, opts.rel_tol, opts.max_steps,
            post=lambda r: (r + r.conj().T) / 2)
    else:
        L = liouvillian(np.asarray(H, dtype=complex), jumps)
        states = []
        t = t0
        v = rho.reshape(-1, order="F")
        dense = L.shape[0] <= DENSE_SUPEROP_LIMIT
        Ld = L.toarray() if dense else None
        for s in samples:
            if s > t:
                v = sla.expm(Ld * (s - t)) @ v if dense else expm_multiply(L * (s - t), v)
                t = s
            r = v.reshape(dim, dim, order="F")
            states.append((r + r.conj().T) / 2)
        states = np.array(states)
        steps, rejected = len(samples), 0

    traces, mins = [], []
    for r in states:
        tr, w = _rho_monitor(r)
        traces.append(tr)
        mins.append(w)
        if w < -1e-6:
            raise PropagationError(f"density matrix eigenvalue {w:.3e} below -1e-6")
    diag = {"trace_error": max(traces, default=0.0), "min_eig": min(mins, default=0.0)}
    if diag["trace_error"] > 1e-8:
        raise PropagationError(f"trace drift {diag['trace_error']:.3e} exceeds 1e-8")
    return Trajectory(samples, np.array(states), steps, rejected, diag)


# ---------------------------------------------------------------- effective level


def segment_hamiltonian(seg: Segment, N: int, d: int = 3) -> np.ndarray:
    """Effective spin-1 generator of one schedule segment, embedded in d levels per site."""
    if seg.kind == "XY":
        return seg.strength * bond_sum(("x", "y"), N, d)
    if seg.kind == "XX":
        return seg.strength * bond_sum(("x",), N, d)
    if seg.is_rotation:
        phi = seg.params.get("varphi", ROTATION_PHASE[seg.kind])
        return seg.strength * (math.cos(phi) * field_sum("x", N, d) + math.sin(phi) * field_sum("y", N, d))
    if seg.kind == "ISING":
        return seg.strength * bond_sum(("x",), N, d) + seg.params.get("B", 0.0) * field_sum("x", N, d)
    return np.zeros((d**N, d**N), dtype=complex)


class _SegmentCache:
    def __init__(self, N, d, jumps):
        self.N, self.d, self.jumps = N, d, jumps
        self.h = {}
        self.props = {}

    def hamiltonian(self, seg):
        key = (seg.kind, seg.strength, tuple(sorted(seg.params.items())))
        if key not in self.h:
            self.h[key] = segment_hamiltonian(seg, self.N, self.d)
        return key, self.h[key]

    def unitary(self, seg, tau):
        key, h = self.hamiltonian(seg)
        pk = ("U", key, tau)
        if pk not in self.props:
            self.props[pk] = _expm_hermitian(h, tau)
        return self.props[pk]

    def superop(self, seg, tau):
        key, h = self.hamiltonian(seg)
        lk = ("L", key)
        if lk not in self.props:
            self.props[lk] = liouvillian(h, self.jumps)
        L = self.props[lk]
        if L.shape[0] > DENSE_SUPEROP_LIMIT:
            return lambda v: expm_multiply(L * tau, v)
        pk = ("P", key, tau)
        if pk not in self.props:
            self.props[pk] = sla.expm(L.toarray() * tau)
        P = self.props[pk]
        return lambda v: P @ v


def evolve_effective(schedule: GateSchedule, state: ChainState,
                     dissipators: DissipatorSet | None = None,
                     sample_times: Sequence[float] | None = None,
                     check_leakage: bool = True):
    """Apply each segment's exact effective propagator (Liouvillian exponential with dissipators).

    Returns the final ChainState; with ``sample_times`` returns (final, [states at those times]).
    """
    final, snaps = _evolve_many(schedule, [state], dissipators, sample_times, check_leakage)
    if sample_times is None:
        return final[0]
    return final[0], [s[0] for s in snaps]


def _evolve_many(schedule, states, dissipators, sample_times, check_leakage):
    dims = states[0].dims
    N, d = len(dims), dims[0]
    if any(x != d for x in dims):
        raise ValueError("effective evolution needs equal per-site dimensions")
    jumps = dissipators.jump_operators() if dissipators is not None and len(dissipators) else []
    lindblad = bool(jumps) or any(not s.is_pure for s in states)
    cache = _SegmentCache(N, d, jumps)
    dim = d**N
    t0 = states[0].time
    if lindblad:
        cur = np.stack([s.density().reshape(-1, order="F") for s in states], axis=1)
    else:
        cur = np.stack([s.data for s in states], axis=1)

    samples = sorted(float(x) for x in ([] if sample_times is None else sample_times))
    bounds = schedule.boundaries() + t0
    snaps = []
    si = 0

    def advance(v, seg, tau):
        if tau <= 0:
            return v
        if lindblad:
            return cache.superop(seg, tau)(v)
        return cache.unitary(seg, tau) @ v

    def to_states(v, t):
        if lindblad:
            return [ChainState(_herm(v[:, i].reshape(dim, dim, order="F")), dims, t)
                    for i in range(v.shape[1])]
        return [ChainState(v[:, i], dims, t) for i in range(v.shape[1])]

    while si < len(samples) and samples[si] <= bounds[0]:
        snaps.append(to_states(cur, samples[si]))
        si += 1
    for i, seg in enumerate(schedule.segments):
        start, stop = bounds[i], bounds[i + 1]
        local = start
        v = cur
        while si < len(samples) and samples[si] <= stop:
            v = advance(v, seg, samples[si] - local)
            local = samples[si]
            snaps.append(to_states(v, local))
            si += 1
        cur = advance(v, seg, stop - local)
    final = to_states(cur, bounds[-1])
    if check_leakage and d > 3:
        worst = max(leakage(s) for s in final)
        if worst > LEAKAGE_LIMIT:
            raise LeakageError(f"effective evolution leaked {worst:.3e} out of the spin-1 subspace")
    return final, snaps


def _herm(r):
    return (r + r.conj().T) / 2


def evolve_effective_batch(schedule: GateSchedule, states: Sequence[ChainState],
                           dissipators: DissipatorSet | None = None,
                           sample_times: Sequence[float] | None = None, check_leakage: bool = True):
    """Batched form of evolve_effective: (final states, snapshots[sample][state])."""
    return _evolve_many(schedule, list(states), dissipators, sample_times, check_leakage)


# ---------------------------------------------------------------- gate metrics


def average_gate_fidelity(u_target: np.ndarray, u_actual: np.ndarray) -> float:
    """(|Tr(U^dag M)|^2 + Tr(M^dag M)) / (d (d + 1)) for a possibly non-unitary block M."""
    d = u_target.shape[0]
    m = u_actual
    return float((abs(np.trace(u_target.conj().T @ m)) ** 2 + np.real(np.trace(m.conj().T @ m)))
                 / (d * (d + 1)))
