"""Gap tables, multi-tone flux/drive compilation, and protocol schedules."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .circuit import ChainConfig, ChainHamiltonian, FluxSignal, chain_hamiltonian
from .errors import CompilationError
from .qrs import DressedSite
from .spin1 import heisenberg_couplings_from_pairs

XY_PAIRS = (((1, 0), (1, 0)), ((1, 0), (2, 1)), ((2, 1), (1, 0)), ((2, 1), (2, 1)))
DEFAULT_RWA_RATIO = 0.1
DEFAULT_GUARD_FACTOR = 100.0
DEFAULT_DRIVE_RATIO = 0.01
RESONANCE_RTOL = 1e-9


@dataclass(frozen=True)
class GapTable:
    """Sum (delta) and difference (Delta) gaps between transitions k>j on the left
    site and m>l on the right site, indexed ``[k, j, m, l]``; NaN elsewhere."""

    delta: np.ndarray
    Delta: np.ndarray
    min_spacing: float
    species: tuple

    def xy_frequencies(self) -> list[float]:
        return [float(self.Delta[k, j, m, l]) for (k, j), (m, l) in XY_PAIRS]

    def xx_sum_frequencies(self) -> list[float]:
        return [float(self.delta[k, j, m, l]) for (k, j), (m, l) in XY_PAIRS]


def gap_table(left: DressedSite, right: DressedSite, guard_band: float | None = None) -> GapTable:
    n = left.n_kept
    if right.n_kept != n or n < 3:
        raise ValueError("both sites need the same n_kept >= 3")
    wl = np.subtract.outer(left.epsilon, left.epsilon)
    wr = np.subtract.outer(right.epsilon, right.epsilon)
    valid = np.tril(np.ones((n, n), dtype=bool), -1)
    mask = valid[:, :, None, None] & valid[None, None, :, :]
    delta = np.where(mask, wr[None, None, :, :] + wl[:, :, None, None], np.nan)
    Delta = np.where(mask, np.abs(wr[None, None, :, :] - wl[:, :, None, None]), np.nan)

    candidates = GapTable(delta, Delta, 0.0, ()).xy_frequencies()
    candidates += GapTable(delta, Delta, 0.0, ()).xx_sum_frequencies()
    c = np.sort(np.asarray(candidates))
    spacing = float(np.min(np.diff(c))) if c.size > 1 else math.inf
    table = GapTable(delta, Delta, spacing, (left.species, right.species))
    if guard_band is not None:
        xy = np.sort(table.xy_frequencies())
        if xy[0] <= guard_band or np.min(np.diff(xy)) <= guard_band:
            raise CompilationError(
                f"XY tone frequencies {xy.tolist()} collide within guard band {guard_band:.3e} rad/s"
            )
    return table


@dataclass(frozen=True)
class RWAAnalysis:
    hamiltonian: np.ndarray
    delta_min: float
    closest: list


def secular_analysis(ham: ChainHamiltonian, dims: Sequence[int], active_levels: int = 3,
                     include_static: bool = True, n_closest: int = 5) -> RWAAnalysis:
    """Rotating-wave reduction of a structured chain Hamiltonian.

    Every matrix element of every tone is classified by its interaction-picture
    frequency: resonant ones (within ``RESONANCE_RTOL`` of the largest scale) are summed
    into the secular Hamiltonian; the smallest remaining frequency among elements that
    touch the ``active_levels``-per-site subspace is the RWA margin.
    """
    E = ham.energies
    gaps = np.subtract.outer(E, E)
    scale = max(np.max(np.abs(gaps)), float(np.max(np.abs(ham.tone_freq), initial=0.0)), 1.0)
    tol = RESONANCE_RTOL * scale
    active = np.ones(1, dtype=bool)
    for d in dims:
        local = np.arange(d) < active_levels
        active = np.logical_and.outer(active, local).ravel()
    touches = active[:, None] | active[None, :]

    h_sec = np.zeros_like(ham.static, dtype=complex)
    records = []

    def classify(op, freq_shift, coeff, label):
        nz = (np.abs(op) > 0)
        detuning = gaps + freq_shift
        res = nz & (np.abs(detuning) <= tol)
        h_sec[res] += coeff * op[res]
        off = nz & ~res & touches
        if np.any(off):
            vals = np.abs(detuning[off])
            idx = np.argwhere(off)
            order = np.argsort(vals)[:n_closest]
            for o in order:
                a, b = idx[o]
                records.append((float(vals[o]), label, int(a), int(b)))

    if include_static:
        classify(ham.static, 0.0, 1.0, "static")
    for c, op in enumerate(ham.channel_ops):
        label = ham.labels[c] if c < len(ham.labels) else f"channel[{c}]"
        for a, f, p in zip(ham.tone_amp[c], ham.tone_freq[c], ham.tone_phase[c]):
            if a == 0:
                continue
            if f == 0:
                classify(op, 0.0, a * math.cos(p), f"{label}@dc")
                continue
            classify(op, f, 0.5 * a * np.exp(1j * p), f"{label}@+{f:.6e}")
            classify(op, -f, 0.5 * a * np.exp(-1j * p), f"{label}@-{f:.6e}")
    records.sort()
    dmin = records[0][0] if records else math.inf
    return RWAAnalysis(h_sec, dmin, records[:n_closest])


def _pair_chain(left: DressedSite, right: DressedSite, Q) -> ChainConfig:
    q = np.broadcast_to(np.asarray(Q, dtype=float), (2,))
    return ChainConfig((left, right), np.zeros((1, 2)), q.reshape(1, 2))


def _check_chi(site: DressedSite):
    for k, j in ((1, 0), (2, 1)):
        if abs(site.chi[k, j]) < 1e-12:
            raise CompilationError(f"chi[{k},{j}] vanishes on species {site.species}")


def _xy_tones(left, right, f, table, scale=1.0):
    comps = []
    for nu, ((k, j), (m, l)) in zip(table.xy_frequencies(), XY_PAIRS):
        gamma = scale * f / (left.chi[k, j] * right.chi[m, l])
        # phase pi: the cross term enters with a minus sign, this restores +C
        comps.append((gamma, nu, math.pi))
    return comps


def _finish(kind, left, right, f, Q, comps, table, max_rwa_ratio, guard_factor, strict, extra=None):
    ql, qr = np.broadcast_to(np.asarray(Q, dtype=float), (2,))
    C = f * math.sqrt(ql * qr)
    meta = {"kind": kind, "strength": C, "f": f, "Q": (float(ql), float(qr)),
            "species": (left.species, right.species)}
    if extra:
        meta.update(extra)
    sig = FluxSignal(tuple(comps), 0.0, meta)
    problems = []
    guard = guard_factor * abs(C)
    xy = np.sort(table.xy_frequencies())
    if xy[0] <= 0 or np.min(np.diff(xy)) <= 0:
        raise CompilationError("XY tone frequencies are degenerate; two distinct species are required")
    if xy[0] <= guard or np.min(np.diff(xy)) <= guard:
        problems.append(f"XY tones {xy.tolist()} collide within guard band {guard:.3e} rad/s")
    if C:
        ham = chain_hamiltonian(_pair_chain(left, right, (ql, qr)), [sig], include_static=False)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rwa = secular_analysis(ham, (left.n_kept, right.n_kept))
        meta["delta_min"] = rwa.delta_min
        meta["rwa_ratio"] = abs(C) / rwa.delta_min
        meta["closest"] = rwa.closest
        if abs(C) >= max_rwa_ratio * rwa.delta_min:
            problems.append(
                f"C/Delta_min = {meta['rwa_ratio']:.3g} exceeds {max_rwa_ratio} (Delta_min = "
                f"{rwa.delta_min:.4e} rad/s)"
            )
    meta["warnings"] = problems
    if problems and strict:
        raise CompilationError("; ".join(problems))
    for p in problems:
        warnings.warn(p, stacklevel=3)
    return sig


def compile_xy(left: DressedSite, right: DressedSite, f: float, Q, *,
               max_rwa_ratio: float = DEFAULT_RWA_RATIO, guard_factor: float = DEFAULT_GUARD_FACTOR,
               strict: bool = True) -> FluxSignal:
    """Four-tone flux realizing C (S_X S_X + S_Y S_Y) with C = f sqrt(Q_left Q_right)."""
    _check_chi(left)
    _check_chi(right)
    table = gap_table(left, right)
    comps = _xy_tones(left, right, f, table)
    return _finish("XY", left, right, f, Q, comps, table, max_rwa_ratio, guard_factor, strict)


def compile_xx(left: DressedSite, right: DressedSite, f: float, Q, *,
               max_rwa_ratio: float = DEFAULT_RWA_RATIO, guard_factor: float = DEFAULT_GUARD_FACTOR,
               strict: bool = True) -> FluxSignal:
    """Eight-tone flux realizing C S_X S_X: the XY difference tones plus the four sum
    tones, every amplitude halved. The sum tones cover all four (kj, ml) pairs; the
    sixth one is delta_10^21."""
    _check_chi(left)
    _check_chi(right)
    table = gap_table(left, right)
    diff = _xy_tones(left, right, f, table, scale=0.5)
    sums = [(g, nu, p) for (g, _, p), nu in zip(diff, table.xx_sum_frequencies())]
    return _finish("XX", left, right, f, Q, diff + sums, table, max_rwa_ratio, guard_factor,
                   strict, {"sum_tone_6": "delta_10^21"})


@dataclass(frozen=True)
class DriveSignal:
    """Tones (Omega, mu, varphi) of eta(t) = sum Omega cos(mu t + varphi) on one site's field."""

    tones: tuple
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        tones = tuple(tuple(float(x) for x in t) for t in self.tones)
        if any(len(t) != 3 for t in tones):
            raise ValueError("drive tones are (Omega, mu, varphi) triples")
        if any(t[0] <= 0 for t in tones):
            raise ValueError("drive amplitudes must be positive")
        object.__setattr__(self, "tones", tones)

    def arrays(self):
        arr = np.asarray(self.tones, dtype=float).reshape(-1, 3)
        return arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()

    def __call__(self, t):
        a, f, p = self.arrays()
        return np.sum(a * np.cos(np.multiply.outer(np.asarray(t, float), f) + p), axis=-1)


def compile_rotation(site: DressedSite, r: float, varphi: float, *,
                     max_ratio: float = DEFAULT_DRIVE_RATIO, strict: bool = True) -> DriveSignal:
    """Two-tone drive with effective generator r (S_X cos varphi + S_Y sin varphi)."""
    if not r > 0:
        raise CompilationError("rotation rate r must be positive")
    _check_chi(site)
    tones = []
    for lvl in (1, 2):
        chi = site.chi[lvl, lvl - 1]
        mu = site.transition(lvl, lvl - 1)
        # negative matrix elements are absorbed in the phase to keep Omega > 0
        phase = varphi + (math.pi if chi < 0 else 0.0)
        tones.append((math.sqrt(2) * r / abs(chi), mu, phase))
    ratio = r / min(t[1] for t in tones)
    meta = {"kind": "ROT", "strength": r, "varphi": varphi, "duration": math.pi / (2 * r),
            "drive_ratio": ratio, "species": site.species, "warnings": []}
    if ratio >= max_ratio:
        msg = f"r / mu_min = {ratio:.3g} exceeds {max_ratio}"
        meta["warnings"].append(msg)
        if strict:
            raise CompilationError(msg)
        warnings.warn(msg, stacklevel=2)
    return DriveSignal(tuple(tones), meta)


# ---------------------------------------------------------------- schedules

KINDS = ("XY", "XX", "ROT_X", "ROT_X_DAG", "ROT_Y", "ROT_Y_DAG", "IDLE", "ISING")
ROTATION_PHASE = {"ROT_X": 0.0, "ROT_X_DAG": math.pi, "ROT_Y": math.pi / 2, "ROT_Y_DAG": -math.pi / 2}


@dataclass(frozen=True)
class Segment:
    kind: str
    strength: float
    duration: float
    params: dict = field(default_factory=dict)
    flux: tuple | None = None
    drives: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("segment duration must be positive")
        if self.strength < 0:
            raise ValueError("segment strength must be non-negative")

    @property
    def is_rotation(self) -> bool:
        return self.kind.startswith("ROT")


@dataclass(frozen=True)
class GateSchedule:
    segments: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def total_duration(self) -> float:
        return float(sum(s.duration for s in self.segments))

    def __len__(self):
        return len(self.segments)

    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    def to_dict(self) -> dict:
        segs = []
        for s in self.segments:
            entry = {"kind": s.kind, "strength_rad_s": s.strength, "duration_s": s.duration}
            entry.update({k: v for k, v in s.params.items()})
            tones = {}
            if s.flux is not None:
                tones["flux"] = [
                    None if f is None else [list(c) for c in f.components] for f in s.flux
                ]
            if s.drives is not None:
                tones["drives"] = [None if d is None else [list(c) for c in d.tones] for d in s.drives]
            entry["tones"] = tones
            segs.append(entry)
        return {
            "ordering": "segments[0] acts first (rightmost factor of the operator product)",
            "total_duration_s": self.total_duration,
            "metadata": _jsonable(self.metadata),
            "segments": segs,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: dict) -> "GateSchedule":
        segs = []
        for e in data["segments"]:
            params = {k: v for k, v in e.items()
                      if k not in ("kind", "strength_rad_s", "duration_s", "tones")}
            tones = e.get("tones") or {}
            flux = drives = None
            if "flux" in tones:
                flux = tuple(None if f is None else FluxSignal(tuple(map(tuple, f)))
                             for f in tones["flux"])
            if "drives" in tones:
                drives = tuple(None if d is None else DriveSignal(tuple(map(tuple, d)))
                               for d in tones["drives"])
            segs.append(Segment(e["kind"], e["strength_rad_s"], e["duration_s"], params, flux, drives))
        return cls(tuple(segs), data.get("metadata", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def rotation_segment(kind: str, r: float) -> Segment:
    if not r > 0:
        raise ValueError("rotation rate r must be positive")
    return Segment(kind, r, math.pi / (2 * r), {"varphi": ROTATION_PHASE[kind]})


def _check_common(t, n_o, strengths, r):
    if not t > 0:
        raise ValueError("t must be positive")
    if int(n_o) != n_o or n_o < 1:
        raise ValueError("n_o must be a positive integer")
    if any(c < 0 for c in strengths):
        raise ValueError("coupling strengths must be non-negative")
    if not r > 0:
        raise ValueError("rotation rate r must be positive")


def schedule_heisenberg(t: float, n_o: int, C_xy: float, C_yz: float, C_zx: float, r: float) -> GateSchedule:
    """n_o Trotter steps of R_X^dag, XY(C_zx), R_X, R_Y, XY(C_yz), R_Y^dag, XY(C_xy)."""
    _check_common(t, n_o, (C_xy, C_yz, C_zx), r)
    tau = t / n_o
    step = (
        rotation_segment("ROT_X_DAG", r), Segment("XY", C_zx, tau),
        rotation_segment("ROT_X", r), rotation_segment("ROT_Y", r),
        Segment("XY", C_yz, tau), rotation_segment("ROT_Y_DAG", r),
        Segment("XY", C_xy, tau),
    )
    lx, ly, lz = heisenberg_couplings_from_pairs(C_xy, C_yz, C_zx)
    meta = {"protocol": "heisenberg", "t": t, "n_o": int(n_o), "r": r,
            "C_xy": C_xy, "C_yz": C_yz, "C_zx": C_zx,
            "lambda": (lx, ly, lz), "segments_per_step": len(step)}
    return GateSchedule(step * int(n_o), meta)


def schedule_xxz(t: float, n_o: int, C_xy: float, C_z: float, r: float) -> GateSchedule:
    """n_o Trotter steps of R_Y, XX(C_z), R_Y^dag, XY(C_xy)."""
    _check_common(t, n_o, (C_xy, C_z), r)
    tau = t / n_o
    step = (rotation_segment("ROT_Y", r), Segment("XX", C_z, tau),
            rotation_segment("ROT_Y_DAG", r), Segment("XY", C_xy, tau))
    meta = {"protocol": "xxz", "t": t, "n_o": int(n_o), "r": r, "C_xy": C_xy, "C_z": C_z,
            "lambda": (C_xy, C_xy, C_z), "segments_per_step": len(step)}
    return GateSchedule(step * int(n_o), meta)


def schedule_ising(t: float, J: float, B: float) -> GateSchedule:
    """Single analog segment: XX flux of strength J on every SQUID plus a B S_X drive."""
    if not t > 0:
        raise ValueError("t must be positive")
    if J < 0:
        raise ValueError("J must be non-negative")
    return GateSchedule((Segment("ISING", J, t, {"B": B}),),
                        {"protocol": "ising", "t": t, "J": J, "B": B})


def attach_signals(schedule: GateSchedule, chain: ChainConfig, *, strict: bool = True,
                   max_rwa_ratio: float = DEFAULT_RWA_RATIO,
                   max_drive_ratio: float = DEFAULT_DRIVE_RATIO) -> GateSchedule:
    """Compile flux and drive payloads for every segment of a schedule."""
    cache = {}

    def flux_for(kind, C):
        key = (kind, C)
        if key not in cache:
            sigs = []
            for s in range(chain.N - 1):
                ql, qr = chain.Q[s]
                if C == 0 or ql * qr == 0:
                    sigs.append(None)
                    continue
                f = C / math.sqrt(ql * qr)
                fn = compile_xy if kind == "XY" else compile_xx
                sigs.append(fn(chain.sites[s], chain.sites[s + 1], f, (ql, qr),
                               max_rwa_ratio=max_rwa_ratio, strict=strict))
            cache[key] = tuple(sigs)
        return cache[key]

    def drives_for(r, varphi):
        key = ("ROT", r, varphi)
        if key not in cache:
            cache[key] = tuple(compile_rotation(site, r, varphi, max_ratio=max_drive_ratio, strict=strict)
                               for site in chain.sites)
        return cache[key]

    out = []
    for seg in schedule.segments:
        if seg.kind in ("XY", "XX"):
            out.append(replace(seg, flux=flux_for(seg.kind, seg.strength)))
        elif seg.is_rotation:
            out.append(replace(seg, drives=drives_for(seg.strength, ROTATION_PHASE[seg.kind])))
        elif seg.kind == "ISING":
            B = seg.params.get("B", 0.0)
            drives = drives_for(abs(B), 0.0 if B >= 0 else math.pi) if B else None
            out.append(replace(seg, flux=flux_for("XX", seg.strength), drives=drives))
        else:
            out.append(seg)
    return GateSchedule(tuple(out), dict(schedule.metadata))
