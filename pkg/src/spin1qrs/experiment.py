"""Experiment orchestration: random-state fidelity runs, gate validation, CSV reports."""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .circuit import ChainConfig, build_chain, chain_hamiltonian
from .config import ExperimentConfig
from .dynamics import (ChainState, PropagationOptions, average_gate_fidelity, build_dissipators,
                       embed_spin1, evolve_effective_batch, leakage, propagate_unitary, spin1_mask)
from .errors import CompilationError, Spin1QRSError
from .pulses import (GateSchedule, attach_signals, compile_rotation, compile_xx, compile_xy,
                     schedule_heisenberg, schedule_ising, schedule_xxz, secular_analysis)
from .spin1 import (bond_sum, exact_propagator, field_sum, haar_random_state, model_hamiltonian,
                    pairs_from_heisenberg, uhlmann_fidelity)

STATE_BLOCK = 5
CSV_COLUMNS = ("time_s", "fid_mean", "fid_min", "fid_max", "fid_stderr", "leakage_mean")


def _by_time(a, n):
    a = np.asarray(a, dtype=float)
    if a.ndim == 2 and a.shape[0] == n:
        return a
    return a.reshape(n, -1)


@dataclass
class FidelityReport:
    times: np.ndarray
    target_times: np.ndarray
    fidelities: np.ndarray  # (n_samples, n_states)
    leakages: np.ndarray
    total_duration: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.fidelities = _by_time(self.fidelities, self.times.size)
        self.leakages = _by_time(self.leakages, self.times.size)
        if np.any(np.diff(self.times) < 0):
            raise ValueError("report times must be monotone")
        if self.fidelities.size and (self.fidelities.min() < 0 or self.fidelities.max() > 1):
            raise ValueError("fidelities must lie in [0, 1]")

    @property
    def n_states(self) -> int:
        return self.fidelities.shape[1]

    def rows(self) -> list[tuple]:
        out = []
        n = self.n_states
        for i, t in enumerate(self.times):
            f = self.fidelities[i]
            err = float(np.std(f, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
            out.append((float(t), float(np.mean(f)), float(np.min(f)), float(np.max(f)), err,
                        float(np.mean(self.leakages[i]))))
        return out

    @property
    def final_mean(self) -> float:
        return float(np.mean(self.fidelities[-1]))


def _chain(config: ExperimentConfig, N: int | None = None) -> ChainConfig:
    return build_chain(config.species, N or config.N, config.P, config.Q, config.n_kept)


def build_schedule(config: ExperimentConfig) -> GateSchedule:
    m = config.model
    if m.kind == "heisenberg":
        return schedule_heisenberg(config.t, config.n_o, *pairs_from_heisenberg(*m.couplings), config.r)
    if m.kind == "xxz":
        lx, _, lz = m.couplings
        return schedule_xxz(config.t, config.n_o, lx, lz, config.r)
    J, B = m.couplings
    return schedule_ising(config.t, J, B)


def compile_schedule(config: ExperimentConfig, schedule: GateSchedule | None = None,
                     chain: ChainConfig | None = None) -> tuple[GateSchedule, list[str]]:
    """Attach flux/drive payloads; ``compile_check`` decides whether RWA problems abort."""
    schedule = schedule or build_schedule(config)
    chain = chain or _chain(config)
    strict = config.compile_check == "strict"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        compiled = attach_signals(schedule, chain, strict=strict, max_rwa_ratio=config.max_rwa_ratio,
                                  max_drive_ratio=config.max_drive_ratio)
    notes = sorted({str(w.message) for w in caught})
    return compiled, notes


def sample_points(schedule: GateSchedule, config: ExperimentConfig) -> tuple[np.ndarray, np.ndarray]:
    """Physical sample times and the matching target-model times."""
    meta = schedule.metadata
    if meta.get("protocol") == "ising":
        ts = np.linspace(0.0, config.t, config.n_samples + 1)
        return ts, ts
    per = meta["segments_per_step"]
    bounds = schedule.boundaries()
    idx = np.arange(0, len(schedule) + 1, per)
    return bounds[idx], idx // per * (config.t / config.n_o)


def _initial_states(config: ExperimentConfig, dims) -> list[ChainState]:
    children = np.random.SeedSequence(config.seed).spawn(config.n_states)
    return [ChainState(embed_spin1(haar_random_state(3 ** len(dims), c), dims), dims)
            for c in children]


def run_experiment(config: ExperimentConfig, dissipation: bool | None = None) -> FidelityReport:
    """Evolve seeded random spin-1 states through the effective protocol and score them against
    the exact target evolution at every Trotter step (or evenly in time for Ising)."""
    chain = _chain(config)
    dims = chain.dims
    schedule = build_schedule(config)
    notes = []
    if config.compile_check != "off":
        try:
            _, notes = compile_schedule(config, schedule, chain)
        except CompilationError as exc:
            raise CompilationError(f"schedule compilation failed: {exc}") from exc
    use_diss = config.dissipation["enabled"] if dissipation is None else dissipation
    dissipators = None
    if use_diss:
        d = config.dissipation
        dissipators = build_dissipators(chain.sites, d["kappa_c"], d["kappa_x"], d["kappa_z"],
                                        d["temperature"])
    times, target_times = sample_points(schedule, config)
    states = _initial_states(config, dims)

    h_target = model_hamiltonian(config.model)
    targets = [[embed_spin1(exact_propagator(h_target, tt, max_dim=3 ** 6) @ s.data[spin1_mask(dims)],
                            dims) for s in states] for tt in target_times]

    # fixed-size blocks keep the arithmetic independent of the worker count
    idx = np.arange(len(states))
    chunks = [idx[i:i + STATE_BLOCK] for i in range(0, len(states), STATE_BLOCK)]

    def work(ix):
        _, snaps = evolve_effective_batch(schedule, [states[i] for i in ix], dissipators,
                                          sample_times=times, check_leakage=False)
        fid = np.empty((len(times), len(ix)))
        leak = np.empty_like(fid)
        for a, snap in enumerate(snaps):
            for b, st in enumerate(snap):
                fid[a, b] = uhlmann_fidelity(st.data, targets[a][ix[b]])
                leak[a, b] = leakage(st)
        return fid, leak

    with ThreadPoolExecutor(max_workers=min(config.workers, len(chunks))) as pool:
        results = list(pool.map(work, chunks))
    fid = np.concatenate([r[0] for r in results], axis=1)
    leak = np.concatenate([r[1] for r in results], axis=1)
    prov = {"config_hash": config.config_hash(), "seed": config.seed, "n_states": config.n_states,
            "protocol": schedule.metadata.get("protocol"), "N": config.N,
            "dissipation": bool(use_diss), "compile_notes": notes,
            "J_rad_s": config.J, "t_s": config.t, "r_rad_s": config.r}
    if dissipators is not None:
        prov["omitted_dissipation_rate"] = dissipators.omitted_rate
    return FidelityReport(times, target_times, fid, leak, schedule.total_duration, prov)


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".provenance.json")


def emit_csv(report: FidelityReport, path: str | os.PathLike, force: bool = False) -> Path:
    """Write the report CSV plus a provenance sidecar; refuse to clobber a different config."""
    path = Path(path)
    side = _sidecar(path)
    new_hash = report.provenance.get("config_hash")
    if path.exists() and not force:
        old = json.loads(side.read_text()).get("config_hash") if side.exists() else None
        if old != new_hash:
            raise FileExistsError(f"{path} was produced by a different configuration (hash {old}); "
                                  "pass force to overwrite")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in report.rows():
            w.writerow([repr(x) for x in row])
    meta = dict(report.provenance)
    meta["total_duration_s"] = report.total_duration
    side.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")
    return path


def read_csv(path: str | os.PathLike) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- gate validation


@dataclass
class GateMarginReport:
    gate: str
    strength: float
    delta_min: float
    rwa_ratio: float
    gate_time: float
    infidelity: float
    leakage: float
    infidelity_window_mean: float
    leakage_window_mean: float
    window_period: float
    include_static: bool
    secular_error: float
    norm_drift: float
    n_steps: int
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _gate_setup(config: ExperimentConfig, gate: str):
    chain = _chain(config, N=2)
    left, right = chain.sites
    ql, qr = chain.Q[0]
    gate = gate.upper()
    if gate in ("XY", "XX"):
        fn = compile_xy if gate == "XY" else compile_xx
        if "f" in config.gate:
            f = config.gate["f"]
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                probe = fn(left, right, 1e-6, (ql, qr), strict=False)
            f = config.gate["rwa_ratio"] * probe.metadata["delta_min"] / math.sqrt(ql * qr)
        sig = fn(left, right, f, (ql, qr), strict=False, max_rwa_ratio=config.max_rwa_ratio)
        C = sig.metadata["strength"]
        ham = chain_hamiltonian(chain, [sig], include_static=config.gate["include_static"])
        pair = bond_sum(("x", "y") if gate == "XY" else ("x",), 2)
        return chain, ham, C * pair, C, sig.metadata.get("delta_min", math.inf), sig.metadata["warnings"]
    if gate == "ROT":
        r = config.gate.get("r", config.r)
        phi = config.gate.get("varphi", 0.0)
        drives = [compile_rotation(s, r, phi, strict=False, max_ratio=config.max_drive_ratio)
                  for s in chain.sites]
        ham = chain_hamiltonian(chain, None, drives, include_static=config.gate["include_static"])
        gen = r * (math.cos(phi) * field_sum("x", 2) + math.sin(phi) * field_sum("y", 2))
        mu_min = min(t[1] for d in drives for t in d.tones)
        return chain, ham, gen, r, mu_min, [w for d in drives for w in d.metadata["warnings"]]
    raise ValueError(f"unknown gate {gate!r}")


def validate_gate(config: ExperimentConfig, gate: str | None = None,
                  window_points: int | None = None) -> GateMarginReport:
    """Full flux-driven (or drive-driven) two-site propagation against the effective exponential.

    The gate time is pi/(4C) for XY/XX (config ``gate_time_s`` overrides) and pi/(2r) for
    ROT. Besides the value at the gate time, infidelity and leakage are averaged over one
    period of the slowest non-resonant oscillation centred on the gate time.
    """
    gate = (gate or config.gate["kind"]).upper()
    chain, ham, h_eff, strength, dmin, notes = _gate_setup(config, gate)
    dims = chain.dims
    mask = spin1_mask(dims)
    idx = np.nonzero(mask)[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rwa = secular_analysis(ham, dims)
    sec = rwa.hamiltonian[np.ix_(idx, idx)]
    scale = max(abs(strength), 1e-300)
    secular_error = float(np.max(np.abs(sec - h_eff)) / scale) if strength else float(np.max(np.abs(sec)))
    if "gate_time" in config.gate:
        T = config.gate["gate_time"]
    elif strength:
        T = math.pi / (4 * strength) if gate in ("XY", "XX") else math.pi / (2 * strength)
    else:
        raise Spin1QRSError("zero-strength gate needs an explicit gate_time_s")
    period = 2 * math.pi / rwa.delta_min if math.isfinite(rwa.delta_min) and rwa.delta_min > 0 else 0.0
    n_win = window_points or config.gate["window_points"]
    grid = np.array([T])
    if period and n_win > 1 and period < T:
        grid = T + period * (np.arange(n_win) / n_win - 0.5)
    ts = np.unique(np.append(grid, T))
    pp = config.propagation
    opts = PropagationOptions(method=pp["method"], abs_tol=pp["abs_tol"], rel_tol=pp["rel_tol"],
                              max_step=pp.get("max_step"), sample_times=tuple(ts))
    y0 = np.eye(chain.dim, dtype=complex)[:, idx]
    traj = propagate_unitary(ham, y0, opts)
    w, v = np.linalg.eigh(h_eff)
    infs, leaks = [], []
    for t, u in zip(ts, traj.states):
        ue = (v * np.exp(-1j * w * t)) @ v.conj().T
        infs.append(1.0 - average_gate_fidelity(ue, u[idx, :]))
        leaks.append(float(np.mean(np.sum(np.abs(u[~mask, :]) ** 2, axis=0))))
    at = int(np.nonzero(ts == T)[0][0])
    window = np.searchsorted(ts, grid)
    return GateMarginReport(
        gate=gate, strength=float(strength), delta_min=float(dmin),
        rwa_ratio=float(abs(strength) / dmin) if dmin else math.inf, gate_time=float(T),
        infidelity=float(max(infs[at], 0.0)), leakage=leaks[at],
        infidelity_window_mean=float(np.mean([max(infs[i], 0.0) for i in window])),
        leakage_window_mean=float(np.mean([leaks[i] for i in window])),
        window_period=float(period), include_static=bool(config.gate["include_static"]),
        secular_error=secular_error, norm_drift=float(traj.diagnostics["norm_drift"]),
        n_steps=int(traj.n_steps), notes=list(notes))


def sweep(config: ExperimentConfig, key: str, values) -> list[tuple]:
    """run_experiment for each value of a dotted config key: [(value, report)]."""
    return [(v, run_experiment(config.with_value(key, v))) for v in values]
