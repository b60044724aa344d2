"""Experiment configuration: TOML parsing, unit conversion, validation and hashing.

Frequencies carry their unit in the key suffix: ``_rad_s`` (angular, used as is),
``_ghz``/``_mhz``/``_khz``/``_hz`` (ordinary frequency, multiplied by 2 pi), or ``_J``
(multiples of the coupling J). Times use ``_s`` or ``_pi_over_J``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from . import presets
from .circuit import CircuitParams, effective_PQ
from .errors import ConfigError
from .qrs import QRSParams
from .spin1 import ModelSpec, pairs_from_heisenberg

FREQ_UNITS = {"_rad_s": 1.0, "_ghz": presets.GHZ, "_mhz": presets.MHZ, "_khz": presets.KHZ,
              "_hz": presets.TWO_PI}

DEFAULTS = {
    "model": {"kind": "heisenberg", "N": 2, "lambda_x_J": 1.0, "lambda_y_J": 1.0,
              "lambda_z_J": 0.5, "B_ghz": 0.01},
    "species": {"omega_q_ghz": 9.0, "omega_r_ghz": 10.0, "g_a_ghz": 6.0, "g_b_ghz": 9.0,
                "n_fock": 60, "n_kept": 4},
    "circuit": {"phi_o_wb": presets.PHI_O_WB, "i_c_a": presets.I_C_A, "z_ohm": presets.Z_OHM,
                "c_f": presets.C_F, "omega_r_rad_s": presets.OMEGA_R,
                "phi_offset_rad": presets.PHI_OFFSET,
                "p_override_rad_s": presets.PQ_QUOTED, "q_override_rad_s": presets.PQ_QUOTED},
    "protocol": {"f": presets.F_QUOTED, "t_pi_over_J": 1.0, "n_o": presets.N_TROTTER,
                 "total_duration_s": presets.PROTOCOL_DURATION_QUOTED_S,
                 "compile_check": "warn", "max_rwa_ratio": 0.1, "max_drive_ratio": 0.01,
                 "n_samples": 10},
    "gate": {"kind": "XY", "rwa_ratio": 0.01, "include_static": False, "window_points": 16},
    "dissipation": {"enabled": True, "kappa_c_khz": 10.0, "kappa_x_khz": 20.0,
                    "kappa_z_khz": 10.0, "temperature_k": presets.TEMPERATURE_K},
    "sampling": {"n_states": 20, "seed": 1234, "workers": 4},
    "propagation": {"method": "rk45", "abs_tol": 1e-8, "rel_tol": 1e-8},
    "output": {"force": False},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            # a unit-suffixed key in the override replaces every spelling of the same quantity
            stems = {_stem(x) for x in v}
            out[k] = {x: y for x, y in out[k].items() if _stem(x) not in stems}
            out[k].update(copy.deepcopy(v))
        else:
            out[k] = copy.deepcopy(v)
    return out


def _stem(key: str) -> str:
    for suf in list(FREQ_UNITS) + ["_J", "_pi_over_J", "_s"]:
        if key.endswith(suf) and len(key) > len(suf):
            return key[: -len(suf)]
    return key


def quantity(table: dict, name: str, J: float | None = None, default=None, kind: str = "freq"):
    """Read ``name`` from ``table`` under whichever unit suffix is present."""
    found = []
    if kind == "freq":
        for suf, scale in FREQ_UNITS.items():
            if name + suf in table:
                found.append(float(table[name + suf]) * scale)
        if name + "_J" in table:
            if J is None:
                raise ConfigError(f"{name}_J given but J is undefined")
            found.append(float(table[name + "_J"]) * J)
    else:
        if name + "_s" in table:
            found.append(float(table[name + "_s"]))
        if name + "_pi_over_J" in table:
            if J is None:
                raise ConfigError(f"{name}_pi_over_J given but J is undefined")
            found.append(float(table[name + "_pi_over_J"]) * math.pi / J)
    if len(found) > 1:
        raise ConfigError(f"{name} specified more than once with different units")
    if not found:
        if default is None:
            raise ConfigError(f"missing required quantity {name}")
        return default
    return found[0]


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    species: tuple
    n_kept: int
    circuit: CircuitParams
    P: float
    Q: float
    J: float
    f: float
    t: float
    n_o: int
    r: float
    compile_check: str
    max_rwa_ratio: float
    max_drive_ratio: float
    n_samples: int
    gate: dict
    dissipation: dict
    n_states: int
    seed: int
    workers: int
    propagation: dict
    force: bool
    raw: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def N(self) -> int:
        return self.model.N

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        return from_dict(_merge(self.raw, overrides), merge_defaults=False)

    def with_value(self, dotted: str, value) -> "ExperimentConfig":
        section, key = dotted.split(".", 1)
        return self.with_overrides({section: {key: value}})


def _positive(name, value, allow_zero=False):
    if not (value >= 0 if allow_zero else value > 0):
        raise ConfigError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value}")
    return value


def from_dict(data: dict, merge_defaults: bool = True) -> ExperimentConfig:
    raw = _merge(DEFAULTS, data) if merge_defaults else copy.deepcopy(data)
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    try:
        sp = raw["species"]
        n_fock = int(sp["n_fock"])
        n_kept = int(sp["n_kept"])
        if n_kept < 3:
            raise ConfigError("n_kept must be >= 3")
        wq = _positive("omega_q", quantity(sp, "omega_q"))
        wr = _positive("omega_r", quantity(sp, "omega_r"))
        species = (QRSParams(wq, wr, _positive("g_a", quantity(sp, "g_a"), True), n_fock, "A"),
                   QRSParams(wq, wr, _positive("g_b", quantity(sp, "g_b"), True), n_fock, "B"))

        ci = raw["circuit"]
        circuit = CircuitParams(float(ci["phi_o_wb"]), float(ci["i_c_a"]), float(ci["z_ohm"]),
                                float(ci["c_f"]), float(ci["omega_r_rad_s"]),
                                float(ci["phi_offset_rad"]))
        P_calc, Q_calc = effective_PQ(circuit)
        P = _positive("P", float(ci.get("p_override_rad_s", P_calc)), True)
        Q = _positive("Q", float(ci.get("q_override_rad_s", Q_calc)), True)

        pr = raw["protocol"]
        f = float(pr.get("f", 0.0))
        mo = raw["model"]
        J = quantity(mo, "J", default=f * Q)
        _positive("J", J)
        kind = mo["kind"].lower()
        N = int(mo["N"])
        if kind == "ising":
            couplings = (J, quantity(mo, "B", J=J, default=0.0))
        else:
            couplings = tuple(quantity(mo, f"lambda_{a}", J=J) for a in "xyz")
            if kind == "heisenberg" and min(pairs_from_heisenberg(*couplings)) < 0:
                raise ConfigError("lambda values map to a negative pair strength")
        model = ModelSpec(kind, N, couplings)

        t = _positive("t", quantity(pr, "t", J=J, kind="time"))
        n_o = int(pr.get("n_o", 1))
        if n_o < 1:
            raise ConfigError("n_o must be >= 1")
        if any(k.startswith("r_") for k in pr):
            r = quantity(pr, "r", J=J)
        elif "total_duration_s" in pr and kind != "ising":
            # rotation rate chosen so the whole protocol lasts total_duration_s
            n_rot = (4 if kind == "heisenberg" else 2) * n_o
            budget = float(pr["total_duration_s"]) - (3 if kind == "heisenberg" else 2) * t
            if budget <= 0:
                raise ConfigError("total_duration_s leaves no time for rotations")
            r = n_rot * math.pi / (2 * budget)
        else:
            # default rotation rate C_xy / 5
            c_xy = pairs_from_heisenberg(*couplings)[0] if kind == "heisenberg" else couplings[0]
            r = c_xy / 5
        _positive("r", r)
        check = pr.get("compile_check", "warn")
        if check not in ("strict", "warn", "off"):
            raise ConfigError("compile_check is strict, warn or off")

        di = dict(raw["dissipation"])
        dissipation = {
            "enabled": bool(di.get("enabled", False)),
            "kappa_c": _positive("kappa_c", quantity(di, "kappa_c", default=0.0), True),
            "kappa_x": _positive("kappa_x", quantity(di, "kappa_x", default=0.0), True),
            "kappa_z": _positive("kappa_z", quantity(di, "kappa_z", default=0.0), True),
            "temperature": _positive("temperature_k", float(di.get("temperature_k", 0.0)), True),
        }
        ga = raw["gate"]
        gate = {"kind": ga.get("kind", "XY").upper(), "rwa_ratio": float(ga.get("rwa_ratio", 0.01)),
                "include_static": bool(ga.get("include_static", False)),
                "window_points": int(ga.get("window_points", 16))}
        if "f" in ga:
            gate["f"] = float(ga["f"])
        if "gate_time_s" in ga:
            gate["gate_time"] = _positive("gate_time_s", float(ga["gate_time_s"]))
        if "r_rad_s" in ga or any(k.startswith("r_") for k in ga):
            gate["r"] = quantity(ga, "r", J=J)
        if "varphi_rad" in ga:
            gate["varphi"] = float(ga["varphi_rad"])

        sa = raw["sampling"]
        pp = raw["propagation"]
        propagation = {"method": pp.get("method", "rk45"), "abs_tol": float(pp.get("abs_tol", 1e-8)),
                       "rel_tol": float(pp.get("rel_tol", 1e-8))}
        if "max_step_s" in pp:
            propagation["max_step"] = float(pp["max_step_s"])
        return ExperimentConfig(
            model=model, species=species, n_kept=n_kept, circuit=circuit, P=P, Q=Q, J=J, f=f,
            t=t, n_o=n_o, r=r, compile_check=check,
            max_rwa_ratio=float(pr.get("max_rwa_ratio", 0.1)),
            max_drive_ratio=float(pr.get("max_drive_ratio", 0.01)),
            n_samples=int(pr.get("n_samples", 10)), gate=gate, dissipation=dissipation,
            n_states=_positive("n_states", int(sa.get("n_states", 20))), seed=int(sa.get("seed", 0)),
            workers=max(1, int(sa.get("workers", 1))), propagation=propagation,
            force=bool(raw["output"].get("force", False)), raw=raw,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    data = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    if overrides:
        data = _merge(data, overrides)
    return from_dict(data)
