import json
import math
import os

import numpy as np
import pytest

from spin1qrs import presets
from spin1qrs.cli import main
from spin1qrs.config import DEFAULTS, from_dict, load_config, quantity
from spin1qrs.errors import CompilationError, ConfigError
from spin1qrs.experiment import (CSV_COLUMNS, FidelityReport, build_schedule, compile_schedule,
                                 emit_csv, read_csv, run_experiment, sample_points, sweep)
from spin1qrs.pulses import GateSchedule
from spin1qrs.spin1 import pairs_from_heisenberg

SMALL = {"sampling": {"n_states": 4, "workers": 2}, "dissipation": {"enabled": False}}


def cfg(**sections):
    data = {k: dict(v) for k, v in SMALL.items()}
    for k, v in sections.items():
        data.setdefault(k, {}).update(v)
    return load_config(None, data)


# ------------------------------------------------------------ config


def test_defaults_resolve():
    c = load_config()
    assert c.J == pytest.approx(presets.F_QUOTED * presets.PQ_QUOTED)
    assert c.t == pytest.approx(math.pi / c.J)
    assert c.model.couplings == pytest.approx((c.J, c.J, 0.5 * c.J))
    assert c.n_states == 20 and c.n_o == presets.N_TROTTER
    assert c.dissipation["kappa_c"] == pytest.approx(presets.KAPPA_C)


def test_total_duration_sets_rotation_rate():
    c = load_config()
    assert build_schedule(c).total_duration == pytest.approx(presets.PROTOCOL_DURATION_QUOTED_S,
                                                             rel=1e-12)
    c3 = c.with_value("model.N", 3)
    assert build_schedule(c3).total_duration == build_schedule(c).total_duration


def test_default_rotation_rate_without_duration():
    raw = {k: dict(v) for k, v in DEFAULTS.items()}
    del raw["protocol"]["total_duration_s"]
    c = from_dict(raw, merge_defaults=False)
    c_xy = pairs_from_heisenberg(*c.model.couplings)[0]
    assert c.r == pytest.approx(c_xy / 5)


def test_unit_suffixes():
    t = {"x_ghz": 1.0}
    assert quantity(t, "x") == pytest.approx(2 * math.pi * 1e9)
    assert quantity({"x_rad_s": 3.0}, "x") == 3.0
    assert quantity({"x_J": 2.0}, "x", J=5.0) == 10.0
    assert quantity({"t_pi_over_J": 2.0}, "t", J=math.pi, kind="time") == pytest.approx(2.0)
    with pytest.raises(ConfigError):
        quantity({"x_ghz": 1.0, "x_mhz": 1.0}, "x")
    with pytest.raises(ConfigError):
        quantity({}, "x")
    with pytest.raises(ConfigError):
        quantity({"x_J": 1.0}, "x")


def test_override_replaces_other_unit_spelling():
    c = load_config(None, {"model": {"J_mhz": 10.0}})
    assert c.J == pytest.approx(2 * math.pi * 1e7)
    c2 = load_config(None, {"species": {"omega_q_rad_s": 5e10}})
    assert c2.species[0].omega_q == 5e10


@pytest.mark.parametrize("bad", [
    {"bogus": {}},
    {"species": {"n_kept": 2}},
    {"protocol": {"n_o": 0}},
    {"protocol": {"compile_check": "maybe"}},
    {"model": {"kind": "potts"}},
    {"dissipation": {"kappa_c_khz": -1.0}},
    {"model": {"lambda_z_J": 5.0}},
    {"protocol": {"total_duration_s": 1e-12}},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        load_config(None, bad)


def test_config_file_and_hash(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[model]\nN = 3\nkind = "xxz"\n[sampling]\nseed = 9\n')
    c = load_config(p)
    assert c.N == 3 and c.seed == 9 and c.model.kind == "xxz"
    assert c.config_hash() == load_config(p).config_hash()
    assert c.config_hash() != c.with_value("sampling.seed", 10).config_hash()


# ------------------------------------------------------------ schedules and runs


def test_compile_schedule_notes_at_default_strength():
    compiled, notes = compile_schedule(load_config())
    assert any("exceeds" in n for n in notes)
    assert all(seg.flux or seg.drives for seg in compiled.segments)
    with pytest.raises(CompilationError):
        compile_schedule(load_config(None, {"protocol": {"compile_check": "strict"}}))


def test_sample_points_trotter_steps():
    c = load_config()
    s = build_schedule(c)
    ts, targets = sample_points(s, c)
    assert ts.size == c.n_o + 1
    assert targets[-1] == pytest.approx(c.t)
    assert ts[-1] == pytest.approx(s.total_duration)


def test_run_is_deterministic():
    c = cfg()
    a, b = run_experiment(c), run_experiment(c)
    np.testing.assert_array_equal(a.fidelities, b.fidelities)
    assert a.fidelities.shape == (c.n_o + 1, 4)
    np.testing.assert_allclose(a.fidelities[0], 1.0, atol=1e-12)
    c2 = c.with_value("sampling.workers", 1)
    np.testing.assert_array_equal(run_experiment(c2).fidelities, a.fidelities)


def test_run_trotter_limit():
    r = run_experiment(cfg(protocol={"n_o": 400}))
    assert r.final_mean > 0.9999


def test_ising_run_exact_without_dissipation():
    r = run_experiment(cfg(model={"kind": "ising"}))
    np.testing.assert_allclose(r.fidelities, 1.0, atol=1e-10)
    assert r.times.size == 11


def test_dissipation_lowers_fidelity():
    c = cfg()
    clean = run_experiment(c).final_mean
    noisy = run_experiment(c, dissipation=True)
    assert noisy.final_mean < clean
    assert noisy.provenance["omitted_dissipation_rate"] > 0


def test_single_state_run():
    r = run_experiment(cfg(sampling={"n_states": 1}))
    assert r.n_states == 1
    assert all(row[4] == 0.0 for row in r.rows())


# ------------------------------------------------------------ CSV output


def test_csv_roundtrip_and_refusal(tmp_path):
    c = cfg()
    r = run_experiment(c)
    out = emit_csv(r, tmp_path / "run.csv")
    rows = read_csv(out)
    assert tuple(rows[0]) == CSV_COLUMNS
    for got, want in zip(rows, r.rows()):
        assert tuple(got.values()) == want
    side = json.loads((tmp_path / "run.csv.provenance.json").read_text())
    assert side["config_hash"] == c.config_hash()
    emit_csv(r, out)  # same configuration: allowed
    other = run_experiment(c.with_value("sampling.seed", 5))
    with pytest.raises(FileExistsError):
        emit_csv(other, out)
    emit_csv(other, out, force=True)


def test_header_only_csv(tmp_path):
    r = FidelityReport(np.zeros(0), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)), 0.0,
                       {"config_hash": "x"})
    out = emit_csv(r, tmp_path / "empty.csv")
    assert out.read_text().strip() == ",".join(CSV_COLUMNS)
    assert read_csv(out) == []


def test_report_validation():
    with pytest.raises(ValueError):
        FidelityReport(np.array([1.0, 0.0]), np.zeros(2), np.ones((2, 1)), np.zeros((2, 1)), 1.0)
    with pytest.raises(ValueError):
        FidelityReport(np.array([0.0]), np.zeros(1), np.array([[1.5]]), np.zeros((1, 1)), 1.0)


def test_sweep():
    res = sweep(cfg(), "protocol.n_o", [2, 4])
    assert [v for v, _ in res] == [2, 4]
    assert res[1][1].final_mean > res[0][1].final_mean


# ------------------------------------------------------------ CLI


def write_small(tmp_path):
    p = tmp_path / "small.toml"
    p.write_text("[sampling]\nn_states = 3\nworkers = 1\n[dissipation]\nenabled = false\n")
    return p


def test_cli_spectrum(tmp_path, capsys):
    assert main(["spectrum", "--species", "B", "--levels", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "index,energy_rad_per_s,parity" and len(lines) == 4


def test_cli_compile(tmp_path):
    out = tmp_path / "sched.json"
    assert main(["compile", "--emit-schedule", str(out)]) == 0
    s = GateSchedule.from_dict(json.loads(out.read_text()))
    assert len(s) == 7 * presets.N_TROTTER


def test_cli_run_and_refusal(tmp_path):
    conf = write_small(tmp_path)
    out = tmp_path / "r.csv"
    assert main(["run", "--config", str(conf), "--output", str(out)]) == 0
    first = out.read_text()
    assert main(["run", "--config", str(conf), "--output", str(out)]) == 0
    assert out.read_text() == first
    assert main(["run", "--config", str(conf), "--seed", "3", "--output", str(out)]) == 2
    assert main(["run", "--config", str(conf), "--seed", "3", "--output", str(out), "--force"]) == 0
    assert out.read_text() != first


def test_cli_sweep(tmp_path, capsys):
    conf = write_small(tmp_path)
    assert main(["sweep", "--config", str(conf), "--key", "protocol.n_o", "--values", "2,3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("value,time_s") and len(lines) == 3


def test_cli_bad_config(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[species]\nn_kept = 1\n")
    assert main(["run", "--config", str(p)]) == 2


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("SPIN1QRS_LONG"), reason="set SPIN1QRS_LONG=1 for N=4 runs")
def test_dissipative_trend_n4():
    c = load_config(None, {"sampling": {"n_states": 20}})
    f3 = run_experiment(c.with_value("model.N", 3)).final_mean
    f4 = run_experiment(c.with_value("model.N", 4)).final_mean
    assert f4 <= f3


def test_cli_state_count_flags(tmp_path):
    conf = write_small(tmp_path)
    out = tmp_path / "n.csv"
    assert main(["run", "--config", str(conf), "--n-states", "2", "--output", str(out)]) == 0
    side = json.loads((tmp_path / "n.csv.provenance.json").read_text())
    assert side["n_states"] == 2
    from spin1qrs.cli import _config, build_parser
    args = build_parser().parse_args(["run", "--full-states"])
    assert _config(args).n_states == presets.N_STATES
