import json
import math

import numpy as np
import pytest

from spin1qrs import presets
from spin1qrs.circuit import ChainConfig, build_chain, chain_hamiltonian
from spin1qrs.errors import CompilationError
from spin1qrs.pulses import (XY_PAIRS, GateSchedule, attach_signals, compile_rotation, compile_xx,
                             compile_xy, gap_table, rotation_segment, schedule_heisenberg,
                             schedule_ising, schedule_xxz, secular_analysis)
from spin1qrs.qrs import dressed_site
from spin1qrs.spin1 import spin1_ops

Q = presets.PQ_QUOTED


def secular_block(sites, sig=None, drives=None):
    chain = ChainConfig(tuple(sites), np.zeros((1, 2)), np.full((1, 2), Q))
    ham = chain_hamiltonian(chain, None if sig is None else [sig], drives, include_static=False)
    h = secular_analysis(ham, chain.dims).hamiltonian
    idx = [a * 4 + b for a in range(3) for b in range(3)]
    return h[np.ix_(idx, idx)]


def test_gap_table_definitions(ref_sites):
    a, b = ref_sites
    t = gap_table(a, b)
    d = (b.epsilon[1] - b.epsilon[0]) + (a.epsilon[1] - a.epsilon[0])
    assert t.delta[1, 0, 1, 0] == d
    assert t.Delta[2, 1, 1, 0] == abs((b.epsilon[1] - b.epsilon[0]) - (a.epsilon[2] - a.epsilon[1]))
    assert np.all(t.Delta[~np.isnan(t.Delta)] >= 0)
    assert np.all(t.delta[~np.isnan(t.delta)] > 0)
    assert np.isnan(t.delta[0, 1, 1, 0])


def test_gap_table_identical_sites_and_refusal(ref_species):
    A, _ = ref_species
    s1 = dressed_site(A, 4)
    s2 = dressed_site(A.__class__(A.omega_q, A.omega_r, A.g, A.n_fock, "B"), 4)
    assert gap_table(s1, s2).Delta[1, 0, 1, 0] == 0
    with pytest.raises(CompilationError):
        compile_xy(s1, s2, 1e-3, Q)


def test_gap_table_guard_band(ref_sites):
    with pytest.raises(CompilationError):
        gap_table(*ref_sites, guard_band=1e10)


def test_xy_frequencies_distinct(ref_sites):
    nu = gap_table(*ref_sites).xy_frequencies()
    assert len(set(nu)) == 4
    assert all(x > 0 for x in nu)


def test_sum_tones_exceed_difference_tones(ref_sites):
    t = gap_table(*ref_sites)
    for big, small in zip(t.xx_sum_frequencies(), t.xy_frequencies()):
        assert big > small


def test_compile_xy_structure(ref_sites):
    a, b = ref_sites
    sig = compile_xy(a, b, 1e-4, Q)
    assert len(sig.components) == 4
    table = gap_table(a, b)
    for (g, nu, ph), ((k, j), (m, l)) in zip(sig.components, XY_PAIRS):
        assert nu == table.Delta[k, j, m, l]
        assert g == 1e-4 / (a.chi[k, j] * b.chi[m, l])
        assert ph == math.pi
    g1, g4 = sig.components[0][0], sig.components[3][0]
    assert g1 / g4 == pytest.approx(a.chi[2, 1] * b.chi[2, 1] / (a.chi[1, 0] * b.chi[1, 0]), rel=1e-14)
    assert sig.metadata["strength"] == pytest.approx(1e-4 * Q)


def test_compile_xy_zero_flux(ref_sites):
    sig = compile_xy(*ref_sites, 0.0, Q)
    assert all(c[0] == 0 for c in sig.components)
    assert sig.metadata["strength"] == 0


def test_compile_xy_quoted_strength(ref_sites):
    with pytest.warns(UserWarning) as caught:
        sig = compile_xy(*ref_sites, presets.F_QUOTED, Q, strict=False)
    text = " ".join(str(w.message) for w in caught)
    assert "exceeds" in text and "guard band" in text
    assert sig.metadata["strength"] == pytest.approx(presets.J_QUOTED, rel=2e-3)
    assert sig.metadata["warnings"]


def test_compile_xy_strict_refuses_at_quoted_strength(ref_sites):
    with pytest.raises(CompilationError):
        compile_xy(*ref_sites, presets.F_QUOTED, Q)


def test_compile_xy_effective_hamiltonian(ref_sites):
    sig = compile_xy(*ref_sites, 1e-4, Q)
    C = sig.metadata["strength"]
    o = spin1_ops()
    target = C * (np.kron(o.S_X, o.S_X) + np.kron(o.S_Y, o.S_Y))
    np.testing.assert_allclose(secular_block(ref_sites, sig), target, rtol=0, atol=1e-12 * C)


def test_compile_xx_structure_and_effective(ref_sites):
    a, b = ref_sites
    xy = compile_xy(a, b, 1e-4, Q)
    xx = compile_xx(a, b, 1e-4, Q)
    assert len(xx.components) == 8
    for n in range(4):
        assert xx.components[n][0] == xy.components[n][0] / 2
        assert xx.components[n + 4][0] == xx.components[n][0]
    table = gap_table(a, b)
    assert [c[1] for c in xx.components[4:]] == table.xx_sum_frequencies()
    assert xx.components[5][1] == table.delta[1, 0, 2, 1]
    C = xx.metadata["strength"]
    o = spin1_ops()
    np.testing.assert_allclose(secular_block(ref_sites, xx), C * np.kron(o.S_X, o.S_X),
                               rtol=0, atol=1e-12 * C)


def test_rwa_margin_reported(ref_sites):
    sig = compile_xy(*ref_sites, 1e-4, Q)
    dmin = sig.metadata["delta_min"]
    assert 0 < dmin < min(gap_table(*ref_sites).xy_frequencies())
    assert sig.metadata["rwa_ratio"] == pytest.approx(1e-4 * Q / dmin)


@pytest.mark.parametrize("phi,axis", [(0.0, "S_X"), (math.pi / 2, "S_Y")])
def test_rotation_effective_generator(ref_sites, phi, axis):
    a, b = ref_sites
    r = 1e6
    drives = [compile_rotation(a, r, phi), compile_rotation(b, r, phi)]
    h = secular_block(ref_sites, drives=drives)
    op = getattr(spin1_ops(), axis)
    target = r * (np.kron(op, np.eye(3)) + np.kron(np.eye(3), op))
    np.testing.assert_allclose(h, target, rtol=0, atol=1e-12 * r)


def test_rotation_tones(ref_sites):
    a, _ = ref_sites
    d = compile_rotation(a, 1e6, 0.3)
    assert len(d.tones) == 2
    assert d.tones[0][1] == a.transition(1, 0)
    assert d.tones[1][1] == a.transition(2, 1)
    assert d.tones[0][0] == pytest.approx(math.sqrt(2) * 1e6 / abs(a.chi[1, 0]))
    assert d.metadata["duration"] == pytest.approx(math.pi / 2e6)


def test_rotation_rejections(ref_sites):
    a, _ = ref_sites
    with pytest.raises(CompilationError):
        compile_rotation(a, 0.0, 0.0)
    with pytest.raises(CompilationError):
        compile_rotation(a, 1e9, 0.0)
    with pytest.warns(UserWarning):
        compile_rotation(a, 1e9, 0.0, strict=False)


def test_heisenberg_schedule():
    s = schedule_heisenberg(1e-7, 10, 3.0e7, 1.0e7, 1.0e7, 5e7)
    assert len(s) == 70
    assert [seg.kind for seg in s.segments[:7]] == [
        "ROT_X_DAG", "XY", "ROT_X", "ROT_Y", "XY", "ROT_Y_DAG", "XY"]
    assert s.total_duration == pytest.approx(3e-7 + 40 * math.pi / (2 * 5e7), rel=1e-14)
    assert s.metadata["lambda"] == (4.0e7, 4.0e7, 2.0e7)
    assert s.segments[1].strength == 1.0e7 and s.segments[6].strength == 3.0e7
    for seg in s.segments:
        if seg.is_rotation:
            assert seg.duration == math.pi / (2 * 5e7)


def test_isotropic_lambda_mapping():
    c = 1.0
    assert schedule_heisenberg(1.0, 1, c, c, c, 1.0).metadata["lambda"] == (2.0, 2.0, 2.0)


def test_xxz_schedule():
    s = schedule_xxz(1e-7, 5, 2e7, 1e7, 5e7)
    assert len(s) == 20
    assert [seg.kind for seg in s.segments[:4]] == ["ROT_Y", "XX", "ROT_Y_DAG", "XY"]


def test_ising_schedule():
    s = schedule_ising(1e-8, 2e8, 6e7)
    assert len(s) == 1 and s.segments[0].kind == "ISING" and s.segments[0].params["B"] == 6e7
    with pytest.raises(ValueError):
        schedule_ising(0.0, 1.0, 1.0)


def test_schedule_validation():
    with pytest.raises(ValueError):
        schedule_heisenberg(1.0, 0, 1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        schedule_heisenberg(1.0, 2, -1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        schedule_xxz(1.0, 2, 1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        rotation_segment("ROT_X", -1.0)


def test_duration_independent_of_chain_size(ref_species):
    durations = set()
    for N in (2, 3, 4):
        s = schedule_heisenberg(1e-7, 10, 3e7, 1e7, 1e7, 5e7)
        chain = build_chain(ref_species, N, Q, Q, 4)
        with pytest.warns(UserWarning):
            compiled = attach_signals(s, chain, strict=False)
        durations.add(compiled.total_duration)
    assert len(durations) == 1


def test_schedule_json_roundtrip(ref_species):
    chain = build_chain(ref_species, 3, Q, Q, 4)
    s = attach_signals(schedule_xxz(2e-7, 2, 1e6, 5e5, 2e6), chain)
    doc = json.loads(s.to_json())
    assert doc["segments"][0]["kind"] == "ROT_Y"
    assert set(doc["segments"][1]) >= {"kind", "strength_rad_s", "duration_s", "tones"}
    assert len(doc["segments"][1]["tones"]["flux"]) == 2
    back = GateSchedule.from_dict(doc)
    assert back.total_duration == s.total_duration
    assert back.segments[1].flux[0].components == s.segments[1].flux[0].components
    assert back.segments[0].drives[1].tones == s.segments[0].drives[1].tones


def test_attach_signals_ising(ref_species):
    chain = build_chain(ref_species, 2, Q, Q, 4)
    s = attach_signals(schedule_ising(1e-6, 1e5, 2e5), chain)
    seg = s.segments[0]
    assert len(seg.flux[0].components) == 8
    assert len(seg.drives) == 2
