"""Derandomization loop: expectation engines, halving choices, full runs."""

import numpy as np
import pytest

from circlewarp import (
    DFParams,
    DerandConfig,
    DerandState,
    DeviationRecord,
    NumericalAlarm,
    PLHomeo,
    ResolutionError,
    SampledFunction,
    advance,
    assemble_v_matrix,
    choose_halves,
    compose,
    confinement_map,
    default_degrees,
    expected_composition,
    mc_cross_check,
    record_shape_check,
    run,
    solve_bruteforce,
    verify_mass_ratios,
    write_deviation_table,
)
from circlewarp.corpus import tapered_oscillation

DEGREES = (1, 2, 4, 8, 16)


def taper_state():
    f = tapered_oscillation(4, m=8)
    q = confinement_map(f, depth=8).with_floor()
    return DerandState.initial(f, q)


# --- config and state validation -----------------------------------------


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        DerandConfig(ell_max=-1)
    with pytest.raises(ValueError):
        DerandConfig(j_tol=1.5)
    with pytest.raises(ValueError):
        DerandConfig(mc_exceed_frac=2.0)
    with pytest.raises(ValueError):
        DerandConfig(y_nodes=0)
    with pytest.raises(ValueError):
        DerandConfig(level_nodes_deep=(4, 0))


def test_initial_state_window_concentric():
    s = taper_state()
    assert s.n_active == 1 and s.ell == 0 and s.phase == "active"
    assert np.array_equal(s.fixed_y, [0.0, 1.0])
    q1 = s.q.value(1, 1)
    assert s.j_lo[0] + s.j_hi[0] == pytest.approx(1.0, abs=1e-15)
    assert s.j_hi[0] - s.j_lo[0] == pytest.approx(q1, abs=1e-15)


def test_state_validation():
    f = tapered_oscillation(4, m=8)
    q = confinement_map(f, depth=8).with_floor()
    with pytest.raises(ValueError):  # pinned images must increase
        DerandState(f, q, 2, 0, np.array([0.0, 0.7, 0.4]), np.array([0.1, 0.5]), np.array([0.2, 0.6]))
    with pytest.raises(ValueError):  # window outside its cell
        DerandState(f, q, 1, 0, np.array([0.0, 1.0]), np.array([0.2]), np.array([1.3]))
    with pytest.raises(ValueError):  # final states carry no windows
        DerandState(f, q, 1, 0, np.array([0.0, 1.0]), np.array([0.2]), np.array([0.8]), phase="final")
    with pytest.raises(ValueError):  # budget map must floor or reach the grid
        DerandState(f, confinement_map(f, depth=4), 1, 0, np.array([0.0, 1.0]), np.array([0.2]), np.array([0.8]))
    with pytest.raises(ValueError):  # homeo only once fully pinned
        taper_state().homeo()


# --- degree ladder --------------------------------------------------------


def test_default_degrees_ladder():
    got = default_degrees(3, 10)
    assert got == (1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 13, 16, 19, 23, 27, 32)
    assert all(a < b for a, b in zip(got, got[1:]))


def test_degree_cap_enforced():
    s = taper_state()
    with pytest.raises(ResolutionError):
        assemble_v_matrix(s, degrees=(128,))  # 2**(m-1) on an m=8 grid
    with pytest.raises(ValueError):
        assemble_v_matrix(s, degrees=(0, 4))


# --- expectation engine ---------------------------------------------------


def test_expected_composition_final_state_composes():
    f = tapered_oscillation(4, m=8)
    q = confinement_map(f, depth=8).with_floor()
    fixed = np.array([0.0, 0.2, 0.45, 0.8, 1.0])
    s = DerandState(f, q, 3, 0, fixed, np.empty(0), np.empty(0), phase="final")
    h = PLHomeo(np.arange(5) / 4, fixed)
    assert np.array_equal(expected_composition(s, 8).values, compose(f, h, 8).values)


def test_expected_composition_constant_function():
    c = SampledFunction(8, np.ones(256))
    q = confinement_map(c, depth=8).with_floor()
    prof = expected_composition(DerandState.initial(c, q))
    assert np.max(np.abs(prof.values - 1.0)) < 1e-12


def test_expected_composition_linear_midpoint():
    # one live coordinate, f(t) = t below the wrap: E f(warp(1/2)) = (a+b)/2
    size = 256
    f = SampledFunction(8, np.arange(size) / size)
    q = confinement_map(f, depth=8).with_floor()
    a, b = 0.3, 0.6
    s = DerandState(f, q, 1, 0, np.array([0.0, 1.0]), np.array([a]), np.array([b]))
    prof = expected_composition(s)
    assert prof.values[size // 2] == pytest.approx(0.5 * (a + b), abs=1e-12)


def test_expected_composition_refuses_refinement_while_live():
    with pytest.raises(ResolutionError):
        expected_composition(taper_state(), m_out=10)


def test_mc_guard_agrees_on_corpus_function():
    rep = mc_cross_check(taper_state(), DerandConfig(mc_samples=2000))
    assert rep["mean_abs_diff"] <= rep["mean_gate"]
    assert rep["exceed_frac"] <= 0.10
    assert rep["samples"] == 2000


# --- functional matrix ----------------------------------------------------


def test_matrix_constant_function_is_zero():
    c = SampledFunction(8, np.full(256, 0.7))
    q = confinement_map(c, depth=8).with_floor()
    s = DerandState.initial(c, q)
    m = assemble_v_matrix(s, DEGREES, DerandConfig(mc_check=False, row_tol=0.0))
    assert m.values.shape == (len(DEGREES) * 2, 1)
    assert np.max(np.abs(m.values)) < 1e-8


def test_matrix_entries_vanish_as_windows_shrink():
    # the first halving can sharpen the up/down contrast, but from ell = 1
    # on the entries track the window width and fall geometrically
    cfg = DerandConfig(mc_check=False, row_tol=0.0)
    s = taper_state()
    tops = []
    for _ in range(7):
        m = assemble_v_matrix(s, DEGREES, cfg)
        tops.append(float(np.max(np.abs(m.values))))
        s, _, _ = choose_halves(s, cfg, DEGREES)
    assert all(b <= a * (1.0 + 1e-9) for a, b in zip(tops[1:], tops[2:]))
    assert tops[-1] < 0.1 * tops[0]


def test_matrix_row_ids_enumerate_degree_point_pairs():
    m = assemble_v_matrix(taper_state(), DEGREES, DerandConfig(mc_check=False, row_tol=0.0))
    assert m.row_ids == tuple((r, j) for r in DEGREES for j in range(2))


def test_averaging_identity_within_tolerance():
    _, _, ident = choose_halves(taper_state(), DerandConfig(mc_check=False), DEGREES)
    assert 0.0 <= ident <= 1e-6


def test_averaging_identity_alarm_carries_context():
    cfg = DerandConfig(mc_check=False, identity_tol=0.0)
    with pytest.raises(NumericalAlarm) as exc:
        assemble_v_matrix(taper_state(), DEGREES, cfg)
    assert set(exc.value.context) == {"n", "ell", "residual", "tol"}


def test_matrix_rejects_final_state():
    f = tapered_oscillation(4, m=8)
    q = confinement_map(f, depth=8).with_floor()
    s = DerandState(f, q, 1, 0, np.array([0.0, 1.0]), np.empty(0), np.empty(0), phase="final")
    with pytest.raises(ValueError):
        assemble_v_matrix(s, DEGREES)


# --- halving choices ------------------------------------------------------


def test_constant_function_halving_is_silent():
    c = SampledFunction(8, np.full(256, 0.7))
    q = confinement_map(c, depth=8).with_floor()
    s0 = DerandState.initial(c, q)
    s1, records, ident = choose_halves(s0, DerandConfig(mc_check=False), DEGREES)
    assert ident < 1e-10
    assert all(rec.sup_dev < 1e-10 for rec in records)
    # no signal: the window shrinks concentrically instead of taking a side
    assert 0.5 * (s1.j_lo[0] + s1.j_hi[0]) == pytest.approx(0.5 * (s0.j_lo[0] + s0.j_hi[0]), abs=1e-15)


def test_single_point_choice_matches_bruteforce():
    cfg = DerandConfig(mc_check=False)
    s0 = taper_state()
    eps, _ = solve_bruteforce(assemble_v_matrix(s0, DEGREES, cfg))
    s1, _, _ = choose_halves(s0, cfg, DEGREES)
    mid = 0.5 * (s0.j_lo[0] + s0.j_hi[0])
    if eps.eps[0] > 0:
        assert s1.j_lo[0] == mid and s1.j_hi[0] == s0.j_hi[0]
    else:
        assert s1.j_lo[0] == s0.j_lo[0] and s1.j_hi[0] == mid


def test_windows_halve_exactly_and_nest():
    cfg = DerandConfig(mc_check=False)
    s0 = taper_state()
    s1, records, _ = choose_halves(s0, cfg, DEGREES)
    assert s1.ell == s0.ell + 1
    np.testing.assert_allclose(s1.j_hi - s1.j_lo, 0.5 * (s0.j_hi - s0.j_lo), rtol=1e-12)
    assert np.all(s1.j_lo >= s0.j_lo) and np.all(s1.j_hi <= s0.j_hi)
    assert [(rec.n, rec.ell) for rec in records] == [(1, 0)] * len(DEGREES)
    assert [rec.r for rec in records] == list(DEGREES)
    assert all(rec.sup_dev >= 0.0 for rec in records)


# --- rank promotion -------------------------------------------------------


def test_advance_pins_and_promotes():
    cfg = DerandConfig(mc_check=False, ell_max=3)
    s0 = taper_state()
    s1, records, ident = advance(s0, cfg, DEGREES)
    assert s1.n_active == 2 and s1.ell == 0 and s1.phase == "active"
    assert s1.fixed_y.shape == (3,)
    # the pinned midpoint stays inside the original rank-1 window
    assert s0.j_lo[0] <= s1.fixed_y[1] <= s0.j_hi[0]
    assert np.all(s1.j_lo >= s1.fixed_y[:-1]) and np.all(s1.j_hi <= s1.fixed_y[1:])
    assert ident <= 1e-6
    assert {rec.ell for rec in records} == {0, 1, 2}


def test_advance_rejects_final_state():
    f = tapered_oscillation(4, m=8)
    q = confinement_map(f, depth=8).with_floor()
    s = DerandState(f, q, 1, 0, np.array([0.0, 1.0]), np.empty(0), np.empty(0), phase="final")
    with pytest.raises(ValueError):
        advance(s)


# --- full runs ------------------------------------------------------------


def test_run_constant_function_gives_identity():
    res = run(SampledFunction(8, np.ones(256)), 3, DerandConfig(mc_check=False))
    assert np.array_equal(res.homeo.x, np.arange(9) / 8)
    assert np.array_equal(res.homeo.y, np.arange(9) / 8)
    assert max((rec.sup_dev for rec in res.records), default=0.0) < 1e-10


def test_run_is_deterministic():
    f = tapered_oscillation(4, m=8)
    cfg = DerandConfig(mc_check=False, ell_max=3, degrees=DEGREES)
    a = run(f, 2, cfg)
    b = run(f, 2, cfg)
    assert np.array_equal(a.homeo.y, b.homeo.y)
    assert a.records == b.records
    assert a.identity_max == b.identity_max


def test_run_output_carries_certificate():
    f = tapered_oscillation(4, m=8)
    cfg = DerandConfig(mc_check=False, ell_max=3, degrees=DEGREES)
    res = run(f, 3, cfg)
    q = confinement_map(f, depth=8).with_floor(cfg.q_floor_exponent)
    rep = verify_mass_ratios(res.homeo, DFParams(3, q=q, orientation="direct"))
    assert rep.passed


def test_run_manifest_and_alarm_guard():
    f = tapered_oscillation(4, m=8)
    res = run(f, 2, DerandConfig(ell_max=2, degrees=DEGREES, mc_samples=2000), label="smoke")
    assert res.manifest["label"] == "smoke"
    assert res.manifest["n_max"] == 2
    assert res.manifest["normalized"] is False
    assert len(res.manifest["mc_reports"]) == 2
    assert res.manifest["breakpoints"] == res.homeo.x.size


def test_run_normalizes_oversized_input():
    f = SampledFunction(8, 3.0 * tapered_oscillation(4, m=8).values)
    res = run(f, 1, DerandConfig(mc_check=False, ell_max=2, degrees=DEGREES))
    assert res.manifest["normalized"] is True
    assert res.manifest["sup_before"] == pytest.approx(3.0, rel=1e-12)


def test_run_depth_guard():
    with pytest.raises(ResolutionError):
        run(tapered_oscillation(4, m=8), 7)
    with pytest.raises(ValueError):
        run(tapered_oscillation(4, m=8), 0)


# --- records and reports ----------------------------------------------------


def test_deviation_table_format(tmp_path):
    records = [DeviationRecord(2, 1, 8, 0.125), DeviationRecord(3, 0, 16, 1.0 / 3.0)]
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    text = write_deviation_table(records, p1)
    write_deviation_table(records, p2)
    assert text.splitlines()[0] == "n,ell,r,sup_dev"
    assert text.splitlines()[1] == "2,1,8,0.125"
    assert text.splitlines()[2] == "3,0,16,0.333333333333"
    assert p1.read_bytes() == p2.read_bytes()


def test_shape_check_counts_bin_pairs():
    falling = [
        DeviationRecord(3, 0, 8, 1.0),
        DeviationRecord(3, 0, 4, 0.5),
        DeviationRecord(3, 0, 2, 0.25),
    ]
    rep = record_shape_check(falling)
    assert rep == {"pairs": 2, "nonincreasing": 2, "fraction": 1.0, "passed": True}

    rising = [DeviationRecord(3, 0, 8, 0.1), DeviationRecord(3, 0, 2, 0.5)]
    rep = record_shape_check(rising)
    assert rep["pairs"] == 1 and rep["nonincreasing"] == 0 and not rep["passed"]


def test_shape_check_skips_noise_groups():
    quiet = [DeviationRecord(2, 0, 4, 1e-15), DeviationRecord(2, 0, 1, 5e-14)]
    rep = record_shape_check(quiet)
    assert rep == {"pairs": 0, "nonincreasing": 0, "fraction": 1.0, "passed": True}
