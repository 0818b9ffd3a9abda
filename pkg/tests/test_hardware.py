import dataclasses

import numpy as np
import pytest

from meshsim import analysis, compiler, hardware, mesh
from meshsim.hardware import (
    CalibrationRecord,
    HeaterModel,
    SweepRecord,
    calibrate_profile,
    calibrated_profile,
    fit_phase_response,
    heater_order,
    heater_targets,
    ideal_profile,
    insertion_loss_per_mode,
    measure_amplitude_matrix,
    parse_heater_id,
    phase_from_voltage,
    profile_from_json,
    profile_to_json,
    realized_heater_phases,
    realized_transfer,
    settings_from_heater_phases,
    simulate_calibration_sweep,
    solve_voltages,
)
from meshsim.mesh import CellAddress
from meshsim.util import (
    FitDegeneracyError,
    InfeasibleError,
    UnknownHeaterError,
    ValidationError,
    wrap_signed,
)


def test_heater_order_and_ids():
    order = heater_order(4)
    assert len(order) == 4 * 3  # n(n-1)
    assert order[0] == "c00r00.theta"
    assert order[1] == "c00r00.phi"
    assert parse_heater_id("c03r02.phi") == (CellAddress(3, 2), "phi")
    with pytest.raises(UnknownHeaterError):
        parse_heater_id("c3r2.phi")


def test_heater_model_span_and_validation():
    m = HeaterModel(phi0_rad=0.5, alpha_rad_per_w=3 * np.pi)
    assert m.p_max_w == pytest.approx(1.0)
    assert m.span_rad == pytest.approx(3 * np.pi)
    m.validate()
    small = HeaterModel(phi0_rad=0.0, alpha_rad_per_w=3 * np.pi, v_max_v=5.0)
    with pytest.raises(ValidationError):
        small.validate()
    with pytest.raises(ValidationError):
        HeaterModel(phi0_rad=0.0, alpha_rad_per_w=-1.0)


def test_phase_from_voltage_quadratic():
    m = HeaterModel(phi0_rad=0.7, alpha_rad_per_w=3 * np.pi)
    # 5 V across 100 ohm dissipates 0.25 W
    assert phase_from_voltage(m, 5.0) == pytest.approx(0.7 + 0.75 * np.pi)
    assert phase_from_voltage(m, 0.0) == pytest.approx(0.7)
    with pytest.raises(ValidationError):
        phase_from_voltage(m, 10.5)
    with pytest.raises(ValidationError):
        phase_from_voltage(m, -0.1)


def test_ideal_realized_transfer_matches_mesh():
    u = compiler.haar_random(6, seed=3)
    rep = compiler.clements_decompose(u)
    prof = ideal_profile(6)
    got = realized_transfer(prof, rep.settings, seed=42)
    want = mesh.mesh_unitary(rep.settings)
    assert np.max(np.abs(got.elements - want.elements)) < 1e-12


def test_realized_transfer_dimension_mismatch():
    prof = ideal_profile(4)
    settings = mesh.bar_settings(5)
    with pytest.raises(ValidationError):
        realized_transfer(prof, settings)


def test_calibrated_profile_structure():
    prof = calibrated_profile(6, disorder_seed=1)
    order = prof.heater_ids
    m = prof.crosstalk.matrix
    idx = {h: i for i, h in enumerate(order)}
    i = idx["c02r02.theta"]
    assert m[i, idx["c02r02.phi"]] == pytest.approx(
        0.06 * prof.heaters["c02r02.theta"].alpha_rad_per_w
    )
    assert m[i, idx["c03r03.theta"]] == pytest.approx(
        0.02 * prof.heaters["c02r02.theta"].alpha_rad_per_w
    )
    assert m[i, idx["c01r01.phi"]] == pytest.approx(
        0.02 * prof.heaters["c02r02.theta"].alpha_rad_per_w
    )
    # same-column cells are not thermal neighbors
    assert m[i, idx["c02r00.theta"]] == 0.0
    assert m[i, idx["c02r04.theta"]] == 0.0
    # deterministic in the disorder seed
    again = calibrated_profile(6, disorder_seed=1)
    assert profile_to_json(again) == profile_to_json(prof)
    assert profile_to_json(calibrated_profile(6, disorder_seed=2)) != (
        profile_to_json(prof)
    )


def test_sweep_rejects_unknown_heater():
    prof = ideal_profile(3)
    with pytest.raises(UnknownHeaterError):
        simulate_calibration_sweep(prof, "c09r09.theta")


def test_sweep_fringe_values():
    prof = ideal_profile(3)
    sweep = simulate_calibration_sweep(prof, "c00r00.theta", points=16)
    # lossless profile, phi0 = 0: signal starts at the fringe maximum 1.0
    assert sweep.signal[0] == pytest.approx(1.0)
    v = sweep.voltages_v
    expected = 0.5 + 0.5 * np.cos(3 * np.pi * v**2 / 100.0)
    assert np.allclose(sweep.signal, expected)


def test_fit_recovers_synthetic_fringe():
    v = np.linspace(0.0, 10.0, 80)
    p = v**2 / 100.0
    signal = 0.4 + 0.31 * np.cos(9.2 * p + 1.3)
    entry = fit_phase_response(SweepRecord("h", v, signal), 100.0)
    assert entry.phi0_rad == pytest.approx(1.3, rel=1e-9)
    assert entry.alpha_rad_per_w == pytest.approx(9.2, rel=1e-9)
    assert entry.residual < 1e-10


def test_fit_degeneracies():
    v = np.linspace(0.0, 10.0, 80)
    p = v**2 / 100.0
    with pytest.raises(FitDegeneracyError):
        fit_phase_response(SweepRecord("h", v[:5], np.cos(p[:5])), 100.0)
    with pytest.raises(FitDegeneracyError):
        fit_phase_response(SweepRecord("h", v, np.full(80, 0.25)), 100.0)
    # span under one fringe period cannot pin alpha and phi0 together
    slow = 0.5 + 0.5 * np.cos(4.0 * p + 0.2)
    with pytest.raises(FitDegeneracyError):
        fit_phase_response(SweepRecord("h", v, slow), 100.0)


def test_noiseless_calibration_recovers_profile():
    prof = calibrated_profile(4, disorder_seed=3)
    record = calibrate_profile(prof, workers=2)
    for hid, model in prof.heaters.items():
        entry = record.entries[hid]
        assert entry.phi0_rad == pytest.approx(model.phi0_rad, rel=1e-9)
        assert entry.alpha_rad_per_w == pytest.approx(
            model.alpha_rad_per_w, rel=1e-9
        )
    assert record.max_residual < 1e-10


def test_calibration_csv_round_trip():
    prof = calibrated_profile(3, disorder_seed=0)
    record = CalibrationRecord.exact_from_profile(prof)
    text = record.to_csv()
    back = CalibrationRecord.from_csv(text)
    assert back.to_csv() == text
    assert set(back.entries) == set(record.entries)


def test_solve_voltages_ideal_exact():
    prof = ideal_profile(5)
    cal = CalibrationRecord.exact_from_profile(prof)
    u = compiler.haar_random(5, seed=8)
    rep = compiler.clements_decompose(u)
    target = heater_targets(rep.settings)
    sol = solve_voltages(prof, cal, target)
    realized = realized_heater_phases(prof, sol.powers_w)
    assert np.max(np.abs(wrap_signed(realized - target))) < 1e-12
    assert np.all(sol.powers_w >= 0)


def test_solve_voltages_with_crosstalk():
    prof = calibrated_profile(6, disorder_seed=0)
    cal = calibrate_profile(prof, workers=2)
    rng = np.random.default_rng(4)
    for _ in range(5):
        target = rng.uniform(0, 2 * np.pi, len(prof.heater_ids))
        sol = solve_voltages(prof, cal, target)
        realized = realized_heater_phases(prof, sol.powers_w)
        assert np.max(np.abs(wrap_signed(realized - target))) < 1e-9
        assert np.all(sol.powers_w >= 0)


def test_solve_branch_bump():
    # partner heater dissipates enough that the theta residual is already
    # overshot by crosstalk alone; the solver must move up one branch
    prof = calibrated_profile(2, disorder_seed=0)
    cal = CalibrationRecord.exact_from_profile(prof)
    phi0 = prof.heater_array("phi0_rad")
    target = np.array([phi0[0] + 0.05, phi0[1] + 5.0])
    sol = solve_voltages(prof, cal, target)
    realized = realized_heater_phases(prof, sol.powers_w)
    assert np.max(np.abs(wrap_signed(realized - target))) < 1e-9
    assert np.all(sol.powers_w >= 0)
    assert sol.iterations > 1


def test_solve_infeasible_budget():
    order = heater_order(2)
    heaters = {
        h: HeaterModel(phi0_rad=0.0, alpha_rad_per_w=3 * np.pi, v_max_v=5.0)
        for h in order
    }
    prof = hardware.HardwareProfile(
        name="starved",
        n=2,
        heaters=heaters,
        crosstalk=hardware.CrosstalkMatrix(np.diag([3 * np.pi] * 2)),
    )
    cal = CalibrationRecord.exact_from_profile(prof)
    # needs p = 3/(3*pi) ~ 0.318 W but the budget is 0.25 W
    with pytest.raises(InfeasibleError) as exc:
        solve_voltages(prof, cal, np.array([3.0, 0.1]))
    assert "c00r00.theta" in exc.value.heater_ids


def test_measure_columns_normalized_and_seeded():
    prof = calibrated_profile(5, disorder_seed=0)
    settings = compiler.clements_decompose(
        compiler.haar_random(5, seed=1)
    ).settings
    a = measure_amplitude_matrix(prof, settings, seed=7)
    b = measure_amplitude_matrix(prof, settings, seed=7)
    c = measure_amplitude_matrix(prof, settings, seed=8)
    assert np.array_equal(a.magnitudes, b.magnitudes)
    assert not np.array_equal(a.magnitudes, c.magnitudes)
    assert np.allclose(np.linalg.norm(a.magnitudes, axis=0), 1.0, atol=1e-12)


def test_static_disorder_survives_run_seed():
    prof = dataclasses.replace(
        calibrated_profile(4, disorder_seed=9),
        theta_noise_sigma_rad=0.0,
        phi_noise_sigma_rad=0.0,
    )
    settings = mesh.bar_settings(4)
    a = realized_transfer(prof, settings, seed=1)
    b = realized_transfer(prof, settings, seed=2)
    # splitter disorder is static, so with jitter off the run seed is inert
    assert np.array_equal(a.elements, b.elements)
    ideal = realized_transfer(ideal_profile(4), settings, seed=1)
    assert not np.allclose(np.abs(a.elements), np.abs(ideal.elements))


def test_insertion_loss_golden():
    prof = calibrated_profile(20, disorder_seed=0)
    il = insertion_loss_per_mode(prof)
    assert il.shape == (20,)
    assert np.allclose(il, 2.899, atol=1e-9)
    assert np.allclose(insertion_loss_per_mode(ideal_profile(4)), 0.0)


def test_ideal_chain_reproduces_target():
    n = 6
    prof = ideal_profile(n)
    cal = CalibrationRecord.exact_from_profile(prof)
    u = compiler.haar_random(n, seed=21)
    rep = compiler.clements_decompose(u)
    sol = solve_voltages(prof, cal, heater_targets(rep.settings))
    realized = realized_heater_phases(prof, sol.powers_w)
    settings = settings_from_heater_phases(
        n, realized, output_phases=rep.settings.output_phases
    )
    measured = measure_amplitude_matrix(prof, settings, seed=0)
    assert abs(analysis.amplitude_fidelity(u, measured) - 1.0) < 1e-9


def test_profile_json_round_trip():
    prof = calibrated_profile(4, disorder_seed=5)
    text = profile_to_json(prof)
    back = profile_from_json(text)
    assert profile_to_json(back) == text
    assert back.n == 4
    assert back.phi_noise_sigma_rad == prof.phi_noise_sigma_rad
    with pytest.raises(ValidationError):
        profile_from_json("{not json")
    with pytest.raises(ValidationError):
        profile_from_json("{}")


def test_heater_targets_round_trip():
    settings = compiler.clements_decompose(
        compiler.haar_random(5, seed=13)
    ).settings
    vec = heater_targets(settings)
    back = settings_from_heater_phases(
        5, vec, output_phases=settings.output_phases
    )
    assert mesh.settings_to_json(back) == mesh.settings_to_json(settings)
