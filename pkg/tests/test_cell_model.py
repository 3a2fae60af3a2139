"""Cell model tests: OCV fits, conservation, analytic diffusion limits.

Oracle values are computed independently inside the tests (plain ``math``
scalar formulas, textbook quasi-steady diffusion results) rather than frozen
from the implementation under test.
"""

import math

import numpy as np
import pytest

from cellcal.errors import SimulationError
from cellcal.parameters import FARADAY, GAS_CONSTANT, default_cell
from cellcal.spme import (
    N_ELEC_DEFAULT,
    N_RADIAL_DEFAULT,
    CurrentProfile,
    electrolyte_node_volumes,
    feature_matrix,
    make_initial_state,
    read_trajectory_csv,
    simulate,
    solid_shell_volumes,
    step,
    terminal_voltage,
    write_trajectory_csv,
)

PARAMS = default_cell()
I_1C = PARAMS.capacity_ah  # 1C current in amperes for a capacity in A h


def cc_profile(rate_c, n_samples, dt=1.0):
    return CurrentProfile(np.full(n_samples, rate_c * I_1C), dt)


# ---------------------------------------------------------------------------
# current profiles
# ---------------------------------------------------------------------------

def test_current_profile_validation():
    with pytest.raises(ValueError):
        CurrentProfile(np.array([]), 1.0)
    with pytest.raises(ValueError):
        CurrentProfile(np.array([1.0, 2.0]), 0.0)
    with pytest.raises(ValueError):
        CurrentProfile(np.array([1.0, np.nan]), 1.0)


def test_current_profile_times_and_duration():
    prof = CurrentProfile(np.arange(5, dtype=float), 2.0)
    np.testing.assert_allclose(prof.times, [0.0, 2.0, 4.0, 6.0, 8.0])
    assert prof.duration == 10.0
    assert len(prof) == 5


def test_current_profile_from_arrays_round_trip():
    prof = CurrentProfile(np.array([1.0, 0.0, 2.5]), 0.5)
    again = CurrentProfile.from_arrays(prof.times, prof.currents)
    assert again.dt == prof.dt
    np.testing.assert_array_equal(again.currents, prof.currents)
    with pytest.raises(ValueError):
        CurrentProfile.from_arrays(np.array([0.0, 1.0, 3.0]), np.zeros(3))


# ---------------------------------------------------------------------------
# OCV curves
# ---------------------------------------------------------------------------

def _ocv_by_hand(curve, theta):
    u = curve.const + curve.exp_amp * math.exp(curve.exp_rate * theta)
    for amp, center, width in curve.tanh_terms:
        u += amp * math.tanh((theta - center) / width)
    return u


@pytest.mark.parametrize("theta", [0.05, 0.2, 0.5, 0.8, 0.95])
def test_ocv_matches_scalar_formula(theta):
    for curve in (PARAMS.ocv_n, PARAMS.ocv_p):
        assert curve(theta) == pytest.approx(_ocv_by_hand(curve, theta), rel=1e-12)


def test_ocv_vectorized_and_scalar_agree():
    thetas = np.linspace(0.02, 0.98, 41)
    vec = PARAMS.ocv_n(thetas)
    assert vec.shape == thetas.shape
    for th, u in zip(thetas, vec):
        assert u == pytest.approx(PARAMS.ocv_n(float(th)), rel=1e-14)
    assert isinstance(PARAMS.ocv_n(0.5), float)


def test_full_cell_ocv_monotone_in_soc():
    soc = np.linspace(0.0, 1.0, 201)
    u = PARAMS.ocv_p(PARAMS.theta_p_at_soc(soc)) - PARAMS.ocv_n(
        PARAMS.theta_n_at_soc(soc)
    )
    assert np.all(np.diff(u) > 0.0)
    assert u[0] > 2.5 and u[-1] < 4.3


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

def test_solid_shell_volumes_sum_to_sphere():
    for electrode, radius in (("anode", PARAMS.R_s_n), ("cathode", PARAMS.R_s_p)):
        v = solid_shell_volumes(PARAMS, electrode, 10)
        assert v.sum() == pytest.approx(4.0 / 3.0 * math.pi * radius**3, rel=1e-12)
        assert np.all(v > 0.0)


def test_electrolyte_node_volumes_sum():
    v = electrolyte_node_volumes(PARAMS, 10)
    expected = PARAMS.area * (
        PARAMS.eps_e * PARAMS.L_n
        + PARAMS.eps_e_sep * PARAMS.L_sep
        + PARAMS.eps_e * PARAMS.L_p
    )
    assert v.sum() == pytest.approx(expected, rel=1e-12)
    assert v.size == 30


# ---------------------------------------------------------------------------
# terminal voltage
# ---------------------------------------------------------------------------

def _voltage_by_hand(params, soc, current):
    """Scalar terminal voltage at an equilibrated state, reassembled by hand."""
    th_n = params.x_n_min + soc * (params.x_n_max - params.x_n_min)
    th_p = params.x_p_max - soc * (params.x_p_max - params.x_p_min)
    ce = params.c_e_init
    kt2f = 2.0 * GAS_CONSTANT * params.T / FARADAY
    eta = {}
    for sign, th, cmax, k_rate, eps, r_s, L in (
        (+1.0, th_n, params.c_s_max_n, params.k_n, params.eps_s_n, params.R_s_n, params.L_n),
        (-1.0, th_p, params.c_s_max_p, params.k_p, params.eps_s_p, params.R_s_p, params.L_p),
    ):
        a_s = 3.0 * eps / r_s
        j = sign * current / (FARADAY * a_s * L * params.area)
        i0 = FARADAY * k_rate * math.sqrt(ce * th * cmax * (cmax - th * cmax))
        eta[sign] = kt2f * math.asinh(FARADAY * j / (2.0 * i0))
    k_el = params.kappa_e * params.eps_e**params.brug
    k_sep = params.kappa_e * params.eps_e_sep**params.brug
    r_e = (params.L_n / k_el + 2.0 * params.L_sep / k_sep + params.L_p / k_el) / (
        2.0 * params.area
    )
    # equal electrolyte concentrations at both ends: no concentration term
    return (
        params.ocv_p(th_p)
        - params.ocv_n(th_n)
        + eta[-1.0]
        - eta[+1.0]
        - current * (r_e + params.R_l)
    )


@pytest.mark.parametrize("soc,current", [(1.0, 0.0), (0.5, I_1C), (0.8, 5 * I_1C), (0.3, -I_1C)])
def test_terminal_voltage_matches_hand_formula(soc, current):
    state = make_initial_state(PARAMS, soc)
    v = terminal_voltage(state, current, PARAMS)
    assert v == pytest.approx(_voltage_by_hand(PARAMS, soc, current), rel=1e-12)


def test_rest_voltage_equals_ocv():
    prof = CurrentProfile(np.zeros(50), 1.0)
    traj = simulate(PARAMS, prof, 0.7)
    ocv = PARAMS.ocv_p(PARAMS.theta_p_at_soc(0.7)) - PARAMS.ocv_n(
        PARAMS.theta_n_at_soc(0.7)
    )
    np.testing.assert_allclose(traj.voltages, ocv, rtol=1e-12)


def test_terminal_voltage_raises_outside_domain():
    state = make_initial_state(PARAMS, 1.0)
    bad = type(state)(
        c_s_n=np.full_like(state.c_s_n, -5.0),
        c_s_p=state.c_s_p.copy(),
        c_e=state.c_e.copy(),
        t=0.0,
    )
    with pytest.raises(SimulationError):
        terminal_voltage(bad, 1.0, PARAMS)


# ---------------------------------------------------------------------------
# conservation
# ---------------------------------------------------------------------------

def test_bulk_soc_is_exact_coulomb_counting():
    # 0.5C for 7201 samples sweeps the whole anode window: SOC 1 -> 0
    params = PARAMS.with_updates(v_min=0.1)
    prof = cc_profile(0.5, 7201)
    traj = simulate(params, prof, 1.0)
    assert not traj.truncated
    expected = 1.0 - prof.times * (0.5 * I_1C) / (3600.0 * I_1C)
    np.testing.assert_allclose(traj.soc_bulk, expected, atol=1e-9)
    assert traj.soc_bulk[-1] == pytest.approx(0.0, abs=1e-9)


def test_charge_direction_raises_soc():
    prof = CurrentProfile(np.full(100, -I_1C), 1.0)
    traj = simulate(PARAMS, prof, 0.5)
    assert traj.soc_bulk[-1] > 0.5
    assert traj.voltages[-1] > traj.voltages[0]


def test_electrolyte_lithium_conserved():
    prof = cc_profile(1.0, 1800)
    traj = simulate(PARAMS, prof, 1.0, keep_states=True)
    assert not traj.truncated
    vols = electrolyte_node_volumes(PARAMS, N_ELEC_DEFAULT)
    totals = traj.states_c_e @ vols
    drift = np.abs(totals - totals[0]) / totals[0]
    assert drift.max() < 1e-8


def test_zero_current_is_a_fixed_point():
    state = make_initial_state(PARAMS, 0.6)
    out = step(state, 0.0, 1.0, PARAMS)
    np.testing.assert_allclose(out.c_s_n, state.c_s_n, rtol=1e-13)
    np.testing.assert_allclose(out.c_s_p, state.c_s_p, rtol=1e-13)
    np.testing.assert_allclose(out.c_e, state.c_e, rtol=1e-13)


# ---------------------------------------------------------------------------
# analytic diffusion limits
# ---------------------------------------------------------------------------

def test_particle_surface_offset_quasi_steady():
    """Constant-current surface-minus-bulk offset vs the parabolic profile.

    For a sphere under constant surface influx J the quasi-steady profile is
    c(r) = A + B r^2 with B = J/(2 D R).  The reported surface value is the
    outermost-shell average; averaging the parabola over [0.9R, R] gives
    c_se - c_bar = B R^2 (m - 3/5) with m = (3/5)(1 - 0.9^5)/(1 - 0.9^3).
    """
    rate = 1.0
    prof = cc_profile(rate, 1000)
    traj = simulate(PARAMS, prof, 1.0)
    assert not traj.truncated
    a = 1.0 - 1.0 / N_RADIAL_DEFAULT
    m = (3.0 / 5.0) * (1.0 - a**5) / (1.0 - a**3)
    for electrode, sign, d_s, r_s, eps, L, c_se, c_bar in (
        ("anode", -1.0, PARAMS.D_s_n, PARAMS.R_s_n, PARAMS.eps_s_n, PARAMS.L_n,
         traj.c_se_n, traj.c_bar_n),
        ("cathode", +1.0, PARAMS.D_s_p, PARAMS.R_s_p, PARAMS.eps_s_p, PARAMS.L_p,
         traj.c_se_p, traj.c_bar_p),
    ):
        a_s = 3.0 * eps / r_s
        j_in = sign * rate * I_1C / (FARADAY * a_s * L * PARAMS.area)
        expected = (j_in * r_s / (2.0 * d_s)) * (m - 3.0 / 5.0)
        measured = c_se[-1] - c_bar[-1]
        assert measured == pytest.approx(expected, rel=0.02), electrode


def test_particle_bulk_concentration_linear_under_cc():
    prof = cc_profile(2.0, 600)
    traj = simulate(PARAMS, prof, 0.9)
    assert not traj.truncated
    slopes = np.diff(traj.c_bar_n)
    np.testing.assert_allclose(slopes, slopes[0], rtol=1e-9)


def test_electrolyte_steady_gradient_matches_continuum():
    """Steady anode-vs-cathode concentration difference under 0.5C.

    Integrating N = -D_eff dc/dx over the through-cell flux ramp gives
    c(0) - c(L) = N0 [L_n/(2 D_n) + L_s/D_s + L_p/(2 D_p)] with
    N0 = I (1 - t+)/(F A); the reported node values sit half a cell inside
    each electrode, trimming (1/400) of each electrode term.
    """
    prof = cc_profile(0.5, 400)
    traj = simulate(PARAMS, prof, 1.0)
    assert not traj.truncated
    # settled: last two samples nearly identical
    assert abs(traj.ce_n[-1] - traj.ce_n[-2]) < 1e-3
    n0 = 0.5 * I_1C * (1.0 - PARAMS.t_plus) / (FARADAY * PARAMS.area)
    d_el = PARAMS.D_e * PARAMS.eps_e**PARAMS.brug
    d_sep = PARAMS.D_e * PARAMS.eps_e_sep**PARAMS.brug
    trim = 1.0 - 1.0 / (2.0 * N_ELEC_DEFAULT) ** 2
    expected = n0 * (
        PARAMS.L_n / (2.0 * d_el) * trim
        + PARAMS.L_sep / d_sep
        + PARAMS.L_p / (2.0 * d_el) * trim
    )
    measured = traj.ce_n[-1] - traj.ce_p[-1]
    assert measured > 0.0
    assert measured == pytest.approx(expected, rel=0.025)


# ---------------------------------------------------------------------------
# stepping vs whole-profile simulation
# ---------------------------------------------------------------------------

def test_step_and_simulate_agree():
    prof = CurrentProfile(np.concatenate([np.full(30, I_1C), np.zeros(20)]), 1.0)
    traj = simulate(PARAMS, prof, 0.8, keep_states=True)
    state = make_initial_state(PARAMS, 0.8)
    for k in range(len(prof)):
        np.testing.assert_allclose(traj.states_c_s_n[k], state.c_s_n, rtol=1e-12)
        np.testing.assert_allclose(traj.states_c_e[k], state.c_e, rtol=1e-12)
        v = terminal_voltage(state, prof.currents[k], PARAMS)
        assert v == pytest.approx(traj.voltages[k], rel=1e-12)
        if k + 1 < len(prof):
            state = step(state, prof.currents[k], prof.dt, PARAMS)


def test_dt_refinement_converges():
    coarse = simulate(PARAMS, cc_profile(2.0, 300, dt=2.0), 1.0)
    fine = simulate(PARAMS, cc_profile(2.0, 600, dt=1.0), 1.0)
    # bulk SOC at matching times is dt-independent (pure coulomb counting)
    np.testing.assert_allclose(coarse.soc_bulk, fine.soc_bulk[0::2], atol=1e-12)
    # voltages converge first-order: halving dt moves them only slightly
    dv = np.abs(coarse.voltages[1:] - fine.voltages[2::2])
    assert dv.max() < 2e-3


# ---------------------------------------------------------------------------
# truncation and failure semantics
# ---------------------------------------------------------------------------

def test_truncation_by_voltage_window():
    params = PARAMS.with_updates(v_min=3.9)
    traj = simulate(params, cc_profile(1.0, 3600), 1.0)
    assert traj.truncated
    assert 0 < len(traj) < 3600
    assert np.all(traj.voltages >= 3.9)
    full = simulate(PARAMS, cc_profile(1.0, 3600), 1.0)
    np.testing.assert_allclose(traj.voltages, full.voltages[: len(traj)], rtol=1e-12)


def test_upper_window_truncates_on_charge():
    params = PARAMS.with_updates(v_max=4.0)
    prof = CurrentProfile(np.full(3600, -I_1C), 1.0)
    traj = simulate(params, prof, 0.5)
    assert traj.truncated
    assert np.all(traj.voltages <= 4.0)


def test_simulation_error_reports_step_and_electrode():
    # demand far beyond the anode's capability: surface stoichiometry crashes
    params = PARAMS.with_updates(v_min=0.0)
    with pytest.raises(SimulationError) as err:
        simulate(params, cc_profile(20.0, 3600), 0.3)
    assert err.value.step is not None and err.value.step > 0
    assert err.value.electrode == "anode"


def test_initial_soc_validation():
    with pytest.raises(ValueError):
        make_initial_state(PARAMS, 1.2)
    with pytest.raises(ValueError):
        simulate(PARAMS, cc_profile(1.0, 10), -0.1)


# ---------------------------------------------------------------------------
# features and CSV
# ---------------------------------------------------------------------------

def test_feature_matrix_layout():
    prof = cc_profile(1.0, 120)
    traj = simulate(PARAMS, prof, 0.9)
    X = feature_matrix(traj)
    assert X.shape == (120, 4)
    np.testing.assert_array_equal(X[:, 0], traj.currents)
    np.testing.assert_array_equal(X[:, 1], traj.soc_surf)
    np.testing.assert_array_equal(X[:, 2], traj.soc_bulk)
    np.testing.assert_array_equal(X[:, 3], traj.ce_n)


def test_trajectory_csv_round_trip(tmp_path):
    traj = simulate(PARAMS, cc_profile(1.5, 200), 0.95)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj)
    data = read_trajectory_csv(path)
    np.testing.assert_array_equal(data["time_s"], traj.times)
    np.testing.assert_array_equal(data["voltage_V"], traj.voltages)
    np.testing.assert_array_equal(data["ce_p_mol_m3"], traj.ce_p)


def test_trajectory_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_trajectory_csv(path)
