import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magbus.errors import ConfigError, SingularSystemError
from magbus.model import (
    REFERENCE,
    BusParams,
    ModeParams,
    SystemConfig,
    coupling_matrix,
    mhz_to_rad_ns,
    rad_ns_to_mhz,
)
from magbus.spectral import (
    SpectrumGrid,
    anti_pt_residual,
    effective_coupling,
    full_numeric_eigenvalues,
    hybrid_eigenfrequencies,
    reduced_two_mode,
    renormalized_dampings,
    s11,
    s11_closed_form,
    s11_from_solve,
    steady_state,
    sweep_config,
    sweep_spectrum,
)
from oracles import configs, direct_solve, faddeev_leverrier, random_config

W = mhz_to_rad_ns


def bare_bus(detune_mhz=0.0, **kw):
    return REFERENCE.config(f_t_mhz=5012.0 + detune_mhz, **kw)


def two_bus(cfg, detune_mhz, shared=True):
    b2 = BusParams(cfg.cavity.omega + W(detune_mhz), cfg.buses[0].gamma_int, cfg.buses[0].gamma_ext)
    return SystemConfig(cfg.cavity, cfg.magnon, (cfg.buses[0], b2), cfg.g_ct, cfg.g_mt, shared)


# --- steady state --------------------------------------------------------

def test_decoupled_bus_lorentzian():
    cfg = replace(bare_bus(), g_ct=0.0, g_mt=0.0)
    bus = cfg.buses[0]
    ss = steady_state(cfg, bus.omega_t, a_in=0.3 + 0.1j)
    expected = math.sqrt(bus.gamma_ext) * (0.3 + 0.1j) / (bus.gamma_t / 2)
    assert ss.t1 == pytest.approx(expected, rel=1e-14)
    assert ss.a == 0 and ss.m == 0
    assert ss.t2 is None


def test_reference_at_cavity_residual():
    cfg = REFERENCE.config(g_mt_mhz=10.0)
    ss = steady_state(cfg, cfg.cavity.omega)
    assert np.all(np.isfinite(ss.amplitudes))
    assert ss.residual < 1e-10
    np.testing.assert_allclose(ss.detunings(cfg)[:2], 0.0, atol=1e-12)


def test_far_detuned_second_bus_is_small():
    cfg = two_bus(REFERENCE.config(), 1e4 * 50.86)
    ss = steady_state(cfg, cfg.cavity.omega)
    assert abs(ss.t2) < 1e-3 * abs(ss.t1)


def test_singular_system_reported():
    cfg = SystemConfig(ModeParams(30.0, 0.0), ModeParams(31.0, 0.0), (BusParams(32.0, 0.0, 0.0),),
                       0.0, 0.0)
    with pytest.raises(SingularSystemError):
        steady_state(cfg, 30.0)
    with pytest.raises(SingularSystemError):
        s11(cfg, 30.0)


@given(configs())
def test_steady_state_matches_direct_assembly(cfg):
    w = cfg.cavity.omega + 0.01
    ss = steady_state(cfg, w, 0.7 - 0.2j)
    ref = direct_solve(cfg, w, 0.7 - 0.2j)
    np.testing.assert_allclose(ss.amplitudes, ref, rtol=1e-10, atol=1e-12 * np.max(np.abs(ref)))


# --- S11 -----------------------------------------------------------------

def test_far_detuned_s11_is_one():
    cfg = REFERENCE.config()
    w = cfg.cavity.omega + 1e6 * cfg.buses[0].gamma_t
    assert abs(s11(cfg, w) - 1) < 1e-4


def test_bare_bus_on_resonance():
    cfg = replace(REFERENCE.config(), g_ct=0.0, g_mt=0.0)
    cfg = cfg.with_bus(0, gamma_int=W(50.8 - 41.7), gamma_ext=W(41.7))
    val = s11(cfg, cfg.buses[0].omega_t)
    assert val == pytest.approx(1 - 2 * 41.7 / 50.8, abs=1e-12)
    assert val.real == pytest.approx(-0.642, abs=1e-3)


@given(configs(shared_port=st.booleans()))
def test_closed_form_matches_solve(cfg):
    w = np.linspace(cfg.cavity.omega - 1.0, cfg.cavity.omega + 1.0, 17)
    np.testing.assert_allclose(s11_closed_form(cfg, w), s11_from_solve(cfg, w), rtol=0, atol=1e-12)
    s11(cfg, w, check=True)


@given(configs(), st.floats(4800, 5200))
def test_passivity(cfg, f):
    assert abs(s11(cfg, W(f))) <= 1 + 1e-12


@given(configs(), st.floats(4900, 5100))
def test_s11_consistent_with_input_output(cfg, f):
    ss = steady_state(cfg, W(f), 1.0)
    assert abs(s11(cfg, W(f)) - ss.s11) <= 1e-12 * max(1.0, abs(ss.s11))


@given(configs(lossy=True), st.floats(4900, 5100))
def test_power_balance(cfg, f):
    ss = steady_state(cfg, W(f), 1.0)
    lost = cfg.cavity.gamma * abs(ss.a) ** 2 + cfg.magnon.gamma * abs(ss.m) ** 2
    for bus, t in zip(cfg.buses, ss.amplitudes[2:]):
        lost += bus.gamma_int * abs(t) ** 2
    balance = abs(ss.a_in) ** 2 - abs(ss.a_out) ** 2
    assert abs(balance - lost) <= 1e-8 * max(abs(ss.a_in) ** 2, 1e-300)


def test_literal_four_mode_model_breaks_power_balance():
    cfg = two_bus(REFERENCE.config(), 20.0, shared=False)
    ss = steady_state(cfg, cfg.cavity.omega + W(10))
    lost = (cfg.cavity.gamma * abs(ss.a) ** 2 + cfg.magnon.gamma * abs(ss.m) ** 2
            + sum(b.gamma_int * abs(t) ** 2 for b, t in zip(cfg.buses, ss.amplitudes[2:])))
    assert abs((1 - abs(ss.a_out) ** 2) - lost) > 1e-3


@given(st.floats(4900, 5100), st.floats(4900, 5100))
def test_magnon_decoupled_when_g_mt_zero(f_m1, f_m2):
    cfg = REFERENCE.config(g_mt_mhz=0.0)
    w = W(np.linspace(4950, 5070, 51))
    np.testing.assert_allclose(s11(cfg.with_magnon(W(f_m1)), w),
                               s11(cfg.with_magnon(W(f_m2)), w), rtol=0, atol=1e-12)


def test_four_mode_reduces_to_three_mode():
    cfg = REFERENCE.config()
    four = two_bus(cfg, 1e4 * 50.86)
    w = W(np.linspace(4900, 5120, 401))
    assert np.max(np.abs(s11(four, w) - s11(cfg, w))) < 1e-3


def test_equal_buses_without_cross_damping_reduce_to_two_mode_form():
    cfg = REFERENCE.config()
    four = two_bus(cfg, 15.0, shared=False)
    w = W(np.linspace(4950, 5070, 31))
    np.testing.assert_allclose(s11_closed_form(four, w), s11_from_solve(four, w), atol=1e-12)


# --- elimination ---------------------------------------------------------

@given(configs(n_buses=st.just(1)), st.floats(4900, 5100))
def test_elimination_exact(cfg, f):
    a, m = reduced_two_mode(cfg, W(f), 0.5j)
    ss = steady_state(cfg, W(f), 0.5j)
    scale = max(abs(ss.a), abs(ss.m))
    assert abs(a - ss.a) <= 1e-10 * scale
    assert abs(m - ss.m) <= 1e-10 * scale


def test_elimination_trivial_limits():
    cfg = REFERENCE.config(g_mt_mhz=0.0)
    assert reduced_two_mode(cfg, cfg.cavity.omega)[1] == 0
    cfg = replace(REFERENCE.config(), g_ct=0.0)
    assert reduced_two_mode(cfg, cfg.cavity.omega)[0] == 0


def test_elimination_needs_single_bus():
    with pytest.raises(ConfigError):
        reduced_two_mode(two_bus(REFERENCE.config(), 30.0), 31.5)


def test_markovian_limit():
    cfg = REFERENCE.config(g_mt_mhz=10.0)
    bus = cfg.buses[0]
    ec = effective_coupling(cfg, bus.omega_t)
    assert ec.g_coh == 0.0
    expected = 1j * 2 * cfg.g_ct * cfg.g_mt / bus.gamma_t
    assert abs(ec.g_eff - expected) <= 4 * np.finfo(float).eps * abs(expected)


def test_dissipative_coupling_value():
    cfg = REFERENCE.config(g_mt_mhz=10.0).with_bus(0, gamma_int=W(9.1), gamma_ext=W(41.7))
    ec = effective_coupling(cfg, cfg.buses[0].omega_t)
    assert rad_ns_to_mhz(ec.gamma_diss) == pytest.approx(1.93, abs=0.01)


def test_far_detuned_coupling_is_coherent():
    # the leftover dissipative fraction is g_t / (2 |D_t|)
    cfg = REFERENCE.config()
    gt = cfg.buses[0].gamma_t
    for ratio in (1e3, 1e5):
        dt = ratio * gt
        ec = effective_coupling(cfg, cfg.buses[0].omega_t - dt)
        rel = abs(ec.g_eff - cfg.g_ct * cfg.g_mt / dt) / abs(ec.g_eff)
        assert rel == pytest.approx(1 / (2 * ratio), rel=1e-6)
        assert abs(ec.gamma_diss / ec.g_coh) < 1 / ratio
    assert rel < 1e-5


@given(configs(n_buses=st.just(1)), st.floats(4900, 5100))
def test_coupling_decomposition_identity(cfg, f):
    ec = effective_coupling(cfg, W(f))
    assert ec.g_eff == complex(ec.g_coh, ec.gamma_diss)
    bus = cfg.buses[0]
    direct = cfg.g_ct * cfg.g_mt / (bus.omega_t - W(f) - 0.5j * bus.gamma_t)
    assert abs(ec.g_eff - direct) <= 1e-15 * max(abs(direct), 1e-300) + 1e-300


# --- eigenstructure ------------------------------------------------------

def test_uncoupled_eigenfrequencies():
    cfg = REFERENCE.config(f_m_mhz=5030.0, g_mt_mhz=0.0)
    e = hybrid_eigenfrequencies(cfg)
    gc, gm, G = renormalized_dampings(cfg)
    assert G == 0
    got = sorted([e.omega_plus, e.omega_minus], key=lambda z: z.real)
    want = sorted([cfg.cavity.omega - 0.5j * gc, cfg.magnon.omega - 0.5j * gm], key=lambda z: z.real)
    np.testing.assert_allclose(got, want, rtol=1e-14)


def _symmetric(delta_rad=0.0, g_mt_mhz=4.9):
    # equal bare dampings and couplings -> delta gamma' = 0
    cfg = REFERENCE.config(g_mt_mhz=g_mt_mhz)
    cfg = replace(cfg, magnon=ModeParams(cfg.cavity.omega + delta_rad, cfg.cavity.gamma))
    return cfg


def test_symmetric_point_has_equal_real_parts():
    cfg = _symmetric()
    e = hybrid_eigenfrequencies(cfg)
    assert e.omega_plus.real == pytest.approx(e.omega_minus.real, abs=1e-12)
    assert abs((e.omega_plus - e.omega_minus).imag) == pytest.approx(2 * e.Gamma, rel=1e-12)
    assert e.regime == "attraction"


def test_exceptional_point_at_delta_two_gamma():
    G = renormalized_dampings(_symmetric())[2]
    e = hybrid_eigenfrequencies(_symmetric(2 * G))
    # Delta is only representable to ~eps * omega_c
    assert abs(e.sqrt_argument) < 8 * np.finfo(float).eps * _symmetric().cavity.omega * 2 * G
    assert e.regime == "exceptional"
    assert abs(e.omega_plus - e.omega_minus) < 1e-6


@given(configs(n_buses=st.just(1)), st.sampled_from(["full", "half"]))
def test_trace_identity_and_numeric_agreement(cfg, shift):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        e = hybrid_eigenfrequencies(cfg, shift)
    gc, gm, _ = renormalized_dampings(cfg, shift)
    expected = cfg.cavity.omega + cfg.magnon.omega - 0.5j * (gc + gm)
    assert abs(e.omega_plus + e.omega_minus - expected) <= 1e-12 * abs(expected)


def test_weak_bus_damping_warns():
    cfg = REFERENCE.config().with_bus(0, gamma_int=W(1.0), gamma_ext=W(1.0))
    with pytest.warns(RuntimeWarning):
        hybrid_eigenfrequencies(cfg)


def test_full_eigenvalues_uncoupled():
    cfg = replace(REFERENCE.config(f_m_mhz=5030, f_t_mhz=4990), g_ct=0.0, g_mt=0.0)
    ev = full_numeric_eigenvalues(cfg)
    want = [cfg.cavity.omega - 0.5j * cfg.cavity.gamma, cfg.magnon.omega - 0.5j * cfg.magnon.gamma,
            cfg.buses[0].omega_t - 0.5j * cfg.buses[0].gamma_t]
    np.testing.assert_allclose(np.sort_complex(ev), np.sort_complex(want), rtol=1e-14)


@given(configs(lossy=False))
def test_characteristic_polynomial_oracle(cfg):
    M = coupling_matrix(cfg)
    ev = full_numeric_eigenvalues(cfg)
    assert abs(ev.sum() - np.trace(M)) <= 1e-10 * abs(np.trace(M))
    coeffs = faddeev_leverrier(M)
    np.testing.assert_allclose(np.poly(ev), coeffs, rtol=1e-9,
                               atol=1e-11 * np.max(np.abs(coeffs)))


def test_lossless_spectrum_is_conjugate_symmetric():
    cfg = random_config(np.random.default_rng(3), lossy=False)
    cfg = replace(cfg, cavity=replace(cfg.cavity, gamma=0.0), magnon=replace(cfg.magnon, gamma=0.0))
    cfg = cfg.with_bus(0, gamma_int=0.0, gamma_ext=0.0)
    coeffs = faddeev_leverrier(coupling_matrix(cfg))
    assert np.max(np.abs(coeffs.imag)) < 1e-9 * np.max(np.abs(coeffs))


def test_full_model_approaches_two_mode_eigenvalues_when_bus_is_fast():
    # bus damping 20x the largest of the couplings and dampings
    cfg = REFERENCE.config(f_m_mhz=5013.0, g_mt_mhz=3.0)
    cfg = cfg.with_bus(0, gamma_int=W(20.0), gamma_ext=W(78.0))
    e = hybrid_eigenfrequencies(cfg)
    ev = full_numeric_eigenvalues(cfg)[:2]
    for w in (e.omega_plus, e.omega_minus):
        assert np.min(np.abs(ev - w)) < e.Gamma / 10


def test_anti_pt_residual():
    cfg = replace(REFERENCE.config(g_mt_mhz=4.9), magnon=ModeParams(W(5012), W(1.68)))
    assert anti_pt_residual(cfg) == 0.0
    assert anti_pt_residual(REFERENCE.config(g_mt_mhz=10.0)) > 0


def test_anti_pt_zero_crossing_half_shift():
    # g_m' = g_c' with the 2 g^2/g_t shift: gamma_m + 2 g_mt^2/g_t = gamma_c + 2 g_ct^2/g_t
    from scipy.optimize import brentq
    cfg = REFERENCE.config()
    gt = cfg.buses[0].gamma_t

    def signed(g_mt_mhz):
        gc, gm, _ = renormalized_dampings(REFERENCE.config(g_mt_mhz=g_mt_mhz), "half")
        return gm - gc

    root = brentq(signed, 0.0, 10.0, xtol=1e-14)
    analytic = math.sqrt(cfg.g_ct ** 2 + (cfg.cavity.gamma - cfg.magnon.gamma) * gt / 2)
    assert W(root) == pytest.approx(analytic, rel=1e-10)
    assert anti_pt_residual(REFERENCE.config(g_mt_mhz=root), "half") < 1e-12
    assert anti_pt_residual(REFERENCE.config(g_mt_mhz=root * 0.9), "half") > 0


def test_damping_shift_choice():
    cfg = REFERENCE.config(g_mt_mhz=10.0)
    full = renormalized_dampings(cfg, "full")
    half = renormalized_dampings(cfg, "half")
    gt = cfg.buses[0].gamma_t
    assert full[0] - cfg.cavity.gamma == pytest.approx(4 * cfg.g_ct ** 2 / gt)
    assert half[0] - cfg.cavity.gamma == pytest.approx(2 * cfg.g_ct ** 2 / gt)
    assert full[2] == half[2]
    with pytest.raises(ValueError):
        renormalized_dampings(cfg, "quarter")


def test_full_shift_matches_full_model_on_resonance():
    # strongly damped bus, resonant modes: the full-model damping tracks the 4 g^2/g_t shift
    cfg = REFERENCE.config(g_mt_mhz=0.0).with_bus(0, gamma_int=W(100.0), gamma_ext=W(400.0))
    slow = full_numeric_eigenvalues(cfg)[0]
    gc_full, _, _ = renormalized_dampings(cfg, "full")
    gc_half, _, _ = renormalized_dampings(cfg, "half")
    assert -2 * slow.imag == pytest.approx(gc_full, rel=1e-3)
    assert abs(-2 * slow.imag - gc_full) < 0.1 * abs(-2 * slow.imag - gc_half)


# --- sweeps --------------------------------------------------------------

def test_one_by_one_grid():
    cfg = REFERENCE.config()
    grid = sweep_spectrum(cfg, "f_m", [5000.0], [5010.0])
    assert grid.s11.shape == (1, 1)
    assert grid.s11[0, 0] == s11(cfg.with_magnon(W(5000.0)), W(5010.0))


def test_decoupled_sweep_columns_identical():
    grid = sweep_spectrum(REFERENCE.config(g_mt_mhz=0.0), "f_m", np.linspace(4960, 5060, 21),
                          np.linspace(4960, 5060, 41))
    assert np.max(np.abs(grid.s11 - grid.s11[0])) < 1e-12


def _local_minima(x, y):
    k = np.nonzero((y[1:-1] < y[:-2]) & (y[1:-1] < y[2:]))[0] + 1
    return x[k]


def test_level_attraction_dips_merge_inside_window():
    cfg = REFERENCE.config(g_mt_mhz=0.75 * 50.8 / (2 * 4.9))
    probe = np.linspace(4990, 5034, 4401)
    G = rad_ns_to_mhz(renormalized_dampings(cfg)[2])
    for f_m in (5012 - 0.8 * G, 5012 + 0.5 * G):
        e = hybrid_eigenfrequencies(cfg.with_magnon(W(f_m)))
        assert e.regime == "attraction"
        dips = _local_minima(probe, np.abs(sweep_spectrum(cfg, "f_m", [f_m], probe).s11[0]))
        assert len(dips) == 1
        assert min(f_m, 5012) - 0.05 <= dips[0] <= max(f_m, 5012) + 0.05
    for f_m in (5000.0, 5020.0, 5030.0):
        e = hybrid_eigenfrequencies(cfg.with_magnon(W(f_m)))
        dips = _local_minima(probe, np.abs(sweep_spectrum(cfg, "f_m", [f_m], probe).s11[0]))
        branches = sorted(rad_ns_to_mhz(np.array([e.omega_plus.real, e.omega_minus.real])))
        assert len(dips) == 2
        # Fano-like line shapes shift the dips by a fraction of the magnon linewidth
        np.testing.assert_allclose(sorted(dips), branches,
                                   atol=rad_ns_to_mhz(e.gamma_m_prime) / 4)


def test_parallel_sweep_identical():
    cfg = REFERENCE.config()
    sv, pv = np.linspace(4990, 5030, 17), np.linspace(4980, 5040, 33)
    a = sweep_spectrum(cfg, "f_m", sv, pv, jobs=1)
    b = sweep_spectrum(cfg, "f_m", sv, pv, jobs=4)
    assert a.csv_text() == b.csv_text()


def test_sweep_rejects_non_monotone():
    with pytest.raises(ConfigError):
        sweep_spectrum(REFERENCE.config(), "f_m", [1.0, 3.0, 2.0], [5000.0])


def test_sweep_axes():
    cfg = REFERENCE.config()
    assert rad_ns_to_mhz(sweep_config(cfg, "f_c", 5000.0).cavity.omega) == pytest.approx(5000.0)
    assert rad_ns_to_mhz(sweep_config(cfg, "f_t", 5001.0).buses[0].omega_t) == pytest.approx(5001.0)
    assert rad_ns_to_mhz(sweep_config(cfg, "g_mt", 2.0).g_mt) == pytest.approx(2.0)
    b = sweep_config(cfg, "B0", 0.18, gyro_mhz_per_t=28000.0)
    assert rad_ns_to_mhz(b.magnon.omega) == pytest.approx(5040.0)
    with pytest.raises(ConfigError):
        sweep_config(cfg, "phi", 10.0)
    with pytest.raises(ConfigError):
        sweep_config(cfg, "nope", 1.0)


def test_grid_csv_round_trip(tmp_path):
    grid = sweep_spectrum(REFERENCE.config(), "f_m", [5000.0, 5010.0], np.linspace(4990, 5030, 5))
    path = tmp_path / "g.csv"
    grid.to_csv(path)
    text = path.read_text().splitlines()
    assert text[0] == "# axis=f_m"
    assert text[1] == "sweep_value,probe_f_mhz,s11_re,s11_im,s11_abs_db"
    back = SpectrumGrid.from_csv(path)
    assert back.axis == "f_m"
    np.testing.assert_array_equal(back.s11, grid.s11)
    np.testing.assert_allclose(back.probe_omega, grid.probe_omega, rtol=1e-15)
