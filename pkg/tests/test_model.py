import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magbus.errors import ConfigError
from magbus.model import (
    REFERENCE,
    BusParams,
    ModeParams,
    SystemConfig,
    amplitude_from_power,
    config_from_dict,
    config_to_dict,
    coupling_matrix,
    field_to_magnon_freq,
    gamma_to_q,
    load_config,
    magnon_freq_to_field,
    mhz_to_rad_ns,
    q_to_gamma,
    rad_ns_to_mhz,
    unwrap,
    validate,
)
from oracles import configs


def test_unit_round_trip_bulk():
    f = np.random.default_rng(0).uniform(1e-3, 1e5, 10_000)
    back = rad_ns_to_mhz(mhz_to_rad_ns(f))
    assert np.max(np.abs(back - f) / f) < 1e-12


@given(st.floats(1e-6, 1e7))
def test_unit_round_trip_scalar(f):
    assert abs(rad_ns_to_mhz(mhz_to_rad_ns(f)) - f) <= 1e-12 * f


def test_mhz_scale():
    assert mhz_to_rad_ns(1000.0) == pytest.approx(2 * math.pi)


def test_reference_set_validates():
    cfg = REFERENCE.config()
    assert validate(cfg) is cfg
    assert cfg.buses[0].gamma_t == pytest.approx(mhz_to_rad_ns(50.86))


def test_negative_gamma_ext_rejected():
    cfg = REFERENCE.config().with_bus(0, gamma_ext=-1.0)
    with pytest.raises(ConfigError, match=r"gamma_ext must be ≥ 0"):
        validate(cfg)


def test_three_buses_rejected():
    cfg = REFERENCE.config()
    cfg3 = SystemConfig(cfg.cavity, cfg.magnon, cfg.buses * 3, cfg.g_ct, cfg.g_mt)
    with pytest.raises(ConfigError, match="at most 2 bus modes"):
        validate(cfg3)


@pytest.mark.parametrize("field, bad", [("g_ct", -0.1), ("g_mt", float("nan"))])
def test_coupling_validation(field, bad):
    from dataclasses import replace
    with pytest.raises(ConfigError, match=field):
        validate(replace(REFERENCE.config(), **{field: bad}))


def test_no_bus_rejected():
    cfg = REFERENCE.config()
    with pytest.raises(ConfigError, match="at least 1"):
        validate(SystemConfig(cfg.cavity, cfg.magnon, (), cfg.g_ct, cfg.g_mt))


def test_q_to_gamma_reference():
    f0 = 98.6 * 50.8
    rates = q_to_gamma(f0, 98.6, 547.4, 120.3)
    assert rad_ns_to_mhz(rates.gamma_t) == pytest.approx(50.8, rel=1e-12)
    assert rad_ns_to_mhz(rates.gamma_int) == pytest.approx(9.16, rel=5e-3)
    assert rad_ns_to_mhz(rates.gamma_ext) == pytest.approx(41.7, rel=5e-3)
    assert rates.residual < 1e-3


def test_q_to_gamma_simple_ratio():
    assert rad_ns_to_mhz(q_to_gamma(5000, 5000, 10000, 10000).gamma_t) == pytest.approx(1.0)


@pytest.mark.parametrize("args", [(0, 1, 1, 1), (5000, -1, 1, 1), (5000, 1, 0, 1)])
def test_q_to_gamma_rejects_non_positive(args):
    with pytest.raises(ConfigError):
        q_to_gamma(*args)


@given(st.floats(100, 1e5), st.floats(1, 1e4), st.floats(1, 1e4))
def test_q_gamma_inverse(f0, qi, qc):
    ql = 1 / (1 / qi + 1 / qc)
    rates = q_to_gamma(f0, ql, qi, qc)
    back = gamma_to_q(f0, *rates[:3])
    for a, b in zip(back, (ql, qi, qc)):
        assert abs(a - b) <= 1e-12 * b


def test_field_law():
    assert field_to_magnon_freq(0.0, 28000.0) == 0.0
    assert rad_ns_to_mhz(field_to_magnon_freq(0.1, 28000.0)) == pytest.approx(2800.0)
    b0 = magnon_freq_to_field(mhz_to_rad_ns(5012.0), 28000.0)
    assert b0 == pytest.approx(0.179, abs=5e-4)
    assert rad_ns_to_mhz(field_to_magnon_freq(b0, 28000.0)) == pytest.approx(5012.0)
    with pytest.raises(ConfigError):
        field_to_magnon_freq(-0.1)


def test_amplitude_from_power():
    a = amplitude_from_power(-20.0, 5000.0)
    per_sqrt_s = a * math.sqrt(1e9)
    assert 1.5e9 < per_sqrt_s < 2.5e9
    assert amplitude_from_power(float("-inf"), 5000.0) == 0.0
    assert amplitude_from_power(-10.0, 5000.0) ** 2 == pytest.approx(10 * a * a, rel=1e-12)


@given(st.floats(-150, 30), st.floats(0.1, 50))
def test_amplitude_monotone_and_sqrt10(p, dp):
    a0 = amplitude_from_power(p, 5000.0)
    assert amplitude_from_power(p + dp, 5000.0) > a0
    assert amplitude_from_power(p + 10.0, 5000.0) == pytest.approx(math.sqrt(10) * a0, rel=1e-12)


@given(configs(lossy=False))
def test_loss_part_of_coupling_matrix_is_passive(cfg):
    M = coupling_matrix(cfg)
    loss = -(M - M.conj().T) / 2j  # Hermitian, must be positive semidefinite
    assert np.min(np.linalg.eigvalsh(loss)) > -1e-12


def test_json_round_trip(tmp_path):
    cfg = REFERENCE.config(f_m_mhz=5020.0)
    data = config_to_dict(cfg)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(data))
    back = load_config(path)
    assert back.magnon.omega == pytest.approx(cfg.magnon.omega, rel=1e-14)
    assert back.buses[0].gamma_ext == pytest.approx(cfg.buses[0].gamma_ext, rel=1e-14)


def test_provenance_wrapper_unwrapped():
    data = config_to_dict(REFERENCE.config())
    data["g_mt_mhz"] = {"value": 3.5, "_provenance": "derived"}
    assert rad_ns_to_mhz(config_from_dict(data).g_mt) == pytest.approx(3.5)
    assert unwrap(7) == 7


@pytest.mark.parametrize("mutate, msg", [
    (lambda d: d.pop("cavity"), "cavity"),
    (lambda d: d["magnon"].update(f_mhz="x"), "magnon.f_mhz"),
    (lambda d: d.update(buses={}), "buses"),
])
def test_config_errors_name_the_field(mutate, msg):
    data = config_to_dict(REFERENCE.config())
    mutate(data)
    with pytest.raises(ConfigError, match=msg):
        config_from_dict(data)


def test_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(p)


def test_mode_names():
    cfg = REFERENCE.config()
    two = SystemConfig(cfg.cavity, cfg.magnon, cfg.buses * 2, cfg.g_ct, cfg.g_mt)
    assert cfg.mode_names == ("a", "m", "t1")
    assert two.mode_names == ("a", "m", "t1", "t2")
    assert two.single_bus().n_modes == 3
    assert ModeParams(1.0, 0.0) == ModeParams(1.0, 0.0)
    assert BusParams(1.0, 0.25, 0.5).gamma_t == 0.75
