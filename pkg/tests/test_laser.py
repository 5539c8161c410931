import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qkdphase.fringe import Normalization, fit_fringe, visibility_to_sigma
from qkdphase.laser import (
    REFERENCE_F_GHZ,
    REFERENCE_I_PP,
    REFERENCE_I_TH,
    ConfigError,
    DriveConfig,
    GaussianWalk,
    LaserDynamicsParams,
    UniformRandom,
    decay_photon_density,
    default_phase_points,
    derived_quantities,
    effective_photon_lifetime,
    lifetime_within_turn_off,
    load_reference_visibilities,
    net_current,
    normalized_min_excitation,
    simulate_amzi_fringe,
    simulate_phase_train,
    turn_off_duration,
)

import _oracles as orc

PI = math.pi


def reference_drive(lam):
    return DriveConfig.at_excitation(lam, REFERENCE_I_PP, REFERENCE_I_TH, REFERENCE_F_GHZ)


# --- drive ----------------------------------------------------------------------------------

def test_net_current():
    assert net_current(92.3, -1) == pytest.approx(73.3, abs=0.1)
    assert net_current(42.0, 0) == 42.0
    assert net_current(100, -3) == pytest.approx(50.1, abs=0.05)
    with pytest.raises(ValueError):
        net_current(0, -1)


def test_normalized_min_excitation():
    assert normalized_min_excitation(DriveConfig(73.3, 46.15, 9.5, 10)) == pytest.approx(0.0, abs=0.02)
    assert normalized_min_excitation(DriveConfig(73.3, 30.95, 9.5, 10)) == pytest.approx(-1.6, abs=0.02)
    # the I_DC quoted for lambda = -1 implies a 73.5 mA swing; 73.3 stays inside the tolerance
    assert normalized_min_excitation(DriveConfig(73.3, 36.75, 9.5, 10)) == pytest.approx(-1.0, abs=0.02)
    assert normalized_min_excitation(DriveConfig(73.3, 9.5 + 73.3 / 2, 9.5, 10)) == 0.0


@given(st.floats(-3, 1))
def test_at_excitation_round_trip(lam):
    assert normalized_min_excitation(reference_drive(lam)) == pytest.approx(lam, abs=1e-12)


def test_turn_off_examples():
    assert turn_off_duration(reference_drive(0.0)) == 0.0
    assert turn_off_duration(reference_drive(0.5)) == 0.0
    assert turn_off_duration(reference_drive(-0.33)) == pytest.approx(13, abs=1)
    assert turn_off_duration(reference_drive(-1.6)) == pytest.approx(30, abs=1)
    # whole swing below threshold
    assert turn_off_duration(DriveConfig(10, 1, 9.5, 10)) == 100.0


def test_turn_off_monotone_and_continuous():
    i_dc = np.linspace(-40, 60, 2001)
    d = [turn_off_duration(DriveConfig(73.3, x, 9.5, 10)) for x in i_dc]
    assert all(b <= a for a, b in zip(d, d[1:]))
    assert d[0] == 100.0 and d[-1] == 0.0
    # one-sided limits at both ends of the swing match the clamped values
    edge_on, edge_off = 9.5 - 73.3 / 2, 9.5 + 73.3 / 2
    for eps in (1e-6, 1e-9):
        assert turn_off_duration(DriveConfig(73.3, edge_on + eps, 9.5, 10)) == pytest.approx(100.0, abs=0.1)
        assert turn_off_duration(DriveConfig(73.3, edge_off - eps, 9.5, 10)) == pytest.approx(0.0, abs=0.1)


def test_drive_current_waveform():
    drive = DriveConfig(73.3, 30.0, 9.5, 10, phi_ld=0.0)
    assert drive.period_ps == 100.0
    assert drive.current(0.0) == pytest.approx(30 + 73.3 / 2)
    assert drive.current(50.0) == pytest.approx(drive.i_min)


@pytest.mark.parametrize("kw", [dict(i_pp=0), dict(i_th=-1), dict(f=0)])
def test_drive_validation(kw):
    args = dict(i_pp=73.3, i_dc=30, i_th=9.5, f=10) | kw
    with pytest.raises(ConfigError):
        DriveConfig(**args)


# --- lifetimes ------------------------------------------------------------------------------

def test_effective_lifetime():
    assert effective_photon_lifetime(-1, 3.0) == 3.0
    assert 9 <= effective_photon_lifetime(-0.33, 3.0) <= 10
    assert effective_photon_lifetime(0.0, 3.0) == math.inf
    assert effective_photon_lifetime(0.2, 3.0) == math.inf
    lams = -np.logspace(0, -4, 30)
    values = [effective_photon_lifetime(x, 3.0) for x in lams]
    assert all(b > a for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        effective_photon_lifetime(-1, 0)


def test_lifetime_guide_at_reference_drive():
    assert lifetime_within_turn_off(reference_drive(-1.6), 3.0)
    # the guide predicts failure at -0.33, but 9.1 ps < 13.3 ps with this drive
    assert effective_photon_lifetime(-0.33, 3.0) < turn_off_duration(reference_drive(-0.33))
    assert not lifetime_within_turn_off(reference_drive(-0.05), 3.0)


def test_derived_quantities():
    d = derived_quantities(reference_drive(-1.6), 3.0)
    assert d["lambda"] == pytest.approx(-1.6)
    assert d["turn_off_ps"] == pytest.approx(30, abs=1)
    assert d["tau_eff_ps"] == pytest.approx(1.875)
    assert d["lifetime_within_turn_off"] is True
    assert derived_quantities(reference_drive(0.1))["tau_eff_ps"] is None
    json.dumps(d)


# --- decay ----------------------------------------------------------------------------------

def test_decay_trivial():
    p = LaserDynamicsParams(tau_ph=3.0, n_sp=0.0)
    assert decay_photon_density(100, -1, p, 3.0) == pytest.approx(100 / math.e)
    assert decay_photon_density(100, 0, p, 50.0) == 100
    p = LaserDynamicsParams(tau_ph=3.0, n_sp=0.5)
    assert decay_photon_density(100, 0, p, 10.0) == pytest.approx(105)


def test_decay_matches_rk4():
    p = LaserDynamicsParams(tau_ph=3.0, n_sp=0.01)
    f = lambda t, s: -0.5 / 3.0 * s + 0.01
    assert decay_photon_density(100, -0.5, p, 30.0) == pytest.approx(orc.rk4(f, 100.0, 30.0, 3000), rel=1e-6)


@given(st.floats(-2, -0.01), st.floats(0, 1), st.floats(0, 200))
def test_decay_matches_rk4_property(lam, n_sp, s0):
    p = LaserDynamicsParams(tau_ph=3.0, n_sp=n_sp)
    f = lambda t, s: lam / 3.0 * s + n_sp
    exact = decay_photon_density(s0, lam, p, 20.0)
    assert exact == pytest.approx(orc.rk4(f, s0, 20.0, 2000), rel=1e-6, abs=1e-12)
    assert exact >= 0


def test_decay_vectorized_and_validated():
    out = decay_photon_density(10, -1, LaserDynamicsParams(), [0, 3, 6])
    assert out == pytest.approx([10, 10 / math.e, 10 / math.e**2])
    with pytest.raises(ValueError):
        decay_photon_density(-1, -1, LaserDynamicsParams(), 1)
    with pytest.raises(ValueError):
        LaserDynamicsParams(tau_ph=0)
    with pytest.raises(ValueError):
        LaserDynamicsParams(n_sp=-1)


# --- phase trains ---------------------------------------------------------------------------

def test_constant_train():
    train = simulate_phase_train(GaussianWalk(0.0, 0.0), 100, seed=3)
    assert np.all(train.phases == train.phases[0])
    assert np.all(train.increments() == 0)


def test_phases_wrapped_and_frozen():
    train = simulate_phase_train(GaussianWalk(2.0), 5000, seed=1)
    assert np.all(train.phases > -PI) and np.all(train.phases <= PI)
    with pytest.raises(ValueError):
        train.phases[0] = 0.0


def test_gaussian_increment_variance():
    sigma = 0.8
    train = simulate_phase_train(GaussianWalk(sigma), 100_001, seed=11)
    # sigma small enough that wrapping is negligible
    assert np.var(train.increments()) == pytest.approx(sigma**2, rel=0.02)


def test_gaussian_increment_mean_offset():
    train = simulate_phase_train(GaussianWalk(0.3, theta0=1.0), 20_001, seed=2)
    assert np.mean(train.increments()) == pytest.approx(1.0, abs=0.01)


def test_uniform_circular_mean():
    train = simulate_phase_train(UniformRandom(), 100_000, seed=5)
    assert abs(np.mean(np.exp(1j * train.phases))) < 0.01


def test_train_determinism():
    a = simulate_phase_train(GaussianWalk(1.0), 1000, seed=42)
    b = simulate_phase_train(GaussianWalk(1.0), 1000, seed=42)
    c = simulate_phase_train(GaussianWalk(1.0), 1000, seed=43)
    assert a.phases.tobytes() == b.phases.tobytes()
    assert not np.array_equal(a.phases, c.phases)


def test_train_validation():
    with pytest.raises(ValueError):
        simulate_phase_train(GaussianWalk(1.0), 1, seed=0)
    with pytest.raises(ValueError):
        GaussianWalk(-1.0)
    with pytest.raises(TypeError):
        simulate_phase_train("walk", 10, seed=0)


# --- interferometer -------------------------------------------------------------------------

def test_fringe_of_constant_phase():
    train = simulate_phase_train(GaussianWalk(0.0), 257, seed=0)
    phi = default_phase_points()
    data = simulate_amzi_fringe(train, phi, accumulations=256)
    assert data.normalization is Normalization.MEAN_HALF
    assert data.intensities == pytest.approx(0.5 * (1 + np.cos(phi)), abs=1e-12)
    assert fit_fringe(data).visibility == pytest.approx(1.0, abs=1e-9)


def test_instrument_and_amplitude_factors():
    train = simulate_phase_train(GaussianWalk(0.0), 257, seed=0)
    v = fit_fringe(simulate_amzi_fringe(train, default_phase_points(), instrument_visibility=0.95,
                                        amplitude_ratio=0.5)).visibility
    assert v == pytest.approx(0.95 * 2 * 0.5 / 1.25, abs=1e-9)


def test_fringe_at_sigma_1_12():
    sigma = visibility_to_sigma(0.534)
    vis = []
    for seed in range(20):
        train = simulate_phase_train(GaussianWalk(sigma), 41 * 256 + 1, seed=seed)
        vis.append(fit_fringe(simulate_amzi_fringe(train, default_phase_points())).visibility)
    assert np.mean(vis) == pytest.approx(0.534, abs=0.03)


def test_uniform_fringe_is_flat():
    for seed in range(10):
        train = simulate_phase_train(UniformRandom(), 41 * 256 + 1, seed=seed)
        assert fit_fringe(simulate_amzi_fringe(train, default_phase_points())).visibility < 0.07


@pytest.mark.parametrize("sigma", [0.3, 1.0, 2.5])
def test_round_trip_long_accumulation(sigma):
    acc = 10_000
    train = simulate_phase_train(GaussianWalk(sigma), 41 * acc + 1, seed=7)
    vis = fit_fringe(simulate_amzi_fringe(train, default_phase_points(), accumulations=acc)).visibility
    assert visibility_to_sigma(vis) == pytest.approx(sigma, rel=0.05)


def test_noise_is_seeded():
    train = simulate_phase_train(GaussianWalk(1.0), 41 * 256 + 1, seed=0)
    a = simulate_amzi_fringe(train, default_phase_points(), snr_db=17, seed=1)
    b = simulate_amzi_fringe(train, default_phase_points(), snr_db=17, seed=1)
    c = simulate_amzi_fringe(train, default_phase_points(), snr_db=17, seed=2)
    assert a.intensities.tobytes() == b.intensities.tobytes()
    assert not np.array_equal(a.intensities, c.intensities)
    assert a.intensities.mean() == pytest.approx(0.5)


def test_short_train_reuses_window():
    train = simulate_phase_train(GaussianWalk(1.0), 257, seed=0)
    data = simulate_amzi_fringe(train, [0.0, 0.0])
    assert data.intensities[0] == data.intensities[1]


def test_fringe_validation():
    train = simulate_phase_train(GaussianWalk(1.0), 100, seed=0)
    with pytest.raises(ValueError, match="pulses"):
        simulate_amzi_fringe(train, [0.0], accumulations=256)
    with pytest.raises(ValueError):
        simulate_amzi_fringe(train, [0.0], accumulations=10, instrument_visibility=1.5)
    with pytest.raises(ValueError):
        simulate_amzi_fringe(train, [0.0], accumulations=10, amplitude_ratio=0)
    with pytest.raises(ValueError):
        simulate_amzi_fringe(train, [0.0], accumulations=0)


# --- config ---------------------------------------------------------------------------------

def test_config_json_and_toml(tmp_path):
    cfg = {"i_pp_ma": 73.3, "i_dc_ma": 30.95, "i_th_ma": 9.5, "f_ghz": 10}
    j = tmp_path / "d.json"
    j.write_text(json.dumps(cfg))
    t = tmp_path / "d.toml"
    t.write_text("i_pp_ma = 73.3\ni_dc_ma = 30.95\ni_th_ma = 9.5\nf_ghz = 10\nphi_ld_rad = 0.5\n")
    a, b = DriveConfig.from_file(j), DriveConfig.from_file(t)
    assert a == DriveConfig(73.3, 30.95, 9.5, 10.0)
    assert b.phi_ld == 0.5
    assert DriveConfig.from_mapping(a.to_mapping()) == a


@pytest.mark.parametrize("cfg, names", [
    ({"i_pp_ma": 73.3, "i_dc_ma": 30, "i_th_ma": 9.5}, ["f_ghz"]),
    ({"i_pp_ma": 73.3, "i_dc_ma": 30, "i_th_ma": 9.5, "f_ghz": 10, "ipp": 1, "volts": 2}, ["ipp", "volts"]),
    ({"i_pp_ma": "73.3", "i_dc_ma": 30, "i_th_ma": 9.5, "f_ghz": 10}, ["i_pp_ma"]),
])
def test_config_errors_name_keys(cfg, names):
    with pytest.raises(ConfigError) as info:
        DriveConfig.from_mapping(cfg)
    for n in names:
        assert n in str(info.value)


def test_config_bad_files(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        DriveConfig.from_file(p)
    p = tmp_path / "bad.toml"
    p.write_text("= = =")
    with pytest.raises(ConfigError):
        DriveConfig.from_file(p)
    p = tmp_path / "list.json"
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        DriveConfig.from_file(p)


def test_reference_visibilities():
    rows = load_reference_visibilities()
    table = {r["lambda"]: r["visibility"] for r in rows}
    assert table[-1.2] == 0.022 and table[-1.6] == 0.004 and table[0.074] == 0.534
    lams = [r["lambda"] for r in rows]
    vis = [r["visibility"] for r in rows]
    # deeper turn-off gives lower visibility
    assert lams == sorted(lams, reverse=True)
    assert vis == sorted(vis, reverse=True)
