import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncs.association import freq_to_meas
from ncs.config import dumps_scenario, load_scenario, loads_scenario
from ncs.scenario import (
    C0, FD, HD, REFERENCE_STATIONS, AmbiguityError, BaseStation, CoincidentPointError, DegenerateBoresightError,
    RadioConfig, Scenario, ScenarioError, Target, amplitude_and_noise, derive_panel_basis, geometry,
    initial_phase, reference_scenario, ring_stations, true_frequencies, true_measurements,
)

unit_floats = st.floats(-1, 1, allow_nan=False)


def test_panel_basis_station_4():
    x, y = derive_panel_basis([0.0, -0.9945, -0.1045])
    np.testing.assert_allclose(x, [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(y, [0, -0.1045, 0.9945], atol=2e-4)


def test_panel_basis_axis_aligned():
    x, y = derive_panel_basis([0, 1, 0])
    np.testing.assert_allclose(x, [-1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(y, [0, 0, 1], atol=1e-15)


def test_panel_basis_vertical_rejected():
    with pytest.raises(DegenerateBoresightError):
        derive_panel_basis([0, 0, 1])


@settings(max_examples=300)
@given(st.tuples(unit_floats, unit_floats, unit_floats))
def test_panel_basis_orthonormal(z):
    z = np.array(z)
    if np.linalg.norm(z) < 1e-3 or math.hypot(z[0], z[1]) < 1e-6 * np.linalg.norm(z):
        return
    x, y = derive_panel_basis(z)
    zn = z / np.linalg.norm(z)
    basis = np.array([x, y, zn])
    np.testing.assert_allclose(basis @ basis.T, np.eye(3), atol=1e-12)
    assert x[2] == 0.0


def test_reference_stations_give_orthonormal_bases():
    for pos, z in REFERENCE_STATIONS:
        bs = BaseStation(0, pos, z)
        basis = np.array([bs.panel_x, bs.panel_y, bs.boresight])
        np.testing.assert_allclose(basis @ basis.T, np.eye(3), atol=1e-12)


def test_geometry_distance_example(fd_scenario):
    g = geometry(fd_scenario, 0, 1)
    assert g.distance == pytest.approx(math.sqrt(125400), rel=1e-14)
    assert g.distance == pytest.approx(354.12, abs=5e-3)


def test_geometry_stationary_and_collinear():
    radio = RadioConfig()
    bs = BaseStation(0, [0, 0, 0], [0, -1, 0])  # panel x = (1, 0, 0)
    sc = Scenario(FD, (bs,), (Target([10, 0, 0], [0, 0, 0]),), radio, 1)
    g = geometry(sc, 0, 0)
    assert g.range_rate == 0.0
    assert g.cos_alpha == pytest.approx(1.0, abs=1e-15)


def test_geometry_matches_spherical_angles(fd_scenario):
    # the two 2D AoA models agree when angles are computed in the panel frame
    for j in range(fd_scenario.n_bs):
        st_ = fd_scenario.stations[j]
        for k in range(3):
            g = geometry(fd_scenario, j, k)
            local = np.array([st_.panel_x @ g.direction, st_.panel_y @ g.direction, st_.boresight @ g.direction])
            theta = math.acos(local[1])
            phi = math.atan2(local[2], local[0])
            assert g.cos_alpha == pytest.approx(math.sin(theta) * math.cos(phi), abs=1e-12)
            assert g.cos_beta == pytest.approx(math.cos(theta), abs=1e-12)


def test_coincident_target_rejected():
    bs = BaseStation(0, [1, 2, 3], [1, 0, 0])
    with pytest.raises(CoincidentPointError):
        Scenario(FD, (bs,), (Target([1, 2, 3], [0, 0, 0]),), RadioConfig(), 1)


def test_true_frequencies_stationary():
    sc = reference_scenario(FD)
    sc = sc.with_targets([Target(t.position, [0, 0, 0]) for t in sc.targets])
    assert true_frequencies(sc, 0, 1, 2)[1] == 0.0


def test_true_frequencies_range_ambiguity():
    radio = RadioConfig()
    far = radio.max_range / 2
    sc = Scenario(FD, (BaseStation(0, [0, 0, 0], [1, 0, 0]),), (Target([far, 0, 0], [0, 0, 0]),), radio, 1)
    with pytest.raises(AmbiguityError):
        true_frequencies(sc, 0, 0, 0)


def test_true_frequencies_doppler_strict_and_wrap():
    radio = RadioConfig(pulse_interval=1e-2)  # 10x slower slow time, Doppler wraps at ~3 m/s
    sc = Scenario(FD, (BaseStation(0, [0, 0, 0], [1, 0, 0]),), (Target([100, 0, 0], [5, 0, 0]),), radio, 1)
    with pytest.raises(AmbiguityError):
        true_frequencies(sc, 0, 0, 0)
    f = true_frequencies(sc, 0, 0, 0, doppler="wrap")
    assert -0.5 <= f[1] < 0.5


def test_round_trip_with_freq_to_meas(fd_scenario):
    for i, j in fd_scenario.pairs():
        for k in range(3):
            f = true_frequencies(fd_scenario, i, j, k)
            assert 0 < f[0] < 1 and -0.5 <= f[1] < 0.5
            meas = freq_to_meas(f, fd_scenario.radio)
            truth = true_measurements(fd_scenario, i, j, k)
            np.testing.assert_allclose(meas, truth, rtol=1e-12, atol=1e-12)


def test_noise_variance_reference_values():
    s2 = RadioConfig().noise_variance()
    dbm = 10 * math.log10(s2 / 1e-3)
    assert dbm == pytest.approx(-174 + 10 * math.log10(30e3) + 6, abs=1e-9)
    assert dbm == pytest.approx(-123.2, abs=0.05)


def test_amplitude_scaling():
    radio = RadioConfig()
    bs = BaseStation(0, [0, 0, 0], [1, 0, 0])
    near = Scenario(FD, (bs,), (Target([100, 0, 0], [0, 0, 0]),), radio, 1)
    far = Scenario(FD, (bs,), (Target([200, 0, 0], [0, 0, 0]),), radio, 1)
    assert amplitude_and_noise(far, 0, 0, 0)[0] == pytest.approx(amplitude_and_noise(near, 0, 0, 0)[0] / 4)
    bright = near.with_radio(RadioConfig(rcs=4.0))
    assert amplitude_and_noise(bright, 0, 0, 0)[0] == pytest.approx(2 * amplitude_and_noise(near, 0, 0, 0)[0])


def test_amplitude_reference_value(fd_scenario):
    # radar equation evaluated independently
    radio = fd_scenario.radio
    d0 = np.linalg.norm(fd_scenario.targets[0].position - fd_scenario.stations[0].position)
    p = 10 ** (35 / 10) * 1e-3 / 3276
    lam = C0 / 4.9e9
    expected = math.sqrt(p * lam**2 / ((4 * math.pi) ** 3 * d0**4))
    assert amplitude_and_noise(fd_scenario, 0, 0, 0)[0] == pytest.approx(expected, rel=1e-12)
    assert radio.dims == (3276, 64, 8, 8)


def test_initial_phase_in_range(fd_scenario):
    for i, j in fd_scenario.pairs():
        ph = initial_phase(fd_scenario, i, j, 0)
        assert -2 * math.pi < ph <= 0


def test_radio_validation():
    with pytest.raises(ScenarioError):
        RadioConfig(num_symbols=1)
    with pytest.raises(ScenarioError):
        RadioConfig(pulse_interval=1e-6)


def test_pair_index_bijection():
    for duplex, n_bs, ntx in ((FD, 4, 2), (HD, 5, 3), (FD, 6, 6), (HD, 8, 1)):
        sc = Scenario(duplex, tuple(ring_stations(n_bs)), (), RadioConfig(), ntx)
        seen = [sc.pair_index(i, j) for i in sc.tx_ids for j in sc.rx_ids]
        assert sorted(seen) == list(range(sc.num_pairs))
        assert all(sc.pair(sc.pair_index(i, j)) == (i, j) for i in sc.tx_ids for j in sc.rx_ids)
        if duplex == HD:
            assert not set(sc.tx_ids) & set(sc.rx_ids)
        else:
            assert sc.j_start == 0 and sc.rx_ids == list(range(n_bs))


def test_reference_scenario_roles(fd_scenario, hd_scenario):
    assert (fd_scenario.n_bs, fd_scenario.num_tx, fd_scenario.num_rx) == (4, 2, 4)
    assert (hd_scenario.n_bs, hd_scenario.num_tx, hd_scenario.num_rx) == (5, 3, 2)
    assert [s.role for s in hd_scenario.stations] == ["TX", "TX", "TX", "RX", "RX"]


def test_ring_stations_face_centre():
    for st_ in ring_stations(7):
        toward = np.array([250.0, 250.0]) - st_.position[:2]
        assert st_.boresight[:2] @ toward > 0


def test_shipped_scenario_files_match_reference(fd_scenario, hd_scenario):
    for name, ref in (("reference_fd.toml", fd_scenario), ("reference_hd.toml", hd_scenario)):
        sc = load_scenario(f"scenarios/{name}")
        assert sc.duplex == ref.duplex and sc.num_tx == ref.num_tx
        for a, b in zip(sc.stations, ref.stations):
            np.testing.assert_array_equal(a.position, b.position)
            np.testing.assert_allclose(a.boresight, b.boresight, atol=1e-15)
        for a, b in zip(sc.targets, ref.targets):
            np.testing.assert_array_equal(a.position, b.position)
            np.testing.assert_array_equal(a.velocity, b.velocity)
        assert sc.radio == ref.radio


def test_config_round_trip(hd_scenario):
    again = loads_scenario(dumps_scenario(hd_scenario))
    assert again.radio == hd_scenario.radio
    for a, b in zip(again.stations, hd_scenario.stations):
        np.testing.assert_allclose(a.boresight, b.boresight, atol=1e-15)


def test_config_rejects_unknown_keys():
    with pytest.raises(ScenarioError):
        loads_scenario('duplex = "FD"\nnum_tx = 1\n[radio]\ncarrier_frequency = 1e9\n'
                       '[[station]]\nposition = [0, 0, 0]\nboresight = [1, 0, 0]\n')
