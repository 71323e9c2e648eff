import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncs.association import freq_to_meas
from ncs.crlb import (
    SingularGeometryError, UnestimableDimensionError, crlb_mm, crlb_report_csv, crlb_state, fim_psi, jacobian,
    joint_crlb_mm, mm_unit_scaling, state_fim, verify_prop1,
)
from oracles import finite_difference_jacobian
from ncs.scenario import C0, FD, HD, BaseStation, RadioConfig, Scenario, Target, reference_scenario

D4 = (4, 4, 4, 4)


def test_fim_psi_entries():
    fim = fim_psi(1.0, 2.0, D4)
    assert fim[0, 0] == pytest.approx(256)
    assert fim[1, 1] == pytest.approx(256)
    np.testing.assert_array_equal(fim, fim.T)


def test_fim_psi_matches_numeric_information():
    # 2/sigma2 Re(D^H D) with D the derivative of A e^{j phi} a(f)
    amp, phi, f, dims, s2 = 0.7, 0.3, (0.1, 0.2, -0.1, 0.3), (3, 4, 2, 5), 0.5
    grids = np.meshgrid(*[np.arange(n) for n in dims], indexing="ij")
    a = np.exp(1j * phi) * np.exp(2j * np.pi * sum(fi * g for fi, g in zip(f, grids))).reshape(-1)
    cols = [a, 1j * amp * a] + [2j * np.pi * amp * g.reshape(-1) * a for g in grids]
    d = np.stack(cols, axis=1)
    np.testing.assert_allclose(fim_psi(amp, s2, dims), 2 / s2 * np.real(d.conj().T @ d), rtol=1e-12, atol=1e-9)


def test_crlb_mm_example():
    np.testing.assert_allclose(crlb_mm(1.0, 2.0, D4), 6 / (2 * math.pi**2 * 256 * 15), rtol=1e-14)
    assert crlb_mm(1.0, 2.0, D4)[0] == pytest.approx(7.916e-5, rel=1e-3)


def test_crlb_mm_errors_and_scaling():
    with pytest.raises(UnestimableDimensionError):
        crlb_mm(1.0, 1.0, (1, 4, 4, 4))
    np.testing.assert_allclose(crlb_mm(2.0, 1.0, (8, 4, 2, 3)), crlb_mm(1.0, 1.0, (8, 4, 2, 3)) / 4)


@pytest.mark.parametrize("dims", [D4, (2, 2, 2, 2)])
def test_prop1_small(dims):
    chk = verify_prop1(1.0, 2.0, dims)
    assert chk.rel_deviation <= 1e-9
    assert chk.max_offdiag <= 1e-9


def test_prop1_desk_scale():
    chk = verify_prop1(3e-9, 4.755e-16, (256, 16, 4, 4))
    assert chk.rel_deviation <= 1e-6


def test_joint_bound_equals_single_for_one_component():
    dims, s2 = (8, 4, 3, 3), 0.1
    joint = joint_crlb_mm([0.5 * np.exp(0.4j)], [(0.1, 0.2, 0.3, -0.2)], s2, dims)
    np.testing.assert_allclose(joint[0], crlb_mm(0.5, s2, dims), rtol=1e-9)


def test_joint_bound_never_below_single():
    dims, s2 = (8, 4, 3, 3), 0.1
    joint = joint_crlb_mm([1.0, 0.8j], [(0.1, 0.2, 0.3, -0.2), (0.14, 0.1, 0.25, -0.1)], s2, dims)
    assert np.all(joint[0] >= crlb_mm(1.0, s2, dims) * (1 - 1e-9))
    assert np.all(joint[1] >= crlb_mm(0.8, s2, dims) * (1 - 1e-9))


def test_unit_scaling():
    radio = RadioConfig()
    out = mm_unit_scaling(np.ones(4), radio)
    assert math.sqrt(out[0]) == pytest.approx(C0 / 30e3, rel=1e-12)
    assert math.sqrt(out[0]) == pytest.approx(9993.1, abs=0.05)
    np.testing.assert_array_equal(mm_unit_scaling(np.zeros(4), radio), np.zeros(4))


def test_unit_scaling_matches_perturbation():
    radio = RadioConfig()
    rng = np.random.default_rng(0)
    sd = 1e-6
    f = np.array([0.9, 0.01, 0.1, -0.2])
    r = np.array([freq_to_meas(f + sd * rng.standard_normal(4), radio) for _ in range(4000)])
    var = r.var(axis=0)
    np.testing.assert_allclose(var, mm_unit_scaling(np.full(4, sd**2), radio), rtol=0.1)


def test_jacobian_matches_finite_differences(fd_scenario):
    for k in range(3):
        jac = jacobian(fd_scenario, k)
        fd = finite_difference_jacobian(fd_scenario, k)
        scale = np.abs(jac).max(axis=0)
        assert np.max(np.abs(jac - fd) / scale) < 1e-6


def test_jacobian_structure(fd_scenario):
    n = fd_scenario.num_pairs
    jac = jacobian(fd_scenario, 0)
    assert jac.shape == (4 * n, 6)
    np.testing.assert_array_equal(jac[:n, 3:], 0)
    np.testing.assert_array_equal(jac[2 * n:, 3:], 0)


def test_jacobian_doppler_block_stationary():
    radio = RadioConfig()
    tx = BaseStation(0, [0, 0, 10], [1, 0, 0])
    rx = BaseStation(1, [100, 0, 10], [-1, 0, 0])
    t = np.array([50.0, 80.0, 30.0])
    sc = Scenario(FD, (tx, rx), (Target(t, [0, 0, 0]),), radio, 1)
    jac = jacobian(sc, 0)
    l = sc.pair_index(0, 1)
    n = sc.num_pairs

    # zero velocity: the position derivative of the range rate vanishes
    np.testing.assert_allclose(jac[n + l, :3], 0, atol=1e-18)
    # velocity part of the Doppler row is the sum of unit vectors times fc T / c0
    u = (t - tx.position) / np.linalg.norm(t - tx.position) + (t - rx.position) / np.linalg.norm(t - rx.position)
    np.testing.assert_allclose(jac[n + l, 3:], radio.doppler_scale * u, rtol=1e-12)


def test_jacobian_doppler_block_moving_by_hand():
    radio = RadioConfig()
    tx = BaseStation(0, [0, 0, 10], [1, 0, 0])
    t, v = np.array([50.0, 80.0, 30.0]), np.array([3.0, -1.0, 0.5])
    sc = Scenario(FD, (tx,), (Target(t, v),), radio, 1)
    d = t - tx.position
    r = np.linalg.norm(d)
    rho = d / r
    xi = (v - rho * (rho @ v)) / r
    np.testing.assert_allclose(jacobian(sc, 0)[1, :3], radio.doppler_scale * 2 * xi, rtol=1e-12)


def test_state_crlb_reference_fd_z_largest(fd_scenario):
    for k in range(3):
        cov = crlb_state(fd_scenario, k).covariance
        np.testing.assert_allclose(cov, cov.T)
        assert np.all(np.linalg.eigvalsh(cov) > 0)
        pos = np.diag(cov)[:3]
        assert pos[2] > pos[0] and pos[2] > pos[1]


def test_adding_station_never_hurts(fd_scenario):
    extra = BaseStation(4, [400.0, 100.0, 30.0], [-1.0, 0.5, -0.1])
    bigger = Scenario(FD, (*fd_scenario.stations, extra), fd_scenario.targets, fd_scenario.radio, fd_scenario.num_tx)
    for k in range(3):
        before = np.diag(crlb_state(fd_scenario, k).covariance)
        after = np.diag(crlb_state(bigger, k).covariance)
        assert np.all(after <= before * (1 + 1e-9))


def _single_tx(duplex, n_bs):
    sc = reference_scenario(duplex)
    stations = [BaseStation(0, [0, 0, 80], [0.7, 0.7, -0.1]), BaseStation(1, [500, 0, 20], [-0.7, 0.7, -0.1]),
                BaseStation(2, [500, 500, 80], [-0.7, -0.7, -0.1]), BaseStation(3, [0, 500, 20], [0.7, -0.7, -0.1]),
                BaseStation(4, [250, 0, 50], [0, 1, -0.1])]
    return Scenario(duplex, tuple(stations[:n_bs]), sc.targets, sc.radio, 1)


def test_minimum_station_counts_for_velocity():
    with pytest.raises(SingularGeometryError):
        crlb_state(_single_tx(FD, 2), 0)
    crlb_state(_single_tx(FD, 3), 0)
    with pytest.raises(SingularGeometryError):
        crlb_state(_single_tx(HD, 3), 0)
    crlb_state(_single_tx(HD, 4), 0)


def test_position_only_mode(fd_scenario):
    full = crlb_state(fd_scenario, 0)
    pos = crlb_state(fd_scenario, 0, "position_only")
    assert pos.covariance.shape == (3, 3)
    with pytest.raises(ValueError):
        pos.velocity
    assert np.all(np.diag(pos.covariance) > 0) and np.all(np.isfinite(np.diag(full.covariance)))
    assert state_fim(fd_scenario, 0, "position_only").shape == (3, 3)


def test_report_csv(fd_scenario):
    lines = crlb_report_csv(fd_scenario).splitlines()
    assert lines[0] == "target,axis,quantity,bound"
    assert len(lines) == 1 + 3 * 6


@settings(max_examples=200)
@given(st.tuples(*[st.integers(2, 64)] * 4), st.floats(-8, 2), st.floats(-16, 1))
def test_prop1_property(dims, log_amp, log_sigma2):
    chk = verify_prop1(10**log_amp, 10**log_sigma2, dims)
    assert chk.rel_deviation <= 1e-9 and chk.max_offdiag <= 1e-9
