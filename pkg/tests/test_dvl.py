import numpy as np
import pytest
from hypothesis import given, strategies as st_

from avio.dvl import (BeamGeometry, DvlMeasurement, beam_directions, beams_to_velocity, doppler_to_radial,
                      dvl_residual_and_jacobian, dvl_update, predict_dvl_velocity, radial_to_doppler,
                      synthesize_measurement, weighted_ls)
from avio.errors import CoplanarBeams, ImplausibleVelocity, InsufficientBeams
from avio.geometry import Transform
from avio.state import NominalState, inject_error

from conftest import boxminus, random_rotation, random_spd, random_state

GEOM = BeamGeometry()


def test_doppler_zero_shift():
    assert doppler_to_radial(0.0, 600e3, 1500.0) == 0.0


def test_doppler_plug_in_value():
    assert doppler_to_radial(-400.0, 600e3, 1500.0) == pytest.approx(0.5, abs=1e-15)


def test_doppler_roundtrip(rng):
    v = rng.uniform(-3, 3, 1000)
    for f_t, c_s in [(600e3, 1500.0), (1.2e6, 1480.0), (300e3, 1540.0)]:
        np.testing.assert_allclose(doppler_to_radial(radial_to_doppler(v, f_t, c_s), f_t, c_s), v,
                                   rtol=0, atol=1e-12)


def test_doppler_implausible_speed():
    with pytest.raises(ImplausibleVelocity):
        doppler_to_radial(radial_to_doppler(12.0, 600e3, 1500.0), 600e3, 1500.0)


def test_vertical_beams_are_coplanar():
    with pytest.raises(CoplanarBeams):
        beam_directions(np.pi / 2, np.deg2rad([45, 135, 225, 315]))


def test_janus_normal_matrix_is_diagonal():
    a = np.deg2rad(60.0)
    E = beam_directions(a, np.deg2rad([45, 135, 225, 315]))
    N = E.T @ E
    np.testing.assert_allclose(N, np.diag([2 * np.cos(a) ** 2, 2 * np.cos(a) ** 2, 4 * np.sin(a) ** 2]),
                               atol=1e-15)
    np.testing.assert_allclose(GEOM.A @ GEOM.E, np.eye(3), atol=1e-10)


@given(st_.floats(0.1, 1.4), st_.lists(st_.floats(0, 2 * np.pi), min_size=4, max_size=4))
def test_beam_rows_unit_norm(alpha, betas):
    E = np.column_stack([np.cos(betas) * np.cos(alpha), np.sin(betas) * np.cos(alpha),
                         np.full(4, np.sin(alpha))])
    np.testing.assert_allclose(np.linalg.norm(E, axis=1), 1.0, atol=1e-12)
    try:
        E2 = beam_directions(alpha, betas)
    except CoplanarBeams:
        return
    np.testing.assert_allclose(np.linalg.norm(E2, axis=1), 1.0, atol=1e-12)


def test_noiseless_vertical_velocity():
    w = 0.37
    m = synthesize_measurement([0, 0, w], GEOM)
    np.testing.assert_allclose(m.radial_velocities(), np.sin(GEOM.alpha) * w, atol=1e-15)
    v, _, _ = beams_to_velocity(m, GEOM)
    np.testing.assert_allclose(v, [0, 0, w], atol=1e-12)
    assert np.allclose(m.doppler, m.doppler[0])
    assert m.doppler[0] < 0  # closing on the seabed gives a positive radial speed, negative shift


def test_noiseless_random_velocity_recovered(rng):
    for _ in range(100):
        v = rng.uniform(-2, 2, 3)
        got, _, n = beams_to_velocity(synthesize_measurement(v, GEOM), GEOM)
        assert n == 4
        np.testing.assert_allclose(got, v, atol=1e-12)


def test_dropping_one_beam_keeps_noiseless_solution(rng):
    for _ in range(50):
        v = rng.uniform(-2, 2, 3)
        m = synthesize_measurement(v, GEOM)
        full, _, _ = beams_to_velocity(m, GEOM)
        m.valid[rng.integers(4)] = False
        part, _, n = beams_to_velocity(m, GEOM)
        assert n == 3
        assert np.abs(full - part).max() < 1e-10


def test_two_beams_insufficient():
    m = synthesize_measurement([0.1, 0.2, 0.3], GEOM)
    m.valid[:2] = False
    with pytest.raises(InsufficientBeams):
        beams_to_velocity(m, GEOM)


def test_implausible_beam_dropped():
    m = synthesize_measurement([0.1, 0.2, 0.3], GEOM)
    m.doppler[2] = radial_to_doppler(50.0, m.f_t, m.c_s)
    _, _, n = beams_to_velocity(m, GEOM)
    assert n == 3


def test_weighted_ls_reduces_to_closed_form():
    sigma = 0.03
    E = GEOM.E
    closed = sigma**2 * np.linalg.inv(E.T @ E)
    v, Sigma = weighted_ls(E, E @ [0.1, 0.2, 0.3], np.full(4, sigma))
    assert np.linalg.norm(Sigma - closed) <= 1e-12 * np.linalg.norm(closed)
    np.testing.assert_allclose(v, [0.1, 0.2, 0.3], atol=1e-12)
    _, S2, _ = beams_to_velocity(synthesize_measurement([0.1, 0.2, 0.3], GEOM, sigma=sigma), GEOM)
    assert np.linalg.norm(S2 - closed) <= 1e-12 * np.linalg.norm(closed)


def test_weighted_ls_downweights_noisy_beam():
    m = synthesize_measurement([0.1, 0.2, 0.3], GEOM)
    m.sigma = np.array([0.02, 0.02, 0.02, 0.5])
    _, S, _ = beams_to_velocity(m, GEOM)
    m.valid[3] = False
    _, S3, _ = beams_to_velocity(m, GEOM)
    assert np.all(np.linalg.eigvalsh(S3 - S) >= -1e-15)


def test_covariance_monte_carlo():
    rng = np.random.default_rng(2024)
    sigma, v = 0.02, np.array([0.4, -0.1, 0.2])
    n = 100_000
    v_r = GEOM.E @ v + sigma * rng.normal(size=(n, 4))
    sols = v_r @ GEOM.A.T
    sample = np.cov(sols.T)
    _, Sigma, _ = beams_to_velocity(synthesize_measurement(v, GEOM, sigma=sigma), GEOM)
    diag = np.sqrt(np.outer(np.diag(Sigma), np.diag(Sigma)))
    # off-diagonals vanish for the symmetric layout; compare them on the correlation scale
    assert np.all(np.abs(sample - Sigma) <= 0.05 * np.maximum(np.abs(Sigma), diag))


def test_prediction_zero_motion(rng):
    st = random_state(rng)
    st.v_wb = np.zeros(3)
    np.testing.assert_allclose(predict_dvl_velocity(st, st.b_g), 0.0, atol=1e-15)


def test_prediction_frame_change_only(rng):
    st = random_state(rng)
    st.T_bD = Transform()
    np.testing.assert_allclose(predict_dvl_velocity(st, rng.normal(size=3)), st.R_wb.T @ st.v_wb, atol=1e-15)


def test_prediction_with_lever_arm():
    st = NominalState(v_wb=np.zeros(3), T_bD=Transform(np.eye(3), [1.0, 0.0, 0.0]))
    # yaw rate 0.5 rad/s about z moves a point 1 m ahead along +y
    np.testing.assert_allclose(predict_dvl_velocity(st, [0, 0, 0.5]), [0, 0.5, 0], atol=1e-15)


def test_dvl_jacobian_matches_finite_differences(rng):
    eps = 1e-6
    for _ in range(100):
        st = random_state(rng, 1)
        gyro = rng.normal(size=3)
        m = synthesize_measurement(rng.uniform(-1, 1, 3), GEOM)
        _, H, _, _ = dvl_residual_and_jacobian(st, m, GEOM, gyro)
        num = np.zeros_like(H)
        for c in range(st.layout.dim):
            d = np.zeros(st.layout.dim)
            d[c] = eps
            num[:, c] = (predict_dvl_velocity(inject_error(st, d), gyro)
                         - predict_dvl_velocity(inject_error(st, -d), gyro)) / (2 * eps)
        assert np.linalg.norm(num - H) < 1e-5 * np.linalg.norm(H)


def test_velocity_error_shifts_residual_by_minus_eps():
    st = NominalState(v_wb=[0.3, 0.0, 0.1])
    m = synthesize_measurement(predict_dvl_velocity(st, np.zeros(3)), GEOM)
    r0, _, _, _ = dvl_residual_and_jacobian(st, m, GEOM, np.zeros(3))
    d = np.zeros(st.layout.dim)
    d[3:6] = [1e-3, -2e-3, 5e-4]
    r1, _, _, _ = dvl_residual_and_jacobian(inject_error(st, d), m, GEOM, np.zeros(3))
    np.testing.assert_allclose(r1 - r0, -d[3:6], atol=1e-15)


def test_perfect_measurement_leaves_state(rng):
    st = random_state(rng, 2)
    gyro = rng.normal(size=3)
    m = synthesize_measurement(predict_dvl_velocity(st, gyro), GEOM)
    P = random_spd(rng, st.layout.dim, 1e-3)
    new, _, rep = dvl_update(st, P, m, GEOM, gyro)
    assert rep.passed
    assert np.abs(boxminus(new, st)).max() < 1e-12


def test_gross_outlier_ping_gated(rng):
    st = random_state(rng)
    gyro = rng.normal(size=3)
    P = np.eye(st.layout.dim) * 1e-4
    m = synthesize_measurement(predict_dvl_velocity(st, gyro) + [1.0, 0, 0], GEOM)
    new, P2, rep = dvl_update(st, P, m, GEOM, gyro)
    assert not rep.passed and rep.mahalanobis > 7.815
    assert np.abs(boxminus(new, st)).max() == 0.0
    np.testing.assert_array_equal(P2, P)


def test_update_reduces_velocity_error(rng):
    improved, trials = 0, 200
    for _ in range(trials):
        truth = random_state(rng)
        truth.T_bD = Transform(random_rotation(rng, 0.2), 0.1 * rng.normal(size=3))
        gyro = truth.b_g + 0.3 * rng.normal(size=3)
        m = synthesize_measurement(predict_dvl_velocity(truth, gyro), GEOM, sigma=1e-3)
        P = np.diag(np.r_[np.full(3, 1e-2), np.full(3, 0.01), np.full(3, 1e-4), np.full(3, 1e-4),
                          np.full(3, 1e-6), np.zeros(6), np.full(3, 1e-4), np.full(3, 1e-4)])
        d = rng.multivariate_normal(np.zeros(27), P)
        est = inject_error(truth, d)
        new, _, _ = dvl_update(est, P, m, GEOM, gyro, gate=None)
        improved += np.linalg.norm(new.v_wb - truth.v_wb) < np.linalg.norm(est.v_wb - truth.v_wb)
    assert improved >= 0.95 * trials


def test_frozen_extrinsics_have_zero_columns(rng):
    st = random_state(rng)
    m = synthesize_measurement([0.1, 0.2, 0.3], GEOM)
    _, H, _, _ = dvl_residual_and_jacobian(st, m, GEOM, np.ones(3), estimate_extrinsics=False)
    assert not H[:, 21:27].any()


def test_measurement_validation():
    with pytest.raises(ValueError):
        DvlMeasurement(0.0, np.zeros(4), c_s=1000.0)
