import numpy as np
import pytest

from avio.errors import InsufficientParallax
from avio.dvl import beams_to_velocity, doppler_to_radial, DvlMeasurement
from avio.geometry import log_so3, rotation_angle
from avio.propagation import ImuSample, propagate_nominal
from avio.sim import (GRAVITY_W, NoiseConfig, TrajectoryProfile, WorldModel, default_T_bD, gen_truth,
                      kinematics, noise_tier, simulate, synth_dvl, synth_features, synth_imu, true_dvl_velocity,
                      wall_landmarks)
from avio.state import NominalState
from avio.vision import FeatureTrack, triangulate
from avio.state import KeyframeClone


def integrate(truth, accel, gyro):
    st = NominalState(p_wb=truth.p[0], v_wb=truth.v[0], R_wb=truth.R[0])
    prev = ImuSample(truth.t[0], accel[0], gyro[0])
    for k in range(1, len(truth)):
        cur = ImuSample(truth.t[k], accel[k], gyro[k])
        st = propagate_nominal(st, prev, cur)
        prev = cur
    return st


def test_stationary_truth():
    tr = gen_truth(TrajectoryProfile("stationary", duration=2.0, static_pitch=0.1))
    assert not tr.v.any() and not tr.omega_b.any()
    np.testing.assert_allclose(tr.f_b, -np.einsum("nji,j->ni", tr.R, GRAVITY_W), atol=1e-12)


def test_circle_kinematics():
    tr = kinematics(TrajectoryProfile("circle", radius=2.0, omega=0.2, depth_amp=0.0), np.linspace(0, 30, 50))
    np.testing.assert_allclose(np.linalg.norm(tr.v, axis=1), 0.4, rtol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(tr.a_w, axis=1), 0.08, rtol=1e-12)


@pytest.mark.parametrize("kind", ["circle", "lawnmower"])
def test_self_integration_closes(kind):
    prof = TrajectoryProfile(kind, duration=60.0)
    tr = gen_truth(prof)
    st = integrate(tr, tr.f_b, tr.omega_b)
    assert np.linalg.norm(st.p_wb - tr.p[-1]) < 1e-4
    assert np.linalg.norm(log_so3(st.R_wb @ tr.R[-1].T)) < 1e-5


def test_self_integration_excited_profile_at_high_rate():
    prof = TrajectoryProfile("circle", duration=60.0, imu_rate=1000.0, roll_amp=0.2, pitch_amp=0.2)
    tr = gen_truth(prof)
    st = integrate(tr, tr.f_b, tr.omega_b)
    assert np.linalg.norm(st.p_wb - tr.p[-1]) < 1e-4
    assert np.linalg.norm(log_so3(st.R_wb @ tr.R[-1].T)) < 1e-5


def test_body_rate_matches_attitude_derivative():
    prof = TrajectoryProfile("lissajous", roll_amp=0.2, pitch_amp=0.15, yaw_amp=0.3)
    t, h = 7.3, 1e-5
    a, b, c = kinematics(prof, [t - h, t, t + h]).R
    w_num = (log_so3(b.T @ c) - log_so3(b.T @ a)) / (2 * h)
    np.testing.assert_allclose(w_num, kinematics(prof, t).omega_b[0], atol=1e-8)


def test_noiseless_imu_without_bias_is_truth():
    tr = gen_truth(TrajectoryProfile(duration=1.0))
    s = synth_imu(tr, NoiseConfig(), np.random.default_rng(0))
    np.testing.assert_array_equal(s.accel, tr.f_b)
    np.testing.assert_array_equal(s.gyro, tr.omega_b)


def test_stationary_accel_mean_statistics():
    prof = TrajectoryProfile("stationary", duration=60.0)
    tr = gen_truth(prof)
    q = noise_tier("NM").imu
    noise = NoiseConfig(imu=q)
    s = synth_imu(tr, noise, np.random.default_rng(4))
    mean = (s.accel - s.bias_a).mean(axis=0)
    std = q.sigma_a * np.sqrt(prof.imu_rate) / np.sqrt(len(tr))
    assert np.all(np.abs(mean - tr.f_b[0]) < 3 * std)


def test_streams_are_deterministic():
    prof = TrajectoryProfile(duration=5.0)
    a = simulate(prof, noise_tier("NM", pixel_outlier_rate=0.05, dvl_outlier_rate=0.1), seed=11)
    b = simulate(prof, noise_tier("NM", pixel_outlier_rate=0.05, dvl_outlier_rate=0.1), seed=11)
    for x, y in [(a.imu.accel, b.imu.accel), (a.dvl.doppler, b.dvl.doppler), (a.features.uv, b.features.uv),
                 (a.features.feature_id, b.features.feature_id)]:
        np.testing.assert_array_equal(x, y)


def test_dvl_roundtrip_noiseless():
    prof = TrajectoryProfile(duration=10.0, roll_amp=0.2, pitch_amp=0.1)
    world = WorldModel(wall_landmarks(np.random.default_rng(0), 10))
    s = synth_dvl(prof, world, NoiseConfig(), np.random.default_rng(1))
    truth = kinematics(prof, s.t)
    want = true_dvl_velocity(truth, world.T_bD)
    for k in range(s.t.size):
        v, _, _ = beams_to_velocity(DvlMeasurement(s.t[k], s.doppler[k], s.valid[k]), world.geometry)
        np.testing.assert_allclose(v, want[k], atol=1e-10)


def test_vertical_descent_equal_shifts():
    world = WorldModel(np.zeros((1, 3)))
    from avio.dvl import radial_to_doppler
    df = radial_to_doppler(world.geometry.E @ np.array([0, 0, 0.3]), world.f_t, world.c_s)
    assert np.allclose(df, df[0]) and df[0] < 0
    assert doppler_to_radial(df[0], world.f_t, world.c_s) > 0  # closing on the seabed


def test_dvl_beam_noise_statistics():
    prof = TrajectoryProfile("stationary", duration=100_000 / 5.0 - 0.1)
    world = WorldModel(np.zeros((1, 3)))
    s = synth_dvl(prof, world, NoiseConfig(dvl_sigma=0.02), np.random.default_rng(8))
    assert s.t.size >= 99_999
    v_r = doppler_to_radial(s.doppler, world.f_t, world.c_s)
    std = (v_r - s.v_D_true @ world.geometry.E.T).std(axis=0)
    np.testing.assert_allclose(std, 0.02, rtol=0.02)


def test_dvl_faults():
    prof = TrajectoryProfile(duration=200.0)
    world = WorldModel(np.zeros((1, 3)))
    s = synth_dvl(prof, world, NoiseConfig(dvl_dropout_rate=0.1, dvl_outlier_rate=0.1), np.random.default_rng(2))
    assert 0.05 < 1 - s.valid.mean() < 0.15
    assert 0.05 < s.outlier.mean() < 0.15
    v = np.array([beams_to_velocity(DvlMeasurement(0, d, np.ones(4, bool)), world.geometry)[0]
                  for d in s.doppler[s.outlier & s.valid.all(axis=1)]])
    err = np.linalg.norm(v - s.v_D_true[s.outlier & s.valid.all(axis=1)], axis=1)
    np.testing.assert_allclose(err, 1.0, atol=1e-9)


def test_blackout_has_no_features():
    prof = TrajectoryProfile(duration=30.0)
    ds = simulate(prof, NoiseConfig(blackouts=[(10.0, 20.0)]), seed=3)
    t = ds.features.t
    assert t.size > 0 and not np.any((t >= 10.0) & (t <= 20.0))


def test_features_visible_and_in_front():
    prof = TrajectoryProfile(duration=10.0)
    ds = simulate(prof, NoiseConfig(), seed=5)
    f = ds.features
    assert np.all((f.uv[:, 0] >= 0) & (f.uv[:, 0] < 640) & (f.uv[:, 1] >= 0) & (f.uv[:, 1] < 480))
    # one observation per feature per frame; ids persist across frames
    pairs = set(zip(f.frame_id.tolist(), f.feature_id.tolist()))
    assert len(pairs) == f.t.size
    counts = np.bincount(f.feature_id)
    assert counts.max() > 10


def test_landmark_behind_camera_never_observed():
    world = WorldModel(np.array([[-3.0, 0.0, 2.5], [3.0, 0.0, 2.5]]))
    prof = TrajectoryProfile("stationary", duration=1.0, depth=2.5)
    f = synth_features(prof, world, NoiseConfig(), np.random.default_rng(0))
    # body looks along +x; only the second point is in front
    assert f.t.size == prof.cam_rate * 1.0 + 1
    assert set(f.feature_id.tolist()) == {0}


def test_noiseless_features_triangulate_exactly():
    prof = TrajectoryProfile(duration=3.0)
    ds = simulate(prof, NoiseConfig(), seed=9)
    f, world = ds.features, ds.world
    truth = kinematics(prof, f.frame_times)
    st = NominalState(T_bc=world.T_bc)
    for k in (0, 10):
        st.clones.append(KeyframeClone(truth.R[k], truth.p[k], k, truth.t[k]))
    both = set(f.feature_id[f.frame_id == 0]) & set(f.feature_id[f.frame_id == 10])
    assert both
    checked = 0
    for fid in sorted(both):
        tr = FeatureTrack(fid)
        for k in (0, 10):
            m = (f.frame_id == k) & (f.feature_id == fid)
            tr.add(k, f.uv[m][0])
        try:
            lm = triangulate(world.camera, st, tr)
        except InsufficientParallax:
            continue  # points near the direction of travel
        assert np.linalg.norm(world.landmarks - lm.xi_w, axis=1).min() < 1e-8
        checked += 1
    assert checked >= 10


def test_true_extrinsic_offset_is_large():
    T = default_T_bD()
    assert np.rad2deg(rotation_angle(T.rotation)) >= 10.0
    assert np.linalg.norm(T.translation) >= 0.1


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(pixel_outlier_rate=1.5)
    with pytest.raises(ValueError):
        TrajectoryProfile("spiral")
