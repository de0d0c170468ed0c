"""Synthetic ground truth and sensor streams.

World frame: z down (gravity +g). Body frame: forward-right-down. The
DVL frame's z axis nominally points at the seabed, so closing on the
bottom gives positive radial velocities.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.interpolate import CubicSpline

from .dvl import BeamGeometry, radial_to_doppler
from .geometry import Transform, rpy_to_matrix
from .propagation import ImuNoiseParams
from .state import GRAVITY
from .vision import Z_MIN, CameraModel

GRAVITY_W = np.array([0.0, 0.0, GRAVITY])
# camera optical axis along body x, image x to body y, image y to body z
R_BC_DEFAULT = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass
class TrajectoryProfile:
    kind: str = "circle"  # circle | lissajous | lawnmower | stationary
    duration: float = 60.0
    imu_rate: float = 200.0
    cam_rate: float = 10.0
    dvl_rate: float = 5.0
    radius: float = 2.0  # circle radius or lissajous half-extent, m
    omega: float = 0.2  # rad/s
    depth: float = 2.5  # m, positive down
    depth_amp: float = 0.3
    depth_freq: float = 0.05  # Hz
    roll_amp: float = 0.0  # rad
    roll_freq: float = 0.11
    pitch_amp: float = 0.0
    pitch_freq: float = 0.07
    yaw_amp: float = 0.0
    yaw_freq: float = 0.05
    speed: float = 0.4  # lawnmower, m/s
    leg_spacing: float = 1.0
    n_legs: int = 4
    static_roll: float = 0.0
    static_pitch: float = 0.0
    static_yaw: float = 0.0

    def __post_init__(self):
        if self.kind not in ("circle", "lissajous", "lawnmower", "stationary"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if min(self.imu_rate, self.cam_rate, self.dvl_rate, self.duration) <= 0:
            raise ValueError("rates and duration must be positive")


# circle with roll, pitch, yaw and heave excitation; makes the DVL
# extrinsic observable in every direction
_PRESETS = {
    "circle": {},
    "excited": dict(roll_amp=0.4, pitch_amp=0.4, yaw_amp=0.4, roll_freq=0.13, pitch_freq=0.09,
                    yaw_freq=0.07, depth_amp=0.5, depth_freq=0.08),
    "lawnmower": dict(kind="lawnmower"),
    "lissajous": dict(kind="lissajous", roll_amp=0.2, pitch_amp=0.15, yaw_amp=0.3),
    "stationary": dict(kind="stationary"),
}


def profile_preset(name: str, **overrides) -> TrajectoryProfile:
    if name not in _PRESETS:
        raise ValueError(f"unknown profile preset {name!r}; choose from {sorted(_PRESETS)}")
    return TrajectoryProfile(**{**_PRESETS[name], **overrides})


@dataclass
class Truth:
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    a_w: np.ndarray  # world acceleration
    R: np.ndarray  # (N, 3, 3) world-from-body
    omega_b: np.ndarray  # body angular rate
    f_b: np.ndarray  # specific force in body frame

    def __len__(self):
        return self.t.size


def _sin_term(amp, freq, t):
    w = 2 * np.pi * freq
    return amp * np.sin(w * t), amp * w * np.cos(w * t), -amp * w * w * np.sin(w * t)


def _euler_rates(phi, theta, dphi, dtheta, dpsi):
    cph, sph = np.cos(phi), np.sin(phi)
    cth, sth = np.cos(theta), np.sin(theta)
    return np.column_stack([dphi - dpsi * sth,
                            dtheta * cph + dpsi * cth * sph,
                            dpsi * cth * cph - dtheta * sph])


class _Lawnmower:
    """Periodic cubic spline through a closed raster pattern."""

    def __init__(self, prof: TrajectoryProfile):
        half = prof.radius
        xs = np.linspace(-half, half, 2)
        pts = []
        for k in range(prof.n_legs):
            y = -0.5 * prof.leg_spacing * (prof.n_legs - 1) + k * prof.leg_spacing
            pts += [(xs[k % 2], y), (xs[(k + 1) % 2], y)]
        # return along the far edge to close the loop
        pts.append((pts[-1][0] + (0.5 if pts[-1][0] > 0 else -0.5), 0.0))
        pts.append(pts[0])
        pts = np.array(pts, dtype=float)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        knots = np.r_[0.0, np.cumsum(seg)] / prof.speed
        self.period = knots[-1]
        self.spline = CubicSpline(knots, pts, bc_type="periodic")

    def __call__(self, t):
        tt = np.mod(t, self.period)
        return self.spline(tt), self.spline(tt, 1), self.spline(tt, 2)


def kinematics(prof: TrajectoryProfile, t) -> Truth:
    """Closed-form (or spline) truth at arbitrary times."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    n = t.size
    zero = np.zeros(n)
    p, v, a = np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 3))
    phi, dphi, _ = _sin_term(prof.roll_amp, prof.roll_freq, t)
    theta, dtheta, _ = _sin_term(prof.pitch_amp, prof.pitch_freq, t)
    psi_w, dpsi_w, _ = _sin_term(prof.yaw_amp, prof.yaw_freq, t)
    z, dz, ddz = _sin_term(prof.depth_amp, prof.depth_freq, t)
    p[:, 2], v[:, 2], a[:, 2] = prof.depth + z, dz, ddz

    if prof.kind == "circle":
        w, r = prof.omega, prof.radius
        c, s = np.cos(w * t), np.sin(w * t)
        p[:, 0], p[:, 1] = r * c, r * s
        v[:, 0], v[:, 1] = -r * w * s, r * w * c
        a[:, 0], a[:, 1] = -r * w * w * c, -r * w * w * s
        psi, dpsi = w * t + np.pi / 2 + psi_w, w + dpsi_w
    elif prof.kind == "lissajous":
        w, r = prof.omega, prof.radius
        p[:, 0], v[:, 0], a[:, 0] = r * np.sin(w * t), r * w * np.cos(w * t), -r * w * w * np.sin(w * t)
        p[:, 1] = 0.5 * r * np.sin(2 * w * t)
        v[:, 1] = r * w * np.cos(2 * w * t)
        a[:, 1] = -2 * r * w * w * np.sin(2 * w * t)
        psi, dpsi = w * t + psi_w, w + dpsi_w
    elif prof.kind == "lawnmower":
        pos, vel, acc = _Lawnmower(prof)(t)
        p[:, :2], v[:, :2], a[:, :2] = pos, vel, acc
        psi = np.arctan2(vel[:, 1], vel[:, 0]) + psi_w
        dpsi = (vel[:, 0] * acc[:, 1] - vel[:, 1] * acc[:, 0]) / np.maximum(
            vel[:, 0] ** 2 + vel[:, 1] ** 2, 1e-12) + dpsi_w
    else:
        p[:] = [0.0, 0.0, prof.depth]
        v[:], a[:] = 0.0, 0.0
        phi = phi + prof.static_roll
        theta = theta + prof.static_pitch
        psi, dpsi = prof.static_yaw + psi_w, dpsi_w
    psi = np.broadcast_to(psi, (n,))
    dpsi = np.broadcast_to(dpsi, (n,)) + zero

    R = np.stack([rpy_to_matrix(a_, b_, c_) for a_, b_, c_ in zip(phi, theta, psi)])
    omega = _euler_rates(phi, theta, dphi, dtheta, dpsi)
    f_b = np.einsum("nji,nj->ni", R, a - GRAVITY_W)
    return Truth(t, p, v, a, R, omega, f_b)


def gen_truth(prof: TrajectoryProfile) -> Truth:
    """Truth sampled on the IMU clock."""
    n = int(round(prof.duration * prof.imu_rate)) + 1
    return kinematics(prof, np.arange(n) / prof.imu_rate)


# ---------------------------------------------------------------------------
# world and noise

def default_T_bD() -> Transform:
    """True IMU-from-DVL transform, ~10.3 deg and ~0.19 m from identity."""
    return Transform(rpy_to_matrix(np.deg2rad(6.0), np.deg2rad(-5.0), np.deg2rad(6.5)), [-0.15, 0.05, 0.1])


@dataclass
class WorldModel:
    landmarks: np.ndarray
    camera: CameraModel = field(default_factory=CameraModel)
    T_bc: Transform = field(default_factory=lambda: Transform(R_BC_DEFAULT, [0.1, 0.0, 0.05]))
    T_bD: Transform = field(default_factory=default_T_bD)
    geometry: BeamGeometry = field(default_factory=BeamGeometry)
    c_s: float = 1500.0
    f_t: float = 600e3


def wall_landmarks(rng, count=500, size=(10.0, 10.0, 5.0)) -> np.ndarray:
    """Points spread uniformly over the four side walls of a box centred on
    the origin in x/y and spanning depth 0..size[2]."""
    sx, sy, sz = size
    perim = 2 * (sx + sy)
    s = rng.uniform(0, perim, count)
    z = rng.uniform(0, sz, count)
    x = np.empty(count)
    y = np.empty(count)
    for lo, hi, fx, fy in [(0, sx, lambda u: u - sx / 2, lambda u: -sy / 2 + 0 * u),
                           (sx, sx + sy, lambda u: sx / 2 + 0 * u, lambda u: u - sx - sy / 2),
                           (sx + sy, 2 * sx + sy, lambda u: sx / 2 - (u - sx - sy), lambda u: sy / 2 + 0 * u),
                           (2 * sx + sy, perim, lambda u: -sx / 2 + 0 * u,
                            lambda u: sy / 2 - (u - 2 * sx - sy))]:
        m = (s >= lo) & (s < hi)
        x[m], y[m] = fx(s[m]), fy(s[m])
    return np.column_stack([x, y, z])


@dataclass
class NoiseConfig:
    imu: ImuNoiseParams | None = None  # None = noiseless IMU
    bias_a0: float = 0.0  # std of initial accel bias draw
    bias_g0: float = 0.0
    u_px: float = 0.0
    dvl_sigma: float = 0.0
    pixel_outlier_rate: float = 0.0
    dvl_dropout_rate: float = 0.0
    dvl_outlier_rate: float = 0.0
    dvl_outlier_mag: float = 1.0
    blackouts: list = field(default_factory=list)
    max_features: int = 60

    def __post_init__(self):
        for name in ("pixel_outlier_rate", "dvl_dropout_rate", "dvl_outlier_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        self.blackouts = [tuple(map(float, b)) for b in self.blackouts]


NOISE_TIERS = {
    "zero": {},
    "NS": dict(imu=ImuNoiseParams(0.01, 0.001, 1e-4, 1e-5), bias_a0=0.02, bias_g0=0.002, u_px=0.5,
               dvl_sigma=0.005),
    "NM": dict(imu=ImuNoiseParams(0.02, 0.002, 3e-4, 3e-5), bias_a0=0.05, bias_g0=0.005, u_px=1.0,
               dvl_sigma=0.02),
}


def noise_tier(name: str, **overrides) -> NoiseConfig:
    if name not in NOISE_TIERS:
        raise KeyError(f"unknown noise tier {name!r}")
    return NoiseConfig(**{**NOISE_TIERS[name], **overrides})


# ---------------------------------------------------------------------------
# sensor streams

@dataclass
class ImuStream:
    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    bias_a: np.ndarray
    bias_g: np.ndarray


def synth_imu(truth: Truth, noise: NoiseConfig, rng) -> ImuStream:
    n = len(truth)
    dt = np.diff(truth.t, prepend=truth.t[0] - (truth.t[1] - truth.t[0] if n > 1 else 1.0))
    b_a = np.tile(noise.bias_a0 * rng.normal(size=3), (n, 1))
    b_g = np.tile(noise.bias_g0 * rng.normal(size=3), (n, 1))
    accel, gyro = truth.f_b.copy(), truth.omega_b.copy()
    if noise.imu is not None:
        q = noise.imu
        sq = np.sqrt(dt)[:, None]
        walk_a = np.cumsum(q.sigma_aw * sq * rng.normal(size=(n, 3)), axis=0)
        walk_g = np.cumsum(q.sigma_gw * sq * rng.normal(size=(n, 3)), axis=0)
        b_a += walk_a - walk_a[0]
        b_g += walk_g - walk_g[0]
        accel += q.sigma_a / sq * rng.normal(size=(n, 3))
        gyro += q.sigma_g / sq * rng.normal(size=(n, 3))
    return ImuStream(truth.t.copy(), accel + b_a, gyro + b_g, b_a, b_g)


@dataclass
class DvlStream:
    t: np.ndarray
    doppler: np.ndarray  # (M, 4) Hz
    valid: np.ndarray  # (M, 4) bool
    v_D_true: np.ndarray
    outlier: np.ndarray  # (M,) bool, ground truth only


def true_dvl_velocity(truth: Truth, T_bD: Transform) -> np.ndarray:
    u = np.einsum("nji,nj->ni", truth.R, truth.v) + np.cross(truth.omega_b, T_bD.translation)
    return u @ T_bD.rotation


def synth_dvl(prof: TrajectoryProfile, world: WorldModel, noise: NoiseConfig, rng) -> DvlStream:
    m = int(np.floor(prof.duration * prof.dvl_rate + 1e-9))
    t = (np.arange(m) + 0.5) / prof.dvl_rate  # offset from the camera clock
    t = t[t <= prof.duration]
    truth = kinematics(prof, t)
    v_D = true_dvl_velocity(truth, world.T_bD)
    outlier = rng.uniform(size=t.size) < noise.dvl_outlier_rate
    d = rng.normal(size=(t.size, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    v_meas = v_D + outlier[:, None] * noise.dvl_outlier_mag * d
    radial = v_meas @ world.geometry.E.T
    doppler = radial_to_doppler(radial, world.f_t, world.c_s)
    doppler = doppler + (2 * world.f_t * noise.dvl_sigma / world.c_s) * rng.normal(size=doppler.shape)
    valid = rng.uniform(size=doppler.shape) >= noise.dvl_dropout_rate
    doppler[~valid] = 0.0
    return DvlStream(t, doppler, valid, v_D, outlier)


@dataclass
class FeatureStream:
    t: np.ndarray
    frame_id: np.ndarray
    feature_id: np.ndarray
    uv: np.ndarray
    frame_times: np.ndarray


def _in_blackout(t, blackouts):
    return any(a <= t <= b for a, b in blackouts)


def synth_features(prof: TrajectoryProfile, world: WorldModel, noise: NoiseConfig, rng) -> FeatureStream:
    n = int(np.floor(prof.duration * prof.cam_rate + 1e-9)) + 1
    times = np.arange(n) / prof.cam_rate
    truth = kinematics(prof, times)
    cam = world.camera
    R_wc = truth.R @ world.T_bc.rotation
    p_wc = truth.p + truth.R @ world.T_bc.translation
    L = world.landmarks
    next_id = 0
    current: dict[int, int] = {}  # landmark -> feature id
    rows_t, rows_f, rows_id, rows_uv = [], [], [], []
    for k, tk in enumerate(times):
        if _in_blackout(tk, noise.blackouts):
            current = {}
            continue
        pc = (L - p_wc[k]) @ R_wc[k]
        ok = pc[:, 2] > Z_MIN
        uv = np.full((L.shape[0], 2), -1.0)
        uv[ok] = np.column_stack([cam.fx * pc[ok, 0] / pc[ok, 2] + cam.cx, cam.fy * pc[ok, 1] / pc[ok, 2] + cam.cy])
        vis = ok & cam.in_image(uv)
        visible = set(np.flatnonzero(vis).tolist())
        keep = {j: f for j, f in current.items() if j in visible}
        if len(keep) > noise.max_features:
            keep = dict(sorted(keep.items(), key=lambda kv: kv[1])[:noise.max_features])
        fresh = sorted(visible - keep.keys())
        rng.shuffle(fresh)
        for j in fresh[:max(0, noise.max_features - len(keep))]:
            keep[j] = next_id
            next_id += 1
        current = keep
        if not keep:
            continue
        js = np.array(sorted(keep, key=keep.get))
        px = uv[js] + noise.u_px * rng.normal(size=(js.size, 2))
        bad = rng.uniform(size=js.size) < noise.pixel_outlier_rate
        px[bad] = rng.uniform([0, 0], [cam.width, cam.height], size=(int(bad.sum()), 2))
        px[:, 0] = np.clip(px[:, 0], 0.0, cam.width - 1e-6)
        px[:, 1] = np.clip(px[:, 1], 0.0, cam.height - 1e-6)
        rows_t.append(np.full(js.size, tk))
        rows_f.append(np.full(js.size, k))
        rows_id.append(np.array([keep[j] for j in js]))
        rows_uv.append(px)
    if rows_t:
        return FeatureStream(np.concatenate(rows_t), np.concatenate(rows_f), np.concatenate(rows_id),
                             np.concatenate(rows_uv), times)
    return FeatureStream(np.zeros(0), np.zeros(0, int), np.zeros(0, int), np.zeros((0, 2)), times)


@dataclass
class Dataset:
    imu: ImuStream
    dvl: DvlStream
    features: FeatureStream
    truth: Truth
    world: WorldModel
    meta: dict = field(default_factory=dict)

    def calibration(self):
        from .fusion import Calibration
        w = self.world
        return Calibration(w.camera, w.T_bc.copy(), w.T_bD.copy(), w.c_s, w.f_t)

    def sensor_data(self):
        """Filter input streams (no ground truth)."""
        from .fusion import SensorData
        f = self.features
        return SensorData(self.imu.t, self.imu.accel, self.imu.gyro, self.dvl.t, self.dvl.doppler, self.dvl.valid,
                          f.t, f.frame_id, f.feature_id, f.uv, self.calibration())

    def truth_init(self):
        """Ground-truth state at the first IMU sample, biases included."""
        from .fusion import TruthInit
        tr = self.truth
        return TruthInit(tr.p[0].copy(), tr.v[0].copy(), tr.R[0].copy(), self.imu.bias_a[0].copy(),
                         self.imu.bias_g[0].copy())


def simulate(prof: TrajectoryProfile, noise: NoiseConfig, seed: int = 0, n_landmarks: int = 500,
             world: WorldModel | None = None) -> Dataset:
    """Generate every stream from one seed; each sensor has its own child stream."""
    ss = np.random.SeedSequence(seed)
    r_world, r_imu, r_dvl, r_cam = (np.random.default_rng(s) for s in ss.spawn(4))
    if world is None:
        world = WorldModel(wall_landmarks(r_world, n_landmarks))
    truth = gen_truth(prof)
    meta = {"seed": seed, "profile": asdict(prof)}
    return Dataset(synth_imu(truth, noise, r_imu), synth_dvl(prof, world, noise, r_dvl),
                   synth_features(prof, world, noise, r_cam), truth, world, meta)
