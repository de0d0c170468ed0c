"""IMU-driven propagation of the nominal state and the error covariance."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ExcessiveDt, NonMonotonicTime
from .geometry import exp_so3, orthonormalize, rotation_drift, skew, ORTHO_TOL
from .state import IMU_DIM, NominalState, symmetrize

MAX_IMU_DT = 0.1


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    accel: np.ndarray  # raw specific force, m/s^2
    gyro: np.ndarray  # raw angular rate, rad/s


@dataclass(frozen=True)
class ImuNoiseParams:
    """Continuous-time IMU noise densities.

    sigma_a [m/s^2/sqrt(Hz)], sigma_g [rad/s/sqrt(Hz)] are white-noise
    densities; sigma_aw [m/s^3/sqrt(Hz)], sigma_gw [rad/s^2/sqrt(Hz)] drive
    the bias random walks.
    """

    sigma_a: float = 0.02
    sigma_g: float = 0.002
    sigma_aw: float = 3e-4
    sigma_gw: float = 3e-5

    def __post_init__(self):
        for name in ("sigma_a", "sigma_g", "sigma_aw", "sigma_gw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def continuous_covariance(self) -> np.ndarray:
        """Q_c ordered as [n_a, n_aw, n_g, n_gw]."""
        d = np.repeat([self.sigma_a, self.sigma_aw, self.sigma_g, self.sigma_gw], 3) ** 2
        return np.diag(d)


def interpolate_imu(a: ImuSample, b: ImuSample, t: float) -> ImuSample:
    """Linear interpolation of the raw readings at time ``t``."""
    span = b.timestamp - a.timestamp
    w = 0.0 if span <= 0 else (t - a.timestamp) / span
    return ImuSample(t, (1 - w) * a.accel + w * b.accel, (1 - w) * a.gyro + w * b.gyro)


def propagate_nominal(state: NominalState, imu_prev: ImuSample, imu_curr: ImuSample) -> NominalState:
    """Midpoint integration of the nominal kinematics over one IMU interval."""
    dt = imu_curr.timestamp - imu_prev.timestamp
    if not dt > 0:
        raise NonMonotonicTime(f"IMU timestamps not increasing ({imu_prev.timestamp} -> {imu_curr.timestamp})")
    if dt > MAX_IMU_DT:
        raise ExcessiveDt(f"IMU gap of {dt:.4f} s exceeds {MAX_IMU_DT} s")

    w = 0.5 * (imu_prev.gyro + imu_curr.gyro) - state.b_g
    a = 0.5 * (imu_prev.accel + imu_curr.accel) - state.b_a
    R0 = state.R_wb
    R_mid = R0 @ exp_so3(0.5 * dt * w)
    R1 = R0 @ exp_so3(dt * w)
    if rotation_drift(R1) > ORTHO_TOL:
        R1 = orthonormalize(R1)
    v1 = state.v_wb + (R_mid @ a + state.gravity_w) * dt
    p1 = state.p_wb + 0.5 * (state.v_wb + v1) * dt

    new = state.copy()
    new.p_wb, new.v_wb, new.R_wb = p1, v1, R1
    new.timestamp = imu_curr.timestamp
    return new


def error_jacobians(state: NominalState, imu: ImuSample):
    """Continuous-time error dynamics ``d(dx)/dt = F dx + G n``.

    Attitude errors are left (world-frame) perturbations, which gives

        d(dv)/d(dtheta) = -[R (a - b_a)]x     d(dv)/d(db_a) = -R
        d(dtheta)/d(db_g) = -R                d(dp)/d(dv) = I

    and no dtheta -> dtheta coupling. Extrinsic and clone rows/columns
    are zero. ``G`` maps [n_a, n_aw, n_g, n_gw] into (dv, db_a, dtheta, db_g).
    """
    n = state.layout.dim
    R = state.R_wb
    a = imu.accel - state.b_a
    F = np.zeros((n, n))
    F[0:3, 3:6] = np.eye(3)
    F[3:6, 6:9] = -skew(R @ a)
    F[3:6, 9:12] = -R
    F[6:9, 12:15] = -R

    G = np.zeros((n, 12))
    G[3:6, 0:3] = -R
    G[9:12, 3:6] = np.eye(3)
    G[6:9, 6:9] = -R
    G[12:15, 9:12] = np.eye(3)
    return F, G


def _is_imu_only(F: np.ndarray, G: np.ndarray) -> bool:
    return not (F[IMU_DIM:].any() or F[:, IMU_DIM:].any() or G[IMU_DIM:].any())


def propagate_covariance(cov: np.ndarray, F: np.ndarray, G: np.ndarray,
                         noise: ImuNoiseParams, dt: float) -> np.ndarray:
    """Discrete covariance step, second order in ``dt``.

    Phi = I + F dt + (F dt)^2 / 2 + (F dt)^3 / 6, which is the exact
    exponential for the loop-free error dynamics (F^4 = 0), and
    Q_d = G Qc G^T dt + (F G Qc G^T + G Qc G^T F^T) dt^2 / 2.
    """
    Qc = noise.continuous_covariance()
    if _is_imu_only(F, G):
        # Phi is identity outside the live IMU block
        m = IMU_DIM
        Fd = F[:m, :m] * dt
        Fd2 = Fd @ Fd
        Phi = np.eye(m) + Fd + 0.5 * Fd2 + Fd2 @ Fd / 6.0
        GQG = G[:m] @ Qc @ G[:m].T
        FGQG = Fd @ GQG
        out = cov.copy()
        out[:m, :m] = Phi @ cov[:m, :m] @ Phi.T + (GQG + 0.5 * (FGQG + FGQG.T)) * dt
        out[:m, m:] = Phi @ cov[:m, m:]
        out[m:, :m] = out[:m, m:].T
        return symmetrize(out)
    Fd = F * dt
    Fd2 = Fd @ Fd
    Phi = np.eye(F.shape[0]) + Fd + 0.5 * Fd2 + Fd2 @ Fd / 6.0
    GQG = G @ Qc @ G.T
    FGQG = Fd @ GQG
    return symmetrize(Phi @ cov @ Phi.T + (GQG + 0.5 * (FGQG + FGQG.T)) * dt)


def propagate(state: NominalState, cov: np.ndarray, imu_prev: ImuSample, imu_curr: ImuSample,
              noise: ImuNoiseParams):
    """One IMU interval. F and G are evaluated at the mid-interval attitude and
    inputs, which keeps the covariance discretization second-order."""
    dt = imu_curr.timestamp - imu_prev.timestamp
    new_state = propagate_nominal(state, imu_prev, imu_curr)
    gyro = 0.5 * (imu_prev.gyro + imu_curr.gyro)
    mid = ImuSample(imu_prev.timestamp + 0.5 * dt, 0.5 * (imu_prev.accel + imu_curr.accel), gyro)
    mid_state = NominalState(R_wb=state.R_wb @ exp_so3(0.5 * dt * (gyro - state.b_g)), b_a=state.b_a,
                             clones=state.clones)
    F, G = error_jacobians(mid_state, mid)
    return new_state, propagate_covariance(cov, F, G, noise, dt)
