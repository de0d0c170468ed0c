"""Four-beam Doppler velocity log: physics, beam geometry and the EKF update."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoplanarBeams, ImplausibleVelocity, InsufficientBeams, RankDeficient
from .geometry import skew
from .state import NominalState, ekf_update

MAX_RADIAL_SPEED = 10.0
CHI2_3DOF_95 = 7.815
DEFAULT_TILT = np.deg2rad(60.0)
DEFAULT_AZIMUTHS = np.deg2rad([45.0, 135.0, 225.0, 315.0])


def doppler_to_radial(delta_f, f_t: float, c_s: float):
    """Radial velocity from the two-way Doppler shift.

    Positive values mean the vehicle closes on the seabed along the beam.
    """
    if not f_t > 0:
        raise ValueError("carrier frequency must be positive")
    v = -(c_s / (2.0 * f_t)) * np.asarray(delta_f, dtype=float)
    if np.any(np.abs(v) >= MAX_RADIAL_SPEED):
        raise ImplausibleVelocity(f"radial speed {np.max(np.abs(v)):.2f} m/s is not plausible")
    return v if v.ndim else float(v)


def radial_to_doppler(v_r, f_t: float, c_s: float):
    """Inverse of :func:`doppler_to_radial`."""
    df = -(2.0 * f_t / c_s) * np.asarray(v_r, dtype=float)
    return df if df.ndim else float(df)


def beam_directions(alpha: float, betas) -> np.ndarray:
    """Unit beam directions in the DVL frame, one row per transducer."""
    betas = np.asarray(betas, dtype=float)
    E = np.column_stack([np.cos(betas) * np.cos(alpha), np.sin(betas) * np.cos(alpha),
                         np.full(betas.shape, np.sin(alpha))])
    if np.linalg.matrix_rank(E, tol=1e-9) < 3:
        raise CoplanarBeams("beam directions do not span 3-D space")
    return E


@dataclass
class BeamGeometry:
    alpha: float = DEFAULT_TILT
    betas: np.ndarray = field(default_factory=lambda: DEFAULT_AZIMUTHS.copy())

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=float)
        self.E = beam_directions(self.alpha, self.betas)
        self.EtE_inv = np.linalg.inv(self.E.T @ self.E)
        self.A = self.EtE_inv @ self.E.T  # precomputed pseudo-inverse


@dataclass
class DvlMeasurement:
    timestamp: float
    doppler: np.ndarray  # per-beam shift, Hz
    valid: np.ndarray = field(default_factory=lambda: np.ones(4, dtype=bool))
    f_t: float = 600e3
    c_s: float = 1500.0
    sigma: np.ndarray = field(default_factory=lambda: np.full(4, 0.02))  # per-beam std, m/s
    radial: np.ndarray | None = None  # optional radial velocities instead of Doppler

    def __post_init__(self):
        self.doppler = np.asarray(self.doppler, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), self.valid.shape).copy()
        if not self.f_t > 0:
            raise ValueError("carrier frequency must be positive")
        if not 1400.0 <= self.c_s <= 1600.0:
            raise ValueError(f"sound speed {self.c_s} outside [1400, 1600] m/s")

    def radial_velocities(self) -> np.ndarray:
        if self.radial is not None:
            return np.asarray(self.radial, dtype=float)
        return -(self.c_s / (2.0 * self.f_t)) * self.doppler


def beams_to_velocity(meas: DvlMeasurement, geom: BeamGeometry):
    """Least-squares DVL-frame velocity and its covariance.

    Beams flagged invalid or reading more than 10 m/s are dropped. Equal
    per-beam variances use the precomputed solution; otherwise the
    inverse-variance weighted solution is returned.

    Returns ``(v_D, Sigma_D, n_beams)``.
    """
    v_r = meas.radial_velocities()
    use = meas.valid & np.isfinite(v_r) & (np.abs(v_r) < MAX_RADIAL_SPEED)
    n = int(use.sum())
    if n < 3:
        raise InsufficientBeams(f"only {n} usable beam(s)")
    sig = meas.sigma[use]
    if n == len(v_r) and np.all(sig == sig[0]):
        return geom.A @ v_r, sig[0] ** 2 * geom.EtE_inv, n
    v, Sigma = weighted_ls(geom.E[use], v_r[use], sig)
    return v, Sigma, n


def weighted_ls(E: np.ndarray, v_r: np.ndarray, sigma: np.ndarray):
    """Inverse-variance weighted beam solve; returns ``(v, Sigma)``."""
    W = 1.0 / np.asarray(sigma, dtype=float) ** 2
    N = E.T @ (W[:, None] * E)
    if np.linalg.matrix_rank(N) < 3:
        raise RankDeficient("usable beams do not span 3-D space")
    Sigma = np.linalg.inv(N)
    return Sigma @ (E.T @ (W * v_r)), Sigma


def predict_dvl_velocity(state: NominalState, gyro) -> np.ndarray:
    """Expected DVL-frame velocity including the lever-arm term.

    ``gyro`` is the raw angular rate at the measurement time; the filter's
    bias estimate is removed here.
    """
    omega = np.asarray(gyro, dtype=float) - state.b_g
    u = state.R_wb.T @ state.v_wb + np.cross(omega, state.T_bD.translation)
    return state.T_bD.rotation.T @ u


def dvl_residual_and_jacobian(state: NominalState, meas: DvlMeasurement, geom: BeamGeometry, gyro,
                              estimate_extrinsics: bool = True):
    """Residual ``v_meas - v_pred`` and the Jacobian of the prediction.

    Returns ``(r, H, Sigma_D, n_beams)``; ``H`` spans the full error state.
    """
    v_meas, Sigma_D, n_beams = beams_to_velocity(meas, geom)
    omega = np.asarray(gyro, dtype=float) - state.b_g
    R_bD, p_bD = state.T_bD.rotation, state.T_bD.translation
    u = state.R_wb.T @ state.v_wb + np.cross(omega, p_bD)
    RdT = R_bD.T
    H = np.zeros((3, state.layout.dim))
    H[:, 3:6] = RdT @ state.R_wb.T
    H[:, 6:9] = H[:, 3:6] @ skew(state.v_wb)
    H[:, 12:15] = RdT @ skew(p_bD)
    if estimate_extrinsics:
        H[:, 21:24] = RdT @ skew(omega)
        H[:, 24:27] = RdT @ skew(u)
    return v_meas - RdT @ u, H, Sigma_D, n_beams


@dataclass
class DvlReport:
    passed: bool = False
    mahalanobis: float = np.inf
    residual_norm: float = np.inf
    sigma_trace: float = 0.0
    n_beams: int = 0


@dataclass
class DvlUpdatePlan:
    H: np.ndarray
    r: np.ndarray
    R: np.ndarray
    report: DvlReport


def prepare_dvl_update(state: NominalState, cov: np.ndarray, meas: DvlMeasurement, geom: BeamGeometry, gyro,
                       estimate_extrinsics: bool = True, gate: float | None = CHI2_3DOF_95) -> DvlUpdatePlan:
    """Residual, Jacobian and chi-square gate decision, without touching the state."""
    r, H, Sigma_D, n_beams = dvl_residual_and_jacobian(state, meas, geom, gyro, estimate_extrinsics)
    S = H @ cov @ H.T + Sigma_D
    d2 = float(r @ np.linalg.solve(S, r))
    passed = gate is None or d2 <= gate
    rep = DvlReport(passed, d2, float(np.linalg.norm(r)), float(np.trace(Sigma_D)), n_beams)
    return DvlUpdatePlan(H, r, Sigma_D, rep)


def apply_dvl_update(state: NominalState, cov: np.ndarray, plan: DvlUpdatePlan, aware_scale: float = 1.0):
    if not plan.report.passed:
        return state, cov
    new_state, new_cov, _ = ekf_update(state, cov, plan.H, plan.r, plan.R * aware_scale)
    return new_state, new_cov


def dvl_update(state: NominalState, cov: np.ndarray, meas: DvlMeasurement, geom: BeamGeometry, gyro,
               aware_scale: float = 1.0, estimate_extrinsics: bool = True, gate: float | None = CHI2_3DOF_95):
    plan = prepare_dvl_update(state, cov, meas, geom, gyro, estimate_extrinsics, gate)
    new_state, new_cov = apply_dvl_update(state, cov, plan, aware_scale)
    return new_state, new_cov, plan.report


def synthesize_measurement(v_D, geom: BeamGeometry, timestamp: float = 0.0, f_t: float = 600e3,
                           c_s: float = 1500.0, sigma=0.02) -> DvlMeasurement:
    """Noise-free Doppler ping for a known DVL-frame velocity."""
    return DvlMeasurement(timestamp, radial_to_doppler(geom.E @ np.asarray(v_D, dtype=float), f_t, c_s),
                          np.ones(len(geom.betas), dtype=bool), f_t, c_s, sigma)
