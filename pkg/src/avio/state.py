"""Nominal state, error-state layout, keyframe clones and the EKF update."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import DimensionMismatch, SingularInnovation, UnknownFrame, WindowFull
from .geometry import Transform, perturb

GRAVITY = 9.80665
IMU_DIM = 15
BASE_DIM = 27
CLONE_DIM = 6
DEFAULT_MAX_CLONES = 10
MAX_INNOVATION_COND = 1e12

_BASE_BLOCKS = {
    "p": slice(0, 3),
    "v": slice(3, 6),
    "theta": slice(6, 9),
    "b_a": slice(9, 12),
    "b_g": slice(12, 15),
    "p_bc": slice(15, 18),
    "theta_bc": slice(18, 21),
    "p_bD": slice(21, 24),
    "theta_bD": slice(24, 27),
}


class ErrorStateLayout:
    """Block offsets of the error state for a given number of clones.

    Base blocks come first (27 entries), followed by one 6-vector per
    keyframe clone ordered as (dtheta_k, dp_k).
    """

    def __init__(self, n_clones: int = 0):
        self.n_clones = int(n_clones)

    @property
    def dim(self) -> int:
        return BASE_DIM + CLONE_DIM * self.n_clones

    def clone_offset(self, k: int) -> int:
        if not 0 <= k < self.n_clones:
            raise IndexError(f"clone index {k} out of range ({self.n_clones} clones)")
        return BASE_DIM + CLONE_DIM * k

    def clone_theta(self, k: int) -> slice:
        o = self.clone_offset(k)
        return slice(o, o + 3)

    def clone_p(self, k: int) -> slice:
        o = self.clone_offset(k)
        return slice(o + 3, o + 6)

    def clone_block(self, k: int) -> slice:
        o = self.clone_offset(k)
        return slice(o, o + CLONE_DIM)

    def names(self) -> list[str]:
        out = list(_BASE_BLOCKS)
        for k in range(self.n_clones):
            out += [f"clone{k}_theta", f"clone{k}_p"]
        return out

    def slice(self, name: str) -> slice:
        if name in _BASE_BLOCKS:
            return _BASE_BLOCKS[name]
        if name.startswith("clone"):
            idx, _, part = name[5:].partition("_")
            k = int(idx)
            if part == "theta":
                return self.clone_theta(k)
            if part == "p":
                return self.clone_p(k)
        raise KeyError(name)

    def get(self, x: np.ndarray, name: str) -> np.ndarray:
        s = self.slice(name)
        return x[s] if x.ndim == 1 else x[s, s]

    def set(self, x: np.ndarray, name: str, value) -> None:
        s = self.slice(name)
        if x.ndim == 1:
            x[s] = value
        else:
            x[s, s] = value


@dataclass
class KeyframeClone:
    R_wb: np.ndarray
    p_wb: np.ndarray
    frame_id: int
    timestamp: float

    def copy(self) -> "KeyframeClone":
        return KeyframeClone(self.R_wb.copy(), self.p_wb.copy(), self.frame_id, self.timestamp)


def _vec3(x=None):
    return np.zeros(3) if x is None else np.array(x, dtype=float)


@dataclass
class NominalState:
    """Nominal (large-signal) filter state.

    ``R_wb`` maps body vectors into the world frame. ``T_bc`` and ``T_bD``
    map camera / DVL coordinates into the body frame. The world z axis
    points down, so gravity is ``(0, 0, +g)``; the body frame is
    forward-right-down.
    """

    p_wb: np.ndarray = field(default_factory=_vec3)
    v_wb: np.ndarray = field(default_factory=_vec3)
    R_wb: np.ndarray = field(default_factory=lambda: np.eye(3))
    b_a: np.ndarray = field(default_factory=_vec3)
    b_g: np.ndarray = field(default_factory=_vec3)
    T_bc: Transform = field(default_factory=Transform)
    T_bD: Transform = field(default_factory=Transform)
    gravity_w: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, GRAVITY]))
    timestamp: float = 0.0
    clones: list[KeyframeClone] = field(default_factory=list)

    def __post_init__(self):
        for name in ("p_wb", "v_wb", "b_a", "b_g", "gravity_w"):
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        self.R_wb = np.array(self.R_wb, dtype=float)

    @property
    def layout(self) -> ErrorStateLayout:
        return ErrorStateLayout(len(self.clones))

    def copy(self) -> "NominalState":
        return replace(
            self,
            p_wb=self.p_wb.copy(),
            v_wb=self.v_wb.copy(),
            R_wb=self.R_wb.copy(),
            b_a=self.b_a.copy(),
            b_g=self.b_g.copy(),
            T_bc=self.T_bc.copy(),
            T_bD=self.T_bD.copy(),
            gravity_w=self.gravity_w.copy(),
            clones=[c.copy() for c in self.clones],
        )

    def clone_index(self, frame_id: int) -> int:
        for k, c in enumerate(self.clones):
            if c.frame_id == frame_id:
                return k
        raise UnknownFrame(f"no keyframe clone with frame_id={frame_id}")


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def augment_keyframe(state: NominalState, cov: np.ndarray, frame_id: int,
                     max_clones: int = DEFAULT_MAX_CLONES):
    """Clone the current body pose into the sliding window.

    The clone is an exact copy, so its error rows are a row selection of
    the live (dtheta, dp) rows of the covariance.
    """
    if len(state.clones) >= max_clones:
        raise WindowFull(f"window already holds {max_clones} clones")
    n = cov.shape[0]
    if n != state.layout.dim:
        raise DimensionMismatch(f"covariance is {n}x{n}, layout expects {state.layout.dim}")
    rows = np.r_[6:9, 0:3]
    out = np.empty((n + CLONE_DIM, n + CLONE_DIM))
    out[:n, :n] = cov
    out[n:, :n] = cov[rows, :]
    out[:n, n:] = cov[:, rows]
    out[n:, n:] = cov[np.ix_(rows, rows)]

    new = state.copy()
    new.clones.append(KeyframeClone(state.R_wb.copy(), state.p_wb.copy(), frame_id, state.timestamp))
    return new, out


def marginalize_keyframe(state: NominalState, cov: np.ndarray, frame_id: int):
    """Drop a clone and its covariance rows/cols."""
    k = state.clone_index(frame_id)
    s = state.layout.clone_block(k)
    keep = np.r_[0:s.start, s.stop:cov.shape[0]]
    new = state.copy()
    del new.clones[k]
    return new, cov[np.ix_(keep, keep)]


def inject_error(state: NominalState, delta) -> NominalState:
    """Fold an error-state vector into the nominal state."""
    delta = np.asarray(delta, dtype=float)
    layout = state.layout
    if delta.shape != (layout.dim,):
        raise DimensionMismatch(f"delta has shape {delta.shape}, expected ({layout.dim},)")
    new = state.copy()
    new.p_wb = state.p_wb + delta[0:3]
    new.v_wb = state.v_wb + delta[3:6]
    new.R_wb = perturb(state.R_wb, delta[6:9])
    new.b_a = state.b_a + delta[9:12]
    new.b_g = state.b_g + delta[12:15]
    new.T_bc = Transform(perturb(state.T_bc.rotation, delta[18:21]), state.T_bc.translation + delta[15:18])
    new.T_bD = Transform(perturb(state.T_bD.rotation, delta[24:27]), state.T_bD.translation + delta[21:24])
    for k, c in enumerate(new.clones):
        o = layout.clone_offset(k)
        c.R_wb = perturb(c.R_wb, delta[o:o + 3])
        c.p_wb = c.p_wb + delta[o + 3:o + 6]
    return new


def ekf_update(state: NominalState, cov: np.ndarray, H, r, R_meas):
    """Standard EKF correction with a Joseph-form covariance update.

    ``H`` is the Jacobian of the predicted measurement w.r.t. the error
    state, so the correction is ``K @ r`` with ``r = z - h(x_hat)``.

    Returns
    -------
    state, cov, mahalanobis
        Corrected state and covariance, and ``r^T S^-1 r`` for the
        innovation covariance ``S = H P H^T + R``.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    R_meas = np.atleast_2d(np.asarray(R_meas, dtype=float))
    n = cov.shape[0]
    if H.shape[1] != n or H.shape[0] != r.shape[0] or R_meas.shape != (r.shape[0], r.shape[0]):
        raise DimensionMismatch(f"H {H.shape}, r {r.shape}, R {R_meas.shape}, P {cov.shape}")

    PHt = cov @ H.T
    S = symmetrize(H @ PHt + R_meas)
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > MAX_INNOVATION_COND:
        raise SingularInnovation(f"innovation covariance condition number {cond:.3g}")
    try:
        S_fac = cho_factor(S)
    except LinAlgError as exc:
        raise SingularInnovation(str(exc)) from exc
    K = cho_solve(S_fac, PHt.T).T
    mahal = float(r @ cho_solve(S_fac, r))

    delta = K @ r
    IKH = np.eye(n) - K @ H
    new_cov = symmetrize(IKH @ cov @ IKH.T + K @ R_meas @ K.T)
    return inject_error(state, delta), new_cov, mahal
