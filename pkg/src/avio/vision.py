"""Visual measurement update over a sliding window of keyframe clones.

Feature tracks are triangulated against the cloned camera poses, turned
into reprojection residuals with Jacobians, folded into a normal-equation
form per landmark and the landmarks are eliminated with a Schur
complement before the EKF correction.

Observation Jacobians are kept in *local* column coordinates: six columns
per clone ordered (dtheta_k, dp_k), followed by six camera-extrinsic
columns (dp_bc, dtheta_bc) when those are estimated. ``columns`` arrays
map local columns back into the full error state.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (BehindCamera, DegenerateLandmark, DivergedRefinement, InsufficientParallax,
                     NoValidTracks)
from .state import NominalState, ekf_update

Z_MIN = 0.05
MIN_PARALLAX = np.deg2rad(1.0)
GN_ITERS = 10
CHI2_2DOF_95 = 5.991
C3_COND_MAX = 1e10
EIG_REL_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    fx: float = 400.0
    fy: float = 400.0
    cx: float = 320.0
    cy: float = 240.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside the image")

    def in_image(self, uv) -> np.ndarray:
        uv = np.asarray(uv)
        return (uv[..., 0] >= 0) & (uv[..., 0] < self.width) & (uv[..., 1] >= 0) & (uv[..., 1] < self.height)

    def pixel_to_ray(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        x = (uv[..., 0] - self.cx) / self.fx
        y = (uv[..., 1] - self.cy) / self.fy
        return np.stack([x, y, np.ones_like(x)], axis=-1)


@dataclass
class FeatureTrack:
    feature_id: int
    observations: list = field(default_factory=list)  # [(frame_id, (u, v)), ...]
    u_px: float = 1.0

    def add(self, frame_id: int, pixel) -> None:
        if any(f == frame_id for f, _ in self.observations):
            raise ValueError(f"track {self.feature_id} already observed in frame {frame_id}")
        self.observations.append((frame_id, np.asarray(pixel, dtype=float)))

    def __len__(self):
        return len(self.observations)


@dataclass
class Landmark:
    xi_w: np.ndarray
    feature_id: int
    triangulation_rms: float = 0.0


def _skew_batch(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def camera_poses(state: NominalState):
    """World-from-camera rotations (K,3,3) and centres (K,3) of all clones."""
    if not state.clones:
        return np.zeros((0, 3, 3)), np.zeros((0, 3))
    R_wb = np.stack([c.R_wb for c in state.clones])
    p_wb = np.stack([c.p_wb for c in state.clones])
    R_wc = R_wb @ state.T_bc.rotation
    p_wc = p_wb + R_wb @ state.T_bc.translation
    return R_wc, p_wc


def _proj_jacobian(camera: CameraModel, pc: np.ndarray) -> np.ndarray:
    """d(pixel)/d(point in camera frame), batched over leading axes."""
    x, y, z = pc[..., 0], pc[..., 1], pc[..., 2]
    iz = 1.0 / z
    J = np.zeros(pc.shape[:-1] + (2, 3))
    J[..., 0, 0] = camera.fx * iz
    J[..., 0, 2] = -camera.fx * x * iz * iz
    J[..., 1, 1] = camera.fy * iz
    J[..., 1, 2] = -camera.fy * y * iz * iz
    return J


def _pinhole(camera: CameraModel, pc: np.ndarray) -> np.ndarray:
    return np.stack([camera.fx * pc[..., 0] / pc[..., 2] + camera.cx,
                     camera.fy * pc[..., 1] / pc[..., 2] + camera.cy], axis=-1)


def project(camera: CameraModel, state: NominalState, clone_i: int, xi_w) -> np.ndarray:
    """Pixel of world point ``xi_w`` seen from keyframe clone ``clone_i``."""
    c = state.clones[clone_i]
    xi_b = c.R_wb.T @ (np.asarray(xi_w, dtype=float) - c.p_wb)
    pc = state.T_bc.rotation.T @ (xi_b - state.T_bc.translation)
    if pc[2] <= Z_MIN:
        raise BehindCamera(f"point depth {pc[2]:.3f} m in clone {clone_i}")
    return _pinhole(camera, pc)


# ---------------------------------------------------------------------------
# triangulation

def _triangulate_batch(camera, R_wc, p_wc, cam_idx, lm_idx, pixels, n_lm):
    """Linear solve plus Gauss-Newton refinement for many landmarks at once.

    Observations must be grouped by landmark (``lm_idx`` sorted). Returns
    (points, rms, status) with status 0 = ok, 1 = parallax, 2 = diverged,
    3 = behind camera.
    """
    starts = np.flatnonzero(np.r_[True, lm_idx[1:] != lm_idx[:-1]])
    counts = np.diff(np.r_[starts, lm_idx.size])
    Rw = R_wc[cam_idx]
    cw = p_wc[cam_idx]
    rays = np.einsum("nij,nj->ni", Rw, camera.pixel_to_ray(pixels))
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)

    status = np.zeros(n_lm, dtype=int)
    first = rays[np.repeat(starts, counts)]
    cosang = np.clip(np.einsum("ni,ni->n", rays, first), -1.0, 1.0)
    parallax = np.maximum.reduceat(np.arccos(cosang), starts)
    status[(parallax < MIN_PARALLAX) | (counts < 2)] = 1

    # linear: sum (I - b b^T)(X - c) = 0
    A_o = np.eye(3) - rays[:, :, None] * rays[:, None, :]
    A = np.add.reduceat(A_o, starts, axis=0)
    b = np.add.reduceat(np.einsum("nij,nj->ni", A_o, cw), starts, axis=0)
    ok = status == 0
    X = np.zeros((n_lm, 3))
    if ok.any():
        X[ok] = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]

    RwT = np.transpose(Rw, (0, 2, 1))

    def cost_terms(Xc):
        pc = np.einsum("nij,nj->ni", RwT, Xc[lm_idx] - cw)
        res = pixels - _pinhole(camera, np.where(pc[:, 2:3] > 1e-9, pc, 1.0))
        return pc, res, np.add.reduceat(np.einsum("ni,ni->n", res, res), starts)

    pc, res, cost = cost_terms(X)
    best_X, best_cost = X.copy(), cost.copy()
    increases = np.zeros(n_lm, dtype=int)
    active = ok.copy()
    for _ in range(GN_ITERS):
        if not active.any():
            break
        Jf = _proj_jacobian(camera, pc) @ RwT  # d(pixel)/dX
        JtJ = np.add.reduceat(np.einsum("nki,nkj->nij", Jf, Jf), starts, axis=0)
        Jtr = np.add.reduceat(np.einsum("nki,nk->ni", Jf, res), starts, axis=0)
        # tiny damping keeps points that drift behind a camera solvable
        tr = np.trace(JtJ, axis1=1, axis2=2)
        weak = np.abs(np.linalg.det(JtJ)) <= 1e-12 * tr**3
        JtJ[weak] += (1e-9 * tr[weak] + 1e-300)[:, None, None] * np.eye(3)
        step = np.zeros((n_lm, 3))
        step[active] = np.linalg.solve(JtJ[active], Jtr[active][..., None])[..., 0]
        step[~np.isfinite(step).all(axis=1)] = 0.0
        X = X + step
        pc, res, new_cost = cost_terms(X)
        grew = active & (new_cost > cost)
        increases = np.where(grew, increases + 1, np.where(active, 0, increases))
        better = active & (new_cost < best_cost)
        best_X[better], best_cost[better] = X[better], new_cost[better]
        small = np.linalg.norm(step, axis=1) <= 1e-12 * (1.0 + np.linalg.norm(X, axis=1))
        status[active & (increases >= 3)] = 2
        active &= (status == 0) & ~small
        cost = new_cost

    X = best_X
    pc = np.einsum("nij,nj->ni", RwT, X[lm_idx] - cw)
    behind = np.minimum.reduceat(pc[:, 2], starts) <= Z_MIN
    status[(status == 0) & behind] = 3
    rms = np.sqrt(best_cost / (2 * counts))
    return X, rms, status


def triangulate(camera: CameraModel, state: NominalState, track: FeatureTrack) -> Landmark:
    """Triangulate one track against the clone window of ``state``."""
    R_wc, p_wc = camera_poses(state)
    cam_idx = np.array([state.clone_index(f) for f, _ in track.observations], dtype=int)
    pixels = np.array([z for _, z in track.observations], dtype=float).reshape(-1, 2)
    if cam_idx.size < 2:
        raise InsufficientParallax(f"track {track.feature_id} has {cam_idx.size} observation(s)")
    X, rms, status = _triangulate_batch(camera, R_wc, p_wc, cam_idx, np.zeros(cam_idx.size, int), pixels, 1)
    if status[0] == 1:
        raise InsufficientParallax(f"track {track.feature_id}: parallax below 1 deg")
    if status[0] == 2:
        raise DivergedRefinement(f"track {track.feature_id}: refinement cost kept increasing")
    if status[0] == 3:
        raise BehindCamera(f"track {track.feature_id}: triangulated point behind a camera")
    return Landmark(X[0], track.feature_id, float(rms[0]))


# ---------------------------------------------------------------------------
# residuals and Jacobians

@dataclass
class ObservationBlocks:
    """Per-observation residuals and Jacobians in local column coordinates."""

    clone_idx: np.ndarray  # (N,)
    lm_idx: np.ndarray  # (N,)
    r: np.ndarray  # (N, 2)
    H_clone: np.ndarray  # (N, 2, 6) columns (dtheta_k, dp_k)
    H_f: np.ndarray  # (N, 2, 3)
    n_clones: int
    n_landmarks: int
    H_ext: np.ndarray | None = None  # (N, 2, 6) columns (dp_bc, dtheta_bc)

    @property
    def n_local(self) -> int:
        return 6 * self.n_clones + (6 if self.H_ext is not None else 0)

    def dense(self):
        """Stacked (H_x, H_f, r); only used for checks on small problems."""
        N = self.r.shape[0]
        Hx = np.zeros((2 * N, self.n_local))
        Hf = np.zeros((2 * N, 3 * self.n_landmarks))
        for o in range(N):
            k, j = self.clone_idx[o], self.lm_idx[o]
            Hx[2 * o:2 * o + 2, 6 * k:6 * k + 6] = self.H_clone[o]
            if self.H_ext is not None:
                Hx[2 * o:2 * o + 2, -6:] = self.H_ext[o]
            Hf[2 * o:2 * o + 2, 3 * j:3 * j + 3] = self.H_f[o]
        return Hx, Hf, self.r.reshape(-1)


def local_columns(n_clones: int, with_extrinsics: bool) -> np.ndarray:
    """Full error-state indices of the local Jacobian columns."""
    cols = list(range(27, 27 + 6 * n_clones))
    if with_extrinsics:
        cols += list(range(15, 21))
    return np.array(cols, dtype=int)


def _observation_blocks(camera, state, cam_idx, lm_idx, pixels, X, n_lm, with_extrinsics):
    R_wb = np.stack([c.R_wb for c in state.clones])[cam_idx]
    p_wb = np.stack([c.p_wb for c in state.clones])[cam_idx]
    R_bc, p_bc = state.T_bc.rotation, state.T_bc.translation
    R_wbT = np.transpose(R_wb, (0, 2, 1))
    xi_b = np.einsum("nij,nj->ni", R_wbT, X[lm_idx] - p_wb)
    pc = (xi_b - p_bc) @ R_bc
    if np.any(pc[:, 2] <= Z_MIN):
        raise BehindCamera("landmark behind a camera")
    Jp = _proj_jacobian(camera, pc)
    JR = Jp @ R_bc.T  # J_pi R_bc^T
    R_wcT = R_bc.T @ R_wbT
    H_f = Jp @ R_wcT
    H_clone = np.concatenate([JR @ _skew_batch(xi_b) @ R_wbT, -H_f], axis=2)
    H_ext = None
    if with_extrinsics:
        H_ext = np.concatenate([-JR, JR @ _skew_batch(xi_b - p_bc)], axis=2)
    r = pixels - _pinhole(camera, pc)
    return ObservationBlocks(cam_idx, lm_idx, r, H_clone, H_f, len(state.clones), n_lm, H_ext)


def residual_and_jacobians(camera: CameraModel, state: NominalState, clone_i: int,
                           landmark: Landmark, z_ij, estimate_camera_extrinsics: bool = False):
    """Reprojection residual ``r = z - z_hat`` with Jacobians of ``z_hat``.

    Returns ``(r, H_x, H_f)`` where ``H_x`` spans the full error state
    (clone columns, plus camera-extrinsic columns when enabled).
    """
    X = np.asarray(landmark.xi_w, dtype=float)[None]
    blk = _observation_blocks(camera, state, np.array([clone_i]), np.array([0]),
                              np.asarray(z_ij, dtype=float)[None], X, 1, estimate_camera_extrinsics)
    H_x = np.zeros((2, state.layout.dim))
    H_x[:, state.layout.clone_block(clone_i)] = blk.H_clone[0]
    if estimate_camera_extrinsics:
        H_x[:, 15:21] = blk.H_ext[0]
    return blk.r[0], H_x, blk.H_f[0]


# ---------------------------------------------------------------------------
# equivalent model and landmark elimination

@dataclass
class EquivalentResidual:
    """Normal-equation blocks of the stacked visual system.

    ``[b1; b2] = [[C1, C2], [C2^T, C3]] [dX; dxi]`` with ``C3`` stored as
    one 3x3 block per landmark and ``C2`` as (m, L, 3).
    """

    b1: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    C3: np.ndarray
    b2: np.ndarray  # (L, 3)
    u_px: float
    blocks: ObservationBlocks | None = None

    @property
    def n_landmarks(self) -> int:
        return self.C3.shape[0]


def _accumulate(blk: ObservationBlocks, mask=None):
    """Sum the per-observation outer products into (b1, C1, C2, C3, b2)."""
    K, L, m = blk.n_clones, blk.n_landmarks, blk.n_local
    sel = slice(None) if mask is None else mask
    k, j, r = blk.clone_idx[sel], blk.lm_idx[sel], blk.r[sel]
    Hc, Hf = blk.H_clone[sel], blk.H_f[sel]
    HcT = np.transpose(Hc, (0, 2, 1))

    b1c = np.zeros((K, 6))
    np.add.at(b1c, k, np.einsum("nij,nj->ni", HcT, r))
    C1cc = np.zeros((K, 6, 6))
    np.add.at(C1cc, k, HcT @ Hc)
    C2c = np.zeros((K, L, 6, 3))
    np.add.at(C2c, (k, j), HcT @ Hf)
    C3 = np.zeros((L, 3, 3))
    np.add.at(C3, j, np.transpose(Hf, (0, 2, 1)) @ Hf)
    b2 = np.zeros((L, 3))
    np.add.at(b2, j, np.einsum("nki,nk->ni", Hf, r))

    b1 = np.zeros(m)
    C1 = np.zeros((m, m))
    b1[:6 * K] = b1c.reshape(-1)
    for c in range(K):
        C1[6 * c:6 * c + 6, 6 * c:6 * c + 6] = C1cc[c]
    C2 = np.zeros((m, L, 3))
    C2[:6 * K] = np.transpose(C2c, (0, 2, 1, 3)).reshape(6 * K, L, 3)
    if blk.H_ext is not None:
        He = blk.H_ext[sel]
        HeT = np.transpose(He, (0, 2, 1))
        b1[6 * K:] = np.einsum("nij,nj->i", HeT, r)
        C1[6 * K:, 6 * K:] = np.einsum("nij,njk->ik", HeT, He)
        C1ce = np.zeros((K, 6, 6))
        np.add.at(C1ce, k, HcT @ He)
        C1[:6 * K, 6 * K:] = C1ce.reshape(6 * K, 6)
        C1[6 * K:, :6 * K] = C1[:6 * K, 6 * K:].T
        C2e = np.zeros((L, 6, 3))
        np.add.at(C2e, j, HeT @ Hf)
        C2[6 * K:] = np.transpose(C2e, (1, 0, 2))
    return b1, C1, C2, C3, b2


def build_equivalent_model(blocks: ObservationBlocks, u_px: float = 1.0) -> EquivalentResidual:
    """Assemble the equivalent observation model, one observation at a time."""
    b1, C1, C2, C3, b2 = _accumulate(blocks)
    return EquivalentResidual(b1, C1, C2, C3, b2, float(u_px), blocks)


def _landmark_inverses(C3: np.ndarray):
    """Per-landmark inverses with damping; returns (inverses, usable mask)."""
    L = C3.shape[0]
    inv = np.zeros_like(C3)
    usable = np.zeros(L, dtype=bool)
    if L == 0:
        return inv, usable
    finite = np.isfinite(C3).all(axis=(1, 2))
    cond = np.full(L, np.inf)
    cond[finite] = np.linalg.cond(C3[finite])
    tr = np.trace(C3, axis1=1, axis2=2)
    M = C3.copy()
    damp = finite & (cond > C3_COND_MAX) & (tr > 0)
    M[damp] += (1e-8 * tr[damp] / 3.0)[:, None, None] * np.eye(3)
    usable = finite & (tr > 0) & ((cond <= C3_COND_MAX) | damp)
    if usable.any():
        inv[usable] = np.linalg.inv(M[usable])
        usable &= np.isfinite(inv).all(axis=(1, 2))
    return inv, usable


def schur_eliminate(eq: EquivalentResidual, return_info: bool = False):
    """Eliminate the landmarks from the equivalent model.

    Returns ``(H_eff, r_eff, R_eff)``. A landmark whose 3x3 block cannot be
    inverted even after damping is dropped on its own; if every landmark
    is unusable :class:`DegenerateLandmark` is raised.
    """
    C3inv, usable = _landmark_inverses(eq.C3)
    b1, C1 = eq.b1, eq.C1
    dropped = np.flatnonzero(~usable)
    if dropped.size:
        if not usable.any():
            raise DegenerateLandmark("no landmark block is invertible")
        if eq.blocks is None:
            raise DegenerateLandmark(f"landmarks {dropped.tolist()} degenerate and cannot be removed")
        b1, C1, *_ = _accumulate(eq.blocks, usable[eq.blocks.lm_idx])
    C2 = eq.C2[:, usable]
    W = np.einsum("mlk,lkj->mlj", C2, C3inv[usable])  # C2 C3^-1 per landmark
    H_eff = C1 - np.einsum("mlj,nlj->mn", W, C2)
    H_eff = 0.5 * (H_eff + H_eff.T)
    r_eff = b1 - np.einsum("mlj,lj->m", W, eq.b2[usable])
    R_eff = H_eff * eq.u_px ** 2
    if return_info:
        return H_eff, r_eff, R_eff, {"C3_inv": C3inv, "usable": usable}
    return H_eff, r_eff, R_eff


def compress_equivalent(H_eff: np.ndarray, r_eff: np.ndarray, u_px: float):
    """Square-root form of the (rank-deficient) eliminated system.

    With ``H_eff = V diag(lam) V^T`` restricted to its non-zero spectrum,
    ``H_c = sqrt(lam) V^T`` and ``r_c = V^T r_eff / sqrt(lam)`` carry the same
    information as ``(H_eff, r_eff, H_eff u^2)`` with covariance ``u^2 I``.
    """
    lam, V = np.linalg.eigh(H_eff)
    keep = lam > EIG_REL_TOL * max(lam.max(initial=0.0), 0.0)
    if not keep.any():
        return np.zeros((0, H_eff.shape[0])), np.zeros(0), np.zeros((0, 0))
    lam, V = lam[keep], V[:, keep]
    s = np.sqrt(lam)
    H_c = s[:, None] * V.T
    r_c = (V.T @ r_eff) / s
    return H_c, r_c, (u_px ** 2) * np.eye(s.size)


def back_substitute_landmarks(eq: EquivalentResidual, delta_X) -> np.ndarray:
    """Landmark corrections ``C3_j^-1 (b2_j - C2_j^T dX)``, shape (L, 3)."""
    C3inv, usable = _landmark_inverses(eq.C3)
    rhs = eq.b2 - np.einsum("mlj,m->lj", eq.C2, np.asarray(delta_X, dtype=float))
    out = np.einsum("lij,lj->li", C3inv, rhs)
    out[~usable] = 0.0
    return out


# ---------------------------------------------------------------------------
# full update

@dataclass
class VisualReport:
    n_tracks: int = 0
    n_landmarks: int = 0
    n_observations: int = 0
    n_inliers: int = 0
    n_outliers: int = 0
    rms_px: float = 0.0
    rank: int = 0
    landmarks: list = field(default_factory=list)

    @property
    def inlier_ratio(self) -> float:
        return self.n_inliers / self.n_observations if self.n_observations else 0.0


@dataclass
class VisualUpdatePlan:
    """Everything needed to apply a visual correction with a chosen scale."""

    H: np.ndarray  # (rank, n) in full error-state columns
    r: np.ndarray
    R: np.ndarray
    report: VisualReport
    equivalent: EquivalentResidual | None = None
    columns: np.ndarray | None = None


def _gather(state, tracks):
    index = {c.frame_id: k for k, c in enumerate(state.clones)}
    cam, lm, pix, kept = [], [], [], []
    for t in tracks:
        obs = [(index[f], z) for f, z in t.observations if f in index]
        if len(obs) < 2:
            continue
        j = len(kept)
        kept.append(t)
        for k, z in obs:
            cam.append(k)
            lm.append(j)
            pix.append(z)
    return (np.array(cam, dtype=int), np.array(lm, dtype=int),
            np.array(pix, dtype=float).reshape(-1, 2), kept)


def prepare_visual_update(state: NominalState, cov: np.ndarray, tracks, camera: CameraModel,
                          u_px: float = 1.0, estimate_camera_extrinsics: bool = False,
                          gate: float | None = CHI2_2DOF_95) -> VisualUpdatePlan:
    """Triangulate, gate and eliminate landmarks; no state change yet.

    Gating is per observation on the marginal innovation. The worst
    offending observation of each landmark is removed and that landmark is
    re-triangulated, until every remaining observation passes.
    """
    report = VisualReport(n_tracks=len(tracks))
    cam_idx, lm_idx, pixels, kept = _gather(state, tracks)
    report.n_observations = int(cam_idx.size)
    if not kept:
        raise NoValidTracks("no track has two observations inside the window")

    R_wc, p_wc = camera_poses(state)
    K = len(state.clones)
    u2 = u_px ** 2
    cols = local_columns(K, estimate_camera_extrinsics)
    P_loc = cov[np.ix_(cols, cols)]
    alive = np.ones(cam_idx.size, dtype=bool)
    X = status = None
    while True:
        ci, li, px = cam_idx[alive], lm_idx[alive], pixels[alive]
        X, rms, status = _triangulate_batch(camera, R_wc, p_wc, ci, li, px, len(kept))
        good_lm = status == 0
        good_obs = good_lm[li]
        if not good_obs.any():
            break
        # landmark indices compacted for the block builder
        remap = np.cumsum(good_lm) - 1
        blk = _observation_blocks(camera, state, ci[good_obs], remap[li[good_obs]], px[good_obs],
                                  X[good_lm], int(good_lm.sum()), estimate_camera_extrinsics)
        if gate is None:
            break
        _, _, _, C3, _ = _accumulate(blk)
        C3inv, _ = _landmark_inverses(C3)
        Hf = blk.H_f
        # marginal innovation: clone/extrinsic part + pixel noise + landmark spread
        S = u2 * (np.eye(2) + Hf @ C3inv[blk.lm_idx] @ np.transpose(Hf, (0, 2, 1)))
        Hloc = np.zeros((blk.r.shape[0], 2, cols.size))
        rows = np.arange(blk.r.shape[0])
        for c in range(6):
            Hloc[rows, :, 6 * blk.clone_idx + c] = blk.H_clone[:, :, c]
        if blk.H_ext is not None:
            Hloc[:, :, -6:] = blk.H_ext
        S += Hloc @ P_loc @ np.transpose(Hloc, (0, 2, 1))
        d2 = np.einsum("ni,ni->n", blk.r, np.linalg.solve(S, blk.r[..., None])[..., 0])
        bad = d2 > gate
        if not bad.any():
            break
        # drop the worst offender per landmark
        obs_ids = np.flatnonzero(alive)[good_obs]
        worst = {}
        for o in np.flatnonzero(bad):
            j = blk.lm_idx[o]
            if j not in worst or d2[o] > d2[worst[j]]:
                worst[j] = o
        alive[obs_ids[list(worst.values())]] = False

    good_lm = status == 0
    if not good_lm.any():
        report.n_outliers = report.n_observations
        raise NoValidTracks("no track survived triangulation and gating")
    report.n_landmarks = int(good_lm.sum())
    report.n_inliers = int(blk.r.shape[0])
    report.n_outliers = report.n_observations - report.n_inliers
    report.rms_px = float(np.sqrt(np.mean(blk.r ** 2)))
    report.landmarks = [Landmark(X[j], kept[j].feature_id, float(rms[j])) for j in np.flatnonzero(good_lm)]

    eq = build_equivalent_model(blk, u_px)
    H_eff, r_eff, _ = schur_eliminate(eq)
    H_c, r_c, R_c = compress_equivalent(H_eff, r_eff, u_px)
    report.rank = int(r_c.size)
    H = np.zeros((r_c.size, cov.shape[0]))
    H[:, cols] = H_c
    return VisualUpdatePlan(H, r_c, R_c, report, eq, cols)


def apply_visual_update(state: NominalState, cov: np.ndarray, plan: VisualUpdatePlan,
                        aware_scale: float = 1.0):
    """EKF correction with the measurement covariance scaled by ``aware_scale``."""
    if plan.r.size == 0:
        return state, cov
    new_state, new_cov, _ = ekf_update(state, cov, plan.H, plan.r, plan.R * aware_scale)
    return new_state, new_cov


def visual_update(state: NominalState, cov: np.ndarray, tracks, camera: CameraModel,
                  aware_scale: float = 1.0, u_px: float = 1.0,
                  estimate_camera_extrinsics: bool = False, gate: float | None = CHI2_2DOF_95):
    plan = prepare_visual_update(state, cov, tracks, camera, u_px, estimate_camera_extrinsics, gate)
    new_state, new_cov = apply_visual_update(state, cov, plan, aware_scale)
    return new_state, new_cov, plan.report
