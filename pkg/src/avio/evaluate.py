"""Trajectory association, alignment and absolute trajectory error."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, NoOverlap

DEFAULT_MAX_DT = 0.02


@dataclass
class Trajectory:
    t: np.ndarray
    p: np.ndarray
    q: np.ndarray | None = None  # w-first unit quaternions

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        if self.t.size != self.p.shape[0]:
            raise ValueError("timestamps and positions differ in length")
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.q is not None:
            self.q = np.asarray(self.q, dtype=float).reshape(-1, 4)
            if np.any(np.abs(np.linalg.norm(self.q, axis=1) - 1.0) > 1e-9):
                raise ValueError("quaternions must be unit norm")

    def __len__(self):
        return self.t.size


@dataclass
class Paired:
    t: np.ndarray
    est: np.ndarray
    gt: np.ndarray
    dt: np.ndarray
    n_unpaired_est: int
    n_unpaired_gt: int


def associate(est: Trajectory, gt: Trajectory, max_dt: float = DEFAULT_MAX_DT) -> Paired:
    """Nearest-timestamp pairing of each estimate sample with ground truth."""
    if len(est) == 0 or len(gt) == 0:
        raise NoOverlap("empty trajectory")
    j = np.clip(np.searchsorted(gt.t, est.t), 1, len(gt) - 1) if len(gt) > 1 else np.zeros(len(est), int)
    if len(gt) > 1:
        left = gt.t[j - 1]
        j = np.where(np.abs(est.t - left) <= np.abs(gt.t[j] - est.t), j - 1, j)
    dt = est.t - gt.t[j]
    ok = np.abs(dt) <= max_dt + 1e-12
    if not ok.any():
        raise NoOverlap("no estimate sample lies within max_dt of ground truth")
    return Paired(est.t[ok], est.p[ok], gt.p[j[ok]], dt[ok], int((~ok).sum()), len(gt) - np.unique(j[ok]).size)


def umeyama_align(est: np.ndarray, gt: np.ndarray, with_scale: bool = False):
    """(R, t, s) minimising sum ||gt - (s R est + t)||^2."""
    est = np.asarray(est, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if est.shape != gt.shape or est.shape[0] < 3:
        raise DegenerateGeometry("need at least three paired points")
    mu_e, mu_g = est.mean(axis=0), gt.mean(axis=0)
    de, dg = est - mu_e, gt - mu_g
    var_e = np.mean(np.sum(de**2, axis=1))
    sv_e = np.linalg.svd(de, compute_uv=False)
    if sv_e.size < 2 or sv_e[1] <= 1e-9 * max(sv_e[0], 1e-300):
        raise DegenerateGeometry("points are collinear")
    cov = dg.T @ de / est.shape[0]
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / var_e) if with_scale else 1.0
    t = mu_g - s * R @ mu_e
    return R, t, s


def apply_alignment(points: np.ndarray, R: np.ndarray, t: np.ndarray, s: float = 1.0) -> np.ndarray:
    return s * np.asarray(points) @ R.T + t


@dataclass
class AteResult:
    rmse: float
    std: float
    errors: np.ndarray
    R: np.ndarray
    t: np.ndarray
    s: float
    paired_count: int


def ate_rmse(est: np.ndarray, gt: np.ndarray):
    """(rmse, population std, per-sample error norms) of already aligned points."""
    e = np.linalg.norm(np.asarray(est) - np.asarray(gt), axis=1)
    return float(np.sqrt(np.mean(e**2))), float(e.std()), e


def evaluate_trajectory(est: Trajectory, gt: Trajectory, max_dt: float = DEFAULT_MAX_DT,
                        with_scale: bool = False) -> AteResult:
    """Associate, align and score in one call."""
    pairs = associate(est, gt, max_dt)
    R, t, s = umeyama_align(pairs.est, pairs.gt, with_scale)
    rmse, std, e = ate_rmse(apply_alignment(pairs.est, R, t, s), pairs.gt)
    return AteResult(rmse, std, e, R, t, s, int(pairs.t.size))
