import numpy as np
import pytest

from avio.geometry import Transform, exp_so3, log_so3
from avio.state import KeyframeClone, NominalState


def random_rotation(rng, max_angle=np.pi - 0.05):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0, max_angle))


def random_state(rng, n_clones=0):
    st = NominalState(
        p_wb=rng.normal(size=3),
        v_wb=rng.normal(size=3),
        R_wb=random_rotation(rng),
        b_a=0.05 * rng.normal(size=3),
        b_g=0.01 * rng.normal(size=3),
        T_bc=Transform(random_rotation(rng), 0.2 * rng.normal(size=3)),
        T_bD=Transform(random_rotation(rng), 0.2 * rng.normal(size=3)),
        timestamp=1.0,
    )
    for k in range(n_clones):
        st.clones.append(KeyframeClone(random_rotation(rng), rng.normal(size=3), k, 0.1 * k))
    return st


def random_spd(rng, n, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T / n + 0.1 * np.eye(n))


def boxminus(a: NominalState, b: NominalState) -> np.ndarray:
    """Error vector taking ``b`` to ``a`` (oracle side, via log)."""
    d = [a.p_wb - b.p_wb, a.v_wb - b.v_wb, log_so3(a.R_wb @ b.R_wb.T), a.b_a - b.b_a, a.b_g - b.b_g,
         a.T_bc.translation - b.T_bc.translation, log_so3(a.T_bc.rotation @ b.T_bc.rotation.T),
         a.T_bD.translation - b.T_bD.translation, log_so3(a.T_bD.rotation @ b.T_bD.rotation.T)]
    for ca, cb in zip(a.clones, b.clones):
        d += [log_so3(ca.R_wb @ cb.R_wb.T), ca.p_wb - cb.p_wb]
    return np.concatenate(d)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


R_BC_FORWARD = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


def make_scene(rng, n_clones=3, n_landmarks=5, min_obs=2, noise_px=0.0):
    """Clones on a short arc looking along body x at points 3-6 m ahead."""
    from avio.vision import FeatureTrack, project

    st = NominalState(
        p_wb=rng.normal(scale=0.1, size=3),
        R_wb=random_rotation(rng, 0.1),
        T_bc=Transform(R_BC_FORWARD @ random_rotation(rng, 0.05), 0.05 * rng.normal(size=3)),
    )
    for k in range(n_clones):
        p = np.array([0.1 * k, 0.25 * k, 0.05 * k]) + 0.02 * rng.normal(size=3)
        st.clones.append(KeyframeClone(random_rotation(rng, 0.15), p, 100 + k, 0.1 * k))
    points = np.column_stack([rng.uniform(3, 6, n_landmarks), rng.uniform(-1.5, 1.5, n_landmarks),
                              rng.uniform(-1.0, 1.0, n_landmarks)])
    tracks = []
    for j, X in enumerate(points):
        m = rng.integers(min_obs, n_clones + 1) if n_clones > min_obs else n_clones
        ks = np.sort(rng.choice(n_clones, size=m, replace=False))
        t = FeatureTrack(j)
        for k in ks:
            t.add(100 + k, project(CAMERA, st, k, X) + noise_px * rng.normal(size=2))
        tracks.append(t)
    return st, points, tracks


def _camera():
    from avio.vision import CameraModel
    return CameraModel(400.0, 400.0, 320.0, 240.0, 640, 480)


CAMERA = _camera()
