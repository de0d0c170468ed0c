"""Event-driven filter: IMU propagation, keyframe window, visual and DVL updates."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, asdict
from typing import Any

import numpy as np
from scipy.optimize import isotonic_regression

from .aware import AwareParams, SensorHealth, aware_step, quality_score_dvl, quality_score_vis
from .dvl import BeamGeometry, DvlMeasurement, apply_dvl_update, beams_to_velocity, prepare_dvl_update
from .errors import (ConfigError, DynamicStart, FilterDiverged, InsufficientBeams, NoValidTracks,
                     NonMonotonicEvent, RankDeficient, SingularInnovation)
from .geometry import Transform, quat_from_matrix, rotation_angle, rpy_to_matrix
from .propagation import ImuNoiseParams, ImuSample, interpolate_imu, propagate
from .state import (DEFAULT_MAX_CLONES, GRAVITY, NominalState, augment_keyframe, marginalize_keyframe)
from .vision import CameraModel, FeatureTrack, apply_visual_update, prepare_visual_update

REORDER_TOL = 1e-3


@dataclass
class FilterConfig:
    max_clones: int = DEFAULT_MAX_CLONES
    min_track_length: int = 3
    max_update_tracks: int = 50
    keyframe_parallax_px: float = 15.0
    keyframe_track_ratio: float = 0.7
    u_px: float = 1.0
    vis_gate: float = 5.991
    dvl_gate: float = 7.815
    gating: bool = True
    use_camera: bool = True
    use_dvl: bool = True
    aware: bool = True
    aware_vis: AwareParams = field(default_factory=AwareParams)
    # five unhealthy pings inside one second at the 5 Hz ping rate
    aware_dvl: AwareParams = field(default_factory=lambda: AwareParams(dT=1.0))
    vis_target_count: int = 40
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    dvl_sigma: float = 0.02
    dvl_alpha_deg: float = 60.0
    dvl_betas_deg: tuple = (45.0, 135.0, 225.0, 315.0)
    estimate_dvl_extrinsics: bool = True
    estimate_camera_extrinsics: bool = False
    # None keeps the value from the dataset sidecar
    T_bD_init_rpy_deg: tuple | None = None
    T_bD_init_translation: tuple | None = None
    sigma_dvl_rot_deg: float = 10.0
    sigma_dvl_trans: float = 0.2
    sigma_cam_rot_deg: float = 1.0
    sigma_cam_trans: float = 0.02
    init_mode: str = "truth"  # truth | static | auto
    init_sigma_p: float = 0.01
    init_sigma_v: float = 0.05
    init_sigma_theta_deg: float = 0.5
    init_sigma_ba: float = 0.05
    init_sigma_bg: float = 0.005
    static_window: float = 1.0
    max_velocity: float = 50.0

    _NESTED = {"aware_vis": AwareParams, "aware_dvl": AwareParams, "imu_noise": ImuNoiseParams}

    def __post_init__(self):
        if self.init_mode not in ("truth", "static", "auto"):
            raise ConfigError(f"unknown init mode {self.init_mode!r}", "init_mode")
        if self.max_clones < 2:
            raise ConfigError("window must hold at least two clones", "max_clones")

    @classmethod
    def from_dict(cls, d: dict | None, prefix: str = "") -> "FilterConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, val in d.items():
            path = f"{prefix}{key}"
            if key not in known:
                raise ConfigError("unknown key", path)
            if key in cls._NESTED:
                sub = cls._NESTED[key]
                sub_known = {f.name for f in fields(sub)}
                if not isinstance(val, dict):
                    raise ConfigError("expected a mapping", path)
                for k in val:
                    if k not in sub_known:
                        raise ConfigError("unknown key", f"{path}.{k}")
                try:
                    val = sub(**val)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(str(exc), path) from exc
            elif isinstance(val, list):
                val = tuple(val)
            kwargs[key] = val
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), prefix.rstrip(".") or "filter") from exc

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = asdict(v) if f.name in self._NESTED else (list(v) if isinstance(v, tuple) else v)
        return out


@dataclass
class Calibration:
    """Fixed sensor description that accompanies a dataset."""

    camera: CameraModel = field(default_factory=CameraModel)
    T_bc: Transform = field(default_factory=Transform)
    T_bD: Transform = field(default_factory=Transform)
    c_s: float = 1500.0
    f_t: float = 600e3


@dataclass
class CameraFrame:
    timestamp: float
    frame_id: int
    feature_ids: np.ndarray
    pixels: np.ndarray


@dataclass
class TruthInit:
    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))


# ---------------------------------------------------------------------------
# initialisation

def static_alignment(accel: np.ndarray, gyro: np.ndarray, max_gyro: float = 0.05):
    """Roll/pitch from mean specific force, gyro bias from mean rate.

    Raises :class:`DynamicStart` when the mean rate norm exceeds ``max_gyro``.
    """
    f = accel.mean(axis=0)
    w = gyro.mean(axis=0)
    if np.linalg.norm(w) > max_gyro or np.abs(np.linalg.norm(accel, axis=1) - GRAVITY).max() > 1.0:
        raise DynamicStart("vehicle is not static over the alignment window")
    roll = np.arctan2(-f[1], -f[2])
    pitch = np.arctan2(f[0], np.hypot(f[1], f[2]))
    return rpy_to_matrix(roll, pitch, 0.0), w


def initial_covariance(cfg: FilterConfig, widen: float = 1.0) -> np.ndarray:
    d = np.zeros(27)
    d[0:3] = cfg.init_sigma_p**2
    d[3:6] = (widen * cfg.init_sigma_v) ** 2
    d[6:9] = np.deg2rad(cfg.init_sigma_theta_deg) ** 2
    d[9:12] = cfg.init_sigma_ba**2
    d[12:15] = cfg.init_sigma_bg**2
    if cfg.estimate_camera_extrinsics:
        d[15:18] = cfg.sigma_cam_trans**2
        d[18:21] = np.deg2rad(cfg.sigma_cam_rot_deg) ** 2
    if cfg.estimate_dvl_extrinsics:
        d[21:24] = cfg.sigma_dvl_trans**2
        d[24:27] = np.deg2rad(cfg.sigma_dvl_rot_deg) ** 2
    return np.diag(d)


def initialize(cfg: FilterConfig, calib: Calibration, t0: float, imu_t=None, accel=None, gyro=None,
               truth: TruthInit | None = None, first_dvl: np.ndarray | None = None):
    """Build the initial nominal state and covariance.

    ``truth`` is used for ``init_mode == 'truth'``. Otherwise the first
    ``static_window`` seconds of IMU data are aligned against gravity; with
    ``auto`` a moving start falls back to the first DVL velocity.
    """
    T_bD = calib.T_bD.copy()
    if cfg.T_bD_init_rpy_deg is not None:
        T_bD.rotation = rpy_to_matrix(*np.deg2rad(cfg.T_bD_init_rpy_deg))
    if cfg.T_bD_init_translation is not None:
        T_bD.translation = np.array(cfg.T_bD_init_translation, dtype=float)
    st = NominalState(T_bc=calib.T_bc.copy(), T_bD=T_bD, timestamp=t0)
    widen = 1.0
    if cfg.init_mode == "truth":
        if truth is None:
            raise ConfigError("truth initialisation needs ground truth", "init_mode")
        st.p_wb, st.v_wb, st.R_wb = truth.p.copy(), truth.v.copy(), truth.R.copy()
        st.b_a, st.b_g = truth.b_a.copy(), truth.b_g.copy()
    else:
        m = imu_t <= imu_t[0] + cfg.static_window
        try:
            st.R_wb, st.b_g = static_alignment(accel[m], gyro[m])
        except DynamicStart:
            if cfg.init_mode == "static" or first_dvl is None:
                raise
            # moving start: attitude from the same average, velocity from the DVL
            f = accel[m].mean(axis=0)
            st.R_wb = rpy_to_matrix(np.arctan2(-f[1], -f[2]), np.arctan2(f[0], np.hypot(f[1], f[2])), 0.0)
            st.v_wb = st.R_wb @ T_bD.rotation @ first_dvl
            widen = 5.0
    return st, initial_covariance(cfg, widen)


# ---------------------------------------------------------------------------
# the filter

@dataclass
class OutputRecord:
    t: float
    kind: str
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    b_a: np.ndarray
    b_g: np.ndarray
    p_bD: np.ndarray
    R_bD: np.ndarray
    std_p: np.ndarray
    std_theta_bD: np.ndarray
    std_p_bD: np.ndarray
    sigma_vis: float
    sigma_dvl: float


@dataclass
class AwareRecord:
    t: float
    sensor: str
    q: float
    sigma: float
    enabled: bool
    decision: str


@dataclass
class TimingRecord:
    t: float
    kind: str
    ms: float
    size: int = 0


class AvioFilter:
    """Single-writer filter consuming time-ordered events."""

    def __init__(self, cfg: FilterConfig, calib: Calibration, state: NominalState, cov: np.ndarray):
        self.cfg = cfg
        self.calib = calib
        self.state = state
        self.cov = cov
        self.geometry = BeamGeometry(np.deg2rad(cfg.dvl_alpha_deg), np.deg2rad(cfg.dvl_betas_deg))
        self.health = {"VIS": SensorHealth("VIS", cfg.aware_vis), "DVL": SensorHealth("DVL", cfg.aware_dvl)}
        self.tracks: dict[int, FeatureTrack] = {}
        self.last_kf: dict[int, np.ndarray] = {}
        self.frame_count = 0
        self.last_imu: ImuSample | None = None
        self.pending: list = []
        self.last_event_t = -np.inf
        self.outputs: list[OutputRecord] = []
        self.aware_log: list[AwareRecord] = []
        self.timing: list[TimingRecord] = []
        self.propagation_ms = 0.0
        self.n_propagations = 0

    # -- event plumbing ------------------------------------------------------
    def process_event(self, event) -> list[OutputRecord]:
        t = event.timestamp
        if t < self.last_event_t - REORDER_TOL:
            raise NonMonotonicEvent(f"event at {t} after {self.last_event_t}")
        self.last_event_t = max(self.last_event_t, t)
        n_before = len(self.outputs)
        if isinstance(event, ImuSample):
            self._on_imu(event)
        else:
            if self.last_imu is not None and t <= self.last_imu.timestamp:
                self._on_measurement(event)
            else:
                self.pending.append(event)  # wait for the IMU sample that straddles it
        return self.outputs[n_before:]

    def flush(self) -> None:
        """Handle measurements still waiting for IMU data (zero-order hold)."""
        for ev in self.pending:
            if self.last_imu is not None and ev.timestamp > self.state.timestamp:
                held = ImuSample(ev.timestamp, self.last_imu.accel, self.last_imu.gyro)
                self._propagate_to_sample(held)
            self._on_measurement(ev)
        self.pending = []

    def _propagate_to_sample(self, sample: ImuSample) -> None:
        if sample.timestamp <= self.state.timestamp:
            return
        prev = self.last_imu
        if prev.timestamp < self.state.timestamp:
            prev = interpolate_imu(prev, sample, self.state.timestamp)
        t0 = time.perf_counter()
        self.state, self.cov = propagate(self.state, self.cov, prev, sample, self.cfg.imu_noise)
        self.propagation_ms += 1e3 * (time.perf_counter() - t0)
        self.n_propagations += 1
        self.last_imu = sample

    def _on_imu(self, sample: ImuSample) -> None:
        if self.last_imu is None:
            self.last_imu = sample
            if sample.timestamp > self.state.timestamp:
                self.state.timestamp = sample.timestamp
        else:
            if sample.timestamp <= self.last_imu.timestamp:
                raise NonMonotonicEvent(f"IMU sample at {sample.timestamp} not after {self.last_imu.timestamp}")
            while self.pending and self.pending[0].timestamp <= sample.timestamp:
                ev = self.pending.pop(0)
                if ev.timestamp > self.state.timestamp:
                    self._propagate_to_sample(interpolate_imu(self.last_imu, sample, ev.timestamp))
                self._on_measurement(ev)
            self._propagate_to_sample(sample)

    def _on_measurement(self, ev) -> None:
        t0 = time.perf_counter()
        if isinstance(ev, DvlMeasurement):
            self._on_dvl(ev)
            kind = "dvl"
        else:
            self._on_camera(ev)
            kind = "cam"
        self._check_health(ev.timestamp)
        self._record(ev.timestamp, kind)
        self.timing.append(TimingRecord(ev.timestamp, f"{kind}_event", 1e3 * (time.perf_counter() - t0)))

    # -- DVL ---------------------------------------------------------------------
    def _on_dvl(self, meas: DvlMeasurement) -> None:
        if not self.cfg.use_dvl:
            return
        t = meas.timestamp
        t0 = time.perf_counter()
        gyro = self.last_imu.gyro if self.last_imu is not None else np.zeros(3)
        gate = self.cfg.dvl_gate if self.cfg.gating else None
        try:
            plan = prepare_dvl_update(self.state, self.cov, meas, self.geometry, gyro,
                                      self.cfg.estimate_dvl_extrinsics, gate)
        except (InsufficientBeams, RankDeficient):
            plan = None
        if plan is None:
            q = 0.0
        else:
            rep = plan.report
            q = quality_score_dvl(rep.passed, rep.residual_norm, rep.sigma_trace, rep.n_beams)
        scale, do_update = self._aware("DVL", t, q)
        if do_update and plan is not None and plan.report.passed:
            try:
                self.state, self.cov = apply_dvl_update(self.state, self.cov, plan, scale)
            except SingularInnovation:
                pass
        self.timing.append(TimingRecord(t, "dvl_update", 1e3 * (time.perf_counter() - t0), 3))

    # -- camera ------------------------------------------------------------------
    def _on_camera(self, frame: CameraFrame) -> None:
        if not self.cfg.use_camera:
            return
        cfg = self.cfg
        t = frame.timestamp
        ids = np.asarray(frame.feature_ids, dtype=int)
        obs = {int(f): np.asarray(z, dtype=float) for f, z in zip(ids, frame.pixels)}

        lost = [tr for fid, tr in self.tracks.items() if fid not in obs]
        for tr in lost:
            del self.tracks[tr.feature_id]
        is_kf = self._is_keyframe(obs)
        window_full = is_kf and len(self.state.clones) >= cfg.max_clones
        candidates = [tr for tr in lost if len(tr) >= cfg.min_track_length]
        if window_full:
            oldest = self.state.clones[0].frame_id
            for tr in list(self.tracks.values()):
                if len(tr) >= cfg.min_track_length and any(f == oldest for f, _ in tr.observations):
                    candidates.append(tr)
                    del self.tracks[tr.feature_id]
        if candidates:
            candidates.sort(key=lambda tr: (-len(tr), tr.feature_id))
            self._visual_update(t, candidates[:cfg.max_update_tracks], len(obs))

        if is_kf:
            if window_full:
                oldest = self.state.clones[0].frame_id
                self.state, self.cov = marginalize_keyframe(self.state, self.cov, oldest)
                for tr in self.tracks.values():
                    tr.observations = [(f, z) for f, z in tr.observations if f != oldest]
            self.state, self.cov = augment_keyframe(self.state, self.cov, frame.frame_id, cfg.max_clones)
            for fid, z in obs.items():
                tr = self.tracks.get(fid)
                if tr is None:
                    tr = self.tracks[fid] = FeatureTrack(fid, u_px=cfg.u_px)
                tr.add(frame.frame_id, z)
            self.last_kf = obs
        self.frame_count += 1

    def _is_keyframe(self, obs: dict) -> bool:
        if not self.state.clones or not self.last_kf:
            return True
        common = [f for f in obs if f in self.last_kf]
        if len(common) < self.cfg.keyframe_track_ratio * len(self.last_kf):
            return True
        if not common:
            return True
        shift = np.mean([np.linalg.norm(obs[f] - self.last_kf[f]) for f in common])
        return bool(shift >= self.cfg.keyframe_parallax_px)

    def _visual_update(self, t: float, tracks: list, n_tracked: int) -> None:
        cfg = self.cfg
        t0 = time.perf_counter()
        gate = cfg.vis_gate if cfg.gating else None
        try:
            plan = prepare_visual_update(self.state, self.cov, tracks, self.calib.camera, cfg.u_px,
                                         cfg.estimate_camera_extrinsics, gate)
        except NoValidTracks:
            plan = None
        if plan is None:
            q = 0.0
        else:
            rep = plan.report
            q = quality_score_vis(rep.inlier_ratio, n_tracked, cfg.vis_target_count, rep.rms_px, cfg.u_px)
        scale, do_update = self._aware("VIS", t, q)
        if do_update and plan is not None:
            try:
                self.state, self.cov = apply_visual_update(self.state, self.cov, plan, scale)
            except SingularInnovation:
                pass
        self.timing.append(TimingRecord(t, "visual_update", 1e3 * (time.perf_counter() - t0), len(tracks)))

    # -- AWARE -------------------------------------------------------------------
    def _aware(self, sensor: str, t: float, q: float):
        h = self.health[sensor]
        if not self.cfg.aware:
            self.aware_log.append(AwareRecord(t, sensor, q, 1.0, True, "update(1)"))
            return 1.0, True
        _, d = aware_step(h, t, q)
        self.aware_log.append(AwareRecord(t, sensor, q, h.sigma, h.enabled,
                                          f"update({d.scale:.6g})" if d.update else "skip"))
        return d.scale, d.update

    # -- bookkeeping ---------------------------------------------------------------
    def _check_health(self, t: float) -> None:
        st = self.state
        ok = (np.isfinite(st.p_wb).all() and np.isfinite(st.v_wb).all() and np.isfinite(self.cov).all()
              and np.linalg.norm(st.v_wb) < self.cfg.max_velocity and np.trace(self.cov[:3, :3]) < 1e6)
        if not ok:
            raise FilterDiverged(f"filter diverged at t={t:.3f}")

    def _record(self, t: float, kind: str) -> None:
        st, P = self.state, self.cov
        sd = np.sqrt(np.clip(np.diag(P)[:27], 0.0, None))
        self.outputs.append(OutputRecord(
            t, kind, st.p_wb.copy(), st.v_wb.copy(), quat_from_matrix(st.R_wb), st.b_a.copy(), st.b_g.copy(),
            st.T_bD.translation.copy(), st.T_bD.rotation.copy(), sd[0:3], sd[24:27], sd[21:24],
            self.health["VIS"].sigma, self.health["DVL"].sigma))


# ---------------------------------------------------------------------------
# batch driver

@dataclass
class SensorData:
    """Time-ordered input streams in array form."""

    imu_t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    dvl_t: np.ndarray
    doppler: np.ndarray
    dvl_valid: np.ndarray
    feat_t: np.ndarray
    feat_frame: np.ndarray
    feat_id: np.ndarray
    feat_uv: np.ndarray
    calib: Calibration
    dvl_radial: np.ndarray | None = None

    def frames(self):
        if self.feat_t.size == 0:
            return []
        order = np.lexsort((self.feat_id, self.feat_frame))
        fr = self.feat_frame[order]
        starts = np.flatnonzero(np.r_[True, fr[1:] != fr[:-1]])
        ends = np.r_[starts[1:], fr.size]
        return [CameraFrame(float(self.feat_t[order[s]]), int(fr[s]), self.feat_id[order[s:e]],
                            self.feat_uv[order[s:e]]) for s, e in zip(starts, ends)]


def merge_events(data: SensorData, cfg: FilterConfig):
    """All events in time order; ties go IMU, then DVL, then camera."""
    for name, t in (("imu", data.imu_t), ("dvl", data.dvl_t), ("features", data.feat_t)):
        if t.size > 1 and np.any(np.diff(t) < -REORDER_TOL):
            raise NonMonotonicEvent(f"{name} stream goes back in time by more than 1 ms")
    events = []
    for k in range(data.imu_t.size):
        events.append((data.imu_t[k], 0, k, ImuSample(float(data.imu_t[k]), data.accel[k], data.gyro[k])))
    sigma = np.full(4, cfg.dvl_sigma)
    for k in range(data.dvl_t.size):
        radial = None if data.dvl_radial is None else data.dvl_radial[k]
        m = DvlMeasurement(float(data.dvl_t[k]), data.doppler[k], data.dvl_valid[k], data.calib.f_t,
                           data.calib.c_s, sigma, radial)
        events.append((m.timestamp, 1, k, m))
    for k, fr in enumerate(data.frames()):
        events.append((fr.timestamp, 2, k, fr))
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    return [e[3] for e in events]


@dataclass
class RunResult:
    outputs: list
    aware_log: list
    timing: list
    status: str = "ok"  # ok | diverged
    message: str = ""
    state: NominalState | None = None
    propagation_ms: float = 0.0
    n_propagations: int = 0
    wall_ms: float = 0.0

    def runtime_breakdown(self) -> dict:
        return runtime_breakdown(self.timing)

    def trajectory(self):
        """(t, p, q, v) arrays of the output records."""
        if not self.outputs:
            return np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3))
        return (np.array([o.t for o in self.outputs]), np.array([o.p for o in self.outputs]),
                np.array([o.q for o in self.outputs]), np.array([o.v for o in self.outputs]))


def runtime_breakdown(timing) -> dict:
    """Mean milliseconds per call of each pipeline stage.

    ``other`` is IMU propagation per sample; ``frontend_ingest`` is the
    per-frame camera bookkeeping outside the visual update itself.
    """
    def total(kind):
        rows = [r for r in timing if r.kind == kind]
        return sum(r.ms for r in rows), len(rows), sum(r.size for r in rows)

    vis, n_vis, _ = total("visual_update")
    dvl, n_dvl, _ = total("dvl_update")
    cam, n_cam, _ = total("cam_event")
    prop, _, n_prop = total("imu_propagation")
    return {"frontend_ingest": (cam - vis) / n_cam if n_cam else 0.0,
            "visual_update": vis / n_vis if n_vis else 0.0,
            "dvl_update": dvl / n_dvl if n_dvl else 0.0,
            "other": prop / n_prop if n_prop else 0.0}


def run_filter(data: SensorData, cfg: FilterConfig, truth: TruthInit | None = None) -> RunResult:
    """Initialise and run the filter over a whole dataset."""
    t0 = float(data.imu_t[0])
    first_dvl = None
    if cfg.init_mode != "truth" and data.dvl_t.size:
        try:
            radial = None if data.dvl_radial is None else data.dvl_radial[0]
            meas = DvlMeasurement(float(data.dvl_t[0]), data.doppler[0], data.dvl_valid[0], data.calib.f_t,
                                  data.calib.c_s, radial=radial)
            first_dvl = beams_to_velocity(meas, BeamGeometry(np.deg2rad(cfg.dvl_alpha_deg),
                                                             np.deg2rad(cfg.dvl_betas_deg)))[0]
        except (InsufficientBeams, RankDeficient):
            first_dvl = None
    state, cov = initialize(cfg, data.calib, t0, data.imu_t, data.accel, data.gyro, truth, first_dvl)
    filt = AvioFilter(cfg, data.calib, state, cov)
    status, msg = "ok", ""
    wall0 = time.perf_counter()
    try:
        for ev in merge_events(data, cfg):
            filt.process_event(ev)
        filt.flush()
    except FilterDiverged as exc:
        status, msg = "diverged", str(exc)
    t_end = filt.state.timestamp
    filt.timing.append(TimingRecord(t_end, "imu_propagation", filt.propagation_ms, filt.n_propagations))
    return RunResult(filt.outputs, filt.aware_log, filt.timing, status, msg, filt.state, filt.propagation_ms,
                     filt.n_propagations, 1e3 * (time.perf_counter() - wall0))


def calibration_trace(outputs, T_bD_true: Transform):
    """Per-record extrinsic errors: (t, rotation error in degrees, translation error in m)."""
    t = np.array([o.t for o in outputs])
    rot = np.array([np.rad2deg(rotation_angle(o.R_bD @ T_bD_true.rotation.T)) for o in outputs])
    trans = np.array([np.linalg.norm(o.p_bD - T_bD_true.translation) for o in outputs])
    return t, rot, trans


def monotone_trend_residual(y) -> float:
    """Relative RMS distance of ``y`` from its best non-increasing fit."""
    y = np.asarray(y, dtype=float)
    fit = isotonic_regression(y, increasing=False).x
    span = max(float(y.max() - y.min()), 1e-300)
    return float(np.sqrt(np.mean((y - fit) ** 2)) / span)
