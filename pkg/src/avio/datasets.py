"""Dataset directories, CSV schemas and YAML experiment configs."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
import yaml

from .errors import ConfigError, SchemaError
from .fusion import Calibration, FilterConfig, SensorData, TruthInit
from .geometry import Transform, matrix_from_quat, quat_from_matrix
from .propagation import ImuNoiseParams
from .sim import NOISE_TIERS, NoiseConfig, TrajectoryProfile, WorldModel, noise_tier, profile_preset, simulate
from .vision import CameraModel

IMU_COLS = ["t", "ax", "ay", "az", "gx", "gy", "gz"]
DVL_COLS = ["t", "df1", "df2", "df3", "df4", "valid1", "valid2", "valid3", "valid4"]
DVL_RADIAL_COLS = ["t", "vr1", "vr2", "vr3", "vr4", "valid1", "valid2", "valid3", "valid4"]
FEATURE_COLS = ["t", "frame_id", "feature_id", "u", "v"]
GT_COLS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz"]
ESTIMATE_COLS = GT_COLS
EXTRINSIC_COLS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz", "std_px", "std_py", "std_pz",
                  "std_rx", "std_ry", "std_rz", "rot_err_deg", "trans_err_m"]
AWARE_COLS = ["t", "sensor", "q", "sigma", "enabled", "decision"]
TIMING_COLS = ["t", "kind", "ms", "size"]

FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# CSV

def write_csv(path: str, header: list[str], data: np.ndarray) -> None:
    data = np.asarray(data, dtype=float).reshape(-1, len(header))
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        if data.size:
            np.savetxt(fh, data, fmt=FLOAT_FMT, delimiter=",")


def write_rows(path: str, header: list[str], rows) -> None:
    """Mixed-type rows; floats in round-trip precision."""
    def fmt(x):
        if isinstance(x, (bool, np.bool_)):
            return str(int(x))
        if isinstance(x, (float, np.floating)):
            return FLOAT_FMT % x
        return str(x)

    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(x) for x in r) + "\n")


def read_header(path: str) -> list[str]:
    if not os.path.exists(path):
        raise SchemaError("file not found", path)
    with open(path) as fh:
        line = fh.readline()
    return [c.strip() for c in line.strip().split(",")] if line else []


def read_csv(path: str, expected: list[str] | tuple[list[str], ...]) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with an exact header; returns (header, (N, C) array)."""
    options = expected if isinstance(expected, tuple) else (expected,)
    header = read_header(path)
    if header not in options:
        want = options[0]
        for i, col in enumerate(want):
            if i >= len(header) or header[i] != col:
                raise SchemaError(f"expected column {col!r} at position {i}, header is {header}", path, col)
        raise SchemaError(f"unexpected extra columns {header[len(want):]}", path, header[len(want)])
    with open(path) as fh:
        fh.readline()
        body = fh.read()
    if not body.strip():
        return header, np.zeros((0, len(header)))
    try:
        data = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise SchemaError(f"non-numeric content: {exc}", path) from exc
    if data.shape[1] != len(header):
        raise SchemaError(f"rows have {data.shape[1]} fields, header has {len(header)}", path)
    return header, data


def _check_sorted(path: str, t: np.ndarray) -> None:
    if t.size > 1 and np.any(np.diff(t) < 0):
        raise SchemaError("timestamps are not sorted", path, "t")


# ---------------------------------------------------------------------------
# world sidecar

def _transform_dict(T: Transform) -> dict:
    return {"rotation": T.rotation.tolist(), "translation": T.translation.tolist()}


def _transform_from(d: dict, path: str) -> Transform:
    try:
        return Transform(np.array(d["rotation"], dtype=float), np.array(d["translation"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad transform: {exc}", path) from exc


def world_to_dict(world: WorldModel) -> dict:
    g = world.geometry
    return {
        "camera": asdict(world.camera),
        "T_bc": _transform_dict(world.T_bc),
        "T_bD": _transform_dict(world.T_bD),
        "beams": {"alpha_deg": float(np.rad2deg(g.alpha)), "betas_deg": np.rad2deg(g.betas).tolist()},
        "c_s": world.c_s,
        "f_t": world.f_t,
        "landmarks": np.asarray(world.landmarks).tolist(),
    }


def calibration_from_world(d: dict) -> Calibration:
    try:
        cam = CameraModel(**d["camera"])
        return Calibration(cam, _transform_from(d["T_bc"], "T_bc"), _transform_from(d["T_bD"], "T_bD"),
                           float(d["c_s"]), float(d["f_t"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"world sidecar incomplete: {exc}", "world.json") from exc


# ---------------------------------------------------------------------------
# dataset directories

@dataclass
class LoadedDataset:
    data: SensorData
    gt: np.ndarray | None  # (N, 11) rows of GT_COLS
    world: dict
    meta: dict

    def truth_init(self) -> TruthInit:
        if self.gt is None or self.gt.shape[0] == 0:
            raise ConfigError("truth initialisation needs groundtruth.csv", "init_mode")
        t0 = self.data.imu_t[0]
        g = self.gt
        k = int(np.clip(np.searchsorted(g[:, 0], t0), 0, g.shape[0] - 1))
        b_a = np.array(self.meta.get("initial_bias_a", [0.0, 0.0, 0.0]), dtype=float)
        b_g = np.array(self.meta.get("initial_bias_g", [0.0, 0.0, 0.0]), dtype=float)
        return TruthInit(g[k, 1:4].copy(), g[k, 8:11].copy(), matrix_from_quat(g[k, 4:8]), b_a, b_g)

    def gt_T_bD(self) -> Transform:
        return _transform_from(self.world["T_bD"], "T_bD")


def write_dataset(ds, out_dir: str, meta: dict | None = None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "imu.csv"), IMU_COLS, np.c_[ds.imu.t, ds.imu.accel, ds.imu.gyro])
    write_csv(os.path.join(out_dir, "dvl.csv"), DVL_COLS, np.c_[ds.dvl.t, ds.dvl.doppler, ds.dvl.valid])
    f = ds.features
    write_csv(os.path.join(out_dir, "features.csv"), FEATURE_COLS, np.c_[f.t, f.frame_id, f.feature_id, f.uv])
    tr = ds.truth
    q = np.array([quat_from_matrix(R) for R in tr.R])
    write_csv(os.path.join(out_dir, "groundtruth.csv"), GT_COLS, np.c_[tr.t, tr.p, q, tr.v])
    with open(os.path.join(out_dir, "world.json"), "w") as fh:
        json.dump(world_to_dict(ds.world), fh, indent=1, sort_keys=True)
    m = dict(ds.meta)
    m.update(meta or {})
    m["initial_bias_a"] = ds.imu.bias_a[0].tolist()
    m["initial_bias_g"] = ds.imu.bias_g[0].tolist()
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(m, fh, indent=1, sort_keys=True)


def read_dataset(path: str, require_gt: bool = False) -> LoadedDataset:
    def p(name):
        return os.path.join(path, name)

    _, imu = read_csv(p("imu.csv"), IMU_COLS)
    _check_sorted(p("imu.csv"), imu[:, 0])
    dvl_header, dvl = read_csv(p("dvl.csv"), (DVL_COLS, DVL_RADIAL_COLS))
    _check_sorted(p("dvl.csv"), dvl[:, 0])
    _, feat = read_csv(p("features.csv"), FEATURE_COLS)
    _check_sorted(p("features.csv"), feat[:, 0])
    gt = None
    if os.path.exists(p("groundtruth.csv")) or require_gt:
        _, gt = read_csv(p("groundtruth.csv"), GT_COLS)
    if not os.path.exists(p("world.json")):
        raise SchemaError("file not found", p("world.json"))
    with open(p("world.json")) as fh:
        world = json.load(fh)
    meta = {}
    if os.path.exists(p("meta.json")):
        with open(p("meta.json")) as fh:
            meta = json.load(fh)
    radial = dvl[:, 1:5] if dvl_header == DVL_RADIAL_COLS else None
    doppler = np.zeros((dvl.shape[0], 4)) if radial is not None else dvl[:, 1:5]
    data = SensorData(imu[:, 0], imu[:, 1:4], imu[:, 4:7], dvl[:, 0], doppler, dvl[:, 5:9] != 0,
                      feat[:, 0], feat[:, 1].astype(int), feat[:, 2].astype(int), feat[:, 3:5],
                      calibration_from_world(world), radial)
    return LoadedDataset(data, gt, world, meta)


# ---------------------------------------------------------------------------
# configs

def load_yaml(path: str) -> dict:
    try:
        with open(path) as fh:
            d = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(str(exc), path) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", path) from exc
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError("top level must be a mapping", path)
    return d


def load_filter_config(path: str | None) -> FilterConfig:
    if path is None:
        return FilterConfig()
    return FilterConfig.from_dict(load_yaml(path))


SIM_KEYS = {"seed", "n_landmarks", "profile", "noise"}


@dataclass
class SimConfig:
    profile: TrajectoryProfile
    noise: NoiseConfig
    seed: int = 0
    n_landmarks: int = 500
    tier: str = "zero"
    raw: dict | None = None


def sim_config_from_dict(d: dict) -> SimConfig:
    for k in d:
        if k not in SIM_KEYS:
            raise ConfigError("unknown key", k)
    prof_d = dict(d.get("profile") or {})
    preset = prof_d.pop("preset", "circle")
    known = {f.name for f in fields(TrajectoryProfile)}
    for k in prof_d:
        if k not in known:
            raise ConfigError("unknown key", f"profile.{k}")
    try:
        profile = profile_preset(preset, **prof_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "profile") from exc

    noise_d = dict(d.get("noise") or {})
    tier = noise_d.pop("tier", "zero")
    if tier not in NOISE_TIERS:
        raise ConfigError(f"unknown tier {tier!r}", "noise.tier")
    known = {f.name for f in fields(NoiseConfig)}
    for k in noise_d:
        if k not in known:
            raise ConfigError("unknown key", f"noise.{k}")
    if isinstance(noise_d.get("imu"), dict):
        try:
            noise_d["imu"] = ImuNoiseParams(**noise_d["imu"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "noise.imu") from exc
    try:
        noise = noise_tier(tier, **noise_d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "noise") from exc
    try:
        seed, n_lm = int(d.get("seed", 0)), int(d.get("n_landmarks", 500))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "seed") from exc
    return SimConfig(profile, noise, seed, n_lm, tier, d)


def simulate_from_config(cfg: SimConfig):
    return simulate(cfg.profile, cfg.noise, seed=cfg.seed, n_landmarks=cfg.n_landmarks)


def package_config(name: str) -> str:
    """Path of a config file shipped with the package."""
    return os.path.join(os.path.dirname(__file__), "configs", name)
