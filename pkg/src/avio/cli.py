"""Command-line entry points: simulate, run, eval, ablate.

Exit codes: 0 success, 2 config/schema error, 3 filter divergence,
4 threshold failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .datasets import (AWARE_COLS, ESTIMATE_COLS, EXTRINSIC_COLS, GT_COLS, TIMING_COLS, LoadedDataset,
                       load_filter_config, load_yaml, read_csv, read_dataset, sim_config_from_dict,
                       simulate_from_config, write_csv, write_dataset, write_rows)
from .errors import AvioError, ConfigError, DegenerateGeometry, NoOverlap, SchemaError
from .evaluate import DEFAULT_MAX_DT, Trajectory, evaluate_trajectory
from .fusion import FilterConfig, RunResult, TimingRecord, run_filter, runtime_breakdown
from .geometry import quat_from_matrix, rotation_angle

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_THRESHOLD = 0, 2, 3, 4

ABLATION_CELLS = {
    "full": {},
    "no-AWARE": {"aware": False, "gating": False},
    "no-calib": {"estimate_dvl_extrinsics": False},
    "imu+dvl": {"use_camera": False},
    "imu-only": {"use_camera": False, "use_dvl": False},
}


# ---------------------------------------------------------------------------
# writers

def _dedup_latest(t: np.ndarray) -> np.ndarray:
    """Index of the last record at each distinct timestamp."""
    if t.size == 0:
        return np.zeros(0, dtype=int)
    keep = np.r_[t[1:] != t[:-1], True]
    return np.flatnonzero(keep)


def write_run_outputs(res: RunResult, out_dir: str, T_bD_true=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    t, p, q, v = res.trajectory()
    k = _dedup_latest(t)
    write_csv(os.path.join(out_dir, "estimate.csv"), ESTIMATE_COLS, np.c_[t[k], p[k], q[k], v[k]])

    rows = []
    for o in (res.outputs[i] for i in k):
        if T_bD_true is not None:
            rot = math.degrees(rotation_angle(o.R_bD @ T_bD_true.rotation.T))
            trans = float(np.linalg.norm(o.p_bD - T_bD_true.translation))
        else:
            rot = trans = float("nan")
        rows.append(np.r_[o.t, o.p_bD, quat_from_matrix(o.R_bD), o.std_p_bD, o.std_theta_bD, rot, trans])
    write_csv(os.path.join(out_dir, "extrinsics_trace.csv"), EXTRINSIC_COLS, np.array(rows))
    write_rows(os.path.join(out_dir, "aware_log.csv"), AWARE_COLS,
               [(a.t, a.sensor, float(a.q), float(a.sigma), a.enabled, a.decision) for a in res.aware_log])
    write_rows(os.path.join(out_dir, "timing.csv"), TIMING_COLS,
               [(r.t, r.kind, float(r.ms), int(r.size)) for r in res.timing])
    with open(os.path.join(out_dir, "status.json"), "w") as fh:
        json.dump({"status": res.status, "message": res.message}, fh, indent=1, sort_keys=True)


def _read_rows(path: str, header: list[str]):
    import csv
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, [])
        if got != header:
            col = next((c for i, c in enumerate(header) if i >= len(got) or got[i] != c), header[-1])
            raise SchemaError(f"header {got} does not match {header}", path, col)
        return list(reader)


def aware_summary(rows) -> dict:
    """Per-sensor counts from aware_log rows (t, sensor, q, sigma, enabled, decision)."""
    out = {}
    for sensor in ("VIS", "DVL"):
        rs = [r for r in rows if r[1] == sensor]
        sig = [float(r[3]) for r in rs]
        en = [r[4] == "1" for r in rs]
        out[sensor] = {
            "events": len(rs),
            "skipped": sum(r[5] == "skip" for r in rs),
            "inflated": sum(r[5].startswith("update(") and float(r[5][7:-1]) > 1.0 for r in rs),
            "disable_transitions": sum(1 for a, b in zip([True] + en[:-1], en) if a and not b),
            "max_sigma": max(sig) if sig else 1.0,
            "final_sigma": sig[-1] if sig else 1.0,
        }
    return out


def build_metrics(sequence: str, ate, run_dir: str | None) -> dict:
    m = {
        "sequence": sequence,
        "ate_rmse_m": ate.rmse,
        "ate_std_m": ate.std,
        "paired_count": ate.paired_count,
        "extrinsic_final_err_deg": None,
        "extrinsic_final_err_m": None,
        "runtime_breakdown_ms": {"frontend_ingest": 0.0, "visual_update": 0.0, "dvl_update": 0.0, "other": 0.0},
        "aware_summary": {},
    }
    if run_dir is None:
        return m
    ext = os.path.join(run_dir, "extrinsics_trace.csv")
    if os.path.exists(ext):
        _, e = read_csv(ext, EXTRINSIC_COLS)
        if e.shape[0] and np.isfinite(e[-1, -2:]).all():
            m["extrinsic_final_err_deg"] = float(e[-1, -2])
            m["extrinsic_final_err_m"] = float(e[-1, -1])
    tim = os.path.join(run_dir, "timing.csv")
    if os.path.exists(tim):
        recs = [TimingRecord(float(r[0]), r[1], float(r[2]), int(r[3])) for r in _read_rows(tim, TIMING_COLS)]
        m["runtime_breakdown_ms"] = runtime_breakdown(recs)
    aw = os.path.join(run_dir, "aware_log.csv")
    if os.path.exists(aw):
        m["aware_summary"] = aware_summary(_read_rows(aw, AWARE_COLS))
    return m


def _print_metrics(m: dict) -> None:
    print(json.dumps(m, indent=1, sort_keys=True))


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(config_path: str, out_dir: str, seed: int | None = None) -> int:
    raw = load_yaml(config_path)
    cfg = sim_config_from_dict(raw)
    if seed is not None:
        cfg.seed = seed
    ds = simulate_from_config(cfg)
    write_dataset(ds, out_dir, {"noise_tier": cfg.tier, "config": raw, "seed": cfg.seed})
    print(f"wrote {ds.imu.t.size} IMU, {ds.dvl.t.size} DVL, {ds.features.t.size} feature rows to {out_dir}")
    return EXIT_OK


def _run(ds: LoadedDataset, cfg: FilterConfig, out_dir: str) -> RunResult:
    truth = ds.truth_init() if cfg.init_mode == "truth" else None
    res = run_filter(ds.data, cfg, truth)
    write_run_outputs(res, out_dir, ds.gt_T_bD() if "T_bD" in ds.world else None)
    return res


def _apply_overrides(cfg: FilterConfig, **kw) -> FilterConfig:
    d = cfg.to_dict()
    d.update(kw)
    return FilterConfig.from_dict(d)


def cmd_run(dataset_dir: str, config_path: str | None, out_dir: str, disable_dvl: bool = False,
            disable_camera: bool = False, init: str | None = None) -> int:
    cfg = load_filter_config(config_path)
    over = {}
    if disable_dvl:
        over["use_dvl"] = False
    if disable_camera:
        over["use_camera"] = False
    if init:
        over["init_mode"] = init
    if over:
        cfg = _apply_overrides(cfg, **over)
    ds = read_dataset(dataset_dir)
    res = _run(ds, cfg, out_dir)
    print(f"{res.status}: {len(res.outputs)} records in {res.wall_ms / 1e3:.2f} s -> {out_dir}")
    if res.status != "ok":
        print(res.message, file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _evaluate_files(est_path: str, gt_path: str, max_dt: float, with_scale: bool):
    _, est = read_csv(est_path, ESTIMATE_COLS)
    _, gt = read_csv(gt_path, GT_COLS)
    return evaluate_trajectory(Trajectory(est[:, 0], est[:, 1:4]), Trajectory(gt[:, 0], gt[:, 1:4]), max_dt,
                               with_scale)


def cmd_eval(estimate_path: str, gt_path: str, max_rmse: float | None = None, with_scale: bool = False,
             max_dt: float = DEFAULT_MAX_DT, out_path: str | None = None, sequence: str | None = None) -> int:
    ate = _evaluate_files(estimate_path, gt_path, max_dt, with_scale)
    run_dir = os.path.dirname(os.path.abspath(estimate_path))
    m = build_metrics(sequence or os.path.basename(run_dir), ate, run_dir)
    _print_metrics(m)
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(m, fh, indent=1, sort_keys=True)
    if max_rmse is not None and not ate.rmse <= max_rmse:
        print(f"ATE RMSE {ate.rmse:.4f} m exceeds {max_rmse} m", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


def cmd_ablate(dataset_dir: str, out_dir: str, config_path: str | None = None,
               max_dt: float = DEFAULT_MAX_DT) -> int:
    base = load_filter_config(config_path)
    ds = read_dataset(dataset_dir, require_gt=True)
    gt_path = os.path.join(dataset_dir, "groundtruth.csv")
    os.makedirs(out_dir, exist_ok=True)
    table = []
    reports = {}
    for cell, over in ABLATION_CELLS.items():
        cell_dir = os.path.join(out_dir, cell)
        res = _run(ds, _apply_overrides(base, **over), cell_dir)
        if res.status != "ok":
            table.append((cell, "F", "F"))
            reports[cell] = {"sequence": cell, "status": "F", "message": res.message}
            continue
        try:
            ate = _evaluate_files(os.path.join(cell_dir, "estimate.csv"), gt_path, max_dt, False)
        except (NoOverlap, DegenerateGeometry) as exc:
            table.append((cell, "F", "F"))
            reports[cell] = {"sequence": cell, "status": "F", "message": str(exc)}
            continue
        m = build_metrics(cell, ate, cell_dir)
        with open(os.path.join(cell_dir, "metrics.json"), "w") as fh:
            json.dump(m, fh, indent=1, sort_keys=True)
        reports[cell] = m
        table.append((cell, ate.rmse, ate.std))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(reports, fh, indent=1, sort_keys=True)
    write_rows(os.path.join(out_dir, "summary.csv"), ["cell", "ate_rmse_m", "ate_std_m"], table)
    width = max(len(c) for c in ABLATION_CELLS)
    print(f"{'cell':<{width}}  rmse [m]  std [m]")
    for cell, rmse, std in table:
        if rmse == "F":
            print(f"{cell:<{width}}  {'F':>8}  {'F':>7}")
        else:
            print(f"{cell:<{width}}  {rmse:>8.4f}  {std:>7.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avio", description="Acoustic-visual-inertial odometry toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic dataset")
    s.add_argument("config", help="simulation YAML")
    s.add_argument("out", help="output dataset directory")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")

    r = sub.add_parser("run", help="run the filter on a dataset")
    r.add_argument("dataset")
    r.add_argument("out")
    r.add_argument("--config", default=None, help="filter YAML (defaults built in)")
    r.add_argument("--disable-dvl", action="store_true")
    r.add_argument("--disable-camera", action="store_true")
    r.add_argument("--init", choices=["truth", "static", "auto"], default=None)
    r.add_argument("--seed", type=int, default=None, help="accepted for uniformity; the filter is deterministic")

    e = sub.add_parser("eval", help="absolute trajectory error of an estimate")
    e.add_argument("estimate")
    e.add_argument("groundtruth")
    e.add_argument("--max-rmse", type=float, default=None)
    e.add_argument("--with-scale", action="store_true", help="similarity instead of rigid alignment")
    e.add_argument("--max-dt", type=float, default=DEFAULT_MAX_DT)
    e.add_argument("--out", default=None, help="write the metrics JSON here")
    e.add_argument("--sequence", default=None)
    e.add_argument("--seed", type=int, default=None, help="accepted for uniformity; evaluation is deterministic")

    a = sub.add_parser("ablate", help="run the five-cell ablation matrix")
    a.add_argument("dataset")
    a.add_argument("out")
    a.add_argument("--config", default=None)
    a.add_argument("--seed", type=int, default=None, help="accepted for uniformity; the filter is deterministic")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out, args.seed)
        if args.command == "run":
            return cmd_run(args.dataset, args.config, args.out, args.disable_dvl, args.disable_camera, args.init)
        if args.command == "eval":
            return cmd_eval(args.estimate, args.groundtruth, args.max_rmse, args.with_scale, args.max_dt,
                            args.out, args.sequence)
        return cmd_ablate(args.dataset, args.out, args.config)
    except (ConfigError, SchemaError, NoOverlap, DegenerateGeometry, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AvioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
